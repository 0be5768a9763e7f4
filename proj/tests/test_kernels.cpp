#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "sar/kernels.hpp"

namespace k = sar::kernels;

namespace {

template <class T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <class T>
double max_rel(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(double(a[i])), std::abs(double(b[i])), 1.0});
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / den);
  }
  return worst;
}

// Shapes around the register-tile edges plus the transformer's own sizes.
const std::vector<std::array<int, 3>> kShapes = {
    {1, 1, 1}, {3, 5, 7}, {4, 16, 32}, {5, 17, 33}, {17, 8, 48}, {197, 64, 192},
    {65, 64, 65}, {2, 300, 3}, {64, 1, 129}, {33, 33, 33}};

template <class T>
void check_gemms(double tol) {
  std::uint64_t seed = 1;
  for (const auto& [m, kk, n] : kShapes) {
    CAPTURE(m);
    CAPTURE(kk);
    CAPTURE(n);
    const auto a = random_vector<T>(static_cast<std::size_t>(m) * kk, seed++);
    const auto b = random_vector<T>(static_cast<std::size_t>(kk) * n, seed++);
    const auto bt = random_vector<T>(static_cast<std::size_t>(n) * kk, seed++);
    const auto at = random_vector<T>(static_cast<std::size_t>(m) * n, seed++);
    const auto c0 = random_vector<T>(static_cast<std::size_t>(m) * n, seed++);
    const auto t0 = random_vector<T>(static_cast<std::size_t>(kk) * n, seed++);

    for (bool acc : {false, true}) {
      auto c1 = c0, c2 = c0;
      k::gemm_nn<T>(a, b, c1, m, kk, n, acc);
      k::reference::gemm_nn<T>(a, b, c2, m, kk, n, acc);
      CHECK(max_rel(c1, c2) < tol);

      c1 = c0;
      c2 = c0;
      k::gemm_nt<T>(a, bt, c1, m, kk, n, acc);
      k::reference::gemm_nt<T>(a, bt, c2, m, kk, n, acc);
      CHECK(max_rel(c1, c2) < tol);

      auto d1 = t0, d2 = t0;
      k::gemm_tn<T>(a, at, d1, m, kk, n, acc);
      k::reference::gemm_tn<T>(a, at, d2, m, kk, n, acc);
      CHECK(max_rel(d1, d2) < tol);
    }
  }
}

}  // namespace

TEST_CASE("gemm kernels agree with the serial reference") {
  check_gemms<double>(1e-12);
  check_gemms<float>(2e-5);
}

TEST_CASE("gemm results do not depend on the thread count") {
  const int m = 197, kk = 64, n = 192;
  const auto a = random_vector<float>(m * kk, 1);
  const auto b = random_vector<float>(kk * n, 2);
  const int saved = k::max_threads();
  std::vector<float> c1(m * n), c4(m * n);
  k::set_threads(1);
  k::gemm_nn<float>(a, b, c1, m, kk, n);
  k::set_threads(4);
  k::gemm_nn<float>(a, b, c4, m, kk, n);
  k::set_threads(saved);
  CHECK(std::memcmp(c1.data(), c4.data(), c1.size() * sizeof(float)) == 0);
}

TEST_CASE("softmax rows") {
  for (int cols : {1, 7, 16, 197}) {
    auto x = random_vector<double>(3 * cols, cols, 5.0);
    auto y = x;
    k::softmax_rows<double>(x, 3, cols);
    k::reference::softmax_rows<double>(y, 3, cols);
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int c = 0; c < cols; ++c) s += x[r * cols + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(max_rel(x, y) < 1e-14);

    auto xf = random_vector<float>(3 * cols, cols, 5.0);
    auto yf = xf;
    k::softmax_rows<float>(xf, 3, cols);
    k::reference::softmax_rows<float>(yf, 3, cols);
    CHECK(max_rel(xf, yf) < 1e-6);
  }
  // huge logits must not overflow
  std::vector<float> big = {1000.f, 999.f, -1000.f};
  k::softmax_rows<float>(big, 1, 3);
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] + big[1] + big[2] == doctest::Approx(1.0f));
}

TEST_CASE("gelu and its derivative") {
  auto x = random_vector<double>(1000, 3, 3.0);
  x.push_back(0.0);
  x.push_back(-12.0);
  x.push_back(12.0);
  std::vector<double> y(x.size()), yr(x.size());
  k::gelu<double>(x, y);
  k::reference::gelu<double>(x, yr);
  CHECK(max_rel(y, yr) < 1e-15);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(yr[i] == doctest::Approx(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)))));
  }

  // derivative against central differences of the reference
  std::vector<double> g(x.size(), 1.0);
  k::gelu_backward<double>(x, g);
  for (std::size_t i = 0; i < x.size(); i += 37) {
    const double h = 1e-6;
    std::vector<double> p = {x[i] + h, x[i] - h}, q(2);
    k::reference::gelu<double>(p, q);
    CHECK(g[i] == doctest::Approx((q[0] - q[1]) / (2 * h)).epsilon(1e-7));
  }

  // single precision uses polynomial approximations
  std::vector<float> xf(x.begin(), x.end()), yf(x.size()), yfr(x.size());
  k::gelu<float>(xf, yf);
  k::reference::gelu<float>(xf, yfr);
  for (std::size_t i = 0; i < xf.size(); ++i) {
    CHECK(std::abs(yf[i] - yfr[i]) <= 2e-6f * std::max(1.0f, std::abs(yfr[i])));
  }
  std::vector<float> gf(x.size(), 1.0f), gfr(x.size(), 1.0f);
  k::gelu_backward<float>(xf, gf);
  k::reference::gelu_backward<float>(xf, gfr);
  for (std::size_t i = 0; i < xf.size(); ++i) CHECK(std::abs(gf[i] - gfr[i]) <= 2e-6f);
}
