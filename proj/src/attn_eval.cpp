#include "sar/attn_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sar/error.hpp"

namespace sar {

namespace {

// Rounding slack when comparing a running sum against fraction * total, so
// that e.g. 60 cells of 0.01 count as 60% of 1.0.
constexpr double kMassSlack = 1e-12;

}  // namespace

MassMask mass_threshold(const Grid2D& a, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mass fraction must lie in (0, 1]");
  }
  const auto v = a.values();
  double total = 0.0;
  for (double x : v) {
    if (x < 0.0) throw Error(ErrorCode::InvalidArgument, "mass_threshold needs a non-negative map");
    total += x;
  }
  if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "mass_threshold: map has zero mass");

  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return v[i] > v[j]; });

  MassMask out{Grid2D(a.side()), 0.0, 0};
  auto kept = out.kept.values();
  const double target = fraction * total * (1.0 - kMassSlack);
  double sum = 0.0;
  for (int i : order) {
    if (fraction < 1.0 && sum >= target) break;
    if (v[i] <= 0.0) break;  // zeros never add mass
    kept[i] = 1.0;
    sum += v[i];
    ++out.kept_cells;
  }
  out.kept_mass = sum / total;
  return out;
}

double jaccard(const Grid2D& mask, const Grid2D& truth) {
  if (mask.side() != truth.side()) {
    throw Error(ErrorCode::DimensionMismatch, "jaccard: masks differ in size");
  }
  const auto a = mask.values();
  const auto b = truth.values();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] != 0.0;
    const bool in_b = b[i] != 0.0;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

HeadScore best_head_jaccard(std::span<const Grid2D> heads, const Grid2D& truth, double fraction) {
  if (heads.empty()) throw Error(ErrorCode::InvalidArgument, "best_head_jaccard: no heads");
  HeadScore best{-1, -1.0};
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const double s = jaccard(mass_threshold(heads[h], fraction).kept, truth);
    if (s > best.score) best = {static_cast<int>(h), s};
  }
  return best;
}

void export_map(const Grid2D& a, const std::filesystem::path& path, int upscale) {
  if (upscale < 1) throw Error(ErrorCode::InvalidArgument, "upscale factor must be >= 1");
  const auto v = a.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const int k = a.side();
  const int side = k * upscale;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double x = a(r / upscale, c / upscale);
      const double level = hi > lo ? std::round(255.0 * (x - lo) / (hi - lo)) : 128.0;
      pixels[static_cast<std::size_t>(r) * side + c] = static_cast<unsigned char>(level);
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write image " + path.string());
  out << "P5\n" << side << ' ' << side << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing image " + path.string());

  auto sidecar = path;
  sidecar.replace_extension(".txt");
  save_grid(sidecar, a);
}

}  // namespace sar
