#include "sar/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "sar/error.hpp"

namespace sar {

namespace {

void check_heads(std::span<const Grid2D> heads, const char* what) {
  if (heads.empty()) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + ": empty head list");
  }
  for (const auto& h : heads) {
    if (h.side() != heads.front().side()) {
      throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": heads differ in side");
    }
  }
}

}  // namespace

ThresholdResult threshold_map(const Grid2D& s) {
  const auto in = s.values();
  const double n = static_cast<double>(in.size());
  const double sum = std::accumulate(in.begin(), in.end(), 0.0);
  Grid2D b(s.side());
  auto out = b.values();
  // (n*s - sum) / n rather than s - sum/n: when the sums are exact this is
  // exactly invariant to adding a constant to s.
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::max(0.0, (n * in[i] - sum) / n);
  return {std::move(b), sum / n};
}

EntropyResult spatial_entropy(const Grid2D& s, const LossConfig& cfg) {
  if (s.kind() == MapKind::PostSoftmax) {
    throw Error(ErrorCode::InvalidArgument,
                "spatial entropy needs a pre-softmax similarity map, got a post-softmax one");
  }
  if (!(cfg.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");

  auto [b, mean] = threshold_map(s);
  EntropyResult result{0.0, {}, Grid2D(s.side()), connected_components(b, 0.0)};
  const auto& comp = result.components;
  if (comp.count == 0) return result;

  // Component mass u_j = sum_{C_j} b + n_j * eps, normaliser Z = sum_j u_j.
  std::vector<double> mass(static_cast<std::size_t>(comp.count), 0.0);
  const auto bv = b.values();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (comp.labels[i]) mass[comp.labels[i] - 1] += bv[i];
  }
  double total = 0.0;
  for (int j = 0; j < comp.count; ++j) {
    mass[j] += comp.sizes[j] * cfg.epsilon;
    total += mass[j];
  }

  auto& p = result.probabilities;
  p.resize(mass.size());
  double h = 0.0;
  for (std::size_t j = 0; j < mass.size(); ++j) {
    p[j] = mass[j] / total;
    h -= p[j] * std::log(p[j]);
  }
  result.entropy = std::max(0.0, h);

  // dH/du_j = -(log P_j + H) / Z; every support cell of C_j has db/ds = 1.
  std::vector<double> dmass(mass.size());
  double support_sum = 0.0;
  for (std::size_t j = 0; j < mass.size(); ++j) {
    dmass[j] = -(std::log(p[j]) + h) / total;
    support_sum += dmass[j] * comp.sizes[j];
  }
  // d mean / d s = 1/k^2 and db/d mean = -1 on the support.
  const double through_mean =
      cfg.detach_mean ? 0.0 : support_sum / static_cast<double>(bv.size());
  auto g = result.gradient.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (comp.labels[i] ? dmass[comp.labels[i] - 1] : 0.0) - through_mean;
  }
  return result;
}

std::vector<EntropyResult> spatial_entropy_batch(std::span<const Grid2D> maps,
                                                 const LossConfig& cfg) {
  std::vector<std::optional<EntropyResult>> slots(maps.size());
  std::optional<Error> failure;
  const int n = static_cast<int>(maps.size());
#pragma omp parallel for schedule(dynamic, 1) if (n > 1)
  for (int i = 0; i < n; ++i) {
    try {
      slots[i] = spatial_entropy(maps[i], cfg);
    } catch (const Error& e) {
#pragma omp critical(sar_entropy_failure)
      if (!failure) failure = e;
    }
  }
  if (failure) throw *failure;
  std::vector<EntropyResult> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

HeadLoss spatial_entropy_loss(std::span<const Grid2D> heads, const LossConfig& cfg) {
  check_heads(heads, "spatial_entropy_loss");
  auto per_head = spatial_entropy_batch(heads, cfg);
  const double inv = 1.0 / static_cast<double>(heads.size());
  HeadLoss out;
  out.gradients.reserve(heads.size());
  for (auto& r : per_head) {
    out.loss += r.entropy;
    for (double& v : r.gradient.values()) v *= inv;
    out.gradients.push_back(std::move(r.gradient));
  }
  out.loss *= inv;
  return out;
}

HeadLoss tv_loss(std::span<const Grid2D> heads) {
  check_heads(heads, "tv_loss");
  const double inv = 1.0 / static_cast<double>(heads.size());
  HeadLoss out;
  for (const auto& s : heads) {
    const int k = s.side();
    Grid2D g(k);
    double sum = 0.0;
    auto edge = [&](int x0, int y0, int x1, int y1) {
      const double diff = s(x0, y0) - s(x1, y1);
      sum += std::abs(diff);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      g(x0, y0) += sign * inv;
      g(x1, y1) -= sign * inv;
    };
    for (int x = 0; x < k; ++x) {
      for (int y = 0; y < k; ++y) {
        if (y + 1 < k) edge(x, y, x, y + 1);
        if (x + 1 < k) edge(x, y, x + 1, y);
      }
    }
    out.loss += sum;
    out.gradients.push_back(std::move(g));
  }
  out.loss *= inv;
  return out;
}

namespace reference {

std::vector<EntropyResult> spatial_entropy_batch(std::span<const Grid2D> maps,
                                                 const LossConfig& cfg) {
  std::vector<EntropyResult> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(spatial_entropy(m, cfg));
  return out;
}

}  // namespace reference

}  // namespace sar
