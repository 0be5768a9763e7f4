#pragma once

#include <span>
#include <vector>

#include "sar/ccl.hpp"
#include "sar/grid.hpp"

namespace sar {

struct LossConfig {
  /// Added once per support cell when normalising component masses; keeps
  /// log() away from zero.
  double epsilon = 1e-9;
  /// Treat the mean threshold as a constant during differentiation.
  bool detach_mean = false;
};

struct ThresholdResult {
  Grid2D thresholded;  // max(0, s - mean)
  double mean;
};

/// Zero out every cell that does not exceed the grid mean; shift the rest down by it.
ThresholdResult threshold_map(const Grid2D& s);

struct EntropyResult {
  double entropy = 0.0;               // nats
  std::vector<double> probabilities;  // one per component, in label order
  Grid2D gradient;                    // d entropy / d s
  ComponentLabeling components;
};

/// Shannon entropy of the mass distribution over the 8-connected components
/// of the mean-thresholded map.
///
/// The gradient holds the component masks fixed and propagates through both
/// the ReLU and the mean (unless cfg.detach_mean). Cells on the boundary of
/// the support get the one-sided derivative from outside the support.
/// Throws if `s` is flagged as a post-softmax map.
EntropyResult spatial_entropy(const Grid2D& s, const LossConfig& cfg = {});

/// spatial_entropy over many maps. Maps are evaluated in parallel; output
/// order follows input order.
std::vector<EntropyResult> spatial_entropy_batch(std::span<const Grid2D> maps,
                                                 const LossConfig& cfg = {});

struct HeadLoss {
  double loss = 0.0;
  std::vector<Grid2D> gradients;  // one per head, already scaled by 1/H
};

/// Mean over heads of spatial_entropy.
HeadLoss spatial_entropy_loss(std::span<const Grid2D> heads, const LossConfig& cfg = {});

/// Anisotropic total variation per head, averaged over heads. The subgradient
/// of |t| at t = 0 is taken as 0.
HeadLoss tv_loss(std::span<const Grid2D> heads);

namespace reference {

/// Serial loop over spatial_entropy, kept for tests and the benchmark.
std::vector<EntropyResult> spatial_entropy_batch(std::span<const Grid2D> maps,
                                                 const LossConfig& cfg = {});

}  // namespace reference

}  // namespace sar
