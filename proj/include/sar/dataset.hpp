#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sar/grid.hpp"

namespace sar {

enum class ShapeKind { Rectangle, Ellipse, Cross, Triangle };

std::string_view to_string(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);

/// Recipe for a synthetic shape-classification set. Every image holds
/// between min_shapes and max_shapes disjoint shapes of its class on a noisy
/// dark background.
struct DatasetSpec {
  int image_size = 56;
  int patch_size = 4;
  std::vector<ShapeKind> classes = {ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Cross};
  int samples = 2000;
  int min_shapes = 1;
  int max_shapes = 3;
  int min_size = 10;  // pixels, shape bounding-box side
  int max_size = 20;
  double noise = 0.1;  // std of additive Gaussian pixel noise

  int grid_side() const { return image_size / patch_size; }
  void validate() const;
};

struct ShapeSample {
  std::vector<double> image;  // image_size x image_size, row-major
  int label = 0;
  Grid2D mask;                // k x k, 1 where >= 50% of the patch is foreground
  int shape_count = 0;
};

/// A shape at a fixed position; `top/left/height/width` is the bounding box.
struct PlacedShape {
  ShapeKind kind;
  int top, left, height, width;
};

/// Deterministic for a given (spec, seed). Labels are balanced to within one.
std::vector<ShapeSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// Render the given shapes; noise is drawn from rng when spec.noise > 0.
ShapeSample render_sample(const DatasetSpec& spec, std::span<const PlacedShape> shapes, int label,
                          std::mt19937_64& rng);

/// Foreground indicator of one shape at pixel (row, col).
bool shape_covers(const PlacedShape& shape, int row, int col);

}  // namespace sar
