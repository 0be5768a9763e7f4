#include "sar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sar/error.hpp"

namespace sar {

namespace {

constexpr int kPlacementTries = 200;
constexpr int kGap = 2;  // min background pixels between shapes

bool boxes_clash(const PlacedShape& a, const PlacedShape& b) {
  return a.top < b.top + b.height + kGap && b.top < a.top + a.height + kGap &&
         a.left < b.left + b.width + kGap && b.left < a.left + a.width + kGap;
}

PlacedShape random_shape(const DatasetSpec& spec, ShapeKind kind, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(spec.min_size, spec.max_size);
  PlacedShape s{kind, 0, 0, size(rng), size(rng)};
  if (kind == ShapeKind::Cross) s.width = s.height;  // keep arms symmetric
  std::uniform_int_distribution<int> top(0, spec.image_size - s.height);
  std::uniform_int_distribution<int> left(0, spec.image_size - s.width);
  s.top = top(rng);
  s.left = left(rng);
  return s;
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

ShapeKind parse_shape_kind(std::string_view name) {
  for (auto k : {ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Cross, ShapeKind::Triangle}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown shape class '" + std::string(name) + "'");
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0 || grid_side() < 2) {
    fail("dataset image_size must be a positive multiple of patch_size giving at least 2x2 patches");
  }
  if (classes.size() < 2) fail("dataset needs at least two classes");
  if (samples < 1) fail("dataset needs at least one sample");
  if (min_shapes < 1 || max_shapes < min_shapes) fail("need 1 <= min_shapes <= max_shapes");
  if (min_size < 3 || max_size < min_size) fail("need 3 <= min_size <= max_size");
  if (max_size > image_size) {
    fail("shape size " + std::to_string(max_size) + " exceeds image size " +
         std::to_string(image_size));
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise must be a finite value >= 0");
}

bool shape_covers(const PlacedShape& s, int row, int col) {
  const int r = row - s.top;
  const int c = col - s.left;
  if (r < 0 || c < 0 || r >= s.height || c >= s.width) return false;
  switch (s.kind) {
    case ShapeKind::Rectangle:
      return true;
    case ShapeKind::Ellipse: {
      const double ry = s.height / 2.0;
      const double rx = s.width / 2.0;
      const double dy = (r + 0.5 - ry) / ry;
      const double dx = (c + 0.5 - rx) / rx;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::Cross: {
      const int arm = std::max(2, s.width / 3);
      const int lo = (s.width - arm) / 2;
      return (c >= lo && c < lo + arm) || (r >= lo && r < lo + arm);
    }
    case ShapeKind::Triangle: {
      // Apex at the top centre, base on the bottom row.
      const double half = (r + 1.0) / s.height * s.width / 2.0;
      return std::abs(c + 0.5 - s.width / 2.0) <= half;
    }
  }
  return false;
}

ShapeSample render_sample(const DatasetSpec& spec, std::span<const PlacedShape> shapes, int label,
                          std::mt19937_64& rng) {
  spec.validate();
  const int n = spec.image_size;
  const int P = spec.patch_size;
  const int k = spec.grid_side();
  std::vector<unsigned char> fg(static_cast<std::size_t>(n) * n, 0);
  for (const auto& s : shapes) {
    for (int r = std::max(0, s.top); r < std::min(n, s.top + s.height); ++r) {
      for (int c = std::max(0, s.left); c < std::min(n, s.left + s.width); ++c) {
        if (shape_covers(s, r, c)) fg[static_cast<std::size_t>(r) * n + c] = 1;
      }
    }
  }

  ShapeSample out{std::vector<double>(fg.size(), 0.0), label, Grid2D(k),
                  static_cast<int>(shapes.size())};
  std::uniform_real_distribution<double> intensity(0.6, 1.0);
  const double level = intensity(rng);
  std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    out.image[i] = fg[i] ? level : 0.0;
    if (spec.noise > 0) out.image[i] += noise(rng);
  }
  for (int gx = 0; gx < k; ++gx) {
    for (int gy = 0; gy < k; ++gy) {
      int count = 0;
      for (int r = 0; r < P; ++r) {
        for (int c = 0; c < P; ++c) count += fg[static_cast<std::size_t>(gx * P + r) * n + gy * P + c];
      }
      out.mask(gx, gy) = 2 * count >= P * P ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<ShapeSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int num_classes = static_cast<int>(spec.classes.size());
  std::vector<int> labels(static_cast<std::size_t>(spec.samples));
  for (int i = 0; i < spec.samples; ++i) labels[i] = i % num_classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<ShapeSample> out;
  out.reserve(labels.size());
  std::uniform_int_distribution<int> count(spec.min_shapes, spec.max_shapes);
  for (int label : labels) {
    const ShapeKind kind = spec.classes[label];
    const int wanted = count(rng);
    std::vector<PlacedShape> placed;
    for (int tries = 0; static_cast<int>(placed.size()) < wanted && tries < kPlacementTries;
         ++tries) {
      const auto s = random_shape(spec, kind, rng);
      if (std::none_of(placed.begin(), placed.end(),
                       [&](const PlacedShape& p) { return boxes_clash(p, s); })) {
        placed.push_back(s);
      }
    }
    out.push_back(render_sample(spec, placed, label, rng));
  }
  return out;
}

}  // namespace sar
