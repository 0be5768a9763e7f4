#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace sar {

/// Where a map was taken from. The spatial-entropy loss only accepts maps
/// that were not produced by a softmax.
enum class MapKind { Generic, PreSoftmax, PostSoftmax };

/// Square k x k grid of finite reals, row-major with (x, y) = (row, col).
class Grid2D {
 public:
  explicit Grid2D(int side, double fill = 0.0, MapKind kind = MapKind::Generic);
  Grid2D(int side, std::vector<double> values, MapKind kind = MapKind::Generic);

  int side() const noexcept { return side_; }
  std::size_t size() const noexcept { return values_.size(); }

  double operator()(int x, int y) const { return values_[index(x, y)]; }
  double& operator()(int x, int y) { return values_[index(x, y)]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  MapKind kind() const noexcept { return kind_; }
  void set_kind(MapKind kind) noexcept { kind_ = kind; }

  /// Throws if any value is NaN or infinite.
  void check_finite() const;

  bool operator==(const Grid2D& other) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(x) * side_ + y;
  }

  int side_;
  std::vector<double> values_;
  MapKind kind_ = MapKind::Generic;
};

/// CLS query of one head and the keys of the k x k patch tokens.
struct HeadProjection {
  std::vector<double> cls_query;   // length d
  int side = 0;                    // k
  std::vector<double> patch_keys;  // k*k*d, row-major (x, y, feature)

  int dim() const noexcept { return static_cast<int>(cls_query.size()); }
  std::span<const double> key(int x, int y) const;
};

/// Scaled dot product <q_cls, k_xy> / sqrt(d) for every patch (pre-softmax).
Grid2D similarity_map(const HeadProjection& proj);

/// Cosine similarity between the CLS query and every patch key.
Grid2D cosine_similarity_map(const HeadProjection& proj);

double grid_mean(const Grid2D& g);

// Text format: a line with k followed by k lines of k values.
Grid2D read_grid(std::istream& in);
void write_grid(std::ostream& out, const Grid2D& g);
Grid2D load_grid(const std::filesystem::path& path);
void save_grid(const std::filesystem::path& path, const Grid2D& g);

}  // namespace sar
