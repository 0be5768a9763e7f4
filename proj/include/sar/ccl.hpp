#pragma once

#include <vector>

#include "sar/grid.hpp"

namespace sar {

/// 8-connected components of the cells of a grid whose value exceeds a
/// threshold. Labels are 1..count, 0 is background. Components are numbered
/// in raster order of their first (topmost, then leftmost) cell.
struct ComponentLabeling {
  int side = 0;
  int count = 0;
  std::vector<int> labels;  // side*side, row-major
  std::vector<int> sizes;   // sizes[j-1] = cell count of component j

  int label(int x, int y) const { return labels[static_cast<std::size_t>(x) * side + y]; }

  /// Binary mask of component `id` (1-based). Built on demand: a 224 x 224
  /// grid can hold thousands of components.
  Grid2D mask(int id) const;
  std::vector<Grid2D> masks() const;

  /// Number of labeled cells.
  int support_size() const;
};

/// Two-pass union-find labeling with an 8-neighbourhood decision tree.
/// Support is the set of cells with value > support_threshold.
ComponentLabeling connected_components(const Grid2D& grid, double support_threshold = 0.0);

/// Ids of the n components with the largest summed `weights`, heaviest first,
/// ties broken by smaller id. n larger than count returns every component.
std::vector<int> largest_components(const ComponentLabeling& labeling, int n,
                                    const Grid2D& weights);

}  // namespace sar
