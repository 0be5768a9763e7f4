#include "sar/ccl.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "sar/error.hpp"

namespace sar {

namespace {

// Equivalence table over provisional labels; the root of a set is its
// smallest member.
class UnionFind {
 public:
  int make() {
    parent_.push_back(static_cast<int>(parent_.size()));
    return parent_.back();
  }

  int find(int x) {
    int root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const int next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return a;
  }

  void reserve(std::size_t n) { parent_.reserve(n); }

 private:
  std::vector<int> parent_;
};

}  // namespace

Grid2D ComponentLabeling::mask(int id) const {
  if (id < 1 || id > count) {
    throw Error(ErrorCode::InvalidArgument, "component id " + std::to_string(id) +
                                                " out of range 1.." + std::to_string(count));
  }
  Grid2D out(side);
  auto v = out.values();
  for (std::size_t i = 0; i < labels.size(); ++i) v[i] = labels[i] == id ? 1.0 : 0.0;
  return out;
}

std::vector<Grid2D> ComponentLabeling::masks() const {
  std::vector<Grid2D> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int id = 1; id <= count; ++id) out.push_back(mask(id));
  return out;
}

int ComponentLabeling::support_size() const {
  return std::accumulate(sizes.begin(), sizes.end(), 0);
}

ComponentLabeling connected_components(const Grid2D& grid, double support_threshold) {
  if (!(support_threshold >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "support threshold must be >= 0");
  }
  const int k = grid.side();
  const auto values = grid.values();
  ComponentLabeling out;
  out.side = k;
  out.labels.assign(values.size(), 0);
  auto& labels = out.labels;

  // Pass 1: provisional labels (1-based; slot 0 of the table is background).
  UnionFind table;
  table.reserve(values.size() / 2 + 2);
  table.make();
  auto at = [k](int x, int y) { return static_cast<std::size_t>(x) * k + y; };
  for (int x = 0; x < k; ++x) {
    for (int y = 0; y < k; ++y) {
      if (!(values[at(x, y)] > support_threshold)) continue;
      const int nw = (x > 0 && y > 0) ? labels[at(x - 1, y - 1)] : 0;
      const int n = x > 0 ? labels[at(x - 1, y)] : 0;
      const int ne = (x > 0 && y + 1 < k) ? labels[at(x - 1, y + 1)] : 0;
      const int w = y > 0 ? labels[at(x, y - 1)] : 0;
      int label;
      // N touches every other visited neighbour, so it alone decides.
      if (n) {
        label = n;
      } else if (ne) {
        label = ne;
        if (nw) {
          table.unite(ne, nw);
        } else if (w) {
          table.unite(ne, w);
        }
      } else if (nw) {
        label = nw;
      } else if (w) {
        label = w;
      } else {
        label = table.make();
      }
      labels[at(x, y)] = label;
    }
  }

  // Pass 2: resolve equivalences and renumber by first raster appearance.
  std::vector<int> final_id;
  for (auto& l : labels) {
    if (!l) continue;
    const int root = table.find(l);
    if (static_cast<std::size_t>(root) >= final_id.size()) final_id.resize(root + 1, 0);
    if (!final_id[root]) {
      final_id[root] = ++out.count;
      out.sizes.push_back(0);
    }
    l = final_id[root];
    ++out.sizes[l - 1];
  }
  return out;
}

std::vector<int> largest_components(const ComponentLabeling& labeling, int n,
                                    const Grid2D& weights) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "largest_components needs n >= 1");
  if (weights.side() != labeling.side) {
    throw Error(ErrorCode::DimensionMismatch, "weight grid side differs from labeling side");
  }
  std::vector<double> mass(static_cast<std::size_t>(labeling.count), 0.0);
  const auto w = weights.values();
  for (std::size_t i = 0; i < labeling.labels.size(); ++i) {
    if (labeling.labels[i]) mass[labeling.labels[i] - 1] += w[i];
  }
  std::vector<int> ids(static_cast<std::size_t>(labeling.count));
  std::iota(ids.begin(), ids.end(), 1);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](int a, int b) { return mass[a - 1] > mass[b - 1]; });
  ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(n)));
  return ids;
}

}  // namespace sar
