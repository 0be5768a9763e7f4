#pragma once

#include <filesystem>
#include <span>

#include "sar/grid.hpp"

namespace sar {

/// Smallest set of highest-valued cells holding at least `fraction` of the total mass.
struct MassMask {
  Grid2D kept;          // binary
  double kept_mass;     // fraction of total mass inside `kept`
  int kept_cells;
};

/// `a` must be non-negative with positive total (typically a post-softmax
/// CLS attention row). Cells are taken in descending value order, equal
/// values in raster order, until the kept mass reaches fraction * total.
MassMask mass_threshold(const Grid2D& a, double fraction);

/// |A ∩ B| / |A ∪ B| over cells with non-zero value; 1 when both are empty.
double jaccard(const Grid2D& mask, const Grid2D& truth);

struct HeadScore {
  int head;
  double score;
};

/// Head whose mass-thresholded map best matches `truth`; ties go to the lowest index.
HeadScore best_head_jaccard(std::span<const Grid2D> heads, const Grid2D& truth, double fraction);

/// Write `a` as a binary PGM (min-max scaled, constant maps become mid-grey,
/// each cell repeated `upscale` x `upscale` times) plus a sidecar text grid
/// with the raw values next to it (same stem, ".txt").
void export_map(const Grid2D& a, const std::filesystem::path& path, int upscale = 1);

}  // namespace sar
