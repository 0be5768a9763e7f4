#include "sar/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "sar/error.hpp"

namespace sar {

namespace {

void check_side(int side) {
  if (side < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "grid side must be >= 2, got " + std::to_string(side));
  }
}

void check_projection(const HeadProjection& proj) {
  check_side(proj.side);
  if (proj.cls_query.empty()) {
    throw Error(ErrorCode::InvalidArgument, "head projection has empty query");
  }
  const auto expected = static_cast<std::size_t>(proj.side) * proj.side * proj.cls_query.size();
  if (proj.patch_keys.size() != expected) {
    throw Error(ErrorCode::DimensionMismatch,
                "patch keys hold " + std::to_string(proj.patch_keys.size()) +
                    " values, expected k*k*d = " + std::to_string(expected));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

Grid2D::Grid2D(int side, double fill, MapKind kind)
    : side_(side), kind_(kind) {
  check_side(side);
  values_.assign(static_cast<std::size_t>(side) * side, fill);
  check_finite();
}

Grid2D::Grid2D(int side, std::vector<double> values, MapKind kind)
    : side_(side), values_(std::move(values)), kind_(kind) {
  check_side(side);
  if (values_.size() != static_cast<std::size_t>(side) * side) {
    throw Error(ErrorCode::DimensionMismatch,
                "grid of side " + std::to_string(side) + " needs " +
                    std::to_string(side * side) + " values, got " +
                    std::to_string(values_.size()));
  }
  check_finite();
}

void Grid2D::check_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NumericFailure, "grid holds a non-finite value");
  }
}

std::span<const double> HeadProjection::key(int x, int y) const {
  const auto d = cls_query.size();
  const auto offset = (static_cast<std::size_t>(x) * side + y) * d;
  return std::span<const double>(patch_keys).subspan(offset, d);
}

Grid2D similarity_map(const HeadProjection& proj) {
  check_projection(proj);
  const double scale = 1.0 / std::sqrt(static_cast<double>(proj.dim()));
  Grid2D out(proj.side);
  for (int x = 0; x < proj.side; ++x) {
    for (int y = 0; y < proj.side; ++y) out(x, y) = dot(proj.cls_query, proj.key(x, y)) * scale;
  }
  out.check_finite();
  out.set_kind(MapKind::PreSoftmax);
  return out;
}

Grid2D cosine_similarity_map(const HeadProjection& proj) {
  check_projection(proj);
  const double qnorm = std::sqrt(dot(proj.cls_query, proj.cls_query));
  if (qnorm == 0.0) throw Error(ErrorCode::InvalidArgument, "CLS query has zero norm");
  Grid2D out(proj.side);
  for (int x = 0; x < proj.side; ++x) {
    for (int y = 0; y < proj.side; ++y) {
      const auto key = proj.key(x, y);
      const double knorm = std::sqrt(dot(key, key));
      if (knorm == 0.0) {
        throw Error(ErrorCode::InvalidArgument, "patch key (" + std::to_string(x) + "," +
                                                    std::to_string(y) + ") has zero norm");
      }
      // Rounding can push |cos| a hair past 1.
      out(x, y) = std::clamp(dot(proj.cls_query, key) / (qnorm * knorm), -1.0, 1.0);
    }
  }
  out.set_kind(MapKind::PreSoftmax);
  return out;
}

double grid_mean(const Grid2D& g) {
  const auto v = g.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Grid2D read_grid(std::istream& in) {
  long long side = 0;
  if (!(in >> side)) throw Error(ErrorCode::InvalidArgument, "grid text: missing side header");
  if (side < 2 || side > 1 << 15) {
    throw Error(ErrorCode::InvalidArgument, "grid text: bad side " + std::to_string(side));
  }
  std::vector<double> values(static_cast<std::size_t>(side * side));
  for (auto& v : values) {
    std::string token;
    if (!(in >> token)) throw Error(ErrorCode::InvalidArgument, "grid text: too few values");
    std::size_t used = 0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) {
      throw Error(ErrorCode::InvalidArgument, "grid text: bad value '" + token + "'");
    }
  }
  std::string extra;
  if (in >> extra) throw Error(ErrorCode::InvalidArgument, "grid text: trailing data '" + extra + "'");
  return Grid2D(static_cast<int>(side), std::move(values));
}

void write_grid(std::ostream& out, const Grid2D& g) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << g.side() << '\n';
  for (int x = 0; x < g.side(); ++x) {
    for (int y = 0; y < g.side(); ++y) out << (y ? " " : "") << g(x, y);
    out << '\n';
  }
  out.precision(old_precision);
}

Grid2D load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open grid file " + path.string());
  return read_grid(in);
}

void save_grid(const std::filesystem::path& path, const Grid2D& g) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write grid file " + path.string());
  write_grid(out, g);
  if (!out) throw Error(ErrorCode::Io, "failed writing grid file " + path.string());
}

}  // namespace sar
