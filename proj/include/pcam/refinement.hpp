#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <vector>

#include "pcam/numerics.hpp"
#include "pcam/vit.hpp"

namespace pcam {

/// Inclusive patch-grid rectangle with 1-based indices.
///
/// In the (a_<, a_>, a_v, a_^) notation: col_min = a_<, col_max = a_>,
/// row_min = a_v, row_max = a_^.
struct BoundingBox {
  int col_min = 1, col_max = 1, row_min = 1, row_max = 1;

  int width() const { return col_max - col_min + 1; }
  int height() const { return row_max - row_min + 1; }
  int cells() const { return width() * height(); }
  bool contains(int row, int col) const { return row >= row_min && row <= row_max && col >= col_min && col <= col_max; }
  bool contains(const BoundingBox& o) const {
    return o.col_min >= col_min && o.col_max <= col_max && o.row_min >= row_min && o.row_max <= row_max;
  }
  /// Pixel projection: [(index - 1) * P, index * P - 1] per axis.
  PixelBox pixels(int patch_side) const;
  void validate(int grid_side) const;

  static BoundingBox full(int grid_side) { return {1, grid_side, 1, grid_side}; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct BoxResult {
  BoundingBox box;
  /// No cell exceeded beta; box is the full grid.
  bool fallback = false;
  friend bool operator==(const BoxResult&, const BoxResult&) = default;
};

/// Bounding rows/columns of the cells with value > beta.
BoxResult box_identify(const Matrix& grid, double beta);

/// Mean over boxes of inclusive box area in pixels divided by image pixels.
double foreground_rate(const std::vector<BoundingBox>& boxes, const ModelConfig& cfg);

/// Bilinear sample positions for resampling an in_rows x in_cols crop onto an
/// out_side x out_side grid with aligned corners.
struct InterpWeights {
  struct Tap {
    int row0 = 0, col0 = 0;
    std::array<std::array<double, 2>, 2> w{};  // w[i][j] weighs (row0 + i, col0 + j)
  };
  int in_rows = 0, in_cols = 0, out_side = 0;
  std::vector<Tap> taps;  // out_side * out_side, row-major
};

InterpWeights interp_weights(int in_rows, int in_cols, int out_side);

/// Crops the box from a (G*G) x D patch-feature grid and resamples each
/// channel back to out_side x out_side. Returns (out_side^2) x D.
Matrix box_interpolate(const Matrix& patch_grid, int grid_side, const BoundingBox& box, int out_side);
/// Adjoint of box_interpolate.
Matrix box_interpolate_backward(const Matrix& d_out, int grid_side, const BoundingBox& box, int out_side);

std::vector<BoxResult> beta_sweep(const Matrix& grid, const std::vector<double>& betas);

/// Smallest gap between distinct grid values and between any value and beta.
double separation_gap(const Matrix& grid, double beta);

/// Applies `trials` random perturbations with |delta| < epsilon and reports
/// whether the identified box stayed identical for all of them.
bool perturb_check(const Matrix& grid, double beta, double epsilon, Rng& rng, int trials = 100);

namespace instrumentation {
struct Counters {
  std::atomic<std::uint64_t> box_identify{0};
  std::atomic<std::uint64_t> box_interpolate{0};
  std::atomic<std::uint64_t> build_pairs{0};
  std::atomic<std::uint64_t> filter_pairs{0};
  std::atomic<std::uint64_t> init_centers{0};
};
Counters& counters();
void reset();
}  // namespace instrumentation

}  // namespace pcam
