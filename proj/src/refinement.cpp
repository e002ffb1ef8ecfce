#include "pcam/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace pcam {

namespace instrumentation {
Counters& counters() {
  static Counters c;
  return c;
}
void reset() {
  auto& c = counters();
  c.box_identify = 0;
  c.box_interpolate = 0;
  c.build_pairs = 0;
  c.filter_pairs = 0;
  c.init_centers = 0;
}
}  // namespace instrumentation

PixelBox BoundingBox::pixels(int patch_side) const {
  return {(row_min - 1) * patch_side, row_max * patch_side - 1, (col_min - 1) * patch_side, col_max * patch_side - 1};
}

void BoundingBox::validate(int grid_side) const {
  require(col_min >= 1 && col_min <= col_max && col_max <= grid_side, "BoundingBox: column bounds out of range");
  require(row_min >= 1 && row_min <= row_max && row_max <= grid_side, "BoundingBox: row bounds out of range");
}

BoxResult box_identify(const Matrix& grid, double beta) {
  ++instrumentation::counters().box_identify;
  require(grid.rows() >= 1 && grid.rows() == grid.cols(), "box_identify: grid must be square and non-empty");
  require(grid.all_finite(), "box_identify: grid must be finite");
  require(beta >= 0.0 && beta <= 1.0, "box_identify: beta must lie in [0, 1]");
  const int G = static_cast<int>(grid.rows());
  BoundingBox b{G + 1, 0, G + 1, 0};
  bool any = false;
  for (int r = 0; r < G; ++r) {
    for (int c = 0; c < G; ++c) {
      if (!(grid(r, c) > beta)) continue;
      any = true;
      b.row_min = std::min(b.row_min, r + 1);
      b.row_max = std::max(b.row_max, r + 1);
      b.col_min = std::min(b.col_min, c + 1);
      b.col_max = std::max(b.col_max, c + 1);
    }
  }
  if (!any) return {BoundingBox::full(G), true};
  return {b, false};
}

double foreground_rate(const std::vector<BoundingBox>& boxes, const ModelConfig& cfg) {
  require(!boxes.empty(), "foreground_rate: no boxes");
  const double pixels = static_cast<double>(cfg.image_side) * cfg.image_side;
  const double patch_px = static_cast<double>(cfg.patch_side) * cfg.patch_side;
  double sum = 0.0;
  for (const auto& b : boxes) {
    b.validate(cfg.grid_side());
    sum += b.cells() * patch_px / pixels;
  }
  return sum / static_cast<double>(boxes.size());
}

InterpWeights interp_weights(int in_rows, int in_cols, int out_side) {
  require(in_rows >= 1 && in_cols >= 1 && out_side >= 1, "interp_weights: sizes must be >= 1");
  InterpWeights iw;
  iw.in_rows = in_rows;
  iw.in_cols = in_cols;
  iw.out_side = out_side;
  auto source_coord = [out_side](int o, int in) {
    return out_side > 1 ? static_cast<double>(o) * (in - 1) / (out_side - 1) : 0.0;
  };
  auto base = [](double coord, int in) { return in > 1 ? std::min(static_cast<int>(std::floor(coord)), in - 2) : 0; };
  iw.taps.reserve(static_cast<std::size_t>(out_side) * out_side);
  for (int m = 0; m < out_side; ++m) {
    const double y = source_coord(m, in_rows);
    const int r0 = base(y, in_rows);
    for (int n = 0; n < out_side; ++n) {
      const double x = source_coord(n, in_cols);
      const int c0 = base(x, in_cols);
      InterpWeights::Tap t;
      t.row0 = r0;
      t.col0 = c0;
      double norm = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const double w = std::max(0.0, 1.0 - std::abs(y - (r0 + i))) * std::max(0.0, 1.0 - std::abs(x - (c0 + j)));
          t.w[i][j] = w;
          norm += w;
        }
      for (auto& row : t.w)
        for (double& w : row) w /= norm;
      iw.taps.push_back(t);
    }
  }
  return iw;
}

namespace {

std::size_t crop_index(const BoundingBox& box, int grid_side, const InterpWeights& iw, const InterpWeights::Tap& t,
                       int i, int j) {
  const int r = std::min(t.row0 + i, iw.in_rows - 1) + box.row_min - 1;
  const int c = std::min(t.col0 + j, iw.in_cols - 1) + box.col_min - 1;
  return static_cast<std::size_t>(r) * static_cast<std::size_t>(grid_side) + static_cast<std::size_t>(c);
}

}  // namespace

Matrix box_interpolate(const Matrix& grid, int grid_side, const BoundingBox& box, int out_side) {
  ++instrumentation::counters().box_interpolate;
  require(grid.rows() == static_cast<std::size_t>(grid_side) * grid_side, "box_interpolate: grid size mismatch");
  box.validate(grid_side);
  const InterpWeights iw = interp_weights(box.height(), box.width(), out_side);
  Matrix out(static_cast<std::size_t>(out_side) * out_side, grid.cols());
  for (std::size_t o = 0; o < iw.taps.size(); ++o) {
    const auto& t = iw.taps[o];
    auto dst = out.row(o);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double w = t.w[i][j];
        if (w == 0.0) continue;
        auto src = grid.row(crop_index(box, grid_side, iw, t, i, j));
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
      }
  }
  return out;
}

Matrix box_interpolate_backward(const Matrix& d_out, int grid_side, const BoundingBox& box, int out_side) {
  box.validate(grid_side);
  const InterpWeights iw = interp_weights(box.height(), box.width(), out_side);
  require(d_out.rows() == iw.taps.size(), "box_interpolate_backward: gradient size mismatch");
  Matrix d_in(static_cast<std::size_t>(grid_side) * grid_side, d_out.cols());
  for (std::size_t o = 0; o < iw.taps.size(); ++o) {
    const auto& t = iw.taps[o];
    auto src = d_out.row(o);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double w = t.w[i][j];
        if (w == 0.0) continue;
        auto dst = d_in.row(crop_index(box, grid_side, iw, t, i, j));
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += w * src[c];
      }
  }
  return d_in;
}

std::vector<BoxResult> beta_sweep(const Matrix& grid, const std::vector<double>& betas) {
  std::vector<BoxResult> out;
  out.reserve(betas.size());
  for (double b : betas) out.push_back(box_identify(grid, b));
  return out;
}

double separation_gap(const Matrix& grid, double beta) {
  std::set<double> distinct(grid.values().begin(), grid.values().end());
  double gap = std::numeric_limits<double>::infinity();
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (double v : distinct) {
    if (!std::isnan(prev)) gap = std::min(gap, v - prev);
    gap = std::min(gap, std::abs(v - beta));
    prev = v;
  }
  return gap;
}

bool perturb_check(const Matrix& grid, double beta, double epsilon, Rng& rng, int trials) {
  require(epsilon >= 0.0 && trials >= 0, "perturb_check: epsilon and trials must be non-negative");
  const BoxResult base = box_identify(grid, beta);
  if (epsilon == 0.0) return true;
  for (int t = 0; t < trials; ++t) {
    Matrix p = grid;
    for (double& v : p.values()) v += rng.uniform(-epsilon, epsilon);
    if (box_identify(p, beta) != base) return false;
  }
  return true;
}

}  // namespace pcam
