#include "pcam/pf_loss.hpp"

#include <algorithm>
#include <cmath>

namespace pcam {

namespace {

void check_map(const Matrix& g) {
  require(g.rows() >= 2 && g.rows() == g.cols(), "pf_loss: maps must be square with side >= 2");
  require(g.all_finite(), "pf_loss: map must be finite");
}

double sign_of(PfSign s) { return s == PfSign::Pulling ? 1.0 : -1.0; }

}  // namespace

CenterOfMass center_of_mass(const Matrix& grid, CenterForm form) {
  require(grid.rows() >= 1 && grid.rows() == grid.cols(), "center_of_mass: grid must be square");
  require(grid.all_finite(), "center_of_mass: grid must be finite");
  const int G = static_cast<int>(grid.rows());
  double mass = 0.0, mr = 0.0, mc = 0.0;
  for (int r = 0; r < G; ++r)
    for (int c = 0; c < G; ++c) {
      const double a = grid(r, c);
      mass += a;
      mr += (r + 1) * a;
      mc += (c + 1) * a;
    }
  CenterOfMass com;
  com.degenerate = mass == 0.0;
  if (form == CenterForm::Literal) {
    const double inv = 1.0 / (static_cast<double>(G) * G);
    com.row = mr * inv;
    com.col = mc * inv;
  } else if (com.degenerate) {
    com.row = com.col = (G + 1) / 2.0;
  } else {
    com.row = mr / mass;
    com.col = mc / mass;
  }
  com.ref_row = std::clamp(static_cast<int>(std::floor(com.row)), 1, G);
  com.ref_col = std::clamp(static_cast<int>(std::floor(com.col)), 1, G);
  return com;
}

double pf_spread(const Matrix& grid, const PfOptions& opt) {
  check_map(grid);
  const int G = static_cast<int>(grid.rows());
  const CenterOfMass com = center_of_mass(grid, opt.center);
  const double ref = grid(com.ref_row - 1, com.ref_col - 1);
  double sum = 0.0;
  for (int r = 0; r < G; ++r)
    for (int c = 0; c < G; ++c) {
      const double d = std::hypot(r + 1 - com.row, c + 1 - com.col);
      if (d < opt.min_distance) continue;
      const double diff = grid(r, c) - ref;
      sum += diff * diff / d;
    }
  return sum;
}

double pf_loss(const std::vector<Matrix>& maps, const PfOptions& opt) {
  double total = 0.0;
  for (const auto& m : maps) total += pf_spread(m, opt);
  return sign_of(opt.sign) * total;
}

std::vector<Matrix> pf_loss_grad(const std::vector<Matrix>& maps, const PfOptions& opt) {
  const double s = sign_of(opt.sign);
  std::vector<Matrix> grads;
  grads.reserve(maps.size());
  for (const auto& A : maps) {
    check_map(A);
    const int G = static_cast<int>(A.rows());
    const CenterOfMass com = center_of_mass(A, opt.center);
    const double ref = A(com.ref_row - 1, com.ref_col - 1);
    Matrix g(A.rows(), A.cols());
    double ref_pull = 0.0, t_row = 0.0, t_col = 0.0, mass = 0.0;
    for (int r = 0; r < G; ++r)
      for (int c = 0; c < G; ++c) {
        mass += A(r, c);
        const double dr = r + 1 - com.row, dc = c + 1 - com.col;
        const double d = std::hypot(dr, dc);
        if (d < opt.min_distance) continue;
        const double diff = A(r, c) - ref;
        g(r, c) += 2.0 * diff / d;  // direct term
        ref_pull += 2.0 * diff / d;
        const double w = diff * diff / (d * d * d);
        t_row += w * dr;
        t_col += w * dc;
      }
    g(com.ref_row - 1, com.ref_col - 1) -= ref_pull;
    if (opt.center_gradient) {
      const bool literal = opt.center == CenterForm::Literal;
      if (literal || mass != 0.0) {
        const double inv = literal ? 1.0 / (static_cast<double>(G) * G) : 1.0 / mass;
        for (int r = 0; r < G; ++r)
          for (int c = 0; c < G; ++c) {
            const double drow = literal ? (r + 1) * inv : (r + 1 - com.row) * inv;
            const double dcol = literal ? (c + 1) * inv : (c + 1 - com.col) * inv;
            g(r, c) += t_row * drow + t_col * dcol;
          }
      }
    }
    g *= s;
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace pcam
