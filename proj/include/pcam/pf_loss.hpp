#pragma once

#include <vector>

#include "pcam/numerics.hpp"

namespace pcam {

/// Pulling minimizes the distance-weighted squared deviation from the
/// center-cell value. Literal keeps the leading minus sign.
enum class PfSign { Pulling, Literal };

/// Literal divides the first moment by G^2; Normalized divides by total mass.
enum class CenterForm { Literal, Normalized };

struct PfOptions {
  PfSign sign = PfSign::Pulling;
  CenterForm center = CenterForm::Literal;
  /// Include d(center)/d(map) terms in the gradient.
  bool center_gradient = true;
  /// Cells closer than this to the center are skipped.
  double min_distance = 1e-6;
};

/// Coordinates are 1-based (row m, column n). ref_* is the floored center,
/// clamped into the grid.
struct CenterOfMass {
  double row = 0.0;
  double col = 0.0;
  int ref_row = 1;
  int ref_col = 1;
  /// Map had zero total mass.
  bool degenerate = false;
};

CenterOfMass center_of_mass(const Matrix& grid, CenterForm form = CenterForm::Literal);

/// One layer's unsigned term: sum over cells of (A - A_ref)^2 / dist(cell, center).
double pf_spread(const Matrix& grid, const PfOptions& opt = {});

/// Sum over layers of the signed per-layer term.
double pf_loss(const std::vector<Matrix>& maps, const PfOptions& opt = {});

/// Analytic gradient of pf_loss, one grid per layer.
std::vector<Matrix> pf_loss_grad(const std::vector<Matrix>& maps, const PfOptions& opt = {});

}  // namespace pcam
