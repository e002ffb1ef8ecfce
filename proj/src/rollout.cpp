#include "pcam/rollout.hpp"

#include <cmath>

namespace pcam {

const char* branch_tag(RolloutBranch b) { return b == RolloutBranch::SourceSelf ? "ss" : "st"; }

Matrix RolloutMap::grid() const {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(per_patch.size()))));
  require(side * side == per_patch.size(), "RolloutMap::grid: patch count is not a square");
  return Matrix(side, side, per_patch);
}

Matrix patch_rows(const Matrix& tokens) {
  require(tokens.rows() >= 2, "patch_rows: need [CLS] plus at least one patch");
  Matrix out(tokens.rows() - 1, tokens.cols());
  for (std::size_t r = 1; r < tokens.rows(); ++r)
    for (std::size_t c = 0; c < tokens.cols(); ++c) out(r - 1, c) = tokens(r, c);
  return out;
}

Matrix rollout_term(const Matrix& zs, const Matrix& zt) {
  require(zs.same_shape(zt) && zs.rows() >= 1, "rollout_term: embeddings must share shape");
  Matrix s = matmul_nt(zs, zt);
  s *= 1.0 / std::sqrt(static_cast<double>(zs.cols()));
  return softmax_rows(s);
}

RolloutMap rollout_step(const RolloutMap* prev, const Matrix& zs, const Matrix& zt, int layer, RolloutBranch branch) {
  require(layer >= 1, "rollout_step: layers are numbered from 1");
  if (layer == 1) require(prev == nullptr, "rollout_step: layer 1 takes no previous map");
  else require(prev != nullptr && prev->layer == layer - 1, "rollout_step: previous map must be layer - 1");
  RolloutMap m;
  m.layer = layer;
  m.branch = branch;
  m.pairwise = rollout_term(zs, zt);
  if (prev) {
    require(prev->pairwise.same_shape(m.pairwise), "rollout_step: patch count changed between layers");
    m.pairwise += prev->pairwise;
  }
  m.per_patch.assign(m.pairwise.cols(), 0.0);
  for (std::size_t i = 0; i < m.pairwise.rows(); ++i)
    for (std::size_t j = 0; j < m.pairwise.cols(); ++j) m.per_patch[j] += m.pairwise(i, j);
  return m;
}

RolloutMap normalize(const RolloutMap& map) {
  require(map.layer >= 1, "normalize: layer must be >= 1");
  RolloutMap out = map;
  const double inv = 1.0 / map.layer;
  out.pairwise *= inv;
  for (double& v : out.per_patch) v *= inv;
  return out;
}

std::vector<RolloutMap> rollout_stack(const std::vector<Matrix>& zs, const std::vector<Matrix>& zt,
                                      RolloutBranch branch) {
  require(zs.size() == zt.size() && !zs.empty(), "rollout_stack: layer lists must match and be non-empty");
  std::vector<RolloutMap> maps;
  maps.reserve(zs.size());
  for (std::size_t l = 0; l < zs.size(); ++l)
    maps.push_back(rollout_step(l == 0 ? nullptr : &maps.back(), zs[l], zt[l], static_cast<int>(l) + 1, branch));
  return maps;
}

std::vector<double> mass_normalized(std::span<const double> per_patch) {
  double total = 0.0;
  for (double v : per_patch) total += v;
  std::vector<double> out(per_patch.begin(), per_patch.end());
  if (total > 0.0)
    for (double& v : out) v /= total;
  return out;
}

std::pair<double, double> foreground_score_gap(std::span<const double> per_patch, const std::vector<bool>& fg,
                                               const std::vector<bool>& bg) {
  require(fg.size() == per_patch.size() && bg.size() == per_patch.size(), "foreground_score_gap: mask size mismatch");
  double sf = 0, sb = 0;
  int nf = 0, nb = 0;
  for (std::size_t j = 0; j < per_patch.size(); ++j) {
    require(!(fg[j] && bg[j]), "foreground_score_gap: masks overlap");
    if (fg[j]) {
      sf += per_patch[j];
      ++nf;
    } else if (bg[j]) {
      sb += per_patch[j];
      ++nb;
    }
  }
  require(nf > 0 && nb > 0, "foreground_score_gap: empty mask");
  return {sf / nf, sb / nb};
}

RolloutGradient rollout_backward(const std::vector<Matrix>& zs, const std::vector<Matrix>& zt,
                                 const std::vector<std::vector<double>>& d_per_patch, bool normalized) {
  const std::size_t L = zs.size();
  require(zt.size() == L && d_per_patch.size() == L, "rollout_backward: layer count mismatch");
  RolloutGradient g;
  // the softmax term of layer k feeds every map l >= k
  std::vector<double> acc(zs.front().rows(), 0.0);
  std::vector<std::vector<double>> term_grad(L);
  for (std::size_t l = L; l-- > 0;) {
    const double c = normalized ? 1.0 / static_cast<double>(l + 1) : 1.0;
    require(d_per_patch[l].size() == acc.size(), "rollout_backward: gradient length mismatch");
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += c * d_per_patch[l][j];
    term_grad[l] = acc;
  }
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix P = rollout_term(zs[l], zt[l]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(zs[l].cols()));
    const auto& G = term_grad[l];
    Matrix dS(P.rows(), P.cols());
    for (std::size_t i = 0; i < P.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < P.cols(); ++j) dot += P(i, j) * G[j];
      for (std::size_t j = 0; j < P.cols(); ++j) dS(i, j) = P(i, j) * (G[j] - dot) * scale;
    }
    g.d_source.push_back(matmul(dS, zt[l]));
    g.d_target.push_back(matmul_tn(dS, zs[l]));
  }
  return g;
}

}  // namespace pcam
