#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pcam/numerics.hpp"

namespace pcam {

enum class RolloutBranch { SourceSelf, SourceTarget };

const char* branch_tag(RolloutBranch b);

/// Cross-attention rollout accumulated over layers 1..layer.
///
/// pairwise(i, j) is the summed softmax (over target patches j) of the scaled
/// dot product between source patch i and target patch j. per_patch[j] sums
/// pairwise over i. Patch indices exclude the [CLS] token.
struct RolloutMap {
  int layer = 0;
  RolloutBranch branch = RolloutBranch::SourceTarget;
  Matrix pairwise;
  std::vector<double> per_patch;

  std::size_t patch_count() const { return per_patch.size(); }
  /// Row-major side x side reshape of per_patch.
  Matrix grid() const;
};

/// Drops row 0 ([CLS]) of a token matrix.
Matrix patch_rows(const Matrix& tokens);

/// softmax_j(z_s[i] . z_t[j] / sqrt(d)) with d = embedding width.
Matrix rollout_term(const Matrix& source_patches, const Matrix& target_patches);

/// One recursion step. prev must be the layer-1 map (or null for layer 1).
RolloutMap rollout_step(const RolloutMap* prev, const Matrix& source_patches, const Matrix& target_patches, int layer,
                        RolloutBranch branch = RolloutBranch::SourceTarget);

/// pairwise / layer, per_patch / layer.
RolloutMap normalize(const RolloutMap& map);

/// Maps for layers 1..L from per-layer patch embeddings.
std::vector<RolloutMap> rollout_stack(const std::vector<Matrix>& source_patches, const std::vector<Matrix>& target_patches,
                                      RolloutBranch branch = RolloutBranch::SourceTarget);

/// Per-patch map scaled to unit total mass.
std::vector<double> mass_normalized(std::span<const double> per_patch);

/// (mean over foreground patches, mean over background patches).
std::pair<double, double> foreground_score_gap(std::span<const double> per_patch, const std::vector<bool>& fg_mask,
                                               const std::vector<bool>& bg_mask);

struct RolloutGradient {
  std::vector<Matrix> d_source, d_target;  // per layer, N x D
};

/// Backpropagates per-layer gradients of a loss with respect to the per-patch
/// maps (normalized by 1/l when `normalized`) into the patch embeddings.
RolloutGradient rollout_backward(const std::vector<Matrix>& source_patches, const std::vector<Matrix>& target_patches,
                                 const std::vector<std::vector<double>>& d_per_patch, bool normalized);

}  // namespace pcam
