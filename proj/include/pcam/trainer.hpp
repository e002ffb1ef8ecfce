#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "pcam/objective.hpp"
#include "pcam/pairing.hpp"
#include "pcam/pf_loss.hpp"
#include "pcam/refinement.hpp"
#include "pcam/rollout.hpp"
#include "pcam/vit.hpp"

namespace pcam {

/// Which branches take their [CLS] feature from the refined second pass.
enum class RefineTarget {
  Teacher,  // cross-branch teacher only
  Student,  // target student only (distillation student and pseudo-label loss)
  All,
};

struct TrainConfig {
  int pretrain_epochs = 10;
  int epochs = 40;
  int warmup_epochs = 10;
  int batch_size = 16;
  /// Source-only phase learning rate.
  double pretrain_lr = 1e-2;
  double lr = 3e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double beta = 0.05;
  double theta = 0.5;
  double tau = 2.0;
  LossWeights weights;

  bool refinement = true;
  /// Refinement runs from max(warmup_epochs, refine_start_epoch) on.
  int refine_start_epoch = 0;
  /// Rollout layer (1..L) that drives the crop; 0 means the last layer.
  int box_layer = 0;
  /// Blocks from this index on are re-run on the cropped grid; -1 means L-1.
  int reentry_layer = -1;
  RefineTarget refine_target = RefineTarget::All;
  /// Also crop and re-run the source branch; the teacher then attends to refined source keys/values.
  bool refine_source = true;

  PfOptions pf;
  /// Feed the PF loss rollout maps divided by their layer count.
  bool pf_normalized_maps = true;
  bool teacher_stop_gradient = true;
  DistillMode distill_mode = DistillMode::StudentOuter;
  /// Fraction of pseudo labels left intact before pairing (1 = no noise).
  double label_gamma = 1.0;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
  bool refinement_active(int epoch) const { return refinement && epoch >= std::max(warmup_epochs, refine_start_epoch); }
};

struct OptimizerState {
  ModelParams velocity;

  static OptimizerState zeros_for(const ModelParams& params) { return {params.zeros_like()}; }
};

struct SgdConfig {
  double lr = 3e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Heavy-ball step: g' = g + wd*w; v = mu*v + g'; w -= lr*v. Returns false and
/// leaves everything untouched when any gradient entry is non-finite.
bool sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, const SgdConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double loss_total = 0.0;
  double accuracy = 0.0;
  double omega = 1.0;
  int kept_pairs = 0;
  int total_pairs = 0;
  double pseudo_accuracy = 0.0;
  double kept_purity = 0.0;
  double unfiltered_purity = 0.0;
  bool refinement_active = false;
  int fallback_boxes = 0;
  int rejected_steps = 0;

  /// "epoch step loss_total acc omega kept_pairs"
  std::string record() const;
};

struct PairStep {
  LossBreakdown loss;
  BoxResult box;
  double omega = 1.0;
  bool refined = false;
};

int infer(const VitModel& model, const ImageSample& image);
double evaluate_accuracy(const VitModel& model, const std::vector<ImageSample>& samples);
std::vector<double> per_class_accuracy(const VitModel& model, const std::vector<ImageSample>& samples);

/// Patch-grid rollout per layer for one source/target pair, raw sums.
std::vector<RolloutMap> pair_rollout(const VitModel& model, const ImageSample& source, const ImageSample& target,
                                     RolloutBranch branch = RolloutBranch::SourceTarget);

class Trainer {
 public:
  Trainer(VitModel model, TrainConfig cfg);

  /// One supervised epoch on source labels only (the source model that seeds
  /// pseudo labels).
  EpochMetrics pretrain_epoch(const std::vector<ImageSample>& source, int epoch);

  /// One adaptation epoch: pseudo labels, pairing and filtering, then SGD over
  /// the kept pairs. target labels are read only for reporting.
  EpochMetrics train_epoch(const std::vector<ImageSample>& source, const std::vector<ImageSample>& target, int epoch);

  /// Loss and gradient contribution of one pair, added into grads.
  PairStep accumulate_pair(const ImageSample& source, const ImageSample& target, int target_label, bool refine,
                           ModelParams& grads) const;

  const VitModel& model() const { return model_; }
  VitModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  long step() const { return step_; }
  /// One record per optimizer step, averaged over the batch.
  const std::vector<std::pair<long, LossBreakdown>>& loss_log() const { return loss_log_; }
  /// All pairs of the most recent adaptation epoch with their filter flags.
  const std::vector<TrainingPair>& last_pairs() const { return last_pairs_; }

 private:
  double epoch_lr(int epoch) const;

  VitModel model_;
  TrainConfig cfg_;
  OptimizerState opt_;
  long step_ = 0;
  std::vector<std::pair<long, LossBreakdown>> loss_log_;
  std::vector<TrainingPair> last_pairs_;
};

}  // namespace pcam
