#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "pcam/synth_data.hpp"
#include "pcam/trainer.hpp"
#include "pcam/vit.hpp"

namespace pcam {

/// Everything one seeded run needs. Domain shapes (classes, side, channels)
/// follow the model config; per-domain seeds are derived from `seed`.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DomainSpec source;
  DomainSpec target;
  std::uint64_t seed = 0;

  ExperimentConfig();
  /// Copies the shared fields into the domain specs and the train seed.
  ExperimentConfig resolved() const;
  void validate() const;
};

/// Same run with refinement off, PF weight 0 and label-agreement-only filtering.
ExperimentConfig baseline_arm(ExperimentConfig cfg);

struct Datasets {
  std::vector<ImageSample> source;
  std::vector<ImageSample> target;
};

Datasets make_data(const ExperimentConfig& cfg);

struct PretrainResult {
  VitModel model;
  std::vector<EpochMetrics> metrics;
};

/// Source-only supervised training from a seeded initialization.
PretrainResult pretrain_source(const ExperimentConfig& cfg, const Datasets& data);

struct RunResult {
  VitModel model;
  std::vector<EpochMetrics> metrics;
  std::vector<std::pair<long, LossBreakdown>> losses;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<TrainingPair> last_pairs;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

RunResult run_adaptation(const ExperimentConfig& cfg, const Datasets& data, const VitModel& pretrained,
                         const EpochCallback& on_epoch = {});

/// make_data, pretrain_source and run_adaptation in sequence.
RunResult run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace pcam
