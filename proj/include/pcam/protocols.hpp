#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcam/experiment.hpp"

namespace pcam {

/// Worker cap from PCAM_THREADS (unset or invalid: hardware concurrency, at least 1).
int worker_count();

/// Calls fn(0..n-1) on up to `workers` threads. The first exception is
/// rethrown after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct RunSummary {
  std::uint64_t seed = 0;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<EpochMetrics> metrics;
  std::vector<std::pair<long, LossBreakdown>> losses;

  /// Kept-pair and all-pair purity pooled over every adaptation epoch.
  double kept_purity() const;
  double unfiltered_purity() const;
  std::vector<double> omega_trajectory() const;
};

RunSummary summarize(std::uint64_t seed, const RunResult& r);

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;  // population variance
};
MeanVar mean_var(const std::vector<double>& values);

/// One seeded variant of a base config; `vary` edits the config per cell.
struct GridCell {
  double value = 0.0;
  std::vector<RunSummary> runs;  // one per seed, seed order
  std::vector<double> accuracies() const;
};

/// For every seed: build data, pretrain once, then adapt once per value with
/// vary(cfg, value) applied. Seeds run concurrently.
std::vector<GridCell> run_grid(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                               const std::vector<double>& values,
                               const std::function<void(ExperimentConfig&, double)>& vary, int workers);

std::vector<GridCell> sweep_beta(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<double>& betas, int workers);

struct NoiseResult {
  std::vector<GridCell> pcam;      // per gamma
  std::vector<GridCell> baseline;  // per gamma
};
NoiseResult noise_robustness(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                             const std::vector<double>& gammas, int workers);

std::vector<GridCell> ablate_pf(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<double>& weights, int workers);

/// Paired comparison of the config against its baseline arm on each seed.
struct ArmComparison {
  std::vector<RunSummary> pcam;
  std::vector<RunSummary> baseline;
  int wins() const;  // seeds where pcam accuracy > baseline accuracy
};
ArmComparison compare_arms(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds, int workers);

}  // namespace pcam
