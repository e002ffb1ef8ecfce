#include "pcam/protocols.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace pcam {

int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PCAM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = n > 0 ? std::min(n, cap) : cap;
  }
  return std::max(n, 1);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto count = static_cast<std::size_t>(std::max(1, workers));
  if (count == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(count, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

double pooled(const std::vector<EpochMetrics>& ms, bool kept) {
  double pure = 0.0, total = 0.0;
  for (const auto& m : ms) {
    const double n = kept ? m.kept_pairs : m.total_pairs;
    pure += n * (kept ? m.kept_purity : m.unfiltered_purity);
    total += n;
  }
  return total > 0.0 ? pure / total : 0.0;
}

using Variant = std::function<void(ExperimentConfig&)>;

// [variant][seed]; pretraining is shared by all variants of a seed.
std::vector<std::vector<RunSummary>> run_variants(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                                  const std::vector<Variant>& variants, int workers) {
  const std::size_t S = seeds.size(), V = variants.size();
  std::vector<Datasets> data(S);
  std::vector<VitModel> pre(S);
  parallel_for(S, workers, [&](std::size_t s) {
    ExperimentConfig c = base;
    c.seed = seeds[s];
    data[s] = make_data(c);
    pre[s] = pretrain_source(c, data[s]).model;
  });
  std::vector<std::vector<RunSummary>> out(V, std::vector<RunSummary>(S));
  parallel_for(S * V, workers, [&](std::size_t k) {
    const std::size_t s = k / V, v = k % V;
    ExperimentConfig c = base;
    c.seed = seeds[s];
    variants[v](c);
    out[v][s] = summarize(seeds[s], run_adaptation(c, data[s], pre[s]));
  });
  return out;
}

std::vector<GridCell> to_cells(const std::vector<double>& values, std::vector<std::vector<RunSummary>> runs) {
  std::vector<GridCell> cells;
  for (std::size_t i = 0; i < values.size(); ++i) cells.push_back({values[i], std::move(runs[i])});
  return cells;
}

}  // namespace

double RunSummary::kept_purity() const { return pooled(metrics, true); }
double RunSummary::unfiltered_purity() const { return pooled(metrics, false); }

std::vector<double> RunSummary::omega_trajectory() const {
  std::vector<double> out;
  for (const auto& m : metrics) out.push_back(m.omega);
  return out;
}

RunSummary summarize(std::uint64_t seed, const RunResult& r) {
  return {seed, r.source_accuracy, r.target_accuracy, r.per_class_accuracy, r.metrics, r.losses};
}

MeanVar mean_var(const std::vector<double>& values) {
  MeanVar mv;
  if (values.empty()) return mv;
  for (double v : values) mv.mean += v;
  mv.mean /= static_cast<double>(values.size());
  for (double v : values) mv.variance += (v - mv.mean) * (v - mv.mean);
  mv.variance /= static_cast<double>(values.size());
  return mv;
}

std::vector<double> GridCell::accuracies() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.target_accuracy);
  return out;
}

std::vector<GridCell> run_grid(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                               const std::vector<double>& values,
                               const std::function<void(ExperimentConfig&, double)>& vary, int workers) {
  std::vector<Variant> variants;
  for (double v : values) variants.push_back([&vary, v](ExperimentConfig& c) { vary(c, v); });
  return to_cells(values, run_variants(base, seeds, variants, workers));
}

std::vector<GridCell> sweep_beta(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<double>& betas, int workers) {
  return run_grid(base, seeds, betas, [](ExperimentConfig& c, double b) { c.train.beta = b; }, workers);
}

NoiseResult noise_robustness(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                             const std::vector<double>& gammas, int workers) {
  std::vector<Variant> variants;
  for (double g : gammas) variants.push_back([g](ExperimentConfig& c) { c.train.label_gamma = g; });
  for (double g : gammas)
    variants.push_back([g](ExperimentConfig& c) {
      c = baseline_arm(c);
      c.train.label_gamma = g;
    });
  auto runs = run_variants(base, seeds, variants, workers);
  NoiseResult out;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    out.pcam.push_back({gammas[i], std::move(runs[i])});
    out.baseline.push_back({gammas[i], std::move(runs[gammas.size() + i])});
  }
  return out;
}

std::vector<GridCell> ablate_pf(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<double>& weights, int workers) {
  return run_grid(base, seeds, weights, [](ExperimentConfig& c, double w) { c.train.weights.pf = w; }, workers);
}

int ArmComparison::wins() const {
  int w = 0;
  for (std::size_t s = 0; s < pcam.size(); ++s) w += pcam[s].target_accuracy > baseline[s].target_accuracy ? 1 : 0;
  return w;
}

ArmComparison compare_arms(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds, int workers) {
  auto runs = run_variants(base, seeds, {[](ExperimentConfig&) {}, [](ExperimentConfig& c) { c = baseline_arm(c); }},
                           workers);
  return {std::move(runs[0]), std::move(runs[1])};
}

}  // namespace pcam
