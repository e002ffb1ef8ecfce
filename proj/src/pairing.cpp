#include "pcam/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "pcam/refinement.hpp"

namespace pcam {

void FeatureBank::validate() const {
  require(labels.empty() || labels.size() == features.rows(), "FeatureBank: label count mismatch");
  require(features.all_finite(), "FeatureBank: features must be finite");
  if (!delta.empty()) {
    require(delta.rows() == features.rows(), "FeatureBank: delta row count mismatch");
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      double s = 0.0;
      for (double v : delta.row(i)) s += v;
      require(std::abs(s - 1.0) <= 1e-9, "FeatureBank: delta rows must sum to 1");
    }
  }
}

Matrix l2_normalized(const Matrix& f) {
  Matrix out = f;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double n = 0.0;
    for (double v : out.row(r)) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& v : out.row(r)) v /= n;
  }
  return out;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

int nearest(const Matrix& pool, std::span<const double> query, double& best) {
  int arg = 0;
  best = distance(pool.row(0), query);
  for (std::size_t i = 1; i < pool.rows(); ++i) {
    const double d = distance(pool.row(i), query);
    if (d < best) {
      best = d;
      arg = static_cast<int>(i);
    }
  }
  return arg;
}

}  // namespace

std::string TrainingPair::record() const {
  std::ostringstream os;
  os << source << ' ' << target << ' ' << format_double(distance) << ' ' << (agree ? 1 : 0) << ' '
     << format_double(similarity()) << ' ' << (kept ? 1 : 0);
  return os.str();
}

std::vector<TrainingPair> build_pairs(const FeatureBank& source, const FeatureBank& target) {
  ++instrumentation::counters().build_pairs;
  require(source.size() > 0 && target.size() > 0, "build_pairs: feature banks must be non-empty");
  require(source.features.cols() == target.features.cols(), "build_pairs: feature widths differ");
  const Matrix fs = l2_normalized(source.features);
  const Matrix ft = l2_normalized(target.features);
  std::vector<TrainingPair> pairs;
  std::set<std::pair<int, int>> seen;
  for (std::size_t j = 0; j < ft.rows(); ++j) {
    double d = 0.0;
    const int i = nearest(fs, ft.row(j), d);
    pairs.push_back({i, static_cast<int>(j), d});
    seen.insert({i, static_cast<int>(j)});
  }
  for (std::size_t i = 0; i < fs.rows(); ++i) {
    double d = 0.0;
    const int j = nearest(ft, fs.row(i), d);
    if (seen.insert({static_cast<int>(i), j}).second) pairs.push_back({static_cast<int>(i), j, d});
  }
  return pairs;
}

namespace {

// Weighted means; returns which classes received non-zero weight.
std::vector<bool> weighted_centers(const Matrix& f, const Matrix& weights, Matrix& centers) {
  const std::size_t C = weights.cols(), D = f.cols();
  centers = Matrix(C, D);
  std::vector<double> mass(C, 0.0);
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t k = 0; k < C; ++k) {
      const double w = weights(i, k);
      if (w == 0.0) continue;
      mass[k] += w;
      for (std::size_t d = 0; d < D; ++d) centers(k, d) += w * f(i, d);
    }
  std::vector<bool> active(C, false);
  for (std::size_t k = 0; k < C; ++k) {
    if (mass[k] <= 0.0) continue;
    active[k] = true;
    for (std::size_t d = 0; d < D; ++d) centers(k, d) /= mass[k];
  }
  return active;
}

std::vector<int> assign(const Matrix& f, const Matrix& centers, const std::vector<bool>& active) {
  std::vector<int> labels(f.rows(), 0);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    double best = INFINITY;
    for (std::size_t k = 0; k < centers.rows(); ++k) {
      if (!active[k]) continue;
      const double d = distance(centers.row(k), f.row(i));
      if (d < best) {
        best = d;
        labels[i] = static_cast<int>(k);
      }
    }
  }
  return labels;
}

}  // namespace

CenterResult init_centers(const FeatureBank& target) {
  ++instrumentation::counters().init_centers;
  require(target.size() > 0, "init_centers: empty bank");
  require(target.delta.rows() == target.size() && target.delta.cols() >= 1,
          "init_centers: classifier distribution required for every target sample");
  const Matrix f = l2_normalized(target.features);
  CenterResult r;
  std::vector<bool> active = weighted_centers(f, target.delta, r.centers);
  require(std::any_of(active.begin(), active.end(), [](bool a) { return a; }), "init_centers: no class has mass");
  r.initial_labels = assign(f, r.centers, active);

  Matrix hard(f.rows(), target.delta.cols());
  for (std::size_t i = 0; i < f.rows(); ++i) hard(i, static_cast<std::size_t>(r.initial_labels[i])) = 1.0;
  r.active = weighted_centers(f, hard, r.centers);
  r.labels = assign(f, r.centers, r.active);
  return r;
}

std::vector<TrainingPair> filter_pairs(std::vector<TrainingPair>& pairs, const std::vector<int>& pseudo,
                                       const std::vector<int>& source_labels, double theta) {
  ++instrumentation::counters().filter_pairs;
  require(theta >= 0.0 && theta <= 1.0, "filter_pairs: theta must lie in [0, 1]");
  std::vector<TrainingPair> kept;
  for (auto& p : pairs) {
    require(p.target >= 0 && static_cast<std::size_t>(p.target) < pseudo.size() && p.source >= 0 &&
                static_cast<std::size_t>(p.source) < source_labels.size(),
            "filter_pairs: pair index out of range");
    p.agree = pseudo[static_cast<std::size_t>(p.target)] == source_labels[static_cast<std::size_t>(p.source)];
    p.similar = p.similarity() >= theta;
    p.kept = p.agree && p.similar;
    if (p.kept) kept.push_back(p);
  }
  return kept;
}

std::vector<int> inject_label_noise(const std::vector<int>& labels, double gamma, int classes, Rng rng) {
  require(gamma >= 0.0 && gamma <= 1.0, "inject_label_noise: gamma must lie in [0, 1]");
  const auto n = labels.size();
  const auto count = static_cast<std::size_t>(std::llround((1.0 - gamma) * static_cast<double>(n)));
  std::vector<int> out = labels;
  if (count == 0) return out;
  require(classes >= 2, "inject_label_noise: need at least two classes to alter a label");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  // draw replacements in index order so they do not depend on count
  std::vector<int> replacement(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
    replacement[i] = (labels[i] + shift) % classes;
  }
  for (std::size_t k = 0; k < count; ++k) out[order[k]] = replacement[order[k]];
  return out;
}

}  // namespace pcam
