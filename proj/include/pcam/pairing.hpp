#pragma once

#include <string>
#include <vector>

#include "pcam/numerics.hpp"
#include "pcam/synth_data.hpp"

namespace pcam {

/// Per-sample features of one domain. `labels` are ground truth for the
/// source and pseudo labels for the target; `delta` holds classifier
/// distributions (n x C), required for target banks.
struct FeatureBank {
  Domain domain = Domain::Source;
  Matrix features;
  std::vector<int> labels;
  Matrix delta;

  std::size_t size() const { return features.rows(); }
  void validate() const;
};

/// Rows scaled to unit L2 norm (zero rows stay zero).
Matrix l2_normalized(const Matrix& features);

struct TrainingPair {
  int source = 0;
  int target = 0;
  double distance = 0.0;
  bool agree = false;
  bool similar = false;
  bool kept = false;

  double similarity() const { return 1.0 / (1.0 + distance); }
  /// "src_idx tgt_idx dist agree sim kept"
  std::string record() const;
};

/// Nearest source for every target, then nearest target for every source not
/// already paired that way. Euclidean distance on L2-normalized features,
/// ties to the lowest index.
std::vector<TrainingPair> build_pairs(const FeatureBank& source, const FeatureBank& target);

struct CenterResult {
  Matrix centers;             // C x D, rows of inactive classes are zero
  std::vector<bool> active;   // class had non-zero weight in the final round
  std::vector<int> initial_labels;
  std::vector<int> labels;    // after one center update and relabel
};

/// Weighted k-means seed from classifier distributions, one hard update round.
CenterResult init_centers(const FeatureBank& target);

/// Marks agree/similar/kept on every pair and returns the kept subset.
std::vector<TrainingPair> filter_pairs(std::vector<TrainingPair>& pairs, const std::vector<int>& target_pseudo_labels,
                                       const std::vector<int>& source_labels, double theta);

/// Replaces exactly round((1 - gamma) * n) labels with a different class.
/// The altered positions are a prefix of one seeded permutation, so lower
/// gamma corrupts a superset of the positions corrupted by higher gamma.
std::vector<int> inject_label_noise(const std::vector<int>& labels, double gamma, int classes, Rng rng);

}  // namespace pcam
