#include "pcam/objective.hpp"

#include <cmath>
#include <sstream>

#include "pcam/numerics.hpp"

namespace pcam {

namespace {

std::vector<double> log_softmax(std::span<const double> logits) {
  require(!logits.empty(), "log_softmax: empty logits");
  double mx = logits[0];
  for (double v : logits) {
    require(std::isfinite(v), "log_softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

std::vector<double> scaled(std::span<const double> v, double s) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

}  // namespace

LossGrad soft_cross_entropy(std::span<const double> logits, std::span<const double> target) {
  require(logits.size() == target.size(), "cross_entropy: logits and target differ in length");
  const auto lp = log_softmax(logits);
  LossGrad out;
  out.grad.resize(logits.size());
  double tsum = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    out.value -= target[k] * lp[k];
    tsum += target[k];
  }
  for (std::size_t k = 0; k < lp.size(); ++k) out.grad[k] = tsum * std::exp(lp[k]) - target[k];
  return out;
}

LossGrad source_cls_loss(std::span<const double> logits, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < logits.size(), "cls_loss: label out of range");
  std::vector<double> y(logits.size(), 0.0);
  y[static_cast<std::size_t>(label)] = 1.0;
  return soft_cross_entropy(logits, y);
}

LossGrad source_cls_loss(std::span<const double> logits, std::span<const double> one_hot) {
  return soft_cross_entropy(logits, one_hot);
}

LossGrad target_pseudo_loss(std::span<const double> logits, int pseudo_label, const std::vector<bool>& active) {
  if (!active.empty()) {
    require(pseudo_label >= 0 && static_cast<std::size_t>(pseudo_label) < active.size() &&
                active[static_cast<std::size_t>(pseudo_label)],
            "target_pseudo_loss: pseudo label names an inactive class");
  }
  return source_cls_loss(logits, pseudo_label);
}

DistillResult distill_loss(std::span<const double> student, std::span<const double> teacher, double tau,
                           DistillMode mode) {
  require(tau > 0.0, "distill_loss: temperature must be positive");
  require(student.size() == teacher.size() && !student.empty(), "distill_loss: logit lengths differ");
  const double inv = 1.0 / tau;
  const auto ls = log_softmax(scaled(student, inv));
  const auto lt = log_softmax(scaled(teacher, inv));
  const std::size_t C = ls.size();
  DistillResult r;
  r.d_student.resize(C);
  r.d_teacher.resize(C);
  // outer: distribution outside the log; inner: log-probabilities inside
  const auto& outer_log = mode == DistillMode::StudentOuter ? ls : lt;
  const auto& inner_log = mode == DistillMode::StudentOuter ? lt : ls;
  double cross = 0.0;
  for (std::size_t k = 0; k < C; ++k) cross += std::exp(outer_log[k]) * inner_log[k];
  r.value = -cross;
  std::vector<double> d_outer(C), d_inner(C);
  for (std::size_t k = 0; k < C; ++k) {
    const double p = std::exp(outer_log[k]);
    d_outer[k] = -inv * p * (inner_log[k] - cross);
    d_inner[k] = -inv * (p - std::exp(inner_log[k]));
  }
  if (mode == DistillMode::StudentOuter) {
    r.d_student = d_outer;
    r.d_teacher = d_inner;
  } else {
    r.d_student = d_inner;
    r.d_teacher = d_outer;
  }
  return r;
}

std::string LossBreakdown::record(long step) const {
  std::ostringstream os;
  os << step << ' ' << format_double(parts.cls_source) << ' ' << format_double(parts.distill) << ' '
     << format_double(parts.cls_target) << ' ' << format_double(parts.pf) << ' ' << format_double(total);
  return os.str();
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights, double tau) {
  require(weights.cls_source >= 0 && weights.distill >= 0 && weights.cls_target >= 0 && weights.pf >= 0,
          "total_loss: weights must be non-negative");
  LossBreakdown b;
  b.parts = parts;
  b.weights = weights;
  b.tau = tau;
  b.total = weights.cls_source * parts.cls_source + weights.distill * parts.distill +
            weights.cls_target * parts.cls_target + weights.pf * parts.pf;
  return b;
}

}  // namespace pcam
