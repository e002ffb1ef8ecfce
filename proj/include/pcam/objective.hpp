#pragma once

#include <span>
#include <string>
#include <vector>

namespace pcam {

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

/// -sum_k target[k] log softmax(logits)[k]
LossGrad soft_cross_entropy(std::span<const double> logits, std::span<const double> target);

/// Source classification loss against a one-hot label.
LossGrad source_cls_loss(std::span<const double> logits, int label);
LossGrad source_cls_loss(std::span<const double> logits, std::span<const double> one_hot);

/// Cross-entropy against a pseudo label. Labels of inactive classes are
/// rejected when `active` is non-empty.
LossGrad target_pseudo_loss(std::span<const double> logits, int pseudo_label, const std::vector<bool>& active = {});

/// StudentOuter: -sum softmax(student/tau) log softmax(teacher/tau).
/// Conventional: teacher distribution outside the log.
enum class DistillMode { StudentOuter, Conventional };

struct DistillResult {
  double value = 0.0;
  std::vector<double> d_student;
  std::vector<double> d_teacher;
};

DistillResult distill_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double tau,
                           DistillMode mode = DistillMode::StudentOuter);

struct LossWeights {
  double cls_source = 1.0;
  double distill = 1.0;
  double cls_target = 1.0;
  double pf = 1.0;
};

struct LossParts {
  double cls_source = 0.0;
  double distill = 0.0;
  double cls_target = 0.0;
  double pf = 0.0;
};

struct LossBreakdown {
  LossParts parts;
  LossWeights weights;
  double tau = 2.0;
  double total = 0.0;

  /// "step l_cls_s l_dst l_cls_t l_pf total"
  std::string record(long step) const;
};

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights, double tau = 2.0);

}  // namespace pcam
