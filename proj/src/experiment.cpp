#include "pcam/experiment.hpp"

namespace pcam {

ExperimentConfig::ExperimentConfig() {
  source.domain = Domain::Source;
  target.domain = Domain::Target;
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig r = *this;
  for (DomainSpec* d : {&r.source, &r.target}) {
    d->classes = model.classes;
    d->image_side = model.image_side;
    d->channels = model.channels;
    d->seed = seed;
  }
  r.source.domain = Domain::Source;
  r.target.domain = Domain::Target;
  r.train.seed = seed;
  return r;
}

void ExperimentConfig::validate() const {
  const ExperimentConfig r = resolved();
  r.model.validate();
  r.train.validate(r.model);
  r.source.validate();
  r.target.validate();
}

ExperimentConfig baseline_arm(ExperimentConfig cfg) {
  cfg.train.refinement = false;
  cfg.train.weights.pf = 0.0;
  cfg.train.theta = 0.0;
  return cfg;
}

Datasets make_data(const ExperimentConfig& cfg) {
  const ExperimentConfig r = cfg.resolved();
  return {generate_domain(r.source), generate_domain(r.target)};
}

PretrainResult pretrain_source(const ExperimentConfig& cfg, const Datasets& data) {
  const ExperimentConfig r = cfg.resolved();
  r.validate();
  Trainer trainer(VitModel::initialize(r.model, mix64(r.seed ^ 0x696e6974ULL)), r.train);
  PretrainResult out{{}, {}};
  for (int e = 0; e < r.train.pretrain_epochs; ++e) out.metrics.push_back(trainer.pretrain_epoch(data.source, e));
  out.model = trainer.model();
  return out;
}

RunResult run_adaptation(const ExperimentConfig& cfg, const Datasets& data, const VitModel& pretrained,
                         const EpochCallback& on_epoch) {
  const ExperimentConfig r = cfg.resolved();
  r.validate();
  Trainer trainer(pretrained, r.train);
  RunResult out;
  for (int e = 0; e < r.train.epochs; ++e) {
    out.metrics.push_back(trainer.train_epoch(data.source, data.target, e));
    if (on_epoch) on_epoch(out.metrics.back());
  }
  out.model = trainer.model();
  out.losses = trainer.loss_log();
  out.last_pairs = trainer.last_pairs();
  out.source_accuracy = evaluate_accuracy(out.model, data.source);
  out.target_accuracy = evaluate_accuracy(out.model, data.target);
  out.per_class_accuracy = per_class_accuracy(out.model, data.target);
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  const Datasets data = make_data(cfg);
  const PretrainResult pre = pretrain_source(cfg, data);
  return run_adaptation(cfg, data, pre.model, on_epoch);
}

}  // namespace pcam
