#include "pcam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pcam/rollout.hpp"

namespace pcam {

void TrainConfig::validate(const ModelConfig& model) const {
  require(epochs >= 0 && pretrain_epochs >= 0, "TrainConfig: epoch counts must be non-negative");
  require(warmup_epochs >= 0 && warmup_epochs <= std::max(epochs, 0), "TrainConfig: warmup must not exceed epochs");
  require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
  require(lr >= 0.0 && pretrain_lr >= 0.0 && momentum >= 0.0 && momentum < 1.0 && weight_decay >= 0.0, "TrainConfig: bad optimizer rates");
  require(beta >= 0.0 && beta <= 1.0, "TrainConfig: beta must lie in [0, 1]");
  require(theta >= 0.0 && theta <= 1.0, "TrainConfig: theta must lie in [0, 1]");
  require(tau > 0.0, "TrainConfig: tau must be positive");
  require(label_gamma >= 0.0 && label_gamma <= 1.0, "TrainConfig: label_gamma must lie in [0, 1]");
  require(box_layer >= 0 && box_layer <= model.layers, "TrainConfig: box_layer out of range");
  require(reentry_layer >= -1 && reentry_layer < model.layers, "TrainConfig: reentry_layer out of range");
  require(model.grid_side() >= 2 || weights.pf == 0.0, "TrainConfig: PF loss needs a grid side >= 2");
}

bool sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, const SgdConfig& cfg) {
  if (!grads.all_finite()) return false;
  std::vector<Matrix*> ps, vs;
  std::vector<const Matrix*> gs;
  params.for_each([&](const std::string&, Matrix& m) { ps.push_back(&m); });
  state.velocity.for_each([&](const std::string&, Matrix& m) { vs.push_back(&m); });
  grads.for_each([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  require(ps.size() == gs.size() && ps.size() == vs.size(), "sgd_step: parameter structure mismatch");
  for (std::size_t t = 0; t < ps.size(); ++t) {
    require(ps[t]->same_shape(*gs[t]) && ps[t]->same_shape(*vs[t]), "sgd_step: tensor shape mismatch");
    auto w = ps[t]->values();
    auto v = vs[t]->values();
    auto g = gs[t]->values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
      w[i] -= cfg.lr * v[i];
    }
  }
  return true;
}

std::string EpochMetrics::record() const {
  std::ostringstream os;
  os << epoch << ' ' << step << ' ' << format_double(loss_total) << ' ' << format_double(accuracy) << ' '
     << format_double(omega) << ' ' << kept_pairs;
  return os.str();
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void head_backward(const VitModel& model, std::span<const double> feature, std::span<const double> d_logits,
                   ModelParams& grads, std::vector<double>& d_feature) {
  const auto& W = model.params.head_w;
  for (std::size_t k = 0; k < d_logits.size(); ++k) {
    const double g = d_logits[k];
    if (g == 0.0) continue;
    grads.head_b(0, k) += g;
    for (std::size_t d = 0; d < feature.size(); ++d) {
      grads.head_w(d, k) += feature[d] * g;
      d_feature[d] += W(d, k) * g;
    }
  }
}

std::vector<Matrix> empty_grads(const StreamTrace& t) { return std::vector<Matrix>(t.states.size()); }

bool any_grad(const std::vector<Matrix>& d) {
  return std::any_of(d.begin(), d.end(), [](const Matrix& m) { return !m.empty(); });
}

Matrix& slot(std::vector<Matrix>& d, std::size_t k, const Matrix& like) {
  if (d[k].empty()) d[k] = Matrix(like.rows(), like.cols());
  return d[k];
}

void add_cls_grad(std::vector<Matrix>& d, const StreamTrace& t, const std::vector<double>& g) {
  Matrix& m = slot(d, d.size() - 1, t.states.back());
  for (std::size_t c = 0; c < g.size(); ++c) m(0, c) += g[c];
}

void add_patch_grad(std::vector<Matrix>& d, const StreamTrace& t, int layer, const Matrix& g_patches) {
  const auto k = static_cast<std::size_t>(layer - t.first_layer);
  Matrix& m = slot(d, k, t.states[k]);
  for (std::size_t r = 0; r < g_patches.rows(); ++r)
    for (std::size_t c = 0; c < g_patches.cols(); ++c) m(r + 1, c) += g_patches(r, c);
}

Matrix refine_tokens(const Matrix& tokens, int grid_side, const BoundingBox& box) {
  const Matrix patches = box_interpolate(patch_rows(tokens), grid_side, box, grid_side);
  Matrix out(tokens.rows(), tokens.cols());
  for (std::size_t c = 0; c < tokens.cols(); ++c) out(0, c) = tokens(0, c);
  for (std::size_t r = 0; r < patches.rows(); ++r)
    for (std::size_t c = 0; c < patches.cols(); ++c) out(r + 1, c) = patches(r, c);
  return out;
}

// Routes the input gradient of a refined pass back through the crop into the
// raw trace at the re-entry layer.
void route_refined_grad(const Matrix& d_input, int grid_side, const BoundingBox& box, const StreamTrace& raw,
                        int layer, std::vector<Matrix>& d_raw) {
  const auto k = static_cast<std::size_t>(layer - raw.first_layer);
  Matrix& m = slot(d_raw, k, raw.states[k]);
  for (std::size_t c = 0; c < d_input.cols(); ++c) m(0, c) += d_input(0, c);
  const Matrix d_patches = box_interpolate_backward(patch_rows(d_input), grid_side, box, grid_side);
  for (std::size_t r = 0; r < d_patches.rows(); ++r)
    for (std::size_t c = 0; c < d_patches.cols(); ++c) m(r + 1, c) += d_patches(r, c);
}

Matrix as_grid(std::span<const double> v, int side, double scale) {
  Matrix g(static_cast<std::size_t>(side), static_cast<std::size_t>(side));
  for (std::size_t i = 0; i < v.size(); ++i) g.values()[i] = v[i] * scale;
  return g;
}

}  // namespace

int infer(const VitModel& model, const ImageSample& image) {
  return static_cast<int>(argmax(classify(model, encode(model, image))));
}

double evaluate_accuracy(const VitModel& model, const std::vector<ImageSample>& samples) {
  require(!samples.empty(), "evaluate_accuracy: no samples");
  int hit = 0;
  for (const auto& s : samples) hit += infer(model, s) == s.label ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<double> per_class_accuracy(const VitModel& model, const std::vector<ImageSample>& samples) {
  const int C = model.config.classes;
  std::vector<double> hit(C, 0.0), cnt(C, 0.0);
  for (const auto& s : samples) {
    cnt[s.label] += 1.0;
    hit[s.label] += infer(model, s) == s.label ? 1.0 : 0.0;
  }
  for (int k = 0; k < C; ++k) hit[k] = cnt[k] > 0 ? hit[k] / cnt[k] : 0.0;
  return hit;
}

std::vector<RolloutMap> pair_rollout(const VitModel& model, const ImageSample& source, const ImageSample& target,
                                     RolloutBranch branch) {
  const StreamTrace s = run_stream(model, patchify(source, model).tokens);
  std::vector<Matrix> zs, zt;
  if (branch == RolloutBranch::SourceSelf) {
    for (std::size_t l = 1; l < s.states.size(); ++l) zs.push_back(patch_rows(s.states[l]));
    return rollout_stack(zs, zs, branch);
  }
  const StreamTrace t = run_stream(model, patchify(target, model).tokens);
  for (std::size_t l = 1; l < s.states.size(); ++l) {
    zs.push_back(patch_rows(s.states[l]));
    zt.push_back(patch_rows(t.states[l]));
  }
  return rollout_stack(zs, zt, branch);
}

Trainer::Trainer(VitModel model, TrainConfig cfg)
    : model_(std::move(model)), cfg_(cfg), opt_(OptimizerState::zeros_for(model_.params)) {
  model_.config.validate();
  cfg_.validate(model_.config);
}

double Trainer::epoch_lr(int epoch) const {
  if (cfg_.warmup_epochs <= 0) return cfg_.lr;
  return cfg_.lr * std::min(1.0, static_cast<double>(epoch + 1) / cfg_.warmup_epochs);
}

EpochMetrics Trainer::pretrain_epoch(const std::vector<ImageSample>& source, int epoch) {
  require(!source.empty(), "pretrain_epoch: no source samples");
  Rng rng = Rng(cfg_.seed, 0x707265).split(static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const SgdConfig sgd{cfg_.pretrain_lr, cfg_.momentum, cfg_.weight_decay};
  EpochMetrics m;
  m.epoch = epoch;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch_size));
    ModelParams grads = model_.params.zeros_like();
    for (std::size_t k = b; k < e; ++k) {
      const ImageSample& s = source[order[k]];
      const Matrix patches = patch_matrix(s, model_.config);
      const StreamTrace tr = run_stream(model_, embed_patches(patches, model_).tokens);
      const auto f = tr.cls_feature();
      const auto ce = source_cls_loss(classify(model_, f), s.label);
      loss_sum += ce.value;
      std::vector<double> df(f.size(), 0.0);
      head_backward(model_, f, ce.grad, grads, df);
      auto d = empty_grads(tr);
      add_cls_grad(d, tr, df);
      backward_embed(model_, patches, backward_stream(model_, tr, std::move(d), grads), grads);
    }
    const double inv = 1.0 / static_cast<double>(e - b);
    grads.for_each([inv](const std::string&, Matrix& g) { g *= inv; });
    if (!sgd_step(model_.params, grads, opt_, sgd)) ++m.rejected_steps;
    ++step_;
  }
  m.step = step_;
  m.loss_total = loss_sum / static_cast<double>(source.size());
  m.accuracy = evaluate_accuracy(model_, source);
  return m;
}

PairStep Trainer::accumulate_pair(const ImageSample& source, const ImageSample& target, int target_label, bool refine,
                                  ModelParams& grads) const {
  const auto& mc = model_.config;
  const int L = mc.layers, G = mc.grid_side();
  const TripleTrace tr = trace_triple(model_, source, target);

  std::vector<Matrix> zs, zt;
  for (int l = 1; l <= L; ++l) {
    zs.push_back(patch_rows(tr.source.state(l)));
    zt.push_back(patch_rows(tr.target.state(l)));
  }
  const auto maps = rollout_stack(zs, zt);

  PairStep out;
  const int box_layer = cfg_.box_layer == 0 ? L : cfg_.box_layer;
  const auto box_grid = as_grid(mass_normalized(maps[static_cast<std::size_t>(box_layer - 1)].per_patch), G, 1.0);
  out.box = box_identify(box_grid, cfg_.beta);
  out.omega = foreground_rate({out.box.box}, mc);
  out.refined = refine && !out.box.fallback && out.box.box != BoundingBox::full(G);

  // refined second pass from the re-entry layer
  const int r = cfg_.reentry_layer < 0 ? L - 1 : cfg_.reentry_layer;
  StreamTrace s_fr, t_fr, st_fr;
  const bool refine_source = out.refined && cfg_.refine_source;
  const bool refine_student = out.refined && cfg_.refine_target != RefineTarget::Teacher;
  const bool refine_teacher = out.refined && cfg_.refine_target != RefineTarget::Student;
  // the teacher's queries come from the refined target stream, so it is built whenever either target branch refines
  const bool refine_target_stream = refine_student || refine_teacher;
  if (refine_source) s_fr = run_stream(model_, refine_tokens(tr.source.state(r), G, out.box.box), r);
  if (refine_target_stream) t_fr = run_stream(model_, refine_tokens(tr.target.state(r), G, out.box.box), r);
  if (refine_teacher)
    st_fr = run_stream(model_, refine_tokens(tr.cross.state(r), G, out.box.box), r, refine_source ? &s_fr : &tr.source,
                       &t_fr);

  const StreamTrace& src_path = refine_source ? s_fr : tr.source;
  const StreamTrace& stu_path = refine_student ? t_fr : tr.target;
  const StreamTrace& tea_path = refine_teacher ? st_fr : tr.cross;

  const auto f_s = src_path.cls_feature();
  const auto f_t = stu_path.cls_feature();
  const auto f_te = tea_path.cls_feature();
  const auto logit_s = classify(model_, f_s);
  const auto logit_t = classify(model_, f_t);
  const auto logit_te = classify(model_, f_te);

  const auto& w = cfg_.weights;
  const auto ce_s = source_cls_loss(logit_s, source.label);
  const auto dst = distill_loss(logit_t, logit_te, cfg_.tau, cfg_.distill_mode);
  const auto ce_t = target_pseudo_loss(logit_t, target_label);

  std::vector<Matrix> pf_maps;
  for (int l = 1; l <= L; ++l) {
    const double scale = cfg_.pf_normalized_maps ? 1.0 / l : 1.0;
    pf_maps.push_back(as_grid(maps[static_cast<std::size_t>(l - 1)].per_patch, G, scale));
  }
  LossParts parts{ce_s.value, dst.value, ce_t.value, 0.0};
  if (w.pf != 0.0) parts.pf = pf_loss(pf_maps, cfg_.pf);
  out.loss = total_loss(parts, w, cfg_.tau);

  // head
  const std::size_t D = f_s.size();
  std::vector<double> d_s(D, 0.0), d_t(D, 0.0), d_te(D, 0.0);
  std::vector<double> g(logit_s.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = w.cls_source * ce_s.grad[k];
  head_backward(model_, f_s, g, grads, d_s);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = w.distill * dst.d_student[k] + w.cls_target * ce_t.grad[k];
  head_backward(model_, f_t, g, grads, d_t);
  const bool teacher_grad = !cfg_.teacher_stop_gradient && w.distill != 0.0;
  if (teacher_grad) {
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = w.distill * dst.d_teacher[k];
    head_backward(model_, f_te, g, grads, d_te);
  }

  auto d_src = empty_grads(tr.source), d_tgt = empty_grads(tr.target), d_crs = empty_grads(tr.cross);
  std::vector<Matrix> d_sfr = refine_source ? empty_grads(s_fr) : std::vector<Matrix>{};
  std::vector<Matrix> d_tfr = refine_target_stream ? empty_grads(t_fr) : std::vector<Matrix>{};
  std::vector<Matrix> d_stfr = refine_teacher ? empty_grads(st_fr) : std::vector<Matrix>{};

  auto& d_src_path = refine_source ? d_sfr : d_src;
  add_cls_grad(d_src_path, src_path, d_s);
  add_cls_grad(refine_student ? d_tfr : d_tgt, stu_path, d_t);
  if (teacher_grad) add_cls_grad(refine_teacher ? d_stfr : d_crs, tea_path, d_te);

  if (w.pf != 0.0) {
    auto pg = pf_loss_grad(pf_maps, cfg_.pf);
    std::vector<std::vector<double>> d_maps;
    for (auto& m : pg) {
      m *= w.pf;
      d_maps.emplace_back(m.values().begin(), m.values().end());
    }
    const auto rg = rollout_backward(zs, zt, d_maps, cfg_.pf_normalized_maps);
    for (int l = 1; l <= L; ++l) {
      add_patch_grad(d_src, tr.source, l, rg.d_source[static_cast<std::size_t>(l - 1)]);
      add_patch_grad(d_tgt, tr.target, l, rg.d_target[static_cast<std::size_t>(l - 1)]);
    }
  }

  // refined passes first: they feed the raw traces at the re-entry layer
  if (refine_teacher && any_grad(d_stfr)) {
    const Matrix d_in = backward_stream(model_, st_fr, std::move(d_stfr), grads, refine_source ? &s_fr : &tr.source,
                                        refine_source ? &d_sfr : &d_src, &t_fr, &d_tfr);
    route_refined_grad(d_in, G, out.box.box, tr.cross, r, d_crs);
  }
  if (refine_target_stream && any_grad(d_tfr)) {
    const Matrix d_in = backward_stream(model_, t_fr, std::move(d_tfr), grads);
    route_refined_grad(d_in, G, out.box.box, tr.target, r, d_tgt);
  }
  if (refine_source && any_grad(d_sfr)) {
    const Matrix d_in = backward_stream(model_, s_fr, std::move(d_sfr), grads);
    route_refined_grad(d_in, G, out.box.box, tr.source, r, d_src);
  }
  if (any_grad(d_crs)) {
    const Matrix d0 = backward_stream(model_, tr.cross, std::move(d_crs), grads, &tr.source, &d_src, &tr.target, &d_tgt);
    backward_embed(model_, tr.target_patches, d0, grads);
  }
  if (any_grad(d_tgt)) {
    const Matrix d0 = backward_stream(model_, tr.target, std::move(d_tgt), grads);
    backward_embed(model_, tr.target_patches, d0, grads);
  }
  if (any_grad(d_src)) {
    const Matrix d0 = backward_stream(model_, tr.source, std::move(d_src), grads);
    backward_embed(model_, tr.source_patches, d0, grads);
  }
  return out;
}

EpochMetrics Trainer::train_epoch(const std::vector<ImageSample>& source, const std::vector<ImageSample>& target,
                                  int epoch) {
  require(!source.empty() && !target.empty(), "train_epoch: both domains need samples");
  const int C = model_.config.classes;
  EpochMetrics m;
  m.epoch = epoch;
  m.refinement_active = cfg_.refinement_active(epoch);

  FeatureBank sb{Domain::Source, Matrix(source.size(), static_cast<std::size_t>(model_.config.embed_dim)), {}, {}};
  FeatureBank tb{Domain::Target, Matrix(target.size(), static_cast<std::size_t>(model_.config.embed_dim)), {},
                 Matrix(target.size(), static_cast<std::size_t>(C))};
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto f = encode(model_, source[i]);
    std::copy(f.begin(), f.end(), sb.features.row(i).begin());
    sb.labels.push_back(source[i].label);
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto f = encode(model_, target[i]);
    std::copy(f.begin(), f.end(), tb.features.row(i).begin());
    const auto p = softmax(classify(model_, f));
    std::copy(p.begin(), p.end(), tb.delta.row(i).begin());
  }
  const CenterResult centers = init_centers(tb);
  std::vector<int> pseudo = centers.labels;
  if (cfg_.label_gamma < 1.0)
    pseudo = inject_label_noise(pseudo, cfg_.label_gamma, C, Rng(cfg_.seed, 0x6e6f6973).split(epoch));
  tb.labels = pseudo;

  int pseudo_hits = 0;
  for (std::size_t i = 0; i < target.size(); ++i) pseudo_hits += pseudo[i] == target[i].label ? 1 : 0;
  m.pseudo_accuracy = static_cast<double>(pseudo_hits) / static_cast<double>(target.size());

  auto pairs = build_pairs(sb, tb);
  auto kept = filter_pairs(pairs, pseudo, sb.labels, cfg_.theta);
  auto purity = [&](const std::vector<TrainingPair>& ps) {
    if (ps.empty()) return 0.0;
    int pure = 0;
    for (const auto& p : ps) pure += target[p.target].label == source[p.source].label ? 1 : 0;
    return static_cast<double>(pure) / static_cast<double>(ps.size());
  };
  m.total_pairs = static_cast<int>(pairs.size());
  m.kept_pairs = static_cast<int>(kept.size());
  m.unfiltered_purity = purity(pairs);
  m.kept_purity = purity(kept);
  last_pairs_ = pairs;

  Rng rng = Rng(cfg_.seed, 0x73687566).split(static_cast<std::uint64_t>(epoch));
  rng.shuffle(kept);
  const SgdConfig sgd{epoch_lr(epoch), cfg_.momentum, cfg_.weight_decay};
  double loss_sum = 0.0, omega_sum = 0.0;
  for (std::size_t b = 0; b < kept.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::size_t e = std::min(kept.size(), b + static_cast<std::size_t>(cfg_.batch_size));
    ModelParams grads = model_.params.zeros_like();
    LossParts parts;
    for (std::size_t k = b; k < e; ++k) {
      const auto& p = kept[k];
      const PairStep st = accumulate_pair(source[p.source], target[p.target], pseudo[p.target], m.refinement_active,
                                          grads);
      parts.cls_source += st.loss.parts.cls_source;
      parts.distill += st.loss.parts.distill;
      parts.cls_target += st.loss.parts.cls_target;
      parts.pf += st.loss.parts.pf;
      loss_sum += st.loss.total;
      omega_sum += st.omega;
      m.fallback_boxes += st.box.fallback ? 1 : 0;
    }
    const double inv = 1.0 / static_cast<double>(e - b);
    grads.for_each([inv](const std::string&, Matrix& g) { g *= inv; });
    if (!sgd_step(model_.params, grads, opt_, sgd)) ++m.rejected_steps;
    ++step_;
    parts.cls_source *= inv;
    parts.distill *= inv;
    parts.cls_target *= inv;
    parts.pf *= inv;
    loss_log_.emplace_back(step_, total_loss(parts, cfg_.weights, cfg_.tau));
  }
  m.step = step_;
  if (!kept.empty()) {
    m.loss_total = loss_sum / static_cast<double>(kept.size());
    m.omega = omega_sum / static_cast<double>(kept.size());
  }
  m.accuracy = evaluate_accuracy(model_, target);
  return m;
}

}  // namespace pcam
