#include "pcam/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pcam/config.hpp"
#include "pcam/protocols.hpp"

namespace fs = std::filesystem;

namespace pcam {

namespace {

struct Options {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

RunConfig resolve(const Options& opt) {
  RunConfig cfg;
  if (!opt.config_path.empty()) apply_config_file(cfg, opt.config_path);
  for (const auto& s : opt.overrides) apply_override(cfg, s);
  if (opt.seed) cfg.experiment.seed = *opt.seed;
  validate_config(cfg);
  return cfg;
}

std::string metrics_table(const std::vector<EpochMetrics>& ms) {
  std::string out = "epoch step loss_total acc omega kept_pairs\n";
  for (const auto& m : ms) out += m.record() + "\n";
  return out;
}

std::string losses_table(const std::vector<std::pair<long, LossBreakdown>>& ls) {
  std::string out = "step l_cls_s l_dst l_cls_t l_pf total\n";
  for (const auto& [step, b] : ls) out += b.record(step) + "\n";
  return out;
}

std::string pairs_table(const std::vector<TrainingPair>& ps) {
  std::string out = "src_idx tgt_idx dist agree sim kept\n";
  for (const auto& p : ps) out += p.record() + "\n";
  return out;
}

std::string mismatch_table(const MismatchReport& r) {
  std::ostringstream os;
  os << "label source_ratio target_ratio gap accuracy\n";
  for (const auto& c : r.classes)
    os << c.label << ' ' << format_double(c.source_ratio) << ' ' << format_double(c.target_ratio) << ' '
       << format_double(c.gap) << ' ' << (c.accuracy ? format_double(*c.accuracy) : "nan") << '\n';
  if (r.gap_accuracy_correlation) os << "# correlation " << format_double(*r.gap_accuracy_correlation) << '\n';
  return os.str();
}

void write_run(const fs::path& dir, const RunSummary& r) {
  write_text(dir / "metrics.txt", metrics_table(r.metrics));
  write_text(dir / "losses.txt", losses_table(r.losses));
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string value_dir(const std::string& name, double v) { return name + "_" + format_double(v); }

void write_grid(const fs::path& out, const std::string& name, const std::vector<GridCell>& cells) {
  for (const auto& c : cells)
    for (const auto& r : c.runs) write_run(out / seed_dir(r.seed) / value_dir(name, c.value), r);
}

std::string grid_table(const std::string& column, const std::vector<GridCell>& cells) {
  std::ostringstream os;
  os << column << " mean variance";
  if (!cells.empty())
    for (const auto& r : cells.front().runs) os << " acc_seed" << r.seed;
  os << '\n';
  for (const auto& c : cells) {
    const MeanVar mv = mean_var(c.accuracies());
    os << format_double(c.value) << ' ' << format_double(mv.mean) << ' ' << format_double(mv.variance);
    for (double a : c.accuracies()) os << ' ' << format_double(a);
    os << '\n';
  }
  return os.str();
}

std::string box_record(double beta, const BoxResult& b, const ModelConfig& mc) {
  std::ostringstream os;
  os << format_double(beta) << ' ' << b.box.col_min << ' ' << b.box.col_max << ' ' << b.box.row_min << ' '
     << b.box.row_max << ' ' << format_double(foreground_rate({b.box}, mc));
  return os.str();
}

const ImageSample& pick(const std::vector<ImageSample>& xs, int index, const char* what) {
  if (index < 0 || static_cast<std::size_t>(index) >= xs.size())
    throw ConfigError(std::string(what) + " index " + std::to_string(index) + " out of range");
  return xs[static_cast<std::size_t>(index)];
}

Matrix box_grid(const RolloutMap& map) {
  const auto v = mass_normalized(map.per_patch);
  Matrix g = map.grid();
  std::copy(v.begin(), v.end(), g.values().begin());
  return g;
}

VitModel model_for(const RunConfig& cfg, const Datasets& data) {
  if (!cfg.checkpoint.empty()) {
    VitModel m = load_checkpoint(cfg.checkpoint);
    if (m.config.grid_side() != cfg.experiment.model.grid_side() ||
        m.config.image_side != cfg.experiment.model.image_side || m.config.channels != cfg.experiment.model.channels)
      throw ConfigError("checkpoint geometry differs from the configured model");
    return m;
  }
  return pretrain_source(cfg.experiment, data).model;
}

int cmd_generate(const RunConfig& cfg, const fs::path& out) {
  const Datasets data = make_data(cfg.experiment);
  write_dataset(out.string(), "source", data.source);
  write_dataset(out.string(), "target", data.target);
  write_text(out / "mismatch.txt",
             mismatch_table(mismatch_report(data.source, data.target, cfg.experiment.model.classes)));
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& out) {
  const Datasets data = make_data(cfg.experiment);
  const PretrainResult pre = pretrain_source(cfg.experiment, data);
  write_text(out / "pretrain_metrics.txt", metrics_table(pre.metrics));
  const RunResult r = run_adaptation(cfg.experiment, data, pre.model);
  write_text(out / "metrics.txt", metrics_table(r.metrics));
  write_text(out / "losses.txt", losses_table(r.losses));
  write_text(out / "pairs.txt", pairs_table(r.last_pairs));
  save_checkpoint(r.model, (out / "checkpoint").string());
  write_text(out / "mismatch.txt", mismatch_table(mismatch_report(data.source, data.target,
                                                                  cfg.experiment.model.classes, r.per_class_accuracy)));
  std::ostringstream s;
  s << "source_accuracy " << format_double(r.source_accuracy) << '\n'
    << "target_accuracy " << format_double(r.target_accuracy) << '\n';
  write_text(out / "summary.txt", s.str());
  std::cout << "target_accuracy " << format_double(r.target_accuracy) << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint=DIR");
  const Datasets data = make_data(cfg.experiment);
  const VitModel model = model_for(cfg, data);
  std::ostringstream s;
  s << "split accuracy\n"
    << "source " << format_double(evaluate_accuracy(model, data.source)) << '\n'
    << "target " << format_double(evaluate_accuracy(model, data.target)) << '\n';
  const auto pc = per_class_accuracy(model, data.target);
  for (std::size_t k = 0; k < pc.size(); ++k) s << "target_class" << k << ' ' << format_double(pc[k]) << '\n';
  write_text(out / "eval.txt", s.str());
  std::cout << s.str();
  return kExitOk;
}

int cmd_rollout(const RunConfig& cfg, const fs::path& out) {
  const Datasets data = make_data(cfg.experiment);
  const VitModel model = model_for(cfg, data);
  const ImageSample& src = pick(data.source, cfg.rollout_source, "rollout.source_index");
  const ImageSample& tgt = pick(data.target, cfg.rollout_target, "rollout.target_index");
  for (RolloutBranch b : {RolloutBranch::SourceSelf, RolloutBranch::SourceTarget})
    for (const auto& map : pair_rollout(model, src, tgt, b)) {
      std::ostringstream os;
      write_matrix(os, map.grid());
      write_text(out / "rollout" / ("layer" + std::to_string(map.layer) + "_" + branch_tag(b) + ".txt"), os.str());
    }
  const auto maps = pair_rollout(model, src, tgt);
  const int layer = cfg.experiment.train.box_layer == 0 ? model.config.layers : cfg.experiment.train.box_layer;
  const BoxResult box = box_identify(box_grid(maps[static_cast<std::size_t>(layer - 1)]), cfg.experiment.train.beta);
  write_text(out / "rollout" / "box.txt",
             "beta a_< a_> a_v a_^ omega\n" + box_record(cfg.experiment.train.beta, box, model.config) + "\n");
  return kExitOk;
}

int cmd_sweep_beta(const RunConfig& cfg, const fs::path& out) {
  const auto cells = sweep_beta(cfg.experiment, cfg.seeds, cfg.betas, worker_count());
  write_grid(out, "beta", cells);
  write_text(out / "sweep_beta.txt", grid_table("beta", cells));

  ExperimentConfig probe = cfg.experiment;
  probe.seed = cfg.seeds.front();
  const Datasets data = make_data(probe);
  RunConfig pc = cfg;
  pc.experiment = probe;
  const VitModel model = model_for(pc, data);
  const auto maps = pair_rollout(model, pick(data.source, cfg.rollout_source, "rollout.source_index"),
                                 pick(data.target, cfg.rollout_target, "rollout.target_index"));
  const Matrix grid = box_grid(maps.back());
  std::string boxes = "beta a_< a_> a_v a_^ omega\n";
  const auto results = beta_sweep(grid, cfg.betas);
  for (std::size_t i = 0; i < results.size(); ++i)
    boxes += box_record(cfg.betas[i], results[i], model.config) + "\n";
  write_text(out / "boxes.txt", boxes);
  std::cout << grid_table("beta", cells);
  return kExitOk;
}

int cmd_noise(const RunConfig& cfg, const fs::path& out) {
  const NoiseResult r = noise_robustness(cfg.experiment, cfg.seeds, cfg.gammas, worker_count());
  write_grid(out / "pcam", "gamma", r.pcam);
  write_grid(out / "baseline", "gamma", r.baseline);
  std::ostringstream os;
  os << "gamma arm mean variance kept_purity unfiltered_purity\n";
  for (const auto* arm : {&r.pcam, &r.baseline})
    for (const auto& c : *arm) {
      const MeanVar mv = mean_var(c.accuracies());
      std::vector<double> kp, up;
      for (const auto& run : c.runs) {
        kp.push_back(run.kept_purity());
        up.push_back(run.unfiltered_purity());
      }
      os << format_double(c.value) << ' ' << (arm == &r.pcam ? "pcam" : "baseline") << ' ' << format_double(mv.mean)
         << ' ' << format_double(mv.variance) << ' ' << format_double(mean_var(kp).mean) << ' '
         << format_double(mean_var(up).mean) << '\n';
    }
  write_text(out / "noise.txt", os.str());
  std::cout << os.str();
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  const auto cells = ablate_pf(cfg.experiment, cfg.seeds, cfg.pf_weights, worker_count());
  write_grid(out, "pf_weight", cells);
  write_text(out / "ablate.txt", grid_table("pf_weight", cells));
  std::cout << grid_table("pf_weight", cells);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Attention-guided domain adaptation on synthetic foreground-mismatch data"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--set", opt.overrides, "key=value override, repeatable")->take_all();
  };
  using Command = int (*)(const RunConfig&, const fs::path&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"generate", "write source and target datasets", cmd_generate},
      {"train", "pretrain on source, adapt, write metrics and checkpoint", cmd_train},
      {"eval", "evaluate a checkpoint on freshly generated data", cmd_eval},
      {"rollout", "export per-layer rollout grids for one pair", cmd_rollout},
      {"sweep-beta", "accuracy over a threshold grid", cmd_sweep_beta},
      {"noise-robustness", "both arms over pseudo-label corruption levels", cmd_noise},
      {"ablate", "accuracy over PF loss weights", cmd_ablate},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back());
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    if (subs[i]->count("--seed") > 0) opt.seed = seed;
    try {
      const RunConfig cfg = resolve(opt);
      const fs::path out(opt.out);
      fs::create_directories(out);
      write_text(out / "config.txt", config_snapshot(cfg));
      return std::get<2>(commands[i])(cfg, out);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitConfig;
}

}  // namespace pcam
