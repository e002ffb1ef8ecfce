#include "pcam/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pcam {

namespace {

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& what, const std::string& value) {
  throw ConfigError("expected " + what + ", got '" + value + "'");
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) bad_value(what, s);
  return v;
}

int parse_int(const std::string& s) { return parse_number<int>(s, "an integer"); }
std::uint64_t parse_u64(const std::string& s) { return parse_number<std::uint64_t>(s, "a non-negative integer"); }
double parse_double(const std::string& s) { return parse_number<double>(s, "a number"); }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value("true or false", s);
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F parse) {
  std::vector<T> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(trim(item)));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

template <class E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> names;

  std::string name(E e) const {
    for (const auto& [v, n] : names)
      if (v == e) return n;
    return "?";
  }
  E parse(const std::string& s) const {
    std::string choices;
    for (const auto& [v, n] : names) {
      if (n == s) return v;
      choices += (choices.empty() ? "" : "|") + n;
    }
    bad_value(choices, s);
  }
};

const EnumNames<PfSign> kSign{{{PfSign::Pulling, "pulling"}, {PfSign::Literal, "literal"}}};
const EnumNames<CenterForm> kCenter{{{CenterForm::Literal, "literal"}, {CenterForm::Normalized, "normalized"}}};
const EnumNames<RefineTarget> kRefine{
    {{RefineTarget::Teacher, "teacher"}, {RefineTarget::Student, "student"}, {RefineTarget::All, "all"}}};
const EnumNames<DistillMode> kDistill{{{DistillMode::StudentOuter, "student_outer"}, {DistillMode::Conventional, "conventional"}}};

template <class M>
Entry int_entry(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_int(v); }};
}

template <class M>
Entry double_entry(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_double(v); }};
}

template <class M>
Entry bool_entry(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); }};
}

template <class E, class M>
Entry enum_entry(std::string key, const EnumNames<E>& names, M member) {
  return {key, [&names, member](const RunConfig& c) { return names.name(member(const_cast<RunConfig&>(c))); },
          [&names, member](RunConfig& c, const std::string& v) { member(c) = names.parse(v); }};
}

template <class M>
Entry double_list_entry(std::string key, M member) {
  return {key,
          [member](const RunConfig& c) {
            return join(member(const_cast<RunConfig&>(c)), [](double d) { return format_double(d); });
          },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_list<double>(v, parse_double); }};
}

void add_domain_entries(std::vector<Entry>& out, const std::string& prefix, DomainSpec ExperimentConfig::*spec) {
  auto d = [spec](RunConfig& c) -> DomainSpec& { return c.experiment.*spec; };
  out.push_back(int_entry(prefix + "sample_count", [d](RunConfig& c) -> int& { return d(c).sample_count; }));
  out.push_back(double_entry(prefix + "ratio_mean", [d](RunConfig& c) -> double& { return d(c).ratio_mean; }));
  out.push_back(double_entry(prefix + "ratio_jitter", [d](RunConfig& c) -> double& { return d(c).ratio_jitter; }));
  out.push_back(double_list_entry(prefix + "class_ratio_means",
                                  [d](RunConfig& c) -> std::vector<double>& { return d(c).class_ratio_means; }));
  out.push_back(int_entry(prefix + "min_object_side", [d](RunConfig& c) -> int& { return d(c).min_object_side; }));
  out.push_back(double_entry(prefix + "noise_level", [d](RunConfig& c) -> double& { return d(c).noise_level; }));
  out.push_back(double_entry(prefix + "clutter_density", [d](RunConfig& c) -> double& { return d(c).clutter_density; }));
  out.push_back(
      double_entry(prefix + "clutter_intensity", [d](RunConfig& c) -> double& { return d(c).clutter_intensity; }));
  out.push_back(
      double_entry(prefix + "foreground_intensity", [d](RunConfig& c) -> double& { return d(c).foreground_intensity; }));
}

std::vector<Entry> build_entries() {
  std::vector<Entry> e;
  auto m = [](RunConfig& c) -> ModelConfig& { return c.experiment.model; };
  auto t = [](RunConfig& c) -> TrainConfig& { return c.experiment.train; };

  e.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.experiment.seed); },
               [](RunConfig& c, const std::string& v) { c.experiment.seed = parse_u64(v); }});

  e.push_back(int_entry("model.image_side", [m](RunConfig& c) -> int& { return m(c).image_side; }));
  e.push_back(int_entry("model.channels", [m](RunConfig& c) -> int& { return m(c).channels; }));
  e.push_back(int_entry("model.patch_side", [m](RunConfig& c) -> int& { return m(c).patch_side; }));
  e.push_back(int_entry("model.embed_dim", [m](RunConfig& c) -> int& { return m(c).embed_dim; }));
  e.push_back(int_entry("model.heads", [m](RunConfig& c) -> int& { return m(c).heads; }));
  e.push_back(int_entry("model.layers", [m](RunConfig& c) -> int& { return m(c).layers; }));
  e.push_back(int_entry("model.classes", [m](RunConfig& c) -> int& { return m(c).classes; }));
  e.push_back(int_entry("model.mlp_ratio", [m](RunConfig& c) -> int& { return m(c).mlp_ratio; }));
  e.push_back(double_entry("model.ln_eps", [m](RunConfig& c) -> double& { return m(c).ln_eps; }));

  add_domain_entries(e, "source.", &ExperimentConfig::source);
  add_domain_entries(e, "target.", &ExperimentConfig::target);

  e.push_back(int_entry("train.pretrain_epochs", [t](RunConfig& c) -> int& { return t(c).pretrain_epochs; }));
  e.push_back(int_entry("train.epochs", [t](RunConfig& c) -> int& { return t(c).epochs; }));
  e.push_back(int_entry("train.warmup_epochs", [t](RunConfig& c) -> int& { return t(c).warmup_epochs; }));
  e.push_back(int_entry("train.batch_size", [t](RunConfig& c) -> int& { return t(c).batch_size; }));
  e.push_back(double_entry("train.pretrain_lr", [t](RunConfig& c) -> double& { return t(c).pretrain_lr; }));
  e.push_back(double_entry("train.lr", [t](RunConfig& c) -> double& { return t(c).lr; }));
  e.push_back(double_entry("train.momentum", [t](RunConfig& c) -> double& { return t(c).momentum; }));
  e.push_back(double_entry("train.weight_decay", [t](RunConfig& c) -> double& { return t(c).weight_decay; }));
  e.push_back(double_entry("train.beta", [t](RunConfig& c) -> double& { return t(c).beta; }));
  e.push_back(double_entry("train.theta", [t](RunConfig& c) -> double& { return t(c).theta; }));
  e.push_back(double_entry("train.tau", [t](RunConfig& c) -> double& { return t(c).tau; }));
  e.push_back(double_entry("train.w_cls_source", [t](RunConfig& c) -> double& { return t(c).weights.cls_source; }));
  e.push_back(double_entry("train.w_distill", [t](RunConfig& c) -> double& { return t(c).weights.distill; }));
  e.push_back(double_entry("train.w_cls_target", [t](RunConfig& c) -> double& { return t(c).weights.cls_target; }));
  e.push_back(double_entry("train.w_pf", [t](RunConfig& c) -> double& { return t(c).weights.pf; }));
  e.push_back(bool_entry("train.refinement", [t](RunConfig& c) -> bool& { return t(c).refinement; }));
  e.push_back(int_entry("train.refine_start_epoch", [t](RunConfig& c) -> int& { return t(c).refine_start_epoch; }));
  e.push_back(int_entry("train.box_layer", [t](RunConfig& c) -> int& { return t(c).box_layer; }));
  e.push_back(int_entry("train.reentry_layer", [t](RunConfig& c) -> int& { return t(c).reentry_layer; }));
  e.push_back(enum_entry("train.refine_target", kRefine, [t](RunConfig& c) -> RefineTarget& { return t(c).refine_target; }));
  e.push_back(bool_entry("train.refine_source", [t](RunConfig& c) -> bool& { return t(c).refine_source; }));
  e.push_back(enum_entry("train.pf_sign", kSign, [t](RunConfig& c) -> PfSign& { return t(c).pf.sign; }));
  e.push_back(enum_entry("train.pf_center", kCenter, [t](RunConfig& c) -> CenterForm& { return t(c).pf.center; }));
  e.push_back(bool_entry("train.pf_center_gradient", [t](RunConfig& c) -> bool& { return t(c).pf.center_gradient; }));
  e.push_back(bool_entry("train.pf_normalized_maps", [t](RunConfig& c) -> bool& { return t(c).pf_normalized_maps; }));
  e.push_back(
      bool_entry("train.teacher_stop_gradient", [t](RunConfig& c) -> bool& { return t(c).teacher_stop_gradient; }));
  e.push_back(enum_entry("train.distill_mode", kDistill, [t](RunConfig& c) -> DistillMode& { return t(c).distill_mode; }));
  e.push_back(double_entry("train.label_gamma", [t](RunConfig& c) -> double& { return t(c).label_gamma; }));

  e.push_back({"run.seeds",
               [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
               [](RunConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>(v, parse_u64); }});
  e.push_back(double_list_entry("sweep.betas", [](RunConfig& c) -> std::vector<double>& { return c.betas; }));
  e.push_back(double_list_entry("noise.gammas", [](RunConfig& c) -> std::vector<double>& { return c.gammas; }));
  e.push_back(double_list_entry("ablate.pf_weights", [](RunConfig& c) -> std::vector<double>& { return c.pf_weights; }));
  e.push_back({"checkpoint", [](const RunConfig& c) { return c.checkpoint; },
               [](RunConfig& c, const std::string& v) { c.checkpoint = v; }});
  e.push_back(int_entry("rollout.source_index", [](RunConfig& c) -> int& { return c.rollout_source; }));
  e.push_back(int_entry("rollout.target_index", [](RunConfig& c) -> int& { return c.rollout_target; }));
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> all = build_entries();
  return all;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = find_entry(key);
  try {
    e.set(cfg, value);
  } catch (const ConfigError& err) {
    throw ConfigError(key + ": " + err.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(n) + ": " + err.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    apply_config_text(cfg, ss.str());
  } catch (const ConfigError& err) {
    throw ConfigError(path + ": " + err.what());
  }
}

std::string get_setting(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

std::string config_snapshot(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

void validate_config(const RunConfig& cfg) {
  try {
    cfg.experiment.validate();
    for (double b : cfg.betas) require(b >= 0.0 && b <= 1.0, "sweep.betas entries must lie in [0, 1]");
    for (double g : cfg.gammas) require(g >= 0.0 && g <= 1.0, "noise.gammas entries must lie in [0, 1]");
    for (double w : cfg.pf_weights) require(w >= 0.0, "ablate.pf_weights entries must be non-negative");
    require(!cfg.seeds.empty(), "run.seeds must not be empty");
    require(cfg.rollout_source >= 0 && cfg.rollout_target >= 0, "rollout indices must be non-negative");
  } catch (const ContractError& err) {
    throw ConfigError(err.what());
  }
}

}  // namespace pcam
