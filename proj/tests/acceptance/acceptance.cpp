// Acceptance runner: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "../oracles.hpp"
#include "pcam/cli.hpp"
#include "pcam/config.hpp"
#include "pcam/pairing.hpp"
#include "pcam/pf_loss.hpp"
#include "pcam/protocols.hpp"
#include "pcam/refinement.hpp"
#include "pcam/rollout.hpp"

using namespace pcam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::string config_path;
  ExperimentConfig desk;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int workers = 1;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string join(const std::vector<double>& xs, int precision = 4) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? " " : "") + fmt(xs[i], precision);
  return s;
}

Matrix uniform_matrix(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

std::vector<Matrix> random_layers(Rng& rng, int L, std::size_t n, std::size_t d, double scale) {
  std::vector<Matrix> out;
  for (int l = 0; l < L; ++l) out.push_back(uniform_matrix(rng, n, d, -scale, scale));
  return out;
}

double mean(const std::vector<double>& xs) { return mean_var(xs).mean; }

// ---------------------------------------------------------------------------
// 1: rollout boundedness and row mass

Outcome rollout_bounds(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  long violations = 0, entries = 0;
  double worst_row = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(1 + rng.below(64));
    const int L = 1 + static_cast<int>(rng.below(10));
    const auto d = static_cast<std::size_t>(1 + rng.below(8));
    const double scale = rng.uniform(0.1, 4.0);
    const auto maps = rollout_stack(random_layers(rng, L, n, d, scale), random_layers(rng, L, n, d, scale));
    for (int l = 1; l <= L; ++l) {
      const Matrix& p = maps[static_cast<std::size_t>(l - 1)].pairwise;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
          const double v = p(i, j);
          ++entries;
          if (!(v >= 0.0 && v <= static_cast<double>(l))) ++violations;
          row += v;
        }
        worst_row = std::max(worst_row, std::abs(row - l));
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {violations == 0 && worst_row <= 1e-9 && secs < 10.0,
          "1000 stacks, " + std::to_string(entries) + " entries, range violations " + std::to_string(violations) +
              ", max |row sum - l| " + fmt(worst_row, 3) + ", " + fmt(secs, 3) + " s"};
}

// 2: normalized rollout range and shrinking running-mean fluctuation

Outcome rollout_convergence(const Context&) {
  const std::vector<int> ls{1, 2, 4, 8, 16, 32};
  std::vector<double> fluct;
  bool in_range = true;
  for (int l : ls) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(2000 + seed);
      const auto maps = rollout_stack(random_layers(rng, 2 * l, 8, 4, 1.0), random_layers(rng, 2 * l, 8, 4, 1.0));
      for (const auto& m : maps) {
        const RolloutMap nm = normalize(m);
        for (double v : nm.pairwise.values()) in_range = in_range && v >= 0.0 && v <= 1.0;
      }
      total += max_abs_diff(normalize(maps[static_cast<std::size_t>(2 * l - 1)]).pairwise,
                            normalize(maps[static_cast<std::size_t>(l - 1)]).pairwise);
    }
    fluct.push_back(total / 20.0);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < fluct.size(); ++i) decreasing = decreasing && fluct[i] < fluct[i - 1];
  return {in_range && decreasing, std::string("normalized in [0,1]: ") + (in_range ? "yes" : "no") +
                                      "; mean |R(2l)-R(l)| at l=1,2,4,8,16,32: " + join(fluct, 3)};
}

// 3: PF gradient against central differences, and the pulling direction

double center_margin(const Matrix& a, CenterForm form) {
  const CenterOfMass c = center_of_mass(a, form);
  return std::min(std::abs(c.row - std::round(c.row)), std::abs(c.col - std::round(c.col)));
}

Outcome pf_gradient(const Context&) {
  Rng rng(3003);
  const int sides[] = {3, 4, 8};
  double worst = 0.0;
  int maps = 0, skipped = 0, sign_bad = 0, sign_checked = 0;
  while (maps < 100) {
    const int G = sides[maps % 3];
    const Matrix a = uniform_matrix(rng, static_cast<std::size_t>(G), static_cast<std::size_t>(G), 0.0, 1.0);
    // the floored reference cell jumps when the center crosses a grid line
    if (center_margin(a, CenterForm::Literal) < 1e-3) {
      ++skipped;
      continue;
    }
    ++maps;
    for (PfSign sign : {PfSign::Pulling, PfSign::Literal}) {
      PfOptions opt;
      opt.sign = sign;
      const Matrix g = pf_loss_grad({a}, opt)[0];
      const Matrix fd = finite_diff_grad([&](const Matrix& x) { return pf_loss({x}, opt); }, a, 1e-6);
      worst = std::max(worst, frobenius_norm(fd - g) / std::max(frobenius_norm(fd), 1e-12));
    }
    // direct term alone: descent moves every cell toward the reference value
    PfOptions direct;
    direct.center_gradient = false;
    const CenterOfMass c = center_of_mass(a);
    const double ref = a(c.ref_row - 1, c.ref_col - 1);
    const Matrix g = pf_loss_grad({a}, direct)[0];
    for (int m = 0; m < G; ++m)
      for (int n = 0; n < G; ++n) {
        const double diff = a(m, n) - ref;
        if (diff == 0.0) continue;
        ++sign_checked;
        if ((diff > 0) != (g(m, n) > 0)) ++sign_bad;
      }
  }
  return {worst < 1e-5 && sign_bad == 0,
          "100 maps (G 3/4/8, " + std::to_string(skipped) + " redrawn at non-differentiable centers), both signs, " +
              "max rel error " + fmt(worst, 3) + "; pulling direction wrong on " + std::to_string(sign_bad) + "/" +
              std::to_string(sign_checked) + " cells"};
}

// 4: box properties over beta

using BoxKey = std::tuple<int, int, int, int, bool>;
BoxKey key(const BoxResult& b) { return {b.box.col_min, b.box.col_max, b.box.row_min, b.box.row_max, b.fallback}; }

Outcome box_properties(const Context&) {
  Rng rng(4004);
  std::vector<double> betas;
  for (int i = 0; i < 1000; ++i) betas.push_back(i / 1000.0);

  int bound_bad = 0, break_bad = 0, right_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const auto G = static_cast<std::size_t>(3 + rng.below(6));
    Matrix g = uniform_matrix(rng, G, G, 0.0, 1.0);
    if (t % 2 == 0)
      for (double& v : g.values()) v = std::round(v * 8.0) / 8.0;  // few distinct values
    const std::set<double> values(g.values().begin(), g.values().end());
    const auto boxes = beta_sweep(g, betas);
    std::set<BoxKey> distinct;
    for (const auto& b : boxes) distinct.insert(key(b));
    if (distinct.size() > values.size() + 1) ++bound_bad;
    for (std::size_t i = 0; i + 1 < boxes.size(); ++i) {
      if (key(boxes[i]) == key(boxes[i + 1])) continue;
      // a cell leaves the box only when beta reaches its value: needs a grid value in (b_i, b_{i+1}]
      const auto it = values.upper_bound(betas[i]);
      if (it == values.end() || *it > betas[i + 1]) ++break_bad;
    }
    // right-continuity at every grid value
    for (double v : values) {
      if (v >= 1.0) continue;
      if (key(box_identify(g, v)) != key(box_identify(g, v + 1e-12))) ++right_bad;
    }
  }

  int perturb_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const auto G = static_cast<std::size_t>(3 + rng.below(6));
    const double beta = rng.uniform(0.2, 0.8), gap = rng.uniform(0.02, 0.2);
    Matrix g(G, G);
    for (double& v : g.values())
      v = rng.uniform() < 0.5 ? beta - gap - rng.uniform(0.0, 0.2) : beta + gap + rng.uniform(0.0, 0.2);
    Matrix p = g;
    for (double& v : p.values()) v += rng.uniform(-0.99, 0.99) * gap;
    if (key(box_identify(g, beta)) != key(box_identify(p, beta))) ++perturb_bad;
  }

  int planted_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int G = 3 + static_cast<int>(rng.below(6));
    const double beta = rng.uniform(0.2, 0.8);
    Matrix g = uniform_matrix(rng, static_cast<std::size_t>(G), static_cast<std::size_t>(G), 0.0, beta);
    const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(G)));
    const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(G)));
    const int h = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G - r0)));
    const int w = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G - c0)));
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) g(r, c) = rng.uniform(beta + 1e-6, 1.0);
    const BoxResult b = box_identify(g, beta);
    if (b.fallback || !b.box.contains(BoundingBox{c0 + 1, c0 + w, r0 + 1, r0 + h}) || b.box.cells() < h * w)
      ++planted_bad;
  }

  return {bound_bad + break_bad + right_bad + perturb_bad + planted_bad == 0,
          "100 x 1000-point sweeps: bound violations " + std::to_string(bound_bad) + ", off-grid breakpoints " +
              std::to_string(break_bad) + ", right-continuity failures " + std::to_string(right_bad) +
              "; 100 gap perturbations changed " + std::to_string(perturb_bad) + "; 100 planted regions missed " +
              std::to_string(planted_bad)};
}

// 5: oracle equivalence

Outcome oracle_equivalence(const Context&) {
  Rng rng(5005);
  const int n = 60;
  std::map<std::string, double> worst;
  std::map<std::string, int> mismatches;

  for (int t = 0; t < n; ++t) {
    const auto G = static_cast<std::size_t>(2 + rng.below(8));
    const Matrix g = uniform_matrix(rng, G, G, 0.0, 1.0);
    const double beta = rng.uniform();
    if (!(box_identify(g, beta) == oracle::box_scan(g, beta))) ++mismatches["box_identify"];
  }

  for (int t = 0; t < n; ++t) {
    const int G = 2 + static_cast<int>(rng.below(7)), out = 1 + static_cast<int>(rng.below(9));
    const int r0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G)));
    const int c0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G)));
    const BoundingBox box{c0, c0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G - c0 + 1))), r0,
                          r0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(G - r0 + 1)))};
    const std::size_t D = 3;
    const Matrix feats = uniform_matrix(rng, static_cast<std::size_t>(G * G), D, -1.0, 1.0);
    const Matrix got = box_interpolate(feats, G, box, out);
    double err = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      Matrix channel(static_cast<std::size_t>(G), static_cast<std::size_t>(G));
      for (int i = 0; i < G * G; ++i) channel.values()[static_cast<std::size_t>(i)] = feats(static_cast<std::size_t>(i), d);
      const Matrix want = oracle::crop_resample(channel, box, out);
      for (std::size_t i = 0; i < want.size(); ++i) err = std::max(err, std::abs(got(i, d) - want.values()[i]));
    }
    worst["box_interpolate"] = std::max(worst["box_interpolate"], err);
  }

  for (int t = 0; t < n; ++t) {
    const auto ns = static_cast<std::size_t>(1 + rng.below(12)), nt = static_cast<std::size_t>(1 + rng.below(12));
    FeatureBank s, tb;
    s.domain = Domain::Source;
    s.features = uniform_matrix(rng, ns, 5, -1.0, 1.0);
    s.labels.assign(ns, 0);
    tb.domain = Domain::Target;
    tb.features = uniform_matrix(rng, nt, 5, -1.0, 1.0);
    tb.labels.assign(nt, 0);
    tb.delta = Matrix(nt, 2, std::vector<double>(nt * 2, 0.5));
    std::vector<std::vector<double>> table;
    const auto want = oracle::pairs(s.features, tb.features, table);
    std::set<std::tuple<int, int>> got;
    for (const auto& p : build_pairs(s, tb)) {
      got.insert({p.source, p.target});
      worst["build_pairs"] = std::max(worst["build_pairs"], std::abs(p.distance - table[p.source][p.target]));
    }
    if (got != want) ++mismatches["build_pairs"];
  }

  for (int t = 0; t < n; ++t) {
    const auto G = static_cast<std::size_t>(3 + rng.below(6));
    const Matrix a = uniform_matrix(rng, G, G, 0.0, 1.0);
    for (CenterForm form : {CenterForm::Literal, CenterForm::Normalized}) {
      PfOptions opt;
      opt.center = form;
      const double want = static_cast<double>(oracle::pf_spread(a, form == CenterForm::Normalized));
      worst["pf_loss"] = std::max(worst["pf_loss"], std::abs(pf_loss({a}, opt) - want));
    }
  }

  for (int t = 0; t < n; ++t) {
    const auto rows = static_cast<std::size_t>(3 + rng.below(12)), C = static_cast<std::size_t>(2 + rng.below(4));
    FeatureBank b;
    b.domain = Domain::Target;
    b.features = uniform_matrix(rng, rows, 4, -1.0, 1.0);
    b.labels.assign(rows, 0);
    b.delta = Matrix(rows, C);
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<double> z(C);
      for (double& v : z) v = rng.uniform(-2.0, 2.0);
      const auto p = softmax(z);
      for (std::size_t k = 0; k < C; ++k) b.delta(i, k) = p[k];
    }
    const CenterResult got = init_centers(b);
    const oracle::Centers want = oracle::weighted_centers(b.features, b.delta);
    if (got.initial_labels != want.initial_labels || got.labels != want.labels || got.active != want.active)
      ++mismatches["init_centers"];
    worst["init_centers"] = std::max(worst["init_centers"], max_abs_diff(got.centers, want.centers));
  }

  bool ok = true;
  std::string detail = std::to_string(n) + " instances each;";
  for (const char* name : {"box_identify", "box_interpolate", "build_pairs", "pf_loss", "init_centers"}) {
    const bool good = mismatches[name] == 0 && worst[name] <= 1e-10;
    ok = ok && good;
    detail += std::string(" ") + name + " mismatches " + std::to_string(mismatches[name]) + " max err " +
              fmt(worst[name], 2) + ";";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// experiment-scale criteria

// Rotates the per-class target ratio means so each class sees each ratio
// across seeds; keeps class identity from masquerading as a ratio effect.
ExperimentConfig counterbalanced(ExperimentConfig c, std::size_t rotation) {
  auto& r = c.target.class_ratio_means;
  if (!r.empty()) std::rotate(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(rotation % r.size()), r.end());
  return c;
}

Outcome fom_phenomenon(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t S = ctx.seeds.size();
  std::vector<std::vector<double>> gaps(S), accs(S);
  parallel_for(S, ctx.workers, [&](std::size_t s) {
    ExperimentConfig c = counterbalanced(ctx.desk, s);
    c.seed = ctx.seeds[s];
    c = baseline_arm(c);
    const RunResult r = run_experiment(c);
    const auto& means = c.target.class_ratio_means;
    for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k) {
      const double target_ratio = means.empty() ? c.target.ratio_mean : means[k % means.size()];
      gaps[s].push_back(std::abs(c.source.ratio_mean - target_ratio));
      accs[s].push_back(r.per_class_accuracy[k]);
    }
  });
  std::vector<double> all_gaps, all_accs, per_seed;
  for (std::size_t s = 0; s < S; ++s) {
    all_gaps.insert(all_gaps.end(), gaps[s].begin(), gaps[s].end());
    all_accs.insert(all_accs.end(), accs[s].begin(), accs[s].end());
    per_seed.push_back(pearson_correlation(gaps[s], accs[s]));
  }
  const double rho = pearson_correlation(all_gaps, all_accs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {rho < 0.0 && secs < 300.0, "pooled rho(gap, class accuracy) = " + fmt(rho) + " over " +
                                          std::to_string(all_gaps.size()) + " class-seed points; per seed " +
                                          join(per_seed, 3) + "; " + fmt(secs, 3) + " s"};
}

Outcome pcam_benefit(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ArmComparison cmp = compare_arms(ctx.desk, ctx.seeds, ctx.workers);
  std::vector<double> p, b;
  for (std::size_t s = 0; s < ctx.seeds.size(); ++s) {
    p.push_back(cmp.pcam[s].target_accuracy);
    b.push_back(cmp.baseline[s].target_accuracy);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {cmp.wins() >= 4 && secs < 900.0,
          "wins " + std::to_string(cmp.wins()) + "/" + std::to_string(ctx.seeds.size()) + "; pcam " + join(p) +
              " (mean " + fmt(mean(p)) + "); baseline " + join(b) + " (mean " + fmt(mean(b)) + "); " + fmt(secs, 3) +
              " s"};
}

Outcome beta_sensitivity(const Context& ctx) {
  const auto cells = sweep_beta(ctx.desk, ctx.seeds, {0.05, 0.4}, ctx.workers);
  const double lo = mean(cells[0].accuracies()), hi = mean(cells[1].accuracies());
  return {lo >= hi, "mean accuracy at beta 0.05: " + fmt(lo) + " (" + join(cells[0].accuracies()) + "); at 0.4: " +
                        fmt(hi) + " (" + join(cells[1].accuracies()) + ")"};
}

Outcome noise_robustness_check(const Context& ctx) {
  const std::vector<double> gammas{1.0, 0.75, 0.5};
  const NoiseResult r = noise_robustness(ctx.desk, ctx.seeds, gammas, ctx.workers);
  std::vector<double> pm, bm, kept, unfiltered;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    pm.push_back(mean(r.pcam[i].accuracies()));
    bm.push_back(mean(r.baseline[i].accuracies()));
    double k = 0.0, u = 0.0;
    for (const auto& run : r.pcam[i].runs) {
      k += run.kept_purity();
      u += run.unfiltered_purity();
    }
    kept.push_back(k / static_cast<double>(r.pcam[i].runs.size()));
    unfiltered.push_back(u / static_cast<double>(r.pcam[i].runs.size()));
  }
  auto monotone = [](const std::vector<double>& xs) {
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (xs[i] > xs[i - 1]) return false;
    return true;
  };
  bool purity = true;
  for (std::size_t i = 0; i < gammas.size(); ++i) purity = purity && kept[i] >= unfiltered[i];
  const bool ok = pm.back() >= bm.back() && monotone(pm) && monotone(bm) && purity;
  return {ok, "gamma 1/0.75/0.5: pcam means " + join(pm) + "; baseline means " + join(bm) + "; kept purity " +
                  join(kept) + " vs unfiltered " + join(unfiltered)};
}

Outcome progressive_focus(const Context& ctx) {
  const std::size_t S = ctx.seeds.size();
  std::vector<std::vector<double>> traj(S);
  parallel_for(S, ctx.workers, [&](std::size_t s) {
    ExperimentConfig c = ctx.desk;
    c.seed = ctx.seeds[s];
    for (const auto& m : run_experiment(c).metrics) traj[s].push_back(m.omega);
  });
  int good = 0;
  std::string detail;
  for (std::size_t s = 0; s < S; ++s) {
    bool non_increasing = true;
    for (std::size_t e = 1; e < traj[s].size(); ++e) non_increasing = non_increasing && traj[s][e] <= traj[s][e - 1];
    good += non_increasing ? 1 : 0;
    detail += "; seed " + std::to_string(ctx.seeds[s]) + ": " + join(traj[s], 3);
  }
  const double share = static_cast<double>(good) / static_cast<double>(S);
  return {share >= 0.7, std::to_string(good) + "/" + std::to_string(S) + " runs with non-increasing omega" + detail};
}

Outcome determinism(const Context& ctx) {
  const fs::path root = fs::temp_directory_path() / "pcam_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> files;
  std::map<std::string, std::string> first;
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    std::ostringstream quiet;
    auto* saved = std::cout.rdbuf(quiet.rdbuf());
    const int code = run_cli({"train", "--config", ctx.config_path, "--out", out.string(), "--seed", "3"});
    std::cout.rdbuf(saved);
    if (code != kExitOk) return {false, "train exited with " + std::to_string(code)};
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (!e.is_regular_file()) continue;
      std::ifstream is(e.path(), std::ios::binary);
      std::ostringstream os;
      os << is.rdbuf();
      const std::string rel = fs::relative(e.path(), out).string();
      if (std::string(run) == "a") first[rel] = os.str();
      else ok = ok && first.count(rel) && first[rel] == os.str();
    }
  }
  const std::size_t count = first.size();
  fs::remove_all(root);
  return {ok && count > 0, std::to_string(count) + " output files compared byte for byte"};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  Context ctx;
  ctx.config_path = PCAM_DESK_CONFIG;
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run (default: all)");
  app.add_option("--config", ctx.config_path, "experiment config for the training criteria")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  RunConfig rc;
  try {
    apply_config_file(rc, ctx.config_path);
    validate_config(rc);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  ctx.desk = rc.experiment;
  ctx.workers = worker_count();

  const std::vector<Criterion> criteria{
      {1, "rollout boundedness", rollout_bounds},
      {2, "normalized rollout convergence", rollout_convergence},
      {3, "pf gradient and pulling direction", pf_gradient},
      {4, "box piecewise constancy, perturbation invariance, planted containment", box_properties},
      {5, "oracle equivalence", oracle_equivalence},
      {6, "foreground mismatch hurts the baseline", fom_phenomenon},
      {7, "pcam beats the baseline", pcam_benefit},
      {8, "beta sensitivity", beta_sensitivity},
      {9, "noise robustness", noise_robustness_check},
      {10, "progressive focus", progressive_focus},
      {11, "determinism", determinism},
  };
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << " [" << c.title << "] " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
