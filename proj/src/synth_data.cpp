#include "pcam/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pcam {

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw ContractError("unknown domain '" + s + "'");
}

ShapeKind shape_for_class(int label) {
  require(label >= 0, "shape_for_class: negative label");
  return static_cast<ShapeKind>(label % kShapeKinds);
}

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::DiagonalBar: return "diagonal-bar";
    case ShapeKind::Ring: return "ring";
    case ShapeKind::XMark: return "x-mark";
    case ShapeKind::HorizontalBar: return "horizontal-bar";
    case ShapeKind::VerticalBar: return "vertical-bar";
    case ShapeKind::LShape: return "l-shape";
    case ShapeKind::TShape: return "t-shape";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

namespace {

int thin(int side) { return std::max(1, (side + 2) / 4); }
int third(int side) { return std::max(1, side / 3); }

}  // namespace

bool template_pixel(ShapeKind shape, int s, int y, int x) {
  if (y < 0 || x < 0 || y >= s || x >= s) return false;
  switch (shape) {
    case ShapeKind::Square:
      return true;
    case ShapeKind::Cross: {
      const int t = third(s), lo = (s - t) / 2;
      return (y >= lo && y < lo + t) || (x >= lo && x < lo + t);
    }
    case ShapeKind::DiagonalBar:
      return std::abs(y - x) <= thin(s) - 1;
    case ShapeKind::Ring: {
      const int t = thin(s);
      return y < t || y >= s - t || x < t || x >= s - t;
    }
    case ShapeKind::XMark: {
      const int t = std::max(1, s / 5);
      return std::abs(y - x) <= t - 1 || std::abs(y + x - (s - 1)) <= t - 1;
    }
    case ShapeKind::HorizontalBar: {
      const int t = third(s), lo = (s - t) / 2;
      return y >= lo && y < lo + t;
    }
    case ShapeKind::VerticalBar: {
      const int t = third(s), lo = (s - t) / 2;
      return x >= lo && x < lo + t;
    }
    case ShapeKind::LShape: {
      const int t = third(s);
      return x < t || y >= s - t;
    }
    case ShapeKind::TShape: {
      const int t = third(s), lo = (s - t) / 2;
      return y < t || (x >= lo && x < lo + t);
    }
    case ShapeKind::Triangle:
      return x <= y;
  }
  return false;
}

int template_pixel_count(ShapeKind shape, int side) {
  int n = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) n += template_pixel(shape, side, y, x) ? 1 : 0;
  return n;
}

double DomainSpec::mean_for_class(int label) const {
  if (!class_ratio_means.empty()) return class_ratio_means[static_cast<std::size_t>(label) % class_ratio_means.size()];
  return ratio_mean;
}

void DomainSpec::validate() const {
  require(classes >= 1, "DomainSpec: classes must be >= 1");
  require(image_side >= 1 && channels >= 1, "DomainSpec: image dims must be >= 1");
  require(sample_count >= 1, "DomainSpec: sample_count must be >= 1");
  require(min_object_side >= 1 && min_object_side <= image_side, "DomainSpec: min_object_side out of range");
  require(ratio_mean > 0.0 && ratio_mean <= 1.0, "DomainSpec: ratio mean must lie in (0, 1]");
  require(ratio_jitter >= 0.0, "DomainSpec: negative jitter");
  for (double m : class_ratio_means) require(m > 0.0 && m <= 1.0, "DomainSpec: class ratio mean must lie in (0, 1]");
  require(clutter_density >= 0.0 && clutter_density <= 1.0, "DomainSpec: clutter density must lie in [0, 1]");
}

namespace {

// Pick an object side whose template pixel count brackets the target count,
// dithering between the two neighbours so the expected pixel count is unbiased.
int choose_object_side(ShapeKind shape, const DomainSpec& spec, double target_pixels, Rng& rng, bool& clamped) {
  const int lo_side = spec.min_object_side, hi_side = spec.image_side;
  clamped = false;
  if (target_pixels <= template_pixel_count(shape, lo_side)) {
    clamped = target_pixels < template_pixel_count(shape, lo_side);
    return lo_side;
  }
  for (int s = lo_side; s < hi_side; ++s) {
    const double c_lo = template_pixel_count(shape, s);
    const double c_hi = template_pixel_count(shape, s + 1);
    if (target_pixels <= c_hi) {
      const double p_hi = c_hi > c_lo ? (target_pixels - c_lo) / (c_hi - c_lo) : 0.0;
      return rng.uniform() < p_hi ? s + 1 : s;
    }
  }
  return hi_side;
}

ImageSample render_sample(const DomainSpec& spec, int index) {
  Rng rng = Rng(spec.seed, static_cast<std::uint64_t>(spec.domain) + 1).split(static_cast<std::uint64_t>(index));
  ImageSample img;
  img.side = spec.image_side;
  img.channels = spec.channels;
  img.domain = spec.domain;
  img.label = index % spec.classes;
  const ShapeKind shape = shape_for_class(img.label);
  const int side = spec.image_side;
  const double total = static_cast<double>(side) * side;

  const double mean = spec.mean_for_class(img.label);
  const double ratio = std::clamp(rng.uniform(mean - spec.ratio_jitter, mean + spec.ratio_jitter), 1e-9, 1.0);
  img.object_side = choose_object_side(shape, spec, ratio * total, rng, img.clamped);
  const int s = img.object_side;
  const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - s + 1)));
  const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - s + 1)));

  img.mask.assign(static_cast<std::size_t>(side) * side, 0);
  int count = 0;
  img.box = {side, -1, side, -1};
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      if (!template_pixel(shape, s, y, x)) continue;
      const int py = top + y, px = left + x;
      img.mask[static_cast<std::size_t>(py) * side + px] = 1;
      ++count;
      img.box.row_min = std::min(img.box.row_min, py);
      img.box.row_max = std::max(img.box.row_max, py);
      img.box.col_min = std::min(img.box.col_min, px);
      img.box.col_max = std::max(img.box.col_max, px);
    }
  }
  img.ratio = count / total;

  img.pixels.assign(static_cast<std::size_t>(spec.channels) * side * side, 0.0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const bool fg = img.foreground(y, x);
      const bool dot = !fg && rng.uniform() < spec.clutter_density;
      for (int c = 0; c < spec.channels; ++c) {
        double v = spec.noise_level * rng.uniform();
        if (fg) v += spec.foreground_intensity;
        else if (dot) v += spec.clutter_intensity;
        img.pixels[(static_cast<std::size_t>(c) * side + y) * side + x] = v;
      }
    }
  }
  return img;
}

}  // namespace

std::vector<ImageSample> generate_domain(const DomainSpec& spec) {
  spec.validate();
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(spec.sample_count));
  for (int i = 0; i < spec.sample_count; ++i) out.push_back(render_sample(spec, i));
  return out;
}

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "pearson_correlation: need two equal series of length >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0 && syy > 0, "pearson_correlation: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

MismatchReport mismatch_report(const std::vector<ImageSample>& source, const std::vector<ImageSample>& target,
                               int classes, const std::vector<double>& per_class_accuracy) {
  require(classes >= 1, "mismatch_report: classes must be >= 1");
  require(per_class_accuracy.empty() || per_class_accuracy.size() == static_cast<std::size_t>(classes),
          "mismatch_report: accuracy table size differs from class count");
  auto class_means = [classes](const std::vector<ImageSample>& set) {
    std::vector<double> sum(classes, 0.0), cnt(classes, 0.0);
    for (const auto& s : set) {
      if (s.label < 0 || s.label >= classes) continue;
      sum[s.label] += s.ratio;
      cnt[s.label] += 1.0;
    }
    for (int k = 0; k < classes; ++k) sum[k] = cnt[k] > 0 ? sum[k] / cnt[k] : 0.0;
    return sum;
  };
  const auto ms = class_means(source), mt = class_means(target);
  MismatchReport rep;
  std::vector<double> gaps, accs;
  for (int k = 0; k < classes; ++k) {
    ClassMismatch c{k, ms[k], mt[k], std::abs(ms[k] - mt[k]), std::nullopt};
    if (!per_class_accuracy.empty()) {
      c.accuracy = per_class_accuracy[k];
      gaps.push_back(c.gap);
      accs.push_back(*c.accuracy);
    }
    rep.classes.push_back(c);
  }
  if (gaps.size() >= 2) {
    auto var = [](const std::vector<double>& v) {
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      return *hi > *lo;
    };
    if (var(gaps) && var(accs)) rep.gap_accuracy_correlation = pearson_correlation(gaps, accs);
  }
  return rep;
}

void write_dataset(const std::string& dir, const std::string& prefix, const std::vector<ImageSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / prefix);
  std::ofstream manifest(fs::path(dir) / (prefix + "_manifest.txt"));
  if (!manifest) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
  manifest << "# path label domain ratio row_min row_max col_min col_max\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::ostringstream name;
    name << prefix << '/' << std::string(5 - std::min<std::size_t>(5, std::to_string(i).size()), '0') << i;
    const std::string rel = name.str();
    for (int c = 0; c < s.channels; ++c) {
      Matrix ch(s.side, s.side);
      for (int y = 0; y < s.side; ++y)
        for (int x = 0; x < s.side; ++x) ch(y, x) = s.pixel(c, y, x);
      save_matrix((fs::path(dir) / (rel + "_c" + std::to_string(c) + ".txt")).string(), ch);
    }
    Matrix mask(s.side, s.side);
    for (int y = 0; y < s.side; ++y)
      for (int x = 0; x < s.side; ++x) mask(y, x) = s.foreground(y, x) ? 1.0 : 0.0;
    save_matrix((fs::path(dir) / (rel + "_mask.txt")).string(), mask);
    manifest << rel << ' ' << s.label << ' ' << domain_name(s.domain) << ' ' << format_double(s.ratio) << ' '
             << s.box.row_min << ' ' << s.box.row_max << ' ' << s.box.col_min << ' ' << s.box.col_max << '\n';
  }
}

std::vector<ImageSample> read_dataset(const std::string& dir, const std::string& prefix) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / (prefix + "_manifest.txt"));
  if (!manifest) throw std::runtime_error("read_dataset: missing manifest for " + prefix + " in " + dir);
  std::vector<ImageSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ImageSample s;
    std::string rel, dom;
    ls >> rel >> s.label >> dom >> s.ratio >> s.box.row_min >> s.box.row_max >> s.box.col_min >> s.box.col_max;
    if (!ls) throw std::runtime_error("read_dataset: malformed manifest line: " + line);
    s.domain = parse_domain(dom);
    const Matrix mask = load_matrix((fs::path(dir) / (rel + "_mask.txt")).string());
    s.side = static_cast<int>(mask.rows());
    s.mask.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) s.mask[i] = mask.values()[i] != 0.0 ? 1 : 0;
    for (int c = 0;; ++c) {
      const fs::path p = fs::path(dir) / (rel + "_c" + std::to_string(c) + ".txt");
      if (!fs::exists(p)) break;
      const Matrix ch = load_matrix(p.string());
      s.pixels.insert(s.pixels.end(), ch.values().begin(), ch.values().end());
      s.channels = c + 1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pcam
