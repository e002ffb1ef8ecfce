#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcam/numerics.hpp"

namespace pcam {

enum class Domain { Source = 0, Target = 1 };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);

/// Binary object templates, one per class (class k uses archetype k mod 10).
enum class ShapeKind { Square, Cross, DiagonalBar, Ring, XMark, HorizontalBar, VerticalBar, LShape, TShape, Triangle };
inline constexpr int kShapeKinds = 10;

ShapeKind shape_for_class(int label);
const char* shape_name(ShapeKind s);

/// Whether pixel (y, x) of a side x side template is foreground.
bool template_pixel(ShapeKind shape, int side, int y, int x);
int template_pixel_count(ShapeKind shape, int side);

/// Inclusive pixel rectangle, 0-based.
struct PixelBox {
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct ImageSample {
  int side = 0;
  int channels = 0;
  /// Channel-major: pixels[c * side * side + y * side + x].
  std::vector<double> pixels;
  int label = 0;
  Domain domain = Domain::Source;
  std::vector<std::uint8_t> mask;  // side * side, 1 = foreground
  PixelBox box;
  double ratio = 0.0;
  int object_side = 0;
  bool clamped = false;  // object would have been smaller than one patch

  double pixel(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * side + y) * side + x]; }
  bool foreground(int y, int x) const { return mask[static_cast<std::size_t>(y) * side + x] != 0; }
};

struct DomainSpec {
  Domain domain = Domain::Source;
  int classes = 4;
  int image_side = 16;
  int channels = 1;
  /// Objects are never rendered smaller than this (one patch).
  int min_object_side = 4;
  double ratio_mean = 0.25;
  double ratio_jitter = 0.05;
  /// Optional per-class ratio means; overrides ratio_mean when non-empty.
  std::vector<double> class_ratio_means;
  double noise_level = 0.15;
  double clutter_density = 0.04;
  double clutter_intensity = 0.6;
  double foreground_intensity = 1.0;
  int sample_count = 100;
  std::uint64_t seed = 0;

  double mean_for_class(int label) const;
  void validate() const;
};

std::vector<ImageSample> generate_domain(const DomainSpec& spec);

struct ClassMismatch {
  int label = 0;
  double source_ratio = 0.0;
  double target_ratio = 0.0;
  double gap = 0.0;
  std::optional<double> accuracy;
};

struct MismatchReport {
  std::vector<ClassMismatch> classes;
  /// Pearson correlation of gap vs accuracy; present when accuracies are given
  /// and both series have non-zero variance.
  std::optional<double> gap_accuracy_correlation;
};

MismatchReport mismatch_report(const std::vector<ImageSample>& source, const std::vector<ImageSample>& target,
                               int classes, const std::vector<double>& per_class_accuracy = {});

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);

/// Writes manifest.txt plus per-channel raster and mask files under dir.
void write_dataset(const std::string& dir, const std::string& prefix, const std::vector<ImageSample>& samples);
std::vector<ImageSample> read_dataset(const std::string& dir, const std::string& prefix);

}  // namespace pcam
