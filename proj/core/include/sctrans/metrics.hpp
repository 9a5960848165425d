#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sctrans/tensor.hpp"

namespace sct {

/// Row-major {0,1} grid.
struct BinaryMask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(Index h, Index w) : height(h), width(w), bits(static_cast<std::size_t>(h * w), 0) {}

  [[nodiscard]] std::uint8_t at(Index y, Index x) const { return bits[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t& at(Index y, Index x) { return bits[static_cast<std::size_t>(y * width + x)]; }
  [[nodiscard]] Index count() const;
  [[nodiscard]] Index area() const { return height * width; }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// 1 where value > threshold (strict).
BinaryMask binarize(const float* values, Index height, Index width, double threshold);
/// Accepts (h, w) or any shape whose last two extents are (h, w) with unit leading extents.
BinaryMask binarize(const Tensor<float>& map, double threshold);

enum class Connectivity { four, eight };

struct TargetComponent {
  Index pixels = 0;
  double centroid_y = 0;
  double centroid_x = 0;
};

/// Components in raster order of their first pixel.
std::vector<TargetComponent> connected_components(const BinaryMask& mask,
                                                  Connectivity connectivity = Connectivity::eight);

/// Per-image target matching outcome.
struct TargetMatch {
  Index matched = 0;       // ground-truth targets with a prediction closer than the radius
  Index targets = 0;       // ground-truth targets
  Index false_pixels = 0;  // pixels of unmatched predicted components
};

/// Greedy matching in ascending centroid distance; a pair counts only when its Euclidean
/// distance is strictly below `radius`. Ties break on ground-truth then prediction index.
/// Squared distances are compared at 40-bit mantissa precision so that rounding noise in
/// the centroids cannot split a tie.
TargetMatch match_targets(const std::vector<TargetComponent>& predicted,
                          const std::vector<TargetComponent>& truth, double radius = 3.0);

/// Everything one image contributes at a fixed threshold.
struct SampleStats {
  Index true_positive = 0;
  Index truth_pixels = 0;
  Index predicted_pixels = 0;
  Index matched = 0;
  Index targets = 0;
  Index false_pixels = 0;
  Index pixels = 0;
};

struct MetricOptions {
  double threshold = 0.5;
  Connectivity connectivity = Connectivity::eight;
  double radius = 3.0;
  bool roc = true;
};

SampleStats evaluate_masks(const BinaryMask& predicted, const BinaryMask& truth, const MetricOptions& opt = {});

inline constexpr int kRocLevels = 256;

struct RocPoint {
  double fa = 0;
  double pd = 0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Trapezoid area under Pd over Fa in [0, cutoff], divided by cutoff. Points are sorted by
/// (Fa, Pd); the curve is interpolated linearly at the cutoff and held flat past the last
/// point. A (0, 0) point is assumed when none has Fa = 0.
double auc_truncated(std::vector<RocPoint> points, double fa_cutoff);

struct MetricReport {
  Index samples = 0;
  double iou = 0;
  double niou = 0;
  double f_measure = 0;
  double precision = 0;
  double recall = 0;
  double pd = 0;
  double fa = 0;
  std::vector<RocPoint> roc;  // sorted by (Fa, Pd); empty when not collected
  double auc_05 = 0;          // Fa cutoff 0.5e-6
  double auc_1 = 0;           // Fa cutoff 1e-6
  std::vector<std::string> warnings;
};

/// Dataset-level accumulation. Entries are keyed by sample index, so merging partial
/// accumulators from any sharding yields bitwise-identical metrics.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(MetricOptions options = {}) : options_(options) {}

  /// Scores a saliency map (values in [0, 1]) against the mask. Throws UsageError if the
  /// index was already added.
  void add(Index sample_index, const Tensor<float>& saliency, const BinaryMask& truth);
  /// Adds a binary prediction; no ROC contribution.
  void add_mask(Index sample_index, const BinaryMask& predicted, const BinaryMask& truth);

  /// Throws UsageError on overlapping sample indices or mismatched options.
  void merge(const EvalAccumulator& other);

  [[nodiscard]] MetricReport report() const;
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const MetricOptions& options() const { return options_; }

 private:
  struct Entry {
    SampleStats stats;
    std::vector<TargetMatch> roc;  // one per ROC threshold level
  };
  void insert(Index sample_index, Entry entry);

  MetricOptions options_;
  std::map<Index, Entry> entries_;
};

/// Machine-readable record: one `name value` pair per line.
void write_metric_record(std::ostream& out, const MetricReport& report);
MetricReport read_metric_record(std::istream& in);
/// Human-readable table.
void write_metric_table(std::ostream& out, const MetricReport& report);
/// Two columns, `fa pd`, one ROC point per line.
void write_roc(std::ostream& out, const std::vector<RocPoint>& roc);

}  // namespace sct
