#include "sctrans/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "sctrans/errors.hpp"

namespace sct {

Index BinaryMask::count() const {
  return static_cast<Index>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask binarize(const float* values, Index height, Index width, double threshold) {
  BinaryMask m(height, width);
  for (Index i = 0; i < height * width; ++i) {
    m.bits[static_cast<std::size_t>(i)] = static_cast<double>(values[i]) > threshold ? 1 : 0;
  }
  return m;
}

BinaryMask binarize(const Tensor<float>& map, double threshold) {
  const Shape& s = map.shape();
  if (s.rank() < 2 || s.numel() != s[s.rank() - 2] * s[s.rank() - 1]) {
    throw PreconditionError("binarize: expected a single (h, w) map, got " + s.str());
  }
  return binarize(map.data(), s[s.rank() - 2], s[s.rank() - 1], threshold);
}

namespace {

struct DisjointSet {
  std::vector<Index> parent;
  Index make() {
    parent.push_back(static_cast<Index>(parent.size()));
    return parent.back();
  }
  Index find(Index a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      auto& p = parent[static_cast<std::size_t>(a)];
      p = parent[static_cast<std::size_t>(p)];
      a = p;
    }
    return a;
  }
  void unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

}  // namespace

std::vector<TargetComponent> connected_components(const BinaryMask& mask, Connectivity connectivity) {
  const Index h = mask.height, w = mask.width;
  std::vector<Index> label(static_cast<std::size_t>(h * w), -1);
  DisjointSet sets;
  const bool eight = connectivity == Connectivity::eight;
  auto lab = [&](Index y, Index x) { return label[static_cast<std::size_t>(y * w + x)]; };

  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      Index current = -1;
      auto join = [&](Index ny, Index nx) {
        if (ny < 0 || nx < 0 || nx >= w) return;
        const Index l = lab(ny, nx);
        if (l < 0) return;
        if (current < 0) current = l;
        else sets.unite(current, l);
      };
      join(y, x - 1);
      join(y - 1, x);
      if (eight) {
        join(y - 1, x - 1);
        join(y - 1, x + 1);
      }
      if (current < 0) current = sets.make();
      label[static_cast<std::size_t>(y * w + x)] = current;
    }
  }

  // Roots are the smallest label in each set, which is the label of its first raster pixel.
  std::vector<Index> slot(sets.parent.size(), -1);
  std::vector<TargetComponent> out;
  std::vector<std::pair<Index, Index>> sums;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Index l = lab(y, x);
      if (l < 0) continue;
      const auto root = static_cast<std::size_t>(sets.find(l));
      if (slot[root] < 0) {
        slot[root] = static_cast<Index>(out.size());
        out.emplace_back();
        sums.emplace_back(0, 0);
      }
      const auto k = static_cast<std::size_t>(slot[root]);
      ++out[k].pixels;
      sums[k].first += y;
      sums[k].second += x;
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].centroid_y = static_cast<double>(sums[k].first) / static_cast<double>(out[k].pixels);
    out[k].centroid_x = static_cast<double>(sums[k].second) / static_cast<double>(out[k].pixels);
  }
  return out;
}

namespace {

// Centroids are ratios of pixel sums, so equal distances can differ in the last few bits
// of a double. Rounding squared distances to a 40-bit mantissa makes such ties compare
// equal so they fall through to the index tie-break.
double coarse_square(double d2) {
  if (d2 == 0 || !std::isfinite(d2)) return d2;
  int exp = 0;
  const double mant = std::frexp(d2, &exp);
  return std::ldexp(std::round(std::ldexp(mant, 40)), exp - 40);
}

}  // namespace

TargetMatch match_targets(const std::vector<TargetComponent>& predicted,
                          const std::vector<TargetComponent>& truth, double radius) {
  struct Pair {
    double d2;
    std::size_t gt, pred;
  };
  std::vector<Pair> pairs;
  const double r2 = coarse_square(radius * radius);
  for (std::size_t g = 0; g < truth.size(); ++g) {
    for (std::size_t p = 0; p < predicted.size(); ++p) {
      const double dy = truth[g].centroid_y - predicted[p].centroid_y;
      const double dx = truth[g].centroid_x - predicted[p].centroid_x;
      const double d2 = coarse_square(dy * dy + dx * dx);
      if (d2 < r2) pairs.push_back({d2, g, p});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.d2, a.gt, a.pred) < std::tie(b.d2, b.gt, b.pred);
  });
  std::vector<bool> gt_used(truth.size(), false), pred_used(predicted.size(), false);
  TargetMatch m;
  m.targets = static_cast<Index>(truth.size());
  for (const Pair& p : pairs) {
    if (gt_used[p.gt] || pred_used[p.pred]) continue;
    gt_used[p.gt] = pred_used[p.pred] = true;
    ++m.matched;
  }
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    if (!pred_used[p]) m.false_pixels += predicted[p].pixels;
  }
  return m;
}

SampleStats evaluate_masks(const BinaryMask& predicted, const BinaryMask& truth, const MetricOptions& opt) {
  if (predicted.height != truth.height || predicted.width != truth.width) {
    throw PreconditionError("metrics: prediction " + std::to_string(predicted.height) + "x" +
                            std::to_string(predicted.width) + " vs mask " + std::to_string(truth.height) +
                            "x" + std::to_string(truth.width));
  }
  SampleStats s;
  for (std::size_t i = 0; i < truth.bits.size(); ++i) {
    s.true_positive += predicted.bits[i] & truth.bits[i];
    s.truth_pixels += truth.bits[i];
    s.predicted_pixels += predicted.bits[i];
  }
  const TargetMatch m = match_targets(connected_components(predicted, opt.connectivity),
                                      connected_components(truth, opt.connectivity), opt.radius);
  s.matched = m.matched;
  s.targets = m.targets;
  s.false_pixels = m.false_pixels;
  s.pixels = truth.area();
  return s;
}

double auc_truncated(std::vector<RocPoint> points, double fa_cutoff) {
  if (!(fa_cutoff > 0)) throw PreconditionError("auc_truncated: cutoff must be positive");
  std::sort(points.begin(), points.end(),
            [](const RocPoint& a, const RocPoint& b) { return std::tie(a.fa, a.pd) < std::tie(b.fa, b.pd); });
  if (points.empty() || points.front().fa > 0) points.insert(points.begin(), RocPoint{0, 0});
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const RocPoint& a = points[i - 1];
    const RocPoint& b = points[i];
    if (a.fa >= fa_cutoff) break;
    if (b.fa <= fa_cutoff) {
      area += (b.fa - a.fa) * (a.pd + b.pd) / 2;
    } else {
      const double t = (fa_cutoff - a.fa) / (b.fa - a.fa);
      const double pd_cut = a.pd + t * (b.pd - a.pd);
      area += (fa_cutoff - a.fa) * (a.pd + pd_cut) / 2;
    }
  }
  if (points.back().fa < fa_cutoff) area += (fa_cutoff - points.back().fa) * points.back().pd;
  return area / fa_cutoff;
}

void EvalAccumulator::insert(Index sample_index, Entry entry) {
  if (!entries_.emplace(sample_index, std::move(entry)).second) {
    throw UsageError("EvalAccumulator: sample " + std::to_string(sample_index) + " added twice");
  }
}

void EvalAccumulator::add(Index sample_index, const Tensor<float>& saliency, const BinaryMask& truth) {
  Entry e;
  const BinaryMask pred = binarize(saliency, options_.threshold);
  e.stats = evaluate_masks(pred, truth, options_);
  if (options_.roc) {
    const auto gt = connected_components(truth, options_.connectivity);
    e.roc.reserve(kRocLevels);
    for (int k = 0; k < kRocLevels; ++k) {
      const BinaryMask m = binarize(saliency, static_cast<double>(k) / (kRocLevels - 1));
      e.roc.push_back(match_targets(connected_components(m, options_.connectivity), gt, options_.radius));
    }
  }
  insert(sample_index, std::move(e));
}

void EvalAccumulator::add_mask(Index sample_index, const BinaryMask& predicted, const BinaryMask& truth) {
  Entry e;
  e.stats = evaluate_masks(predicted, truth, options_);
  insert(sample_index, std::move(e));
}

void EvalAccumulator::merge(const EvalAccumulator& other) {
  if (other.options_.threshold != options_.threshold || other.options_.connectivity != options_.connectivity ||
      other.options_.radius != options_.radius || other.options_.roc != options_.roc) {
    throw UsageError("EvalAccumulator: cannot merge accumulators with different options");
  }
  for (const auto& [k, v] : other.entries_) {
    if (entries_.contains(k)) {
      throw UsageError("EvalAccumulator: sample " + std::to_string(k) + " present in both partials");
    }
  }
  for (const auto& [k, v] : other.entries_) entries_.emplace(k, v);
}

namespace {

double ratio(Index num, Index den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricReport EvalAccumulator::report() const {
  MetricReport r;
  r.samples = static_cast<Index>(entries_.size());
  if (entries_.empty()) {
    r.warnings.emplace_back("no samples evaluated; all metrics are 0");
    return r;
  }
  SampleStats total;
  double iou_sum = 0;
  Index empty_unions = 0;
  for (const auto& [k, e] : entries_) {
    const SampleStats& s = e.stats;
    total.true_positive += s.true_positive;
    total.truth_pixels += s.truth_pixels;
    total.predicted_pixels += s.predicted_pixels;
    total.matched += s.matched;
    total.targets += s.targets;
    total.false_pixels += s.false_pixels;
    total.pixels += s.pixels;
    const Index uni = s.truth_pixels + s.predicted_pixels - s.true_positive;
    if (uni == 0) ++empty_unions;
    iou_sum += ratio(s.true_positive, uni);
  }
  const Index uni = total.truth_pixels + total.predicted_pixels - total.true_positive;
  if (uni == 0) r.warnings.emplace_back("prediction and ground truth are empty everywhere; IoU defined as 0");
  if (empty_unions > 0) {
    r.warnings.emplace_back(std::to_string(empty_unions) +
                            " sample(s) with empty prediction and ground truth count as IoU 0 in nIoU");
  }
  if (total.predicted_pixels == 0) r.warnings.emplace_back("no predicted pixels; precision defined as 0");
  if (total.truth_pixels == 0) r.warnings.emplace_back("no ground-truth pixels; recall defined as 0");
  if (total.targets == 0) r.warnings.emplace_back("no ground-truth targets; Pd defined as 0");

  r.iou = ratio(total.true_positive, uni);
  r.niou = iou_sum / static_cast<double>(entries_.size());
  r.precision = ratio(total.true_positive, total.predicted_pixels);
  r.recall = ratio(total.true_positive, total.truth_pixels);
  r.f_measure = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.pd = ratio(total.matched, total.targets);
  r.fa = ratio(total.false_pixels, total.pixels);

  const bool have_roc = std::all_of(entries_.begin(), entries_.end(), [](const auto& kv) {
    return kv.second.roc.size() == static_cast<std::size_t>(kRocLevels);
  });
  if (have_roc) {
    for (int k = 0; k < kRocLevels; ++k) {
      Index matched = 0, false_pixels = 0;
      for (const auto& [idx, e] : entries_) {
        matched += e.roc[static_cast<std::size_t>(k)].matched;
        false_pixels += e.roc[static_cast<std::size_t>(k)].false_pixels;
      }
      r.roc.push_back({ratio(false_pixels, total.pixels), ratio(matched, total.targets)});
    }
    std::sort(r.roc.begin(), r.roc.end(),
              [](const RocPoint& a, const RocPoint& b) { return std::tie(a.fa, a.pd) < std::tie(b.fa, b.pd); });
    r.auc_05 = auc_truncated(r.roc, 0.5e-6);
    r.auc_1 = auc_truncated(r.roc, 1e-6);
  }
  return r;
}

namespace {

const std::vector<std::string>& record_keys() {
  static const std::vector<std::string> keys{"samples", "iou",  "niou", "f_measure",  "precision",
                                             "recall",  "pd",   "fa",   "auc_0.5e-6", "auc_1e-6"};
  return keys;
}

}  // namespace

void write_metric_record(std::ostream& out, const MetricReport& r) {
  out << std::setprecision(17);
  out << "samples " << r.samples << '\n'
      << "iou " << r.iou << '\n'
      << "niou " << r.niou << '\n'
      << "f_measure " << r.f_measure << '\n'
      << "precision " << r.precision << '\n'
      << "recall " << r.recall << '\n'
      << "pd " << r.pd << '\n'
      << "fa " << r.fa << '\n'
      << "auc_0.5e-6 " << r.auc_05 << '\n'
      << "auc_1e-6 " << r.auc_1 << '\n';
}

MetricReport read_metric_record(std::istream& in) {
  MetricReport r;
  std::map<std::string, double*> fields{{"iou", &r.iou},           {"niou", &r.niou},     {"f_measure", &r.f_measure},
                                        {"precision", &r.precision}, {"recall", &r.recall}, {"pd", &r.pd},
                                        {"fa", &r.fa},             {"auc_0.5e-6", &r.auc_05}, {"auc_1e-6", &r.auc_1}};
  std::map<std::string, bool> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    std::string value;
    if (!(ls >> name >> value)) throw DataError("metric record: malformed line '" + line + "'");
    if (seen[name]) throw DataError("metric record: duplicate entry '" + name + "'");
    seen[name] = true;
    try {
      std::size_t used = 0;
      if (name == "samples") {
        r.samples = std::stoll(value, &used);
      } else if (auto it = fields.find(name); it != fields.end()) {
        *it->second = std::stod(value, &used);
      } else {
        throw DataError("metric record: unknown entry '" + name + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw DataError("metric record: bad value for '" + name + "': " + value);
    }
  }
  for (const auto& k : record_keys()) {
    if (!seen[k]) throw DataError("metric record: missing entry '" + k + "'");
  }
  return r;
}

void write_metric_table(std::ostream& out, const MetricReport& r) {
  std::ostringstream s;
  s << std::fixed;
  s << "samples           " << r.samples << '\n';
  s << std::setprecision(2);
  s << "IoU (%)           " << 100 * r.iou << '\n';
  s << "nIoU (%)          " << 100 * r.niou << '\n';
  s << "F-measure (%)     " << 100 * r.f_measure << '\n';
  s << "Pd (%)            " << 100 * r.pd << '\n';
  s << "Fa (1e-6)         " << 1e6 * r.fa << '\n';
  if (!r.roc.empty()) {
    s << std::setprecision(4);
    s << "AUC Fa<=0.5e-6    " << r.auc_05 << '\n';
    s << "AUC Fa<=1e-6      " << r.auc_1 << '\n';
  }
  out << s.str();
}

void write_roc(std::ostream& out, const std::vector<RocPoint>& roc) {
  out << std::setprecision(17);
  for (const RocPoint& p : roc) out << p.fa << ' ' << p.pd << '\n';
}

}  // namespace sct
