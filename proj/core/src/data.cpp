#include "sctrans/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sctrans/errors.hpp"

namespace sct {

namespace fs = std::filesystem;

Sample make_sample(std::string id, const GrayImage& image, const GrayImage& mask) {
  if (image.height != mask.height || image.width != mask.width) {
    throw DataError("sample '" + id + "': image " + std::to_string(image.height) + "x" +
                    std::to_string(image.width) + " and mask " + std::to_string(mask.height) + "x" +
                    std::to_string(mask.width) + " differ in size");
  }
  Sample s;
  s.id = std::move(id);
  s.image = to_unit(image);
  s.mask = BinaryMask(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) s.mask.bits[i] = mask.pixels[i] > 127 ? 1 : 0;
  return s;
}

Tensor<float> to_unit(const GrayImage& image) {
  Tensor<float> t({image.height, image.width});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[static_cast<Index>(i)] = static_cast<float>(image.pixels[i]) / 255.0f;
  return t;
}

GrayImage to_gray(const Tensor<float>& unit_image) {
  const Shape& s = unit_image.shape();
  GrayImage g;
  g.height = s[s.rank() - 2];
  g.width = s[s.rank() - 1];
  g.pixels.resize(static_cast<std::size_t>(unit_image.numel()));
  for (Index i = 0; i < unit_image.numel(); ++i) {
    const float v = std::clamp(unit_image[i], 0.0f, 1.0f);
    g.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return g;
}

GrayImage to_gray(const BinaryMask& mask) {
  GrayImage g{mask.height, mask.width, {}};
  g.pixels.reserve(mask.bits.size());
  for (auto b : mask.bits) g.pixels.push_back(b ? 255 : 0);
  return g;
}

namespace {

std::vector<std::string> read_ids(const fs::path& split_file) {
  std::ifstream in(split_file);
  if (!in) throw DataError("cannot open split file " + split_file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    ids.push_back(line.substr(start));
  }
  return ids;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root, const fs::path& split_file) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  std::vector<Sample> out;
  for (const std::string& id : read_ids(split_file)) {
    const fs::path image = root / "images" / (id + ".png");
    const fs::path mask = root / "masks" / (id + ".png");
    if (!fs::exists(image)) throw DataError("sample '" + id + "': missing image " + image.string());
    if (!fs::exists(mask)) throw DataError("sample '" + id + "': missing mask " + mask.string());
    out.push_back(make_sample(id, read_png(image), read_png(mask)));
  }
  if (out.empty()) throw DataError("split file " + split_file.string() + " lists no samples");
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples, const fs::path& split_file) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  if (split_file.has_parent_path()) fs::create_directories(split_file.parent_path());
  std::ofstream split(split_file);
  if (!split) throw DataError("cannot write split file " + split_file.string());
  for (const Sample& s : samples) {
    write_png(root / "images" / (s.id + ".png"), to_gray(s.image));
    write_png(root / "masks" / (s.id + ".png"), to_gray(s.mask));
    split << s.id << '\n';
  }
}

namespace {

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor<float> reflect_pad(const Tensor<float>& plane, Index bottom, Index right) {
  const Index h = plane.dim(0), w = plane.dim(1);
  if (bottom == 0 && right == 0) return plane;
  Tensor<float> out({h + bottom, w + right});
  for (Index y = 0; y < h + bottom; ++y) {
    const Index sy = reflect_index(y, h);
    for (Index x = 0; x < w + right; ++x) out[y * (w + right) + x] = plane[sy * w + reflect_index(x, w)];
  }
  return out;
}

namespace {

// Index into a square (n x n) grid after an optional flip pair and k quarter turns.
struct SquareTransform {
  Index n = 0;
  bool hflip = false, vflip = false;
  int turns = 0;

  [[nodiscard]] std::pair<Index, Index> source(Index y, Index x) const {
    for (int t = 0; t < turns; ++t) {
      // Output (y, x) of a counter-clockwise quarter turn reads input (x, n - 1 - y).
      const Index ny = x, nx = n - 1 - y;
      y = ny;
      x = nx;
    }
    if (vflip) y = n - 1 - y;
    if (hflip) x = n - 1 - x;
    return {y, x};
  }
};

}  // namespace

TrainPair prepare_train(const Sample& sample, Index crop, std::mt19937_64& rng, bool augment) {
  if (crop <= 0) throw ConfigError("prepare_train: crop must be positive");
  const Index h = sample.height(), w = sample.width();
  const Index ph = std::max<Index>(0, crop - h), pw = std::max<Index>(0, crop - w);
  const Tensor<float> image = reflect_pad(sample.image, ph, pw);
  Tensor<float> mask_plane({h, w});
  for (Index i = 0; i < h * w; ++i) mask_plane[i] = sample.mask.bits[static_cast<std::size_t>(i)];
  const Tensor<float> mask = reflect_pad(mask_plane, ph, pw);
  const Index H = h + ph, W = w + pw;

  const Index oy = std::uniform_int_distribution<Index>(0, H - crop)(rng);
  const Index ox = std::uniform_int_distribution<Index>(0, W - crop)(rng);
  SquareTransform tf{crop};
  if (augment) {
    std::bernoulli_distribution coin(0.5);
    tf.hflip = coin(rng);
    tf.vflip = coin(rng);
    tf.turns = std::uniform_int_distribution<int>(0, 3)(rng);
  }

  TrainPair out{Tensor<float>({crop, crop}), Tensor<float>({crop, crop})};
  for (Index y = 0; y < crop; ++y) {
    for (Index x = 0; x < crop; ++x) {
      const auto [sy, sx] = tf.source(y, x);
      const Index src = (oy + sy) * W + (ox + sx);
      out.image[y * crop + x] = standardize(image[src]);
      out.mask[y * crop + x] = mask[src];
    }
  }
  return out;
}

TrainPair prepare_train(const Sample& sample, Index crop, std::uint64_t seed, bool augment) {
  std::mt19937_64 rng(seed);
  return prepare_train(sample, crop, rng, augment);
}

std::pair<Tensor<float>, Tensor<float>> stack_batch(const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) throw PreconditionError("stack_batch: empty batch");
  const Index h = pairs[0].image.dim(0), w = pairs[0].image.dim(1);
  const auto b = static_cast<Index>(pairs.size());
  Tensor<float> images({b, 1, h, w}), masks({b, 1, h, w});
  for (Index i = 0; i < b; ++i) {
    const TrainPair& p = pairs[static_cast<std::size_t>(i)];
    if (p.image.shape() != Shape{h, w}) throw PreconditionError("stack_batch: inconsistent crop sizes");
    std::copy(p.image.values().begin(), p.image.values().end(), images.data() + i * h * w);
    std::copy(p.mask.values().begin(), p.mask.values().end(), masks.data() + i * h * w);
  }
  return {std::move(images), std::move(masks)};
}

EvalInput prepare_eval(const Tensor<float>& unit_image, Index multiple) {
  if (unit_image.rank() != 2) throw PreconditionError("prepare_eval: expected an (h, w) image");
  EvalInput e;
  e.height = unit_image.dim(0);
  e.width = unit_image.dim(1);
  const Index ph = (multiple - e.height % multiple) % multiple;
  const Index pw = (multiple - e.width % multiple) % multiple;
  Tensor<float> padded = reflect_pad(unit_image, ph, pw);
  for (Index i = 0; i < padded.numel(); ++i) padded[i] = standardize(padded[i]);
  e.image = std::move(padded).reshaped({1, 1, e.height + ph, e.width + pw});
  return e;
}

Tensor<float> crop_back(const Tensor<float>& map, const EvalInput& record) {
  const Shape& s = map.shape();
  const Index H = s[s.rank() - 2], W = s[s.rank() - 1];
  if (s.numel() != H * W || H < record.height || W < record.width) {
    throw PreconditionError("crop_back: map " + s.str() + " cannot be cropped to " +
                            std::to_string(record.height) + "x" + std::to_string(record.width));
  }
  Tensor<float> out({record.height, record.width});
  for (Index y = 0; y < record.height; ++y) {
    std::copy_n(map.data() + y * W, record.width, out.data() + y * record.width);
  }
  return out;
}

void SynthSpec::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("synth: " + msg);
  };
  require(count >= 1, "count must be at least 1");
  require(height >= 8 && width >= 8, "extents must be at least 8");
  require(min_targets >= 0 && max_targets >= min_targets, "target count range is empty");
  require(min_sigma > 0 && max_sigma >= min_sigma, "sigma range must be positive and ordered");
  require(min_peak > 0 && max_peak >= min_peak && max_peak <= 1, "peak range must lie in (0, 1]");
  require(clutter >= 0 && clutter <= 1, "clutter must lie in [0, 1]");
  require(clutter_smoothing >= 0, "clutter_smoothing must be non-negative");
  require(max_attempts >= 1, "max_attempts must be at least 1");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<Index>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (Index i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

std::vector<double> smooth(const std::vector<double>& in, Index h, Index w, double sigma) {
  if (sigma <= 0) return in;
  const std::vector<double> k = gaussian_kernel(sigma);
  const auto r = static_cast<Index>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index j = -r; j <= r; ++j) acc += k[static_cast<std::size_t>(j + r)] * in[static_cast<std::size_t>(y * w + reflect_index(x + j, w))];
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index j = -r; j <= r; ++j) acc += k[static_cast<std::size_t>(j + r)] * tmp[static_cast<std::size_t>(reflect_index(y + j, h) * w + x)];
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

struct Target {
  Index cy, cx;
  double sigma, peak;
  // Pixels with squared offset below this are inside the half-maximum region.
  [[nodiscard]] double half_max_r2() const { return 2 * sigma * sigma * std::log(2.0); }
};

}  // namespace

std::vector<Sample> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index h = spec.height, w = spec.width;
  std::vector<Sample> out;
  for (Index n = 0; n < spec.count; ++n) {
    std::vector<double> noise(static_cast<std::size_t>(h * w));
    for (double& v : noise) v = unit(rng);
    std::vector<double> plane = smooth(noise, h, w, spec.clutter_smoothing);
    for (double& v : plane) v *= spec.clutter;

    const Index want = std::uniform_int_distribution<Index>(spec.min_targets, spec.max_targets)(rng);
    std::vector<Target> targets;
    for (Index t = 0; t < want; ++t) {
      const double sigma = spec.min_sigma + (spec.max_sigma - spec.min_sigma) * unit(rng);
      const double peak = spec.min_peak + (spec.max_peak - spec.min_peak) * unit(rng);
      const double radius = std::sqrt(2 * sigma * sigma * std::log(2.0));
      const auto margin = static_cast<Index>(std::ceil(radius)) + 1;
      if (2 * margin >= h || 2 * margin >= w) {
        throw DataError("synth: target of sigma " + std::to_string(sigma) + " does not fit a " +
                        std::to_string(h) + "x" + std::to_string(w) + " image");
      }
      bool placed = false;
      for (Index attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        Target cand{std::uniform_int_distribution<Index>(margin, h - 1 - margin)(rng),
                    std::uniform_int_distribution<Index>(margin, w - 1 - margin)(rng), sigma, peak};
        placed = std::all_of(targets.begin(), targets.end(), [&](const Target& o) {
          // Keep a gap of at least two pixels between half-maximum regions so they never touch.
          const double gap = std::sqrt(o.half_max_r2()) + radius + 2.0;
          const auto dy = static_cast<double>(o.cy - cand.cy), dx = static_cast<double>(o.cx - cand.cx);
          return dy * dy + dx * dx > gap * gap;
        });
        if (placed) targets.push_back(cand);
      }
      if (!placed) {
        throw DataError("synth: could not place target " + std::to_string(t + 1) + " of sample " +
                        std::to_string(n) + " after " + std::to_string(spec.max_attempts) + " attempts");
      }
    }

    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04lld", static_cast<long long>(n));
    s.id = id;
    s.image = Tensor<float>({h, w});
    s.mask = BinaryMask(h, w);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double v = plane[static_cast<std::size_t>(y * w + x)];
        for (const Target& t : targets) {
          const auto dy = static_cast<double>(y - t.cy), dx = static_cast<double>(x - t.cx);
          const double r2 = dy * dy + dx * dx;
          v += t.peak * std::exp(-r2 / (2 * t.sigma * t.sigma));
          if (r2 < t.half_max_r2()) s.mask.at(y, x) = 1;
        }
        s.image[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sct
