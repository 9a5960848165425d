#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sctrans/metrics.hpp"
#include "sctrans/tensor.hpp"

namespace sct {

/// 8-bit grayscale raster.
struct GrayImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Reads any PNG as 8-bit grayscale (color is converted, alpha dropped, 16-bit reduced).
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

struct Sample {
  std::string id;
  Tensor<float> image;  // (h, w) in [0, 1]
  BinaryMask mask;
  [[nodiscard]] Index height() const { return image.dim(0); }
  [[nodiscard]] Index width() const { return image.dim(1); }
};

Sample make_sample(std::string id, const GrayImage& image, const GrayImage& mask);
/// (h, w) tensor of pixel / 255.
Tensor<float> to_unit(const GrayImage& image);
GrayImage to_gray(const Tensor<float>& unit_image);
GrayImage to_gray(const BinaryMask& mask);

/// Reads ids from `split_file` (one per line, blank lines ignored) and loads
/// `root/images/<id>.png` and `root/masks/<id>.png`. Mask pixels above 127 are targets.
std::vector<Sample> load_dataset(const std::filesystem::path& root, const std::filesystem::path& split_file);
/// Writes images, masks and the split file in the layout `load_dataset` reads.
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                  const std::filesystem::path& split_file);

/// Image maps to (x - 0.5) / 0.5.
inline float standardize(float unit) { return (unit - 0.5f) / 0.5f; }

struct TrainPair {
  Tensor<float> image;  // (crop, crop), standardized
  Tensor<float> mask;   // (crop, crop), {0, 1}
};

/// Random crop (reflect-padded first if smaller than the crop) with optional random
/// horizontal flip, vertical flip and rotation by k * 90 degrees; image and mask receive
/// the same transform.
TrainPair prepare_train(const Sample& sample, Index crop, std::mt19937_64& rng, bool augment = true);
TrainPair prepare_train(const Sample& sample, Index crop, std::uint64_t seed, bool augment = true);

/// Stacks pairs into (b, 1, h, w) image and mask tensors.
std::pair<Tensor<float>, Tensor<float>> stack_batch(const std::vector<TrainPair>& pairs);

struct EvalInput {
  Tensor<float> image;  // (1, 1, H', W'), standardized, H' and W' multiples of `multiple`
  Index height = 0;     // original extents
  Index width = 0;
};

/// Reflect-pads right and bottom to the next multiple; divisible inputs are left untouched.
EvalInput prepare_eval(const Tensor<float>& unit_image, Index multiple = 16);
/// Crops a (.., H', W') map back to the original extents, returning (h, w).
Tensor<float> crop_back(const Tensor<float>& map, const EvalInput& record);

/// Reflect padding of an (h, w) plane to (h + bottom, w + right), mirroring about the edge
/// pixel. Pads larger than the extent reflect repeatedly.
Tensor<float> reflect_pad(const Tensor<float>& plane, Index bottom, Index right);

struct SynthSpec {
  Index count = 8;
  Index height = 64;
  Index width = 64;
  Index min_targets = 1;
  Index max_targets = 3;
  double min_sigma = 0.5;
  double max_sigma = 3.0;
  double min_peak = 0.5;
  double max_peak = 1.0;
  double clutter = 0.2;          // background noise amplitude
  double clutter_smoothing = 2;  // Gaussian blur sigma applied to the noise
  std::uint64_t seed = 0;
  Index max_attempts = 200;      // placement retries per target

  void validate() const;
};

/// Seeded synthetic scenes: smoothed noise background plus Gaussian targets with integer
/// centers; the mask is where a target's own term exceeds half its peak.
std::vector<Sample> synth_generate(const SynthSpec& spec);

}  // namespace sct
