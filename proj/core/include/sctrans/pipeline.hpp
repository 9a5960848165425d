#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "sctrans/data.hpp"
#include "sctrans/metrics.hpp"
#include "sctrans/model.hpp"

namespace sct {

/// Saliency map for one image at its original extents: pad, eval-mode forward, crop back.
Tensor<float> predict_image(const SCTransNet<float>& model, const Tensor<float>& unit_image);

/// Scores every sample. With workers > 1 samples are sharded round-robin over threads and
/// the partial accumulators merged; the result does not depend on the worker count.
EvalAccumulator evaluate_dataset(const SCTransNet<float>& model, const std::vector<Sample>& samples,
                                 const MetricOptions& options, Index workers = 1);

struct StepRecord {
  Index epoch = 0;
  Index step = 0;
  double lr = 0;
  double loss = 0;
  std::vector<double> side;  // unweighted per-map losses (empty without deep supervision)
  double fused = 0;
};

struct TrainOptions {
  std::ostream* log = nullptr;         // JSON lines: one per step and one per validation
  std::filesystem::path out_dir;       // checkpoints go here; empty disables writing
  const std::vector<Sample>* validation = nullptr;
  Index val_every = 1;                 // epochs; 0 disables validation
  Index checkpoint_every = 0;          // epochs; 0 disables periodic checkpoints
  MetricOptions metrics{};
  Index max_steps = -1;                // stop early after this many optimizer steps (< 0: no cap)
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  double best_iou = -1;
  Index best_epoch = -1;
};

/// Adam with a per-epoch cosine schedule over config.epochs. Data order and augmentation
/// draw from a generator seeded by config.seed, so reruns are bitwise identical. Writes
/// `final.ckpt`, `best.ckpt` (highest validation IoU) and `epoch_<n>.ckpt` under out_dir.
/// A non-finite loss aborts with a NumericError naming the first non-finite op.
TrainResult train_epochs(SCTransNet<float>& model, const std::vector<Sample>& train, const TrainOptions& options);

}  // namespace sct
