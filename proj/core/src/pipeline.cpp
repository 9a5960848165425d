#include "sctrans/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "sctrans/checkpoint.hpp"
#include "sctrans/errors.hpp"
#include "sctrans/optim.hpp"

namespace sct {

Tensor<float> predict_image(const SCTransNet<float>& model, const Tensor<float>& unit_image) {
  const EvalInput in = prepare_eval(unit_image, model.config().spatial_multiple());
  return crop_back(model.predict(in.image), in);
}

EvalAccumulator evaluate_dataset(const SCTransNet<float>& model, const std::vector<Sample>& samples,
                                 const MetricOptions& options, Index workers) {
  if (workers < 1) throw ConfigError("workers: must be at least 1");
  const auto n = static_cast<Index>(samples.size());
  const Index k = std::min<Index>(workers, std::max<Index>(n, 1));
  std::vector<EvalAccumulator> parts(static_cast<std::size_t>(k), EvalAccumulator(options));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
  auto run = [&](Index shard) {
    try {
      for (Index i = shard; i < n; i += k) {
        const Sample& s = samples[static_cast<std::size_t>(i)];
        parts[static_cast<std::size_t>(shard)].add(i, predict_image(model, s.image), s.mask);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(shard)] = std::current_exception();
    }
  };
  if (k == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (Index shard = 0; shard < k; ++shard) threads.emplace_back(run, shard);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EvalAccumulator total(options);
  for (const auto& p : parts) total.merge(p);
  return total;
}

namespace {

void log_line(std::ostream* log, const nlohmann::json& j) {
  if (log != nullptr) *log << j.dump() << '\n' << std::flush;
}

}  // namespace

TrainResult train_epochs(SCTransNet<float>& model, const std::vector<Sample>& train, const TrainOptions& options) {
  if (train.empty()) throw PreconditionError("train: the training set is empty");
  const ModelConfig& cfg = model.config();
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  std::mt19937_64 rng(cfg.seed + 1);
  Adam<float> adam;
  TrainResult result;
  std::vector<std::size_t> order(train.size());
  Index step = 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += batch) {
      if (options.max_steps >= 0 && step >= options.max_steps) break;
      std::vector<TrainPair> pairs;
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        pairs.push_back(prepare_train(train[order[i]], cfg.crop_size, rng, cfg.augment));
      }
      auto [images, masks] = stack_batch(pairs);

      GradTape<float> tape;
      const Context<float> ctx{&tape, true, nullptr};
      const SaliencyMaps<float> maps = model.forward(ctx, Var<float>::constant(std::move(images)));
      const LossTerms<float> loss = total_loss(maps, masks, cfg.loss_weights);
      const double value = loss.total.value()[0];
      if (!std::isfinite(value)) {
        const std::string where = tape.first_non_finite();
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           "; first non-finite value produced by op '" + (where.empty() ? "unknown" : where) + "'");
      }
      model.params().zero_grad();
      tape.backward(loss.total);
      adam.step(model.params(), lr);

      StepRecord rec{epoch, step, lr, value, loss.side, loss.fused};
      nlohmann::json j{{"type", "step"}, {"epoch", epoch}, {"step", step}, {"lr", lr}, {"loss", value},
                       {"loss_fused", loss.fused}};
      if (!loss.side.empty()) j["loss_side"] = loss.side;
      log_line(options.log, j);
      if (options.on_step) options.on_step(rec);
      result.steps.push_back(std::move(rec));
      ++step;
    }

    const bool last = epoch + 1 == cfg.epochs || (options.max_steps >= 0 && step >= options.max_steps);
    if (options.validation != nullptr && options.val_every > 0 && ((epoch + 1) % options.val_every == 0 || last)) {
      const MetricReport r = evaluate_dataset(model, *options.validation, options.metrics).report();
      log_line(options.log, {{"type", "validation"}, {"epoch", epoch}, {"step", step}, {"iou", r.iou},
                             {"niou", r.niou}, {"f_measure", r.f_measure}, {"pd", r.pd}, {"fa", r.fa}});
      if (r.iou > result.best_iou) {
        result.best_iou = r.iou;
        result.best_epoch = epoch;
        if (!options.out_dir.empty()) save_checkpoint(model, options.out_dir / "best.ckpt");
      }
    }
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0) {
      save_checkpoint(model, options.out_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"));
    }
    if (last) break;
  }
  if (!options.out_dir.empty()) save_checkpoint(model, options.out_dir / "final.ckpt");
  return result;
}

}  // namespace sct
