#pragma once

#include <filesystem>
#include <string>

#include "sctrans/data.hpp"
#include "sctrans/metrics.hpp"
#include "sctrans/model_config.hpp"

namespace sct {

/// Everything a command-line run needs. Serialized as `key = value` lines; `#` starts a
/// comment. Unknown or repeated keys are rejected.
struct RunConfig {
  ModelConfig model;

  std::string data_root;
  std::string train_split = "img_idx/train.txt";  // relative to data_root unless absolute
  std::string test_split = "img_idx/test.txt";
  std::string out_dir = "runs";
  std::string checkpoint;

  Index val_every = 1;         // epochs between validation passes (0 disables)
  Index checkpoint_every = 0;  // epochs between periodic checkpoints (0 disables)
  Index workers = 1;           // evaluation shards

  Index connectivity = 8;
  double match_radius = 3.0;

  SynthSpec synth;

  void validate() const;
  [[nodiscard]] MetricOptions metric_options() const;
  [[nodiscard]] std::filesystem::path resolve_split(const std::string& split) const;
};

std::string to_text(const ModelConfig& config);
/// Parses a text containing only model keys.
ModelConfig parse_model_config(const std::string& text);

std::string to_text(const RunConfig& config);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies one `key = value` assignment, with the same rules as the file format.
void set_run_option(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace sct
