#include "sctrans/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "sctrans/errors.hpp"

namespace sct {

Index ModelConfig::expanded_channels(Index c) const {
  auto e = static_cast<Index>(std::floor(expansion * static_cast<double>(c)));
  return e - e % 2;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ConfigError(field + ": " + msg);
  };
  Index prev = 0;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    require(channels[i] > prev, "channels", "must be positive and strictly increasing");
    prev = channels[i];
  }
  require(bottleneck_channels > prev, "bottleneck_channels", "must exceed the last level's channels");
  require(in_channels >= 1, "in_channels", "must be at least 1");
  require(patch_size >= 8 && (patch_size & (patch_size - 1)) == 0, "patch_size",
          "must be a power of two no smaller than 8");
  require(num_sctb >= 0, "num_sctb", "must be non-negative");
  require(std::isfinite(expansion) && expansion > 0, "expansion", "must be positive");
  require(expanded_channels(channels[0]) >= 2, "expansion", "expands the first level to fewer than 2 channels");
  require(num_heads >= 1, "num_heads", "must be at least 1");
  for (Index c : channels) {
    require(c % num_heads == 0, "num_heads", "must divide every level's channel count");
  }
  require(total_channels() % num_heads == 0, "num_heads", "must divide the concatenated channel count");
  require(image_size > 0 && image_size % spatial_multiple() == 0, "image_size",
          "must be a positive multiple of " + std::to_string(spatial_multiple()));
  require(std::isfinite(lr0) && lr0 > 0, "lr0", "must be positive");
  require(std::isfinite(lr_min) && lr_min >= 0 && lr_min <= lr0, "lr_min", "must lie in [0, lr0]");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(epochs >= 1, "epochs", "must be at least 1");
  require(crop_size > 0 && crop_size % spatial_multiple() == 0, "crop_size",
          "must be a positive multiple of " + std::to_string(spatial_multiple()));
  for (double w : loss_weights.side) require(std::isfinite(w) && w >= 0, "loss_weights", "must be non-negative");
  require(std::isfinite(loss_weights.fused) && loss_weights.fused >= 0, "loss_weights", "must be non-negative");
  require(threshold >= 0 && threshold <= 1, "threshold", "must lie in [0, 1]");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

Index parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long d = std::stoull(v, &used);
      if (used == v.size()) return d;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream s(v);
  std::string item;
  while (std::getline(s, item, ',')) out.push_back(trim(item));
  return out;
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// Ordered so serialized files read top-down.
using FieldTable = std::vector<std::pair<std::string, Field>>;

void bind_field(FieldTable& t, const std::string& key, Index& ref) {
  t.emplace_back(key, Field{[&ref] { return std::to_string(ref); },
                            [&ref, key](const std::string& v) { ref = parse_int(key, v); }});
}
void bind_field(FieldTable& t, const std::string& key, std::uint64_t& ref) {
  t.emplace_back(key, Field{[&ref] { return std::to_string(ref); },
                            [&ref, key](const std::string& v) { ref = parse_u64(key, v); }});
}
void bind_field(FieldTable& t, const std::string& key, double& ref) {
  t.emplace_back(key, Field{[&ref] { return format(ref); },
                            [&ref, key](const std::string& v) { ref = parse_double(key, v); }});
}
void bind_field(FieldTable& t, const std::string& key, bool& ref) {
  t.emplace_back(key, Field{[&ref] { return std::string(ref ? "true" : "false"); },
                            [&ref, key](const std::string& v) { ref = parse_bool(key, v); }});
}
void bind_field(FieldTable& t, const std::string& key, std::string& ref) {
  t.emplace_back(key, Field{[&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }});
}

void bind_model(FieldTable& t, ModelConfig& m) {
  t.emplace_back("channels", Field{[&m] {
                                     std::string s;
                                     for (Index c : m.channels) s += (s.empty() ? "" : ",") + std::to_string(c);
                                     return s;
                                   },
                                   [&m](const std::string& v) {
                                     const auto items = split_list(v);
                                     if (items.size() != m.channels.size()) {
                                       throw ConfigError("channels: expected " + std::to_string(m.channels.size()) +
                                                         " comma-separated values, got '" + v + "'");
                                     }
                                     for (std::size_t i = 0; i < items.size(); ++i) {
                                       m.channels[i] = parse_int("channels", items[i]);
                                     }
                                   }});
  bind_field(t, "bottleneck_channels", m.bottleneck_channels);
  bind_field(t, "in_channels", m.in_channels);
  bind_field(t, "patch_size", m.patch_size);
  bind_field(t, "num_sctb", m.num_sctb);
  bind_field(t, "expansion", m.expansion);
  bind_field(t, "deep_supervision", m.deep_supervision);
  bind_field(t, "positional_encoding", m.positional_encoding);
  bind_field(t, "num_heads", m.num_heads);
  bind_field(t, "spatial_embedding", m.spatial_embedding);
  bind_field(t, "gslc", m.gslc);
  bind_field(t, "gate_sigmoid", m.gate_sigmoid);
  bind_field(t, "image_size", m.image_size);
  bind_field(t, "lr0", m.lr0);
  bind_field(t, "lr_min", m.lr_min);
  bind_field(t, "batch_size", m.batch_size);
  bind_field(t, "epochs", m.epochs);
  bind_field(t, "seed", m.seed);
  bind_field(t, "crop_size", m.crop_size);
  bind_field(t, "augment", m.augment);
  t.emplace_back("loss_weights", Field{[&m] {
                                         std::string s;
                                         for (double w : m.loss_weights.side) s += format(w) + ",";
                                         return s + format(m.loss_weights.fused);
                                       },
                                       [&m](const std::string& v) {
                                         const auto items = split_list(v);
                                         if (items.size() != kMaps + 1) {
                                           throw ConfigError("loss_weights: expected 6 comma-separated values "
                                                             "(five side maps, then fused), got '" + v + "'");
                                         }
                                         for (std::size_t i = 0; i < kMaps; ++i) {
                                           m.loss_weights.side[i] = parse_double("loss_weights", items[i]);
                                         }
                                         m.loss_weights.fused = parse_double("loss_weights", items[kMaps]);
                                       }});
  bind_field(t, "threshold", m.threshold);
}

void bind_run(FieldTable& t, RunConfig& r) {
  bind_model(t, r.model);
  bind_field(t, "data_root", r.data_root);
  bind_field(t, "train_split", r.train_split);
  bind_field(t, "test_split", r.test_split);
  bind_field(t, "out_dir", r.out_dir);
  bind_field(t, "checkpoint", r.checkpoint);
  bind_field(t, "val_every", r.val_every);
  bind_field(t, "checkpoint_every", r.checkpoint_every);
  bind_field(t, "workers", r.workers);
  bind_field(t, "connectivity", r.connectivity);
  bind_field(t, "match_radius", r.match_radius);
  bind_field(t, "synth_count", r.synth.count);
  bind_field(t, "synth_height", r.synth.height);
  bind_field(t, "synth_width", r.synth.width);
  bind_field(t, "synth_min_targets", r.synth.min_targets);
  bind_field(t, "synth_max_targets", r.synth.max_targets);
  bind_field(t, "synth_min_sigma", r.synth.min_sigma);
  bind_field(t, "synth_max_sigma", r.synth.max_sigma);
  bind_field(t, "synth_min_peak", r.synth.min_peak);
  bind_field(t, "synth_max_peak", r.synth.max_peak);
  bind_field(t, "synth_clutter", r.synth.clutter);
  bind_field(t, "synth_clutter_smoothing", r.synth.clutter_smoothing);
  bind_field(t, "synth_seed", r.synth.seed);
  bind_field(t, "synth_max_attempts", r.synth.max_attempts);
}

std::string serialize(const FieldTable& t) {
  std::string out;
  for (const auto& [key, field] : t) out += key + " = " + field.get() + "\n";
  return out;
}

void apply(const FieldTable& t, const std::string& key, const std::string& value) {
  for (const auto& [k, field] : t) {
    if (k == key) {
      field.set(value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void parse_into(const FieldTable& t, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      apply(t, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

}  // namespace

std::string to_text(const ModelConfig& config) {
  ModelConfig copy = config;
  FieldTable t;
  bind_model(t, copy);
  return serialize(t);
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig m;
  FieldTable t;
  bind_model(t, m);
  parse_into(t, text);
  m.validate();
  return m;
}

std::string to_text(const RunConfig& config) {
  RunConfig copy = config;
  FieldTable t;
  bind_run(t, copy);
  return serialize(t);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig r;
  FieldTable t;
  bind_run(t, r);
  parse_into(t, text);
  r.validate();
  return r;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void set_run_option(RunConfig& config, const std::string& key, const std::string& value) {
  FieldTable t;
  bind_run(t, config);
  apply(t, key, value);
}

void RunConfig::validate() const {
  model.validate();
  if (val_every < 0) throw ConfigError("val_every: must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be non-negative");
  if (workers < 1) throw ConfigError("workers: must be at least 1");
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity: must be 4 or 8");
  if (!(match_radius > 0)) throw ConfigError("match_radius: must be positive");
  synth.validate();
}

MetricOptions RunConfig::metric_options() const {
  MetricOptions o;
  o.threshold = model.threshold;
  o.connectivity = connectivity == 4 ? Connectivity::four : Connectivity::eight;
  o.radius = match_radius;
  return o;
}

std::filesystem::path RunConfig::resolve_split(const std::string& split) const {
  const std::filesystem::path p(split);
  return p.is_absolute() ? p : std::filesystem::path(data_root) / p;
}

}  // namespace sct
