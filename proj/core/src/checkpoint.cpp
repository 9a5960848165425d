#include "sctrans/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "sctrans/config.hpp"
#include "sctrans/errors.hpp"

namespace sct {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename U>
void put(std::string& out, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  out.append(bytes, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what);
  }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) fail("truncated at byte " + std::to_string(pos_));
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::uint8_t dtype = 0;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

struct Parsed {
  std::string config;
  std::map<std::string, Entry> entries;
  std::string payload;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Parsed parse(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r(data, path.string());
  if (r.remaining() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    r.fail("not a checkpoint file (bad magic)");
  }
  r.bytes(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  Parsed p;
  p.config = r.bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    Entry e;
    e.dtype = r.get<std::uint8_t>();
    if (e.dtype > 1) r.fail("entry '" + name + "' has unknown dtype " + std::to_string(e.dtype));
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("entry '" + name + "' has implausible rank " + std::to_string(rank));
    std::vector<Index> dims;
    for (std::uint32_t k = 0; k < rank; ++k) dims.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    e.shape = Shape(dims);
    e.offset = r.get<std::uint64_t>();
    e.nbytes = r.get<std::uint64_t>();
    const std::uint64_t width = e.dtype == 0 ? 4 : 8;
    if (e.nbytes != static_cast<std::uint64_t>(e.shape.numel()) * width) {
      r.fail("entry '" + name + "' byte count does not match its shape");
    }
    if (!p.entries.emplace(name, e).second) r.fail("duplicate entry '" + name + "'");
  }
  const auto payload_len = r.get<std::uint64_t>();
  p.payload = r.bytes(payload_len);
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  for (const auto& [name, e] : p.entries) {
    if (e.offset > payload_len || e.nbytes > payload_len - e.offset) {
      r.fail("entry '" + name + "' points outside the payload");
    }
  }
  return p;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

// First 12 names, then a count of the rest.
std::string list(const std::vector<std::string>& names) {
  constexpr std::size_t shown = 12;
  std::string s;
  for (std::size_t i = 0; i < std::min(shown, names.size()); ++i) s += (i ? ", " : "") + names[i];
  if (names.size() > shown) s += " and " + std::to_string(names.size() - shown) + " more";
  return s;
}

}  // namespace

template <typename T>
void save_checkpoint(const SCTransNet<T>& model, const std::filesystem::path& path) {
  std::string header(kMagic, sizeof kMagic);
  put<std::uint32_t>(header, kCheckpointVersion);
  const std::string config = to_text(model.config());
  put<std::uint64_t>(header, config.size());
  header += config;
  put<std::uint32_t>(header, static_cast<std::uint32_t>(model.params().size()));
  std::string payload;
  for (const Parameter<T>& p : model.params()) {
    put<std::uint32_t>(header, static_cast<std::uint32_t>(p.name.size()));
    header += p.name;
    put<std::uint8_t>(header, dtype_code<T>());
    put<std::uint32_t>(header, static_cast<std::uint32_t>(p.value.rank()));
    for (Index d : p.value.shape().dims()) put<std::uint64_t>(header, static_cast<std::uint64_t>(d));
    const std::size_t nbytes = static_cast<std::size_t>(p.value.numel()) * sizeof(T);
    put<std::uint64_t>(header, payload.size());
    put<std::uint64_t>(header, nbytes);
    payload.append(reinterpret_cast<const char*>(p.value.data()), nbytes);
  }
  put<std::uint64_t>(header, payload.size());

  // Write beside the target and rename so a failed write never leaves a partial file.
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_config(const std::filesystem::path& path) { return parse(path).config; }

template <typename T>
void load_parameters(SCTransNet<T>& model, const std::filesystem::path& path) {
  const Parsed p = parse(path);
  std::vector<std::string> missing, extra, wrong;
  std::set<std::string> expected;
  for (const Parameter<T>& param : model.params()) {
    expected.insert(param.name);
    auto it = p.entries.find(param.name);
    if (it == p.entries.end()) {
      missing.push_back(param.name);
    } else if (it->second.dtype != dtype_code<T>() || it->second.shape != param.value.shape()) {
      wrong.push_back(param.name + " (file " + it->second.shape.str() + ", model " + param.value.shape().str() + ")");
    }
  }
  for (const auto& [name, e] : p.entries) {
    if (!expected.contains(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty() || !wrong.empty()) {
    std::string msg = "checkpoint " + path.string() + " is incompatible with this model";
    if (!missing.empty()) msg += "; missing: " + list(missing);
    if (!extra.empty()) msg += "; unexpected: " + list(extra);
    if (!wrong.empty()) msg += "; mismatched dtype or shape: " + list(wrong);
    throw CheckpointError(msg);
  }
  for (Parameter<T>& param : model.params()) {
    const Entry& e = p.entries.at(param.name);
    std::memcpy(param.value.data(), p.payload.data() + e.offset, e.nbytes);
  }
}

template <typename T>
SCTransNet<T> load_checkpoint(const std::filesystem::path& path) {
  ModelConfig config;
  try {
    config = parse_model_config(read_checkpoint_config(path));
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + ": embedded configuration is invalid: " + e.what());
  }
  SCTransNet<T> model(config);
  load_parameters(model, path);
  return model;
}

template void save_checkpoint(const SCTransNet<float>&, const std::filesystem::path&);
template void save_checkpoint(const SCTransNet<double>&, const std::filesystem::path&);
template void load_parameters(SCTransNet<float>&, const std::filesystem::path&);
template void load_parameters(SCTransNet<double>&, const std::filesystem::path&);
template SCTransNet<float> load_checkpoint(const std::filesystem::path&);
template SCTransNet<double> load_checkpoint(const std::filesystem::path&);

}  // namespace sct
