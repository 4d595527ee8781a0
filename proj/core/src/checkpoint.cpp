#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "hybridseg/config.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[] = "HYBRIDSEG-CKPT\n";
constexpr int kFormatVersion = 1;

template <typename T>
constexpr Precision precision_of() {
  return std::is_same_v<T, double> ? Precision::float64 : Precision::float32;
}

const char* precision_name(Precision p) { return p == Precision::float64 ? "float64" : "float32"; }

template <typename T>
NamedBlob blob(const std::string& name, const std::vector<int>& shape, const std::vector<T>& values) {
  NamedBlob b{name, shape, std::vector<unsigned char>(values.size() * sizeof(T))};
  std::memcpy(b.bytes.data(), values.data(), b.bytes.size());
  return b;
}

template <typename T>
void unblob(const NamedBlob& b, const std::vector<int>& shape, std::vector<T>& out) {
  if (b.shape != shape) throw std::runtime_error("checkpoint tensor " + b.name + " has the wrong shape");
  if (b.bytes.size() != out.size() * sizeof(T))
    throw std::runtime_error("checkpoint tensor " + b.name + " has the wrong size");
  std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
}

}  // namespace

template <typename T>
void save_checkpoint(const TrainState<T>& state, const TrainConfig& cfg, const fs::path& path) {
  std::vector<NamedBlob> tensors;
  const auto& entries = state.net.parameters().entries;
  for (const auto& e : entries) tensors.push_back(blob(e.name, e.shape, e.values));
  for (std::size_t i = 0; i < entries.size(); ++i)
    tensors.push_back(blob("adam.m/" + entries[i].name, entries[i].shape, state.adam.m[i]));
  for (std::size_t i = 0; i < entries.size(); ++i)
    tensors.push_back(blob("adam.v/" + entries[i].name, entries[i].shape, state.adam.v[i]));

  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const json header = {{"format_version", kFormatVersion},
                       {"config", to_json(cfg)},
                       {"epoch", state.epochs_done},
                       {"global_step", state.global_step},
                       {"rng_state", state.rng_state},
                       {"metrics_log_offset", state.log_lines},
                       {"precision", precision_name(precision_of<T>())},
                       {"adam_step", state.adam.step},
                       {"tensors", index}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic) - 1);
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors)
      out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointRecord load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");

  CheckpointRecord rec;
  try {
    const json header = json::parse(text);
    if (header.at("format_version").get<int>() != kFormatVersion)
      throw std::runtime_error("unsupported checkpoint format version");
    // Stored configs are complete; validate against library defaults.
    rec.config = train_config_from_json(header.at("config"), TrainConfig{});
    rec.epoch = header.at("epoch").get<int>();
    rec.global_step = header.at("global_step").get<std::uint64_t>();
    rec.rng_state = header.at("rng_state").get<std::string>();
    rec.metrics_log_offset = header.at("metrics_log_offset").get<std::uint64_t>();
    rec.precision = header.at("precision").get<std::string>() == "float64" ? Precision::float64 : Precision::float32;
    rec.adam_step = header.at("adam_step").get<std::uint64_t>();
    for (const auto& t : header.at("tensors")) {
      NamedBlob b;
      b.name = t.at("name").get<std::string>();
      b.shape = t.at("shape").get<std::vector<int>>();
      b.bytes.resize(t.at("nbytes").get<std::size_t>());
      in.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(b.bytes.size()));
      if (!in) throw std::runtime_error("truncated tensor data for " + b.name);
      rec.tensors.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return rec;
}

template <typename T>
TrainState<T> restore_state(const CheckpointRecord& rec, const std::optional<NetConfig>& expected) {
  if (rec.precision != precision_of<T>())
    throw std::runtime_error(std::string("checkpoint precision is ") + precision_name(rec.precision) + ", expected " +
                             precision_name(precision_of<T>()));
  const NetConfig stored = effective_net_config(rec.config);
  if (expected && *expected != stored) throw std::runtime_error("checkpoint network configuration does not match");

  TrainState<T> state{Network<T>(stored), {}, rec.epoch, rec.global_step, rec.rng_state, rec.metrics_log_offset};
  auto& entries = state.net.parameters().entries;
  state.adam = AdamState<T>::zeros_like(state.net.parameters());
  state.adam.step = rec.adam_step;

  std::unordered_map<std::string, const NamedBlob*> by_name;
  for (const auto& b : rec.tensors) by_name[b.name] = &b;
  const auto lookup = [&](const std::string& name) -> const NamedBlob& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    return *it->second;
  };
  for (std::size_t i = 0; i < entries.size(); ++i) {
    unblob(lookup(entries[i].name), entries[i].shape, entries[i].values);
    unblob(lookup("adam.m/" + entries[i].name), entries[i].shape, state.adam.m[i]);
    unblob(lookup("adam.v/" + entries[i].name), entries[i].shape, state.adam.v[i]);
  }
  if (rec.tensors.size() != 3 * entries.size()) throw std::runtime_error("checkpoint has unexpected extra tensors");
  return state;
}

template void save_checkpoint<float>(const TrainState<float>&, const TrainConfig&, const fs::path&);
template void save_checkpoint<double>(const TrainState<double>&, const TrainConfig&, const fs::path&);
template TrainState<float> restore_state<float>(const CheckpointRecord&, const std::optional<NetConfig>&);
template TrainState<double> restore_state<double>(const CheckpointRecord&, const std::optional<NetConfig>&);

}  // namespace hybridseg
