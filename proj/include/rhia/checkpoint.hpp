#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhia/config.hpp"
#include "rhia/hierarchy.hpp"
#include "rhia/model.hpp"
#include "rhia/vocab.hpp"

namespace rhia {

// Layout (little-endian):
//   "RHIACKPT" | u32 version | u8 bytes per value (4 or 8) | u64 FNV-1a of meta
//   | u64 meta length | meta JSON | u32 record count
//   | records: u32 name length, name, u32 rank, u64 extents..., values
inline constexpr char kCheckpointMagic[8] = {'R', 'H', 'I', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct CheckpointMeta {
  RunConfig config;
  std::vector<std::string> relations;  // hierarchy input, id order
  std::vector<std::string> vocab;      // regular words, row order
  std::vector<std::size_t> train_relation_instances;
  std::size_t epoch = 0;
  double val_auc = 0;
};

inline nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json j;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config_values(m.config)) cfg[k] = v;
  j["config"] = cfg;
  j["relations"] = m.relations;
  j["vocab"] = m.vocab;
  j["train_relation_instances"] = m.train_relation_instances;
  j["epoch"] = m.epoch;
  j["val_auc"] = m.val_auc;
  return j;
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  for (const auto& [k, v] : j.at("config").items()) set_config_value(m.config, k, v.get<std::string>());
  m.relations = j.at("relations").get<std::vector<std::string>>();
  m.vocab = j.at("vocab").get<std::vector<std::string>>();
  m.train_relation_instances = j.at("train_relation_instances").get<std::vector<std::size_t>>();
  m.epoch = j.at("epoch").get<std::size_t>();
  m.val_auc = j.at("val_auc").get<double>();
  return m;
}

namespace detail {

template <class V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}
  template <class V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (b_.size() - pos_ < n) throw DataError("checkpoint '" + path_ + "' is truncated");
  }
  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Writes to a temporary file and renames, so a failed save never leaves a
// partial checkpoint at `path`.
template <class T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params, const CheckpointMeta& meta) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  const std::string json = meta_to_json(meta).dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint8_t>(out, sizeof(T));
  detail::put<std::uint64_t>(out, fnv1a(json));
  detail::put<std::uint64_t>(out, json.size());
  out += json;
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Tensor<T>&, bool) { ++count; });
  detail::put<std::uint32_t>(out, count);
  params.for_each([&](const std::string& name, const Tensor<T>& t, bool) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
  });
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

// Bytes per stored value (4 or 8), read from the header only.
inline std::size_t checkpoint_width(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  char head[sizeof kCheckpointMagic + 5];
  if (!f.read(head, sizeof head)) throw DataError("checkpoint '" + path + "' is truncated");
  if (std::memcmp(head, kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw DataError("'" + path + "' is not a checkpoint");
  }
  const auto width = static_cast<std::uint8_t>(head[sizeof head - 1]);
  if (width != 4 && width != 8) throw DataError("checkpoint value width " + std::to_string(width) + " unsupported");
  return width;
}

template <class T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  RelationHierarchy hierarchy;
  Vocabulary vocab;
  ModelParams<T> params;
  std::size_t stored_bytes = sizeof(T);  // 4 or 8 as written
};

// Loads into precision T. A double file read as float is narrowed value by
// value with static_cast, i.e. rounded to nearest, ties to even. Either the
// whole file is accepted or an error is thrown.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const std::string bytes = read_text_file(path);
  detail::Reader r(bytes, path);
  if (r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw DataError("'" + path + "' is not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("checkpoint version " + std::to_string(version) + " unsupported");
  const auto width = r.get<std::uint8_t>();
  if (width != 4 && width != 8) throw DataError("checkpoint value width " + std::to_string(width) + " unsupported");
  const auto digest = r.get<std::uint64_t>();
  const std::string json = r.bytes(r.get<std::uint64_t>());
  if (fnv1a(json) != digest) throw DataError("checkpoint '" + path + "': metadata digest mismatch");

  LoadedCheckpoint<T> out;
  out.stored_bytes = width;
  try {
    out.meta = meta_from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "': bad metadata: " + e.what());
  }
  out.hierarchy = RelationHierarchy::build(out.meta.relations, out.meta.config.model.levels);
  out.vocab = Vocabulary(out.meta.vocab);
  auto params = allocate_params<T>(out.meta.config.model, out.vocab.size(), out.hierarchy);

  std::uint32_t expected = 0;
  params.for_each([&](const std::string&, Tensor<T>&, bool) { ++expected; });
  const auto count = r.get<std::uint32_t>();
  if (count != expected) {
    throw DataError("checkpoint has " + std::to_string(count) + " tensors, model expects " + std::to_string(expected));
  }
  params.for_each([&](const std::string& name, Tensor<T>& t, bool) {
    const std::string got = r.bytes(r.get<std::uint32_t>());
    if (got != name) throw DataError("checkpoint tensor '" + got + "' where '" + name + "' was expected");
    Shape shape(r.get<std::uint32_t>());
    for (auto& e : shape) e = r.get<std::uint64_t>();
    if (shape != t.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (width == 8) t[i] = static_cast<T>(r.get<double>());
      else t[i] = static_cast<T>(r.get<float>());
    }
  });
  if (!r.done()) throw DataError("checkpoint '" + path + "' has trailing bytes");
  out.params = std::move(params);
  return out;
}

}  // namespace rhia
