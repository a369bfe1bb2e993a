#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rhia/keyvalue.hpp"
#include "rhia/model.hpp"
#include "rhia/objectives.hpp"

namespace rhia {

struct TrainConfig {
  double lr = 0.1;            // gamma
  double dropout = 0.5;       // on bag representations
  std::size_t batch = 160;    // bags per step
  std::size_t epochs = 15;
  std::uint64_t seed = 1;
  double val_fraction = 0.05; // training bags held out for model selection
  double lr_decay = 1.0;      // lr multiplier applied after every epoch
  std::size_t patience = 0;   // stop after this many epochs without a better val AUC; 0 never stops
  std::size_t threads = 1;    // evaluation workers
  std::string precision = "float";  // float | double
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
};

// One entry per configuration key; flags and config files share the names.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

namespace detail {

// Shortest text that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class M>
ConfigKey size_key(std::string name, std::string help, M member) {
  return {name, std::move(help), [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_size(name, v); }};
}

template <class M>
ConfigKey real_key(std::string name, std::string help, M member) {
  return {name, std::move(help), [member](const RunConfig& c) { return num(member(const_cast<RunConfig&>(c))); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); }};
}

template <class M>
ConfigKey bool_key(std::string name, std::string help, M member) {
  return {name, std::move(help),
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); }};
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = {
      size_key("word_dim", "word/entity embedding width d_w", [](RunConfig& c) -> auto& { return c.model.word_dim; }),
      size_key("pos_dim", "position embedding width d_p", [](RunConfig& c) -> auto& { return c.model.pos_dim; }),
      size_key("input_dim", "entity-aware embedding width d_x", [](RunConfig& c) -> auto& { return c.model.input_dim; }),
      size_key("max_len", "maximum sentence length n", [](RunConfig& c) -> auto& { return c.model.max_len; }),
      real_key("smoothing", "entity gate smoothing lambda", [](RunConfig& c) -> auto& { return c.model.smoothing; }),
      size_key("window", "convolution window", [](RunConfig& c) -> auto& { return c.model.window; }),
      size_key("filters", "convolution filters d_c", [](RunConfig& c) -> auto& { return c.model.filters; }),
      size_key("levels", "hierarchy depth k", [](RunConfig& c) -> auto& { return c.model.levels; }),
      real_key("ln_eps", "layer-norm epsilon", [](RunConfig& c) -> auto& { return c.model.ln_eps; }),
      real_key("init_std", "std of relation embeddings and h0 at init", [](RunConfig& c) -> auto& { return c.model.init_std; }),
      real_key("ln_gain_init", "initial layer-norm gain",
               [](RunConfig& c) -> auto& { return c.model.ln_gain_init; }),
      size_key("classifier_hidden", "hidden width of the bag classifier; 0 is a single affine layer",
               [](RunConfig& c) -> auto& { return c.model.classifier_hidden; }),
      bool_key("freeze_heuristic", "ablation: keep the heuristic state at h0 in every cell",
               [](RunConfig& c) -> auto& { return c.model.freeze_heuristic; }),
      real_key("lr", "SGD learning rate", [](RunConfig& c) -> auto& { return c.train.lr; }),
      real_key("dropout", "dropout rate on bag representations", [](RunConfig& c) -> auto& { return c.train.dropout; }),
      size_key("batch", "bags per SGD step", [](RunConfig& c) -> auto& { return c.train.batch; }),
      size_key("epochs", "training epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }),
      size_key("seed", "random seed", [](RunConfig& c) -> auto& { return c.train.seed; }),
      real_key("val_fraction", "fraction of training bags held out for validation",
               [](RunConfig& c) -> auto& { return c.train.val_fraction; }),
      real_key("lr_decay", "learning-rate multiplier per epoch", [](RunConfig& c) -> auto& { return c.train.lr_decay; }),
      size_key("patience", "early-stopping patience in epochs (0: off)", [](RunConfig& c) -> auto& { return c.train.patience; }),
      size_key("threads", "evaluation threads", [](RunConfig& c) -> auto& { return c.train.threads; }),
      {"precision", "float or double",
       [](const RunConfig& c) { return c.train.precision; },
       [](RunConfig& c, const std::string& v) {
         if (v != "float" && v != "double") throw UsageError("'precision' must be float or double, got '" + v + "'");
         c.train.precision = v;
       }},
      real_key("mu", "weight of the hierarchy loss", [](RunConfig& c) -> auto& { return c.loss.mu; }),
      real_key("xi", "weight of the entity-order loss", [](RunConfig& c) -> auto& { return c.loss.xi; }),
      real_key("reg", "L2 coefficient", [](RunConfig& c) -> auto& { return c.loss.reg; }),
      bool_key("reg_embeddings", "also penalize word and position tables",
               [](RunConfig& c) -> auto& { return c.loss.reg_embeddings; }),
  };
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline std::string valid_keys_list() {
  std::string out;
  for (const auto& k : config_keys()) out += (out.empty() ? "" : ", ") + k.name;
  return out;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw UsageError("unknown config key '" + key + "'; valid keys: " + valid_keys_list());
  k->set(c, value);
}

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& where) {
  for (const auto& [k, v] : parse_key_values(text, where)) set_config_value(c, k, v);
}

// Every key with its resolved value, in registry order.
inline std::vector<std::pair<std::string, std::string>> config_values(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_values(c)) out += k + " = " + v + "\n";
  return out;
}

inline void validate_config(const RunConfig& c) {
  const auto& m = c.model;
  auto fail = [](const std::string& msg) { throw UsageError("config: " + msg); };
  if (m.word_dim == 0 || m.pos_dim == 0 || m.input_dim == 0 || m.filters == 0) fail("dimensions must be positive");
  if (m.max_len < 2) fail("max_len must be at least 2");
  if (m.window == 0 || m.window % 2 == 0) fail("window must be odd");
  if (m.levels == 0) fail("levels must be at least 1");
  if (!(m.ln_eps >= 0)) fail("ln_eps must be non-negative");
  const auto& t = c.train;
  if (!(t.lr >= 0)) fail("lr must be non-negative");
  if (!(t.dropout >= 0 && t.dropout < 1)) fail("dropout must be in [0, 1)");
  if (t.batch == 0) fail("batch must be at least 1");
  if (!(t.val_fraction >= 0 && t.val_fraction < 1)) fail("val_fraction must be in [0, 1)");
  if (!(t.lr_decay > 0)) fail("lr_decay must be positive");
  if (t.threads == 0) fail("threads must be at least 1");
  if (!(c.loss.mu >= 0 && c.loss.xi >= 0 && c.loss.reg >= 0)) fail("loss weights must be non-negative");
}

}  // namespace rhia
