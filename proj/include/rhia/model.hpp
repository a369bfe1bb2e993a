#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rhia/hierarchy.hpp"
#include "rhia/tensor.hpp"
#include "rhia/vocab.hpp"

namespace rhia {

// Architecture hyperparameters. Defaults are the published settings.
struct ModelConfig {
  std::size_t word_dim = 50;     // d_w, also the entity embedding width
  std::size_t pos_dim = 5;       // d_p
  std::size_t input_dim = 150;   // d_x
  std::size_t max_len = 120;     // n
  double smoothing = 0.05;       // lambda in the entity-aware gate
  std::size_t window = 3;        // omega
  std::size_t filters = 230;     // d_c
  std::size_t levels = 3;        // k
  double ln_eps = 1e-5;
  double init_std = 0.02;        // relation embeddings and h0
  // u^r is k d_f wide; unit gains make the first head updates overshoot at
  // lr 0.1, so the per-level layer norms start smaller.
  double ln_gain_init = 0.3;
  std::size_t classifier_hidden = 0;  // 0: single affine bag classifier
  bool freeze_heuristic = false;      // ablation: every cell reads h0, h_i never updated

  std::size_t feature_dim() const { return 3 * filters; }           // d_f
  std::size_t augmented_dim() const { return levels * feature_dim(); }  // k * d_f
  std::size_t position_rows() const { return 2 * max_len + 1; }
  // The gated entity branch is used as-is when it already has width d_x;
  // otherwise it is linearly projected to d_x first.
  bool projects_entities() const { return input_dim != 3 * word_dim; }
};

// Every learnable tensor of the network. Row-vector convention: a weight
// mapping m features to p features has shape [m x p].
template <class T>
struct ModelParams {
  Tensor<T> word_emb;    // [|V| x d_w]
  Tensor<T> pos_head;    // [(2n+1) x d_p]
  Tensor<T> pos_tail;
  Tensor<T> ent_gate_w;  // W^e [3d_w x d_x]
  Tensor<T> ent_gate_b;
  Tensor<T> pos_w;       // W^p [(d_w+2d_p) x d_x]
  Tensor<T> pos_b;
  Tensor<T> ent_proj;    // [3d_w x d_x], empty unless projects_entities()
  Tensor<T> conv_w;      // [window*d_x x d_c]
  Tensor<T> conv_b;
  std::vector<Tensor<T>> relation_emb;  // R^(i) [d_f x N^i]
  Tensor<T> h0;          // [d_f]
  Tensor<T> gate1_w, gate1_b;  // [2d_f x d_f], shared by all levels
  Tensor<T> gate2_w, gate2_b;
  Tensor<T> gate3_w, gate3_b;
  struct Level {
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // residual MLP d_f -> d_f -> d_f
    Tensor<T> ln_gain, ln_shift;
  };
  std::vector<Level> levels;
  Tensor<T> att_w;       // [2d_f x 1]
  Tensor<T> cls_hidden_w, cls_hidden_b;  // only with classifier_hidden > 0
  Tensor<T> cls_w, cls_b;                // [k d_f (or hidden) x |R|]
  Tensor<T> ord_w, ord_b;                // [k d_f x 2]

  // Visits (name, tensor, regularized) in a fixed order. Regularized tensors
  // are the weight matrices and relation embeddings; lookup tables, biases,
  // layer-norm parameters and h0 are not.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t, bool) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<T>& t, bool) { t.zero_grad(); });
  }

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f("word_emb", p.word_emb, false);
    f("pos_head", p.pos_head, false);
    f("pos_tail", p.pos_tail, false);
    f("ent_gate_w", p.ent_gate_w, true);
    f("ent_gate_b", p.ent_gate_b, false);
    f("pos_w", p.pos_w, true);
    f("pos_b", p.pos_b, false);
    if (!p.ent_proj.empty()) f("ent_proj", p.ent_proj, true);
    f("conv_w", p.conv_w, true);
    f("conv_b", p.conv_b, false);
    for (std::size_t i = 0; i < p.relation_emb.size(); ++i) f("relation_emb." + std::to_string(i), p.relation_emb[i], true);
    f("h0", p.h0, false);
    f("gate1_w", p.gate1_w, true);
    f("gate1_b", p.gate1_b, false);
    f("gate2_w", p.gate2_w, true);
    f("gate2_b", p.gate2_b, false);
    f("gate3_w", p.gate3_w, true);
    f("gate3_b", p.gate3_b, false);
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
      const std::string pre = "level." + std::to_string(i) + ".";
      f(pre + "mlp_w1", p.levels[i].mlp_w1, true);
      f(pre + "mlp_b1", p.levels[i].mlp_b1, false);
      f(pre + "mlp_w2", p.levels[i].mlp_w2, true);
      f(pre + "mlp_b2", p.levels[i].mlp_b2, false);
      f(pre + "ln_gain", p.levels[i].ln_gain, false);
      f(pre + "ln_shift", p.levels[i].ln_shift, false);
    }
    f("att_w", p.att_w, true);
    if (!p.cls_hidden_w.empty()) {
      f("cls_hidden_w", p.cls_hidden_w, true);
      f("cls_hidden_b", p.cls_hidden_b, false);
    }
    f("cls_w", p.cls_w, true);
    f("cls_b", p.cls_b, false);
    f("ord_w", p.ord_w, true);
    f("ord_b", p.ord_b, false);
  }
};

// Allocates zero tensors of the right shapes for `cfg` over the given
// vocabulary size and hierarchy.
template <class T>
ModelParams<T> allocate_params(const ModelConfig& cfg, std::size_t vocab_size, const RelationHierarchy& h) {
  const std::size_t df = cfg.feature_dim();
  ModelParams<T> p;
  p.word_emb = Tensor<T>({vocab_size, cfg.word_dim});
  p.pos_head = Tensor<T>({cfg.position_rows(), cfg.pos_dim});
  p.pos_tail = Tensor<T>({cfg.position_rows(), cfg.pos_dim});
  p.ent_gate_w = Tensor<T>({3 * cfg.word_dim, cfg.input_dim});
  p.ent_gate_b = Tensor<T>({cfg.input_dim});
  p.pos_w = Tensor<T>({cfg.word_dim + 2 * cfg.pos_dim, cfg.input_dim});
  p.pos_b = Tensor<T>({cfg.input_dim});
  if (cfg.projects_entities()) p.ent_proj = Tensor<T>({3 * cfg.word_dim, cfg.input_dim});
  p.conv_w = Tensor<T>({cfg.window * cfg.input_dim, cfg.filters});
  p.conv_b = Tensor<T>({cfg.filters});
  if (h.depth() != cfg.levels) {
    throw UsageError("hierarchy depth " + std::to_string(h.depth()) + " differs from levels = " +
                     std::to_string(cfg.levels));
  }
  for (std::size_t i = 0; i < cfg.levels; ++i) p.relation_emb.emplace_back(Shape{df, h.level_size(i)});
  p.h0 = Tensor<T>({df});
  for (auto* w : {&p.gate1_w, &p.gate2_w, &p.gate3_w}) *w = Tensor<T>({2 * df, df});
  for (auto* b : {&p.gate1_b, &p.gate2_b, &p.gate3_b}) *b = Tensor<T>({df});
  p.levels.resize(cfg.levels);
  for (auto& l : p.levels) {
    l.mlp_w1 = Tensor<T>({df, df});
    l.mlp_b1 = Tensor<T>({df});
    l.mlp_w2 = Tensor<T>({df, df});
    l.mlp_b2 = Tensor<T>({df});
    l.ln_gain = Tensor<T>({df});
    l.ln_shift = Tensor<T>({df});
  }
  p.att_w = Tensor<T>({2 * df, 1});
  std::size_t cls_in = cfg.augmented_dim();
  if (cfg.classifier_hidden > 0) {
    p.cls_hidden_w = Tensor<T>({cls_in, cfg.classifier_hidden});
    p.cls_hidden_b = Tensor<T>({cfg.classifier_hidden});
    cls_in = cfg.classifier_hidden;
  }
  p.cls_w = Tensor<T>({cls_in, h.num_relations()});
  p.cls_b = Tensor<T>({h.num_relations()});
  p.ord_w = Tensor<T>({cfg.augmented_dim(), 2});
  p.ord_b = Tensor<T>({2});
  return p;
}

// Random initialization: Xavier-uniform weight matrices, Gaussian(0, init_std)
// relation embeddings and h0, Gaussian(0, 1/sqrt(d_w)) word vectors unless a
// pre-trained table is supplied, layer-norm gains of ln_gain_init, zero biases.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, const Vocabulary& vocab, const RelationHierarchy& h,
                           std::uint64_t seed, const EmbeddingTable* pretrained = nullptr) {
  ModelParams<T> p = allocate_params<T>(cfg, vocab.size(), h);
  std::mt19937_64 rng(seed);
  auto gaussian = [&](Tensor<T>& t, double std) {
    std::normal_distribution<double> d(0.0, std);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
  };
  auto xavier = [&](Tensor<T>& t) {
    const double a = std::sqrt(6.0 / double(t.rows() + t.cols()));
    std::uniform_real_distribution<double> d(-a, a);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
  };

  if (pretrained) {
    if (pretrained->dim != cfg.word_dim) {
      throw DataError("embedding dimension " + std::to_string(pretrained->dim) + " differs from word_dim = " +
                      std::to_string(cfg.word_dim));
    }
    if (!(pretrained->vocab == vocab)) throw DataError("vocabulary does not match the embedding table");
    for (std::size_t i = 0; i < p.word_emb.size(); ++i) p.word_emb[i] = static_cast<T>(pretrained->values[i]);
    // UNK gets a random vector, PAD stays zero
    std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(double(cfg.word_dim)));
    for (std::size_t j = 0; j < cfg.word_dim; ++j) p.word_emb.at(vocab.unk(), j) = static_cast<T>(d(rng));
  } else {
    gaussian(p.word_emb, 1.0 / std::sqrt(double(cfg.word_dim)));
    for (std::size_t j = 0; j < cfg.word_dim; ++j) p.word_emb.at(vocab.pad(), j) = T(0);
  }
  gaussian(p.pos_head, 1.0 / std::sqrt(double(cfg.pos_dim)));
  gaussian(p.pos_tail, 1.0 / std::sqrt(double(cfg.pos_dim)));
  xavier(p.ent_gate_w);
  xavier(p.pos_w);
  if (!p.ent_proj.empty()) xavier(p.ent_proj);
  xavier(p.conv_w);
  for (auto& r : p.relation_emb) gaussian(r, cfg.init_std);
  gaussian(p.h0, cfg.init_std);
  xavier(p.gate1_w);
  xavier(p.gate2_w);
  xavier(p.gate3_w);
  for (auto& l : p.levels) {
    xavier(l.mlp_w1);
    xavier(l.mlp_w2);
    l.ln_gain.fill(static_cast<T>(cfg.ln_gain_init));
  }
  xavier(p.att_w);
  if (!p.cls_hidden_w.empty()) xavier(p.cls_hidden_w);
  xavier(p.cls_w);
  xavier(p.ord_w);
  return p;
}

template <class U, class T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  ModelParams<U> dst;
  dst.relation_emb.resize(src.relation_emb.size());
  dst.levels.resize(src.levels.size());
  // visit both in lockstep; names and order are identical
  std::vector<const Tensor<T>*> from;
  src.for_each([&](const std::string&, const Tensor<T>& t, bool) { from.push_back(&t); });
  if (!src.ent_proj.empty()) dst.ent_proj = Tensor<U>(src.ent_proj.shape());
  if (!src.cls_hidden_w.empty()) {
    dst.cls_hidden_w = Tensor<U>(src.cls_hidden_w.shape());
    dst.cls_hidden_b = Tensor<U>(src.cls_hidden_b.shape());
  }
  std::size_t i = 0;
  dst.for_each([&](const std::string&, Tensor<U>& t, bool) { t = from[i++]->template cast<U>(); });
  return dst;
}

}  // namespace rhia
