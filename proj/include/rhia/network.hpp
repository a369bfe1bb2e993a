#pragma once

#include <random>
#include <vector>

#include "rhia/attention.hpp"
#include "rhia/batch.hpp"
#include "rhia/encoder.hpp"
#include "rhia/objectives.hpp"

namespace rhia {

template <class T>
struct BatchGraph {
  Var<T> u;             // [S x d_f]
  Var<T> ur;            // [S x k d_f]
  Var<T> h_last;        // [S x d_f]
  std::vector<CellTrace<T>> cells;
  Var<T> pool_weights;  // [S x 1]
  Var<T> bag_repr;      // [B x k d_f]
  Var<T> bag_logits;    // [B x |R|]
  Var<T> order_logits;  // [S x 2]
  EncoderDiagnostics diag;

  // Filled when losses are requested.
  bool has_loss = false;
  Var<T> loss, l_re, l_hier, l_ord, l_reg;
};

struct ForwardOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;    // dropout is active only with an rng
  const LossWeights* loss = nullptr; // compute the objective when set
};

// Full forward pass over every bag of the batch.
template <class T>
BatchGraph<T> forward(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, const BagBatch& batch,
                      const ForwardOptions& opt = {}) {
  if (batch.bags() == 0) throw DataError("forward: empty batch");
  BatchGraph<T> g;
  g.u = encode_sentences(tape, p, cfg, batch.tokens, &g.diag);
  auto aug = relation_augment(tape, p, cfg, g.u);
  g.ur = aug.ur;
  g.h_last = aug.h_last;
  g.cells = std::move(aug.cells);
  g.bag_repr = attention_pool(g.ur, g.u, g.h_last, tape.param(p.att_w), batch.bag_offsets, &g.pool_weights);
  g.bag_logits = classify_logits(tape, p, g.bag_repr, T(opt.dropout), opt.rng);
  g.order_logits = eop_logits(tape, p, g.ur);
  if (opt.loss) {
    g.has_loss = true;
    g.l_re = loss_re(g.bag_logits, batch.relations);
    g.l_hier = loss_hier(g.cells, batch.level_targets);
    g.l_ord = loss_ord(g.order_logits, batch.order_labels);
    g.l_reg = l2_penalty(tape, p, *opt.loss);
    g.loss = total_loss(g.l_re, g.l_hier, g.l_ord, g.l_reg, *opt.loss);
  }
  return g;
}

// o_b rows for every bag, dropout off. Returns [B x |R|] probabilities.
template <class T>
Tensor<T> predict_bags(ModelParams<T>& p, const ModelConfig& cfg, const BagBatch& batch) {
  Tape<T> tape;
  auto g = forward(tape, p, cfg, batch);
  return ops::softmax_rows(g.bag_logits).value();
}

}  // namespace rhia
