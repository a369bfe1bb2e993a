#pragma once

#include <random>
#include <vector>

#include "rhia/model.hpp"
#include "rhia/ops.hpp"

namespace rhia {

// Intermediates of one RHI cell for a stack of sentences (one row each).
template <class T>
struct CellTrace {
  Var<T> alpha_logits;  // U R              [S x N]
  Var<T> alpha;         // softmax(U R)
  Var<T> alpha_hier;    // softmax(H R)
  Var<T> c, c_hier;     // [S x d_f]
  Var<T> beta1, c_hat;
  Var<T> beta2, u_hat;
  Var<T> u;             // u^(i)
  Var<T> h;             // h_i
  bool h_updated = true;
};

// One level of the recursion. `u` and `h_prev` are [S x d_f].
//   alpha = softmax(u R),      c      = alpha R^T
//   alpha_hier = softmax(h R), c_hier = alpha_hier R^T
//   c_hat = gate(sigmoid([u; h] W1 + b1), c, c_hier)
//   u_hat = gate(sigmoid([u; c_hat] W2 + b2), u, c_hat)
//   u_i   = LN(u + MLP(u_hat))
//   h_i   = gate(sigmoid([h; c_hat] W3 + b3), h, c_hat)
template <class T>
CellTrace<T> rhi_cell(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, Var<T> u, Var<T> h_prev,
                      std::size_t level) {
  using namespace ops;
  if (level >= p.relation_emb.size()) throw UsageError("rhi_cell: level " + std::to_string(level) + " out of range");
  auto r = tape.param(p.relation_emb[level]);
  auto& lv = p.levels[level];
  CellTrace<T> t;
  t.alpha_logits = matmul(u, r);
  t.alpha = softmax_rows(t.alpha_logits);
  t.c = matmul(t.alpha, r, false, true);
  t.alpha_hier = softmax_rows(matmul(h_prev, r));
  t.c_hier = matmul(t.alpha_hier, r, false, true);

  t.beta1 = sigmoid(affine(concat_cols<T>({u, h_prev}), tape.param(p.gate1_w), tape.param(p.gate1_b)));
  t.c_hat = gate(t.beta1, t.c, t.c_hier);
  t.beta2 = sigmoid(affine(concat_cols<T>({u, t.c_hat}), tape.param(p.gate2_w), tape.param(p.gate2_b)));
  t.u_hat = gate(t.beta2, u, t.c_hat);

  auto hidden = relu(affine(t.u_hat, tape.param(lv.mlp_w1), tape.param(lv.mlp_b1)));
  auto mlp = affine(hidden, tape.param(lv.mlp_w2), tape.param(lv.mlp_b2));
  t.u = layer_norm_rows(add(u, mlp), tape.param(lv.ln_gain), tape.param(lv.ln_shift), T(cfg.ln_eps));

  if (cfg.freeze_heuristic) {
    t.h = h_prev;
    t.h_updated = false;
  } else {
    auto beta3 = sigmoid(affine(concat_cols<T>({h_prev, t.c_hat}), tape.param(p.gate3_w), tape.param(p.gate3_b)));
    t.h = gate(beta3, h_prev, t.c_hat);
  }
  return t;
}

template <class T>
struct Augmented {
  Var<T> ur;      // [S x k d_f]
  Var<T> h_last;  // [S x d_f]
  std::vector<CellTrace<T>> cells;
};

// Runs the k cells from h0, threading the heuristic state; u^r concatenates
// the per-level outputs.
template <class T>
Augmented<T> relation_augment(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, Var<T> u) {
  using namespace ops;
  Augmented<T> out;
  Var<T> h = broadcast_rows(tape.param(p.h0), u.rows());
  std::vector<Var<T>> parts;
  for (std::size_t i = 0; i < p.relation_emb.size(); ++i) {
    out.cells.push_back(rhi_cell(tape, p, cfg, u, h, i));
    parts.push_back(out.cells.back().u);
    h = out.cells.back().h;
  }
  out.ur = parts.size() == 1 ? parts.front() : concat_cols<T>(parts);
  out.h_last = h;
  return out;
}

// b for every bag: scores = [U; H] w_att, softmax within each bag, weighted
// sum of the u^r rows. Returns [bags x k d_f].
template <class T>
Var<T> attention_pool(Var<T> ur, Var<T> u, Var<T> h, Var<T> att_w, const std::vector<std::uint32_t>& bag_offsets,
                      Var<T>* weights_out = nullptr) {
  using namespace ops;
  auto scores = matmul(concat_cols<T>({u, h}), att_w);
  auto w = segment_softmax(scores, bag_offsets);
  if (weights_out) *weights_out = w;
  return segment_weighted_sum(w, ur, bag_offsets);
}

// Bag logits before the softmax of o_b. Dropout on b only when `rng` is given.
template <class T>
Var<T> classify_logits(Tape<T>& tape, ModelParams<T>& p, Var<T> b, T dropout_rate, std::mt19937_64* rng) {
  using namespace ops;
  if (rng && dropout_rate > T(0)) b = dropout(b, dropout_rate, *rng);
  if (!p.cls_hidden_w.empty()) b = relu(affine(b, tape.param(p.cls_hidden_w), tape.param(p.cls_hidden_b)));
  return affine(b, tape.param(p.cls_w), tape.param(p.cls_b));
}

// o_b: distribution over relations for every bag.
template <class T>
Var<T> classify_bag(Tape<T>& tape, ModelParams<T>& p, Var<T> b, T dropout_rate = T(0),
                    std::mt19937_64* rng = nullptr) {
  return ops::softmax_rows(classify_logits(tape, p, b, dropout_rate, rng));
}

}  // namespace rhia
