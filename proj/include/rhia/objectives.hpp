#pragma once

#include <vector>

#include "rhia/attention.hpp"
#include "rhia/model.hpp"
#include "rhia/ops.hpp"

namespace rhia {

struct LossWeights {
  double mu = 1.0;   // hierarchy term
  double xi = 1.0;   // entity-order term
  double reg = 1e-5; // L2 coefficient
  bool reg_embeddings = false;  // also penalize word/position tables
};

// Logits of the order head for every sentence: u^r W_ord + b_ord.
template <class T>
Var<T> eop_logits(Tape<T>& tape, ModelParams<T>& p, Var<T> ur) {
  return ops::affine(ur, tape.param(p.ord_w), tape.param(p.ord_b));
}

// Distribution over {HeadFirst, TailFirst} per sentence.
template <class T>
Var<T> eop_predict(Tape<T>& tape, ModelParams<T>& p, Var<T> ur) {
  return ops::softmax_rows(eop_logits(tape, p, ur));
}

// Mean -log o_b[gold] over bags, from pre-softmax logits.
template <class T>
Var<T> loss_re(Var<T> bag_logits, const std::vector<std::uint32_t>& gold) {
  return ops::nll(ops::log_softmax_rows(bag_logits), gold);
}

// Mean over sentences and levels of -log alpha^(l)[r^l]. Only the sentence
// branch (alpha from u R) enters; alpha_hier never does.
template <class T>
Var<T> loss_hier(const std::vector<CellTrace<T>>& cells, const std::vector<std::vector<std::uint32_t>>& targets) {
  if (cells.empty() || cells.size() != targets.size()) throw UsageError("loss_hier: one target row per level required");
  std::vector<Var<T>> terms;
  std::vector<T> weights;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    terms.push_back(ops::nll(ops::log_softmax_rows(cells[l].alpha_logits), targets[l]));
    weights.push_back(T(1) / T(cells.size()));
  }
  return ops::weighted_sum(terms, weights);
}

// Mean order NLL over all sentences.
template <class T>
Var<T> loss_ord(Var<T> order_logits, const std::vector<std::uint32_t>& labels) {
  return ops::nll(ops::log_softmax_rows(order_logits), labels);
}

// Sum of squares over the regularized parameter set. The order head is
// inactive when xi = 0 and is then left out of the penalty as well.
template <class T>
Var<T> l2_penalty(Tape<T>& tape, ModelParams<T>& p, const LossWeights& w) {
  std::vector<Var<T>> terms;
  p.for_each([&](const std::string& name, Tensor<T>& t, bool regularized) {
    const bool table = name == "word_emb" || name == "pos_head" || name == "pos_tail";
    if (w.xi == 0.0 && name == "ord_w") return;
    if (regularized || (w.reg_embeddings && table)) terms.push_back(ops::sum_squares(tape.param(t)));
  });
  return ops::weighted_sum(terms, std::vector<T>(terms.size(), T(1)));
}

// L = L_re + mu L_hier + xi L_ord + reg ||theta||^2. A term with weight 0
// passes no gradient back, so e.g. xi = 0 leaves the order head's grads at 0.
template <class T>
Var<T> total_loss(Var<T> re, Var<T> hier, Var<T> ord, Var<T> reg_norm, const LossWeights& w) {
  return ops::weighted_sum<T>({re, hier, ord, reg_norm}, {T(1), T(w.mu), T(w.xi), T(w.reg)});
}

}  // namespace rhia
