#pragma once

#include "rhia/batch.hpp"
#include "rhia/model.hpp"
#include "rhia/ops.hpp"

namespace rhia {

// Entity-aware input representation, one row per token:
//   x^e = [v_i; v_head; v_tail],  x^p = [v_i; p_i^head; p_i^tail]
//   A   = sigmoid(lambda * (x^e W^e + b^e))
//   X   = A * x^e + (1 - A) * tanh(x^p W^p + b^p)
// When d_x != 3 d_w the entity branch x^e is projected to d_x before gating.
template <class T>
Var<T> entity_aware_embed(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, const TokenBatch& batch) {
  using namespace ops;
  auto table = tape.param(p.word_emb);
  auto words = gather_rows(table, batch.words);
  auto heads = gather_rows(table, batch.head_ent);
  auto tails = gather_rows(table, batch.tail_ent);
  auto ph = gather_rows(tape.param(p.pos_head), batch.head_pos);
  auto pt = gather_rows(tape.param(p.pos_tail), batch.tail_pos);

  auto xe = concat_cols<T>({words, heads, tails});
  auto xp = concat_cols<T>({words, ph, pt});
  auto gate = sigmoid(scale(affine(xe, tape.param(p.ent_gate_w), tape.param(p.ent_gate_b)), T(cfg.smoothing)));
  auto pos_branch = tanh(affine(xp, tape.param(p.pos_w), tape.param(p.pos_b)));
  auto ent_branch = cfg.projects_entities() ? matmul(xe, tape.param(p.ent_proj)) : xe;
  return ops::gate(gate, ent_branch, pos_branch);
}

}  // namespace rhia
