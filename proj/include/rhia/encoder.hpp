#pragma once

#include "rhia/batch.hpp"
#include "rhia/embed.hpp"
#include "rhia/ops.hpp"

namespace rhia {

struct EncoderDiagnostics {
  std::size_t empty_segments = 0;
};

// PCNN: same-padded convolution over each sentence, max-pooling over the three
// segments cut at the entities' last tokens (in appearance order), tanh.
// Row s of the result is u_s = tanh([max f^(1); max f^(2); max f^(3)]).
template <class T>
Var<T> pcnn_encode(Var<T> x, Var<T> conv_w, Var<T> conv_b, const TokenBatch& batch, std::size_t window,
                   EncoderDiagnostics* diag = nullptr) {
  using namespace ops;
  auto f = conv1d(x, conv_w, conv_b, batch.offsets, window);
  return tanh(segment_max(f, batch.offsets, batch.splits, diag ? &diag->empty_segments : nullptr));
}

// Sentence representations U [S x d_f] for every sentence of the batch.
template <class T>
Var<T> encode_sentences(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, const TokenBatch& batch,
                        EncoderDiagnostics* diag = nullptr) {
  auto x = entity_aware_embed(tape, p, cfg, batch);
  return pcnn_encode(x, tape.param(p.conv_w), tape.param(p.conv_b), batch, cfg.window, diag);
}

// U for one bag, one row per sentence.
template <class T>
Var<T> encode_bag(Tape<T>& tape, ModelParams<T>& p, const ModelConfig& cfg, const Bag& bag,
                  EncoderDiagnostics* diag = nullptr) {
  if (bag.instances.empty()) throw DataError("encode_bag: empty bag");
  TokenBatch batch;
  for (const auto& inst : bag.instances) batch.add(inst, cfg);
  return encode_sentences(tape, p, cfg, batch, diag);
}

}  // namespace rhia
