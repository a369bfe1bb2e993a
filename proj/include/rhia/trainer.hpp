#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rhia/checkpoint.hpp"
#include "rhia/config.hpp"
#include "rhia/eval.hpp"
#include "rhia/network.hpp"

namespace rhia {

// Everything training needs besides the configuration.
struct TrainData {
  std::vector<Bag> bags;
  RelationHierarchy hierarchy;
  Vocabulary vocab;
  std::vector<std::size_t> relation_instances;  // training instances per relation
  const EmbeddingTable* embeddings = nullptr;
};

struct EpochStats {
  std::size_t epoch = 0;
  double l_re = 0, l_hier = 0, l_ord = 0, reg = 0;  // bag-weighted means over the epoch; reg is the weighted penalty
  double total = 0;
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_auc = -1;
};

// Held-out validation bags: a seeded sample of ceil(fraction * N) bags, never
// all of them. Returns (train, validation) index lists in corpus order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                                      std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t nval = static_cast<std::size_t>(std::ceil(fraction * double(n)));
  if (nval >= n) nval = n > 0 ? n - 1 : 0;
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// theta <- theta - lr * grad for every parameter.
template <class T>
void sgd_step(ModelParams<T>& p, T lr) {
  p.for_each([&](const std::string&, Tensor<T>& t, bool) {
    if (lr == T(0)) return;
    auto g = t.grad();
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  });
}

inline void write_metrics_header(std::ostream& os) { os << "epoch\tL_re\tL_hier\tL_ord\treg\tval_AUC\n"; }

inline void write_metrics_line(std::ostream& os, const EpochStats& s) {
  os << s.epoch << std::fixed << std::setprecision(6) << '\t' << s.l_re << '\t' << s.l_hier << '\t' << s.l_ord
     << '\t' << s.reg << '\t';
  if (std::isnan(s.val_auc)) os << "nan";
  else os << s.val_auc;
  os << '\n' << std::flush;
  os.unsetf(std::ios::floatfield);
}

template <class T>
CheckpointMeta checkpoint_meta(const TrainData& data, const RunConfig& cfg, std::size_t epoch, double val_auc) {
  CheckpointMeta m;
  m.config = cfg;
  m.relations = data.hierarchy.relations();
  m.vocab = data.vocab.words();
  m.train_relation_instances = data.relation_instances;
  m.epoch = epoch;
  m.val_auc = val_auc;
  return m;
}

// Mini-batch SGD. After every epoch the validation AUC is computed; the best
// epoch's parameters are written to `checkpoint_path` (the last epoch's when
// there is no validation signal). A non-finite loss aborts with NumericError
// and leaves the last saved checkpoint untouched.
template <class T>
TrainResult train(const TrainData& data, const RunConfig& cfg, const std::string& checkpoint_path,
                  std::ostream* metrics = nullptr, ModelParams<T>* final_params = nullptr) {
  validate_config(cfg);
  if (data.bags.empty()) throw DataError("train: no training bags");
  const auto& tc = cfg.train;
  auto params = init_params<T>(cfg.model, data.vocab, data.hierarchy, tc.seed, data.embeddings);
  auto [train_idx, val_idx] = split_validation(data.bags.size(), tc.val_fraction, tc.seed);
  std::vector<Bag> val_bags;
  for (auto i : val_idx) val_bags.push_back(data.bags[i]);
  const std::size_t val_facts = total_positive_facts(val_bags);

  std::mt19937_64 order_rng(tc.seed + 1);
  std::mt19937_64 dropout_rng(tc.seed + 2);
  TrainResult result;
  if (metrics) write_metrics_header(*metrics);
  T lr = static_cast<T>(tc.lr);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    EpochStats st;
    st.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < train_idx.size(); lo += tc.batch) {
      const std::size_t hi = std::min(train_idx.size(), lo + tc.batch);
      std::vector<const Bag*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&data.bags[train_idx[i]]);
      const auto batch = make_batch(std::span<const Bag* const>(ptrs), data.hierarchy, cfg.model);

      params.zero_grad();
      Tape<T> tape;
      ForwardOptions fo;
      fo.dropout = tc.dropout;
      fo.rng = &dropout_rng;
      fo.loss = &cfg.loss;
      auto g = forward(tape, params, cfg.model, batch, fo);
      const double loss = static_cast<double>(g.loss.scalar());
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(lo / tc.batch + 1));
      }
      tape.backward(g.loss);
      sgd_step(params, lr);

      const double w = double(hi - lo);
      st.l_re += w * g.l_re.scalar();
      st.l_hier += w * g.l_hier.scalar();
      st.l_ord += w * g.l_ord.scalar();
      st.reg += w * cfg.loss.reg * g.l_reg.scalar();
      st.total += w * loss;
      seen += hi - lo;
    }
    for (double* v : {&st.l_re, &st.l_hier, &st.l_ord, &st.reg, &st.total}) *v /= double(seen);

    bool improved = false;
    if (!val_bags.empty() && val_facts > 0) {
      const auto probs = score_bags(params, cfg.model, data.hierarchy, val_bags, tc.threads);
      st.val_auc = pr_curve(rank_predictions(probs, val_bags), val_facts).auc;
      improved = st.val_auc > result.best_val_auc;
    } else {
      improved = true;
    }
    if (metrics) write_metrics_line(*metrics, st);
    result.history.push_back(st);
    if (improved) {
      result.best_epoch = epoch;
      result.best_val_auc = std::isnan(st.val_auc) ? result.best_val_auc : st.val_auc;
      if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, params,
                        checkpoint_meta<T>(data, cfg, epoch, std::isnan(st.val_auc) ? 0.0 : st.val_auc));
      }
      since_best = 0;
    } else if (tc.patience > 0 && ++since_best >= tc.patience) {
      break;
    }
    lr = static_cast<T>(lr * tc.lr_decay);
  }
  if (final_params) *final_params = std::move(params);
  return result;
}

}  // namespace rhia
