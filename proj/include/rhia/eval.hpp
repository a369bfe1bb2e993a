#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rhia/network.hpp"

namespace rhia {

inline constexpr std::size_t kPrecisionAtN[] = {100, 200, 300, 500, 1000, 2000};
inline constexpr std::size_t kRetentionN[] = {100, 200, 300};
inline constexpr std::size_t kHitsThresholds[] = {100, 200};
inline constexpr std::size_t kHitsK[] = {10, 15, 20};

// o_b for every bag (dropout off), as doubles. Bags are scored in fixed chunks
// so the numbers do not depend on the thread count.
template <class T>
std::vector<std::vector<double>> score_bags(ModelParams<T>& p, const ModelConfig& cfg, const RelationHierarchy& h,
                                            const std::vector<Bag>& bags, std::size_t threads = 1,
                                            std::size_t chunk = 64) {
  std::vector<std::vector<double>> out(bags.size());
  const std::size_t chunks = (bags.size() + chunk - 1) / chunk;
  auto run = [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(bags.size(), lo + chunk);
    std::vector<const Bag*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&bags[i]);
    const auto batch = make_batch(std::span<const Bag* const>(ptrs), h, cfg);
    const Tensor<T> probs = predict_bags(p, cfg, batch);
    const std::size_t r = probs.cols();
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].resize(r);
      for (std::size_t j = 0; j < r; ++j) out[i][j] = static_cast<double>(probs.at(i - lo, j));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < chunks; c += threads) run(c);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

struct Prediction {
  std::uint32_t bag = 0;
  std::uint32_t relation = 0;
  double score = 0;
  bool correct = false;
};

// Score descending, then (bag, relation) ascending.
inline bool prediction_before(const Prediction& a, const Prediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.bag != b.bag) return a.bag < b.bag;
  return a.relation < b.relation;
}

// One prediction per (bag, non-NA relation), sorted.
inline std::vector<Prediction> rank_predictions(const std::vector<std::vector<double>>& probs,
                                                const std::vector<Bag>& bags) {
  std::vector<Prediction> out;
  for (std::uint32_t b = 0; b < probs.size(); ++b) {
    for (std::uint32_t r = 0; r < probs[b].size(); ++r) {
      if (r == RelationHierarchy::na()) continue;
      out.push_back({b, r, probs[b][r], bags[b].has_label(r)});
    }
  }
  std::sort(out.begin(), out.end(), prediction_before);
  return out;
}

// Distinct (bag, non-NA gold relation) pairs.
inline std::size_t total_positive_facts(const std::vector<Bag>& bags) {
  std::size_t n = 0;
  for (const auto& b : bags)
    for (auto r : b.labels) n += r != RelationHierarchy::na();
  return n;
}

struct PrPoint {
  double precision = 0;
  double recall = 0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // one per rank
  double auc = 0;               // sum_i (R_i - R_{i-1}) P_i
  double max_f1 = 0;
};

inline PrCurve pr_curve(const std::vector<bool>& correct, std::size_t total_positive) {
  if (total_positive == 0) throw DataError("pr_curve: no positive facts in the test set");
  PrCurve c;
  c.points.reserve(correct.size());
  std::size_t hits = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    hits += correct[i];
    const double p = double(hits) / double(i + 1);
    const double r = double(hits) / double(total_positive);
    c.points.push_back({p, r});
    c.auc += (r - prev_recall) * p;
    prev_recall = r;
    if (p + r > 0) c.max_f1 = std::max(c.max_f1, 2 * p * r / (p + r));
  }
  return c;
}

inline std::vector<bool> correctness(const std::vector<Prediction>& ranked) {
  std::vector<bool> out(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) out[i] = ranked[i].correct;
  return out;
}

inline PrCurve pr_curve(const std::vector<Prediction>& ranked, std::size_t total_positive) {
  return pr_curve(correctness(ranked), total_positive);
}

struct PrecisionAtN {
  std::vector<std::size_t> n;
  std::vector<double> precision;  // percent
  double mean = 0;
  bool truncated = false;         // some N exceeded the list length
};

// Percentage of correct predictions among the top N, for each N. Lists
// shorter than N are scored over what is available and flagged.
inline PrecisionAtN precision_at_n(const std::vector<bool>& correct, const std::vector<std::size_t>& ns) {
  PrecisionAtN out;
  std::vector<std::size_t> prefix(correct.size() + 1, 0);
  for (std::size_t i = 0; i < correct.size(); ++i) prefix[i + 1] = prefix[i] + correct[i];
  for (auto n : ns) {
    const std::size_t m = std::min(n, correct.size());
    out.truncated = out.truncated || m < n;
    out.n.push_back(n);
    out.precision.push_back(m == 0 ? 0.0 : 100.0 * double(prefix[m]) / double(m));
  }
  if (!ns.empty()) out.mean = std::accumulate(out.precision.begin(), out.precision.end(), 0.0) / double(ns.size());
  return out;
}

enum class Retention { One, Two, All };

inline Retention parse_retention(const std::string& s) {
  if (s == "one") return Retention::One;
  if (s == "two") return Retention::Two;
  if (s == "all") return Retention::All;
  throw UsageError("retention must be one, two or all (got '" + s + "')");
}

inline std::string retention_name(Retention r) {
  return r == Retention::One ? "one" : r == Retention::Two ? "two" : "all";
}

// Drops single-sentence bags, then keeps 1, 2 or all sentences of each
// remaining bag, sampled uniformly under `seed`. Kept sentences stay in their
// original order.
inline std::vector<Bag> bag_retention(const std::vector<Bag>& bags, Retention mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Bag> out;
  for (const auto& b : bags) {
    if (b.instances.size() < 2) continue;
    Bag kept = b;
    if (mode != Retention::All) {
      const std::size_t k = mode == Retention::One ? 1 : 2;
      std::vector<std::size_t> idx(b.instances.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(k);
      std::sort(idx.begin(), idx.end());
      kept.instances.clear();
      for (auto i : idx) kept.instances.push_back(b.instances[i]);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

// 1-based rank of relation r in one o_b under the (score desc, id asc) order.
inline std::size_t relation_rank(const std::vector<double>& probs, std::uint32_t r) {
  std::size_t rank = 1;
  for (std::uint32_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > probs[r] || (probs[j] == probs[r] && j < r)) ++rank;
  }
  return rank;
}

// Macro average: mean hit rate within each relation, then across relations.
inline double macro_average(const std::vector<std::vector<bool>>& hits_per_relation) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& hits : hits_per_relation) {
    if (hits.empty()) continue;
    sum += double(std::count(hits.begin(), hits.end(), true)) / double(hits.size());
    ++n;
  }
  return n ? sum / double(n) : 0.0;
}

inline double micro_average(const std::vector<std::vector<bool>>& hits_per_relation) {
  std::size_t hit = 0, total = 0;
  for (const auto& hits : hits_per_relation) {
    hit += std::count(hits.begin(), hits.end(), true);
    total += hits.size();
  }
  return total ? double(hit) / double(total) : 0.0;
}

// Per-relation hit lists: for every test bag and each of its gold labels in
// `relations`, whether that label ranks within the top K of o_b.
inline std::vector<std::vector<bool>> hit_lists(const std::vector<std::vector<double>>& probs,
                                                const std::vector<Bag>& bags,
                                                const std::vector<std::uint32_t>& relations, std::size_t k) {
  std::vector<std::vector<bool>> out(relations.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (std::size_t i = 0; i < relations.size(); ++i) {
      if (!bags[b].has_label(relations[i])) continue;
      out[i].push_back(relation_rank(probs[b], relations[i]) <= k);
    }
  }
  return out;
}

// Non-NA relations with fewer than `threshold` training instances that occur
// in the test bags.
inline std::vector<std::uint32_t> long_tail_relations(const std::vector<std::size_t>& train_instances,
                                                      const std::vector<Bag>& test, std::size_t threshold) {
  std::set<std::uint32_t> present;
  for (const auto& b : test)
    for (auto r : b.labels) present.insert(r);
  std::vector<std::uint32_t> out;
  for (std::uint32_t r = 0; r < train_instances.size(); ++r) {
    if (r == RelationHierarchy::na() || !present.count(r)) continue;
    if (train_instances[r] < threshold) out.push_back(r);
  }
  return out;
}

// The rarer half of the non-NA relations by training instance count (ties by
// id), restricted to relations that occur in the test bags.
inline std::vector<std::uint32_t> long_tail_half(const std::vector<std::size_t>& train_instances,
                                                 const std::vector<Bag>& test) {
  std::set<std::uint32_t> present;
  for (const auto& b : test)
    for (auto r : b.labels) present.insert(r);
  std::vector<std::uint32_t> rel;
  for (std::uint32_t r = 1; r < train_instances.size(); ++r) rel.push_back(r);
  std::stable_sort(rel.begin(), rel.end(),
                   [&](auto a, auto b) { return train_instances[a] < train_instances[b]; });
  rel.resize(rel.size() / 2);
  std::vector<std::uint32_t> out;
  for (auto r : rel)
    if (present.count(r)) out.push_back(r);
  std::sort(out.begin(), out.end());
  return out;
}

struct HitsRow {
  std::size_t threshold = 0;
  std::vector<std::uint32_t> relations;
  std::vector<double> macro;  // one per K in kHitsK; empty when no relation qualifies
};

inline std::vector<HitsRow> hits_at_k_longtail(const std::vector<std::vector<double>>& probs,
                                               const std::vector<Bag>& bags,
                                               const std::vector<std::size_t>& train_instances) {
  std::vector<HitsRow> rows;
  for (auto t : kHitsThresholds) {
    HitsRow row;
    row.threshold = t;
    row.relations = long_tail_relations(train_instances, bags, t);
    if (!row.relations.empty())
      for (auto k : kHitsK) row.macro.push_back(macro_average(hit_lists(probs, bags, row.relations, k)));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct MetricsReport {
  std::size_t bags = 0;
  std::size_t facts = 0;
  PrCurve pr;
  PrecisionAtN p_at_n;
  std::vector<HitsRow> hits;
  Retention retention = Retention::All;
  std::size_t retention_bags = 0;
  PrecisionAtN retention_p;
};

template <class T>
MetricsReport evaluate(ModelParams<T>& p, const ModelConfig& cfg, const RelationHierarchy& h,
                       const std::vector<Bag>& test, const std::vector<std::size_t>& train_instances,
                       Retention retention, std::uint64_t seed, std::size_t threads = 1) {
  MetricsReport rep;
  const auto probs = score_bags(p, cfg, h, test, threads);
  const auto ranked = rank_predictions(probs, test);
  rep.bags = test.size();
  rep.facts = total_positive_facts(test);
  rep.pr = pr_curve(ranked, rep.facts);
  const auto correct = correctness(ranked);
  rep.p_at_n = precision_at_n(correct, {std::begin(kPrecisionAtN), std::end(kPrecisionAtN)});
  rep.hits = hits_at_k_longtail(probs, test, train_instances);

  rep.retention = retention;
  const auto kept = bag_retention(test, retention, seed);
  rep.retention_bags = kept.size();
  if (!kept.empty()) {
    const auto kept_ranked = rank_predictions(score_bags(p, cfg, h, kept, threads), kept);
    rep.retention_p = precision_at_n(correctness(kept_ranked), {std::begin(kRetentionN), std::end(kRetentionN)});
  }
  return rep;
}

inline void write_report(std::ostream& os, const MetricsReport& r, const RelationHierarchy& h) {
  os << std::fixed << std::setprecision(4);
  os << "[full test set]\n";
  os << "bags\t" << r.bags << "\nfacts\t" << r.facts << '\n';
  os << "AUC\t" << r.pr.auc << "\nMax_F1\t" << r.pr.max_f1 << '\n';
  os << std::setprecision(1);
  for (std::size_t i = 0; i < r.p_at_n.n.size(); ++i) os << "P@" << r.p_at_n.n[i] << '\t' << r.p_at_n.precision[i] << '\n';
  os << "P@mean\t" << r.p_at_n.mean << '\n';
  if (r.p_at_n.truncated) os << "note\tranked list shorter than some N\n";
  os << "\n[long-tail hits]\n";
  for (const auto& row : r.hits) {
    if (row.macro.empty()) {
      os << "<" << row.threshold << "\tabsent: no test relation has fewer than " << row.threshold
         << " training instances\n";
      continue;
    }
    os << "<" << row.threshold << "\trelations";
    for (auto rel : row.relations) os << ' ' << h.relation_name(rel);
    os << '\n';
    for (std::size_t i = 0; i < row.macro.size(); ++i)
      os << "Hits@" << kHitsK[i] << "<" << row.threshold << '\t' << 100.0 * row.macro[i] << '\n';
  }
  os << "\n[retention " << retention_name(r.retention) << "]\n";
  os << "bags\t" << r.retention_bags << '\n';
  if (r.retention_bags == 0) {
    os << "absent: no test bag has more than one sentence\n";
  } else {
    for (std::size_t i = 0; i < r.retention_p.n.size(); ++i)
      os << "P@" << r.retention_p.n[i] << '\t' << r.retention_p.precision[i] << '\n';
    os << "P@mean\t" << r.retention_p.mean << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

// Two columns per line: precision, recall.
inline void write_pr_points(std::ostream& os, const PrCurve& c) {
  os << std::setprecision(6) << std::fixed;
  for (const auto& pt : c.points) os << pt.precision << '\t' << pt.recall << '\n';
  os.unsetf(std::ios::floatfield);
}

// Per bag and sentence, the three strongest level nodes under alpha at every
// level, with their scores.
template <class T>
void write_attention_trace(std::ostream& os, ModelParams<T>& p, const ModelConfig& cfg, const RelationHierarchy& h,
                           const std::vector<Bag>& bags, std::size_t max_bags) {
  os << std::setprecision(4) << std::fixed;
  for (std::size_t b = 0; b < std::min(max_bags, bags.size()); ++b) {
    const auto batch = make_batch(std::vector<Bag>{bags[b]}, h, cfg);
    Tape<T> tape;
    auto g = forward(tape, p, cfg, batch);
    os << "bag " << b << '\t' << bags[b].head_id << '\t' << bags[b].tail_id << "\tgold";
    for (auto r : bags[b].labels) os << ' ' << h.relation_name(r);
    os << '\n';
    for (std::size_t s = 0; s < bags[b].instances.size(); ++s) {
      os << "  sentence " << s << "\tpool " << static_cast<double>(g.pool_weights.value()[s]) << '\n';
      for (std::size_t l = 0; l < g.cells.size(); ++l) {
        const auto& a = g.cells[l].alpha.value();
        std::vector<std::uint32_t> idx(a.cols());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return a.at(s, x) > a.at(s, y); });
        os << "    level " << l + 1;
        for (std::size_t j = 0; j < std::min<std::size_t>(3, idx.size()); ++j)
          os << '\t' << h.level_name(l, idx[j]) << ' ' << static_cast<double>(a.at(s, idx[j]));
        os << '\n';
      }
    }
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace rhia
