#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rhia/corpus.hpp"
#include "rhia/hierarchy.hpp"
#include "rhia/keyvalue.hpp"

namespace rhia {

// Recipe for a templated corpus with a known relation taxonomy, long-tail
// bag counts, controlled label noise and entity order.
struct SyntheticPlan {
  std::vector<std::string> relations;  // slash paths, most frequent first
  std::size_t depth = 3;
  std::size_t vocab_size = 300;        // filler words
  std::size_t entities = 600;
  std::size_t bags = 2000;             // train + test, NA included
  double na_fraction = 0.25;
  std::string skew = "geometric";      // geometric | uniform
  double skew_ratio = 0.5;
  double test_fraction = 0.25;
  std::size_t min_sentences = 1;
  std::size_t max_sentences = 4;
  double noise_rate = 0.1;             // training instances drawn from another relation's templates
  double test_noise_rate = 0.0;
  double order_ratio = 0.5;            // fraction of head-first instances
  std::size_t min_gap = 1;
  std::size_t max_gap = 4;
  double cue_rate = 0.8;               // chance each coarse (non-leaf) cue is emitted
  std::uint64_t seed = 7;
};

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline SyntheticPlan parse_plan(const std::string& text, const std::string& where = "plan") {
  SyntheticPlan p;
  for (const auto& [k, v] : parse_key_values(text, where)) {
    if (k == "relations") p.relations = split_list(v);
    else if (k == "depth") p.depth = parse_size(k, v);
    else if (k == "vocab_size") p.vocab_size = parse_size(k, v);
    else if (k == "entities") p.entities = parse_size(k, v);
    else if (k == "bags") p.bags = parse_size(k, v);
    else if (k == "na_fraction") p.na_fraction = parse_double(k, v);
    else if (k == "skew") p.skew = v;
    else if (k == "skew_ratio") p.skew_ratio = parse_double(k, v);
    else if (k == "test_fraction") p.test_fraction = parse_double(k, v);
    else if (k == "min_sentences") p.min_sentences = parse_size(k, v);
    else if (k == "max_sentences") p.max_sentences = parse_size(k, v);
    else if (k == "noise_rate") p.noise_rate = parse_double(k, v);
    else if (k == "test_noise_rate") p.test_noise_rate = parse_double(k, v);
    else if (k == "order_ratio") p.order_ratio = parse_double(k, v);
    else if (k == "min_gap") p.min_gap = parse_size(k, v);
    else if (k == "max_gap") p.max_gap = parse_size(k, v);
    else if (k == "cue_rate") p.cue_rate = parse_double(k, v);
    else if (k == "seed") p.seed = parse_size(k, v);
    else throw UsageError(where + ": unknown plan key '" + k + "'");
  }
  return p;
}

inline std::string format_plan(const SyntheticPlan& p) {
  std::ostringstream os;
  os << "relations = ";
  for (std::size_t i = 0; i < p.relations.size(); ++i) os << (i ? "," : "") << p.relations[i];
  os << "\ndepth = " << p.depth << "\nvocab_size = " << p.vocab_size << "\nentities = " << p.entities
     << "\nbags = " << p.bags << "\nna_fraction = " << p.na_fraction << "\nskew = " << p.skew
     << "\nskew_ratio = " << p.skew_ratio << "\ntest_fraction = " << p.test_fraction
     << "\nmin_sentences = " << p.min_sentences << "\nmax_sentences = " << p.max_sentences
     << "\nnoise_rate = " << p.noise_rate << "\ntest_noise_rate = " << p.test_noise_rate
     << "\norder_ratio = " << p.order_ratio << "\nmin_gap = " << p.min_gap << "\nmax_gap = " << p.max_gap
     << "\ncue_rate = " << p.cue_rate << "\nseed = " << p.seed << '\n';
  return os.str();
}

inline void validate_plan(const SyntheticPlan& p) {
  if (p.relations.empty()) throw UsageError("synthetic plan: empty taxonomy");
  std::set<std::string> seen;
  for (const auto& r : p.relations) {
    if (r == kNoRelation || r.front() != '/' || r.back() == '/' || r.find("//") != std::string::npos) {
      throw UsageError("synthetic plan: '" + r + "' is not a slash path");
    }
    if (!seen.insert(r).second) throw UsageError("synthetic plan: duplicate relation '" + r + "'");
  }
  if (p.noise_rate < 0 || p.noise_rate >= 1 || p.test_noise_rate < 0 || p.test_noise_rate >= 1) {
    throw UsageError("synthetic plan: noise rate must be in [0, 1)");
  }
  if (p.order_ratio < 0 || p.order_ratio > 1) throw UsageError("synthetic plan: order_ratio must be in [0, 1]");
  if (p.na_fraction < 0 || p.na_fraction >= 1) throw UsageError("synthetic plan: na_fraction must be in [0, 1)");
  if (p.test_fraction < 0 || p.test_fraction >= 1) throw UsageError("synthetic plan: test_fraction must be in [0, 1)");
  if (p.min_sentences == 0 || p.max_sentences < p.min_sentences) {
    throw UsageError("synthetic plan: need 1 <= min_sentences <= max_sentences");
  }
  if (p.max_gap < p.min_gap) throw UsageError("synthetic plan: need min_gap <= max_gap");
  if (p.skew != "geometric" && p.skew != "uniform") throw UsageError("synthetic plan: skew must be geometric or uniform");
  if (p.skew_ratio <= 0 || p.skew_ratio > 1) throw UsageError("synthetic plan: skew_ratio must be in (0, 1]");
  if (p.vocab_size == 0 || p.entities < 2) throw UsageError("synthetic plan: need vocab_size >= 1 and entities >= 2");
}

// Per-relation bag counts implied by a plan; index 0 is NA, then plan order.
inline std::vector<std::size_t> planned_bag_counts(const SyntheticPlan& p) {
  const std::size_t na = static_cast<std::size_t>(std::llround(p.bags * p.na_fraction));
  const std::size_t positive = p.bags - na;
  std::vector<double> w(p.relations.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = p.skew == "geometric" ? std::pow(p.skew_ratio, double(i)) : 1.0;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> counts(p.relations.size() + 1, 0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    counts[i + 1] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(positive * w[i] / total)));
    used += counts[i + 1];
  }
  if (used >= p.bags) throw UsageError("synthetic plan: too few bags for the taxonomy");
  counts[0] = p.bags - used;
  return counts;
}

struct SyntheticCorpus {
  std::vector<RawRecord> train;
  std::vector<RawRecord> test;
  std::vector<std::uint32_t> train_family;  // template family per record (0 = NA, i = relation i)
  std::vector<std::uint32_t> test_family;
  std::vector<std::uint32_t> train_label;   // plan-order label per record
  std::vector<std::uint32_t> test_label;
  std::vector<std::size_t> train_bags;      // declared, by plan-order label
  std::vector<std::size_t> test_bags;
  std::size_t mislabeled_train = 0;
  std::size_t mislabeled_test = 0;
  std::size_t head_first_train = 0;
  std::size_t head_first_test = 0;
};

namespace detail {

inline std::string cue_token(const std::string& node, char variant) {
  std::string t = "cue";
  for (char ch : node) t += ch == '/' ? '.' : ch;
  t += '.';
  t += variant;
  return t;
}

}  // namespace detail

// Deterministic under plan.seed. Each relation owns a template family whose
// sentences carry one cue token per hierarchy level (leaf cue always, coarser
// cues with probability cue_rate) placed between or around the two entities.
// NA sentences carry at most one coarse distractor cue and no leaf cue.
inline SyntheticCorpus generate_synthetic(const SyntheticPlan& plan) {
  validate_plan(plan);
  std::mt19937_64 rng(plan.seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto chance = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

  const std::size_t families = plan.relations.size() + 1;
  std::vector<std::vector<std::string>> chains(families);
  std::vector<std::string> coarse_nodes;
  for (std::size_t f = 1; f < families; ++f) {
    chains[f] = parse_relation_chain(plan.relations[f - 1], plan.depth);
    for (std::size_t l = 0; l + 1 < plan.depth; ++l) coarse_nodes.push_back(chains[f][l]);
  }
  std::sort(coarse_nodes.begin(), coarse_nodes.end());
  coarse_nodes.erase(std::unique(coarse_nodes.begin(), coarse_nodes.end()), coarse_nodes.end());

  SyntheticCorpus out;
  const auto counts = planned_bag_counts(plan);
  out.train_bags.resize(families);
  out.test_bags.resize(families);
  for (std::size_t f = 0; f < families; ++f) {
    out.test_bags[f] = static_cast<std::size_t>(std::llround(counts[f] * plan.test_fraction));
    out.train_bags[f] = counts[f] - out.test_bags[f];
  }

  // bag skeletons: (split, label, entity pair, size)
  struct Skeleton {
    bool test;
    std::uint32_t label;
    std::size_t head, tail, size;
  };
  std::vector<Skeleton> skeletons;
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (int split = 0; split < 2; ++split) {
    for (std::uint32_t f = 0; f < families; ++f) {
      const std::size_t n = split ? out.test_bags[f] : out.train_bags[f];
      for (std::size_t b = 0; b < n; ++b) {
        std::size_t h = 0, t = 0;
        do {
          h = uniform(0, plan.entities - 1);
          t = uniform(0, plan.entities - 1);
        } while (h == t || !pairs.emplace(h, t).second);
        skeletons.push_back({split == 1, f, h, t, uniform(plan.min_sentences, plan.max_sentences)});
      }
    }
  }

  // exact per-split counts of noisy and head-first instances
  auto assign = [&](std::size_t n, double rate) {
    std::vector<char> flags(n, 0);
    std::fill_n(flags.begin(), static_cast<std::size_t>(std::llround(n * rate)), 1);
    std::shuffle(flags.begin(), flags.end(), rng);
    return flags;
  };
  std::size_t n_train = 0, n_test = 0;
  for (const auto& s : skeletons) (s.test ? n_test : n_train) += s.size;
  const auto noisy_train = assign(n_train, plan.noise_rate), noisy_test = assign(n_test, plan.test_noise_rate);
  const auto order_train = assign(n_train, plan.order_ratio), order_test = assign(n_test, plan.order_ratio);

  auto filler = [&](std::vector<std::string>& toks) {
    for (std::size_t g = uniform(plan.min_gap, plan.max_gap); g > 0; --g) {
      toks.push_back("w" + std::to_string(uniform(0, plan.vocab_size - 1)));
    }
  };
  auto sentence = [&](std::uint32_t family, const std::string& first, const std::string& second) {
    // cues[l] is the level-l cue token, empty when not emitted
    std::vector<std::string> cues(plan.depth);
    if (family == 0) {
      if (!coarse_nodes.empty() && chance(0.5)) {
        cues[0] = detail::cue_token(coarse_nodes[uniform(0, coarse_nodes.size() - 1)], chance(0.5) ? 'a' : 'b');
      }
    } else {
      for (std::size_t l = 0; l < plan.depth; ++l) {
        if (l + 1 == plan.depth || chance(plan.cue_rate)) {
          cues[l] = detail::cue_token(chains[family][l], chance(0.5) ? 'a' : 'b');
        }
      }
    }
    const std::string leaf = cues.back();
    const std::string coarse = plan.depth > 1 ? cues.front() : std::string();
    std::vector<std::string> middle;
    for (std::size_t l = 1; l + 1 < plan.depth; ++l)
      if (!cues[l].empty()) middle.push_back(cues[l]);

    std::vector<std::string> toks;
    auto put = [&](const std::string& c) {
      if (!c.empty()) toks.push_back(c);
    };
    auto put_middle = [&] { toks.insert(toks.end(), middle.begin(), middle.end()); };
    switch (uniform(0, 2)) {
      case 0:  // every cue between the entities
        filler(toks);
        toks.push_back(first);
        filler(toks);
        put(coarse);
        put_middle();
        put(leaf);
        filler(toks);
        toks.push_back(second);
        filler(toks);
        break;
      case 1:  // coarse cue leads, leaf cue between
        put(coarse);
        filler(toks);
        toks.push_back(first);
        filler(toks);
        put(leaf);
        filler(toks);
        toks.push_back(second);
        put_middle();
        filler(toks);
        break;
      default:  // leaf cue right after the first entity, coarse cue trails
        filler(toks);
        toks.push_back(first);
        put(leaf);
        put_middle();
        filler(toks);
        toks.push_back(second);
        filler(toks);
        put(coarse);
        break;
    }
    return toks;
  };

  std::size_t i_train = 0, i_test = 0;
  for (const auto& s : skeletons) {
    const std::string head = "ent" + std::to_string(s.head), tail = "ent" + std::to_string(s.tail);
    for (std::size_t j = 0; j < s.size; ++j) {
      const std::size_t idx = s.test ? i_test++ : i_train++;
      const bool noisy = s.test ? noisy_test[idx] : noisy_train[idx];
      const bool head_first = s.test ? order_test[idx] : order_train[idx];
      std::uint32_t family = s.label;
      if (noisy) {
        family = static_cast<std::uint32_t>(uniform(0, families - 2));
        if (family >= s.label) ++family;
      }
      RawRecord r;
      r.head_id = "m." + head;
      r.tail_id = "m." + tail;
      r.head = head;
      r.tail = tail;
      r.relation = s.label == 0 ? std::string(kNoRelation) : plan.relations[s.label - 1];
      r.tokens = head_first ? sentence(family, head, tail) : sentence(family, tail, head);
      if (s.test) {
        out.test.push_back(std::move(r));
        out.test_family.push_back(family);
        out.test_label.push_back(s.label);
        out.mislabeled_test += noisy;
        out.head_first_test += head_first;
      } else {
        out.train.push_back(std::move(r));
        out.train_family.push_back(family);
        out.train_label.push_back(s.label);
        out.mislabeled_train += noisy;
        out.head_first_train += head_first;
      }
    }
  }
  return out;
}

inline void write_synthetic_stats(std::ostream& os, const SyntheticPlan& plan, const SyntheticCorpus& c) {
  os << "[plan]\n" << format_plan(plan) << "\n[declared]\nrelation\ttrain_bags\ttest_bags\n";
  for (std::size_t f = 0; f < c.train_bags.size(); ++f) {
    os << (f == 0 ? std::string(kNoRelation) : plan.relations[f - 1]) << '\t' << c.train_bags[f] << '\t'
       << c.test_bags[f] << '\n';
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? double(a) / double(b) : 0.0; };
  os << "\n[generated]\n"
     << "train_sentences\t" << c.train.size() << '\n'
     << "test_sentences\t" << c.test.size() << '\n'
     << "train_mislabeled\t" << c.mislabeled_train << '\n'
     << "train_mislabeled_fraction\t" << ratio(c.mislabeled_train, c.train.size()) << '\n'
     << "test_mislabeled\t" << c.mislabeled_test << '\n'
     << "train_head_first\t" << c.head_first_train << '\n'
     << "train_head_first_fraction\t" << ratio(c.head_first_train, c.train.size()) << '\n'
     << "test_head_first\t" << c.head_first_test << '\n';
}

// Writes train.txt, test.txt and stats.txt under `dir`.
inline void write_synthetic(const std::filesystem::path& dir, const SyntheticPlan& plan, const SyntheticCorpus& c) {
  std::filesystem::create_directories(dir);
  write_corpus((dir / "train.txt").string(), c.train);
  write_corpus((dir / "test.txt").string(), c.test);
  std::ofstream stats(dir / "stats.txt", std::ios::binary);
  if (!stats) throw DataError("cannot write '" + (dir / "stats.txt").string() + "'");
  write_synthetic_stats(stats, plan, c);
}

}  // namespace rhia
