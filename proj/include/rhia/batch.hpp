#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rhia/corpus.hpp"
#include "rhia/hierarchy.hpp"
#include "rhia/model.hpp"
#include "rhia/ops.hpp"

namespace rhia {

// Sentences of a mini-batch flattened into stacked token rows. Only the real
// (unpadded) tokens of each sentence are materialized.
struct TokenBatch {
  std::vector<std::uint32_t> words;     // per token
  std::vector<std::uint32_t> head_ent;  // per token: head entity word row
  std::vector<std::uint32_t> tail_ent;
  std::vector<std::uint32_t> head_pos;  // per token: shifted position row
  std::vector<std::uint32_t> tail_pos;
  std::vector<std::uint32_t> offsets{0};  // sentence s owns tokens [offsets[s], offsets[s+1])
  std::vector<ops::SegmentSplit> splits;  // per sentence

  std::size_t sentences() const { return splits.size(); }
  std::size_t tokens() const { return words.size(); }

  void add(const Instance& inst, const ModelConfig& cfg) {
    const auto limit = static_cast<std::int32_t>(cfg.max_len);
    const auto pos = relative_positions(inst, limit);
    for (std::uint32_t i = 0; i < inst.length; ++i) {
      words.push_back(inst.tokens[i]);
      head_ent.push_back(inst.head_entity);
      tail_ent.push_back(inst.tail_entity);
      head_pos.push_back(position_index(pos[i].head, limit));
      tail_pos.push_back(position_index(pos[i].tail, limit));
    }
    offsets.push_back(static_cast<std::uint32_t>(words.size()));
    const auto [first, second] = entity_split_points(inst);
    splits.push_back({first, second});
  }
};

// Bags of a mini-batch with their supervision targets.
struct BagBatch {
  TokenBatch tokens;
  std::vector<std::uint32_t> bag_offsets{0};  // bag b owns sentences [bag_offsets[b], bag_offsets[b+1])
  std::vector<std::uint32_t> relations;        // per bag: training target
  std::vector<std::vector<std::uint32_t>> level_targets;  // [level][sentence]: gold chain node
  std::vector<std::uint32_t> order_labels;     // per sentence: 0 head-first, 1 tail-first

  std::size_t bags() const { return relations.size(); }
};

inline BagBatch make_batch(std::span<const Bag* const> bags, const RelationHierarchy& h, const ModelConfig& cfg) {
  BagBatch b;
  b.level_targets.resize(h.depth());
  for (const Bag* bag : bags) {
    const std::uint32_t rel = bag->relation();
    const auto& chain = h.chain(rel);
    for (const auto& inst : bag->instances) {
      b.tokens.add(inst, cfg);
      for (std::size_t l = 0; l < h.depth(); ++l) b.level_targets[l].push_back(chain[l]);
      b.order_labels.push_back(static_cast<std::uint32_t>(entity_order(inst)));
    }
    b.bag_offsets.push_back(static_cast<std::uint32_t>(b.tokens.sentences()));
    b.relations.push_back(rel);
  }
  return b;
}

inline BagBatch make_batch(const std::vector<Bag>& bags, const RelationHierarchy& h, const ModelConfig& cfg) {
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  return make_batch(std::span<const Bag* const>(ptrs), h, cfg);
}

}  // namespace rhia
