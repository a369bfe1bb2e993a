#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rhia/error.hpp"

namespace rhia {

inline constexpr std::string_view kNoRelation = "NA";

// Level-local names of a relation's chain below the implicit root. A path
// with fewer segments than `depth` repeats its deepest prefix; "NA" is NA at
// every level.
inline std::vector<std::string> parse_relation_chain(std::string_view name, std::size_t depth) {
  if (name.empty()) throw DataError("relation name is empty");
  if (depth == 0) throw UsageError("relation hierarchy depth must be >= 1");
  if (name == kNoRelation) return std::vector<std::string>(depth, std::string(kNoRelation));

  std::vector<std::string> prefixes;
  std::size_t pos = name.front() == '/' ? 1 : 0;
  while (pos <= name.size()) {
    const std::size_t next = name.find('/', pos);
    const std::size_t end = next == std::string_view::npos ? name.size() : next;
    if (end > pos) prefixes.emplace_back(name.substr(0, end));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  if (prefixes.empty()) throw DataError("relation '" + std::string(name) + "' has no path segments");

  std::vector<std::string> chain;
  chain.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) chain.push_back(prefixes[std::min(l, prefixes.size() - 1)]);
  return chain;
}

// k-level taxonomy derived from slash-delimited relation names. NA is always
// present as relation 0 and as node 0 of every level; remaining relations and
// level nodes are ordered lexicographically so ids do not depend on data order.
class RelationHierarchy {
 public:
  RelationHierarchy() = default;

  static RelationHierarchy build(std::vector<std::string> relations, std::size_t depth) {
    RelationHierarchy h;
    h.depth_ = depth;
    relations.erase(std::remove(relations.begin(), relations.end(), std::string(kNoRelation)), relations.end());
    std::sort(relations.begin(), relations.end());
    relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
    h.relations_.push_back(std::string(kNoRelation));
    h.relations_.insert(h.relations_.end(), relations.begin(), relations.end());

    std::vector<std::vector<std::string>> chains;
    for (const auto& r : h.relations_) chains.push_back(parse_relation_chain(r, depth));

    h.levels_.assign(depth, {});
    for (std::size_t l = 0; l < depth; ++l) {
      std::vector<std::string> names;
      for (const auto& c : chains)
        if (c[l] != kNoRelation) names.push_back(c[l]);
      std::sort(names.begin(), names.end());
      names.erase(std::unique(names.begin(), names.end()), names.end());
      h.levels_[l].push_back(std::string(kNoRelation));
      h.levels_[l].insert(h.levels_[l].end(), names.begin(), names.end());
    }
    for (std::size_t r = 0; r < h.relations_.size(); ++r) {
      h.index_[h.relations_[r]] = static_cast<std::uint32_t>(r);
      std::vector<std::uint32_t> ids;
      for (std::size_t l = 0; l < depth; ++l) {
        const auto& names = h.levels_[l];
        ids.push_back(static_cast<std::uint32_t>(
            std::lower_bound(names.begin() + 1, names.end(), chains[r][l]) - names.begin()));
        if (chains[r][l] == kNoRelation) ids.back() = 0;
      }
      h.chains_.push_back(std::move(ids));
    }
    return h;
  }

  std::size_t depth() const { return depth_; }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t level_size(std::size_t level) const { return levels_.at(level).size(); }
  std::vector<std::size_t> level_sizes() const {
    std::vector<std::size_t> s;
    for (const auto& l : levels_) s.push_back(l.size());
    return s;
  }
  const std::vector<std::string>& relations() const { return relations_; }
  const std::string& relation_name(std::uint32_t r) const { return relations_.at(r); }
  const std::string& level_name(std::size_t level, std::uint32_t node) const { return levels_.at(level).at(node); }
  const std::vector<std::uint32_t>& chain(std::uint32_t relation) const { return chains_.at(relation); }

  std::optional<std::uint32_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::uint32_t id(std::string_view name) const {
    auto r = find(name);
    if (!r) throw DataError("unknown relation '" + std::string(name) + "'");
    return *r;
  }
  static constexpr std::uint32_t na() { return 0; }

  bool operator==(const RelationHierarchy& o) const {
    return depth_ == o.depth_ && relations_ == o.relations_;
  }

 private:
  std::size_t depth_ = 0;
  std::vector<std::string> relations_;
  std::vector<std::vector<std::string>> levels_;
  std::vector<std::vector<std::uint32_t>> chains_;
  std::map<std::string, std::uint32_t> index_;
};

}  // namespace rhia
