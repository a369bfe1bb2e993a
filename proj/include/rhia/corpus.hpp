#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rhia/error.hpp"
#include "rhia/hierarchy.hpp"
#include "rhia/vocab.hpp"

namespace rhia {

// One line of the canonical corpus format:
//   head-id \t tail-id \t head-surface \t tail-surface \t relation \t tokens
struct RawRecord {
  std::string head_id;
  std::string tail_id;
  std::string head;
  std::string tail;
  std::string relation;
  std::vector<std::string> tokens;
};

// Multi-word entity surfaces become one vocabulary entry joined with '_'.
inline std::string join_entity(std::string_view surface) {
  std::string out;
  bool space = false;
  for (char ch : surface) {
    if (ch == ' ' || ch == '\t') {
      space = !out.empty();
      continue;
    }
    if (space) out += '_';
    space = false;
    out += ch;
  }
  return out;
}

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\r') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline RawRecord parse_record(std::string_view line, const std::string& where) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (fields.size() < 5) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) break;
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (fields.size() != 5) throw DataError(where + ": expected 6 tab-separated fields");
  std::string_view sentence = line.substr(start);
  if (!sentence.empty() && sentence.back() == '\r') sentence.remove_suffix(1);
  RawRecord r;
  r.head_id = fields[0];
  r.tail_id = fields[1];
  r.head = fields[2];
  r.tail = fields[3];
  r.relation = fields[4];
  r.tokens = split_tokens(sentence);
  if (r.relation.empty()) throw DataError(where + ": empty relation");
  if (r.tokens.empty()) throw DataError(where + ": empty sentence");
  return r;
}

inline std::string format_record(const RawRecord& r) {
  std::string s = r.head_id + '\t' + r.tail_id + '\t' + r.head + '\t' + r.tail + '\t' + r.relation + '\t';
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    if (i) s += ' ';
    s += r.tokens[i];
  }
  return s;
}

// Reads plain or gzip-compressed text line by line.
inline std::vector<std::string> read_lines(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open '" + path + "'");
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
  std::vector<std::string> lines;
  std::string cur;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) {
    for (int i = 0; i < n; ++i) {
      if (buf[i] == '\n') {
        lines.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += buf[i];
      }
    }
  }
  if (n < 0) throw DataError("read error in '" + path + "'");
  if (!cur.empty()) lines.push_back(std::move(cur));
  return lines;
}

inline std::vector<RawRecord> read_corpus(const std::string& path) {
  std::vector<RawRecord> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, path + ":" + std::to_string(lineno)));
  }
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<RawRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& r : records) out << format_record(r) << '\n';
}

// Converts a line of the whitespace-separated public NYT release
// ("id1 id2 head tail relation tokens... ###END###") to a canonical record.
inline RawRecord parse_nyt_line(std::string_view line, const std::string& where) {
  auto toks = split_tokens(line);
  if (!toks.empty() && toks.back() == "###END###") toks.pop_back();
  if (toks.size() < 6) throw DataError(where + ": NYT line needs at least 6 fields");
  RawRecord r;
  r.head_id = toks[0];
  r.tail_id = toks[1];
  r.head = toks[2];
  r.tail = toks[3];
  r.relation = toks[4];
  r.tokens.assign(toks.begin() + 5, toks.end());
  return r;
}

// [begin, end) token range.
struct Span {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
};

enum class EntityOrder : std::uint32_t { HeadFirst = 0, TailFirst = 1 };

struct Instance {
  std::vector<std::uint32_t> tokens;  // exactly max_len entries, PAD after `length`
  std::uint32_t length = 0;
  Span head;
  Span tail;
  std::uint32_t head_entity = 0;      // vocabulary row of the joined head entity
  std::uint32_t tail_entity = 0;
  std::uint32_t bag = 0;
  bool truncated = false;
};

struct Bag {
  std::string head_id;
  std::string tail_id;
  std::vector<Instance> instances;
  std::vector<std::uint32_t> labels;  // sorted; one entry for training bags

  std::uint32_t relation() const { return labels.front(); }
  bool has_label(std::uint32_t r) const { return std::binary_search(labels.begin(), labels.end(), r); }
};

// Signed distance from token i to the nearest token of `span`.
inline std::int32_t span_offset(std::uint32_t i, const Span& span) {
  if (i < span.begin) return static_cast<std::int32_t>(i) - static_cast<std::int32_t>(span.begin);
  if (i >= span.end) return static_cast<std::int32_t>(i) - static_cast<std::int32_t>(span.end - 1);
  return 0;
}

struct RelativePosition {
  std::int32_t head = 0;
  std::int32_t tail = 0;
};

// Per-token offsets to the head and tail entity, clamped to [-limit, limit].
inline std::vector<RelativePosition> relative_positions(const Instance& inst, std::int32_t limit) {
  std::vector<RelativePosition> out(inst.length);
  for (std::uint32_t i = 0; i < inst.length; ++i) {
    out[i].head = std::clamp(span_offset(i, inst.head), -limit, limit);
    out[i].tail = std::clamp(span_offset(i, inst.tail), -limit, limit);
  }
  return out;
}

// Position table row for an offset: shifted by +limit.
inline std::uint32_t position_index(std::int32_t offset, std::int32_t limit) {
  return static_cast<std::uint32_t>(std::clamp(offset, -limit, limit) + limit);
}

inline EntityOrder entity_order(const Instance& inst) {
  return inst.head.begin < inst.tail.begin ? EntityOrder::HeadFirst : EntityOrder::TailFirst;
}

// Last token of the earlier entity and of the later entity.
inline std::pair<std::uint32_t, std::uint32_t> entity_split_points(const Instance& inst) {
  const Span& first = inst.head.begin < inst.tail.begin ? inst.head : inst.tail;
  const Span& second = inst.head.begin < inst.tail.begin ? inst.tail : inst.head;
  return {first.end - 1, second.end - 1};
}

namespace detail {

inline std::optional<Span> find_entity(const std::vector<std::string>& tokens, const std::string& joined,
                                       const std::optional<Span>& avoid) {
  for (std::uint32_t i = 0; i < tokens.size(); ++i) {
    Span s{i, i + 1};
    if (tokens[i] == joined && !(avoid && s.overlaps(*avoid))) return s;
  }
  std::vector<std::string> parts;
  std::stringstream ss(joined);
  for (std::string p; std::getline(ss, p, '_');)
    if (!p.empty()) parts.push_back(p);
  if (parts.size() < 2) return std::nullopt;
  for (std::uint32_t i = 0; i + parts.size() <= tokens.size(); ++i) {
    if (!std::equal(parts.begin(), parts.end(), tokens.begin() + i)) continue;
    Span s{i, static_cast<std::uint32_t>(i + parts.size())};
    if (!(avoid && s.overlaps(*avoid))) return s;
  }
  return std::nullopt;
}

}  // namespace detail

struct CorpusStats {
  std::size_t records = 0;
  std::size_t sentences = 0;  // accepted instances
  std::size_t bags = 0;
  std::size_t rejected_missing_entity = 0;
  std::size_t rejected_unknown_relation = 0;
  std::size_t rejected_truncation = 0;
  std::size_t truncated = 0;
  std::size_t unk_entities = 0;
  std::size_t head_first = 0;
  std::vector<std::size_t> relation_instances;  // by relation id
  std::vector<std::size_t> relation_bags;

  std::size_t rejected() const {
    return rejected_missing_entity + rejected_unknown_relation + rejected_truncation;
  }
};

enum class BagMode { Train, Test };

struct BagSet {
  std::vector<Bag> bags;
  CorpusStats stats;
};

// Groups records into bags: by (head, tail, relation) for training, by
// (head, tail) with a gold relation set for testing. Records whose entities
// cannot be located, or whose relation is unknown to `hierarchy`, are
// rejected and counted.
inline BagSet build_bags(const std::vector<RawRecord>& records, const Vocabulary& vocab,
                         const RelationHierarchy& hierarchy, BagMode mode, std::size_t max_len) {
  BagSet out;
  CorpusStats& st = out.stats;
  st.records = records.size();
  st.relation_instances.assign(hierarchy.num_relations(), 0);
  st.relation_bags.assign(hierarchy.num_relations(), 0);
  std::map<std::tuple<std::string, std::string, std::uint32_t>, std::uint32_t> keys;

  for (const auto& rec : records) {
    const auto rel = hierarchy.find(rec.relation);
    if (!rel) {
      ++st.rejected_unknown_relation;
      continue;
    }
    const std::string head = join_entity(rec.head), tail = join_entity(rec.tail);
    const auto hspan = detail::find_entity(rec.tokens, head, std::nullopt);
    const auto tspan = hspan ? detail::find_entity(rec.tokens, tail, hspan) : std::nullopt;
    if (!hspan || !tspan) {
      ++st.rejected_missing_entity;
      continue;
    }
    if (hspan->end > max_len || tspan->end > max_len) {
      ++st.rejected_truncation;
      continue;
    }
    Instance inst;
    inst.truncated = rec.tokens.size() > max_len;
    inst.length = static_cast<std::uint32_t>(std::min(rec.tokens.size(), max_len));
    inst.tokens.assign(max_len, vocab.pad());
    for (std::uint32_t i = 0; i < inst.length; ++i) inst.tokens[i] = vocab.lookup(rec.tokens[i]);
    inst.head = *hspan;
    inst.tail = *tspan;
    inst.head_entity = vocab.lookup(head);
    inst.tail_entity = vocab.lookup(tail);
    st.unk_entities += (inst.head_entity == vocab.unk()) + (inst.tail_entity == vocab.unk());
    st.truncated += inst.truncated;

    const std::uint32_t key_rel = mode == BagMode::Train ? *rel : 0;
    auto [it, fresh] = keys.emplace(std::make_tuple(rec.head_id, rec.tail_id, key_rel),
                                    static_cast<std::uint32_t>(out.bags.size()));
    if (fresh) {
      Bag b;
      b.head_id = rec.head_id;
      b.tail_id = rec.tail_id;
      out.bags.push_back(std::move(b));
    }
    Bag& bag = out.bags[it->second];
    inst.bag = it->second;
    bag.instances.push_back(std::move(inst));
    if (!bag.has_label(*rel)) {
      bag.labels.insert(std::upper_bound(bag.labels.begin(), bag.labels.end(), *rel), *rel);
    }
    ++st.relation_instances[*rel];
  }
  for (auto& bag : out.bags) {
    // a pair with real relations is not also an NA fact
    if (bag.labels.size() > 1 && bag.labels.front() == RelationHierarchy::na()) bag.labels.erase(bag.labels.begin());
    for (auto r : bag.labels) ++st.relation_bags[r];
    for (const auto& inst : bag.instances) st.head_first += entity_order(inst) == EntityOrder::HeadFirst;
    st.sentences += bag.instances.size();
  }
  st.bags = out.bags.size();
  return out;
}

// Vocabulary over every token and joined entity in the records.
inline Vocabulary vocabulary_from_records(const std::vector<RawRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) {
    for (const auto& t : r.tokens) ++counts[t];
    ++counts[join_entity(r.head)];
    ++counts[join_entity(r.tail)];
  }
  return vocabulary_from_counts(counts);
}

inline std::vector<std::string> relation_names(const std::vector<RawRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.relation);
  return {names.begin(), names.end()};
}

inline constexpr std::size_t kLongTailThresholds[] = {100, 200, 1000};

inline void write_stats(std::ostream& os, const CorpusStats& st, const RelationHierarchy& hierarchy) {
  os << "[corpus]\n"
     << "records\t" << st.records << '\n'
     << "sentences\t" << st.sentences << '\n'
     << "bags\t" << st.bags << '\n'
     << "rejected_missing_entity\t" << st.rejected_missing_entity << '\n'
     << "rejected_unknown_relation\t" << st.rejected_unknown_relation << '\n'
     << "rejected_truncation\t" << st.rejected_truncation << '\n'
     << "truncated\t" << st.truncated << '\n'
     << "unk_entities\t" << st.unk_entities << '\n'
     << "head_first\t" << st.head_first << '\n'
     << "\n[relations]\n"
     << "relation\tinstances\tbags";
  for (auto t : kLongTailThresholds) os << "\tlong_tail_lt" << t;
  os << '\n';
  for (std::uint32_t r = 0; r < hierarchy.num_relations(); ++r) {
    os << hierarchy.relation_name(r) << '\t' << st.relation_instances[r] << '\t' << st.relation_bags[r];
    for (auto t : kLongTailThresholds) os << '\t' << (r != RelationHierarchy::na() && st.relation_instances[r] < t);
    os << '\n';
  }
  os << "\n[long_tail]\nthreshold\trelations\n";
  for (auto t : kLongTailThresholds) {
    std::size_t n = 0;
    for (std::uint32_t r = 1; r < hierarchy.num_relations(); ++r) n += st.relation_instances[r] < t;
    os << t << '\t' << n << '\n';
  }
}

}  // namespace rhia
