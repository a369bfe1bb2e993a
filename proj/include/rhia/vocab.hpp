#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rhia/error.hpp"

namespace rhia {

// Word -> row mapping. Regular words occupy rows [0, n); UNK is row n and PAD
// row n+1, so a table loaded from a file keeps the file's row order.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<std::uint32_t>(i)).second) {
        throw DataError("duplicate vocabulary entry '" + words_[i] + "'");
      }
    }
  }

  std::size_t size() const { return words_.size() + 2; }  // with UNK and PAD
  std::uint32_t unk() const { return static_cast<std::uint32_t>(words_.size()); }
  std::uint32_t pad() const { return static_cast<std::uint32_t>(words_.size() + 1); }
  const std::vector<std::string>& words() const { return words_; }

  bool contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }
  std::uint32_t lookup(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? unk() : it->second;
  }
  const std::string& word(std::uint32_t id) const {
    static const std::string kUnk = "<unk>", kPad = "<pad>";
    if (id == unk()) return kUnk;
    if (id == pad()) return kPad;
    return words_.at(id);
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Builds a vocabulary from token counts, most frequent first, ties broken
// lexicographically.
inline Vocabulary vocabulary_from_counts(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(items.size());
  for (auto& [w, c] : items) words.push_back(w);
  return Vocabulary(std::move(words));
}

// Word table read from a text file: one token per line followed by its
// vector. `values` is row-major with UNK and PAD rows (zeros) appended.
struct EmbeddingTable {
  Vocabulary vocab;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::uint32_t id) const { return {values.data() + id * dim, dim}; }
};

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file '" + path + "'");
  EmbeddingTable table;
  std::vector<std::string> words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    // word2vec text headers ("count dim") are skipped
    if (lineno == 1 && row.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) continue;
    if (row.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": token without vector");
    if (table.dim == 0) table.dim = row.size();
    if (row.size() != table.dim) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(table.dim) +
                      " values, found " + std::to_string(row.size()));
    }
    words.push_back(word);
    table.values.insert(table.values.end(), row.begin(), row.end());
  }
  if (words.empty()) throw DataError("embedding file '" + path + "' is empty");
  table.vocab = Vocabulary(std::move(words));
  table.values.resize(table.vocab.size() * table.dim, 0.0);
  return table;
}

}  // namespace rhia
