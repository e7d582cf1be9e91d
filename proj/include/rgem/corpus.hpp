// Tokenization, vocabularies, sparse region encodings, chopping and dataset IO.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rgem/numkernel.hpp"

namespace rgem {

using WordId = std::uint32_t;

// ---------------------------------------------------------------------------
// Tokenizer

/// Returns the byte offset of the first invalid UTF-8 sequence, if any.
inline std::optional<std::size_t> find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > s.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong encodings, surrogates, out-of-range code points
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      return i;
    i += len;
  }
  return std::nullopt;
}

namespace detail {
inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
}  // namespace detail

/// Lowercases (ASCII), splits on whitespace, and peels leading/trailing ASCII
/// punctuation off each chunk as one-character tokens. Internal punctuation
/// ("don't", "e-mail") stays inside the token. With `pretokenized`, only the
/// whitespace split and lowercasing are applied.
inline std::vector<std::string> tokenize(std::string_view text, bool pretokenized = false) {
  if (auto bad = find_invalid_utf8(text))
    throw DataError("invalid UTF-8 at byte offset " + std::to_string(*bad));
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    if (j == i) break;
    std::string chunk(text.substr(i, j - i));
    for (auto& c : chunk) c = detail::ascii_lower(c);
    i = j;
    if (pretokenized) {
      out.push_back(std::move(chunk));
      continue;
    }
    std::size_t lo = 0, hi = chunk.size();
    while (lo < hi && detail::is_punct(chunk[lo])) ++lo;
    if (lo == hi) {
      for (char c : chunk) out.emplace_back(1, c);
      continue;
    }
    while (hi > lo && detail::is_punct(chunk[hi - 1])) --hi;
    for (std::size_t k = 0; k < lo; ++k) out.emplace_back(1, chunk[k]);
    out.push_back(chunk.substr(lo, hi - lo));
    for (std::size_t k = hi; k < chunk.size(); ++k) out.emplace_back(1, chunk[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Word counts; per-worker counters are combined with merge().
class FrequencyCounter {
 public:
  void add(const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) ++counts_[t];
  }
  void merge(const FrequencyCounter& other) {
    for (const auto& [w, n] : other.counts_) counts_[w] += n;
  }
  const std::unordered_map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& kv : counts_) n += kv.second;
    return n;
  }

 private:
  std::unordered_map<std::string, std::uint64_t> counts_;
};

/// Word <-> id map. Ids are dense and ordered by descending frequency, ties
/// broken by ascending byte-wise word order.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Words in id order; frequencies optional (zeros when loaded from file).
  Vocabulary(std::vector<std::string> words, std::vector<std::uint64_t> freq, std::size_t size_limit)
      : words_(std::move(words)), freq_(std::move(freq)), size_limit_(size_limit) {
    if (freq_.empty()) freq_.assign(words_.size(), 0);
    require(freq_.size() == words_.size(), "Vocabulary: freq/word count mismatch");
    require(words_.size() <= size_limit_, "Vocabulary: size exceeds limit");
    for (std::size_t i = 0; i < words_.size(); ++i) {
      auto [it, fresh] = index_.emplace(words_[i], static_cast<WordId>(i));
      if (!fresh) throw DataError("Vocabulary: duplicate word '" + words_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t size_limit() const noexcept { return size_limit_; }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& word(WordId id) const { return words_.at(id); }
  std::uint64_t freq(WordId id) const { return freq_.at(id); }
  const std::vector<std::uint64_t>& freqs() const noexcept { return freq_; }

  std::optional<WordId> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// FNV-1a over the newline-joined word list; identifies a vocabulary in file metadata.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : words_) {
      for (char c : w) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
      }
      h ^= '\n';
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> index_;
  std::vector<std::uint64_t> freq_;
  std::size_t size_limit_ = 0;
};

inline Vocabulary vocab_from_counts(const FrequencyCounter& counter, std::size_t size_limit) {
  require(size_limit >= 1, "build_vocab: size_limit must be >= 1");
  if (counter.counts().empty()) throw DataError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::uint64_t>> items(counter.counts().begin(), counter.counts().end());
  const std::size_t keep = std::min(size_limit, items.size());
  auto cmp = [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; };
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(keep), items.end(), cmp);
  std::vector<std::string> words;
  std::vector<std::uint64_t> freq;
  for (std::size_t i = 0; i < keep; ++i) {
    words.push_back(std::move(items[i].first));
    freq.push_back(items[i].second);
  }
  return Vocabulary(std::move(words), std::move(freq), size_limit);
}

inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& docs, std::size_t size_limit) {
  FrequencyCounter counter;
  for (const auto& d : docs) counter.add(d);
  return vocab_from_counts(counter, size_limit);
}

struct StopwordList {
  std::unordered_set<std::string> words;

  bool contains(const std::string& w) const { return words.count(w) != 0; }

  static StopwordList from_words(const std::vector<std::string>& ws) {
    StopwordList s;
    for (auto w : ws) {
      for (auto& c : w) c = detail::ascii_lower(c);
      if (!w.empty()) s.words.insert(std::move(w));
    }
    return s;
  }
};

/// A small English function-word list used when no stopword file is given.
inline StopwordList default_stopwords() {
  static const std::vector<std::string> kWords = {
      "a",     "about", "above", "after", "again", "all",   "am",    "an",    "and",   "any",   "are",   "as",
      "at",    "be",    "been",  "before", "being", "below", "between", "both", "but",   "by",    "can",   "could",
      "did",   "do",    "does",  "doing", "down",  "during", "each", "few",   "for",   "from",  "further", "had",
      "has",   "have",  "having", "he",   "her",   "here",  "hers",  "herself", "him", "himself", "his",  "how",
      "i",     "if",    "in",    "into",  "is",    "it",    "its",   "itself", "just", "me",    "more",  "most",
      "my",    "myself", "no",   "nor",   "not",   "now",   "of",    "off",   "on",    "once",  "only",  "or",
      "other", "our",   "ours",  "ourselves", "out", "over", "own",  "same",  "she",   "should", "so",  "some",
      "such",  "than",  "that",  "the",   "their", "theirs", "them", "themselves", "then", "there", "these", "they",
      "this",  "those", "through", "to",  "too",   "under", "until", "up",   "very",  "was",   "we",    "were",
      "what",  "when",  "where", "which", "while", "who",   "whom",  "why",  "will",  "with",  "would", "you",
      "your",  "yours", "yourself", "yourselves", "'s", "n't", ".",   ",",    "!",     "?",     ";",     ":",
      "\"",    "'",     "(",     ")",     "-",     "--"};
  return StopwordList::from_words(kWords);
}

/// Target-view vocabulary: source words in frequency order minus stopwords,
/// truncated to size_limit.
inline Vocabulary target_vocab(const Vocabulary& vocab, const StopwordList& stop, std::size_t size_limit) {
  require(size_limit >= 1, "target_vocab: size_limit must be >= 1");
  std::vector<std::string> words;
  std::vector<std::uint64_t> freq;
  for (std::size_t i = 0; i < vocab.size() && words.size() < size_limit; ++i) {
    if (stop.contains(vocab.words()[i])) continue;
    words.push_back(vocab.words()[i]);
    freq.push_back(vocab.freqs()[i]);
  }
  if (words.empty()) throw DataError("target_vocab: every word is a stopword");
  return Vocabulary(std::move(words), std::move(freq), size_limit);
}

// ---------------------------------------------------------------------------
// Sequences

struct TokenSequence {
  std::vector<WordId> ids;
  std::optional<std::uint32_t> label;
  std::size_t raw_len = 0;

  std::size_t size() const noexcept { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Maps tokens to ids, dropping out-of-vocabulary tokens.
inline TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.raw_len = tokens.size();
  seq.ids.reserve(tokens.size());
  for (const auto& t : tokens)
    if (auto id = vocab.find(t)) seq.ids.push_back(*id);
  return seq;
}

/// Concatenated one-hot vectors of the window [loc, loc+size); slot p holds
/// index p*|V| + id. Slots past the end stay empty.
inline SparseVector region_concat(std::span<const WordId> ids, std::size_t loc, std::size_t size,
                                  std::size_t vocab_size) {
  require(loc < ids.size(), "region_concat: loc out of range");
  require(size >= 1, "region_concat: size must be >= 1");
  SparseVector s{size * vocab_size, {}};
  for (std::size_t p = 0; p < size && loc + p < ids.size(); ++p) {
    require(ids[loc + p] < vocab_size, "region_concat: id >= vocab size");
    s.entries.push_back({static_cast<std::uint32_t>(p * vocab_size + ids[loc + p]), 1.0});
  }
  return s;
}

/// Word counts over the window [loc, loc+size), clipped to the document.
inline SparseVector region_bow(std::span<const WordId> ids, std::size_t loc, std::size_t size,
                               std::size_t vocab_size) {
  require(loc < ids.size(), "region_bow: loc out of range");
  require(size >= 1, "region_bow: size must be >= 1");
  const std::size_t end = std::min(ids.size(), loc + size);
  std::vector<std::uint32_t> idx(ids.begin() + static_cast<std::ptrdiff_t>(loc),
                                 ids.begin() + static_cast<std::ptrdiff_t>(end));
  return sparse_from_counts(vocab_size, std::move(idx));
}

struct Segment {
  std::size_t offset = 0;
  std::vector<WordId> ids;
  friend bool operator==(const Segment&, const Segment&) = default;
};

inline std::vector<Segment> chop(std::span<const WordId> ids, std::size_t seg_len) {
  require(seg_len >= 1, "chop: seg_len must be >= 1");
  std::vector<Segment> out;
  for (std::size_t off = 0; off < ids.size(); off += seg_len) {
    const std::size_t end = std::min(ids.size(), off + seg_len);
    out.push_back({off, std::vector<WordId>(ids.begin() + static_cast<std::ptrdiff_t>(off),
                                            ids.begin() + static_cast<std::ptrdiff_t>(end))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and file formats

struct Dataset {
  std::vector<TokenSequence> docs;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return docs.size(); }
  bool labeled() const {
    return std::all_of(docs.begin(), docs.end(), [](const auto& d) { return d.label.has_value(); });
  }
  void validate() const {
    for (std::size_t i = 0; i < docs.size(); ++i)
      if (docs[i].label && *docs[i].label >= n_classes)
        throw DataError("document " + std::to_string(i) + ": label out of range");
  }
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

/// Tokenizes a one-document-per-line file.
inline std::vector<std::vector<std::string>> read_token_file(const std::string& path, bool pretokenized = false) {
  auto lines = read_lines(path);
  std::vector<std::vector<std::string>> docs;
  docs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      docs.push_back(tokenize(lines[i], pretokenized));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return docs;
}

/// Class names to ids, assigned by first appearance.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) ids_[names_[i]] = static_cast<std::uint32_t>(i);
  }
  std::uint32_t intern(const std::string& name) {
    auto [it, fresh] = ids_.emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (fresh) names_.push_back(name);
    return it->second;
  }
  std::optional<std::uint32_t> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

/// Encodes a token file and (optionally) its aligned label file. When
/// `grow_labels` is false, unknown class names are a data error.
inline Dataset load_dataset(const std::string& token_path, const std::optional<std::string>& label_path,
                            const Vocabulary& vocab, LabelMap& labels, bool grow_labels, bool pretokenized = false) {
  const auto docs = read_token_file(token_path, pretokenized);
  Dataset ds;
  ds.docs.reserve(docs.size());
  for (const auto& d : docs) ds.docs.push_back(encode(d, vocab));
  if (label_path) {
    const auto lines = read_lines(*label_path);
    if (lines.size() != docs.size())
      throw DataError("label/doc count mismatch: " + std::to_string(lines.size()) + " labels in '" + *label_path +
                      "' vs " + std::to_string(docs.size()) + " documents in '" + token_path + "'");
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (grow_labels) {
        ds.docs[i].label = labels.intern(lines[i]);
      } else if (auto id = labels.find(lines[i])) {
        ds.docs[i].label = *id;
      } else {
        throw DataError(*label_path + ":" + std::to_string(i + 1) + ": unknown class '" + lines[i] + "'");
      }
    }
  }
  ds.n_classes = labels.size();
  ds.class_names = labels.names();
  return ds;
}

inline void write_vocab_file(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "#size=" << vocab.size() << '\n';
  for (const auto& w : vocab.words()) out << w << '\n';
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline Vocabulary read_vocab_file(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0].rfind("#size=", 0) != 0) throw DataError(path + ": missing '#size=<n>' header");
  std::size_t n = 0;
  try {
    n = std::stoul(lines[0].substr(6));
  } catch (const std::exception&) {
    throw DataError(path + ": bad size header '" + lines[0] + "'");
  }
  if (lines.size() - 1 != n)
    throw DataError(path + ": header says " + std::to_string(n) + " words, file has " +
                    std::to_string(lines.size() - 1));
  std::vector<std::string> words(lines.begin() + 1, lines.end());
  return Vocabulary(std::move(words), {}, std::max<std::size_t>(n, 1));
}

inline StopwordList read_stopword_file(const std::string& path) {
  auto lines = read_lines(path);
  std::vector<std::string> ws;
  for (auto& l : lines) {
    auto t = tokenize(l, true);
    ws.insert(ws.end(), t.begin(), t.end());
  }
  return StopwordList::from_words(ws);
}

}  // namespace rgem
