// RGEM tensor container and the model / tv-embedding / word-vector formats.
//
// Layout (all integers little-endian):
//   "RGEM" | u32 version | u64 metadata length | metadata bytes
//   | u64 tensor count | per tensor: u32 name length, name bytes,
//     u64 rows, u64 cols, rows*cols IEEE-754 binary32 values, row-major
// Metadata is UTF-8 "key=value\n" lines sorted by key.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rgem/corpus.hpp"
#include "rgem/model.hpp"
#include "rgem/tvembed.hpp"

namespace rgem {

inline constexpr char kMagic[4] = {'R', 'G', 'E', 'M'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct StoredTensor {
  std::string name;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> data;
  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct TensorFile {
  std::map<std::string, std::string> meta;
  std::vector<StoredTensor> tensors;

  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("model file: missing metadata key '" + key + "'");
    return it->second;
  }
  std::uint64_t get_u64(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      auto x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw DataError("model file: key '" + key + "' is not an unsigned integer: '" + v + "'");
    }
  }
  std::int64_t get_i64(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      auto x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw DataError("model file: key '" + key + "' is not an integer: '" + v + "'");
    }
  }
  double get_f64(const std::string& key) const {
    const auto& v = get(key);
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw DataError("model file: key '" + key + "' is not a number: '" + v + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// Byte-level encoding

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}
  template <typename U>
  U le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[p_ + i])) << (8 * i);
    p_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(p_, n);
    p_ += n;
    return s;
  }
  bool done() const { return p_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - p_ < n) throw DataError("model file: truncated");
  }
  std::string_view b_;
  std::size_t p_ = 0;
};

}  // namespace detail

inline std::string encode_tensor_file(const TensorFile& f) {
  std::string out(kMagic, 4);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  std::string meta;
  for (const auto& [k, v] : f.meta) {
    require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos, "metadata key '" + k + "' is invalid");
    require(v.find('\n') == std::string::npos, "metadata value for '" + k + "' contains a newline");
    meta += k + "=" + v + "\n";
  }
  detail::put_le<std::uint64_t>(out, meta.size());
  out += meta;
  detail::put_le<std::uint64_t>(out, f.tensors.size());
  for (const auto& t : f.tensors) {
    require(t.data.size() == t.rows * t.cols, "tensor '" + t.name + "': data length != rows*cols");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint64_t>(out, t.rows);
    detail::put_le<std::uint64_t>(out, t.cols);
    for (float x : t.data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
  }
  return out;
}

inline TensorFile decode_tensor_file(std::string_view bytes) {
  detail::Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw DataError("not an RGEM file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kFormatVersion)
    throw DataError("unsupported RGEM format version " + std::to_string(version) + " (expected " +
                    std::to_string(kFormatVersion) + ")");
  TensorFile f;
  const auto meta_len = r.le<std::uint64_t>();
  std::string meta(r.take(meta_len));
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("model file: malformed metadata line '" + line + "'");
    f.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = std::string(r.take(r.le<std::uint32_t>()));
    t.rows = r.le<std::uint64_t>();
    t.cols = r.le<std::uint64_t>();
    if (t.cols != 0 && t.rows > (bytes.size() / 4) / t.cols) throw DataError("model file: tensor '" + t.name + "' too large");
    t.data.resize(t.rows * t.cols);
    for (auto& x : t.data) x = std::bit_cast<float>(r.le<std::uint32_t>());
    f.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("model file: trailing bytes");
  return f;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Metadata list values: tab-joined, elements escaped (\\ \t \n \r)

inline std::string escape_item(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '\\': o += "\\\\"; break;
      case '\t': o += "\\t"; break;
      case '\n': o += "\\n"; break;
      case '\r': o += "\\r"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string unescape_item(std::string_view s) {
  std::string o;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      o += s[i];
      continue;
    }
    const char n = s[++i];
    o += n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : n;
  }
  return o;
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string o;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) o += '\t';
    o += escape_item(items[i]);
  }
  return o;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = s.find('\t', start);
    out.push_back(unescape_item(std::string_view(s).substr(start, tab == std::string::npos ? std::string::npos : tab - start)));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Models and tv-embeddings

namespace detail {

template <typename T, typename Visit>
void store_tensors(TensorFile& f, Visit&& visit) {
  visit([&](auto t) {
    StoredTensor s{t.name, t.rows, t.cols, std::vector<float>(t.data.size())};
    for (std::size_t i = 0; i < t.data.size(); ++i) s.data[i] = static_cast<float>(t.data[i]);
    f.tensors.push_back(std::move(s));
  });
}

/// Fills tensors in visit order, checking names and shapes. Returns the
/// index past the last consumed stored tensor.
template <typename T, typename Visit>
std::size_t load_tensors(const TensorFile& f, std::size_t first, Visit&& visit) {
  std::size_t k = first;
  visit([&](auto t) {
    if (k >= f.tensors.size()) throw DataError("model file: missing tensor '" + t.name + "'");
    const auto& s = f.tensors[k++];
    if (s.name != t.name) throw DataError("model file: expected tensor '" + t.name + "', found '" + s.name + "'");
    if (s.rows != t.rows || s.cols != t.cols)
      throw DataError("model file: tensor '" + t.name + "' has shape " + std::to_string(s.rows) + "x" +
                      std::to_string(s.cols) + ", expected " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    for (std::size_t i = 0; i < s.data.size(); ++i) t.data[i] = static_cast<T>(s.data[i]);
  });
  return k;
}

template <typename T>
void tv_meta(std::map<std::string, std::string>& meta, const std::string& pre, const TvEmbedding<T>& e) {
  meta[pre + "id"] = e.id;
  meta[pre + "kind"] = to_string(e.kind);
  meta[pre + "dim"] = std::to_string(e.dim);
  meta[pre + "direction"] = to_string(e.direction);
  meta[pre + "region_size"] = std::to_string(e.region_size);
  meta[pre + "align_offset"] = std::to_string(e.align_offset);
  meta[pre + "k_next"] = std::to_string(e.k_next);
  meta[pre + "vocab_hash"] = std::to_string(e.vocab_hash);
  meta[pre + "target_vocab_hash"] = std::to_string(e.target_vocab_hash);
  meta[pre + "vocab_size"] = std::to_string(e.vocab_size());
  if (e.kind == TvKind::cnn) meta[pre + "conv_input"] = to_string(e.conv.input_kind);
}

template <typename T, typename F>
void visit_tv(TvEmbedding<T>& e, const std::string& pre, F&& f) {
  if (e.kind == TvKind::lstm)
    visit_lstm(e.lstm, pre, f);
  else
    visit_conv(e.conv, pre, f);
}
template <typename T, typename F>
void visit_tv(const TvEmbedding<T>& e, const std::string& pre, F&& f) {
  if (e.kind == TvKind::lstm)
    visit_lstm(e.lstm, pre, f);
  else
    visit_conv(e.conv, pre, f);
}

template <typename T>
TvEmbedding<T> tv_skeleton(const TensorFile& f, const std::string& pre) {
  TvEmbedding<T> e;
  e.id = f.get(pre + "id");
  const auto& kind = f.get(pre + "kind");
  if (kind != "lstm" && kind != "cnn") throw DataError("tv-embedding: unknown kind '" + kind + "'");
  e.kind = kind == "lstm" ? TvKind::lstm : TvKind::cnn;
  e.dim = f.get_u64(pre + "dim");
  const auto& dir = f.get(pre + "direction");
  if (dir != "fwd" && dir != "bwd") throw DataError("tv-embedding: unknown direction '" + dir + "'");
  e.direction = dir == "fwd" ? Direction::forward : Direction::backward;
  e.region_size = f.get_u64(pre + "region_size");
  e.align_offset = f.get_i64(pre + "align_offset");
  e.k_next = f.get_u64(pre + "k_next");
  e.vocab_hash = f.get_u64(pre + "vocab_hash");
  e.target_vocab_hash = f.get_u64(pre + "target_vocab_hash");
  const auto vsize = f.get_u64(pre + "vocab_size");
  if (e.kind == TvKind::lstm) {
    e.lstm = LstmParams<T>::zeros(LstmVariant::full, e.dim, vsize, InputKind::one_hot);
  } else {
    const auto& ci = f.get(pre + "conv_input");
    e.conv = ConvParams<T>::zeros(e.dim, e.region_size, ci == "seq" ? RegionInput::seq : RegionInput::bow, vsize);
  }
  return e;
}

}  // namespace detail

template <typename T>
TensorFile tv_to_file(const TvEmbedding<T>& e) {
  TensorFile f;
  f.meta["file"] = "tv-embedding";
  detail::tv_meta(f.meta, "", e);
  detail::store_tensors<T>(f, [&](auto&& fn) { detail::visit_tv(e, "", fn); });
  return f;
}

template <typename T>
TvEmbedding<T> tv_from_file(const TensorFile& f) {
  if (f.get("file") != "tv-embedding") throw DataError("not a tv-embedding file");
  auto e = detail::tv_skeleton<T>(f, "");
  const auto k = detail::load_tensors<T>(f, 0, [&](auto&& fn) { detail::visit_tv(e, "", fn); });
  if (k != f.tensors.size()) throw DataError("tv-embedding file: unexpected extra tensors");
  return e;
}

/// A trained model together with the vocabulary its inputs are encoded with.
template <typename T>
struct ModelBundle {
  Model<T> model;
  Vocabulary vocab;
  std::map<std::string, std::string> extra;  // free-form provenance (arch name, flags)
};

template <typename T>
TensorFile model_to_file(const ModelBundle<T>& bundle) {
  const auto& m = bundle.model;
  TensorFile f;
  auto& meta = f.meta;
  for (const auto& [k, v] : bundle.extra) meta["extra." + k] = v;
  meta["file"] = "model";
  meta["vocab"] = join_list(bundle.vocab.words());
  meta["vocab_size_limit"] = std::to_string(bundle.vocab.size_limit());
  meta["n_classes"] = std::to_string(m.n_classes);
  meta["classes"] = join_list(m.class_names);
  meta["target_encoding"] = m.target_encoding == TargetEncoding::zero_one ? "zero-one" : "plus-minus";
  {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", m.top.dropout_rate);
    meta["dropout"] = buf;
  }
  meta["branches"] = std::to_string(m.branches.size());
  for (std::size_t bi = 0; bi < m.branches.size(); ++bi) {
    const auto& br = m.branches[bi];
    const std::string pre = "branch." + std::to_string(bi) + ".";
    meta[pre + "kind"] = to_string(br.kind);
    meta[pre + "pool"] = to_string(br.pool.kind);
    meta[pre + "pool_k"] = std::to_string(br.pool.k);
    meta[pre + "tv"] = join_list(br.tv_ids);
    if (br.is_lstm()) {
      const auto& p = br.lstm.front();
      meta[pre + "variant"] = to_string(p.variant);
      meta[pre + "units"] = std::to_string(p.q);
      meta[pre + "input"] = br.embedding ? "dense" : "one-hot";
      meta[pre + "input_dim"] = std::to_string(p.input_dim);
      if (br.embedding) {
        meta[pre + "embed_vocab"] = std::to_string(br.embedding->cols());
        meta[pre + "update_embedding"] = br.update_embedding ? "1" : "0";
      }
    } else {
      meta[pre + "maps"] = std::to_string(br.conv.m);
      meta[pre + "region"] = std::to_string(br.conv.region_size);
      meta[pre + "conv_input"] = to_string(br.conv.input_kind);
      meta[pre + "vocab_size"] = std::to_string(br.conv.vocab_size);
    }
  }
  meta["tv.count"] = std::to_string(m.tv.size());
  for (std::size_t j = 0; j < m.tv.size(); ++j) detail::tv_meta(meta, "tv." + std::to_string(j) + ".", *m.tv[j]);

  detail::store_tensors<T>(f, [&](auto&& fn) { visit_model(m, fn, true); });
  for (std::size_t j = 0; j < m.tv.size(); ++j)
    detail::store_tensors<T>(f, [&](auto&& fn) { detail::visit_tv(*m.tv[j], "tv." + std::to_string(j) + ".", fn); });
  return f;
}

template <typename T>
ModelBundle<T> model_from_file(const TensorFile& f) {
  if (f.get("file") != "model") throw DataError("not a model file");
  ModelBundle<T> bundle;
  for (const auto& [k, v] : f.meta)
    if (k.rfind("extra.", 0) == 0) bundle.extra[k.substr(6)] = v;
  const auto words = split_list(f.get("vocab"));
  bundle.vocab = Vocabulary(words, {}, std::max<std::size_t>(f.get_u64("vocab_size_limit"), words.size()));
  auto& m = bundle.model;
  m.n_classes = f.get_u64("n_classes");
  m.class_names = split_list(f.get("classes"));
  m.target_encoding = f.get("target_encoding") == "plus-minus" ? TargetEncoding::plus_minus : TargetEncoding::zero_one;
  m.top.dropout_rate = f.get_f64("dropout");

  std::vector<TvEmbedding<T>> tvs;
  const auto n_tv = f.get_u64("tv.count");
  for (std::uint64_t j = 0; j < n_tv; ++j) tvs.push_back(detail::tv_skeleton<T>(f, "tv." + std::to_string(j) + "."));

  const auto n_br = f.get_u64("branches");
  for (std::uint64_t bi = 0; bi < n_br; ++bi) {
    const std::string pre = "branch." + std::to_string(bi) + ".";
    Branch<T> br;
    const auto& kind = f.get(pre + "kind");
    if (kind == "lstm-fwd") br.kind = BranchKind::lstm_forward;
    else if (kind == "lstm-bwd") br.kind = BranchKind::lstm_backward;
    else if (kind == "bilstm") br.kind = BranchKind::bilstm;
    else if (kind == "conv") br.kind = BranchKind::conv;
    else throw DataError("model file: unknown branch kind '" + kind + "'");
    br.pool.kind = f.get(pre + "pool") == "avg" ? PoolKind::avg : PoolKind::max;
    br.pool.k = f.get_u64(pre + "pool_k");
    br.tv_ids = split_list(f.get(pre + "tv"));
    auto tv_dim = [&](const std::string& id) -> std::size_t {
      for (const auto& e : tvs)
        if (e.id == id) return e.dim;
      throw DataError("model file: branch references unknown tv-embedding '" + id + "'");
    };
    if (br.is_lstm()) {
      const auto variant = f.get(pre + "variant") == "full" ? LstmVariant::full : LstmVariant::simplified;
      const auto q = f.get_u64(pre + "units");
      const bool dense = f.get(pre + "input") == "dense";
      const auto in_dim = f.get_u64(pre + "input_dim");
      const std::size_t n = br.kind == BranchKind::bilstm ? 2 : 1;
      for (std::size_t j = 0; j < n; ++j) {
        auto p = LstmParams<T>::zeros(variant, q, in_dim, dense ? InputKind::dense : InputKind::one_hot);
        for (const auto& id : br.tv_ids) {
          SideInputParams<T> s{id, tv_dim(id), {}};
          for (std::size_t g = 0; g < p.gate_count(); ++g) s.W.emplace_back(q, s.dim);
          p.side.push_back(std::move(s));
        }
        br.lstm.push_back(std::move(p));
      }
      if (dense) {
        br.embedding = Matrix<T>(in_dim, f.get_u64(pre + "embed_vocab"));
        br.update_embedding = f.get(pre + "update_embedding") == "1";
      }
    } else {
      br.conv = ConvParams<T>::zeros(f.get_u64(pre + "maps"), f.get_u64(pre + "region"),
                                     f.get(pre + "conv_input") == "bow" ? RegionInput::bow : RegionInput::seq,
                                     f.get_u64(pre + "vocab_size"));
      for (const auto& id : br.tv_ids) br.conv.side.push_back({id, tv_dim(id), Matrix<T>(br.conv.m, tv_dim(id))});
    }
    m.branches.push_back(std::move(br));
  }
  m.top.W = Matrix<T>(m.n_classes, m.feature_dim());
  m.top.b = Vec<T>(m.n_classes, T(0));

  std::size_t k = detail::load_tensors<T>(f, 0, [&](auto&& fn) { visit_model(m, fn, true); });
  for (std::size_t j = 0; j < tvs.size(); ++j)
    k = detail::load_tensors<T>(f, k, [&](auto&& fn) { detail::visit_tv(tvs[j], "tv." + std::to_string(j) + ".", fn); });
  if (k != f.tensors.size()) throw DataError("model file: unexpected extra tensors");
  for (auto& e : tvs) m.tv.push_back(std::make_shared<const TvEmbedding<T>>(std::move(e)));
  m.validate();
  return bundle;
}

template <typename T>
void save_model(const std::string& path, const ModelBundle<T>& b) {
  write_file(path, encode_tensor_file(model_to_file(b)));
}
template <typename T>
ModelBundle<T> load_model(const std::string& path) {
  return model_from_file<T>(decode_tensor_file(read_file(path)));
}
template <typename T>
void save_tv(const std::string& path, const TvEmbedding<T>& e) {
  write_file(path, encode_tensor_file(tv_to_file(e)));
}
template <typename T>
TvEmbedding<T> load_tv(const std::string& path) {
  return tv_from_file<T>(decode_tensor_file(read_file(path)));
}

// ---------------------------------------------------------------------------
// Word vectors: "word v1 v2 ... vd" per line

/// d x |V| matrix, columns in vocabulary order; words missing from the file
/// stay zero. All values are multiplied by `scale`.
template <typename T>
Matrix<T> load_word_vectors(const std::string& path, const Vocabulary& vocab, double scale = 1.0) {
  const auto lines = read_lines(path);
  Matrix<T> V;
  std::size_t d = 0;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::istringstream ss(lines[ln]);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vals;
    double x;
    while (ss >> x) vals.push_back(x);
    if (!ss.eof()) throw DataError(path + ":" + std::to_string(ln + 1) + ": malformed vector");
    if (d == 0) {
      if (vals.empty()) throw DataError(path + ":" + std::to_string(ln + 1) + ": empty vector");
      d = vals.size();
      V = Matrix<T>(d, vocab.size());
    }
    if (vals.size() != d)
      throw DataError(path + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(d) + " values, got " +
                      std::to_string(vals.size()));
    if (auto id = vocab.find(word))
      for (std::size_t k = 0; k < d; ++k) V(k, *id) = static_cast<T>(scale * vals[k]);
  }
  if (d == 0) throw DataError(path + ": no word vectors");
  return V;
}

}  // namespace rgem
