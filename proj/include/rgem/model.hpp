// Region embedding branches + pooling + linear top layer.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rgem/conv.hpp"
#include "rgem/corpus.hpp"
#include "rgem/lstm.hpp"
#include "rgem/numkernel.hpp"
#include "rgem/optimizer.hpp"
#include "rgem/parallel.hpp"
#include "rgem/tvembed.hpp"

namespace rgem {

// ---------------------------------------------------------------------------
// Pooling

enum class PoolKind { max, avg };

inline const char* to_string(PoolKind k) { return k == PoolKind::max ? "max" : "avg"; }

struct PoolingSpec {
  PoolKind kind = PoolKind::max;
  std::size_t k = 1;
  friend bool operator==(const PoolingSpec&, const PoolingSpec&) = default;
};

/// Region i covers columns [floor(i*T/k), floor((i+1)*T/k)).
inline std::pair<std::size_t, std::size_t> pool_region(std::size_t i, std::size_t T, std::size_t k) {
  return {i * T / k, (i + 1) * T / k};
}

/// Reduces each of k contiguous column regions of H (q x T) by max or mean
/// and concatenates the k results. Empty regions give zero vectors.
template <typename T>
Vec<T> pool(const Matrix<T>& H, const PoolingSpec& spec) {
  require(spec.k >= 1, "pool: k must be >= 1");
  const std::size_t q = H.rows(), Tn = H.cols();
  Vec<T> out(q * spec.k, T(0));
  for (std::size_t i = 0; i < spec.k; ++i) {
    const auto [lo, hi] = pool_region(i, Tn, spec.k);
    if (lo == hi) continue;
    T* o = out.data() + i * q;
    for (std::size_t r = 0; r < q; ++r) {
      const T* h = H.row(r);
      if (spec.kind == PoolKind::max) {
        T m = h[lo];
        for (std::size_t t = lo + 1; t < hi; ++t) m = std::max(m, h[t]);
        o[r] = m;
      } else {
        T s = T(0);
        for (std::size_t t = lo; t < hi; ++t) s += h[t];
        o[r] = s / static_cast<T>(hi - lo);
      }
    }
  }
  return out;
}

/// dL/dH given dL/d(pooled). Max routes to the first maximal column.
template <typename T>
Matrix<T> pool_backward(const Matrix<T>& H, const PoolingSpec& spec, std::span<const T> dpooled) {
  const std::size_t q = H.rows(), Tn = H.cols();
  require(dpooled.size() == q * spec.k, "pool_backward: gradient size mismatch");
  Matrix<T> dH(q, Tn);
  for (std::size_t i = 0; i < spec.k; ++i) {
    const auto [lo, hi] = pool_region(i, Tn, spec.k);
    if (lo == hi) continue;
    const T* d = dpooled.data() + i * q;
    for (std::size_t r = 0; r < q; ++r) {
      const T* h = H.row(r);
      if (spec.kind == PoolKind::max) {
        std::size_t arg = lo;
        for (std::size_t t = lo + 1; t < hi; ++t)
          if (h[t] > h[arg]) arg = t;
        dH(r, arg) += d[r];
      } else {
        const T g = d[r] / static_cast<T>(hi - lo);
        for (std::size_t t = lo; t < hi; ++t) dH(r, t) += g;
      }
    }
  }
  return dH;
}

// ---------------------------------------------------------------------------
// Model

enum class BranchKind { lstm_forward, lstm_backward, bilstm, conv };
enum class TargetEncoding { zero_one, plus_minus };

inline const char* to_string(BranchKind k) {
  switch (k) {
    case BranchKind::lstm_forward: return "lstm-fwd";
    case BranchKind::lstm_backward: return "lstm-bwd";
    case BranchKind::bilstm: return "bilstm";
    case BranchKind::conv: return "conv";
  }
  return "?";
}

template <typename T>
struct Branch {
  BranchKind kind = BranchKind::conv;
  std::vector<LstmParams<T>> lstm;    // one entry; bilstm: {forward, backward}
  ConvParams<T> conv;                 // conv kind
  std::optional<Matrix<T>> embedding; // d x |V| word vectors feeding a dense-input LSTM
  bool update_embedding = true;
  std::vector<std::string> tv_ids;    // attached side inputs, in attachment order
  PoolingSpec pool;

  bool is_lstm() const noexcept { return kind != BranchKind::conv; }
  std::size_t region_dim() const {
    if (kind == BranchKind::conv) return conv.m;
    std::size_t d = 0;
    for (const auto& p : lstm) d += p.q;
    return d;
  }
  std::size_t output_dim() const { return region_dim() * pool.k; }
  Direction direction(std::size_t j) const {
    if (kind == BranchKind::lstm_backward) return Direction::backward;
    return j == 0 ? Direction::forward : Direction::backward;
  }

  friend bool operator==(const Branch&, const Branch&) = default;
};

template <typename T>
struct TopLayerParams {
  Matrix<T> W;  // n_classes x D
  Vec<T> b;
  double dropout_rate = 0.5;
  friend bool operator==(const TopLayerParams&, const TopLayerParams&) = default;
};

template <typename T>
struct Model {
  std::vector<Branch<T>> branches;
  TopLayerParams<T> top;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;
  TargetEncoding target_encoding = TargetEncoding::zero_one;
  std::vector<std::shared_ptr<const TvEmbedding<T>>> tv;  // frozen

  std::size_t feature_dim() const {
    std::size_t d = 0;
    for (const auto& b : branches) d += b.output_dim();
    return d;
  }

  const TvEmbedding<T>* find_tv(const std::string& id) const {
    for (const auto& e : tv)
      if (e->id == id) return e.get();
    return nullptr;
  }

  void validate() const {
    require(n_classes >= 1, "Model: n_classes must be >= 1");
    require(top.W.rows() == n_classes && top.W.cols() == feature_dim(), "Model: top layer shape");
    require(top.b.size() == n_classes, "Model: top bias shape");
    for (const auto& br : branches) {
      require(br.pool.k >= 1, "Model: pooling k must be >= 1");
      if (br.is_lstm()) {
        require(br.lstm.size() == (br.kind == BranchKind::bilstm ? 2u : 1u), "Model: LSTM count for branch kind");
        for (const auto& p : br.lstm) {
          p.validate();
          require(p.side.size() == br.tv_ids.size(), "Model: side params / tv ids mismatch");
          if (br.embedding) require(p.input_kind == InputKind::dense && p.input_dim == br.embedding->rows(),
                                    "Model: embedding / LSTM input mismatch");
        }
      } else {
        br.conv.validate();
        require(br.conv.side.size() == br.tv_ids.size(), "Model: side params / tv ids mismatch");
      }
      for (const auto& id : br.tv_ids) {
        const auto* e = find_tv(id);
        if (!e) throw ContractError("Model: unresolved tv-embedding '" + id + "'");
      }
    }
  }

  friend bool operator==(const Model& a, const Model& b) {
    if (!(a.branches == b.branches && a.top == b.top && a.n_classes == b.n_classes &&
          a.class_names == b.class_names && a.target_encoding == b.target_encoding && a.tv.size() == b.tv.size()))
      return false;
    for (std::size_t i = 0; i < a.tv.size(); ++i)
      if (!(*a.tv[i] == *b.tv[i])) return false;
    return true;
  }
};

/// Visits trainable tensors (or all tensors, including frozen embeddings
/// with `include_frozen`) as f(TensorRef). Frozen tv-embeddings are never
/// visited here.
template <typename M, typename F>
void visit_model(M& model, F&& f, bool include_frozen = false) {
  for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
    auto& br = model.branches[bi];
    const std::string pre = "branch" + std::to_string(bi) + ".";
    if (br.is_lstm()) {
      for (std::size_t j = 0; j < br.lstm.size(); ++j)
        visit_lstm(br.lstm[j], pre + (br.direction(j) == Direction::forward ? "fwd." : "bwd."), f);
      if (br.embedding && (br.update_embedding || include_frozen))
        f(tensor_ref(pre + "embed", br.embedding->rows(), br.embedding->cols(), br.embedding->span()));
    } else {
      visit_conv(br.conv, pre + "conv.", f);
    }
  }
  f(tensor_ref(std::string("top.W"), model.top.W.rows(), model.top.W.cols(), model.top.W.span()));
  f(tensor_ref(std::string("top.b"), model.top.b.size(), std::size_t{1}, std::span(model.top.b)));
}

template <typename T>
std::vector<TensorRef<T>> trainable_tensors(Model<T>& m) {
  std::vector<TensorRef<T>> out;
  visit_model(m, [&](auto t) { out.push_back(t); });
  return out;
}

/// Same structure, zero tensors; the gradient accumulator type.
template <typename T>
Model<T> zeros_like(const Model<T>& m) {
  Model<T> z = m;
  visit_model(z, [](auto t) { std::fill(t.data.begin(), t.data.end(), T(0)); }, true);
  return z;
}

// ---------------------------------------------------------------------------
// Construction

template <typename T>
Branch<T> make_lstm_branch(BranchKind kind, LstmVariant variant, std::size_t units, std::size_t vocab_size,
                           PoolingSpec pool, double init_std, Rng& rng,
                           std::optional<Matrix<T>> embedding = std::nullopt) {
  require(kind != BranchKind::conv, "make_lstm_branch: conv kind");
  Branch<T> b;
  b.kind = kind;
  b.pool = pool;
  const bool dense = embedding.has_value();
  const std::size_t in_dim = dense ? embedding->rows() : vocab_size;
  if (dense) require(embedding->cols() == vocab_size, "make_lstm_branch: embedding columns != vocab size");
  const std::size_t n = kind == BranchKind::bilstm ? 2 : 1;
  for (std::size_t j = 0; j < n; ++j)
    b.lstm.push_back(LstmParams<T>::random(variant, units, in_dim, dense ? InputKind::dense : InputKind::one_hot,
                                           init_std, rng));
  b.embedding = std::move(embedding);
  return b;
}

template <typename T>
Branch<T> make_conv_branch(std::size_t maps, std::size_t region, RegionInput input, std::size_t vocab_size,
                           PoolingSpec pool, double init_std, Rng& rng) {
  Branch<T> b;
  b.kind = BranchKind::conv;
  b.pool = pool;
  b.conv = ConvParams<T>::random(maps, region, input, vocab_size, init_std, rng);
  return b;
}

/// Sizes the top layer for the current branches.
template <typename T>
void init_top(Model<T>& m, std::size_t n_classes, double dropout_rate, double init_std, Rng& rng) {
  m.n_classes = n_classes;
  m.top.W = gaussian_init<T>(n_classes, m.feature_dim(), init_std, rng);
  m.top.b = Vec<T>(n_classes, T(0));
  m.top.dropout_rate = dropout_rate;
}

/// Registers frozen tv-embeddings with the model and allocates Gaussian
/// side matrices for them in branch `bi` (every gate of every LSTM, or the
/// single conv side matrix).
template <typename T>
void attach(Model<T>& model, std::size_t bi, const std::vector<std::shared_ptr<const TvEmbedding<T>>>& embs,
            Rng& rng, double init_std) {
  require(bi < model.branches.size(), "attach: branch index out of range");
  auto& br = model.branches[bi];
  for (const auto& e : embs) {
    require(e != nullptr, "attach: null tv-embedding");
    if (const auto* known = model.find_tv(e->id)) {
      require(known == e.get() || *known == *e, "attach: different tv-embedding with id '" + e->id + "'");
    } else {
      model.tv.push_back(e);
    }
    require(std::find(br.tv_ids.begin(), br.tv_ids.end(), e->id) == br.tv_ids.end(),
            "attach: tv-embedding '" + e->id + "' already attached to branch");
    if (br.is_lstm()) {
      const std::size_t vsize = br.embedding ? br.embedding->cols() : br.lstm.front().input_dim;
      require(e->vocab_size() == vsize, "attach: tv-embedding vocabulary size differs from model input");
      for (auto& p : br.lstm) p.add_side(e->id, e->dim, init_std, rng);
    } else {
      require(e->vocab_size() == br.conv.vocab_size, "attach: tv-embedding vocabulary size differs from model input");
      br.conv.add_side(e->id, e->dim, init_std, rng);
    }
    br.tv_ids.push_back(e->id);
  }
}

// ---------------------------------------------------------------------------
// Loss and prediction

template <typename T>
struct ScalarLoss {
  double loss = 0;
  Vec<T> grad;
};

/// Σ_c (scores[c] - y[c])^2 with y the one-hot (or ±1) target.
template <typename T>
ScalarLoss<T> square_loss(std::span<const T> scores, std::size_t label,
                          TargetEncoding enc = TargetEncoding::zero_one) {
  require(label < scores.size(), "square_loss: label out of range");
  ScalarLoss<T> out{0.0, Vec<T>(scores.size())};
  const T off = enc == TargetEncoding::zero_one ? T(0) : T(-1);
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const T y = c == label ? T(1) : off;
    const T d = scores[c] - y;
    out.loss += static_cast<double>(d * d);
    out.grad[c] = T(2) * d;
  }
  return out;
}

/// Argmax, lowest index on ties.
template <typename T>
std::size_t predict(std::span<const T> scores) {
  require(!scores.empty(), "predict: empty scores");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// Forward / backward over a batch of documents

enum class Mode { eval, train };

template <typename T>
struct BatchOptions {
  Mode mode = Mode::eval;
  ChopSpec chop;                          // LSTM branches, train mode only
  const std::vector<Vec<T>>* masks = nullptr;  // per-doc dropout masks (train)
};

namespace detail {

/// Everything computed for one batch of documents by one worker.
template <typename T>
struct BatchState {
  std::vector<const TokenSequence*> docs;
  std::map<std::string, std::vector<Matrix<T>>> tv_out;      // per tv id, per doc
  std::vector<std::vector<Matrix<T>>> dense_in;              // per branch, per doc (wv input)
  std::vector<std::vector<std::vector<SequenceInput<T>>>> seq_in;  // per branch, per lstm, per doc
  std::vector<std::vector<LstmBatch<T>>> lstm_fwd;           // per branch, per lstm
  std::vector<std::vector<Matrix<T>>> region;                // per branch, per doc (stacked for bilstm)
  std::vector<Vec<T>> features;                              // per doc, after dropout
  std::vector<Vec<T>> scores;
};

template <typename T>
std::vector<Matrix<T>> apply_tv_batch(const TvEmbedding<T>& e, const std::vector<const TokenSequence*>& docs) {
  std::vector<Matrix<T>> out;
  if (e.kind == TvKind::lstm) {
    std::vector<SequenceInput<T>> in;
    for (const auto* d : docs) {
      for (WordId id : d->ids) require(id < e.lstm.input_dim, "tv-embedding: word id >= vocab size");
      in.push_back({d->ids, nullptr, {}});
    }
    auto b = lstm_forward_batch<T>(e.lstm, in, e.direction, {}, {}, false);
    return std::move(b.outputs);
  }
  for (const auto* d : docs) out.push_back(apply_tv(e, std::span<const WordId>(d->ids)));
  return out;
}

template <typename T>
BatchState<T> forward_batch(const Model<T>& m, std::vector<const TokenSequence*> docs, const BatchOptions<T>& opt) {
  BatchState<T> st;
  st.docs = std::move(docs);
  const std::size_t n = st.docs.size();
  const bool train = opt.mode == Mode::train;

  for (const auto& br : m.branches)
    for (const auto& id : br.tv_ids)
      if (!st.tv_out.count(id)) st.tv_out[id] = apply_tv_batch(*m.find_tv(id), st.docs);

  const std::size_t B = m.branches.size();
  st.dense_in.resize(B);
  st.seq_in.resize(B);
  st.lstm_fwd.resize(B);
  st.region.resize(B);
  for (std::size_t bi = 0; bi < B; ++bi) {
    const auto& br = m.branches[bi];
    std::vector<std::vector<const Matrix<T>*>> side(n);
    for (std::size_t d = 0; d < n; ++d)
      for (const auto& id : br.tv_ids) side[d].push_back(&st.tv_out.at(id)[d]);

    if (!br.is_lstm()) {
      for (std::size_t d = 0; d < n; ++d)
        st.region[bi].push_back(conv_forward<T>(br.conv, st.docs[d]->ids, side[d]));
      continue;
    }
    if (br.embedding)
      for (std::size_t d = 0; d < n; ++d) st.dense_in[bi].push_back(embed_sequence(*br.embedding, std::span<const WordId>(st.docs[d]->ids)));
    std::vector<Matrix<T>> outs;
    st.seq_in[bi].resize(br.lstm.size());
    for (std::size_t j = 0; j < br.lstm.size(); ++j) {
      auto& in = st.seq_in[bi][j];
      for (std::size_t d = 0; d < n; ++d)
        in.push_back({st.docs[d]->ids, br.embedding ? &st.dense_in[bi][d] : nullptr, side[d]});
      st.lstm_fwd[bi].push_back(lstm_forward_batch<T>(br.lstm[j], in, br.direction(j),
                                                      train ? opt.chop : ChopSpec{}, {}, train));
    }
    for (std::size_t d = 0; d < n; ++d) {
      if (br.lstm.size() == 1) {
        st.region[bi].push_back(st.lstm_fwd[bi][0].outputs[d]);
      } else {
        const auto& F = st.lstm_fwd[bi][0].outputs[d];
        const auto& Bk = st.lstm_fwd[bi][1].outputs[d];
        Matrix<T> H(F.rows() + Bk.rows(), F.cols());
        std::copy(F.data().begin(), F.data().end(), H.data().begin());
        std::copy(Bk.data().begin(), Bk.data().end(), H.data().begin() + static_cast<std::ptrdiff_t>(F.size()));
        st.region[bi].push_back(std::move(H));
      }
    }
    if (!train) st.lstm_fwd[bi].clear();
  }

  st.features.resize(n);
  st.scores.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    auto& x = st.features[d];
    x.reserve(m.feature_dim());
    for (std::size_t bi = 0; bi < B; ++bi) {
      auto pooled = pool(st.region[bi][d], m.branches[bi].pool);
      x.insert(x.end(), pooled.begin(), pooled.end());
    }
    if (train && opt.masks) {
      const auto& mask = (*opt.masks)[d];
      require(mask.size() == x.size(), "forward_batch: dropout mask size mismatch");
      for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
    }
    st.scores[d] = affine_dense<T>(m.top.W, m.top.b, x);
  }
  return st;
}

/// Backpropagates per-document dL/dscores into `grad`.
template <typename T>
void backward_batch(const Model<T>& m, BatchState<T>& st, const std::vector<Vec<T>>& dscores,
                    const BatchOptions<T>& opt, Model<T>& grad) {
  const std::size_t n = st.docs.size();
  const std::size_t D = m.feature_dim();
  const std::size_t B = m.branches.size();
  std::vector<std::vector<Matrix<T>>> dregion(B);
  for (std::size_t d = 0; d < n; ++d) {
    const auto& g = dscores[d];
    const auto& x = st.features[d];
    for (std::size_t c = 0; c < m.n_classes; ++c) {
      grad.top.b[c] += g[c];
      T* gw = grad.top.W.row(c);
      for (std::size_t i = 0; i < D; ++i) gw[i] += g[c] * x[i];
    }
    Vec<T> dx(D, T(0));
    for (std::size_t c = 0; c < m.n_classes; ++c) axpy<T>(g[c], std::span<const T>(m.top.W.row(c), D), dx);
    if (opt.mode == Mode::train && opt.masks)
      for (std::size_t i = 0; i < D; ++i) dx[i] *= (*opt.masks)[d][i];
    std::size_t off = 0;
    for (std::size_t bi = 0; bi < B; ++bi) {
      const std::size_t len = m.branches[bi].output_dim();
      dregion[bi].push_back(pool_backward<T>(st.region[bi][d], m.branches[bi].pool,
                                             std::span<const T>(dx.data() + off, len)));
      off += len;
    }
  }

  for (std::size_t bi = 0; bi < B; ++bi) {
    const auto& br = m.branches[bi];
    auto& gbr = grad.branches[bi];
    if (!br.is_lstm()) {
      for (std::size_t d = 0; d < n; ++d) {
        std::vector<const Matrix<T>*> side;
        for (const auto& id : br.tv_ids) side.push_back(&st.tv_out.at(id)[d]);
        conv_backward<T>(br.conv, st.docs[d]->ids, side, st.region[bi][d], dregion[bi][d], gbr.conv);
      }
      continue;
    }
    require(st.lstm_fwd[bi].size() == br.lstm.size(), "backward_batch: forward pass ran in eval mode");
    std::size_t row0 = 0;
    for (std::size_t j = 0; j < br.lstm.size(); ++j) {
      const std::size_t q = br.lstm[j].q;
      std::vector<Matrix<T>> up;
      for (std::size_t d = 0; d < n; ++d) {
        const auto& full = dregion[bi][d];
        Matrix<T> U(q, full.cols());
        std::copy(full.row(row0), full.row(row0) + q * full.cols(), U.data().begin());
        up.push_back(std::move(U));
      }
      const bool need_input = br.embedding && br.update_embedding;
      LstmInputGrads<T> ig;
      lstm_backward_batch<T>(br.lstm[j], st.seq_in[bi][j], st.lstm_fwd[bi][j], up, gbr.lstm[j],
                             need_input ? &ig : nullptr);
      if (need_input) {
        auto& dV = *gbr.embedding;
        for (std::size_t d = 0; d < n; ++d) {
          const auto& dX = ig.dense[d];
          const auto& ids = st.docs[d]->ids;
          for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t k = 0; k < dX.rows(); ++k) dV(k, ids[t]) += dX(k, t);
        }
      }
      row0 += q;
    }
  }
}

}  // namespace detail

/// Scores for one document. Train mode applies `mask` (inverted dropout) to
/// the top-layer input; eval mode uses the input as is.
template <typename T>
Vec<T> model_forward(const Model<T>& m, const TokenSequence& doc, Mode mode = Mode::eval,
                     const Vec<T>* mask = nullptr, ChopSpec chop = {}) {
  std::vector<Vec<T>> masks;
  if (mask) masks.push_back(*mask);
  BatchOptions<T> opt{mode, chop, mask ? &masks : nullptr};
  auto st = detail::forward_batch<T>(m, {&doc}, opt);
  return std::move(st.scores.front());
}

/// Eval-mode scores for many documents.
template <typename T>
std::vector<Vec<T>> model_scores(const Model<T>& m, std::span<const TokenSequence> docs, std::size_t workers = 1,
                                 std::size_t batch = 64) {
  std::vector<Vec<T>> out(docs.size());
  const std::size_t n_batches = (docs.size() + batch - 1) / batch;
  parallel_chunks(workers, n_batches, true, [&](std::size_t, std::size_t b0, std::size_t b1) {
    for (std::size_t bi = b0; bi < b1; ++bi) {
      std::vector<const TokenSequence*> ptrs;
      for (std::size_t d = bi * batch; d < std::min(docs.size(), (bi + 1) * batch); ++d) ptrs.push_back(&docs[d]);
      auto st = detail::forward_batch<T>(m, ptrs, {});
      for (std::size_t k = 0; k < ptrs.size(); ++k) out[bi * batch + k] = std::move(st.scores[k]);
    }
  });
  return out;
}

/// Percentage of misclassified documents.
template <typename T>
double error_rate(const Model<T>& m, const Dataset& ds, std::size_t workers = 1) {
  if (ds.docs.empty()) throw DataError("error_rate: empty dataset");
  if (!ds.labeled()) throw DataError("error_rate: unlabeled documents");
  const auto scores = model_scores(m, std::span<const TokenSequence>(ds.docs), workers);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (predict<T>(scores[i]) != *ds.docs[i].label) ++wrong;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.docs.size());
}

/// Total loss over `docs` (labels required) and its gradient, added to `grad`.
template <typename T>
double loss_and_gradient(const Model<T>& m, const std::vector<const TokenSequence*>& docs,
                         const BatchOptions<T>& opt, Model<T>& grad) {
  BatchOptions<T> o = opt;
  o.mode = Mode::train;
  auto st = detail::forward_batch<T>(m, docs, o);
  std::vector<Vec<T>> dscores;
  double loss = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    require(docs[d]->label.has_value(), "loss_and_gradient: unlabeled document");
    auto l = square_loss<T>(st.scores[d], *docs[d]->label, m.target_encoding);
    loss += l.loss;
    dscores.push_back(std::move(l.grad));
  }
  detail::backward_batch<T>(m, st, dscores, o, grad);
  return loss;
}

/// Eval-mode loss for a single labeled document.
template <typename T>
double document_loss(const Model<T>& m, const TokenSequence& doc) {
  require(doc.label.has_value(), "document_loss: unlabeled document");
  const auto s = model_forward(m, doc);
  return square_loss<T>(s, *doc.label, m.target_encoding).loss;
}

}  // namespace rgem
