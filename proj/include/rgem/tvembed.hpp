// Two-view embeddings: region embeddings trained on unlabeled text to predict
// neighbouring words, then frozen and fed to supervised models as side input.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <unordered_set>
#include <memory>
#include <string>
#include <vector>

#include "rgem/conv.hpp"
#include "rgem/corpus.hpp"
#include "rgem/lstm.hpp"
#include "rgem/optimizer.hpp"
#include "rgem/parallel.hpp"

namespace rgem {

enum class TvKind { lstm, cnn };

inline const char* to_string(TvKind k) { return k == TvKind::lstm ? "lstm" : "cnn"; }

/// Maps source-vocabulary ids to target-vocabulary ids (-1 when excluded).
struct TargetMap {
  std::vector<std::int32_t> source_to_target;
  std::size_t size = 0;
  std::uint64_t hash = 0;

  static TargetMap build(const Vocabulary& source, const Vocabulary& target) {
    TargetMap m;
    m.size = target.size();
    m.hash = target.hash();
    m.source_to_target.assign(source.size(), -1);
    for (std::size_t i = 0; i < source.size(); ++i)
      if (auto id = target.find(source.word(static_cast<WordId>(i)))) m.source_to_target[i] = static_cast<std::int32_t>(*id);
    return m;
  }
  static TargetMap identity(std::size_t n) {
    TargetMap m;
    m.size = n;
    m.source_to_target.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.source_to_target[i] = static_cast<std::int32_t>(i);
    return m;
  }
};

struct TvObjectiveSpec {
  std::size_t k_next = 5;
  std::size_t neg_samples = 10;
  Direction direction = Direction::forward;  // lstm form
  std::size_t region_size = 5;               // cnn form
  RegionInput cnn_input = RegionInput::bow;  // cnn form
  TargetMap targets;

  void validate() const {
    require(k_next >= 1, "TvObjectiveSpec: k_next must be >= 1");
    require(region_size >= 1, "TvObjectiveSpec: region_size must be >= 1");
    require(targets.size >= 1, "TvObjectiveSpec: empty target vocabulary");
  }
};

template <typename T>
struct TvEmbedding {
  std::string id;
  TvKind kind = TvKind::lstm;
  std::size_t dim = 0;
  Direction direction = Direction::forward;
  std::size_t region_size = 1;
  std::ptrdiff_t align_offset = 0;
  std::size_t k_next = 0;
  std::uint64_t vocab_hash = 0;
  std::uint64_t target_vocab_hash = 0;
  LstmParams<T> lstm;  // full variant, one-hot input (lstm kind)
  ConvParams<T> conv;  // (cnn kind)

  std::size_t vocab_size() const { return kind == TvKind::lstm ? lstm.input_dim : conv.vocab_size; }

  friend bool operator==(const TvEmbedding&, const TvEmbedding&) = default;
};

inline std::ptrdiff_t center_offset(std::size_t region_size) {
  return static_cast<std::ptrdiff_t>((region_size - 1) / 2);
}

/// dim x T side-input matrix for a document. LSTM kind: h_t at each position
/// (right-to-left for the backward direction). CNN kind: the region starting
/// at l lands at l + align_offset; only complete regions are used and all
/// other positions are zero.
template <typename T>
Matrix<T> apply_tv(const TvEmbedding<T>& emb, std::span<const WordId> ids) {
  if (emb.kind == TvKind::lstm) {
    SequenceInput<T> in{ids, nullptr, {}};
    return emb.direction == Direction::forward ? forward_sequence(emb.lstm, in) : reverse_forward(emb.lstm, in);
  }
  const std::size_t T_ = ids.size();
  Matrix<T> out(emb.dim, T_);
  if (T_ < emb.region_size) return out;
  const auto full = conv_forward<T>(emb.conv, ids);
  for (std::size_t l = 0; l + emb.region_size <= T_; ++l) {
    const auto pos = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(l) + emb.align_offset);
    for (std::size_t r = 0; r < emb.dim; ++r) out(r, pos) = full(r, l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objective

/// Bag of the next (forward) or preceding (backward) k_next words, restricted
/// to the target vocabulary.
inline SparseVector tv_targets(std::span<const WordId> ids, std::size_t t, const TvObjectiveSpec& spec) {
  require(t < ids.size(), "tv_targets: position out of range");
  std::vector<std::uint32_t> idx;
  auto add = [&](std::size_t pos) {
    const WordId w = ids[pos];
    require(w < spec.targets.source_to_target.size(), "tv_targets: id outside source vocabulary");
    const auto tgt = spec.targets.source_to_target[w];
    if (tgt >= 0) idx.push_back(static_cast<std::uint32_t>(tgt));
  };
  if (spec.direction == Direction::forward) {
    for (std::size_t p = t + 1; p < ids.size() && p <= t + spec.k_next; ++p) add(p);
  } else {
    const std::size_t lo = t >= spec.k_next ? t - spec.k_next : 0;
    for (std::size_t p = lo; p < t; ++p) add(p);
  }
  return sparse_from_counts(spec.targets.size, std::move(idx));
}

/// Bag of the k words on each side of the region [l, l + region_size).
inline SparseVector tv_context_targets(std::span<const WordId> ids, std::size_t l, const TvObjectiveSpec& spec) {
  require(l < ids.size(), "tv_context_targets: position out of range");
  std::vector<std::uint32_t> idx;
  auto add = [&](std::size_t pos) {
    const auto tgt = spec.targets.source_to_target.at(ids[pos]);
    if (tgt >= 0) idx.push_back(static_cast<std::uint32_t>(tgt));
  };
  const std::size_t lo = l >= spec.k_next ? l - spec.k_next : 0;
  for (std::size_t p = lo; p < l; ++p) add(p);
  for (std::size_t p = l + spec.region_size; p < ids.size() && p < l + spec.region_size + spec.k_next; ++p) add(p);
  return sparse_from_counts(spec.targets.size, std::move(idx));
}

/// Coordinates with non-zero weight: all positives of z plus `neg_samples`
/// zero coordinates drawn uniformly without replacement (Floyd's algorithm).
/// Returned sorted.
inline std::vector<std::uint32_t> sample_weight_support(const SparseVector& z, std::size_t neg_samples, Rng& rng) {
  const std::size_t zeros = z.dim - z.nnz();
  const std::size_t k = std::min(neg_samples, zeros);
  std::vector<std::uint64_t> ranks;
  if (k == zeros) {
    for (std::size_t r = 0; r < zeros; ++r) ranks.push_back(r);
  } else {
    std::unordered_set<std::uint64_t> chosen;
    for (std::size_t j = zeros - k; j < zeros; ++j) {
      const std::uint64_t t = rng.below(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    ranks.assign(chosen.begin(), chosen.end());
    std::sort(ranks.begin(), ranks.end());
  }
  // rank among zero coordinates -> coordinate index
  std::vector<std::uint32_t> out;
  out.reserve(z.nnz() + ranks.size());
  std::size_t e = 0;
  std::uint64_t skipped = 0;
  for (std::uint64_t r : ranks) {
    while (e < z.entries.size() && z.entries[e].index <= r + skipped) {
      ++skipped;
      ++e;
    }
    out.push_back(static_cast<std::uint32_t>(r + skipped));
  }
  for (const auto& en : z.entries) out.push_back(en.index);
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
struct LossAndGrad {
  double loss = 0;
  Vec<T> grad;
};

/// Σ_j α_j (z[j] - p[j])^2 and its gradient with respect to p.
template <typename T>
LossAndGrad<T> weighted_square_loss(std::span<const T> p, const SparseVector& z, std::span<const T> alpha) {
  require(p.size() == z.dim && alpha.size() == z.dim, "weighted_square_loss: dimension mismatch");
  const auto zd = densify<T>(z);
  LossAndGrad<T> out{0.0, Vec<T>(p.size(), T(0))};
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (alpha[j] == T(0)) continue;
    const T diff = p[j] - zd[j];
    out.loss += static_cast<double>(alpha[j] * diff * diff);
    out.grad[j] = T(2) * alpha[j] * diff;
  }
  return out;
}

/// 0/1 weights: positives of z plus sampled negatives.
template <typename T>
Vec<T> negative_sampling_weights(const SparseVector& z, std::size_t neg_samples, Rng& rng) {
  Vec<T> alpha(z.dim, T(0));
  for (auto j : sample_weight_support(z, neg_samples, rng)) alpha[j] = T(1);
  return alpha;
}

// ---------------------------------------------------------------------------
// Training

template <typename T>
struct TvTrainResult {
  TvEmbedding<T> emb;
  double initial_loss = 0;          // mean per-position loss before any update
  std::vector<double> epoch_loss;   // mean per-position training loss per epoch
};

namespace detail {

/// Linear prediction head restricted to the sampled coordinates.
template <typename T>
struct TvHead {
  Matrix<T> W;  // |target| x dim
  Vec<T> b;

  /// Adds the loss at one position; writes dL/dh into dh (length dim) and
  /// head gradients into gW/gb when non-null. Returns the loss.
  double position(std::span<const T> h, const SparseVector& z, const std::vector<std::uint32_t>& support,
                  std::span<T> dh, TvHead* grad) const {
    double loss = 0;
    std::size_t e = 0;
    for (auto j : support) {
      T zj = T(0);
      while (e < z.entries.size() && z.entries[e].index < j) ++e;
      if (e < z.entries.size() && z.entries[e].index == j) zj = static_cast<T>(z.entries[e].value);
      const T* w = W.row(j);
      T pj = b[j];
      for (std::size_t k = 0; k < h.size(); ++k) pj += w[k] * h[k];
      const T diff = pj - zj;
      loss += static_cast<double>(diff * diff);
      const T g = T(2) * diff;
      for (std::size_t k = 0; k < h.size(); ++k) dh[k] += g * w[k];
      if (grad) {
        T* gw = grad->W.row(j);
        for (std::size_t k = 0; k < h.size(); ++k) gw[k] += g * h[k];
        grad->b[j] += g;
      }
    }
    return loss;
  }
};

inline std::uint64_t position_seed(std::uint64_t seed, std::size_t epoch, std::size_t doc) {
  return splitmix64(seed ^ splitmix64(0x7476ULL + epoch * 0x9e3779b97f4a7c15ULL + doc));
}

/// Shared minibatch loop for both embedding forms. `run_batch(docs, grads,
/// head_grad, epoch)` processes a list of document indices and returns
/// (loss sum, position count); grads are null when only evaluating.
template <typename T, typename Grad, typename RunBatch, typename Tensors>
TvTrainResult<T> tv_train_loop(std::size_t n_docs, const TrainConfig& cfg, Grad make_zero_grad, RunBatch&& run_batch,
                               Tensors&& tensors_of, TvEmbedding<T>& emb) {
  TvTrainResult<T> result;
  std::vector<std::size_t> all(n_docs);
  std::iota(all.begin(), all.end(), std::size_t{0});
  {
    double loss = 0;
    std::size_t positions = 0;
    for (std::size_t b = 0; b < n_docs; b += cfg.minibatch) {
      std::vector<std::size_t> batch(all.begin() + static_cast<std::ptrdiff_t>(b),
                                     all.begin() + static_cast<std::ptrdiff_t>(std::min(n_docs, b + cfg.minibatch)));
      auto [l, n] = run_batch(batch, nullptr, 0);
      loss += l;
      positions += n;
    }
    if (positions == 0) throw DataError("tv training: corpus has no position with a non-empty target");
    result.initial_loss = loss / static_cast<double>(positions);
  }
  Optimizer<T> opt(cfg);
  Rng shuffle_rng(cfg.seed, Stream::shuffle);
  std::vector<std::size_t> order = all;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss = 0;
    std::size_t positions = 0;
    for (std::size_t b = 0; b < n_docs; b += cfg.minibatch) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n_docs, b + cfg.minibatch)));
      auto grad = make_zero_grad();
      auto [l, n] = run_batch(batch, &grad, epoch);
      if (!std::isfinite(l))
        throw NumericError("tv training diverged: loss is not finite at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b / cfg.minibatch));
      loss += l;
      positions += n;
      if (n == 0) continue;
      auto params = tensors_of(emb, grad, false);
      auto grads = tensors_of(emb, grad, true);
      const T scale = T(1) / static_cast<T>(n);
      for (auto& g : grads)
        for (auto& x : g.data) x *= scale;
      opt.step(params, grads);
    }
    result.epoch_loss.push_back(positions ? loss / static_cast<double>(positions) : 0.0);
    if (cfg.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "tv epoch=%zu loss=%.6f seconds=%.3f\n", epoch, result.epoch_loss.back(), secs);
    }
  }
  return result;
}

}  // namespace detail

/// Trains a full-variant one-hot LSTM (with a discarded linear head) to
/// predict the bag of the next/preceding k words at every position.
template <typename T>
TvTrainResult<T> train_tv_lstm(std::span<const TokenSequence> unlabeled, std::size_t vocab_size,
                               const TvObjectiveSpec& spec, std::size_t dim, const TrainConfig& cfg,
                               std::string id = "tv") {
  spec.validate();
  cfg.validate();
  require(dim >= 1, "train_tv_lstm: dim must be >= 1");
  if (unlabeled.empty()) throw DataError("train_tv_lstm: empty unlabeled corpus");
  require(spec.targets.source_to_target.size() == vocab_size, "train_tv_lstm: target map does not match vocabulary");

  Rng init(cfg.seed, Stream::init);
  TvEmbedding<T> emb;
  emb.id = std::move(id);
  emb.kind = TvKind::lstm;
  emb.dim = dim;
  emb.direction = spec.direction;
  emb.k_next = spec.k_next;
  emb.target_vocab_hash = spec.targets.hash;
  emb.lstm = LstmParams<T>::random(LstmVariant::full, dim, vocab_size, InputKind::one_hot, cfg.init_std, init);
  detail::TvHead<T> head{gaussian_init<T>(spec.targets.size, dim, cfg.init_std, init), Vec<T>(spec.targets.size, T(0))};

  struct Grad {
    LstmParams<T> lstm;
    detail::TvHead<T> head;
  };
  auto make_zero = [&] { return Grad{emb.lstm.zeros_like(), {zeros_like(head.W), Vec<T>(head.b.size(), T(0))}}; };

  auto run_batch = [&](const std::vector<std::size_t>& batch, Grad* grad, std::size_t epoch) {
    const std::size_t W = std::min(cfg.workers, batch.size());
    std::vector<double> loss(W, 0.0);
    std::vector<std::size_t> count(W, 0);
    std::vector<Grad> local;
    if (grad)
      for (std::size_t w = 0; w < W; ++w) local.push_back(make_zero());
    parallel_chunks(W, batch.size(), cfg.deterministic, [&](std::size_t w, std::size_t b, std::size_t e) {
      std::vector<SequenceInput<T>> inputs;
      for (std::size_t k = b; k < e; ++k) inputs.push_back({unlabeled[batch[k]].ids, nullptr, {}});
      auto fwd = lstm_forward_batch<T>(emb.lstm, inputs, spec.direction, grad ? cfg.chop() : ChopSpec{}, {},
                                       grad != nullptr);
      std::vector<Matrix<T>> dH;
      for (std::size_t k = b; k < e; ++k) {
        const auto& ids = unlabeled[batch[k]].ids;
        const auto& H = fwd.outputs[k - b];
        Matrix<T> D(dim, ids.size());
        Rng rng(detail::position_seed(cfg.seed, epoch, batch[k]), Stream::sampling);
        Vec<T> h(dim), dh(dim);
        for (std::size_t t = 0; t < ids.size(); ++t) {
          const auto z = tv_targets(ids, t, spec);
          if (z.nnz() == 0) continue;
          const auto support = sample_weight_support(z, spec.neg_samples, rng);
          for (std::size_t r = 0; r < dim; ++r) h[r] = H(r, t);
          std::fill(dh.begin(), dh.end(), T(0));
          loss[w] += head.position(h, z, support, dh, grad ? &local[w].head : nullptr);
          ++count[w];
          for (std::size_t r = 0; r < dim; ++r) D(r, t) = dh[r];
        }
        dH.push_back(std::move(D));
      }
      if (grad) lstm_backward_batch<T>(emb.lstm, inputs, fwd, dH, local[w].lstm);
    });
    double total = 0;
    std::size_t n = 0;
    for (std::size_t w = 0; w < W; ++w) {
      total += loss[w];
      n += count[w];
      if (!grad) continue;
      auto dst = std::vector<TensorRef<T>>{};
      auto src = std::vector<TensorRef<T>>{};
      visit_lstm(grad->lstm, "", [&](auto t) { dst.push_back(t); });
      visit_lstm(local[w].lstm, "", [&](auto t) { src.push_back(t); });
      for (std::size_t k = 0; k < dst.size(); ++k)
        for (std::size_t i = 0; i < dst[k].data.size(); ++i) dst[k].data[i] += src[k].data[i];
      axpy<T>(T(1), local[w].head.W.span(), grad->head.W.span());
      axpy<T>(T(1), local[w].head.b, grad->head.b);
    }
    return std::pair{total, n};
  };

  auto tensors_of = [&](TvEmbedding<T>& e, Grad& g, bool grads) {
    std::vector<TensorRef<T>> out;
    if (grads) {
      visit_lstm(g.lstm, "", [&](auto t) { out.push_back(t); });
      out.push_back(tensor_ref("head.W", g.head.W.rows(), g.head.W.cols(), g.head.W.span()));
      out.push_back(tensor_ref("head.b", g.head.b.size(), std::size_t{1}, std::span(g.head.b)));
    } else {
      visit_lstm(e.lstm, "", [&](auto t) { out.push_back(t); });
      out.push_back(tensor_ref("head.W", head.W.rows(), head.W.cols(), head.W.span()));
      out.push_back(tensor_ref("head.b", head.b.size(), std::size_t{1}, std::span(head.b)));
    }
    return out;
  };

  auto result = detail::tv_train_loop<T>(unlabeled.size(), cfg, make_zero, run_batch, tensors_of, emb);
  result.emb = std::move(emb);
  return result;
}

/// Trains a conv region embedding to predict the bag of the k words on each
/// side of every complete region from the region itself.
template <typename T>
TvTrainResult<T> train_tv_cnn(std::span<const TokenSequence> unlabeled, std::size_t vocab_size,
                              const TvObjectiveSpec& spec, std::size_t dim, const TrainConfig& cfg,
                              std::string id = "tv") {
  spec.validate();
  cfg.validate();
  require(dim >= 1, "train_tv_cnn: dim must be >= 1");
  if (unlabeled.empty()) throw DataError("train_tv_cnn: empty unlabeled corpus");
  require(spec.targets.source_to_target.size() == vocab_size, "train_tv_cnn: target map does not match vocabulary");

  Rng init(cfg.seed, Stream::init);
  TvEmbedding<T> emb;
  emb.id = std::move(id);
  emb.kind = TvKind::cnn;
  emb.dim = dim;
  emb.region_size = spec.region_size;
  emb.align_offset = center_offset(spec.region_size);
  emb.k_next = spec.k_next;
  emb.target_vocab_hash = spec.targets.hash;
  emb.conv = ConvParams<T>::random(dim, spec.region_size, spec.cnn_input, vocab_size, cfg.init_std, init);
  detail::TvHead<T> head{gaussian_init<T>(spec.targets.size, dim, cfg.init_std, init), Vec<T>(spec.targets.size, T(0))};

  struct Grad {
    ConvParams<T> conv;
    detail::TvHead<T> head;
  };
  auto make_zero = [&] { return Grad{emb.conv.zeros_like(), {zeros_like(head.W), Vec<T>(head.b.size(), T(0))}}; };

  auto run_batch = [&](const std::vector<std::size_t>& batch, Grad* grad, std::size_t epoch) {
    const std::size_t W = std::min(cfg.workers, batch.size());
    std::vector<double> loss(W, 0.0);
    std::vector<std::size_t> count(W, 0);
    std::vector<Grad> local;
    if (grad)
      for (std::size_t w = 0; w < W; ++w) local.push_back(make_zero());
    parallel_chunks(W, batch.size(), cfg.deterministic, [&](std::size_t w, std::size_t b, std::size_t e) {
      Vec<T> h(dim), dh(dim);
      for (std::size_t k = b; k < e; ++k) {
        const auto& ids = unlabeled[batch[k]].ids;
        if (ids.size() < spec.region_size) continue;
        const auto out = conv_forward<T>(emb.conv, ids);
        Matrix<T> D(dim, ids.size());
        Rng rng(detail::position_seed(cfg.seed, epoch, batch[k]), Stream::sampling);
        for (std::size_t l = 0; l + spec.region_size <= ids.size(); ++l) {
          const auto z = tv_context_targets(ids, l, spec);
          if (z.nnz() == 0) continue;
          const auto support = sample_weight_support(z, spec.neg_samples, rng);
          for (std::size_t r = 0; r < dim; ++r) h[r] = out(r, l);
          std::fill(dh.begin(), dh.end(), T(0));
          loss[w] += head.position(h, z, support, dh, grad ? &local[w].head : nullptr);
          ++count[w];
          for (std::size_t r = 0; r < dim; ++r) D(r, l) = dh[r];
        }
        if (grad) conv_backward<T>(emb.conv, ids, {}, out, D, local[w].conv);
      }
    });
    double total = 0;
    std::size_t n = 0;
    for (std::size_t w = 0; w < W; ++w) {
      total += loss[w];
      n += count[w];
      if (!grad) continue;
      axpy<T>(T(1), local[w].conv.W.span(), grad->conv.W.span());
      axpy<T>(T(1), local[w].conv.b, grad->conv.b);
      axpy<T>(T(1), local[w].head.W.span(), grad->head.W.span());
      axpy<T>(T(1), local[w].head.b, grad->head.b);
    }
    return std::pair{total, n};
  };

  auto tensors_of = [&](TvEmbedding<T>& e, Grad& g, bool grads) {
    std::vector<TensorRef<T>> out;
    auto& c = grads ? g.conv : e.conv;
    auto& hd = grads ? g.head : head;
    visit_conv(c, "", [&](auto t) { out.push_back(t); });
    out.push_back(tensor_ref("head.W", hd.W.rows(), hd.W.cols(), hd.W.span()));
    out.push_back(tensor_ref("head.b", hd.b.size(), std::size_t{1}, std::span(hd.b)));
    return out;
  };

  auto result = detail::tv_train_loop<T>(unlabeled.size(), cfg, make_zero, run_batch, tensors_of, emb);
  result.emb = std::move(emb);
  return result;
}

}  // namespace rgem
