// Minibatch training loop with per-epoch dev evaluation.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rgem/model.hpp"
#include "rgem/optimizer.hpp"
#include "rgem/parallel.hpp"

namespace rgem {

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;      // mean training loss per document
  double dev_err = std::nan("");
  double seconds = 0;
};

inline std::string format_epoch_log(const EpochLog& e) {
  char buf[160];
  if (std::isnan(e.dev_err))
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f seconds=%.3f", e.epoch, e.loss, e.seconds);
  else
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f dev_err=%.4f seconds=%.3f", e.epoch, e.loss, e.dev_err,
                  e.seconds);
  return buf;
}

template <typename T>
struct TrainHooks {
  /// Called after each epoch; return false to stop early.
  std::function<bool(const EpochLog&, const Model<T>&)> on_epoch;
  /// Receives each formatted log line.
  std::function<void(const std::string&)> log;
};

namespace detail {
inline std::uint64_t dropout_seed(std::uint64_t seed, std::size_t epoch, std::size_t doc) {
  return splitmix64(seed ^ splitmix64(0x64726f70ULL + epoch * 0x9e3779b97f4a7c15ULL + doc));
}

template <typename T>
void zero_tensors(Model<T>& g) {
  visit_model(g, [](auto t) { std::fill(t.data.begin(), t.data.end(), T(0)); }, true);
}
}  // namespace detail

/// Trains `model` in place and returns the per-epoch log. Minibatches are
/// drawn from a seeded shuffle each epoch; LSTM branches are chopped when
/// cfg.chop_len is set. The minibatch gradient is the mean over its
/// documents. A non-finite loss aborts with NumericError.
template <typename T>
std::vector<EpochLog> train(Model<T>& model, const Dataset& train_set, const Dataset* dev_set,
                            const TrainConfig& cfg, const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  model.validate();
  if (train_set.docs.empty()) throw DataError("train: empty training set");
  if (!train_set.labeled()) throw DataError("train: training set has unlabeled documents");
  train_set.validate();
  for (const auto& d : train_set.docs)
    if (*d.label >= model.n_classes) throw DataError("train: label exceeds model class count");

  const std::size_t N = train_set.docs.size();
  const std::size_t D = model.feature_dim();
  const std::size_t W = cfg.workers;
  std::vector<Model<T>> local;
  for (std::size_t w = 0; w < W; ++w) local.push_back(zeros_like(model));
  Model<T> total = zeros_like(model);
  Optimizer<T> opt(cfg);
  Rng shuffle_rng(cfg.seed, Stream::shuffle);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> log;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t b0 = 0, batch_no = 0; b0 < N; b0 += cfg.minibatch, ++batch_no) {
      const std::size_t b1 = std::min(N, b0 + cfg.minibatch);
      const std::size_t nb = b1 - b0;
      std::vector<Vec<T>> masks(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        Rng r(detail::dropout_seed(cfg.seed, epoch, order[b0 + k]), Stream::dropout);
        masks[k] = dropout_mask<T>(D, cfg.dropout_rate, r);
      }
      const std::size_t nw = std::min(W, nb);
      std::vector<double> wloss(nw, 0.0);
      for (std::size_t w = 0; w < nw; ++w) detail::zero_tensors(local[w]);
      parallel_chunks(nw, nb, cfg.deterministic, [&](std::size_t w, std::size_t lo, std::size_t hi) {
        std::vector<const TokenSequence*> docs;
        std::vector<Vec<T>> m;
        for (std::size_t k = lo; k < hi; ++k) {
          docs.push_back(&train_set.docs[order[b0 + k]]);
          m.push_back(masks[k]);
        }
        BatchOptions<T> o{Mode::train, cfg.chop(), &m};
        wloss[w] += loss_and_gradient<T>(model, docs, o, local[w]);
      });
      double batch_loss = 0;
      for (double l : wloss) batch_loss += l;
      if (!std::isfinite(batch_loss))
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      epoch_loss += batch_loss;

      auto params = trainable_tensors(model);
      auto grads = trainable_tensors(total);
      for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), T(0));
      const T scale = T(1) / static_cast<T>(nb);
      for (std::size_t w = 0; w < nw; ++w) {
        auto part = trainable_tensors(local[w]);
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (std::size_t i = 0; i < grads[k].data.size(); ++i) grads[k].data[i] += scale * part[k].data[i];
      }
      opt.step(params, grads);
    }
    EpochLog e;
    e.epoch = epoch;
    e.loss = epoch_loss / static_cast<double>(N);
    if (dev_set && !dev_set->docs.empty()) e.dev_err = error_rate(model, *dev_set, W);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(e);
    if (hooks.log) hooks.log(format_epoch_log(e));
    if (hooks.on_epoch && !hooks.on_epoch(e, model)) break;
  }
  return log;
}

/// Holds out the last `fraction` of a seeded permutation as a dev set.
inline std::pair<Dataset, Dataset> split_dev(const Dataset& ds, double fraction, std::uint64_t seed) {
  require(fraction >= 0 && fraction < 1, "split_dev: fraction must be in [0,1)");
  std::vector<std::size_t> idx(ds.docs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed, Stream::data);
  rng.shuffle(idx);
  const auto n_dev = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ds.docs.size())));
  Dataset tr{{}, ds.n_classes, ds.class_names}, dv{{}, ds.n_classes, ds.class_names};
  for (std::size_t i = 0; i < idx.size(); ++i) (i < idx.size() - n_dev ? tr : dv).docs.push_back(ds.docs[idx[i]]);
  return {tr, dv};
}

}  // namespace rgem
