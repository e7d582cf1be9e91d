#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace rgem;
using rgem::testing::Gen;

namespace {

TvObjectiveSpec identity_spec(std::size_t vocab, std::size_t k, Direction dir = Direction::forward) {
  TvObjectiveSpec s;
  s.k_next = k;
  s.direction = dir;
  s.targets = TargetMap::identity(vocab);
  return s;
}

std::vector<std::pair<std::uint32_t, double>> entries(const SparseVector& z) {
  std::vector<std::pair<std::uint32_t, double>> out;
  for (const auto& e : z.entries) out.emplace_back(e.index, e.value);
  return out;
}

/// Each word is always followed by (w + 1) mod V.
std::vector<TokenSequence> successor_corpus(std::size_t n_docs, std::size_t vocab, std::uint64_t seed) {
  Gen g(seed);
  std::vector<TokenSequence> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::vector<WordId> ids{static_cast<WordId>(g.size(0, vocab - 1))};
    for (std::size_t t = 1, T = g.size(4, 12); t < T; ++t) ids.push_back(static_cast<WordId>((ids.back() + 1) % vocab));
    docs.push_back(rgem::testing::doc(ids));
  }
  return docs;
}

TrainConfig tv_config() {
  TrainConfig c;
  c.lr = 0.1;
  c.momentum = 0.9;
  c.epochs = 15;
  c.minibatch = 10;
  c.init_std = 0.1;
  return c;
}

}  // namespace

TEST(TvTargets, NextWordsForward) {
  const std::vector<WordId> ids{5, 9, 2, 7};
  const auto s = identity_spec(10, 2);
  EXPECT_EQ(entries(tv_targets(ids, 0, s)), (std::vector<std::pair<std::uint32_t, double>>{{2, 1}, {9, 1}}));
  EXPECT_EQ(entries(tv_targets(ids, 2, s)), (std::vector<std::pair<std::uint32_t, double>>{{7, 1}}));
  EXPECT_EQ(tv_targets(ids, 3, s).nnz(), 0u);
}

TEST(TvTargets, PrecedingWordsBackward) {
  const std::vector<WordId> ids{5, 9, 2, 7};
  const auto s = identity_spec(10, 2, Direction::backward);
  EXPECT_EQ(entries(tv_targets(ids, 3, s)), (std::vector<std::pair<std::uint32_t, double>>{{2, 1}, {9, 1}}));
  EXPECT_EQ(entries(tv_targets(ids, 1, s)), (std::vector<std::pair<std::uint32_t, double>>{{5, 1}}));
  EXPECT_EQ(tv_targets(ids, 0, s).nnz(), 0u);
}

TEST(TvTargets, RepeatedWordsCount) {
  const std::vector<WordId> ids{1, 3, 3, 3};
  EXPECT_EQ(entries(tv_targets(ids, 0, identity_spec(4, 3))), (std::vector<std::pair<std::uint32_t, double>>{{3, 3}}));
}

TEST(TvTargets, StopwordsNeverAppear) {
  const Vocabulary source({"the", "cat", "a", "sat", "mat"}, {9, 5, 4, 3, 2}, 5);
  const auto target = target_vocab(source, StopwordList::from_words({"the", "a"}), 100);
  TvObjectiveSpec s;
  s.k_next = 3;
  s.targets = TargetMap::build(source, target);
  ASSERT_EQ(s.targets.size, 3u);
  Gen g(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ids = g.ids(g.size(1, 12), source.size());
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (const auto& e : tv_targets(ids, t, s).entries) {
        const auto& w = target.word(e.index);
        EXPECT_TRUE(w != "the" && w != "a");
      }
  }
}

TEST(TvContextTargets, BothSidesOfRegion) {
  const std::vector<WordId> ids{0, 1, 2, 3, 4, 5, 6};
  auto s = identity_spec(7, 2);
  s.region_size = 3;
  EXPECT_EQ(entries(tv_context_targets(ids, 2, s)),
            (std::vector<std::pair<std::uint32_t, double>>{{0, 1}, {1, 1}, {5, 1}, {6, 1}}));
  EXPECT_EQ(entries(tv_context_targets(ids, 0, s)), (std::vector<std::pair<std::uint32_t, double>>{{3, 1}, {4, 1}}));
}

TEST(WeightedSquareLoss, HandExample) {
  const Vec<double> p{0.5, 0.2, 0.0};
  const auto z = sparse_from_counts(3, {0});
  const Vec<double> alpha{1, 0, 1};
  const auto r = weighted_square_loss<double>(p, z, alpha);
  EXPECT_DOUBLE_EQ(r.loss, 0.25);
  EXPECT_EQ(r.grad, (Vec<double>{-1.0, 0.0, 0.0}));
}

TEST(WeightedSquareLoss, ExhaustiveNegativesEqualsFullSquareLoss) {
  Gen g(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto dim = g.size(1, 12);
    const auto z = g.sparse(dim, 4);
    const auto p = g.vec<double>(dim, 1.0);
    const auto alpha = negative_sampling_weights<double>(z, dim, g.rng());
    const auto zd = densify<double>(z);
    double full = 0;
    for (std::size_t j = 0; j < dim; ++j) full += (zd[j] - p[j]) * (zd[j] - p[j]);
    EXPECT_NEAR(weighted_square_loss<double>(p, z, alpha).loss, full, 1e-12);
  }
}

TEST(SampleWeightSupport, ContainsPositivesAndRequestedNegatives) {
  Gen g(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto dim = g.size(1, 40);
    const auto z = g.sparse(dim, 6);
    const auto neg = g.size(0, 15);
    const auto s = sample_weight_support(z, neg, g.rng());
    const std::set<std::uint32_t> uniq(s.begin(), s.end());
    EXPECT_EQ(uniq.size(), s.size());
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(s.size(), z.nnz() + std::min(neg, dim - z.nnz()));
    for (const auto& e : z.entries) EXPECT_TRUE(uniq.count(e.index));
    for (auto j : s) EXPECT_LT(j, dim);
  }
}

TEST(SampleWeightSupport, NegativesAreRoughlyUniform) {
  const auto z = sparse_from_counts(20, {3, 7});
  Rng rng(9, Stream::sampling);
  std::vector<int> hits(20, 0);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i)
    for (auto j : sample_weight_support(z, 4, rng))
      if (j != 3 && j != 7) ++hits[j];
  for (std::size_t j = 0; j < 20; ++j) {
    if (j == 3 || j == 7) continue;
    // expected 20000 * 4 / 18 = 4444
    EXPECT_NEAR(hits[j], 4444.4, 300) << j;
  }
}

TEST(ApplyTv, CnnCentersRegion) {
  Rng rng(1);
  TvEmbedding<double> e;
  e.kind = TvKind::cnn;
  e.dim = 2;
  e.region_size = 5;
  e.align_offset = center_offset(5);
  EXPECT_EQ(e.align_offset, 2);
  e.conv = ConvParams<double>::random(2, 5, RegionInput::bow, 8, 1.0, rng);
  e.conv.b = {10, 10};
  const std::vector<WordId> ids{0, 1, 2, 3, 4, 5, 6};
  const auto S = apply_tv(e, ids);
  const auto full = conv_forward<double>(e.conv, ids);
  ASSERT_EQ(S.cols(), 7u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(S(r, 0), 0.0);
    EXPECT_EQ(S(r, 1), 0.0);
    EXPECT_EQ(S(r, 2), full(r, 0));
    EXPECT_EQ(S(r, 4), full(r, 2));
    EXPECT_EQ(S(r, 5), 0.0);
    EXPECT_EQ(S(r, 6), 0.0);
  }
}

TEST(ApplyTv, CnnEvenRegionOffsets) {
  EXPECT_EQ(center_offset(1), 0);
  EXPECT_EQ(center_offset(2), 0);
  EXPECT_EQ(center_offset(4), 1);
}

TEST(ApplyTv, CnnShortDocumentIsZero) {
  const auto e = rgem::testing::random_tv<double>(TvKind::cnn, 2, 6, "x");
  std::vector<WordId> ids(e->region_size - 1, 1);
  const auto S = apply_tv(*e, ids);
  EXPECT_EQ(S.cols(), ids.size());
  for (double x : S.data()) EXPECT_EQ(x, 0.0);
}

TEST(ApplyTv, CnnRegionOneIsConvForward) {
  Rng rng(2);
  TvEmbedding<double> e;
  e.kind = TvKind::cnn;
  e.dim = 3;
  e.region_size = 1;
  e.conv = ConvParams<double>::random(3, 1, RegionInput::seq, 5, 1.0, rng);
  const std::vector<WordId> ids{4, 0, 2};
  EXPECT_EQ(apply_tv(e, ids), conv_forward<double>(e.conv, ids));
}

TEST(ApplyTv, CnnShiftProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto e = rgem::testing::random_tv<double>(TvKind::cnn, seed * 2 + 1, 6, "x");
    Gen g(seed);
    const auto ids = g.ids(g.size(1, 10), 6);
    auto shifted = ids;
    shifted.insert(shifted.begin(), 0);
    const auto A = apply_tv(*e, ids), B = apply_tv(*e, shifted);
    for (std::size_t l = 0; l + e->region_size <= ids.size(); ++l) {
      const auto pos = l + static_cast<std::size_t>(e->align_offset);
      for (std::size_t r = 0; r < e->dim; ++r) EXPECT_EQ(A(r, pos), B(r, pos + 1));
    }
  }
}

TEST(ApplyTv, LstmDirections) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto e = rgem::testing::random_tv<double>(TvKind::lstm, seed, 6, "x");
    const std::vector<WordId> ids{1, 4, 2, 5};
    SequenceInput<double> in{ids, nullptr, {}};
    const auto expected = e->direction == Direction::forward ? forward_sequence(e->lstm, in) : reverse_forward(e->lstm, in);
    EXPECT_EQ(apply_tv(*e, ids), expected);
  }
}

TEST(TrainTv, LstmLossDecreasesOnSuccessorCorpus) {
  const auto docs = successor_corpus(40, 8, 1);
  for (auto dir : {Direction::forward, Direction::backward}) {
    auto spec = identity_spec(8, 1, dir);
    spec.neg_samples = 3;
    const auto r = train_tv_lstm<float>(docs, 8, spec, 6, tv_config());
    ASSERT_EQ(r.epoch_loss.size(), 15u);
    EXPECT_LT(r.epoch_loss.back(), 0.5 * r.initial_loss);
    EXPECT_EQ(r.emb.direction, dir);
    EXPECT_EQ(r.emb.dim, 6u);
    EXPECT_EQ(r.emb.lstm.variant, LstmVariant::full);
  }
}

TEST(TrainTv, CnnLossDecreasesOnSuccessorCorpus) {
  const auto docs = successor_corpus(40, 8, 2);
  auto spec = identity_spec(8, 2);
  spec.region_size = 3;
  spec.neg_samples = 3;
  const auto r = train_tv_cnn<float>(docs, 8, spec, 6, tv_config());
  EXPECT_LT(r.epoch_loss.back(), 0.5 * r.initial_loss);
  EXPECT_EQ(r.emb.align_offset, 1);
  EXPECT_EQ(r.emb.region_size, 3u);
}

TEST(TrainTv, DeterministicForFixedSeed) {
  const auto docs = successor_corpus(20, 6, 3);
  auto spec = identity_spec(6, 2);
  auto cfg = tv_config();
  cfg.epochs = 3;
  const auto a = train_tv_lstm<float>(docs, 6, spec, 4, cfg);
  const auto b = train_tv_lstm<float>(docs, 6, spec, 4, cfg);
  EXPECT_EQ(a.emb, b.emb);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(TrainTv, ZeroLearningRateKeepsInitialisation) {
  const auto docs = successor_corpus(10, 6, 4);
  auto spec = identity_spec(6, 2);
  auto cfg = tv_config();
  cfg.lr = 0;
  cfg.epochs = 2;
  const auto a = train_tv_cnn<float>(docs, 6, spec, 3, cfg);
  cfg.epochs = 0;
  const auto b = train_tv_cnn<float>(docs, 6, spec, 3, cfg);
  EXPECT_EQ(a.emb, b.emb);
}

TEST(TrainTv, CorpusErrors) {
  auto spec = identity_spec(4, 1);
  EXPECT_THROW(train_tv_lstm<float>({}, 4, spec, 2, tv_config()), DataError);
  const std::vector<TokenSequence> singletons{rgem::testing::doc({1}), rgem::testing::doc({2})};
  EXPECT_THROW(train_tv_lstm<float>(singletons, 4, spec, 2, tv_config()), DataError);
  EXPECT_THROW(train_tv_lstm<float>(singletons, 5, spec, 2, tv_config()), ContractError);
}

TEST(TrainTv, EmbeddingIsFrozenWhenAttached) {
  const auto docs = successor_corpus(10, 6, 5);
  auto spec = identity_spec(6, 1);
  auto cfg = tv_config();
  cfg.epochs = 1;
  auto r = train_tv_lstm<float>(docs, 6, spec, 3, cfg, "u1");
  auto tv = std::make_shared<const TvEmbedding<float>>(r.emb);
  Rng rng(1);
  Model<float> m;
  m.branches.push_back(make_lstm_branch<float>(BranchKind::lstm_forward, LstmVariant::simplified, 2, 6,
                                               {PoolKind::max, 1}, 0.1, rng));
  attach(m, 0, {tv}, rng, 0.1);
  init_top(m, 2, 0.0, 0.1, rng);
  Dataset ds{{}, 2, {"a", "b"}};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto d = docs[i];
    d.label = static_cast<std::uint32_t>(i % 2);
    ds.docs.push_back(d);
  }
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 0.5;
  train(m, ds, nullptr, tc);
  EXPECT_EQ(*m.tv[0], r.emb);
}
