#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace rgem;
using rgem::testing::Gen;

namespace {

using P = LstmParams<double>;

/// Straight-line reference LSTM over explicit input columns.
Matrix<double> reference_lstm(const P& p, const Matrix<double>& X, const std::vector<Matrix<double>>& side,
                              bool reverse = false) {
  const std::size_t T = X.cols(), q = p.q;
  Matrix<double> H(q, T);
  std::vector<double> c(q, 0), h(q, 0);
  const bool full = p.variant == LstmVariant::full;
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    std::vector<std::vector<double>> pre(p.gate_count(), std::vector<double>(q));
    for (std::size_t g = 0; g < p.gate_count(); ++g)
      for (std::size_t r = 0; r < q; ++r) {
        double a = p.gates[g].b[r];
        for (std::size_t k = 0; k < X.rows(); ++k) a += p.gates[g].Wx(r, k) * X(k, t);
        for (std::size_t k = 0; k < q; ++k) a += p.gates[g].Uh(r, k) * h[k];
        for (std::size_t j = 0; j < side.size(); ++j)
          for (std::size_t k = 0; k < side[j].rows(); ++k) a += p.side[j].W[g](r, k) * side[j](k, t);
        pre[g][r] = a;
      }
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (std::size_t r = 0; r < q; ++r) {
      if (full) {
        const double i = sig(pre[0][r]), o = sig(pre[1][r]), f = sig(pre[2][r]), u = std::tanh(pre[3][r]);
        c[r] = i * u + f * c[r];
        h[r] = o * std::tanh(c[r]);
      } else {
        const double f = sig(pre[0][r]), u = std::tanh(pre[1][r]);
        c[r] = u + f * c[r];
        h[r] = std::tanh(c[r]);
      }
      H(r, t) = h[r];
    }
  }
  return H;
}

Matrix<double> one_hot_columns(const std::vector<WordId>& ids, std::size_t V) {
  Matrix<double> X(V, ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) X(ids[t], t) = 1.0;
  return X;
}

struct Instance {
  P p;
  std::vector<WordId> ids;
  std::vector<Matrix<double>> side;
};

Instance random_instance(std::uint64_t seed, LstmVariant variant, std::size_t n_side = 0) {
  Gen g(seed);
  const auto q = g.size(1, 4), V = g.size(2, 6), T = g.size(1, 7);
  Instance in;
  in.p = P::zeros(variant, q, V, InputKind::one_hot);
  for (std::size_t j = 0; j < n_side; ++j) {
    const auto d = g.size(1, 3);
    Rng r(seed + j);
    in.p.add_side("tv" + std::to_string(j), d, 1.0, r);
    in.side.push_back(g.matrix<double>(d, T, 1.0));
  }
  rgem::testing::randomize(in.p, g, 0.7);
  in.ids = g.ids(T, V);
  return in;
}

SequenceInput<double> seq_input(const Instance& in) {
  SequenceInput<double> s{in.ids, nullptr, {}};
  for (const auto& m : in.side) s.side.push_back(&m);
  return s;
}

}  // namespace

TEST(LstmStep, ZeroWeightsFixedPoint) {
  const auto p = P::zeros(LstmVariant::simplified, 3, 4, InputKind::one_hot);
  const auto s = lstm_step<double>(p, SparseVector{4, {{2, 1.0}}}, LstmState<double>::zeros(3));
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(s.c[r], 0.0);
    EXPECT_EQ(s.h[r], 0.0);
  }
}

TEST(LstmStep, ScalarSimplifiedCellByHand) {
  const auto p = P::zeros(LstmVariant::simplified, 1, 1, InputKind::one_hot);
  LstmState<double> prev{{2.0}, {0.0}};
  const auto s = lstm_step<double>(p, SparseVector{1, {}}, prev);
  EXPECT_DOUBLE_EQ(s.c[0], 1.0);
  EXPECT_NEAR(s.h[0], 0.7615941559557649, 1e-15);
}

TEST(LstmStep, OverrideOnSimplifiedRejected) {
  const auto p = P::zeros(LstmVariant::simplified, 1, 1, InputKind::one_hot);
  EXPECT_THROW(lstm_step<double>(p, SparseVector{1, {}}, LstmState<double>::zeros(1), {}, GateOverride{true, true}),
               ContractError);
}

TEST(LstmStep, DimensionChecks) {
  const auto p = P::zeros(LstmVariant::full, 2, 3, InputKind::one_hot);
  EXPECT_THROW(lstm_step<double>(p, SparseVector{4, {}}, LstmState<double>::zeros(2)), ContractError);
  EXPECT_THROW(lstm_step<double>(p, SparseVector{3, {}}, LstmState<double>::zeros(3)), ContractError);
}

TEST(LstmStep, GateRemovalEquivalenceRandom) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen g(seed);
    const auto q = g.size(1, 6), V = g.size(1, 10);
    P simple = P::zeros(LstmVariant::simplified, q, V, InputKind::one_hot);
    rgem::testing::randomize(simple, g, 1.0);
    P full = P::zeros(LstmVariant::full, q, V, InputKind::one_hot);
    rgem::testing::randomize(full, g, 1.0);
    full.gate(Gate::f) = simple.gate(Gate::f);
    full.gate(Gate::u) = simple.gate(Gate::u);
    LstmState<double> a{g.vec<double>(q, 1.0), g.vec<double>(q, 1.0)};
    LstmState<double> b = a;
    for (int t = 0; t < 5; ++t) {
      const auto x = g.sparse(V, 3);
      a = lstm_step<double>(full, x, a, {}, GateOverride{true, true});
      b = lstm_step<double>(simple, x, b);
      EXPECT_EQ(a.c, b.c);
      EXPECT_EQ(a.h, b.h);
    }
  }
}

TEST(LstmSequence, MatchesReferenceBothVariantsAndDirections) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    for (auto variant : {LstmVariant::full, LstmVariant::simplified}) {
      const auto in = random_instance(seed, variant, seed % 3);
      const auto X = one_hot_columns(in.ids, in.p.input_dim);
      const auto fwd = forward_sequence(in.p, seq_input(in));
      const auto bwd = reverse_forward(in.p, seq_input(in));
      const auto rf = reference_lstm(in.p, X, in.side);
      const auto rb = reference_lstm(in.p, X, in.side, true);
      EXPECT_LT(rgem::testing::max_rel_diff(fwd.data(), rf.data()), 1e-12);
      EXPECT_LT(rgem::testing::max_rel_diff(bwd.data(), rb.data()), 1e-12);
    }
  }
}

TEST(LstmSequence, StepComposesToSequence) {
  const auto in = random_instance(5, LstmVariant::full);
  auto st = LstmState<double>::zeros(in.p.q);
  const auto H = forward_sequence(in.p, seq_input(in));
  for (std::size_t t = 0; t < in.ids.size(); ++t) {
    st = lstm_step<double>(in.p, SparseVector{in.p.input_dim, {{in.ids[t], 1.0}}}, st);
    for (std::size_t r = 0; r < in.p.q; ++r) EXPECT_NEAR(H(r, t), st.h[r], 1e-14);
  }
}

TEST(LstmSequence, HiddenStateInOpenUnitInterval) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto in = random_instance(seed, seed % 2 ? LstmVariant::full : LstmVariant::simplified);
    Gen g(seed);
    rgem::testing::randomize(in.p, g, 3.0);
    const auto H = forward_sequence(in.p, seq_input(in));
    for (double h : H.data()) {
      EXPECT_GE(h, -1.0);
      EXPECT_LE(h, 1.0);
    }
  }
}

TEST(LstmChop, LongSegmentIsBitIdentical) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto in = random_instance(seed, LstmVariant::simplified, 1);
    const auto whole = forward_sequence(in.p, seq_input(in));
    EXPECT_EQ(forward_sequence(in.p, seq_input(in), ChopSpec{in.ids.size()}), whole);
    EXPECT_EQ(forward_sequence(in.p, seq_input(in), ChopSpec{in.ids.size() + 9}), whole);
  }
}

TEST(LstmChop, SegmentLocality) {
  Gen g(99);
  P p = P::zeros(LstmVariant::full, 3, 5, InputKind::one_hot);
  rgem::testing::randomize(p, g, 1.0);
  std::vector<WordId> ids{0, 1, 2, 3, 4, 0, 1};
  const ChopSpec chop{3};
  const auto H = forward_sequence(p, SequenceInput<double>{ids, nullptr, {}}, chop);
  // h_4 from a fresh run over ids[3..4]
  std::vector<WordId> seg{3, 4};
  const auto Hs = forward_sequence(p, SequenceInput<double>{seg, nullptr, {}});
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(H(r, 4), Hs(r, 1));
  auto changed = ids;
  changed[0] = 4;
  changed[1] = 3;
  changed[2] = 0;
  const auto H2 = forward_sequence(p, SequenceInput<double>{changed, nullptr, {}}, chop);
  for (std::size_t t = 3; t < 7; ++t)
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(H(r, t), H2(r, t));
}

TEST(LstmChop, PerturbationStaysInsideSegmentRandom) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen g(seed);
    P p = P::zeros(seed % 2 ? LstmVariant::full : LstmVariant::simplified, g.size(1, 4), 6, InputKind::one_hot);
    rgem::testing::randomize(p, g, 1.0);
    auto ids = g.ids(g.size(2, 20), 6);
    const auto s = g.size(1, ids.size());
    const auto dir = seed % 3 == 0 ? Direction::backward : Direction::forward;
    auto run = [&](const std::vector<WordId>& x) {
      auto b = lstm_forward_batch<double>(p, std::vector<SequenceInput<double>>{{x, nullptr, {}}}, dir, ChopSpec{s}, {}, false);
      return b.outputs[0];
    };
    const auto H = run(ids);
    const auto pos = g.size(0, ids.size() - 1);
    auto changed = ids;
    changed[pos] = static_cast<WordId>((changed[pos] + 1) % 6);
    const auto H2 = run(changed);
    // segments follow processing order, so backward segments start at the end
    auto seg_of = [&](std::size_t t) { return dir == Direction::forward ? t / s : (ids.size() - 1 - t) / s; };
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (seg_of(t) == seg_of(pos)) continue;
      for (std::size_t r = 0; r < p.q; ++r) EXPECT_EQ(H(r, t), H2(r, t));
    }
  }
}

TEST(LstmChop, OverlapWarmsUpFromPrecedingTokens) {
  Gen g(4);
  P p = P::zeros(LstmVariant::full, 2, 4, InputKind::one_hot);
  rgem::testing::randomize(p, g, 1.0);
  std::vector<WordId> ids{0, 1, 2, 3, 0, 1};
  const auto H = forward_sequence(p, SequenceInput<double>{ids, nullptr, {}}, ChopSpec{3, 2});
  std::vector<WordId> ctx{1, 2, 3, 0, 1};
  const auto R = forward_sequence(p, SequenceInput<double>{ctx, nullptr, {}});
  for (std::size_t t = 3; t < 6; ++t)
    for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(H(r, t), R(r, t - 1));
}

TEST(LstmReverse, PalindromeMirrorsForward) {
  Gen g(8);
  P p = P::zeros(LstmVariant::full, 3, 5, InputKind::one_hot);
  rgem::testing::randomize(p, g, 1.0);
  std::vector<WordId> ids{0, 3, 1, 4, 1, 3, 0};
  SequenceInput<double> in{ids, nullptr, {}};
  const auto F = forward_sequence(p, in), B = reverse_forward(p, in);
  const std::size_t T = ids.size();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(B(r, t), F(r, T - 1 - t));
}

TEST(LstmReverse, SingleStepEqualsForward) {
  const auto in = random_instance(3, LstmVariant::full);
  std::vector<WordId> one{in.ids[0]};
  SequenceInput<double> s{one, nullptr, {}};
  EXPECT_EQ(reverse_forward(in.p, s), forward_sequence(in.p, s));
}

TEST(LstmReverse, BidirectionalConcatHasTwiceTheUnits) {
  const auto in = random_instance(12, LstmVariant::simplified);
  const auto F = forward_sequence(in.p, seq_input(in)), B = reverse_forward(in.p, seq_input(in));
  EXPECT_EQ(F.rows() + B.rows(), 2 * in.p.q);
  EXPECT_EQ(F.cols(), B.cols());
}

TEST(LstmBatch, BatchedEqualsOneByOne) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Gen g(seed);
    P p = P::zeros(LstmVariant::full, g.size(1, 5), 7, InputKind::one_hot);
    rgem::testing::randomize(p, g, 1.0);
    std::vector<std::vector<WordId>> docs;
    for (std::size_t d = 0; d < 6; ++d) docs.push_back(g.ids(g.size(0, 15), 7));
    std::vector<SequenceInput<double>> in;
    for (const auto& d : docs) in.push_back({d, nullptr, {}});
    const auto dir = seed % 2 ? Direction::forward : Direction::backward;
    const ChopSpec chop{seed % 3 == 0 ? std::size_t{0} : g.size(1, 6)};
    const auto batch = lstm_forward_batch<double>(p, in, dir, chop, {}, false);
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const auto single = lstm_forward_batch<double>(p, std::span(&in[d], 1), dir, chop, {}, false);
      EXPECT_EQ(batch.outputs[d], single.outputs[0]);
    }
  }
}

TEST(LstmGradients, ZeroUpstreamGivesZeroGradients) {
  const auto in = random_instance(1, LstmVariant::full, 1);
  Matrix<double> U(in.p.q, in.ids.size());
  const auto g = sequence_gradients(in.p, seq_input(in), U);
  EXPECT_EQ(g.params, in.p.zeros_like());
  for (double x : g.side[0].data()) EXPECT_EQ(x, 0.0);
}

TEST(LstmGradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (auto variant : {LstmVariant::full, LstmVariant::simplified}) {
      for (auto dir : {Direction::forward, Direction::backward}) {
        auto in = random_instance(seed, variant, seed % 3);
        Gen g(seed + 1000);
        const auto U = g.matrix<double>(in.p.q, in.ids.size(), 1.0);
        const auto grads = sequence_gradients(in.p, seq_input(in), U, dir);
        auto loss = [&] {
          const auto H = dir == Direction::forward ? forward_sequence(in.p, seq_input(in))
                                                   : reverse_forward(in.p, seq_input(in));
          return rgem::testing::probe(H, U);
        };
        std::vector<TensorRef<double>> params, analytic;
        visit_lstm(in.p, "", [&](auto t) { params.push_back(t); });
        auto gp = grads.params;
        visit_lstm(gp, "", [&](auto t) { analytic.push_back(t); });
        for (std::size_t k = 0; k < params.size(); ++k)
          EXPECT_LT(rgem::testing::fd_max_rel_err(params[k].data, analytic[k].data, loss), 1e-4)
              << params[k].name << " seed " << seed;
        for (std::size_t j = 0; j < in.side.size(); ++j)
          EXPECT_LT(rgem::testing::fd_max_rel_err(in.side[j].span(), grads.side[j].span(), loss), 1e-4)
              << "side input " << j << " seed " << seed;
      }
    }
  }
}

TEST(LstmGradients, DenseInputGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(seed);
    const auto q = g.size(1, 4), d = g.size(1, 4), T = g.size(1, 6);
    P p = P::zeros(seed % 2 ? LstmVariant::full : LstmVariant::simplified, q, d, InputKind::dense);
    rgem::testing::randomize(p, g, 0.7);
    auto X = g.matrix<double>(d, T, 1.0);
    const auto U = g.matrix<double>(q, T, 1.0);
    SequenceInput<double> in{{}, &X, {}};
    const auto grads = sequence_gradients(p, in, U);
    auto loss = [&] { return rgem::testing::probe(forward_sequence(p, in), U); };
    EXPECT_LT(rgem::testing::fd_max_rel_err(X.span(), grads.input.span(), loss), 1e-4);
  }
}

TEST(LstmGradients, ChoppedGradientIsSumOfSegmentGradients) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = random_instance(seed, LstmVariant::full);
    Gen g(seed + 7);
    in.ids = g.ids(g.size(4, 12), in.p.input_dim);
    const auto T = in.ids.size();
    const auto U = g.matrix<double>(in.p.q, T, 1.0);
    const std::size_t s = g.size(1, 3);
    const auto chopped = sequence_gradients(in.p, seq_input(in), U, Direction::forward, ChopSpec{s});
    auto sum = in.p.zeros_like();
    for (const auto& seg : chop(in.ids, s)) {
      Matrix<double> Us(in.p.q, seg.ids.size());
      for (std::size_t r = 0; r < in.p.q; ++r)
        for (std::size_t t = 0; t < seg.ids.size(); ++t) Us(r, t) = U(r, seg.offset + t);
      auto part = sequence_gradients(in.p, SequenceInput<double>{seg.ids, nullptr, {}}, Us);
      std::vector<TensorRef<double>> a, b;
      visit_lstm(sum, "", [&](auto t) { a.push_back(t); });
      visit_lstm(part.params, "", [&](auto t) { b.push_back(t); });
      for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].data.size(); ++i) a[k].data[i] += b[k].data[i];
    }
    std::vector<TensorRef<double>> a, b;
    auto cg = chopped.params;
    visit_lstm(cg, "", [&](auto t) { a.push_back(t); });
    visit_lstm(sum, "", [&](auto t) { b.push_back(t); });
    for (std::size_t k = 0; k < a.size(); ++k)
      for (std::size_t i = 0; i < a[k].data.size(); ++i) EXPECT_NEAR(a[k].data[i], b[k].data[i], 1e-12);
  }
}

TEST(Embedding, LayerExamples) {
  Matrix<double> I{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(embedding_layer(I, 1), (Vec<double>{0, 1, 0}));
  Matrix<double> V{{0, 1}, {0, 2}};
  EXPECT_EQ(embedding_layer(V, 1), (Vec<double>{1, 2}));
  EXPECT_THROW(embedding_layer(V, 2), ContractError);
}

TEST(Fold, IdentityEmbeddingKeepsWeights) {
  Gen g(2);
  P p = P::zeros(LstmVariant::full, 3, 4, InputKind::dense);
  rgem::testing::randomize(p, g, 1.0);
  Matrix<double> I(4, 4);
  for (std::size_t i = 0; i < 4; ++i) I(i, i) = 1.0;
  const auto f = fold_embedding(p, I);
  EXPECT_EQ(f.input_kind, InputKind::one_hot);
  for (std::size_t g2 = 0; g2 < 4; ++g2) EXPECT_EQ(f.gates[g2].Wx, p.gates[g2].Wx);
}

TEST(Fold, ZeroEmbeddingZeroesInputWeights) {
  Gen g(3);
  P p = P::zeros(LstmVariant::simplified, 3, 4, InputKind::dense);
  rgem::testing::randomize(p, g, 1.0);
  const auto f = fold_embedding(p, Matrix<double>(4, 9));
  for (const auto& gate : f.gates)
    for (double w : gate.Wx.data()) EXPECT_EQ(w, 0.0);
  std::vector<WordId> a{0, 1, 2}, b{8, 7, 6};
  EXPECT_EQ(forward_sequence(f, SequenceInput<double>{a, nullptr, {}}),
            forward_sequence(f, SequenceInput<double>{b, nullptr, {}}));
}

TEST(Fold, RandomEightByTwelve) {
  Gen g(21);
  P p = P::zeros(LstmVariant::full, 6, 8, InputKind::dense);
  rgem::testing::randomize(p, g, 0.5);
  const auto V = g.matrix<double>(8, 12, 1.0);
  const auto ids = g.ids(20, 12);
  const auto X = embed_sequence(V, std::span<const WordId>(ids));
  const auto H1 = forward_sequence(p, SequenceInput<double>{{}, &X, {}});
  const auto H2 = forward_sequence(fold_embedding(p, V), SequenceInput<double>{ids, nullptr, {}});
  EXPECT_LT(rgem::testing::max_rel_diff(H1.data(), H2.data()), 1e-10);
}
