#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "test_support.hpp"
#include "vmnet/losses.hpp"

using namespace vmnet;
using vmnet::testing::random_matrix;
using vmnet::testing::random_unit_rows;

namespace {

/// Enumerate every pair in (i, j) order, then stable sort by score so ties
/// keep lexicographic order.
std::vector<MinedPair> brute_force_mining(const Eigen::MatrixXd& s, double e, int q, Direction dir) {
  std::vector<MinedPair> all;
  for (int i = 0; i < s.rows(); ++i)
    for (int j = 0; j < s.rows(); ++j) {
      if (i == j) continue;
      const double sc = (dir == Direction::VideoAnchor ? s(i, j) : s(j, i)) - s(i, i) + e;
      if (sc > 0) all.push_back({i, j, sc});
    }
  std::stable_sort(all.begin(), all.end(), [](const MinedPair& a, const MinedPair& b) { return a.score > b.score; });
  if (all.size() > static_cast<std::size_t>(q)) all.resize(static_cast<std::size_t>(q));
  return all;
}

bool same_pairs(const std::vector<MinedPair>& a, const std::vector<MinedPair>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                    [](const MinedPair& x, const MinedPair& y) { return x.i == y.i && x.j == y.j; });
}

int sgn(double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

/// Rotation from a QR factorisation of a random matrix.
Eigen::MatrixXd random_orthogonal(int d, std::uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(d, d, seed));
  return qr.householderQ();
}

int disagreements(const Eigen::MatrixXd& emb, const Eigen::MatrixXd& pre, const std::vector<Triplet>& ts) {
  const auto r = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Corrected);
  return static_cast<int>(std::count_if(r.coefficients.begin(), r.coefficients.end(), [](int c) { return c != 0; }));
}

}  // namespace

TEST(Similarity, Examples) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_EQ(similarity_matrix(eye, eye), eye);
  Eigen::MatrixXd a(1, 2), b(1, 2);
  a << 0.6, 0.8;
  b << -0.6, -0.8;
  EXPECT_NEAR(similarity_matrix(a, b)(0, 0), -1.0, 1e-15);
  EXPECT_THROW(similarity_matrix(a, Eigen::MatrixXd::Identity(3, 3)), Error);
}

TEST(Similarity, DotProductOracle) {
  const auto a = random_unit_rows(8, 5, 1), b = random_unit_rows(8, 5, 2);
  const auto s = similarity_matrix(a, b);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int k = 0; k < 5; ++k) acc += a(i, k) * b(j, k);
      EXPECT_NEAR(s(i, j), acc, 1e-12);
      EXPECT_LE(std::abs(s(i, j)), 1 + 1e-6);
    }
}

TEST(Mining, IdentityHasNoViolations) {
  EXPECT_TRUE(mine_top_q_violations(Eigen::MatrixXd::Identity(5, 5), 0.0, 10, Direction::VideoAnchor).empty());
  EXPECT_TRUE(mine_top_q_violations(Eigen::MatrixXd::Identity(5, 5), 0.0, 10, Direction::MusicAnchor).empty());
}

TEST(Mining, TwoByTwoExample) {
  Eigen::MatrixXd s(2, 2);
  s << 0.5, 0.9, 0.1, 0.8;
  const auto vm = mine_top_q_violations(s, 0.0, 10, Direction::VideoAnchor);
  ASSERT_EQ(vm.size(), 1u);
  EXPECT_EQ(vm[0].i, 0);
  EXPECT_EQ(vm[0].j, 1);
  EXPECT_NEAR(vm[0].score, 0.4, 1e-15);
  // Music anchor 1 against video 0: S[0][1] - S[1][1] = 0.1.
  const auto mv = mine_top_q_violations(s, 0.0, 10, Direction::MusicAnchor);
  ASSERT_EQ(mv.size(), 1u);
  EXPECT_EQ(mv[0].i, 1);
  EXPECT_EQ(mv[0].j, 0);
  EXPECT_NEAR(mv[0].score, 0.1, 1e-15);
}

TEST(Mining, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int n = 2 + static_cast<int>(seed % 63);
    Eigen::MatrixXd s = random_unit_rows(n, 8, seed) * random_unit_rows(n, 8, seed + 1000).transpose();
    if (seed % 3 == 0) s = (s * 4.0).array().round() / 4.0;  // heavy ties
    for (int q : {1, 5, 20, 1000})
      for (auto dir : {Direction::VideoAnchor, Direction::MusicAnchor})
        EXPECT_EQ(mine_top_q_violations(s, 0.2, q, dir), brute_force_mining(s, 0.2, q, dir)) << seed << " " << q;
  }
}

TEST(InterLoss, Examples) {
  LossWeights w;
  w.lambda1 = 1.0;
  w.margin = 0.2;
  const Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
  const auto none = inter_modal_loss(s, {}, {}, w);
  EXPECT_EQ(none.total(), 0.0);
  EXPECT_EQ(none.d_s.cwiseAbs().maxCoeff(), 0.0);

  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(2, 2);
  s2(0, 1) = 0.9;
  s2(0, 0) = 0.5;
  const auto one = inter_modal_loss(s2, {{0, 1, 0.6}}, {}, w);
  EXPECT_NEAR(one.vm, 0.6, 1e-15);
  EXPECT_EQ(one.d_s(0, 1), 1.0);
  EXPECT_EQ(one.d_s(0, 0), -1.0);
  EXPECT_EQ(one.d_s(1, 0), 0.0);
}

TEST(InterLoss, FiniteDifferencesOnS) {
  LossWeights w;
  w.top_q = 30;
  const Eigen::MatrixXd s0 = random_unit_rows(12, 6, 3) * random_unit_rows(12, 6, 4).transpose();
  const auto vm = mine_top_q_violations(s0, w.margin, w.top_q, Direction::VideoAnchor);
  const auto mv = mine_top_q_violations(s0, w.margin, w.top_q, Direction::MusicAnchor);
  const auto base = inter_modal_loss(s0, vm, mv, w);
  const double h = 1e-7;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      Eigen::MatrixXd sp = s0, sm = s0;
      sp(i, j) += h;
      sm(i, j) -= h;
      const double num = (inter_modal_loss(sp, vm, mv, w).total() - inter_modal_loss(sm, vm, mv, w).total()) / (2 * h);
      EXPECT_NEAR(num, base.d_s(i, j), 1e-6);
    }
}

TEST(InterLoss, NonIncreasingInDiagonal) {
  LossWeights w;
  const Eigen::MatrixXd s = random_unit_rows(10, 4, 5) * random_unit_rows(10, 4, 6).transpose();
  auto loss_of = [&](const Eigen::MatrixXd& m) {
    return inter_modal_loss(m, mine_top_q_violations(m, w.margin, w.top_q, Direction::VideoAnchor),
                            mine_top_q_violations(m, w.margin, w.top_q, Direction::MusicAnchor), w)
        .total();
  };
  for (int i = 0; i < 10; ++i) {
    double prev = loss_of(s);
    EXPECT_GE(prev, 0.0);
    Eigen::MatrixXd m = s;
    for (int step = 0; step < 10; ++step) {
      m(i, i) += 0.1;
      const double cur = loss_of(m);
      EXPECT_LE(cur, prev + 1e-12);
      prev = cur;
    }
  }
}

TEST(StructureCoefficient, Examples) {
  // Both orderings say j is closer: embedded gap < 0 and pre gap < 0.
  EXPECT_EQ(structure_coefficient(-0.3, -0.1, IntraMode::Literal), 0);
  EXPECT_EQ(structure_coefficient(-0.3, -0.1, IntraMode::Corrected), 0);
  // Pre says j closer, embedded says k closer.
  EXPECT_EQ(structure_coefficient(0.3, -0.1, IntraMode::Literal), 2);
  EXPECT_EQ(structure_coefficient(0.3, -0.1, IntraMode::Corrected), -2);
  EXPECT_EQ(structure_coefficient(0.0, -0.1, IntraMode::Literal), 1);
}

TEST(StructureCoefficient, SignOracleAndScaleInvariance) {
  Rng rng(7);
  for (int t = 0; t < 500; ++t) {
    const auto x = random_unit_rows(3, 4, 100 + t);
    const auto p = random_matrix(3, 6, 900 + t);
    const Eigen::VectorXd xi = x.row(0), xj = x.row(1), xk = x.row(2);
    const Eigen::VectorXd pi = p.row(0), pj = p.row(1), pk = p.row(2);
    const double cik = pi.dot(pk) / (pi.norm() * pk.norm()), cij = pi.dot(pj) / (pi.norm() * pj.norm());
    const int expect = sgn(xi.dot(xk) - xi.dot(xj)) - sgn(cik - cij);
    EXPECT_EQ(structure_coefficient(xi, xj, xk, pi, pj, pk, IntraMode::Literal), expect);
    EXPECT_EQ(structure_coefficient(xi, xj, xk, pi, pj, pk, IntraMode::Corrected), -expect);
    const double c = rng.uniform(0.01, 100.0);
    EXPECT_EQ(structure_coefficient(xi, xj, xk, c * pi, c * pj, c * pk, IntraMode::Corrected), -expect);
  }
}

TEST(SoftIntraLoss, RotationPreservesOrderings) {
  const auto pre = random_matrix(12, 5, 1);
  const Eigen::MatrixXd emb = cosine_rows(pre) * random_orthogonal(5, 2);
  const auto ts = sample_triplets(12, 300, 3);
  const auto r = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Corrected);
  EXPECT_LE(std::abs(r.value), 1e-9);
}

TEST(SoftIntraLoss, SingleTripleHandValue) {
  // Embedded: s_ij = 0.1, s_ik = 0.4. Pre: j closer.
  Eigen::MatrixXd emb = Eigen::MatrixXd::Zero(3, 3);
  emb(0, 0) = 1.0;
  emb(1, 0) = 0.1;
  emb(1, 1) = std::sqrt(1 - 0.01);
  emb(2, 0) = 0.4;
  emb(2, 2) = std::sqrt(1 - 0.16);
  Eigen::MatrixXd pre(3, 2);
  pre << 1, 0, 1, 0.1, 0, 1;
  const std::vector<Triplet> ts{{0, 1, 2}};
  const auto c = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Corrected);
  EXPECT_EQ(c.coefficients[0], -2);
  EXPECT_NEAR(c.value, 0.6, 1e-15);
  const auto l = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Literal);
  EXPECT_EQ(l.coefficients[0], 2);
  EXPECT_NEAR(l.value, -0.6, 1e-15);
}

TEST(SoftIntraLoss, CorrectedNonNegativeLiteralNegated) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto emb = random_unit_rows(15, 4, seed);
    const auto pre = random_matrix(15, 9, seed + 50);
    const auto ts = sample_triplets(15, 50, seed);
    const auto c = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Corrected);
    const auto l = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Literal);
    EXPECT_GE(c.value, 0.0);
    for (std::size_t t = 0; t < ts.size(); ++t) {
      EXPECT_GE(c.summands[t], 0.0);
      EXPECT_EQ(l.summands[t], -c.summands[t]);
      EXPECT_EQ(c.summands[t] == 0.0, c.coefficients[t] == 0);
    }
    EXPECT_EQ(l.d_x, (-c.d_x).eval());
  }
}

TEST(SoftIntraLoss, GradientStepReducesDisagreements) {
  int before_total = 0, after_total = 0, worse = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto emb = random_unit_rows(10, 6, 2000 + trial);
    const auto pre = random_matrix(10, 6, 3000 + trial);
    const auto ts = sample_triplets(10, 40, trial);
    const auto r = soft_intra_loss(emb, pre, ts, 1.0, IntraMode::Corrected);
    const Eigen::MatrixXd stepped = cosine_rows(emb - 0.01 * r.d_x);
    const int b = disagreements(emb, pre, ts), a = disagreements(stepped, pre, ts);
    before_total += b;
    after_total += a;
    worse += a > b;
  }
  EXPECT_LT(after_total, before_total);
  EXPECT_LE(worse, 10);
}

TEST(SampleTriplets, DistinctInRangeAndSeeded) {
  const auto ts = sample_triplets(5, 2000, 9);
  std::vector<int> hits(125, 0);
  for (const auto& t : ts) {
    ASSERT_TRUE(t.i != t.j && t.j != t.k && t.i != t.k);
    ASSERT_TRUE(t.i >= 0 && t.i < 5 && t.j >= 0 && t.j < 5 && t.k >= 0 && t.k < 5);
    ++hits[t.i * 25 + t.j * 5 + t.k];
  }
  // 60 ordered distinct triples, each expected 2000/60 times.
  int seen = static_cast<int>(std::count_if(hits.begin(), hits.end(), [](int h) { return h > 0; }));
  EXPECT_EQ(seen, 60);
  EXPECT_EQ(ts, sample_triplets(5, 2000, 9));
}

TEST(TotalLoss, InterOnlyMatchesInterTerms) {
  PrePostBatch b{random_unit_rows(16, 5, 1), random_unit_rows(16, 5, 2), random_matrix(16, 9, 3),
                 random_matrix(16, 7, 4)};
  LossWeights w;
  w.lambda3 = w.lambda4 = 0.0;
  w.top_q = 25;
  const auto r = total_loss(b, w, 5);
  const Eigen::MatrixXd s = b.v * b.m.transpose();
  const auto inter = inter_modal_loss(s, mine_top_q_violations(s, w.margin, 25, Direction::VideoAnchor),
                                      mine_top_q_violations(s, w.margin, 25, Direction::MusicAnchor), w);
  EXPECT_EQ(r.total, inter.total());
  EXPECT_EQ(r.intra_v, 0.0);
  EXPECT_EQ(r.intra_m, 0.0);
  EXPECT_GT(r.violations_found, 0);
}

TEST(TotalLoss, PerfectlySeparatedIsZero) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(6, 6);
  PrePostBatch b{eye, eye, eye, eye * 3.0};
  LossWeights w;
  w.margin = 0.0;
  const auto r = total_loss(b, w, 1);
  EXPECT_EQ(r.total, 0.0);
  EXPECT_EQ(r.d_v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(TotalLoss, FiniteDifferencesOnEmbeddings) {
  LossWeights w;
  w.top_q = 40;
  w.intra_samples_t = 60;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PrePostBatch b{random_unit_rows(10, 4, seed), random_unit_rows(10, 4, seed + 10), random_matrix(10, 6, seed + 20),
                   random_matrix(10, 5, seed + 30)};
    const auto base = total_loss(b, w, seed);
    const double h = 1e-6;
    for (int which = 0; which < 2; ++which)
      for (Eigen::Index c = 0; c < b.v.size(); ++c) {
        PrePostBatch p = b, m = b;
        (which == 0 ? p.v : p.m).data()[c] += h;
        (which == 0 ? m.v : m.m).data()[c] -= h;
        const auto rp = total_loss(p, w, seed), rm = total_loss(m, w, seed);
        if (!same_pairs(rp.mined_vm, rm.mined_vm) || !same_pairs(rp.mined_mv, rm.mined_mv) || rp.coeff_v != rm.coeff_v ||
            rp.coeff_m != rm.coeff_m || std::min(rp.kink_margin, rm.kink_margin) < 1e-6)
          continue;
        const double num = (rp.total - rm.total) / (2 * h);
        const double ana = (which == 0 ? base.d_v : base.d_m).data()[c];
        EXPECT_LE(std::abs(num - ana), 1e-5 * std::max({std::abs(num), std::abs(ana), 1.0}));
        ++checked;
      }
  }
  EXPECT_GT(checked, 300);
}
