#pragma once

// Training objective: bidirectional hinge ranking terms over the top-Q most
// violating cross-modal pairs, plus soft intra-modal ordering terms driven by
// a sign-difference coefficient.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vmnet/error.hpp"
#include "vmnet/rng.hpp"

namespace vmnet {

enum class IntraMode { Corrected, Literal };
enum class Direction { VideoAnchor, MusicAnchor };

inline const char* to_string(IntraMode m) { return m == IntraMode::Corrected ? "corrected" : "literal"; }

struct LossWeights {
  double lambda1 = 3.0;  // video anchor, music negatives
  double lambda2 = 1.0;  // music anchor, video negatives
  double lambda3 = 1.0;  // video intra
  double lambda4 = 1.0;  // music intra
  double margin = 0.2;
  int top_q = 100;
  int intra_samples_t = -1;  // per modality; negative means 10 * batch size
  IntraMode intra_mode = IntraMode::Corrected;

  int intra_samples(Eigen::Index n) const {
    return intra_samples_t < 0 ? static_cast<int>(10 * n) : intra_samples_t;
  }

  /// `need_positive` is off for the all-zero weight runs used to check that a
  /// zero objective leaves parameters untouched.
  void validate(bool need_positive = true) const {
    for (double l : {lambda1, lambda2, lambda3, lambda4})
      require(l >= 0.0 && std::isfinite(l), ErrorCode::InvalidArgument, "loss weights must be non-negative");
    require(!need_positive || lambda1 + lambda2 + lambda3 + lambda4 > 0.0, ErrorCode::InvalidArgument,
            "at least one loss weight must be positive");
    require(margin >= 0.0 && std::isfinite(margin), ErrorCode::InvalidArgument, "margin must be non-negative");
    require(top_q >= 1, ErrorCode::InvalidArgument, "top_q must be positive");
  }
};

struct Triplet {
  int i, j, k;
  bool operator==(const Triplet&) const = default;
};

struct MinedPair {
  int i, j;  // anchor, negative
  double score;
  bool operator==(const MinedPair&) const = default;
};

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

/// S[i][j] = A_i . B_j for unit rows.
inline Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == b.cols(), ErrorCode::DimMismatch, "similarity needs equal embedding dims");
  for (const auto* m : {&a, &b})
    for (Eigen::Index i = 0; i < m->rows(); ++i)
      require(std::abs(m->row(i).norm() - 1.0) <= 1e-5, ErrorCode::InvalidArgument,
              "similarity_matrix expects unit rows");
  return a * b.transpose();
}

/// Global top-q of strictly positive violation scores in one direction.
/// Video anchors read rows of S, music anchors read columns.
inline std::vector<MinedPair> mine_top_q_violations(const Eigen::MatrixXd& s, double margin, int top_q,
                                                    Direction dir) {
  require(s.rows() == s.cols(), ErrorCode::DimMismatch, "similarity matrix must be square");
  const auto n = static_cast<int>(s.rows());
  std::vector<MinedPair> cand;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double neg = dir == Direction::VideoAnchor ? s(i, j) : s(j, i);
      const double score = neg - s(i, i) + margin;
      if (score > 0.0) cand.push_back({i, j, score});
    }
  auto before = [](const MinedPair& a, const MinedPair& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  };
  const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(top_q, 0)));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), before);
  cand.resize(keep);
  return cand;
}

struct InterLoss {
  double vm = 0.0, mv = 0.0;  // weighted
  Eigen::MatrixXd d_s;

  double total() const { return vm + mv; }
};

/// Hinge sum over the mined pairs, evaluated on S itself so the gradient
/// reflects the current entries.
inline InterLoss inter_modal_loss(const Eigen::MatrixXd& s, const std::vector<MinedPair>& vm,
                                  const std::vector<MinedPair>& mv, const LossWeights& w) {
  InterLoss out;
  out.d_s = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  for (const auto& p : vm) {
    const double h = s(p.i, p.j) - s(p.i, p.i) + w.margin;
    if (h <= 0.0) continue;
    out.vm += w.lambda1 * h;
    out.d_s(p.i, p.j) += w.lambda1;
    out.d_s(p.i, p.i) -= w.lambda1;
  }
  for (const auto& p : mv) {
    const double h = s(p.j, p.i) - s(p.i, p.i) + w.margin;
    if (h <= 0.0) continue;
    out.mv += w.lambda2 * h;
    out.d_s(p.j, p.i) += w.lambda2;
    out.d_s(p.i, p.i) -= w.lambda2;
  }
  return out;
}

/// Literal: sign(embedded gap) - sign(pre gap), gap = s_ik - s_ij.
/// Corrected: the negation.
inline int structure_coefficient(double emb_gap, double pre_gap, IntraMode mode) {
  const int c = sign_of(emb_gap) - sign_of(pre_gap);
  return mode == IntraMode::Literal ? c : -c;
}

inline int structure_coefficient(const Eigen::VectorXd& xi, const Eigen::VectorXd& xj, const Eigen::VectorXd& xk,
                                 const Eigen::VectorXd& pi, const Eigen::VectorXd& pj, const Eigen::VectorXd& pk,
                                 IntraMode mode) {
  auto unit = [](const Eigen::VectorXd& v) {
    const double n = v.norm();
    return n > 0.0 ? Eigen::VectorXd(v / n) : v;
  };
  const Eigen::VectorXd ui = unit(pi), uj = unit(pj), uk = unit(pk);
  return structure_coefficient(xi.dot(xk) - xi.dot(xj), ui.dot(uk) - ui.dot(uj), mode);
}

/// Row-normalised copy; zero rows stay zero.
inline Eigen::MatrixXd cosine_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

/// `count` ordered triplets of pairwise distinct indices, uniform.
inline std::vector<Triplet> sample_triplets(int n, int count, std::uint64_t seed) {
  require(n >= 3 || count == 0, ErrorCode::InvalidArgument, "intra triplets need at least 3 rows");
  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int t = 0; t < count; ++t) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    if (j >= i) ++j;
    int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 2)));
    if (k >= std::min(i, j)) ++k;
    if (k >= std::max(i, j)) ++k;
    out.push_back({i, j, k});
  }
  return out;
}

struct IntraLoss {
  double value = 0.0;  // weighted
  Eigen::MatrixXd d_x;
  std::vector<int> coefficients;
  double min_gap = std::numeric_limits<double>::infinity();  // closest embedded gap to a sign flip
  std::vector<double> summands;                              // unweighted, per triplet
};

/// One modality's structure terms. `emb` has unit rows, `pre` is the raw
/// pre-embedding features (cosine is taken internally).
inline IntraLoss soft_intra_loss(const Eigen::MatrixXd& emb, const Eigen::MatrixXd& pre,
                                 const std::vector<Triplet>& triplets, double lambda, IntraMode mode) {
  require(emb.rows() == pre.rows(), ErrorCode::ShapeMismatch, "embedded and pre-embedding row counts differ");
  IntraLoss out;
  out.d_x = Eigen::MatrixXd::Zero(emb.rows(), emb.cols());
  const Eigen::MatrixXd pu = cosine_rows(pre);
  const auto n = static_cast<int>(emb.rows());
  for (const auto& t : triplets) {
    require(t.i >= 0 && t.j >= 0 && t.k >= 0 && t.i < n && t.j < n && t.k < n && t.i != t.j && t.j != t.k &&
                t.i != t.k,
            ErrorCode::InvalidArgument, "invalid intra triplet");
    const double s_ij = emb.row(t.i).dot(emb.row(t.j));
    const double s_ik = emb.row(t.i).dot(emb.row(t.k));
    const double pre_gap = pu.row(t.i).dot(pu.row(t.k)) - pu.row(t.i).dot(pu.row(t.j));
    const int c = structure_coefficient(s_ik - s_ij, pre_gap, mode);
    out.coefficients.push_back(c);
    out.min_gap = std::min(out.min_gap, std::abs(s_ik - s_ij));
    const double summand = c * (s_ij - s_ik);
    out.summands.push_back(summand);
    if (c == 0 || lambda == 0.0) continue;
    out.value += lambda * summand;
    const double lc = lambda * c;
    out.d_x.row(t.i) += lc * (emb.row(t.j) - emb.row(t.k));
    out.d_x.row(t.j) += lc * emb.row(t.i);
    out.d_x.row(t.k) -= lc * emb.row(t.i);
  }
  return out;
}

/// Post-embedding rows V, M (unit) with the pre-embedding TrackVectors they
/// came from; row i of every matrix belongs to the same pair.
struct PrePostBatch {
  Eigen::MatrixXd v, m;
  Eigen::MatrixXd v_pre, m_pre;

  Eigen::Index size() const { return v.rows(); }
};

struct LossResult {
  double total = 0.0;
  double inter_vm = 0.0, inter_mv = 0.0, intra_v = 0.0, intra_m = 0.0;
  int violations_found = 0;  // mined pairs, both directions
  Eigen::MatrixXd d_v, d_m;
  // Everything a finite-difference check needs to tell whether two nearby
  // points sit on the same smooth piece.
  std::vector<MinedPair> mined_vm, mined_mv;
  std::vector<int> coeff_v, coeff_m;
  double kink_margin = std::numeric_limits<double>::infinity();
};

namespace detail {

/// Distance of the current S from any point where the mined sets or active
/// hinges change: |score| over all pairs and the gap between the q-th and
/// (q+1)-th positive scores.
inline double mining_margin(const Eigen::MatrixXd& s, double margin, int top_q, Direction dir) {
  const auto n = s.rows();
  std::vector<double> scores;
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double sc = (dir == Direction::VideoAnchor ? s(i, j) : s(j, i)) - s(i, i) + margin;
      m = std::min(m, std::abs(sc));
      if (sc > 0.0) scores.push_back(sc);
    }
  if (scores.size() > static_cast<std::size_t>(top_q)) {
    std::sort(scores.begin(), scores.end(), std::greater<>());
    m = std::min(m, scores[static_cast<std::size_t>(top_q) - 1] - scores[static_cast<std::size_t>(top_q)]);
  }
  return m;
}

}  // namespace detail

inline LossResult total_loss(const PrePostBatch& batch, const LossWeights& w, std::uint64_t seed) {
  const auto n = batch.size();
  require(batch.m.rows() == n && batch.v_pre.rows() == n && batch.m_pre.rows() == n, ErrorCode::ShapeMismatch,
          "batch matrices must share a row count");
  require(batch.v.cols() == batch.m.cols(), ErrorCode::DimMismatch, "embedding dims differ");
  w.validate(false);

  LossResult r;
  const Eigen::MatrixXd s = batch.v * batch.m.transpose();
  if (w.lambda1 > 0.0) r.mined_vm = mine_top_q_violations(s, w.margin, w.top_q, Direction::VideoAnchor);
  if (w.lambda2 > 0.0) r.mined_mv = mine_top_q_violations(s, w.margin, w.top_q, Direction::MusicAnchor);
  r.violations_found = static_cast<int>(r.mined_vm.size() + r.mined_mv.size());
  const auto inter = inter_modal_loss(s, r.mined_vm, r.mined_mv, w);
  r.inter_vm = inter.vm;
  r.inter_mv = inter.mv;
  r.d_v = inter.d_s * batch.m;
  r.d_m = inter.d_s.transpose() * batch.v;
  if (w.lambda1 > 0.0)
    r.kink_margin = std::min(r.kink_margin, detail::mining_margin(s, w.margin, w.top_q, Direction::VideoAnchor));
  if (w.lambda2 > 0.0)
    r.kink_margin = std::min(r.kink_margin, detail::mining_margin(s, w.margin, w.top_q, Direction::MusicAnchor));

  const int t = n >= 3 ? w.intra_samples(n) : 0;
  if (w.lambda3 > 0.0 && t > 0) {
    const auto tv = sample_triplets(static_cast<int>(n), t, mix_seed(seed, 3));
    auto iv = soft_intra_loss(batch.v, batch.v_pre, tv, w.lambda3, w.intra_mode);
    r.intra_v = iv.value;
    r.d_v += iv.d_x;
    r.coeff_v = std::move(iv.coefficients);
    r.kink_margin = std::min(r.kink_margin, iv.min_gap);
  }
  if (w.lambda4 > 0.0 && t > 0) {
    const auto tm = sample_triplets(static_cast<int>(n), t, mix_seed(seed, 4));
    auto im = soft_intra_loss(batch.m, batch.m_pre, tm, w.lambda4, w.intra_mode);
    r.intra_m = im.value;
    r.d_m += im.d_x;
    r.coeff_m = std::move(im.coefficients);
    r.kink_margin = std::min(r.kink_margin, im.min_gap);
  }
  r.total = r.inter_vm + r.inter_mv + r.intra_v + r.intra_m;
  if (!std::isfinite(r.total)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  return r;
}

}  // namespace vmnet
