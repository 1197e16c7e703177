#pragma once

// Exact cosine retrieval, Recall@K in both directions, the machine
// preference test, and the PCA / CCA linear baselines.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vmnet/error.hpp"
#include "vmnet/rng.hpp"
#include "vmnet/video_pipeline.hpp"

namespace vmnet {

enum class RetrievalDirection { VideoToMusic, MusicToVideo };

inline const char* to_string(RetrievalDirection d) {
  return d == RetrievalDirection::VideoToMusic ? "video_to_music" : "music_to_video";
}

/// 1-based rank of S[i][i] within row i; ties go to the lower column index.
inline int rank_of_diagonal(const Eigen::MatrixXd& s, Eigen::Index i) {
  const double gt = s(i, i);
  int rank = 1;
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    if (s(i, j) > gt || (s(i, j) == gt && j < i)) ++rank;
  return rank;
}

/// Percentage of rows whose diagonal entry ranks within the top K.
inline double recall_at_k(const Eigen::MatrixXd& s, int k) {
  require(s.rows() == s.cols() && s.rows() > 0, ErrorCode::DimMismatch, "recall needs a square similarity matrix");
  require(k >= 1 && k <= s.rows(), ErrorCode::InvalidArgument, "K must be in [1, N]");
  int hits = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) hits += rank_of_diagonal(s, i) <= k;
  return 100.0 * hits / static_cast<double>(s.rows());
}

/// Rows of S are video queries; music queries read the transpose.
inline double recall_at_k(const Eigen::MatrixXd& s, int k, RetrievalDirection dir) {
  return dir == RetrievalDirection::VideoToMusic ? recall_at_k(s, k) : recall_at_k(Eigen::MatrixXd(s.transpose()), k);
}

inline double expected_random_recall(int k, int n) { return 100.0 * k / n; }

struct RankedItem {
  int index;
  double similarity;
};

struct RetrievalResult {
  int query = -1;
  RetrievalDirection direction = RetrievalDirection::VideoToMusic;
  std::vector<RankedItem> ranked;
  int rank_of_ground_truth = 0;  // 0 when no ground truth was supplied
};

/// Exact top-k by dot product. `ground_truth` (if >= 0) is located in the
/// full ordering even when it falls outside the returned list.
inline RetrievalResult retrieve(const Eigen::VectorXd& query, const Eigen::MatrixXd& corpus, int top_k,
                                int ground_truth = -1) {
  require(corpus.rows() > 0, ErrorCode::InvalidArgument, "empty retrieval corpus");
  require(query.size() == corpus.cols(), ErrorCode::DimMismatch, "query and corpus dims differ");
  require(top_k >= 1, ErrorCode::InvalidArgument, "top_k must be positive");
  const Eigen::VectorXd sims = corpus * query;
  std::vector<int> order(static_cast<std::size_t>(corpus.rows()));
  std::iota(order.begin(), order.end(), 0);
  auto before = [&](int a, int b) { return sims(a) != sims(b) ? sims(a) > sims(b) : a < b; };
  const auto k = std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_k));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  RetrievalResult r;
  for (std::size_t i = 0; i < k; ++i) r.ranked.push_back({order[i], sims(order[i])});
  if (ground_truth >= 0) {
    require(ground_truth < corpus.rows(), ErrorCode::InvalidArgument, "ground truth index out of range");
    r.rank_of_ground_truth = 1;
    for (Eigen::Index j = 0; j < corpus.rows(); ++j)
      if (before(static_cast<int>(j), ground_truth)) ++r.rank_of_ground_truth;
  }
  return r;
}

struct PreferenceResult {
  double video_to_music = 0.0, music_to_video = 0.0, total = 0.0;
};

/// Per trial and direction: a random query i and distractor j != i; the
/// machine "prefers" the ground truth when S[i][i] beats the distractor.
inline PreferenceResult machine_preference_gr(const Eigen::MatrixXd& s, int trials, std::uint64_t seed) {
  require(trials >= 1, ErrorCode::InvalidArgument, "trials must be positive");
  require(s.rows() == s.cols() && s.rows() >= 2, ErrorCode::DimMismatch, "need a square matrix with N >= 2");
  const auto n = static_cast<std::uint64_t>(s.rows());
  Rng rng(seed);
  double wins[2] = {0.0, 0.0};
  for (int t = 0; t < trials; ++t)
    for (int d = 0; d < 2; ++d) {
      const auto i = static_cast<Eigen::Index>(rng.below(n));
      auto j = static_cast<Eigen::Index>(rng.below(n - 1));
      if (j >= i) ++j;
      const double gt = s(i, i);
      const double other = d == 0 ? s(i, j) : s(j, i);
      wins[d] += gt > other ? 1.0 : (gt == other ? 0.5 : 0.0);
    }
  PreferenceResult r;
  r.video_to_music = 100.0 * wins[0] / trials;
  r.music_to_video = 100.0 * wins[1] / trials;
  r.total = 100.0 * (wins[0] + wins[1]) / (2.0 * trials);
  return r;
}

// ---- CCA ------------------------------------------------------------------

struct CcaModel {
  Eigen::VectorXd mean_a, mean_b;
  Eigen::MatrixXd projection_a, projection_b;  // input dim x components
  Eigen::VectorXd correlations;                // descending
  double reg_a = 0.0, reg_b = 0.0;

  Eigen::MatrixXd project_a(const Eigen::MatrixXd& x) const {
    require(x.cols() == mean_a.size(), ErrorCode::DimMismatch, "CCA input A dimension mismatch");
    return (x.rowwise() - mean_a.transpose()) * projection_a;
  }
  Eigen::MatrixXd project_b(const Eigen::MatrixXd& y) const {
    require(y.cols() == mean_b.size(), ErrorCode::DimMismatch, "CCA input B dimension mismatch");
    return (y.rowwise() - mean_b.transpose()) * projection_b;
  }
};

namespace detail {

/// (C + reg I)^{-1/2} via the symmetric eigendecomposition.
inline Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& c, double reg) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  require(es.info() == Eigen::Success, ErrorCode::NonFiniteInput, "eigendecomposition failed");
  const Eigen::VectorXd vals = es.eigenvalues().array() + reg;
  require((vals.array() > 0.0).all(), ErrorCode::RankDeficient, "covariance is singular; increase reg");
  return es.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Regularised CCA. Each side's ridge is `reg_scale * trace(C) / dim`.
/// Whitening both sides turns the generalised eigenproblem into an SVD of
/// Cxx^{-1/2} Cxy Cyy^{-1/2}, whose singular values are the canonical
/// correlations.
inline CcaModel fit_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int components, double reg_scale = 1e-4) {
  require(x.rows() == y.rows(), ErrorCode::ShapeMismatch, "CCA inputs must be paired row for row");
  require(components >= 1 && components <= std::min(x.cols(), y.cols()), ErrorCode::InvalidArgument,
          "component count must be in [1, min(dims)]");
  require(x.rows() > components, ErrorCode::RankDeficient, "too few rows for the requested components");
  require(reg_scale > 0.0, ErrorCode::InvalidArgument, "CCA regulariser must be positive");
  require(x.allFinite() && y.allFinite(), ErrorCode::NonFiniteInput, "CCA inputs contain non-finite values");

  CcaModel m;
  m.mean_a = x.colwise().mean().transpose();
  m.mean_b = y.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - m.mean_a.transpose();
  const Eigen::MatrixXd yc = y.rowwise() - m.mean_b.transpose();
  const double denom = static_cast<double>(x.rows() - 1);
  const Eigen::MatrixXd cxx = xc.transpose() * xc / denom;
  const Eigen::MatrixXd cyy = yc.transpose() * yc / denom;
  const Eigen::MatrixXd cxy = xc.transpose() * yc / denom;
  m.reg_a = reg_scale * std::max(cxx.trace(), 1e-300) / static_cast<double>(x.cols());
  m.reg_b = reg_scale * std::max(cyy.trace(), 1e-300) / static_cast<double>(y.cols());
  const Eigen::MatrixXd wx = detail::inverse_sqrt(cxx, m.reg_a);
  const Eigen::MatrixXd wy = detail::inverse_sqrt(cyy, m.reg_b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(wx * cxy * wy, Eigen::ComputeThinU | Eigen::ComputeThinV);
  m.correlations = svd.singularValues().head(components);
  m.projection_a = wx * svd.matrixU().leftCols(components);
  m.projection_b = wy * svd.matrixV().leftCols(components);
  // Fix signs so each component's A-side loading has a positive largest entry.
  for (int c = 0; c < components; ++c) {
    Eigen::Index arg;
    m.projection_a.col(c).cwiseAbs().maxCoeff(&arg);
    if (m.projection_a(arg, c) < 0.0) {
      m.projection_a.col(c) *= -1.0;
      m.projection_b.col(c) *= -1.0;
    }
  }
  return m;
}

// ---- linear baselines ---------------------------------------------------------

/// Each modality PCA'd independently (fit on its training rows), projected
/// test rows L2-normalised, cosine matrix with video rows and music columns.
inline Eigen::MatrixXd pca_baseline_similarity(const Eigen::MatrixXd& train_v, const Eigen::MatrixXd& train_m,
                                               const Eigen::MatrixXd& test_v, const Eigen::MatrixXd& test_m,
                                               int dim) {
  const auto pv = fit_pca(train_v, dim);
  const auto pm = fit_pca(train_m, dim);
  return l2_normalize_rows(apply_pca(pv, test_v)) * l2_normalize_rows(apply_pca(pm, test_m)).transpose();
}

inline Eigen::MatrixXd cca_baseline_similarity(const Eigen::MatrixXd& train_v, const Eigen::MatrixXd& train_m,
                                               const Eigen::MatrixXd& test_v, const Eigen::MatrixXd& test_m,
                                               int components, double reg_scale = 1e-4) {
  const auto cca = fit_cca(train_v, train_m, components, reg_scale);
  return l2_normalize_rows(cca.project_a(test_v)) * l2_normalize_rows(cca.project_b(test_m)).transpose();
}

// ---- metrics report -----------------------------------------------------------

struct RecallReport {
  double r1 = 0.0, r10 = 0.0, r25 = 0.0;
};

inline RecallReport recall_report(const Eigen::MatrixXd& s, RetrievalDirection dir) {
  const int n = static_cast<int>(s.rows());
  auto at = [&](int k) { return recall_at_k(s, std::min(k, n), dir); };
  return {at(1), at(10), at(25)};
}

inline nlohmann::json metrics_json(const Eigen::MatrixXd& s, int preference_trials, std::uint64_t seed) {
  nlohmann::json j;
  for (auto dir : {RetrievalDirection::VideoToMusic, RetrievalDirection::MusicToVideo}) {
    const auto r = recall_report(s, dir);
    j[to_string(dir)] = {{"R@1", r.r1}, {"R@10", r.r10}, {"R@25", r.r25}};
  }
  j["machine_gr"] = machine_preference_gr(s, preference_trials, seed).total;
  j["n"] = s.rows();
  j["seed"] = seed;
  return j;
}

}  // namespace vmnet
