#pragma once

// Video-level features from per-frame CNN features: frame whitening (WPCA),
// temporal aggregation, corpus mean removal, PCA, L2 normalisation.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "vmnet/binary_io.hpp"
#include "vmnet/error.hpp"
#include "vmnet/features.hpp"
#include "vmnet/rng.hpp"

namespace vmnet {

struct EigenBasis {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns, matching `values`
};

/// Symmetric eigendecomposition with a reproducible ordering and sign: values
/// descending, each vector flipped so its largest-magnitude entry is positive.
inline EigenBasis symmetric_eigen_descending(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  require(solver.info() == Eigen::Success, ErrorCode::NonFiniteInput, "eigendecomposition failed");
  const Eigen::Index n = sym.rows();
  EigenBasis out{solver.eigenvalues().reverse(), solver.eigenvectors().rowwise().reverse()};
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index arg;
    out.vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, c) < 0.0) out.vectors.col(c) *= -1.0;
  }
  return out;
}

/// Column means and the unbiased (N - 1) covariance of the rows of `data`.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> mean_and_covariance(const Eigen::MatrixXd& data) {
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centred = data.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(data.rows() - 1);
  return {mean, cov};
}

namespace detail {

inline void check_fit_input(const Eigen::MatrixXd& data, int out_dim) {
  require(out_dim >= 1, ErrorCode::InvalidArgument, "out_dim must be positive");
  require(out_dim <= data.cols(), ErrorCode::InvalidArgument,
          "out_dim " + std::to_string(out_dim) + " exceeds input dim " + std::to_string(data.cols()));
  require(data.rows() > out_dim, ErrorCode::RankDeficient,
          std::to_string(data.rows()) + " samples cannot support " + std::to_string(out_dim) + " components");
  require(data.allFinite(), ErrorCode::NonFiniteInput, "fit data contains non-finite values");
}

}  // namespace detail

struct WpcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd projection;  // input_dim x out_dim
  Eigen::VectorXd eigenvalues;
  double eps = 1e-8;

  Eigen::Index input_dim() const { return projection.rows(); }
  Eigen::Index output_dim() const { return projection.cols(); }
};

inline WpcaModel fit_wpca(const Eigen::MatrixXd& data, int out_dim, double eps = 1e-8) {
  detail::check_fit_input(data, out_dim);
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  auto [mean, cov] = mean_and_covariance(data);
  const auto basis = symmetric_eigen_descending(cov);
  WpcaModel m;
  m.mean = std::move(mean);
  m.eps = eps;
  m.eigenvalues = basis.values.head(out_dim);
  m.projection = basis.vectors.leftCols(out_dim);
  for (int c = 0; c < out_dim; ++c)
    m.projection.col(c) /= std::sqrt(std::max(m.eigenvalues(c), 0.0) + eps);
  return m;
}

inline Eigen::MatrixXd apply_wpca(const WpcaModel& model, const Eigen::MatrixXd& rows) {
  require(rows.cols() == model.input_dim(), ErrorCode::DimMismatch,
          "rows have " + std::to_string(rows.cols()) + " columns, model expects " +
              std::to_string(model.input_dim()));
  return (rows.rowwise() - model.mean.transpose()) * model.projection;
}

/// Mean, population standard deviation, and top-k values per dimension.
inline TrackVector aggregate_video_level(const Eigen::MatrixXd& frames, int ordinal_k = 5) {
  return aggregate_frames(frames, ordinal_k, Spread::StdDev, Modality::Video);
}

struct GlobalNormalizer {
  Eigen::VectorXd mean;

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    require(v.size() == mean.size(), ErrorCode::DimMismatch, "normalizer dimension mismatch");
    return v - mean;
  }
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const {
    require(rows.cols() == mean.size(), ErrorCode::DimMismatch, "normalizer dimension mismatch");
    return rows.rowwise() - mean.transpose();
  }
};

/// `corpus` holds one aggregated vector per row.
inline GlobalNormalizer fit_global_normalizer(const Eigen::MatrixXd& corpus) {
  require(corpus.rows() > 0, ErrorCode::EmptyCorpus, "cannot fit a normalizer on an empty corpus");
  return {corpus.colwise().mean().transpose()};
}

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd projection;  // input_dim x out_dim, orthonormal columns
  Eigen::VectorXd eigenvalues;  // all of them, descending

  Eigen::Index input_dim() const { return projection.rows(); }
  Eigen::Index output_dim() const { return projection.cols(); }
};

inline PcaModel fit_pca(const Eigen::MatrixXd& corpus, int out_dim) {
  detail::check_fit_input(corpus, out_dim);
  auto [mean, cov] = mean_and_covariance(corpus);
  const auto basis = symmetric_eigen_descending(cov);
  return {std::move(mean), basis.vectors.leftCols(out_dim), basis.values};
}

inline Eigen::MatrixXd apply_pca(const PcaModel& model, const Eigen::MatrixXd& rows) {
  require(rows.cols() == model.input_dim(), ErrorCode::DimMismatch, "PCA input dimension mismatch");
  return (rows.rowwise() - model.mean.transpose()) * model.projection;
}

inline Eigen::VectorXd apply_pca(const PcaModel& model, const Eigen::VectorXd& v) {
  return apply_pca(model, Eigen::MatrixXd(v.transpose())).row(0).transpose();
}

/// Unit-norm copy; the zero vector stays zero and sets `degenerate`.
inline Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v, bool* degenerate = nullptr) {
  const double n = v.norm();
  if (degenerate) *degenerate = n == 0.0;
  if (n == 0.0) return v;
  return v / n;
}

inline Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& m, int* degenerate_rows = nullptr) {
  Eigen::MatrixXd out = m;
  int zeros = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0)
      out.row(i) /= n;
    else
      ++zeros;
  }
  if (degenerate_rows) *degenerate_rows = zeros;
  return out;
}

/// Toy stand-in for CNN frame features: every row is A * latent plus
/// Gaussian noise. A depends only on `seed` (shared corpus-wide), the noise on
/// (seed, track_id).
inline Eigen::MatrixXd synth_frame_features(const std::string& track_id, const Eigen::VectorXd& latent,
                                            int frames, int dim, double noise_scale, std::uint64_t seed) {
  require(frames > 0 && dim > 0 && latent.size() > 0, ErrorCode::InvalidArgument,
          "frames, dim and latent size must be positive");
  Rng map_rng(mix_seed(seed, 0x5eed));
  Eigen::MatrixXd a(dim, latent.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scale * map_rng.normal();
  const Eigen::RowVectorXd clean = (a * latent).transpose();

  Rng noise_rng(mix_seed(seed, hash_string(track_id)));
  Eigen::MatrixXd out(frames, dim);
  for (int t = 0; t < frames; ++t) {
    out.row(t) = clean;
    for (int j = 0; j < dim; ++j) out(t, j) += noise_scale * noise_rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole pipeline

struct VideoPipelineConfig {
  int wpca_dim = 1024;
  int ordinal_k = 5;
  int pca_dim = 1024;
  double wpca_eps = 1e-8;
};

class VideoPipeline {
 public:
  VideoPipeline() = default;
  explicit VideoPipeline(VideoPipelineConfig cfg) : cfg_(cfg) {}

  const VideoPipelineConfig& config() const { return cfg_; }
  const WpcaModel& wpca() const { return wpca_; }
  const GlobalNormalizer& normalizer() const { return normalizer_; }
  const PcaModel& pca() const { return pca_; }

  /// Fits all three stages on `videos` (one frame matrix each) and returns
  /// the final vectors, one row per video.
  Eigen::MatrixXd fit(const std::vector<Eigen::MatrixXd>& videos) {
    require(!videos.empty(), ErrorCode::EmptyCorpus, "no videos to fit on");
    Eigen::Index total = 0;
    for (const auto& v : videos) {
      require(v.cols() == videos.front().cols(), ErrorCode::DimMismatch, "frame dims differ across videos");
      total += v.rows();
    }
    Eigen::MatrixXd stacked(total, videos.front().cols());
    Eigen::Index r = 0;
    for (const auto& v : videos) {
      stacked.middleRows(r, v.rows()) = v;
      r += v.rows();
    }
    wpca_ = fit_wpca(stacked, cfg_.wpca_dim, cfg_.wpca_eps);
    const auto aggregated = aggregate_all(videos);
    normalizer_ = fit_global_normalizer(aggregated);
    const auto centred = normalizer_.apply_rows(aggregated);
    pca_ = fit_pca(centred, cfg_.pca_dim);
    return l2_normalize_rows(apply_pca(pca_, centred));
  }

  /// Aggregated, mean-removed vectors before PCA, one row per video.
  Eigen::MatrixXd pre_pca(const std::vector<Eigen::MatrixXd>& videos) const {
    return normalizer_.apply_rows(aggregate_all(videos));
  }

  Eigen::VectorXd apply(const Eigen::MatrixXd& frames, bool* degenerate = nullptr) const {
    const auto agg = aggregate_video_level(apply_wpca(wpca_, frames), cfg_.ordinal_k);
    return l2_normalize(apply_pca(pca_, normalizer_.apply(agg.values)), degenerate);
  }

  void save(const std::filesystem::path& path) const {
    NamedMatrices m;
    m["wpca.mean"] = wpca_.mean.transpose();
    m["wpca.projection"] = wpca_.projection;
    m["wpca.eigenvalues"] = wpca_.eigenvalues.transpose();
    m["wpca.eps"] = Eigen::MatrixXd::Constant(1, 1, wpca_.eps);
    m["normalizer.mean"] = normalizer_.mean.transpose();
    m["pca.mean"] = pca_.mean.transpose();
    m["pca.projection"] = pca_.projection;
    m["pca.eigenvalues"] = pca_.eigenvalues.transpose();
    m["config.ordinal_k"] = Eigen::MatrixXd::Constant(1, 1, cfg_.ordinal_k);
    write_vmpm(path, m);
  }

  static VideoPipeline load(const std::filesystem::path& path) {
    const auto m = read_vmpm(path);
    auto get = [&](const std::string& name) -> const Eigen::MatrixXd& {
      const auto it = m.find(name);
      if (it == m.end()) throw Error(ErrorCode::CorruptFile, path.string() + " lacks " + name);
      return it->second;
    };
    VideoPipeline p;
    p.wpca_.mean = get("wpca.mean").row(0).transpose();
    p.wpca_.projection = get("wpca.projection");
    p.wpca_.eigenvalues = get("wpca.eigenvalues").row(0).transpose();
    p.wpca_.eps = get("wpca.eps")(0, 0);
    p.normalizer_.mean = get("normalizer.mean").row(0).transpose();
    p.pca_.mean = get("pca.mean").row(0).transpose();
    p.pca_.projection = get("pca.projection");
    p.pca_.eigenvalues = get("pca.eigenvalues").row(0).transpose();
    p.cfg_.ordinal_k = static_cast<int>(get("config.ordinal_k")(0, 0));
    p.cfg_.wpca_dim = static_cast<int>(p.wpca_.output_dim());
    p.cfg_.pca_dim = static_cast<int>(p.pca_.output_dim());
    p.cfg_.wpca_eps = p.wpca_.eps;
    require(p.wpca_.mean.size() == p.wpca_.input_dim() &&
                p.normalizer_.mean.size() == p.pca_.input_dim() && p.pca_.mean.size() == p.pca_.input_dim() &&
                p.pca_.input_dim() == p.wpca_.output_dim() * (2 + p.cfg_.ordinal_k),
            ErrorCode::CorruptFile, path.string() + ": inconsistent model shapes");
    return p;
  }

 private:
  Eigen::MatrixXd aggregate_all(const std::vector<Eigen::MatrixXd>& videos) const {
    Eigen::MatrixXd out;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      const auto agg = aggregate_video_level(apply_wpca(wpca_, videos[i]), cfg_.ordinal_k);
      if (i == 0) out.resize(static_cast<Eigen::Index>(videos.size()), agg.values.size());
      out.row(static_cast<Eigen::Index>(i)) = agg.values.transpose();
    }
    return out;
  }

  VideoPipelineConfig cfg_;
  WpcaModel wpca_;
  GlobalNormalizer normalizer_;
  PcaModel pca_;
};

}  // namespace vmnet
