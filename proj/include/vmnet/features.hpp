#pragma once

// Feature containers shared by the music and video pipelines, and the
// per-dimension statistics that turn frame-level rows into one TrackVector.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "vmnet/error.hpp"

namespace vmnet {

enum class Modality { Video, Music };

inline const char* to_string(Modality m) { return m == Modality::Video ? "video" : "music"; }

enum class Component { Harmonic, Percussive, None };

inline const char* to_string(Component c) {
  switch (c) {
    case Component::Harmonic: return "harmonic";
    case Component::Percussive: return "percussive";
    case Component::None: break;
  }
  return "none";
}

struct FeatureSegment {
  std::string name;
  Component component = Component::None;
  int dim = 0;

  bool operator==(const FeatureSegment&) const = default;
};

using FeatureLayout = std::vector<FeatureSegment>;

inline int layout_dim(const FeatureLayout& layout) {
  return std::accumulate(layout.begin(), layout.end(), 0,
                         [](int acc, const FeatureSegment& s) { return acc + s.dim; });
}

/// frames x feature_dim, with the segment layout that produced the columns.
struct FrameFeatureMatrix {
  Eigen::MatrixXd rows;
  FeatureLayout layout;

  Eigen::Index frames() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }

  /// Columns belonging to the first segment with this name and component.
  Eigen::MatrixXd segment(const std::string& name, Component component) const {
    int offset = 0;
    for (const auto& s : layout) {
      if (s.name == name && s.component == component) return rows.middleCols(offset, s.dim);
      offset += s.dim;
    }
    throw Error(ErrorCode::InvalidArgument, "no segment " + name + "/" + to_string(component));
  }
};

/// One block of an aggregated vector: `statistic` applied to every column of
/// the frame-level layout.
struct AggregateSegment {
  std::string statistic;
  int dim = 0;

  bool operator==(const AggregateSegment&) const = default;
};

struct TrackVector {
  Eigen::VectorXd values;
  Modality source = Modality::Music;
  std::vector<AggregateSegment> layout;
};

enum class Spread { Variance, StdDev };

/// Concatenates per-column mean, population spread, and the `ordinal_k`
/// largest values (rank-major blocks: all top-1 values, then all top-2, ...).
inline TrackVector aggregate_frames(const Eigen::MatrixXd& rows, int ordinal_k, Spread spread,
                                    Modality source) {
  require(ordinal_k >= 1, ErrorCode::InvalidArgument, "ordinal_k must be at least 1");
  require(rows.rows() >= ordinal_k, ErrorCode::TooFewFrames,
          "need at least " + std::to_string(ordinal_k) + " frames, got " + std::to_string(rows.rows()));
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  const auto k = static_cast<Eigen::Index>(ordinal_k);

  TrackVector out;
  out.source = source;
  out.values.resize(d * (2 + k));
  std::vector<double> col(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = rows.col(j).mean();
    const double var = (rows.col(j).array() - mean).square().sum() / static_cast<double>(n);
    out.values(j) = mean;
    out.values(d + j) = spread == Spread::Variance ? var : std::sqrt(var);
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = rows(i, j);
    std::partial_sort(col.begin(), col.begin() + k, col.end(), std::greater<>());
    for (Eigen::Index r = 0; r < k; ++r) out.values((2 + r) * d + j) = col[static_cast<std::size_t>(r)];
  }

  const int di = static_cast<int>(d);
  out.layout.push_back({"mean", di});
  out.layout.push_back({spread == Spread::Variance ? "variance" : "std", di});
  for (int r = 1; r <= ordinal_k; ++r) out.layout.push_back({"top" + std::to_string(r), di});
  return out;
}

}  // namespace vmnet
