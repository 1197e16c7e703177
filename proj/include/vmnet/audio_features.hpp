#pragma once

// Frame-level music descriptors computed on the harmonic and percussive
// components of a clip, and their aggregation into a music-level vector.

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "vmnet/dsp.hpp"
#include "vmnet/error.hpp"
#include "vmnet/features.hpp"

namespace vmnet {

struct ComponentSet {
  bool harmonic = true;
  bool percussive = true;

  bool contains(Component c) const {
    return (c == Component::Harmonic && harmonic) || (c == Component::Percussive && percussive);
  }
};

struct AudioFeatureConfig {
  // Front end.
  int sample_rate_hz = 12000;
  double trim_seconds = 29.12;
  int n_fft = 512;
  int hop = 256;
  int hpss_kernel = 31;
  double hpss_power = 2.0;
  double log_eps = 1e-6;

  // Descriptors.
  int n_mel = 128;
  int n_mfcc = 20;
  int delta_halfwidth = 4;
  double rolloff_percent = 0.85;
  std::vector<int> poly_orders{1, 2};
  int cens_smooth = 41;
  int ordinal_k = 1;
  // Chroma and spectral-shape descriptors read the linear component
  // magnitudes unless this is set; log compression at eps = 1e-6 flattens
  // the spectrum enough to erase pitch-class contrast.
  bool shape_features_on_log = false;

  // Which HPSS component each descriptor family is computed on. The defaults
  // give 222 harmonic + 158 percussive = 380 columns per frame.
  ComponentSet mel{true, true};
  ComponentSet mfcc{true, true};
  ComponentSet mfcc_deltas{true, false};
  ComponentSet chroma{true, false};
  ComponentSet spectral{true, true};
  ComponentSet temporal{true, true};

  void validate() const {
    require(sample_rate_hz > 0, ErrorCode::InvalidArgument, "sample_rate_hz must be positive");
    require(trim_seconds > 0.0, ErrorCode::InvalidArgument, "trim_seconds must be positive");
    require(n_fft > 0 && n_fft % 2 == 0, ErrorCode::InvalidArgument, "n_fft must be positive and even");
    require(hop > 0, ErrorCode::InvalidArgument, "hop must be positive");
    require(hpss_kernel > 0 && hpss_kernel % 2 == 1, ErrorCode::InvalidArgument,
            "hpss_kernel must be positive and odd");
    require(hpss_power > 0.0, ErrorCode::InvalidArgument, "hpss_power must be positive");
    require(log_eps > 0.0, ErrorCode::InvalidArgument, "log_eps must be positive");
    require(n_mfcc >= 1 && n_mel >= n_mfcc, ErrorCode::InvalidArgument, "need 1 <= n_mfcc <= n_mel");
    require(n_mel <= n_fft / 2 + 1, ErrorCode::TooManyBands, "n_mel exceeds the number of bins");
    require(delta_halfwidth >= 1, ErrorCode::InvalidArgument, "delta_halfwidth must be positive");
    require(rolloff_percent > 0.0 && rolloff_percent < 1.0, ErrorCode::InvalidArgument,
            "rolloff_percent must lie in (0, 1)");
    for (int p : poly_orders)
      require(p == 1 || p == 2, ErrorCode::InvalidArgument, "poly orders must be 1 or 2");
    require(cens_smooth > 0 && cens_smooth % 2 == 1, ErrorCode::InvalidArgument,
            "cens_smooth must be positive and odd");
    require(ordinal_k >= 1, ErrorCode::InvalidArgument, "ordinal_k must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// Mel scale and cepstra

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Centre frequencies (Hz) of `n_mel` HTK bands spanning 0 Hz to Nyquist.
inline std::vector<double> mel_band_centers(int n_mel, int sample_rate_hz) {
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> c(static_cast<std::size_t>(n_mel));
  for (int m = 0; m < n_mel; ++m) c[m] = mel_to_hz(top * (m + 1) / (n_mel + 1));
  return c;
}

/// n_mel x (n_fft/2 + 1) triangular filters, unit peak, linear in Hz between
/// neighbouring mel-spaced edges.
inline Eigen::MatrixXd mel_filterbank(int n_mel, int n_fft, int sample_rate_hz) {
  const Eigen::Index bins = n_fft / 2 + 1;
  require(n_mel >= 1, ErrorCode::InvalidArgument, "n_mel must be positive");
  require(n_mel <= bins, ErrorCode::TooManyBands,
          std::to_string(n_mel) + " bands for " + std::to_string(bins) + " bins");
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mel + 2));
  for (int i = 0; i < n_mel + 2; ++i) edges[i] = mel_to_hz(top * i / (n_mel + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mel, bins);
  for (int m = 0; m < n_mel; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (Eigen::Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      if (w > 0.0) fb(m, k) = w;
    }
  }
  return fb;
}

/// frames x n_mel band energies of the squared magnitudes.
inline Eigen::MatrixXd mel_spectrogram(const MagnitudeSpectrogram& spec, int n_mel) {
  require(n_mel <= spec.bins(), ErrorCode::TooManyBands,
          std::to_string(n_mel) + " bands for " + std::to_string(spec.bins()) + " bins");
  const auto fb = mel_filterbank(n_mel, spec.n_fft, spec.sample_rate_hz);
  return spec.mags.array().square().matrix() * fb.transpose();
}

/// Orthonormal DCT-II basis, n_out x n_in.
inline Eigen::MatrixXd dct2_matrix(int n_out, int n_in) {
  Eigen::MatrixXd d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n_in);
    for (int n = 0; n < n_in; ++n)
      d(k, n) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_in));
  }
  return d;
}

/// The log floor is offset so that silent bands map to exactly zero:
/// log(eps + mel) - log(eps).
inline Eigen::MatrixXd log_mel(const Eigen::MatrixXd& melspec, double eps = 1e-6) {
  return melspec.unaryExpr([eps](double v) { return std::log1p(v / eps); });
}

inline Eigen::MatrixXd mfcc(const Eigen::MatrixXd& melspec, int n_mfcc, double eps = 1e-6) {
  const auto n_mel = static_cast<int>(melspec.cols());
  require(n_mfcc >= 1 && n_mfcc <= n_mel, ErrorCode::InvalidArgument, "need 1 <= n_mfcc <= n_mel");
  return log_mel(melspec, eps) * dct2_matrix(n_mfcc, n_mel).transpose();
}

/// Local least-squares slope over +-halfwidth frames with replicated edges;
/// order 2 applies the operator twice.
inline Eigen::MatrixXd delta(const Eigen::MatrixXd& feat, int order, int halfwidth = 4) {
  require(order == 1 || order == 2, ErrorCode::InvalidArgument, "delta order must be 1 or 2");
  require(halfwidth >= 1, ErrorCode::InvalidArgument, "halfwidth must be positive");
  require(feat.rows() >= 2 * halfwidth + 1, ErrorCode::TooFewFrames,
          "delta needs at least " + std::to_string(2 * halfwidth + 1) + " frames");
  const Eigen::Index t_max = feat.rows() - 1;
  double denom = 0.0;
  for (int n = 1; n <= halfwidth; ++n) denom += 2.0 * n * n;

  Eigen::MatrixXd out(feat.rows(), feat.cols());
  for (Eigen::Index t = 0; t <= t_max; ++t) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(feat.cols());
    for (int n = 1; n <= halfwidth; ++n) {
      const auto ahead = std::min<Eigen::Index>(t + n, t_max);
      const auto behind = std::max<Eigen::Index>(t - n, 0);
      acc += n * (feat.row(ahead) - feat.row(behind));
    }
    out.row(t) = acc / denom;
  }
  return order == 1 ? out : delta(out, 1, halfwidth);
}

// ---------------------------------------------------------------------------
// Chroma

inline constexpr std::array<const char*, 12> kPitchClassNames{
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

/// Pitch class (0 = C, 9 = A) of the equal-tempered note nearest `hz`, A4 = 440 Hz.
inline int pitch_class(double hz) {
  const long semis = std::lround(12.0 * std::log2(hz / 440.0));
  return static_cast<int>(((semis + 9) % 12 + 12) % 12);
}

/// Bin energies folded onto 12 pitch classes (DC excluded), each frame
/// scaled to a maximum of 1.
inline Eigen::MatrixXd chroma_stft(const MagnitudeSpectrogram& spec) {
  require(spec.sample_rate_hz > 0 && spec.n_fft > 0, ErrorCode::InvalidArgument,
          "spectrogram lacks sample rate metadata");
  std::vector<int> cls(static_cast<std::size_t>(spec.bins()), -1);
  for (Eigen::Index k = 1; k < spec.bins(); ++k) cls[static_cast<std::size_t>(k)] = pitch_class(spec.bin_frequency(k));

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec.frames(), 12);
  for (Eigen::Index t = 0; t < spec.frames(); ++t) {
    for (Eigen::Index k = 1; k < spec.bins(); ++k) {
      const double m = spec.mags(t, k);
      out(t, cls[static_cast<std::size_t>(k)]) += m * m;
    }
    const double peak = out.row(t).maxCoeff();
    if (peak > 0.0) out.row(t) /= peak;
  }
  return out;
}

/// Chroma energy normalised statistics: L1-normalise, quantise against
/// (0.05, 0.1, 0.2, 0.4) in steps of 0.25, Hann-smooth over time, L2-normalise.
inline Eigen::MatrixXd chroma_cens(const Eigen::MatrixXd& chroma, int smooth_len = 41) {
  require(chroma.cols() == 12, ErrorCode::DimMismatch, "chroma must have 12 columns");
  require(smooth_len > 0 && smooth_len % 2 == 1, ErrorCode::InvalidArgument,
          "smooth_len must be positive and odd");
  constexpr std::array<double, 4> kThresholds{0.05, 0.1, 0.2, 0.4};

  const Eigen::Index frames = chroma.rows();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(frames, 12);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const double l1 = chroma.row(t).cwiseAbs().sum();
    if (l1 <= 0.0) continue;
    for (int c = 0; c < 12; ++c) {
      const double v = chroma(t, c) / l1;
      for (double th : kThresholds)
        if (v > th) q(t, c) += 0.25;
    }
  }

  // Symmetric Hann of length smooth_len + 2 with its zero end points dropped.
  const int half = smooth_len / 2;
  std::vector<double> w(static_cast<std::size_t>(smooth_len));
  double wsum = 0.0;
  for (int i = 0; i < smooth_len; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (smooth_len + 1));
    wsum += w[i];
  }
  for (auto& v : w) v /= wsum;

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(frames, 12);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int o = -half; o <= half; ++o) {
      const Eigen::Index s = t + o;
      if (s >= 0 && s < frames) out.row(t) += w[static_cast<std::size_t>(o + half)] * q.row(s);
    }
    const double n = out.row(t).norm();
    if (n > 0.0) out.row(t) /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral shape

namespace detail {

/// Least-squares map from a magnitude column to polynomial coefficients in Hz,
/// highest order first. Fitted on f / Nyquist for conditioning and rescaled.
inline Eigen::MatrixXd poly_fit_operator(const MagnitudeSpectrogram& spec, int order) {
  const Eigen::Index bins = spec.bins();
  const double f_max = spec.sample_rate_hz / 2.0;
  Eigen::MatrixXd v(bins, order + 1);
  for (Eigen::Index k = 0; k < bins; ++k) {
    const double x = spec.bin_frequency(k) / f_max;
    for (int p = 0; p <= order; ++p) v(k, order - p) = std::pow(x, p);
  }
  Eigen::MatrixXd op = v.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(bins, bins));
  for (int p = 0; p <= order; ++p) op.row(order - p) /= std::pow(f_max, p);
  return op;
}

}  // namespace detail

/// Per frame: centroid, bandwidth, rolloff (all Hz), then the polynomial
/// coefficients for each requested order (highest power first). All-zero
/// frames produce zeros.
inline Eigen::MatrixXd spectral_summaries(const MagnitudeSpectrogram& spec, double rolloff_percent = 0.85,
                                          const std::vector<int>& poly_orders = {1, 2}) {
  require(rolloff_percent > 0.0 && rolloff_percent < 1.0, ErrorCode::InvalidArgument,
          "rolloff_percent must lie in (0, 1)");
  require((spec.mags.array() >= 0.0).all(), ErrorCode::InvalidArgument, "magnitudes must be non-negative");
  int cols = 3;
  std::vector<Eigen::MatrixXd> ops;
  for (int p : poly_orders) {
    require(p == 1 || p == 2, ErrorCode::InvalidArgument, "poly orders must be 1 or 2");
    ops.push_back(detail::poly_fit_operator(spec, p));
    cols += p + 1;
  }

  const Eigen::Index bins = spec.bins();
  Eigen::VectorXd freqs(bins);
  for (Eigen::Index k = 0; k < bins; ++k) freqs(k) = spec.bin_frequency(k);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec.frames(), cols);
  for (Eigen::Index t = 0; t < spec.frames(); ++t) {
    const Eigen::VectorXd m = spec.mags.row(t).transpose();
    const double total = m.sum();
    if (total <= 0.0) continue;
    const double centroid = freqs.dot(m) / total;
    const double bandwidth =
        std::sqrt(((freqs.array() - centroid).square() * m.array()).sum() / total);
    double rolloff = freqs(bins - 1);
    double cum = 0.0;
    for (Eigen::Index k = 0; k < bins; ++k) {
      cum += m(k);
      if (cum >= rolloff_percent * total) {
        rolloff = freqs(k);
        break;
      }
    }
    out(t, 0) = centroid;
    out(t, 1) = bandwidth;
    out(t, 2) = rolloff;
    Eigen::Index c = 3;
    for (const auto& op : ops) {
      out.row(t).segment(c, op.rows()) = (op * m).transpose();
      c += op.rows();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time-domain descriptors

/// Fraction of the n_fft - 1 adjacent pairs per frame whose signs differ
/// (zero counts as positive), divided by n_fft.
inline Eigen::MatrixXd zero_crossing_rate(const AudioClip& clip, int n_fft, int hop) {
  check_framing(clip, n_fft, hop);
  const auto frames = frame_count(clip.samples.size(), n_fft, hop);
  Eigen::MatrixXd out(frames, 1);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const double* x = clip.samples.data() + static_cast<std::size_t>(t) * hop;
    int crossings = 0;
    for (int i = 1; i < n_fft; ++i) crossings += (x[i - 1] >= 0.0) != (x[i] >= 0.0);
    out(t, 0) = static_cast<double>(crossings) / n_fft;
  }
  return out;
}

inline Eigen::MatrixXd rms_energy(const AudioClip& clip, int n_fft, int hop) {
  check_framing(clip, n_fft, hop);
  const auto frames = frame_count(clip.samples.size(), n_fft, hop);
  Eigen::MatrixXd out(frames, 1);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const double* x = clip.samples.data() + static_cast<std::size_t>(t) * hop;
    double acc = 0.0;
    for (int i = 0; i < n_fft; ++i) acc += x[i] * x[i];
    out(t, 0) = std::sqrt(acc / n_fft);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full extraction

/// Column layout produced by extract_music_features under `cfg`: the harmonic
/// block, then the percussive block, each in the fixed family order below.
inline FeatureLayout music_feature_layout(const AudioFeatureConfig& cfg) {
  FeatureLayout layout;
  for (Component c : {Component::Harmonic, Component::Percussive}) {
    if (cfg.mel.contains(c)) layout.push_back({"mel", c, cfg.n_mel});
    if (cfg.mfcc.contains(c)) layout.push_back({"mfcc", c, cfg.n_mfcc});
    if (cfg.mfcc_deltas.contains(c)) {
      layout.push_back({"mfcc_delta", c, cfg.n_mfcc});
      layout.push_back({"mfcc_delta2", c, cfg.n_mfcc});
    }
    if (cfg.chroma.contains(c)) {
      layout.push_back({"chroma_stft", c, 12});
      layout.push_back({"chroma_cens", c, 12});
    }
    if (cfg.spectral.contains(c)) {
      layout.push_back({"spectral_centroid", c, 1});
      layout.push_back({"spectral_bandwidth", c, 1});
      layout.push_back({"spectral_rolloff", c, 1});
      for (int p : cfg.poly_orders) layout.push_back({"poly" + std::to_string(p), c, p + 1});
    }
    if (cfg.temporal.contains(c)) {
      layout.push_back({"zero_crossing_rate", c, 1});
      layout.push_back({"rms", c, 1});
    }
  }
  return layout;
}

/// HPSS once; mel-scale descriptors on the log-compressed component
/// spectrograms, chroma and spectral shape on the component magnitudes (see
/// shape_features_on_log), ZCR and RMS on each component resynthesised by
/// masked inverse STFT. The clip is expected at the configured rate and length.
inline FrameFeatureMatrix extract_music_features(const AudioClip& clip, const AudioFeatureConfig& cfg) {
  cfg.validate();
  validate(clip);
  const auto spec = stft(clip, cfg.n_fft, cfg.hop);
  const auto mag = magnitude(spec);
  const auto masks = hpss_masks(mag, cfg.hpss_kernel, cfg.hpss_power);

  FrameFeatureMatrix out;
  out.layout = music_feature_layout(cfg);
  out.rows.resize(spec.frames(), layout_dim(out.layout));
  Eigen::Index col = 0;
  auto put = [&](const Eigen::MatrixXd& block) {
    out.rows.middleCols(col, block.cols()) = block;
    col += block.cols();
  };

  for (Component c : {Component::Harmonic, Component::Percussive}) {
    const auto& mask = c == Component::Harmonic ? masks.harmonic : masks.percussive;
    const auto linear = mag.with_mags(mag.mags.cwiseProduct(mask));
    const auto logc = log_compress(linear, cfg.log_eps);
    const auto& shape_src = cfg.shape_features_on_log ? logc : linear;

    Eigen::MatrixXd mel;
    Eigen::MatrixXd cep;
    if (cfg.mel.contains(c) || cfg.mfcc.contains(c) || cfg.mfcc_deltas.contains(c))
      mel = mel_spectrogram(logc, cfg.n_mel);
    if (cfg.mfcc.contains(c) || cfg.mfcc_deltas.contains(c)) cep = mfcc(mel, cfg.n_mfcc, cfg.log_eps);

    if (cfg.mel.contains(c)) put(mel);
    if (cfg.mfcc.contains(c)) put(cep);
    if (cfg.mfcc_deltas.contains(c)) {
      put(delta(cep, 1, cfg.delta_halfwidth));
      put(delta(cep, 2, cfg.delta_halfwidth));
    }
    if (cfg.chroma.contains(c)) {
      const auto chroma = chroma_stft(shape_src);
      put(chroma);
      put(chroma_cens(chroma, cfg.cens_smooth));
    }
    if (cfg.spectral.contains(c)) put(spectral_summaries(shape_src, cfg.rolloff_percent, cfg.poly_orders));
    if (cfg.temporal.contains(c)) {
      ComplexSpectrogram component = spec;
      component.bins = spec.bins.cwiseProduct(mask.cast<std::complex<double>>());
      const auto signal = istft(component);
      put(zero_crossing_rate(signal, cfg.n_fft, cfg.hop));
      put(rms_energy(signal, cfg.n_fft, cfg.hop));
    }
  }
  return out;
}

/// Mean, population variance, and top-k values per frame-level dimension.
inline TrackVector aggregate_music_level(const FrameFeatureMatrix& feat, int ordinal_k = 1) {
  return aggregate_frames(feat.rows, ordinal_k, Spread::Variance, Modality::Music);
}

/// Resample, centre-trim, extract and aggregate one decoded clip.
inline TrackVector music_track_vector(const AudioClip& raw, const AudioFeatureConfig& cfg) {
  const auto clip = trim_center(resample(raw, cfg.sample_rate_hz), cfg.trim_seconds);
  return aggregate_music_level(extract_music_features(clip, cfg), cfg.ordinal_k);
}

inline nlohmann::json layout_to_json(const FeatureLayout& frame_layout,
                                     const std::vector<AggregateSegment>& aggregate_layout) {
  nlohmann::json j;
  j["frame_dim"] = layout_dim(frame_layout);
  auto& segs = j["frame_segments"] = nlohmann::json::array();
  for (const auto& s : frame_layout)
    segs.push_back({{"name", s.name}, {"component", to_string(s.component)}, {"dim", s.dim}});
  int total = 0;
  auto& stats = j["statistics"] = nlohmann::json::array();
  for (const auto& s : aggregate_layout) {
    stats.push_back({{"statistic", s.statistic}, {"dim", s.dim}});
    total += s.dim;
  }
  j["track_dim"] = total;
  return j;
}

}  // namespace vmnet
