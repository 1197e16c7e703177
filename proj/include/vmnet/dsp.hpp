#pragma once

// Signal-processing primitives: WAV ingestion, resampling, trimming, STFT and
// its inverse, median-filter harmonic/percussive separation, log compression.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vmnet/binary_io.hpp"
#include "vmnet/error.hpp"

namespace vmnet {

struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }
};

inline void validate(const AudioClip& clip) {
  require(clip.sample_rate_hz > 0, ErrorCode::InvalidArgument, "sample rate must be positive");
  require(!clip.samples.empty(), ErrorCode::EmptyAudio, "clip has no samples");
  for (double s : clip.samples)
    require(std::isfinite(s), ErrorCode::NonFiniteInput, "clip contains a non-finite sample");
}

enum class Window { Hann, Rectangular };

struct ComplexSpectrogram {
  Eigen::MatrixXcd bins;  // frames x (n_fft/2 + 1)
  int n_fft = 0;
  int hop = 0;
  int sample_rate_hz = 0;
  std::size_t source_length = 0;

  Eigen::Index frames() const { return bins.rows(); }
};

struct MagnitudeSpectrogram {
  Eigen::MatrixXd mags;  // frames x (n_fft/2 + 1)
  int n_fft = 0;
  int hop = 0;
  int sample_rate_hz = 0;
  std::size_t source_length = 0;

  Eigen::Index frames() const { return mags.rows(); }
  Eigen::Index bins() const { return mags.cols(); }
  double bin_frequency(Eigen::Index k) const {
    return static_cast<double>(k) * sample_rate_hz / n_fft;
  }
  MagnitudeSpectrogram with_mags(Eigen::MatrixXd m) const {
    MagnitudeSpectrogram out = *this;
    out.mags = std::move(m);
    return out;
  }
};

// ---------------------------------------------------------------------------
// WAV

namespace detail {

inline std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

/// Decodes a RIFF/WAVE byte buffer. Channels are averaged to mono; integer
/// PCM is scaled by the type's maximum magnitude (2^(bits-1)).
inline AudioClip decode_wav(const std::vector<std::uint8_t>& bytes) {
  using detail::le16;
  using detail::le32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(ErrorCode::MalformedHeader, "not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    std::size_t size = le32(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = bytes.size() - body;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || size > available) throw Error(ErrorCode::MalformedHeader, "short fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = le32(f + 4);
      block_align = le16(f + 12);
      bits = le16(f + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw Error(ErrorCode::MalformedHeader, "short extensible fmt chunk");
        format = le16(f + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      // Streaming writers may leave the size unset; clamp to what exists.
      size = std::min(size, available);
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt || data == nullptr)
    throw Error(ErrorCode::MalformedHeader, "missing fmt or data chunk");
  if (rate == 0) throw Error(ErrorCode::MalformedHeader, "zero sample rate");
  if (channels < 1 || channels > 2)
    throw Error(ErrorCode::UnsupportedEncoding, "only mono and stereo are supported");
  const bool is_int = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool is_float = format == 3 && (bits == 32 || bits == 64);
  if (!is_int && !is_float)
    throw Error(ErrorCode::UnsupportedEncoding,
                "format " + std::to_string(format) + " with " + std::to_string(bits) + " bits");

  const std::size_t bytes_per_sample = bits / 8u;
  const std::size_t frame_bytes = std::max<std::size_t>(block_align, bytes_per_sample * channels);
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw Error(ErrorCode::EmptyAudio, "data chunk holds no frames");

  auto sample_at = [&](const std::uint8_t* p) -> double {
    if (is_float) {
      if (bits == 32) return static_cast<double>(std::bit_cast<float>(le32(p)));
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
      return std::bit_cast<double>(v);
    }
    switch (bits) {
      case 8: return (static_cast<double>(p[0]) - 128.0) / 128.0;
      case 16: return static_cast<double>(static_cast<std::int16_t>(le16(p))) / 32768.0;
      case 24: {
        std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (v & 0x800000) v -= 0x1000000;
        return static_cast<double>(v) / 8388608.0;
      }
      default: return static_cast<double>(static_cast<std::int32_t>(le32(p))) / 2147483648.0;
    }
  };

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::uint8_t* f = data + i * frame_bytes;
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += sample_at(f + c * bytes_per_sample);
    const double s = acc / channels;
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteInput, "non-finite float sample");
    clip.samples[i] = s;
  }
  return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  return decode_wav(read_file_bytes(path));
}

enum class WavEncoding { Pcm16, Float32 };

/// Writes interleaved channels; used for fixtures and tooling.
inline std::vector<std::uint8_t> encode_wav(const std::vector<std::vector<double>>& channels,
                                            int sample_rate_hz,
                                            WavEncoding enc = WavEncoding::Pcm16) {
  require(!channels.empty(), ErrorCode::InvalidArgument, "no channels");
  const std::size_t frames = channels.front().size();
  const auto n_ch = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * n_ch * (bits / 8));
  ByteWriter w;
  w.bytes("RIFF", 4);
  w.u32(36 + data_bytes);
  w.bytes("WAVEfmt ", 8);
  w.u32(16);
  w.u8(enc == WavEncoding::Pcm16 ? 1 : 3);
  w.u8(0);
  w.u8(static_cast<std::uint8_t>(n_ch));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(sample_rate_hz));
  w.u32(static_cast<std::uint32_t>(sample_rate_hz) * n_ch * (bits / 8));
  w.u8(static_cast<std::uint8_t>(n_ch * (bits / 8)));
  w.u8(0);
  w.u8(static_cast<std::uint8_t>(bits));
  w.u8(0);
  w.bytes("data", 4);
  w.u32(data_bytes);
  for (std::size_t i = 0; i < frames; ++i) {
    for (const auto& ch : channels) {
      if (enc == WavEncoding::Pcm16) {
        const double v = std::clamp(std::round(ch[i] * 32768.0), -32768.0, 32767.0);
        const auto s = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
        w.u8(static_cast<std::uint8_t>(s & 0xFF));
        w.u8(static_cast<std::uint8_t>(s >> 8));
      } else {
        w.f32(static_cast<float>(ch[i]));
      }
    }
  }
  return w.buffer();
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip,
                      WavEncoding enc = WavEncoding::Pcm16) {
  write_file_bytes(path, encode_wav({clip.samples}, clip.sample_rate_hz, enc));
}

// ---------------------------------------------------------------------------
// Resampling

struct ResamplerSpec {
  int taps_per_phase = 64;
  double kaiser_beta = 8.0;
  double rolloff = 0.95;  // cutoff as a fraction of the lower Nyquist rate
};

namespace detail {

inline double kaiser(double x, double half_width, double beta) {
  const double r = x / half_width;
  if (std::abs(r) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, beta);
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

/// Filter taps for one fractional offset, normalised to unit DC gain.
inline void phase_taps(double frac, double cutoff, const ResamplerSpec& spec, double* out) {
  const int n = spec.taps_per_phase;
  const int centre = n / 2 - 1;
  const double half = n / 2.0;
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    const double tau = frac + centre - j;
    out[j] = cutoff * sinc(cutoff * tau) * kaiser(tau, half, spec.kaiser_beta);
    sum += out[j];
  }
  if (sum != 0.0)
    for (int j = 0; j < n; ++j) out[j] /= sum;
}

}  // namespace detail

/// Polyphase windowed-sinc resampler for the rational ratio target/source.
/// Samples outside the clip are taken as zero.
inline AudioClip resample(const AudioClip& clip, int target_rate_hz, const ResamplerSpec& spec = {}) {
  require(target_rate_hz > 0, ErrorCode::InvalidArgument, "target rate must be positive");
  require(clip.sample_rate_hz > 0, ErrorCode::InvalidArgument, "source rate must be positive");
  if (target_rate_hz == clip.sample_rate_hz) return clip;

  const auto g = std::gcd(target_rate_hz, clip.sample_rate_hz);
  const std::int64_t up = target_rate_hz / g;
  const std::int64_t down = clip.sample_rate_hz / g;
  const double cutoff = std::min(1.0, static_cast<double>(up) / down) * spec.rolloff;
  const int taps = spec.taps_per_phase;
  const int centre = taps / 2 - 1;

  const auto in_len = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t out_len = (in_len * up + down - 1) / down;

  constexpr std::int64_t kMaxTablePhases = 4096;
  const bool tabulate = up <= kMaxTablePhases;
  std::vector<double> table;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up * taps));
    for (std::int64_t p = 0; p < up; ++p)
      detail::phase_taps(static_cast<double>(p) / up, cutoff, spec, &table[p * taps]);
  }

  AudioClip out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(static_cast<std::size_t>(out_len));
  std::vector<double> scratch(taps);
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t base = (n * down) / up;
    const std::int64_t phase = (n * down) % up;
    const double* h;
    if (tabulate) {
      h = &table[phase * taps];
    } else {
      detail::phase_taps(static_cast<double>(phase) / up, cutoff, spec, scratch.data());
      h = scratch.data();
    }
    double acc = 0.0;
    for (int j = 0; j < taps; ++j) {
      const std::int64_t i = base - centre + j;
      if (i >= 0 && i < in_len) acc += h[j] * clip.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

/// Centred window of round(seconds * rate) samples; shorter clips are
/// zero-padded equally on both sides (the odd sample goes to the right).
inline AudioClip trim_center(const AudioClip& clip, double seconds) {
  require(seconds > 0.0, ErrorCode::InvalidArgument, "trim length must be positive");
  const auto target = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate_hz));
  const std::size_t len = clip.samples.size();
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  if (len >= target) {
    const std::size_t start = (len - target) / 2;
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(start + target));
  } else {
    const std::size_t left = (target - len) / 2;
    out.samples.assign(target, 0.0);
    std::copy(clip.samples.begin(), clip.samples.end(),
              out.samples.begin() + static_cast<std::ptrdiff_t>(left));
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT

/// Periodic Hann (or rectangular) analysis window.
inline std::vector<double> make_window(int n, Window kind) {
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (kind == Window::Hann)
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

inline Eigen::Index frame_count(std::size_t length, int n_fft, int hop) {
  if (length < static_cast<std::size_t>(n_fft)) return 0;
  return static_cast<Eigen::Index>((length - n_fft) / hop + 1);
}

inline void check_framing(const AudioClip& clip, int n_fft, int hop) {
  require(n_fft > 0 && n_fft % 2 == 0, ErrorCode::InvalidArgument, "n_fft must be positive and even");
  require(hop > 0, ErrorCode::InvalidArgument, "hop must be positive");
  require(clip.samples.size() >= static_cast<std::size_t>(n_fft), ErrorCode::ClipTooShort,
          "clip has " + std::to_string(clip.samples.size()) + " samples, n_fft is " +
              std::to_string(n_fft));
}

/// No-padding STFT: frame t covers samples [t*hop, t*hop + n_fft).
inline ComplexSpectrogram stft(const AudioClip& clip, int n_fft, int hop, Window window = Window::Hann) {
  check_framing(clip, n_fft, hop);
  const auto frames = frame_count(clip.samples.size(), n_fft, hop);
  const Eigen::Index bins = n_fft / 2 + 1;
  const auto w = make_window(n_fft, window);

  ComplexSpectrogram out;
  out.bins.resize(frames, bins);
  out.n_fft = n_fft;
  out.hop = hop;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.source_length = clip.samples.size();

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spectrum;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i) frame[i] = w[i] * clip.samples[start + i];
    fft.fwd(spectrum, frame);
    for (Eigen::Index k = 0; k < bins; ++k) out.bins(t, k) = spectrum[static_cast<std::size_t>(k)];
  }
  return out;
}

inline MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
  MagnitudeSpectrogram out;
  out.mags = spec.bins.cwiseAbs();
  out.n_fft = spec.n_fft;
  out.hop = spec.hop;
  out.sample_rate_hz = spec.sample_rate_hz;
  out.source_length = spec.source_length;
  return out;
}

/// Weighted overlap-add inverse with Hann synthesis, normalised by the
/// summed squared window. Samples no frame covers come back as zero.
inline AudioClip istft(const ComplexSpectrogram& spec) {
  const int n_fft = spec.n_fft;
  const auto w = make_window(n_fft, Window::Hann);
  std::vector<double> out(spec.source_length, 0.0), wss(spec.source_length, 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(spec.bins.cols()));
  std::vector<double> frame;
  for (Eigen::Index t = 0; t < spec.frames(); ++t) {
    for (Eigen::Index k = 0; k < spec.bins.cols(); ++k) spectrum[static_cast<std::size_t>(k)] = spec.bins(t, k);
    fft.inv(frame, spectrum, n_fft);
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop;
    for (int i = 0; i < n_fft; ++i) {
      out[start + i] += w[i] * frame[i];
      wss[start + i] += w[i] * w[i];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wss[i] > 1e-10 ? out[i] / wss[i] : 0.0;
  return AudioClip{std::move(out), spec.sample_rate_hz};
}

// ---------------------------------------------------------------------------
// Harmonic / percussive separation

namespace detail {

/// Sliding median along rows (axis 0) or columns (axis 1), edges replicated.
inline Eigen::MatrixXd median_filter(const Eigen::MatrixXd& m, int kernel, int axis) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  const int half = kernel / 2;
  Eigen::MatrixXd out(rows, cols);
  std::vector<double> buf(static_cast<std::size_t>(kernel));
  const Eigen::Index len = axis == 0 ? rows : cols;
  const Eigen::Index lanes = axis == 0 ? cols : rows;
  for (Eigen::Index lane = 0; lane < lanes; ++lane) {
    for (Eigen::Index pos = 0; pos < len; ++pos) {
      for (int o = -half; o <= half; ++o) {
        const Eigen::Index p = std::clamp<Eigen::Index>(pos + o, 0, len - 1);
        buf[static_cast<std::size_t>(o + half)] = axis == 0 ? m(p, lane) : m(lane, p);
      }
      auto mid = buf.begin() + half;
      std::nth_element(buf.begin(), mid, buf.end());
      (axis == 0 ? out(pos, lane) : out(lane, pos)) = *mid;
    }
  }
  return out;
}

}  // namespace detail

struct HpssMasks {
  Eigen::MatrixXd harmonic;
  Eigen::MatrixXd percussive;
};

/// Soft masks from a median filter across time (harmonic enhancement) and
/// across frequency (percussive enhancement). Cells where both enhanced
/// spectra vanish split 0.5 / 0.5.
inline HpssMasks hpss_masks(const MagnitudeSpectrogram& spec, int kernel = 31, double power = 2.0) {
  require(kernel > 0 && kernel % 2 == 1, ErrorCode::InvalidArgument, "kernel must be positive and odd");
  require(power > 0.0, ErrorCode::InvalidArgument, "mask power must be positive");
  require((spec.mags.array() >= 0.0).all(), ErrorCode::InvalidArgument, "magnitudes must be non-negative");
  const Eigen::MatrixXd h = detail::median_filter(spec.mags, kernel, 0);
  const Eigen::MatrixXd p = detail::median_filter(spec.mags, kernel, 1);
  HpssMasks masks{Eigen::MatrixXd(h.rows(), h.cols()), Eigen::MatrixXd(h.rows(), h.cols())};
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double hp = std::pow(h.data()[i], power);
    const double pp = std::pow(p.data()[i], power);
    const double denom = hp + pp;
    const double mh = denom > 0.0 ? hp / denom : 0.5;
    masks.harmonic.data()[i] = mh;
    masks.percussive.data()[i] = 1.0 - mh;
  }
  return masks;
}

inline std::pair<MagnitudeSpectrogram, MagnitudeSpectrogram> hpss(const MagnitudeSpectrogram& spec,
                                                                  int kernel = 31, double power = 2.0) {
  const auto masks = hpss_masks(spec, kernel, power);
  return {spec.with_mags(spec.mags.cwiseProduct(masks.harmonic)),
          spec.with_mags(spec.mags.cwiseProduct(masks.percussive))};
}

/// log(eps + m) - log(eps), evaluated as log1p(m / eps).
inline MagnitudeSpectrogram log_compress(const MagnitudeSpectrogram& spec, double eps = 1e-6) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  return spec.with_mags(spec.mags.unaryExpr([eps](double m) { return std::log1p(m / eps); }));
}

}  // namespace vmnet
