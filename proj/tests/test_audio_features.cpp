#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "vmnet/audio_features.hpp"

using namespace vmnet;
using vmnet::testing::random_matrix;
using vmnet::testing::sine;

namespace {

MagnitudeSpectrogram empty_spec(Eigen::Index frames, int n_fft, int rate) {
  MagnitudeSpectrogram s;
  s.mags = Eigen::MatrixXd::Zero(frames, n_fft / 2 + 1);
  s.n_fft = n_fft;
  s.hop = n_fft / 2;
  s.sample_rate_hz = rate;
  return s;
}

AudioFeatureConfig short_config() {
  AudioFeatureConfig cfg;
  cfg.cens_smooth = 9;
  return cfg;
}

int argmax(const Eigen::RowVectorXd& v) {
  Eigen::Index i;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

TEST(MelSpectrogram, ZeroInZeroOut) {
  const auto spec = empty_spec(5, 512, 12000);
  EXPECT_EQ(mel_spectrogram(spec, 128).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MelSpectrogram, FilterbankCoversBandRange) {
  const auto fb = mel_filterbank(128, 512, 12000);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) EXPECT_GT(fb.row(m).sum(), 0.0) << "band " << m;
  const auto centers = mel_band_centers(128, 12000);
  const Eigen::VectorXd coverage = fb.colwise().sum().transpose();
  for (Eigen::Index k = 0; k < fb.cols(); ++k) {
    const double f = k * 12000.0 / 512;
    if (f >= centers.front() && f <= centers.back()) EXPECT_GT(coverage(k), 0.0) << "bin " << k;
  }
}

TEST(MelSpectrogram, ToneLandsInNearestBand) {
  // Band centres from the HTK formula, computed independently here.
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int n_mel = 40, n_fft = 512, rate = 12000;
  for (int bin : {7, 30, 101, 200}) {
    auto spec = empty_spec(1, n_fft, rate);
    spec.mags(0, bin) = 1.0;
    const double f = bin * double(rate) / n_fft;
    int nearest = 0;
    double best = 1e300;
    for (int m = 0; m < n_mel; ++m) {
      const double c = hz(mel(rate / 2.0) * (m + 1) / (n_mel + 1));
      if (std::abs(c - f) < best) best = std::abs(c - f), nearest = m;
    }
    EXPECT_EQ(argmax(mel_spectrogram(spec, n_mel).row(0)), nearest) << "bin " << bin;
  }
}

TEST(MelSpectrogram, TooManyBands) {
  try {
    mel_spectrogram(empty_spec(1, 16, 8000), 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooManyBands);
  }
}

TEST(Mfcc, ConstantBandsOnlyFillCoefficientZero) {
  const Eigen::MatrixXd mel = Eigen::MatrixXd::Constant(3, 26, 4.2);
  const auto c = mfcc(mel, 13);
  EXPECT_GT(std::abs(c(0, 0)), 1.0);
  EXPECT_LT(c.rightCols(12).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Mfcc, FullOrthonormalDctInverts) {
  const Eigen::MatrixXd mel = random_matrix(2, 16, 3).cwiseAbs();
  const auto c = mfcc(mel, 16);
  const Eigen::MatrixXd back = c * dct2_matrix(16, 16);
  EXPECT_LT((back - log_mel(mel)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Mfcc, MatchesCosineSum) {
  const Eigen::MatrixXd mel = random_matrix(1, 4, 8).cwiseAbs();
  const auto c = mfcc(mel, 4);
  for (int k = 0; k < 4; ++k) {
    double acc = 0.0;
    for (int n = 0; n < 4; ++n)
      acc += std::log(1e-6 + mel(0, n)) * std::cos(std::numbers::pi * k * (n + 0.5) / 4);
    // log(eps + x) - log(eps) only shifts coefficient 0.
    if (k == 0) acc -= 4 * std::log(1e-6);
    acc *= k == 0 ? std::sqrt(0.25) : std::sqrt(0.5);
    EXPECT_NEAR(c(0, k), acc, 1e-9 * std::max(1.0, std::abs(acc)));
  }
}

TEST(Delta, ConstantAndLinear) {
  EXPECT_EQ(delta(Eigen::MatrixXd::Constant(12, 3, 2.5), 1).cwiseAbs().maxCoeff(), 0.0);
  Eigen::MatrixXd line(20, 1);
  for (int t = 0; t < 20; ++t) line(t, 0) = 0.75 * t;
  const auto d = delta(line, 1);
  for (int t = 4; t < 16; ++t) EXPECT_NEAR(d(t, 0), 0.75, 1e-12);
  const auto d2 = delta(line, 2);
  for (int t = 8; t < 12; ++t) EXPECT_NEAR(d2(t, 0), 0.0, 1e-12);
}

TEST(Delta, MatchesLeastSquaresSlope) {
  const auto x = random_matrix(10, 2, 5);
  const auto d = delta(x, 1, 4);
  for (int t = 0; t < 10; ++t)
    for (int c = 0; c < 2; ++c) {
      double sy = 0, sxy = 0, sxx = 0;
      for (int n = -4; n <= 4; ++n) sy += x(std::clamp(t + n, 0, 9), c);
      const double ybar = sy / 9;
      for (int n = -4; n <= 4; ++n) {
        sxy += n * (x(std::clamp(t + n, 0, 9), c) - ybar);
        sxx += n * n;
      }
      EXPECT_NEAR(d(t, c), sxy / sxx, 1e-9);
    }
}

TEST(Delta, TooFewFrames) {
  try {
    delta(Eigen::MatrixXd::Zero(8, 1), 1, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewFrames);
  }
}

TEST(Chroma, SilenceAndReferencePitches) {
  EXPECT_EQ(chroma_stft(empty_spec(3, 512, 12000)).cwiseAbs().maxCoeff(), 0.0);

  const auto a = magnitude(stft(sine(440.0, 12000, 12000), 4096, 2048));
  const auto ca = chroma_stft(a);
  EXPECT_EQ(argmax(ca.row(0)), 9);
  EXPECT_DOUBLE_EQ(ca(0, 9), 1.0);
  EXPECT_GE(ca.minCoeff(), 0.0);
  EXPECT_LE(ca.maxCoeff(), 1.0);

  // C4: 12*log2(261.63/440) = -9 semitones -> class (9 - 9) mod 12 = 0.
  const auto c = magnitude(stft(sine(261.63, 12000, 12000), 4096, 2048));
  EXPECT_EQ(argmax(chroma_stft(c).row(0)), 0);
}

TEST(ChromaCens, ZeroOneHotAndNorms) {
  EXPECT_EQ(chroma_cens(Eigen::MatrixXd::Zero(10, 12)).cwiseAbs().maxCoeff(), 0.0);

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(60, 12);
  onehot.col(4).setConstant(0.8);
  const auto cens = chroma_cens(onehot, 41);
  for (int t = 20; t < 40; ++t) {
    EXPECT_NEAR(cens(t, 4), 1.0, 1e-12);
    EXPECT_NEAR(cens.row(t).sum(), 1.0, 1e-12);
  }

  Eigen::MatrixXd random = random_matrix(50, 12, 9).cwiseAbs();
  random.row(7).setZero();
  const auto r = chroma_cens(random, 5);
  for (Eigen::Index t = 0; t < r.rows(); ++t) {
    const double n = r.row(t).norm();
    EXPECT_TRUE(std::abs(n - 1.0) < 1e-9 || n == 0.0) << "row " << t << " norm " << n;
  }
}

TEST(SpectralSummaries, PointMassAndFlatSpectrum) {
  auto spec = empty_spec(1, 64, 6400);
  spec.mags(0, 10) = 3.0;
  const auto s = spectral_summaries(spec);
  EXPECT_NEAR(s(0, 0), 1000.0, 1e-9);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-9);
  EXPECT_NEAR(s(0, 2), 1000.0, 1e-9);

  auto flat = empty_spec(1, 64, 6400);
  flat.mags.setOnes();
  double mean_f = 0.0;
  for (int k = 0; k <= 32; ++k) mean_f += k * 100.0;
  mean_f /= 33;
  EXPECT_NEAR(spectral_summaries(flat)(0, 0), mean_f, 1e-9);

  EXPECT_EQ(spectral_summaries(empty_spec(2, 64, 6400)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SpectralSummaries, PolyCoefficientsMatchNormalEquations) {
  auto spec = empty_spec(1, 16, 32);
  spec.mags = random_matrix(1, 9, 12).cwiseAbs();
  const auto s = spectral_summaries(spec, 0.85, {1, 2});
  for (int order : {1, 2}) {
    // Normal equations (V^T V) c = V^T m in long double, Gaussian elimination.
    const int n = order + 1;
    long double a[3][4] = {};
    for (int k = 0; k < 9; ++k) {
      const long double f = k * 2.0L;
      long double pw[3] = {1.0L, f, f * f};
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) a[r][c] += pw[order - r] * pw[order - c];
        a[r][n] += pw[order - r] * spec.mags(0, k);
      }
    }
    for (int p = 0; p < n; ++p)
      for (int r = p + 1; r < n; ++r) {
        const long double f = a[r][p] / a[p][p];
        for (int c = p; c <= n; ++c) a[r][c] -= f * a[p][c];
      }
    long double coef[3];
    for (int r = n - 1; r >= 0; --r) {
      long double acc = a[r][n];
      for (int c = r + 1; c < n; ++c) acc -= a[r][c] * coef[c];
      coef[r] = acc / a[r][r];
    }
    const int offset = order == 1 ? 3 : 5;
    for (int r = 0; r < n; ++r)
      EXPECT_NEAR(s(0, offset + r), static_cast<double>(coef[r]),
                  1e-8 * std::max(1.0, std::abs(static_cast<double>(coef[r]))));
  }
}

TEST(ZeroCrossingRate, Examples) {
  EXPECT_EQ(zero_crossing_rate(AudioClip{std::vector<double>(1024, 0.3), 12000}, 512, 256).maxCoeff(), 0.0);

  AudioClip alt{std::vector<double>(1024), 12000};
  for (std::size_t i = 0; i < alt.samples.size(); ++i) alt.samples[i] = i % 2 ? -1.0 : 1.0;
  const auto z = zero_crossing_rate(alt, 512, 256);
  for (Eigen::Index t = 0; t < z.rows(); ++t) EXPECT_DOUBLE_EQ(z(t, 0), 511.0 / 512.0);

  const auto tone = zero_crossing_rate(sine(440.0, 12000, 12000), 512, 256);
  const double expected = 2.0 * 440.0 * (512.0 / 12000.0) / 511.0;
  for (Eigen::Index t = 0; t < tone.rows(); ++t) EXPECT_NEAR(tone(t, 0), expected, 0.05 * expected);
}

TEST(RmsEnergy, Examples) {
  EXPECT_EQ(rms_energy(AudioClip{std::vector<double>(600, 0.0), 100}, 64, 32).maxCoeff(), 0.0);
  const auto c = rms_energy(AudioClip{std::vector<double>(600, -0.4), 100}, 64, 32);
  EXPECT_NEAR(c.minCoeff(), 0.4, 1e-15);
  EXPECT_NEAR(c.maxCoeff(), 0.4, 1e-15);
  const auto s = rms_energy(sine(440.0, 12000, 12000), 512, 256);
  for (Eigen::Index t = 0; t < s.rows(); ++t) EXPECT_NEAR(s(t, 0), 1.0 / std::sqrt(2.0), 1e-2);
  EXPECT_THROW(rms_energy(AudioClip{std::vector<double>(10, 0.0), 100}, 64, 32), Error);
}

TEST(ExtractMusicFeatures, DefaultLayoutIs380) {
  const AudioFeatureConfig cfg;
  const auto layout = music_feature_layout(cfg);
  EXPECT_EQ(layout_dim(layout), 380);
}

TEST(ExtractMusicFeatures, SilenceGivesZeros) {
  const AudioFeatureConfig cfg;
  const AudioClip silence{std::vector<double>(349440, 0.0), 12000};
  const auto f = extract_music_features(silence, cfg);
  EXPECT_EQ(f.frames(), (349440 - 512) / 256 + 1);
  EXPECT_EQ(f.dim(), 380);
  EXPECT_EQ(f.rows.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExtractMusicFeatures, LayoutStableAndChromaFollowsPitch) {
  const auto cfg = short_config();
  const auto a = extract_music_features(sine(440.0, 12000, 24000, 0.5), cfg);
  const auto c = extract_music_features(sine(523.25, 12000, 24000, 0.5), cfg);
  ASSERT_EQ(a.layout, c.layout);
  ASSERT_EQ(a.dim(), c.dim());
  ASSERT_EQ(a.frames(), c.frames());
  EXPECT_TRUE(a.rows.allFinite());

  const auto ca = a.segment("chroma_stft", Component::Harmonic);
  const auto cc = c.segment("chroma_stft", Component::Harmonic);
  for (Eigen::Index t = 10; t < ca.rows() - 10; ++t) {
    EXPECT_EQ(argmax(ca.row(t)), 9);
    EXPECT_EQ(argmax(cc.row(t)), 0);
  }
  const auto ta = aggregate_music_level(a, cfg.ordinal_k);
  const auto tc = aggregate_music_level(c, cfg.ordinal_k);
  EXPECT_EQ(ta.values.size(), tc.values.size());
  EXPECT_EQ(ta.values.size(), 380 * 3);
}

TEST(ExtractMusicFeatures, RangesAndAmplitudeScaling) {
  const auto cfg = short_config();
  auto clip = vmnet::testing::noise(12000, 12000, 44);
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] = 0.3 * clip.samples[i] + 0.5 * std::sin(2 * std::numbers::pi * 330.0 * i / 12000);
  AudioClip loud = clip;
  for (auto& s : loud.samples) s *= 2.5;

  const auto f = extract_music_features(clip, cfg);
  const auto g = extract_music_features(loud, cfg);
  for (Component comp : {Component::Harmonic, Component::Percussive}) {
    const auto z = f.segment("zero_crossing_rate", comp);
    EXPECT_GE(z.minCoeff(), 0.0);
    EXPECT_LE(z.maxCoeff(), 1.0);
    EXPECT_LT((z - g.segment("zero_crossing_rate", comp)).cwiseAbs().maxCoeff(), 1e-12);
    const auto r = f.segment("rms", comp);
    EXPECT_GE(r.minCoeff(), 0.0);
    EXPECT_LT((2.5 * r - g.segment("rms", comp)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GE(f.segment("spectral_bandwidth", comp).minCoeff(), 0.0);
    EXPECT_LE(f.segment("spectral_rolloff", comp).maxCoeff(), 6000.0);
  }
  const auto chroma = f.segment("chroma_stft", Component::Harmonic);
  EXPECT_GE(chroma.minCoeff(), 0.0);
  EXPECT_LE(chroma.maxCoeff(), 1.0);
  const auto cens = f.segment("chroma_cens", Component::Harmonic);
  for (Eigen::Index t = 0; t < cens.rows(); ++t) {
    const double n = cens.row(t).norm();
    EXPECT_TRUE(std::abs(n - 1.0) < 1e-9 || n == 0.0);
  }
}

TEST(AggregateMusicLevel, Examples) {
  FrameFeatureMatrix f;
  f.rows = Eigen::MatrixXd(3, 1);
  f.rows << 1, 3, 2;
  const auto v = aggregate_music_level(f, 1);
  ASSERT_EQ(v.values.size(), 3);
  EXPECT_DOUBLE_EQ(v.values(0), 2.0);
  EXPECT_NEAR(v.values(1), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(v.values(2), 3.0);

  f.rows = Eigen::MatrixXd::Constant(4, 2, 1.5);
  const auto c = aggregate_music_level(f, 3);
  EXPECT_EQ(c.values.size(), 2 * 5);
  EXPECT_DOUBLE_EQ(c.values(0), 1.5);
  EXPECT_DOUBLE_EQ(c.values(2), 0.0);
  for (Eigen::Index i = 4; i < 10; ++i) EXPECT_DOUBLE_EQ(c.values(i), 1.5);

  try {
    aggregate_music_level(f, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewFrames);
  }
}

TEST(AggregateMusicLevel, MatchesSortOracleAndIgnoresOrder) {
  FrameFeatureMatrix f;
  f.rows = random_matrix(50, 380, 77);
  const auto v = aggregate_music_level(f, 1);
  for (int j = 0; j < 380; ++j) {
    std::vector<double> col(f.rows.col(j).data(), f.rows.col(j).data() + 50);
    std::sort(col.begin(), col.end());
    double mean = 0.0;
    for (double x : col) mean += x;
    mean /= 50;
    double var = 0.0;
    for (double x : col) var += (x - mean) * (x - mean);
    var /= 50;
    EXPECT_NEAR(v.values(j), mean, 1e-12);
    EXPECT_NEAR(v.values(380 + j), var, 1e-12);
    EXPECT_EQ(v.values(760 + j), col.back());
  }

  FrameFeatureMatrix shuffled = f;
  Rng rng(3);
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  for (int i = 0; i < 50; ++i) shuffled.rows.row(i) = f.rows.row(perm[i]);
  const auto w = aggregate_music_level(shuffled, 1);
  EXPECT_LT((v.values - w.values).cwiseAbs().maxCoeff(), 1e-12);
}
