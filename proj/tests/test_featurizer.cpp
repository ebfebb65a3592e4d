#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bapc/featurizer.hpp"
#include "bapc/rng.hpp"

namespace bapc {
namespace {

AudioBuffer tone(double hz, double seconds, double amplitude = 0.5, int sr = 16000) {
  AudioBuffer a;
  a.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  }
  return a;
}

AudioBuffer noise(std::size_t n, std::uint64_t seed, double amplitude = 0.3) {
  Rng rng(seed);
  AudioBuffer a;
  a.samples.resize(n);
  for (double& s : a.samples) s = uniform(rng, -amplitude, amplitude);
  return a;
}

TEST(Framing, OneSecondGivesNinetyEightFrames) {
  EXPECT_EQ(ms_to_samples(25.0, 16000), 400u);
  EXPECT_EQ(ms_to_samples(10.0, 16000), 160u);
  EXPECT_EQ(frame_count(16000, 400, 160), 98u);
  FeaturizerConfig cfg;
  const auto f = extract_logmel(tone(440, 1.0), cfg, "a");
  EXPECT_EQ(f.num_frames(), 98u);
  EXPECT_EQ(f.dim(), 80u);
}

TEST(Framing, ShortestUtterances) {
  EXPECT_EQ(frame_count(400, 400, 160), 1u);
  try {
    frame_count(399, 400, 160);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "utterance too short");
  }
  AudioBuffer a;
  a.samples.assign(399, 0.1);
  EXPECT_THROW(extract_logmel(a, FeaturizerConfig{}), std::invalid_argument);
}

TEST(Framing, CountMatchesEnumerationOnRandomCases) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto L = 1 + static_cast<std::size_t>(uniform01(rng) * 600);
    const auto S = 1 + static_cast<std::size_t>(uniform01(rng) * 300);
    const auto N = L + static_cast<std::size_t>(uniform01(rng) * 5000);
    std::size_t count = 0;
    for (std::size_t start = 0; start + L <= N; start += S) ++count;
    ASSERT_EQ(frame_count(N, L, S), count) << "N=" << N << " L=" << L << " S=" << S;
  }
}

TEST(Framing, FramesCarryWindowedSamples) {
  AudioBuffer a = noise(1000, 2);
  const Tensor<double> frames = frame_signal(a, 25.0, 10.0, WindowKind::kHann);
  const auto w = window_function(WindowKind::kHann, 400);
  EXPECT_EQ(w.front(), 0.0);
  EXPECT_NEAR(w[200], 1.0, 1e-4);
  ASSERT_EQ(frames.rows(), 4u);
  for (std::size_t i = 0; i < 400; ++i) EXPECT_EQ(frames(2, i), a.samples[320 + i] * w[i]);
}

TEST(LogMel, SilenceHitsTheFloor) {
  AudioBuffer a;
  a.samples.assign(16000, 0.0);
  FeaturizerConfig cfg;
  const Tensor<double> m = logmel_matrix(a, cfg);
  for (double v : m.values()) EXPECT_EQ(v, std::log(cfg.log_floor));
}

TEST(LogMel, ToneEnergyPeaksNearItsFrequency) {
  FeaturizerConfig cfg;
  cfg.preemphasis = false;
  const Tensor<double> m = logmel_matrix(tone(1000.0, 0.5), cfg);
  const Tensor<double> fb = mel_filterbank_matrix(80, 257, 16000, 20.0, 8000.0);
  // The filter responding most to 1 kHz has its peak on the nearest bin.
  const std::size_t row = m.rows() / 2;
  const auto best = static_cast<std::size_t>(std::max_element(m.row(row).begin(), m.row(row).end()) -
                                             m.row(row).begin());
  const auto bin = static_cast<std::size_t>(std::lround(1000.0 / (8000.0 / 256.0)));
  EXPECT_GT(fb(best, bin), 0.5);
  const double center = mel_to_hz(hz_to_mel(20.0) + (hz_to_mel(8000.0) - hz_to_mel(20.0)) *
                                                        static_cast<double>(best + 1) / 81.0);
  EXPECT_NEAR(center, 1000.0, 60.0);
}

TEST(LogMel, DoublingAmplitudeAddsLogFour) {
  FeaturizerConfig cfg;
  AudioBuffer a = noise(8000, 3);
  AudioBuffer b = a;
  for (double& s : b.samples) s *= 2.0;
  const Tensor<double> ma = logmel_matrix(a, cfg);
  const Tensor<double> mb = logmel_matrix(b, cfg);
  const double floor = std::log(cfg.log_floor);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (ma[i] <= floor + 1.0) continue;
    EXPECT_NEAR(mb[i] - ma[i], std::log(4.0), 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, ma.size() / 2);
}

TEST(LogMel, DeterministicAndFloatMatchesDouble) {
  FeaturizerConfig cfg;
  AudioBuffer a = noise(5000, 4);
  const auto f1 = extract_logmel(a, cfg, "x");
  const auto f2 = extract_logmel(a, cfg, "x");
  EXPECT_EQ(f1.frames, f2.frames);
  EXPECT_EQ(f1.frames, logmel_matrix(a, cfg).cast<float>());
}

TEST(LogMel, NormalizationGivesZeroMeanUnitVariance) {
  FeaturizerConfig cfg;
  cfg.normalize = true;
  const Tensor<double> m = logmel_matrix(noise(16000, 5), cfg);
  for (std::size_t d = 0; d < m.cols(); ++d) {
    double mean = 0, var = 0;
    for (std::size_t t = 0; t < m.rows(); ++t) mean += m(t, d);
    mean /= static_cast<double>(m.rows());
    for (std::size_t t = 0; t < m.rows(); ++t) var += (m(t, d) - mean) * (m(t, d) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var / static_cast<double>(m.rows()), 1.0, 1e-9);
  }
}

TEST(Filterbank, TrianglesPeakAtOneAndTile) {
  const Tensor<double> fb = mel_filterbank_matrix(40, 257, 16000, 20.0, 8000.0);
  std::size_t prev_first = 0;
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    auto row = fb.row(m);
    EXPECT_EQ(*std::max_element(row.begin(), row.end()), 1.0);
    for (double v : row) EXPECT_GE(v, 0.0);
    const auto first = static_cast<std::size_t>(std::find_if(row.begin(), row.end(), [](double v) { return v > 0; }) -
                                                row.begin());
    if (m > 0) EXPECT_GE(first, prev_first);
    prev_first = first;
  }
  // Neighbouring filters overlap: every bin between the first and last
  // centers is covered by some filter.
  std::size_t lo = 0, hi = 0;
  for (std::size_t k = 0; k < fb.cols(); ++k) {
    if (fb(0, k) == 1.0) lo = k;
    if (fb(fb.rows() - 1, k) == 1.0) hi = k;
  }
  for (std::size_t k = lo; k <= hi; ++k) {
    double total = 0;
    for (std::size_t m = 0; m < fb.rows(); ++m) total += fb(m, k);
    EXPECT_GT(total, 0.0) << "bin " << k;
  }
}

TEST(Filterbank, SingleFilterAndInfeasibleConfigurations) {
  const Tensor<double> one = mel_filterbank_matrix(1, 257, 16000, 0.0, 8000.0);
  EXPECT_EQ(one.rows(), 1u);
  EXPECT_EQ(*std::max_element(one.values().begin(), one.values().end()), 1.0);
  EXPECT_THROW(mel_filterbank_matrix(10, 257, 16000, 4000.0, 3000.0), std::invalid_argument);
  EXPECT_THROW(mel_filterbank_matrix(10, 257, 16000, 20.0, 9000.0), std::invalid_argument);
  EXPECT_THROW(mel_filterbank_matrix(400, 257, 16000, 20.0, 8000.0), std::invalid_argument);
  EXPECT_THROW(mel_filterbank_matrix(0, 257, 16000, 20.0, 8000.0), std::invalid_argument);
}

TEST(Filterbank, MelScaleRoundTrip) {
  for (double hz : {0.0, 20.0, 700.0, 1000.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
}

TEST(PowerSpectrum, ParsevalOnRandomFrame) {
  Rng rng(6);
  Tensor<double> frame = Tensor<double>::matrix(1, 512);
  double energy = 0;
  for (double& v : frame.values()) {
    v = uniform(rng, -1, 1);
    energy += v * v;
  }
  const Tensor<double> p = power_spectrum(frame, 512);
  // sum over all 512 bins of |X_k|^2 = N * sum x^2; interior bins appear twice.
  double total = p[0] + p[256];
  for (std::size_t k = 1; k < 256; ++k) total += 2.0 * p[k];
  EXPECT_NEAR(total / 512.0, energy, 1e-9 * energy);
  EXPECT_THROW(power_spectrum(frame, 300), std::invalid_argument);
}

TEST(FeaturizerConfig, Validation) {
  FeaturizerConfig cfg;
  cfg.num_filters = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_window("hann"), WindowKind::kHann);
  EXPECT_THROW(parse_window("kaiser"), std::invalid_argument);
  AudioBuffer a;
  a.samples = {0.0, std::nan("")};
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace bapc
