#include "bapc/featurizer.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "bapc/kernels.hpp"

namespace bapc {

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffers {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit FftwBuffers(std::size_t nfft) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    in = fftw_alloc_real(nfft);
    out = fftw_alloc_complex(nfft / 2 + 1);
    if (in == nullptr || out == nullptr) throw std::bad_alloc();
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in, out, FFTW_ESTIMATE);
    if (plan == nullptr) throw std::runtime_error("fftw: could not create plan");
  }
  ~FftwBuffers() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    if (plan != nullptr) fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwBuffers(const FftwBuffers&) = delete;
  FftwBuffers& operator=(const FftwBuffers&) = delete;
};

}  // namespace

void AudioBuffer::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("audio: sample rate must be positive");
  for (double s : samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("audio: non-finite sample");
  }
}

std::string_view to_string(WindowKind kind) {
  switch (kind) {
    case WindowKind::kHamming:
      return "hamming";
    case WindowKind::kHann:
      return "hann";
    case WindowKind::kRectangular:
      return "rectangular";
  }
  return "unknown";
}

WindowKind parse_window(std::string_view text) {
  if (text == "hamming") return WindowKind::kHamming;
  if (text == "hann") return WindowKind::kHann;
  if (text == "rectangular") return WindowKind::kRectangular;
  throw std::invalid_argument("unknown window '" + std::string(text) + "'");
}

void FeaturizerConfig::validate() const {
  if (num_filters < 1) throw std::invalid_argument("featurizer: num_filters must be >= 1");
  if (!(frame_length_ms > 0.0) || !(frame_shift_ms > 0.0)) {
    throw std::invalid_argument("featurizer: frame length and shift must be positive");
  }
  if (f_low < 0.0) throw std::invalid_argument("featurizer: f_low must be >= 0");
  if (!(log_floor > 0.0)) throw std::invalid_argument("featurizer: log floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

std::size_t frame_count(std::size_t num_samples, std::size_t frame_length, std::size_t frame_shift) {
  if (frame_length == 0 || frame_shift == 0) throw std::invalid_argument("framing: zero frame length or shift");
  if (num_samples < frame_length) throw std::invalid_argument("utterance too short");
  return 1 + (num_samples - frame_length) / frame_shift;
}

std::vector<double> window_function(WindowKind kind, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (length < 2 || kind == WindowKind::kRectangular) return w;
  const double denom = static_cast<double>(length - 1);
  for (std::size_t i = 0; i < length; ++i) {
    const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / denom);
    w[i] = kind == WindowKind::kHamming ? 0.54 - 0.46 * c : 0.5 - 0.5 * c;
  }
  return w;
}

Tensor<double> frame_signal(const AudioBuffer& audio, double frame_length_ms, double frame_shift_ms,
                            WindowKind window) {
  audio.validate();
  const std::size_t len = ms_to_samples(frame_length_ms, audio.sample_rate);
  const std::size_t shift = ms_to_samples(frame_shift_ms, audio.sample_rate);
  const std::size_t n = frame_count(audio.samples.size(), len, shift);
  const std::vector<double> w = window_function(window, len);
  Tensor<double> frames = Tensor<double>::matrix(n, len);
  for (std::size_t t = 0; t < n; ++t) {
    const double* src = audio.samples.data() + t * shift;
    for (std::size_t i = 0; i < len; ++i) frames(t, i) = src[i] * w[i];
  }
  return frames;
}

std::size_t fft_size_for(std::size_t n) {
  std::size_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  return nfft;
}

Tensor<double> power_spectrum(const Tensor<double>& frames, std::size_t nfft) {
  if (nfft < frames.cols() || nfft < 2 || (nfft & (nfft - 1)) != 0) {
    throw std::invalid_argument("power spectrum: nfft must be a power of two >= frame length");
  }
  const std::size_t bins = nfft / 2 + 1;
  Tensor<double> out = Tensor<double>::matrix(frames.rows(), bins);
  FftwBuffers fft(nfft);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    std::fill(fft.in, fft.in + nfft, 0.0);
    std::copy(frames.row(t).begin(), frames.row(t).end(), fft.in);
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < bins; ++k) {
      out(t, k) = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    }
  }
  return out;
}

Tensor<double> mel_filterbank_matrix(int num_filters, std::size_t fft_bins, int sample_rate, double f_low,
                                     double f_high) {
  if (num_filters < 1) throw std::invalid_argument("mel filterbank: num_filters must be >= 1");
  if (fft_bins < 2) throw std::invalid_argument("mel filterbank: need at least 2 fft bins");
  if (sample_rate <= 0) throw std::invalid_argument("mel filterbank: sample rate must be positive");
  const double nyquist = sample_rate / 2.0;
  if (!(f_low >= 0.0 && f_low < f_high && f_high <= nyquist)) {
    throw std::invalid_argument("mel filterbank: infeasible band edges (need 0 <= f_low < f_high <= " +
                                std::to_string(nyquist) + " Hz)");
  }
  const auto nf = static_cast<std::size_t>(num_filters);
  const double mel_lo = hz_to_mel(f_low);
  const double mel_hi = hz_to_mel(f_high);
  std::vector<double> edges(nf + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(nf + 1));
  }
  const double bin_hz = nyquist / static_cast<double>(fft_bins - 1);

  Tensor<double> fb = Tensor<double>::matrix(nf, fft_bins);
  for (std::size_t m = 0; m < nf; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    double peak = 0.0;
    for (std::size_t k = 0; k < fft_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
      peak = std::max(peak, w);
    }
    if (!(peak > 0.0)) {
      throw std::invalid_argument("mel filterbank: filter " + std::to_string(m) +
                                  " covers no fft bin; use fewer filters or a larger fft");
    }
    for (double& v : fb.row(m)) v /= peak;
  }
  return fb;
}

Tensor<double> logmel_matrix(const AudioBuffer& audio, const FeaturizerConfig& config) {
  config.validate();
  audio.validate();
  AudioBuffer emphasized = audio;
  if (config.preemphasis) {
    for (std::size_t i = audio.samples.size(); i-- > 1;) {
      emphasized.samples[i] = audio.samples[i] - config.preemphasis_coeff * audio.samples[i - 1];
    }
  }
  const Tensor<double> frames = frame_signal(emphasized, config.frame_length_ms, config.frame_shift_ms, config.window);
  const std::size_t nfft = fft_size_for(frames.cols());
  const Tensor<double> power = power_spectrum(frames, nfft);
  const double f_high = config.f_high > 0.0 ? config.f_high : audio.sample_rate / 2.0;
  const Tensor<double> fb = mel_filterbank_matrix(config.num_filters, power.cols(), audio.sample_rate, config.f_low, f_high);

  const std::size_t T = frames.rows();
  const std::size_t M = fb.rows();
  Tensor<double> out = Tensor<double>::matrix(T, M);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t m = 0; m < M; ++m) {
      const double e = kernels::dot(fb.row(m), power.row(t));
      out(t, m) = std::log(std::max(config.log_floor, e));
    }
  }
  if (config.normalize) {
    for (std::size_t m = 0; m < M; ++m) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += out(t, m);
      mean /= static_cast<double>(T);
      double var = 0.0;
      for (std::size_t t = 0; t < T; ++t) var += (out(t, m) - mean) * (out(t, m) - mean);
      var /= static_cast<double>(T);
      const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
      for (std::size_t t = 0; t < T; ++t) out(t, m) = (out(t, m) - mean) * inv;
    }
  }
  return out;
}

FeatureSequence extract_logmel(const AudioBuffer& audio, const FeaturizerConfig& config, std::string utterance_id) {
  FeatureSequence seq;
  seq.utterance_id = std::move(utterance_id);
  seq.frames = logmel_matrix(audio, config).cast<float>();
  seq.frame_shift_ms = config.frame_shift_ms;
  seq.frame_length_ms = config.frame_length_ms;
  return seq;
}

}  // namespace bapc
