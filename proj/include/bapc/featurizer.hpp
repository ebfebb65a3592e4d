#pragma once

// Log-mel filterbank front end: pre-emphasis, framing, windowing, power
// spectrum, triangular mel filters, log with an absolute floor.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "bapc/tensor.hpp"

namespace bapc {

struct AudioBuffer {
  std::vector<double> samples;  // nominally in [-1, 1]
  int sample_rate = 16000;

  void validate() const;
  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct FeatureSequence {
  std::string utterance_id;
  Tensor<float> frames;  // T x D
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

enum class WindowKind { kHamming, kHann, kRectangular };

std::string_view to_string(WindowKind kind);
WindowKind parse_window(std::string_view text);

struct FeaturizerConfig {
  int num_filters = 80;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  double f_low = 20.0;
  double f_high = 0.0;  // 0 means Nyquist
  WindowKind window = WindowKind::kHamming;
  bool preemphasis = true;
  double preemphasis_coeff = 0.97;
  // Per-utterance mean/variance normalization of each feature dimension.
  bool normalize = false;
  // Absolute floor on filterbank power, for samples scaled to [-1, 1].
  double log_floor = 1e-10;

  void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Milliseconds to a whole number of samples (rounded to nearest).
std::size_t ms_to_samples(double ms, int sample_rate);

// 1 + floor((n - length) / shift); throws "utterance too short" if n < length.
std::size_t frame_count(std::size_t num_samples, std::size_t frame_length, std::size_t frame_shift);

std::vector<double> window_function(WindowKind kind, std::size_t length);

// Frames x frame_length matrix, each frame multiplied by the window.
Tensor<double> frame_signal(const AudioBuffer& audio, double frame_length_ms, double frame_shift_ms,
                            WindowKind window = WindowKind::kHamming);

// Smallest power of two >= n.
std::size_t fft_size_for(std::size_t n);

// |FFT|^2 of each row, zero-padded to nfft; nfft / 2 + 1 columns.
Tensor<double> power_spectrum(const Tensor<double>& frames, std::size_t nfft);

// num_filters x fft_bins triangular filters on mel-spaced centers, each row
// scaled so its maximum is 1. fft_bins = nfft / 2 + 1.
Tensor<double> mel_filterbank_matrix(int num_filters, std::size_t fft_bins, int sample_rate, double f_low,
                                     double f_high);

// Full pipeline in double precision; T x num_filters.
Tensor<double> logmel_matrix(const AudioBuffer& audio, const FeaturizerConfig& config);

FeatureSequence extract_logmel(const AudioBuffer& audio, const FeaturizerConfig& config,
                               std::string utterance_id = {});

}  // namespace bapc
