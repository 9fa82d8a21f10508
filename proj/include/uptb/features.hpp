#pragma once

// Differentiable log-mel filterbank front end. Waveforms are in raw 16-bit
// sample units; normalisation to [-1, 1] happens here.

#include <cstddef>
#include <vector>

#include "uptb/autodiff.hpp"

namespace uptb {

struct FeatureConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int num_mels = 80;
  // 0 selects the smallest power of two holding one window.
  int fft_size = 0;
  double log_floor = 1e-6;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_points() const;
  std::size_t num_bins() const { return fft_points() / 2 + 1; }

  // Throws ConfigError.
  void validate() const;

  bool operator==(const FeatureConfig&) const = default;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Centre frequency (Hz) of every mel filter.
std::vector<double> mel_center_frequencies(const FeatureConfig& config);

// num_mels x (fft/2 + 1) triangular filters spanning 0 Hz to Nyquist.
Tensor mel_filterbank_matrix(const FeatureConfig& config);

// floor((len - window) / hop) + 1; zero when len < window.
std::size_t num_frames(std::size_t num_samples, const FeatureConfig& config);

// Holds the precomputed window and filterbank for one configuration.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const FeatureConfig& config);

  const FeatureConfig& config() const { return config_; }

  // frames x num_mels log-mel energies. Differentiable with respect to the
  // waveform when it lives on a tape. Throws LengthError when shorter than
  // one window.
  Tensor operator()(const Tensor& waveform) const;

 private:
  FeatureConfig config_;
  std::vector<double> window_;
  Tensor mel_transposed_;
};

Tensor extract_features(const Tensor& waveform, const FeatureConfig& config);

}  // namespace uptb
