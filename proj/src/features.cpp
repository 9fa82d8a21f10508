#include "uptb/features.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "uptb/fft.hpp"

namespace uptb {

namespace {

constexpr double kSampleScale = 1.0 / 32768.0;

std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::lround(ms * sample_rate / 1000.0));
}

}  // namespace

std::size_t FeatureConfig::window_samples() const {
  return ms_to_samples(window_ms, sample_rate);
}

std::size_t FeatureConfig::hop_samples() const {
  return ms_to_samples(hop_ms, sample_rate);
}

std::size_t FeatureConfig::fft_points() const {
  if (fft_size > 0) return static_cast<std::size_t>(fft_size);
  return next_power_of_two(window_samples());
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (window_samples() == 0 || hop_samples() == 0) {
    throw ConfigError("window and hop must each span at least one sample");
  }
  if (hop_ms > window_ms) throw ConfigError("hop must not exceed the window");
  if (num_mels < 2) throw ConfigError("num_mels must be at least 2");
  if (!is_power_of_two(fft_points())) {
    throw ConfigError("fft_size must be a power of two");
  }
  if (fft_points() < window_samples()) {
    throw ConfigError("fft_size " + std::to_string(fft_points()) +
                      " is smaller than the window (" +
                      std::to_string(window_samples()) + " samples)");
  }
  if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

namespace {

// num_mels + 2 band edges equally spaced on the mel scale.
std::vector<double> band_edges_hz(const FeatureConfig& config) {
  const int m = config.num_mels;
  const double top = hz_to_mel(config.sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(m) + 2);
  for (int i = 0; i < m + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (m + 1));
  }
  return edges;
}

void validate_filterbank(const FeatureConfig& config) {
  if (config.sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (config.num_mels < 2) throw ConfigError("num_mels must be at least 2");
  if (!is_power_of_two(config.fft_points())) {
    throw ConfigError("fft_size must be a power of two");
  }
}

}  // namespace

std::vector<double> mel_center_frequencies(const FeatureConfig& config) {
  validate_filterbank(config);
  const auto edges = band_edges_hz(config);
  return {edges.begin() + 1, edges.end() - 1};
}

Tensor mel_filterbank_matrix(const FeatureConfig& config) {
  validate_filterbank(config);
  const auto edges = band_edges_hz(config);
  const std::size_t mels = static_cast<std::size_t>(config.num_mels);
  const std::size_t bins = config.num_bins();
  const double bin_hz =
      static_cast<double>(config.sample_rate) / static_cast<double>(config.fft_points());
  std::vector<double> w(mels * bins, 0.0);
  for (std::size_t m = 0; m < mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double v = 0.0;
      if (f > left && f <= center) {
        v = (f - left) / (center - left);
      } else if (f > center && f < right) {
        v = (right - f) / (right - center);
      }
      w[m * bins + k] = v;
      row_sum += v;
    }
    if (row_sum <= 0.0) {
      throw ConfigError("mel filter " + std::to_string(m) +
                        " covers no FFT bin; reduce num_mels or raise fft_size");
    }
  }
  return Tensor::matrix(mels, bins, std::move(w));
}

std::size_t num_frames(std::size_t num_samples, const FeatureConfig& config) {
  const std::size_t window = config.window_samples();
  if (num_samples < window) return 0;
  return (num_samples - window) / config.hop_samples() + 1;
}

FeatureExtractor::FeatureExtractor(const FeatureConfig& config)
    : config_(config),
      mel_transposed_(transpose(mel_filterbank_matrix(config))) {
  config_.validate();
  const std::size_t n = config_.window_samples();
  window_.resize(n);
  // periodic Hann
  for (std::size_t i = 0; i < n; ++i) {
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                      static_cast<double>(i) /
                                      static_cast<double>(n));
  }
}

Tensor FeatureExtractor::operator()(const Tensor& waveform) const {
  if (waveform.rank() != 1) {
    throw ShapeError("extract_features: waveform must be 1-D, got " +
                     shape_str(waveform.shape()));
  }
  const std::size_t len = waveform.dim(0);
  const std::size_t window = config_.window_samples();
  const std::size_t hop = config_.hop_samples();
  const std::size_t fft = config_.fft_points();
  const std::size_t frames = num_frames(len, config_);
  if (frames == 0) {
    throw LengthError("waveform of " + std::to_string(len) +
                      " samples is shorter than one " + std::to_string(window) +
                      "-sample window");
  }
  std::vector<std::size_t> index(frames * window);
  std::vector<double> hann(frames * window);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < window; ++i) {
      index[f * window + i] = f * hop + i;
      hann[f * window + i] = window_[i] * kSampleScale;
    }
  }
  Tensor framed = reshape(gather(waveform, index), {frames, window});
  framed = mul(framed, Tensor::matrix(frames, window, std::move(hann)));
  if (fft > window) framed = pad_zeros(framed, 1, 0, fft - window);
  const Tensor energies = matmul(power_spectrum(framed), mel_transposed_);
  return log(add(energies, Tensor::filled(energies.shape(), config_.log_floor)));
}

Tensor extract_features(const Tensor& waveform, const FeatureConfig& config) {
  return FeatureExtractor(config)(waveform);
}

}  // namespace uptb
