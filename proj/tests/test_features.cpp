#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "uptb/features.hpp"

using namespace uptb;

namespace {

FeatureConfig fast_config() {
  FeatureConfig c;
  c.sample_rate = 4000;
  c.num_mels = 20;
  return c;
}

// Independent construction: mel scale via the natural-log form and triangles
// via max(0, min(rise, fall)).
std::vector<double> oracle_filterbank(int sr, int fft, int mels) {
  auto to_mel = [](double hz) { return 1127.0 * std::log1p(hz / 700.0); };
  auto to_hz = [](double mel) { return 700.0 * std::expm1(mel / 1127.0); };
  const int bins = fft / 2 + 1;
  const double top = to_mel(sr / 2.0);
  std::vector<double> out(static_cast<std::size_t>(mels * bins));
  for (int m = 0; m < mels; ++m) {
    const double l = to_hz(top * m / (mels + 1));
    const double c = to_hz(top * (m + 1) / (mels + 1));
    const double r = to_hz(top * (m + 2) / (mels + 1));
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / fft;
      out[static_cast<std::size_t>(m * bins + k)] =
          std::max(0.0, std::min((f - l) / (c - l), (r - f) / (r - c)));
    }
  }
  return out;
}

Tensor random_wave(std::mt19937_64& rng, std::size_t n, double amp) {
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return Tensor::vector(std::move(v));
}

}  // namespace

TEST_CASE("tiny filterbank rows are nonempty") {
  FeatureConfig c;
  c.num_mels = 2;
  c.fft_size = 8;
  const Tensor m = mel_filterbank_matrix(c);
  CHECK(m.shape() == Shape{2, 5});
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) s += m.at(r, k);
    CHECK(s > 0.0);
  }
}

TEST_CASE("filterbank is nonnegative and each bin meets at most two filters") {
  for (int mels : {2, 20, 40, 80}) {
    FeatureConfig c;
    c.num_mels = mels;
    const Tensor m = mel_filterbank_matrix(c);
    for (double v : m.values()) CHECK(v >= 0.0);
    for (std::size_t k = 0; k < m.dim(1); ++k) {
      int covering = 0;
      for (std::size_t r = 0; r < m.dim(0); ++r) covering += m.at(r, k) > 0;
      CHECK(covering <= 2);
    }
  }
}

TEST_CASE("filterbank matches an independent construction") {
  FeatureConfig c;
  c.num_mels = 20;
  c.fft_size = 256;
  const Tensor m = mel_filterbank_matrix(c);
  const auto ref = oracle_filterbank(16000, 256, 20);
  REQUIRE(ref.size() == m.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(m[i] - ref[i]) <= 1e-9);
  }
}

TEST_CASE("too many mels for the FFT resolution is a config error") {
  FeatureConfig c;
  c.sample_rate = 4000;
  c.num_mels = 60;
  c.fft_size = 64;
  CHECK_THROWS_AS(mel_filterbank_matrix(c), ConfigError);
}

TEST_CASE("invalid configs are rejected") {
  FeatureConfig c;
  c.hop_ms = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FeatureConfig{};
  c.fft_size = 256;  // window is 400 samples
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FeatureConfig{};
  c.fft_size = 500;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FeatureConfig{};
  c.num_mels = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(FeatureConfig{}.validate());
}

TEST_CASE("silence gives the log floor everywhere") {
  const FeatureConfig c = fast_config();
  const Tensor f =
      extract_features(Tensor::zeros({c.window_samples()}), c);
  CHECK(f.shape() == Shape{1, 20});
  for (double v : f.values()) CHECK(v == doctest::Approx(std::log(1e-6)));
}

TEST_CASE("frame count follows floor((len - window) / hop) + 1") {
  const FeatureConfig c = fast_config();
  const std::size_t w = c.window_samples(), h = c.hop_samples();
  CHECK(extract_features(Tensor::zeros({w + h}), c).dim(0) == 2);
  CHECK(extract_features(Tensor::zeros({w + h - 1}), c).dim(0) == 1);
  CHECK(num_frames(w + 7 * h + 3, c) == 8);
  CHECK_THROWS_AS(extract_features(Tensor::zeros({w - 1}), c), LengthError);
}

TEST_CASE("a 440 Hz tone peaks in the mel channel centred nearest 440 Hz") {
  FeatureConfig c;  // 16 kHz, 80 mels
  const std::size_t n = c.window_samples();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = 32767.0 * std::sin(2 * M_PI * 440.0 * i / c.sample_rate);
  }
  const Tensor f = extract_features(Tensor::vector(v), c);
  const auto centers = mel_center_frequencies(c);
  std::size_t nearest = 0;
  for (std::size_t m = 0; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 440.0) < std::abs(centers[nearest] - 440.0)) nearest = m;
  }
  const auto row = f.values();
  const auto argmax = static_cast<std::size_t>(
      std::max_element(row.begin(), row.end()) - row.begin());
  CHECK(argmax == nearest);
}

TEST_CASE("feature gradient reaches the waveform") {
  const FeatureConfig c = fast_config();
  std::mt19937_64 rng(5);
  const std::size_t n = c.window_samples() + 2 * c.hop_samples();
  const Tensor x = random_wave(rng, n, 3000.0);
  const double err = finite_difference_check(
      [&](const Tensor& w) { return sum(extract_features(w, c)); }, x, 1e-2);
  CHECK(err <= 1e-4);
}

TEST_CASE("shifting by one hop shifts features by one frame") {
  const FeatureConfig c = fast_config();
  std::mt19937_64 rng(8);
  const std::size_t n = c.window_samples() + 10 * c.hop_samples();
  const Tensor x = random_wave(rng, n, 8000.0);
  const Tensor lead = random_wave(rng, c.hop_samples(), 8000.0);
  const FeatureExtractor fx(c);
  const Tensor a = fx(x);
  const Tensor b = fx(concat({lead, x}, 0));
  REQUIRE(b.dim(0) == a.dim(0) + 1);
  for (std::size_t f = 0; f < a.dim(0); ++f) {
    for (std::size_t m = 0; m < a.dim(1); ++m) {
      CHECK(std::abs(b.at(f + 1, m) - a.at(f, m)) <= 1e-9);
    }
  }
}

TEST_CASE("prepended samples never contaminate frames that see only the utterance") {
  const FeatureConfig c = fast_config();
  std::mt19937_64 rng(9);
  const std::size_t hop = c.hop_samples();
  const Tensor x = random_wave(rng, c.window_samples() + 12 * hop, 9000.0);
  const Tensor delta = random_wave(rng, 5 * hop, 32000.0);
  const FeatureExtractor fx(c);
  const Tensor clean = fx(x);
  const Tensor mixed = fx(concat({delta, x}, 0));
  const std::size_t offset = 5;
  for (std::size_t f = 0; f < clean.dim(0); ++f) {
    for (std::size_t m = 0; m < clean.dim(1); ++m) {
      CHECK(mixed.at(f + offset, m) == clean.at(f, m));
    }
  }
}
