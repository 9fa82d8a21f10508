#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace uptb {

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

// Iterative radix-2 complex FFT of a fixed power-of-two length. Plans are
// immutable and may be shared between threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }

  // In place. `inverse` uses e^{+i...} and does not normalise.
  void transform(std::span<std::complex<double>> data, bool inverse) const;

 private:
  std::size_t n_;
  std::vector<std::size_t> bit_reverse_;
  std::vector<std::complex<double>> twiddles_;
};

// Cached per-thread plan for length n.
const FftPlan& fft_plan(std::size_t n);

}  // namespace uptb
