#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace uptb {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction over one flat parameter block.
class Adam {
 public:
  Adam(std::size_t size, AdamOptions options = {});

  // params -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(std::span<double> params, std::span<const double> grad, double lr);

  std::size_t steps_taken() const { return step_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t step_ = 0;
};

}  // namespace uptb
