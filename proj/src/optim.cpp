#include "uptb/optim.hpp"

#include <cmath>
#include <string>

#include "uptb/errors.hpp"

namespace uptb {

Adam::Adam(std::size_t size, AdamOptions options)
    : options_(options), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad,
                double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeError("adam: expected " + std::to_string(m_.size()) +
                     " parameters and gradients");
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + options_.epsilon);
  }
}

}  // namespace uptb
