#pragma once

#include "uptb/autodiff.hpp"

namespace uptb {

// Weights of one gated recurrent layer. Gate blocks along the 3H axis are
// ordered [reset, update, candidate].
struct GruWeights {
  Tensor input;         // I x 3H
  Tensor recurrent;     // H x 3H
  Tensor input_bias;    // 3H
  Tensor recurrent_bias;  // 3H
};

// Runs the layer over the rows of `inputs` (T x I) from state `initial`
// (H, rank 1) and returns every hidden state (T x H). Per step:
//   r = sigmoid(xr + hr), z = sigmoid(xz + hz), n = tanh(xn + r * hn),
//   h' = n + z * (h - n)
// where x* = x W_input + b_input and h* = h W_recurrent + b_recurrent.
// Recorded as a single tape node with hand-derived backpropagation through
// time.
Tensor gru_sequence(const Tensor& inputs, const Tensor& initial,
                    const GruWeights& w);

}  // namespace uptb
