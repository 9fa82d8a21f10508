#include "uptb/recurrent.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace uptb {

namespace {

using Buffer = std::vector<double>;

double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// out[0..n) += row[0..k) * M (k x n)
void accumulate_row_times(const double* row, const double* m, std::size_t k,
                          std::size_t n, double* out) {
  for (std::size_t p = 0; p < k; ++p) {
    const double a = row[p];
    if (a == 0.0) continue;
    const double* mrow = m + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += a * mrow[j];
  }
}

// out[0..k) += row[0..n) * M^T where M is k x n
void accumulate_row_times_transposed(const double* row, const double* m,
                                     std::size_t k, std::size_t n, double* out) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* mrow = m + p * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * mrow[j];
    out[p] += acc;
  }
}

// M (k x n) += a (k) outer b (n)
void accumulate_outer(const double* a, const double* b, std::size_t k,
                      std::size_t n, double* m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double ap = a[p];
    if (ap == 0.0) continue;
    double* mrow = m + p * n;
    for (std::size_t j = 0; j < n; ++j) mrow[j] += ap * b[j];
  }
}

void require_shape(const Tensor& t, const Shape& want, const char* what) {
  if (t.shape() != want) {
    throw ShapeError(std::string("gru_sequence: ") + what + " expected " +
                     shape_str(want) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor gru_sequence(const Tensor& inputs, const Tensor& initial,
                    const GruWeights& w) {
  if (inputs.rank() != 2) {
    throw ShapeError("gru_sequence: inputs must be T x I, got " +
                     shape_str(inputs.shape()));
  }
  if (initial.rank() != 1) {
    throw ShapeError("gru_sequence: initial state must be rank 1, got " +
                     shape_str(initial.shape()));
  }
  const std::size_t steps = inputs.dim(0), in_dim = inputs.dim(1);
  const std::size_t hidden = initial.dim(0), gates = 3 * hidden;
  require_shape(w.input, {in_dim, gates}, "input weights");
  require_shape(w.recurrent, {hidden, gates}, "recurrent weights");
  require_shape(w.input_bias, {gates}, "input bias");
  require_shape(w.recurrent_bias, {gates}, "recurrent bias");

  const double* x = inputs.values().data();
  const double* wx = w.input.values().data();
  const double* wh = w.recurrent.values().data();
  const double* bx = w.input_bias.values().data();
  const double* bh = w.recurrent_bias.values().data();

  // Saved activations: states (T+1) x H, gates r/z/n and the recurrent
  // candidate term hn, each T x H.
  auto states = std::make_shared<Buffer>((steps + 1) * hidden);
  auto saved = std::make_shared<Buffer>(4 * steps * hidden);
  std::copy(initial.values().begin(), initial.values().end(), states->begin());
  Buffer gx(gates), gh(gates);
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy(bx, bx + gates, gx.begin());
    accumulate_row_times(x + t * in_dim, wx, in_dim, gates, gx.data());
    const double* h = states->data() + t * hidden;
    std::copy(bh, bh + gates, gh.begin());
    accumulate_row_times(h, wh, hidden, gates, gh.data());
    double* r = saved->data() + (0 * steps + t) * hidden;
    double* z = saved->data() + (1 * steps + t) * hidden;
    double* n = saved->data() + (2 * steps + t) * hidden;
    double* hn = saved->data() + (3 * steps + t) * hidden;
    double* next = states->data() + (t + 1) * hidden;
    for (std::size_t j = 0; j < hidden; ++j) {
      r[j] = sigmoid_scalar(gx[j] + gh[j]);
      z[j] = sigmoid_scalar(gx[hidden + j] + gh[hidden + j]);
      hn[j] = gh[2 * hidden + j];
      n[j] = std::tanh(gx[2 * hidden + j] + r[j] * hn[j]);
      next[j] = n[j] + z[j] * (h[j] - n[j]);
    }
  }
  Tensor out({steps, hidden},
             std::make_shared<const Buffer>(states->begin() + static_cast<std::ptrdiff_t>(hidden),
                                            states->end()));

  const Tensor all[] = {inputs, initial, w.input, w.recurrent, w.input_bias,
                        w.recurrent_bias};
  Tape* tape = nullptr;
  for (const Tensor& t : all) {
    if (!t.on_tape()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw ContractError("gru_sequence: inputs live on different tapes");
    }
    tape = t.tape();
  }
  if (tape == nullptr) return out;

  int ids[6];
  for (int i = 0; i < 6; ++i) ids[i] = all[i].on_tape() ? all[i].node() : -1;
  auto xb = inputs.buffer();
  auto wxb = w.input.buffer();
  auto whb = w.recurrent.buffer();
  return tape->record(
      std::move(out), all,
      [=](std::span<const double> g, GradientBuffer& grads) {
        const double* whp = whb->data();
        Buffer dgx(steps * gates, 0.0);
        Buffer dwh(hidden * gates, 0.0);
        Buffer dbh(gates, 0.0);
        Buffer dh(hidden, 0.0), dprev(hidden), dgh(gates);
        for (std::size_t t = steps; t-- > 0;) {
          const double* h = states->data() + t * hidden;
          const double* r = saved->data() + (0 * steps + t) * hidden;
          const double* z = saved->data() + (1 * steps + t) * hidden;
          const double* n = saved->data() + (2 * steps + t) * hidden;
          const double* hn = saved->data() + (3 * steps + t) * hidden;
          double* dx = dgx.data() + t * gates;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double dout = dh[j] + g[t * hidden + j];
            const double dn = dout * (1.0 - z[j]);
            const double dz = dout * (h[j] - n[j]);
            dprev[j] = dout * z[j];
            const double dan = dn * (1.0 - n[j] * n[j]);
            const double dar = dan * hn[j] * r[j] * (1.0 - r[j]);
            const double daz = dz * z[j] * (1.0 - z[j]);
            dx[j] = dar;
            dx[hidden + j] = daz;
            dx[2 * hidden + j] = dan;
            dgh[j] = dar;
            dgh[hidden + j] = daz;
            dgh[2 * hidden + j] = dan * r[j];
          }
          accumulate_outer(h, dgh.data(), hidden, gates, dwh.data());
          for (std::size_t k = 0; k < gates; ++k) dbh[k] += dgh[k];
          accumulate_row_times_transposed(dgh.data(), whp, hidden, gates, dprev.data());
          dh.swap(dprev);
        }
        if (ids[0] >= 0) {
          auto gi = grads.at(ids[0]);
          const double* wxp = wxb->data();
          for (std::size_t t = 0; t < steps; ++t) {
            accumulate_row_times_transposed(dgx.data() + t * gates, wxp, in_dim,
                                            gates, gi.data() + t * in_dim);
          }
        }
        if (ids[1] >= 0) {
          auto gi = grads.at(ids[1]);
          for (std::size_t j = 0; j < hidden; ++j) gi[j] += dh[j];
        }
        if (ids[2] >= 0) {
          auto gi = grads.at(ids[2]);
          const double* xp = xb->data();
          for (std::size_t t = 0; t < steps; ++t) {
            accumulate_outer(xp + t * in_dim, dgx.data() + t * gates, in_dim,
                             gates, gi.data());
          }
        }
        if (ids[3] >= 0) {
          auto gi = grads.at(ids[3]);
          for (std::size_t k = 0; k < dwh.size(); ++k) gi[k] += dwh[k];
        }
        if (ids[4] >= 0) {
          auto gi = grads.at(ids[4]);
          for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t k = 0; k < gates; ++k) gi[k] += dgx[t * gates + k];
          }
        }
        if (ids[5] >= 0) {
          auto gi = grads.at(ids[5]);
          for (std::size_t k = 0; k < gates; ++k) gi[k] += dbh[k];
        }
      });
}

}  // namespace uptb
