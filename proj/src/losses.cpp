#include "uptb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace uptb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

}  // namespace

LabelSequence::LabelSequence(std::vector<int> tokens, int vocab_size)
    : tokens_(std::move(tokens)), vocab_size_(vocab_size) {
  if (vocab_size_ < 1) throw ContractError("vocabulary size must be positive");
  for (int t : tokens_) {
    if (t < 0 || t >= vocab_size_) {
      throw ContractError("token " + std::to_string(t) +
                          " outside vocabulary of size " +
                          std::to_string(vocab_size_));
    }
  }
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::size_t ctc_min_frames(const LabelSequence& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// CTC

Tensor ctc_loss(const Tensor& log_probs, const LabelSequence& labels) {
  const auto symbols = static_cast<std::size_t>(labels.vocab_size()) + 1;
  if (log_probs.rank() != 2 || log_probs.dim(1) != symbols) {
    throw ShapeError("ctc_loss: expected T x " + std::to_string(symbols) +
                     " log-probs, got " + shape_str(log_probs.shape()));
  }
  const std::size_t frames = log_probs.dim(0);
  if (frames < ctc_min_frames(labels)) {
    throw InfeasibleAlignmentError(
        "ctc_loss: " + std::to_string(frames) + " frames cannot align " +
        std::to_string(labels.size()) + " labels (need " +
        std::to_string(ctc_min_frames(labels)) + ")");
  }
  const int blank = labels.blank();
  // Extended sequence: blank, y1, blank, y2, ..., blank.
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  const auto lp = log_probs.values();
  auto at = [&](std::size_t t, std::size_t s) {
    return lp[t * symbols + static_cast<std::size_t>(ext[s])];
  };

  auto alpha = std::make_shared<std::vector<double>>(frames * states, kNegInf);
  auto& a = *alpha;
  a[0] = at(0, 0);
  if (states > 1) a[1] = at(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = a[(t - 1) * states + s];
      if (s >= 1) acc = log_sum_exp(acc, a[(t - 1) * states + s - 1]);
      if (can_skip(s)) acc = log_sum_exp(acc, a[(t - 1) * states + s - 2]);
      if (acc != kNegInf) a[t * states + s] = acc + at(t, s);
    }
  }
  double log_p = a[(frames - 1) * states + states - 1];
  if (states > 1) log_p = log_sum_exp(log_p, a[(frames - 1) * states + states - 2]);
  if (!std::isfinite(log_p)) {
    throw DomainError("ctc_loss: label sequence has zero probability");
  }

  Tensor loss = Tensor::scalar(-log_p);
  if (!log_probs.on_tape()) return loss;
  const int id = log_probs.node();
  auto lp_buf = log_probs.buffer();
  const Tensor inputs[] = {log_probs};
  return log_probs.tape()->record(
      std::move(loss), inputs,
      [id, lp_buf, alpha, ext, frames, states, symbols, log_p, blank](
          std::span<const double> g, GradientBuffer& gb) {
        const auto& lpv = *lp_buf;
        const auto& av = *alpha;
        auto lpa = [&](std::size_t t, std::size_t s) {
          return lpv[t * symbols + static_cast<std::size_t>(ext[s])];
        };
        auto skip = [&](std::size_t s) {
          return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
        };
        // beta excludes the emission at its own frame.
        std::vector<double> beta(frames * states, kNegInf);
        beta[(frames - 1) * states + states - 1] = 0.0;
        if (states > 1) beta[(frames - 1) * states + states - 2] = 0.0;
        for (std::size_t t = frames - 1; t-- > 0;) {
          for (std::size_t s = 0; s < states; ++s) {
            double acc = beta[(t + 1) * states + s] + lpa(t + 1, s);
            if (s + 1 < states) {
              acc = log_sum_exp(acc, beta[(t + 1) * states + s + 1] + lpa(t + 1, s + 1));
            }
            if (s + 2 < states && skip(s + 2)) {
              acc = log_sum_exp(acc, beta[(t + 1) * states + s + 2] + lpa(t + 1, s + 2));
            }
            beta[t * states + s] = acc;
          }
        }
        auto grad = gb.at(id);
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t s = 0; s < states; ++s) {
            const double occ = av[t * states + s] + beta[t * states + s];
            if (occ == kNegInf) continue;
            grad[t * symbols + static_cast<std::size_t>(ext[s])] -=
                g[0] * std::exp(occ - log_p);
          }
        }
      });
}

LabelSequence ctc_greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 2) {
    throw ShapeError("ctc_greedy_decode: expected T x (V+1), got " +
                     shape_str(log_probs.shape()));
  }
  const std::size_t symbols = log_probs.dim(1);
  const int blank = static_cast<int>(symbols) - 1;
  std::vector<int> out;
  int prev = -1;
  const auto lp = log_probs.values();
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    const int best = static_cast<int>(argmax_row(lp.subspan(t * symbols, symbols)));
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return LabelSequence(std::move(out), blank);
}

// ---------------------------------------------------------------------------
// RNN-T

Tensor rnnt_loss(const Tensor& joint_log_probs, const LabelSequence& labels) {
  const std::size_t symbols = static_cast<std::size_t>(labels.vocab_size()) + 1;
  const std::size_t positions = labels.size() + 1;
  if (joint_log_probs.rank() != 3 || joint_log_probs.dim(1) != positions ||
      joint_log_probs.dim(2) != symbols) {
    throw ShapeError("rnnt_loss: expected T x " + std::to_string(positions) +
                     " x " + std::to_string(symbols) + " joint log-probs, got " +
                     shape_str(joint_log_probs.shape()));
  }
  const std::size_t frames = joint_log_probs.dim(0);
  const std::size_t blank = symbols - 1;
  const std::size_t last_u = positions - 1;
  const std::vector<int> y = labels.tokens();
  const auto lp = joint_log_probs.values();
  auto at = [&](std::size_t t, std::size_t u, std::size_t k) {
    return lp[(t * positions + u) * symbols + k];
  };

  auto alpha = std::make_shared<std::vector<double>>(frames * positions, kNegInf);
  auto& a = *alpha;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < positions; ++u) {
      if (t == 0 && u == 0) {
        a[0] = 0.0;
        continue;
      }
      double acc = kNegInf;
      if (t > 0) acc = a[(t - 1) * positions + u] + at(t - 1, u, blank);
      if (u > 0) {
        acc = log_sum_exp(acc, a[t * positions + u - 1] +
                                   at(t, u - 1, static_cast<std::size_t>(y[u - 1])));
      }
      a[t * positions + u] = acc;
    }
  }
  const double log_p = a[(frames - 1) * positions + last_u] + at(frames - 1, last_u, blank);
  if (!std::isfinite(log_p)) {
    throw DomainError("rnnt_loss: label sequence has zero probability");
  }

  Tensor loss = Tensor::scalar(-log_p);
  if (!joint_log_probs.on_tape()) return loss;
  const int id = joint_log_probs.node();
  auto lp_buf = joint_log_probs.buffer();
  const Tensor inputs[] = {joint_log_probs};
  return joint_log_probs.tape()->record(
      std::move(loss), inputs,
      [id, lp_buf, alpha, y, frames, positions, symbols, blank, last_u, log_p](
          std::span<const double> g, GradientBuffer& gb) {
        const auto& lpv = *lp_buf;
        const auto& av = *alpha;
        auto lpa = [&](std::size_t t, std::size_t u, std::size_t k) {
          return lpv[(t * positions + u) * symbols + k];
        };
        // beta includes every emission from (t, u) to the end.
        std::vector<double> beta(frames * positions, kNegInf);
        for (std::size_t t = frames; t-- > 0;) {
          for (std::size_t u = positions; u-- > 0;) {
            double acc = kNegInf;
            if (t == frames - 1 && u == last_u) {
              acc = lpa(t, u, blank);
            } else {
              if (t + 1 < frames) acc = lpa(t, u, blank) + beta[(t + 1) * positions + u];
              if (u < last_u) {
                acc = log_sum_exp(acc, lpa(t, u, static_cast<std::size_t>(y[u])) +
                                           beta[t * positions + u + 1]);
              }
            }
            beta[t * positions + u] = acc;
          }
        }
        auto grad = gb.at(id);
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t u = 0; u < positions; ++u) {
            const double head = av[t * positions + u] - log_p;
            const std::size_t base = (t * positions + u) * symbols;
            if (t + 1 < frames) {
              grad[base + blank] -= g[0] * std::exp(head + lpa(t, u, blank) +
                                                    beta[(t + 1) * positions + u]);
            } else if (u == last_u) {
              grad[base + blank] -= g[0] * std::exp(head + lpa(t, u, blank));
            }
            if (u < last_u) {
              const auto k = static_cast<std::size_t>(y[u]);
              grad[base + k] -= g[0] * std::exp(head + lpa(t, u, k) +
                                                beta[t * positions + u + 1]);
            }
          }
        }
      });
}

LabelSequence rnnt_greedy_decode(TransducerStepper& stepper,
                                 int max_symbols_per_frame) {
  if (max_symbols_per_frame < 1) {
    throw ConfigError("max symbols per frame must be at least 1");
  }
  const int blank = stepper.vocab_size();
  std::vector<int> out;
  for (std::size_t t = 0; t < stepper.num_frames(); ++t) {
    for (int n = 0; n < max_symbols_per_frame; ++n) {
      const std::vector<double> lp = stepper.joint(t);
      const int best = static_cast<int>(argmax_row(lp));
      if (best == blank) break;
      out.push_back(best);
      stepper.emit(best);
    }
  }
  return LabelSequence(std::move(out), blank);
}

// ---------------------------------------------------------------------------
// Attention cross-entropy

Tensor attention_ce_loss(const Tensor& log_probs, const LabelSequence& target) {
  const std::size_t positions = target.size() + 1;
  const std::size_t symbols = static_cast<std::size_t>(target.vocab_size()) + 2;
  if (log_probs.rank() != 2 || log_probs.dim(0) != positions ||
      log_probs.dim(1) != symbols) {
    throw ContractError("attention_ce_loss: expected " + std::to_string(positions) +
                        " x " + std::to_string(symbols) + " log-probs, got " +
                        shape_str(log_probs.shape()));
  }
  std::vector<std::size_t> picks(positions);
  for (std::size_t i = 0; i < positions; ++i) {
    const int tok = i < target.size() ? target[i] : target.eos();
    picks[i] = i * symbols + static_cast<std::size_t>(tok);
  }
  const Tensor flat = reshape(log_probs, {positions * symbols});
  return scalar_mul(sum(gather(flat, picks)), -1.0 / static_cast<double>(positions));
}

}  // namespace uptb
