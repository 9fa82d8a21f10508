#pragma once

// Sequence losses (CTC, RNN-T, attention cross-entropy) and greedy decoders.
//
// Index conventions for a vocabulary of V words: CTC and RNN-T use V + 1
// symbols with blank = V; the attention decoder uses V + 2 symbols with
// SOS = V and EOS = V + 1.

#include <cstddef>
#include <vector>

#include "uptb/autodiff.hpp"

namespace uptb {

class LabelSequence {
 public:
  LabelSequence() = default;
  // Throws ContractError if any token is outside [0, vocab_size).
  LabelSequence(std::vector<int> tokens, int vocab_size);

  const std::vector<int>& tokens() const { return tokens_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  int operator[](std::size_t i) const { return tokens_[i]; }

  int blank() const { return vocab_size_; }
  int sos() const { return vocab_size_; }
  int eos() const { return vocab_size_ + 1; }

  bool operator==(const LabelSequence&) const = default;

 private:
  std::vector<int> tokens_;
  int vocab_size_ = 0;
};

double log_sum_exp(double a, double b);

// Frames needed for a CTC alignment: |labels| plus one per adjacent repeat.
std::size_t ctc_min_frames(const LabelSequence& labels);

// -log P(labels | log_probs) for a T x (V+1) matrix of per-frame
// log-distributions. Throws InfeasibleAlignmentError when T is too short.
Tensor ctc_loss(const Tensor& log_probs, const LabelSequence& labels);

// Per-frame argmax (ties to the lowest index), collapse repeats, drop blanks.
LabelSequence ctc_greedy_decode(const Tensor& log_probs);

// -log P(labels) over the transducer lattice for a T x (U+1) x (V+1) tensor
// of joint log-distributions, U = |labels|.
Tensor rnnt_loss(const Tensor& joint_log_probs, const LabelSequence& labels);

// Step interface driven by rnnt_greedy_decode.
class TransducerStepper {
 public:
  virtual ~TransducerStepper() = default;
  virtual std::size_t num_frames() const = 0;
  virtual int vocab_size() const = 0;
  // Joint log-probabilities over V + 1 symbols at frame t given the labels
  // emitted so far.
  virtual std::vector<double> joint(std::size_t t) = 0;
  // Advances the prediction network after emitting `label`.
  virtual void emit(int label) = 0;
};

// Time-synchronous greedy search emitting at most `max_symbols_per_frame`
// labels per frame. Throws ConfigError if the cap is below 1.
LabelSequence rnnt_greedy_decode(TransducerStepper& stepper,
                                 int max_symbols_per_frame = 4);

// Mean over the L + 1 teacher-forced positions of -log p(target_i), with EOS
// as the final target. `log_probs` is (L+1) x (V+2).
Tensor attention_ce_loss(const Tensor& log_probs, const LabelSequence& target);

}  // namespace uptb
