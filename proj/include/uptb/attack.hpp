#pragma once

// Perturbation operators and the projected-Adam solver for targeted
// universal, per-utterance and untargeted attacks.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uptb/autodiff.hpp"
#include "uptb/dataio.hpp"
#include "uptb/losses.hpp"
#include "uptb/models.hpp"

namespace uptb {

enum class PerturbationMode { additive, prepend };

std::string mode_name(PerturbationMode mode);
PerturbationMode parse_mode(std::string_view name);  // throws ConfigError

struct Perturbation {
  Tensor samples;  // raw sample units, rank 1
  PerturbationMode mode = PerturbationMode::prepend;
  double epsilon = 32768.0;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// additive: x + delta truncated or zero-padded to len(x);
// prepend: delta followed by x. Differentiable in both arguments.
Tensor apply_perturbation(const Tensor& delta, PerturbationMode mode, const Tensor& x);
Tensor apply_perturbation(const Perturbation& p, const Tensor& x);

// Elementwise clamp to [-epsilon, epsilon]. Throws ContractError if
// epsilon <= 0.
Tensor project_linf(const Tensor& delta, double epsilon);

struct AttackConfig {
  int steps = 5000;
  int batch_size = 32;
  double lr = 1.0;
  std::optional<int> decay_after;  // default: steps / 2
  double decay_rate = 0.9999;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double epsilon = 32768.0;
  double perturbation_seconds = 0.5;
  PerturbationMode mode = PerturbationMode::prepend;
  std::string target;

  void validate() const;  // throws ConfigError
  int decay_start() const { return decay_after.value_or(steps / 2); }
  // Learning rate used by 0-based step `step`.
  double lr_at(int step) const;
  bool operator==(const AttackConfig&) const = default;
};

struct StepInfo {
  int step = 0;          // 0-based
  double mean_loss = 0;  // batch-mean loss before the update
  double lr = 0;
};

struct AttackHooks {
  // Called after every projected update with the new delta.
  std::function<void(const StepInfo&, const Tensor& delta)> on_step;
  // Starting point instead of zeros (projected before use).
  std::optional<Tensor> initial_delta;
};

struct AttackResult {
  Perturbation perturbation;
  std::vector<double> loss_curve;  // batch-mean loss per step
};

// Minimizes the batch-mean of loss(T(delta, x), target) over seeded shuffled
// batches of `train_set`. Throws ContractError if the target's vocabulary
// differs from the model's.
AttackResult learn_universal(const Model& model, const std::vector<Utterance>& train_set,
                             const LabelSequence& target, PerturbationMode mode,
                             const AttackConfig& config, const AttackHooks& hooks = {});

// Same solver on the single utterance; additive perturbations span the whole
// utterance.
AttackResult learn_per_utterance(const Model& model, const Utterance& utterance,
                                 const LabelSequence& target, PerturbationMode mode,
                                 const AttackConfig& config, const AttackHooks& hooks = {});

// Maximizes the loss of each utterance's own transcript.
AttackResult learn_untargeted(const Model& model, const std::vector<Utterance>& train_set,
                              PerturbationMode mode, const AttackConfig& config,
                              const AttackHooks& hooks = {});

}  // namespace uptb
