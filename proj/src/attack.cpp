#include "uptb/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "uptb/optim.hpp"
#include "uptb/parallel.hpp"

namespace uptb {

namespace {

struct Example {
  Tensor waveform;
  LabelSequence labels;
};

AttackResult solve(const Model& model, const std::vector<Example>& data, std::size_t length,
                   PerturbationMode mode, const AttackConfig& config, double sign,
                   const AttackHooks& hooks) {
  config.validate();
  if (data.empty()) throw ContractError("attack: training set is empty");
  if (length == 0) throw ContractError("attack: perturbation length must be positive");

  Tensor delta = Tensor::zeros({length});
  if (hooks.initial_delta) {
    if (hooks.initial_delta->shape() != delta.shape()) {
      throw ShapeError("attack: initial perturbation has shape " +
                       shape_str(hooks.initial_delta->shape()) + ", expected " +
                       shape_str(delta.shape()));
    }
    delta = project_linf(hooks.initial_delta->detached(), config.epsilon);
  }
  std::vector<double> values(delta.values().begin(), delta.values().end());

  Adam adam(length, {config.beta1, config.beta2, config.adam_epsilon});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), data.size());

  AttackResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> picks;
    while (picks.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }
    std::vector<double> losses(batch);
    std::vector<std::vector<double>> grads(batch);
    parallel_for(batch, [&](std::size_t b) {
      const Example& ex = data[picks[b]];
      Tape tape;
      const Tensor d = tape.variable(delta);
      const Tensor loss = model_loss(model, apply_perturbation(d, mode, ex.waveform), ex.labels);
      losses[b] = loss.item();
      const Tensor g = tape.backward(loss).of(d);
      grads[b].assign(g.values().begin(), g.values().end());
    });
    std::vector<double> mean(length, 0.0);
    double mean_loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      mean_loss += losses[b];
      for (std::size_t i = 0; i < length; ++i) mean[i] += grads[b][i];
    }
    const double inv = 1.0 / static_cast<double>(batch);
    mean_loss *= inv;
    for (double& v : mean) {
      v *= sign * inv;
      if (!std::isfinite(v)) {
        throw DivergenceError("attack gradient became non-finite at step " + std::to_string(step));
      }
    }
    if (!std::isfinite(mean_loss)) {
      throw DivergenceError("attack loss became non-finite at step " + std::to_string(step));
    }
    const double lr = config.lr_at(step);
    adam.step(values, mean, lr);
    for (double& v : values) v = std::clamp(v, -config.epsilon, config.epsilon);
    delta = Tensor({length}, values);
    result.loss_curve.push_back(mean_loss);
    if (hooks.on_step) hooks.on_step(StepInfo{step, mean_loss, lr}, delta);
  }
  result.perturbation = Perturbation{delta, mode, config.epsilon, model.config.features.sample_rate};
  return result;
}

void check_target(const Model& model, const LabelSequence& target) {
  if (target.vocab_size() != model.tokenizer.size()) {
    throw ContractError("attack target vocabulary size " + std::to_string(target.vocab_size()) +
                        " does not match the model's " + std::to_string(model.tokenizer.size()));
  }
}

std::size_t prepend_length(const Model& model, const AttackConfig& config) {
  return static_cast<std::size_t>(
      std::lround(config.perturbation_seconds * model.config.features.sample_rate));
}

void check_rate(const Model& model, const Utterance& u) {
  if (u.sample_rate != model.config.features.sample_rate) {
    throw ConfigError("utterance " + u.id + " has sample rate " + std::to_string(u.sample_rate) +
                      ", model expects " + std::to_string(model.config.features.sample_rate));
  }
}

}  // namespace

std::string mode_name(PerturbationMode mode) {
  return mode == PerturbationMode::additive ? "additive" : "prepend";
}

PerturbationMode parse_mode(std::string_view name) {
  if (name == "additive") return PerturbationMode::additive;
  if (name == "prepend") return PerturbationMode::prepend;
  throw ConfigError("unknown perturbation mode '" + std::string(name) +
                    "' (expected additive or prepend)");
}

Tensor apply_perturbation(const Tensor& delta, PerturbationMode mode, const Tensor& x) {
  if (delta.rank() != 1 || x.rank() != 1) {
    throw ShapeError("apply_perturbation: expected rank-1 signals, got " +
                     shape_str(delta.shape()) + " and " + shape_str(x.shape()));
  }
  if (mode == PerturbationMode::prepend) return concat({delta, x}, 0);
  const std::size_t s = delta.size(), t = x.size();
  if (s == t) return add(x, delta);
  if (s > t) return add(x, slice(delta, 0, 0, t));
  return add(x, pad_zeros(delta, 0, 0, t - s));
}

Tensor apply_perturbation(const Perturbation& p, const Tensor& x) {
  return apply_perturbation(p.samples, p.mode, x);
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  if (!(epsilon > 0.0)) throw ContractError("project_linf: epsilon must be positive");
  std::vector<double> v(delta.values().begin(), delta.values().end());
  for (double& x : v) x = std::clamp(x, -epsilon, epsilon);
  return Tensor(delta.shape(), std::move(v));
}

void AttackConfig::validate() const {
  if (steps < 1) throw ConfigError("attack steps must be at least 1");
  if (batch_size < 1) throw ConfigError("attack batch_size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("attack lr must be finite and nonnegative");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay_rate must be in (0, 1]");
  if (decay_after && *decay_after < 0) throw ConfigError("decay_after must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive and finite");
  if (!(perturbation_seconds > 0.0)) throw ConfigError("perturbation_seconds must be positive");
}

double AttackConfig::lr_at(int step) const {
  const int start = decay_start();
  if (step < start) return lr;
  return lr * std::pow(decay_rate, static_cast<double>(step - start + 1));
}

AttackResult learn_universal(const Model& model, const std::vector<Utterance>& train_set,
                             const LabelSequence& target, PerturbationMode mode,
                             const AttackConfig& config, const AttackHooks& hooks) {
  check_target(model, target);
  std::vector<Example> data;
  for (const Utterance& u : train_set) {
    check_rate(model, u);
    data.push_back({u.waveform, target});
  }
  return solve(model, data, prepend_length(model, config), mode, config, 1.0, hooks);
}

AttackResult learn_per_utterance(const Model& model, const Utterance& utterance,
                                 const LabelSequence& target, PerturbationMode mode,
                                 const AttackConfig& config, const AttackHooks& hooks) {
  check_target(model, target);
  check_rate(model, utterance);
  const std::size_t length = mode == PerturbationMode::additive ? utterance.waveform.size()
                                                                : prepend_length(model, config);
  return solve(model, {{utterance.waveform, target}}, length, mode, config, 1.0, hooks);
}

AttackResult learn_untargeted(const Model& model, const std::vector<Utterance>& train_set,
                              PerturbationMode mode, const AttackConfig& config,
                              const AttackHooks& hooks) {
  std::vector<Example> data;
  for (const Utterance& u : train_set) {
    check_rate(model, u);
    LabelSequence labels;
    try {
      labels = model.tokenizer.encode(u.transcript);
    } catch (const ContractError& e) {
      throw ContractError("utterance " + u.id + ": " + e.what());
    }
    data.push_back({u.waveform, std::move(labels)});
  }
  return solve(model, data, prepend_length(model, config), mode, config, -1.0, hooks);
}

}  // namespace uptb
