#pragma once

// Experiment configuration and its JSON schema.
//
// {
//   "paths":    {"corpus": str, "checkpoints": str, "reports": str},
//   "features": {"sample_rate", "window_ms", "hop_ms", "num_mels", "fft_size", "log_floor"},
//   "corpus":   {"vocabulary": [str], "sample_rate", "min_words", "max_words", "snr_db",
//                "amplitude", "amplitude_jitter", "rate_jitter", "segment_ms", "gap_ms",
//                "min_silence_ms", "max_silence_ms", "train_count", "test_count", "seed"},
//   "model":    {"arch", "encoder_layers", "encoder_hidden", "embedding_dim",
//                "decoder_hidden", "attention_dim", "joint_dim", "seed"},
//   "training": {"epochs", "lr", "batch", "seed"},
//   "attack":   {"steps", "batch_size", "lr", "decay_after" (null = steps/2), "decay_rate",
//                "beta1", "beta2", "adam_epsilon", "seed", "epsilon",
//                "perturbation_seconds", "mode", "target"},
//   "metrics":  {"bin_width"}
// }
//
// Every section and key is optional; missing values keep their defaults and
// unknown keys are rejected. The corpus sample rate always follows
// features.sample_rate.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "uptb/attack.hpp"
#include "uptb/dataio.hpp"
#include "uptb/features.hpp"
#include "uptb/models.hpp"

namespace uptb {

struct PathsConfig {
  std::string corpus = "corpus";
  std::string checkpoints = "checkpoints";
  std::string reports = "reports";
  bool operator==(const PathsConfig&) const = default;
};

// Architecture-independent model dimensions; `model_config` picks the
// fields each architecture needs.
struct ModelSection {
  Arch arch = Arch::ctc;
  int encoder_layers = 2;
  int encoder_hidden = 64;
  int embedding_dim = 16;
  int decoder_hidden = 64;
  int attention_dim = 32;
  int joint_dim = 64;
  std::uint64_t seed = 0;
  bool operator==(const ModelSection&) const = default;
};

struct MetricsConfig {
  double bin_width = 0.5;
  bool operator==(const MetricsConfig&) const = default;
};

struct ExperimentConfig {
  PathsConfig paths;
  FeatureConfig features;
  CorpusConfig corpus;
  ModelSection model;
  TrainConfig training;
  AttackConfig attack;
  MetricsConfig metrics;

  ModelConfig model_config() const;
  ModelConfig model_config(Arch arch) const;
  void validate() const;  // throws ConfigError
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json feature_config_to_json(const FeatureConfig& c);
FeatureConfig feature_config_from_json(const nlohmann::json& j);

// Canonical form stored in checkpoints; arch-specific keys appear exactly
// when the architecture uses them.
nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const std::filesystem::path& path, const ExperimentConfig& c);

}  // namespace uptb
