#pragma once

// Toy encoder-decoder recognizers (attention, CTC, transducer), their loss,
// greedy transcription, the trainer and the checkpoint format.
//
// Checkpoint layout (all integers little-endian):
//   "UPTB1"                       5-byte magic
//   u64 n, n bytes                canonical JSON of the ModelConfig
//   u64 count                     number of parameters, in name order
//   per parameter:
//     u32 len, len bytes          name
//     u32 rank, rank x u64        shape
//     f64 x product(shape)        values, row-major

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uptb/autodiff.hpp"
#include "uptb/dataio.hpp"
#include "uptb/features.hpp"
#include "uptb/losses.hpp"

namespace uptb {

enum class Arch { attention, ctc, rnnt };

std::string arch_name(Arch arch);
Arch parse_arch(std::string_view name);  // throws ConfigError

struct ModelConfig {
  Arch arch = Arch::ctc;
  int encoder_layers = 2;
  int encoder_hidden = 64;
  int embedding_dim = 16;
  std::optional<int> decoder_hidden;  // attention and rnnt only
  std::optional<int> attention_dim;   // attention only
  std::optional<int> joint_dim;       // rnnt only
  std::vector<std::string> vocabulary = default_vocabulary();
  FeatureConfig features;
  std::uint64_t seed = 0;

  // Fills the optional fields required by `arch` with their defaults and
  // clears the others.
  static ModelConfig for_arch(Arch arch, ModelConfig base);
  static ModelConfig for_arch(Arch arch);

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

// Bijection between vocabulary words and indices 0..V-1.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  bool contains(std::string_view word) const;
  int index(std::string_view word) const;  // ContractError if unknown
  const std::string& word(int index) const;
  const std::vector<std::string>& words() const { return words_; }

  // Splits on whitespace; throws ContractError naming the first unknown word.
  LabelSequence encode(std::string_view text) const;
  std::string decode(const LabelSequence& labels) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

using ParameterMap = std::map<std::string, Tensor>;

struct Model {
  ModelConfig config;
  Tokenizer tokenizer;
  ParameterMap parameters;
  std::shared_ptr<const FeatureExtractor> extractor;

  Arch arch() const { return config.arch; }
  std::size_t parameter_count() const;
};

Model build_model(const ModelConfig& config);

// Log-mel features scaled for the encoder. Differentiable.
Tensor model_features(const Model& model, const Tensor& waveform);

// Loss of `labels` given precomputed features, evaluated with `params`
// (which may live on a tape).
Tensor features_loss(const Model& model, const ParameterMap& params,
                     const Tensor& features, const LabelSequence& labels);

// Loss on a raw waveform with the model's own (constant) parameters.
Tensor model_loss(const Model& model, const Tensor& waveform,
                  const LabelSequence& transcript);

struct DecodeOptions {
  int beam = 1;                 // attention only, 1..4
  int max_symbols_per_frame = 4;  // rnnt only
};

// Empty for waveforms shorter than one analysis window.
LabelSequence decode(const Model& model, const Tensor& waveform,
                     const DecodeOptions& options = {});
std::string transcribe(const Model& model, const Tensor& waveform,
                       const DecodeOptions& options = {});

// Attention weights of the greedy decode, one row per output step
// (including the step that emits EOS). Throws ContractError for other archs.
Tensor attention_map(const Model& model, const Tensor& waveform);

// Encoder frames for a waveform of `samples` samples.
std::size_t encoder_frames(const Model& model, std::size_t samples);

struct TrainConfig {
  int epochs = 30;
  double lr = 3e-3;
  int batch = 8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Adam on the batch-mean loss. Deterministic given the config. Throws
// DivergenceError if a loss or gradient becomes non-finite, and ConfigError
// if a transcript uses a word outside the vocabulary.
Model train(const Model& model, const std::vector<Utterance>& dataset,
            const TrainConfig& config, std::vector<EpochStats>* history = nullptr,
            const EpochCallback& on_epoch = {});

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace uptb
