#include "uptb/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "uptb/errors.hpp"

namespace uptb {

using nlohmann::json;

namespace {

// Typed access to one JSON object with unknown-key rejection.
class Section {
 public:
  Section(const json& j, std::string name, std::set<std::string> keys)
      : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
    for (const auto& [key, value] : j_.items()) {
      if (!keys.count(key)) throw ConfigError(name_ + ": unknown key \"" + key + "\"");
    }
  }

  template <typename T>
  void read(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  void read_optional(const char* key, std::optional<int>& out) const {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    int v = 0;
    read(key, v);
    out = v;
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string name_;
};

json corpus_to_json(const CorpusConfig& c) {
  return {{"vocabulary", c.vocabulary},
          {"sample_rate", c.sample_rate},
          {"min_words", c.min_words},
          {"max_words", c.max_words},
          {"snr_db", c.snr_db},
          {"amplitude", c.amplitude},
          {"amplitude_jitter", c.amplitude_jitter},
          {"rate_jitter", c.rate_jitter},
          {"segment_ms", c.segment_ms},
          {"gap_ms", c.gap_ms},
          {"min_silence_ms", c.min_silence_ms},
          {"max_silence_ms", c.max_silence_ms},
          {"train_count", c.train_count},
          {"test_count", c.test_count},
          {"seed", c.seed}};
}

CorpusConfig corpus_from_json(const json& j) {
  const Section s(j, "corpus",
                  {"vocabulary", "sample_rate", "min_words", "max_words", "snr_db", "amplitude",
                   "amplitude_jitter", "rate_jitter", "segment_ms", "gap_ms", "min_silence_ms",
                   "max_silence_ms", "train_count", "test_count", "seed"});
  CorpusConfig c;
  s.read("vocabulary", c.vocabulary);
  s.read("sample_rate", c.sample_rate);
  s.read("min_words", c.min_words);
  s.read("max_words", c.max_words);
  s.read("snr_db", c.snr_db);
  s.read("amplitude", c.amplitude);
  s.read("amplitude_jitter", c.amplitude_jitter);
  s.read("rate_jitter", c.rate_jitter);
  s.read("segment_ms", c.segment_ms);
  s.read("gap_ms", c.gap_ms);
  s.read("min_silence_ms", c.min_silence_ms);
  s.read("max_silence_ms", c.max_silence_ms);
  s.read("train_count", c.train_count);
  s.read("test_count", c.test_count);
  s.read("seed", c.seed);
  return c;
}

json attack_to_json(const AttackConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"decay_after", c.decay_after ? json(*c.decay_after) : json(nullptr)},
          {"decay_rate", c.decay_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"seed", c.seed},
          {"epsilon", c.epsilon},
          {"perturbation_seconds", c.perturbation_seconds},
          {"mode", mode_name(c.mode)},
          {"target", c.target}};
}

AttackConfig attack_from_json(const json& j) {
  const Section s(j, "attack",
                  {"steps", "batch_size", "lr", "decay_after", "decay_rate", "beta1", "beta2",
                   "adam_epsilon", "seed", "epsilon", "perturbation_seconds", "mode", "target"});
  AttackConfig c;
  s.read("steps", c.steps);
  s.read("batch_size", c.batch_size);
  s.read("lr", c.lr);
  s.read_optional("decay_after", c.decay_after);
  s.read("decay_rate", c.decay_rate);
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("adam_epsilon", c.adam_epsilon);
  s.read("seed", c.seed);
  s.read("epsilon", c.epsilon);
  s.read("perturbation_seconds", c.perturbation_seconds);
  std::string mode = mode_name(c.mode);
  s.read("mode", mode);
  c.mode = parse_mode(mode);
  s.read("target", c.target);
  return c;
}

}  // namespace

json feature_config_to_json(const FeatureConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"window_ms", c.window_ms}, {"hop_ms", c.hop_ms},
          {"num_mels", c.num_mels},       {"fft_size", c.fft_size},   {"log_floor", c.log_floor}};
}

FeatureConfig feature_config_from_json(const json& j) {
  const Section s(j, "features",
                  {"sample_rate", "window_ms", "hop_ms", "num_mels", "fft_size", "log_floor"});
  FeatureConfig c;
  s.read("sample_rate", c.sample_rate);
  s.read("window_ms", c.window_ms);
  s.read("hop_ms", c.hop_ms);
  s.read("num_mels", c.num_mels);
  s.read("fft_size", c.fft_size);
  s.read("log_floor", c.log_floor);
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  json j = {{"arch", arch_name(c.arch)},
            {"encoder_layers", c.encoder_layers},
            {"encoder_hidden", c.encoder_hidden},
            {"embedding_dim", c.embedding_dim},
            {"vocabulary", c.vocabulary},
            {"features", feature_config_to_json(c.features)},
            {"seed", c.seed}};
  if (c.decoder_hidden) j["decoder_hidden"] = *c.decoder_hidden;
  if (c.attention_dim) j["attention_dim"] = *c.attention_dim;
  if (c.joint_dim) j["joint_dim"] = *c.joint_dim;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  const Section s(j, "model",
                  {"arch", "encoder_layers", "encoder_hidden", "embedding_dim", "decoder_hidden",
                   "attention_dim", "joint_dim", "vocabulary", "features", "seed"});
  ModelConfig c;
  std::string arch = arch_name(c.arch);
  s.read("arch", arch);
  c.arch = parse_arch(arch);
  s.read("encoder_layers", c.encoder_layers);
  s.read("encoder_hidden", c.encoder_hidden);
  s.read("embedding_dim", c.embedding_dim);
  s.read_optional("decoder_hidden", c.decoder_hidden);
  s.read_optional("attention_dim", c.attention_dim);
  s.read_optional("joint_dim", c.joint_dim);
  s.read("vocabulary", c.vocabulary);
  if (s.has("features")) c.features = feature_config_from_json(s.at("features"));
  s.read("seed", c.seed);
  c.validate();
  return c;
}

ModelConfig ExperimentConfig::model_config() const { return model_config(model.arch); }

ModelConfig ExperimentConfig::model_config(Arch arch) const {
  ModelConfig c;
  c.arch = arch;
  c.encoder_layers = model.encoder_layers;
  c.encoder_hidden = model.encoder_hidden;
  c.embedding_dim = model.embedding_dim;
  c.decoder_hidden = model.decoder_hidden;
  c.attention_dim = model.attention_dim;
  c.joint_dim = model.joint_dim;
  c.vocabulary = corpus.vocabulary;
  c.features = features;
  c.seed = model.seed;
  return ModelConfig::for_arch(arch, c);
}

void ExperimentConfig::validate() const {
  features.validate();
  corpus.validate();
  if (corpus.sample_rate != features.sample_rate) {
    throw ConfigError("corpus.sample_rate " + std::to_string(corpus.sample_rate) +
                      " differs from features.sample_rate " + std::to_string(features.sample_rate));
  }
  model_config().validate();
  training.validate();
  attack.validate();
  if (!(metrics.bin_width > 0.0)) throw ConfigError("metrics.bin_width must be positive");
}

json experiment_to_json(const ExperimentConfig& c) {
  return {{"paths", {{"corpus", c.paths.corpus},
                     {"checkpoints", c.paths.checkpoints},
                     {"reports", c.paths.reports}}},
          {"features", feature_config_to_json(c.features)},
          {"corpus", corpus_to_json(c.corpus)},
          {"model", {{"arch", arch_name(c.model.arch)},
                     {"encoder_layers", c.model.encoder_layers},
                     {"encoder_hidden", c.model.encoder_hidden},
                     {"embedding_dim", c.model.embedding_dim},
                     {"decoder_hidden", c.model.decoder_hidden},
                     {"attention_dim", c.model.attention_dim},
                     {"joint_dim", c.model.joint_dim},
                     {"seed", c.model.seed}}},
          {"training", {{"epochs", c.training.epochs},
                        {"lr", c.training.lr},
                        {"batch", c.training.batch},
                        {"seed", c.training.seed}}},
          {"attack", attack_to_json(c.attack)},
          {"metrics", {{"bin_width", c.metrics.bin_width}}}};
}

ExperimentConfig experiment_from_json(const json& j) {
  const Section top(j, "config",
                    {"paths", "features", "corpus", "model", "training", "attack", "metrics"});
  ExperimentConfig c;
  if (top.has("paths")) {
    const Section s(top.at("paths"), "paths", {"corpus", "checkpoints", "reports"});
    s.read("corpus", c.paths.corpus);
    s.read("checkpoints", c.paths.checkpoints);
    s.read("reports", c.paths.reports);
  }
  if (top.has("features")) c.features = feature_config_from_json(top.at("features"));
  if (top.has("corpus")) c.corpus = corpus_from_json(top.at("corpus"));
  c.corpus.sample_rate = c.features.sample_rate;
  if (top.has("model")) {
    const Section s(top.at("model"), "model",
                    {"arch", "encoder_layers", "encoder_hidden", "embedding_dim",
                     "decoder_hidden", "attention_dim", "joint_dim", "seed"});
    std::string arch = arch_name(c.model.arch);
    s.read("arch", arch);
    c.model.arch = parse_arch(arch);
    s.read("encoder_layers", c.model.encoder_layers);
    s.read("encoder_hidden", c.model.encoder_hidden);
    s.read("embedding_dim", c.model.embedding_dim);
    s.read("decoder_hidden", c.model.decoder_hidden);
    s.read("attention_dim", c.model.attention_dim);
    s.read("joint_dim", c.model.joint_dim);
    s.read("seed", c.model.seed);
  }
  if (top.has("training")) {
    const Section s(top.at("training"), "training", {"epochs", "lr", "batch", "seed"});
    s.read("epochs", c.training.epochs);
    s.read("lr", c.training.lr);
    s.read("batch", c.training.batch);
    s.read("seed", c.training.seed);
  }
  if (top.has("attack")) c.attack = attack_from_json(top.at("attack"));
  if (top.has("metrics")) {
    const Section s(top.at("metrics"), "metrics", {"bin_width"});
    s.read("bin_width", c.metrics.bin_width);
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

void save_experiment(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << experiment_to_json(c).dump(2) << '\n';
}

}  // namespace uptb
