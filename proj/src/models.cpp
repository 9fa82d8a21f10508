#include "uptb/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "uptb/config.hpp"
#include "uptb/optim.hpp"
#include "uptb/parallel.hpp"
#include "uptb/recurrent.hpp"

namespace uptb {

namespace {

constexpr double kFeatureScale = 0.2;
constexpr double kFeatureShift = 6.0;
// Blank starts with most of each frame's mass. From a uniform start the
// frame-synchronous losses first push every frame toward blank, which
// saturates the encoder and leaves it deaf to its input.
constexpr double kBlankBiasInit = 5.0;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

const Tensor& param(const ParameterMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("model is missing parameter '" + name + "'");
  return it->second;
}

Tensor row_bias(const Tensor& bias, std::size_t rows) {
  const std::vector<std::size_t> zeros(rows, 0);
  return gather(reshape(bias, {1, bias.size()}), zeros);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), row_bias(b, x.dim(0)));
}

GruWeights gru_weights(const ParameterMap& params, const std::string& prefix) {
  return {param(params, prefix + ".wx"), param(params, prefix + ".wh"),
          param(params, prefix + ".bx"), param(params, prefix + ".bh")};
}

std::size_t argmax(std::span<const double> row, std::size_t skip = SIZE_MAX) {
  std::size_t best = SIZE_MAX;
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (k == skip) continue;
    if (best == SIZE_MAX || row[k] > row[best]) best = k;
  }
  return best;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

void add_gru_specs(std::vector<ParamSpec>& specs, const std::string& prefix,
                   std::size_t in, std::size_t hidden) {
  specs.push_back({prefix + ".wx", {in, 3 * hidden}, hidden});
  specs.push_back({prefix + ".wh", {hidden, 3 * hidden}, hidden});
  specs.push_back({prefix + ".bx", {3 * hidden}, hidden});
  specs.push_back({prefix + ".bh", {3 * hidden}, hidden});
}

// Creation order fixes the random stream consumed by each parameter.
std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  const std::size_t vocab = c.vocabulary.size();
  const std::size_t enc = sz(c.encoder_hidden);
  const std::size_t emb = sz(c.embedding_dim);
  std::vector<ParamSpec> specs;
  std::size_t in = sz(c.features.num_mels);
  for (int l = 0; l < c.encoder_layers; ++l) {
    add_gru_specs(specs, "enc" + std::to_string(l), in, enc);
    in = enc;
  }
  switch (c.arch) {
    case Arch::ctc:
      specs.push_back({"ctc.w", {enc, vocab + 1}, enc});
      specs.push_back({"ctc.b", {vocab + 1}, enc});
      break;
    case Arch::attention: {
      const std::size_t dec = sz(*c.decoder_hidden), att = sz(*c.attention_dim);
      specs.push_back({"dec.embed", {vocab + 2, emb}, emb});
      add_gru_specs(specs, "dec", emb + enc, dec);
      specs.push_back({"att.wq", {dec, att}, dec});
      specs.push_back({"att.wk", {enc, att}, enc});
      specs.push_back({"out.w", {dec + enc, vocab + 2}, dec + enc});
      specs.push_back({"out.b", {vocab + 2}, dec + enc});
      break;
    }
    case Arch::rnnt: {
      const std::size_t dec = sz(*c.decoder_hidden), joint = sz(*c.joint_dim);
      specs.push_back({"pred.embed", {vocab + 1, emb}, emb});
      add_gru_specs(specs, "pred", emb, dec);
      specs.push_back({"joint.we", {enc, joint}, enc});
      specs.push_back({"joint.wp", {dec, joint}, dec});
      specs.push_back({"joint.b", {joint}, enc});
      specs.push_back({"joint.wout", {joint, vocab + 1}, joint});
      specs.push_back({"joint.bout", {vocab + 1}, joint});
      break;
    }
  }
  return specs;
}

Tensor encode(const Model& m, const ParameterMap& params, const Tensor& features) {
  Tensor x = features;
  const std::size_t hidden = sz(m.config.encoder_hidden);
  for (int l = 0; l < m.config.encoder_layers; ++l) {
    x = gru_sequence(x, Tensor::zeros({hidden}), gru_weights(params, "enc" + std::to_string(l)));
  }
  return x;
}

// ---------------------------------------------------------------------------
// Attention decoder

struct AttentionDecoder {
  const Model& model;
  const ParameterMap& params;
  Tensor enc;     // T x H
  Tensor keys_t;  // A x T
  double scale;

  AttentionDecoder(const Model& m, const ParameterMap& p, Tensor encoded)
      : model(m), params(p), enc(std::move(encoded)) {
    keys_t = transpose(matmul(enc, param(params, "att.wk")));
    scale = 1.0 / std::sqrt(static_cast<double>(*m.config.attention_dim));
  }

  struct State {
    Tensor hidden;   // D
    Tensor context;  // 1 x H
  };

  State initial() const {
    return {Tensor::zeros({sz(*model.config.decoder_hidden)}),
            Tensor::zeros({1, enc.dim(1)})};
  }

  // Consumes `prev`, returns the 1 x (V+2) log-distribution of the next token.
  Tensor step(int prev, State& s, Tensor* weights = nullptr) const {
    const std::size_t token = static_cast<std::size_t>(prev);
    const Tensor embedded = gather(param(params, "dec.embed"), std::span(&token, 1));
    const Tensor input = concat({embedded, s.context}, 1);
    const Tensor hidden = gru_sequence(input, s.hidden, gru_weights(params, "dec"));
    const Tensor query = matmul(hidden, param(params, "att.wq"));
    const Tensor alpha = softmax(scalar_mul(matmul(query, keys_t), scale), 1);
    s.context = matmul(alpha, enc);
    s.hidden = reshape(hidden, {hidden.size()});
    if (weights != nullptr) *weights = alpha;
    const Tensor logits = linear(concat({hidden, s.context}, 1), param(params, "out.w"),
                                 param(params, "out.b"));
    return log_softmax(logits, 1);
  }

  std::size_t max_steps() const { return 2 * enc.dim(0); }
};

Tensor attention_loss(const Model& m, const ParameterMap& params, const Tensor& enc,
                      const LabelSequence& target) {
  AttentionDecoder dec(m, params, enc);
  auto state = dec.initial();
  std::vector<Tensor> rows;
  rows.reserve(target.size() + 1);
  int prev = target.sos();
  for (std::size_t i = 0; i <= target.size(); ++i) {
    rows.push_back(dec.step(prev, state));
    if (i < target.size()) prev = target[i];
  }
  return attention_ce_loss(concat(rows, 0), target);
}

LabelSequence attention_greedy(const Model& m, const Tensor& enc,
                               std::vector<Tensor>* weights) {
  AttentionDecoder dec(m, m.parameters, enc);
  const int vocab = m.tokenizer.size();
  auto state = dec.initial();
  std::vector<int> out;
  int prev = vocab;  // SOS
  for (std::size_t i = 0; i < dec.max_steps(); ++i) {
    Tensor w;
    const Tensor lp = dec.step(prev, state, &w);
    if (weights != nullptr) weights->push_back(w);
    const int best = static_cast<int>(argmax(lp.values(), sz(vocab)));
    if (best == vocab + 1) break;
    out.push_back(best);
    prev = best;
  }
  return LabelSequence(std::move(out), vocab);
}

LabelSequence attention_beam(const Model& m, const Tensor& enc, int beam) {
  AttentionDecoder dec(m, m.parameters, enc);
  const int vocab = m.tokenizer.size();
  struct Hyp {
    std::vector<int> tokens;
    double score;
    AttentionDecoder::State state;
  };
  std::vector<Hyp> alive{{{}, 0.0, dec.initial()}};
  std::optional<Hyp> best_done;
  for (std::size_t i = 0; i < dec.max_steps() && !alive.empty(); ++i) {
    std::vector<Hyp> next;
    for (Hyp& h : alive) {
      AttentionDecoder::State s = h.state;
      const int prev = h.tokens.empty() ? vocab : h.tokens.back();
      const auto lp = dec.step(prev, s);
      for (int k = 0; k < vocab + 2; ++k) {
        if (k == vocab) continue;
        const double score = h.score + lp[sz(k)];
        if (k == vocab + 1) {
          if (!best_done || score > best_done->score) best_done = Hyp{h.tokens, score, s};
          continue;
        }
        Hyp n{h.tokens, score, s};
        n.tokens.push_back(k);
        next.push_back(std::move(n));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (next.size() > sz(beam)) next.resize(sz(beam));
    // Scores only decrease, so a finished hypothesis ahead of every live one wins.
    if (best_done && (next.empty() || best_done->score >= next.front().score)) break;
    alive = std::move(next);
  }
  if (best_done) return LabelSequence(best_done->tokens, vocab);
  return LabelSequence(alive.empty() ? std::vector<int>{} : alive.front().tokens, vocab);
}

// ---------------------------------------------------------------------------
// Transducer

Tensor prediction_states(const Model& m, const ParameterMap& params, const LabelSequence& y) {
  std::vector<std::size_t> tokens{sz(m.tokenizer.size())};  // blank starts the sequence
  for (int t : y.tokens()) tokens.push_back(sz(t));
  const Tensor embedded = gather(param(params, "pred.embed"), tokens);
  return gru_sequence(embedded, Tensor::zeros({sz(*m.config.decoder_hidden)}),
                      gru_weights(params, "pred"));
}

Tensor transducer_loss(const Model& m, const ParameterMap& params, const Tensor& enc,
                       const LabelSequence& y) {
  const std::size_t frames = enc.dim(0), positions = y.size() + 1;
  const std::size_t symbols = sz(m.tokenizer.size()) + 1;
  const Tensor e = matmul(enc, param(params, "joint.we"));
  const Tensor p = matmul(prediction_states(m, params, y), param(params, "joint.wp"));
  std::vector<std::size_t> ti(frames * positions), ui(frames * positions);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < positions; ++u) {
      ti[t * positions + u] = t;
      ui[t * positions + u] = u;
    }
  }
  const Tensor hidden = tanh(add(add(gather(e, ti), gather(p, ui)),
                                 row_bias(param(params, "joint.b"), frames * positions)));
  const Tensor lp = log_softmax(linear(hidden, param(params, "joint.wout"),
                                       param(params, "joint.bout")), 1);
  return rnnt_loss(reshape(lp, {frames, positions, symbols}), y);
}

class ModelStepper : public TransducerStepper {
 public:
  ModelStepper(const Model& m, const Tensor& enc)
      : m_(m), enc_proj_(matmul(enc, param(m.parameters, "joint.we"))) {
    state_ = Tensor::zeros({sz(*m.config.decoder_hidden)});
    advance(m.tokenizer.size());
  }
  std::size_t num_frames() const override { return enc_proj_.dim(0); }
  int vocab_size() const override { return m_.tokenizer.size(); }
  std::vector<double> joint(std::size_t t) override {
    const Tensor e = slice(enc_proj_, 0, t, t + 1);
    const Tensor h = tanh(add(add(e, pred_proj_), row_bias(param(m_.parameters, "joint.b"), 1)));
    const Tensor lp = log_softmax(linear(h, param(m_.parameters, "joint.wout"),
                                         param(m_.parameters, "joint.bout")), 1);
    return {lp.values().begin(), lp.values().end()};
  }
  void emit(int label) override { advance(label); }

 private:
  void advance(int token) {
    const std::size_t idx = sz(token);
    const Tensor x = gather(param(m_.parameters, "pred.embed"), std::span(&idx, 1));
    const Tensor h = gru_sequence(x, state_, gru_weights(m_.parameters, "pred"));
    state_ = reshape(h, {h.size()});
    pred_proj_ = matmul(h, param(m_.parameters, "joint.wp"));
  }

  const Model& m_;
  Tensor enc_proj_;
  Tensor state_;
  Tensor pred_proj_;
};

void check_finite(const ParameterMap& params) {
  for (const auto& [name, t] : params) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) throw DivergenceError("parameter '" + name + "' became non-finite");
    }
  }
}

// Little-endian binary helpers.
template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(name_ + ": truncated checkpoint while reading " + what);
    }
  }
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string arch_name(Arch arch) {
  switch (arch) {
    case Arch::attention: return "attention";
    case Arch::ctc: return "ctc";
    case Arch::rnnt: return "rnnt";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  if (name == "attention") return Arch::attention;
  if (name == "ctc") return Arch::ctc;
  if (name == "rnnt") return Arch::rnnt;
  throw ConfigError("unknown architecture '" + std::string(name) +
                    "' (expected attention, ctc or rnnt)");
}

ModelConfig ModelConfig::for_arch(Arch arch, ModelConfig base) {
  base.arch = arch;
  const bool needs_decoder = arch != Arch::ctc;
  if (needs_decoder && !base.decoder_hidden) base.decoder_hidden = 64;
  if (!needs_decoder) base.decoder_hidden.reset();
  if (arch == Arch::attention && !base.attention_dim) base.attention_dim = 32;
  if (arch != Arch::attention) base.attention_dim.reset();
  if (arch == Arch::rnnt && !base.joint_dim) base.joint_dim = 64;
  if (arch != Arch::rnnt) base.joint_dim.reset();
  return base;
}

ModelConfig ModelConfig::for_arch(Arch arch) { return for_arch(arch, ModelConfig{}); }

void ModelConfig::validate() const {
  if (encoder_layers < 1) throw ConfigError("encoder_layers must be at least 1");
  if (encoder_hidden < 1 || embedding_dim < 1) {
    throw ConfigError("encoder_hidden and embedding_dim must be positive");
  }
  auto require = [&](const std::optional<int>& v, bool wanted, const char* name) {
    if (wanted && !v) throw ConfigError(std::string(name) + " is required for arch " + arch_name(arch));
    if (!wanted && v) throw ConfigError(std::string(name) + " is not used by arch " + arch_name(arch));
    if (v && *v < 1) throw ConfigError(std::string(name) + " must be positive");
  };
  require(decoder_hidden, arch != Arch::ctc, "decoder_hidden");
  require(attention_dim, arch == Arch::attention, "attention_dim");
  require(joint_dim, arch == Arch::rnnt, "joint_dim");
  if (vocabulary.empty()) throw ConfigError("vocabulary is empty");
  std::set<std::string> seen;
  for (const auto& w : vocabulary) {
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos) {
      throw ConfigError("vocabulary word '" + w + "' must be a nonempty token");
    }
    if (!seen.insert(w).second) throw ConfigError("duplicate vocabulary word '" + w + "'");
  }
  features.validate();
}

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

bool Tokenizer::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

int Tokenizer::index(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw ContractError("word '" + std::string(word) + "' is not in the vocabulary");
  return it->second;
}

const std::string& Tokenizer::word(int index) const {
  if (index < 0 || index >= size()) throw ContractError("token index " + std::to_string(index) + " out of range");
  return words_[sz(index)];
}

LabelSequence Tokenizer::encode(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> tokens;
  std::string w;
  while (in >> w) tokens.push_back(index(w));
  return LabelSequence(std::move(tokens), size());
}

std::string Tokenizer::decode(const LabelSequence& labels) const {
  std::string out;
  for (int t : labels.tokens()) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters) n += t.size();
  return n;
}

Model build_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  m.tokenizer = Tokenizer(config.vocabulary);
  m.extractor = std::make_shared<const FeatureExtractor>(config.features);
  std::mt19937_64 rng(config.seed);
  for (const ParamSpec& spec : parameter_specs(config)) {
    const double k = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    std::vector<double> v(shape_size(spec.shape));
    for (double& x : v) x = dist(rng);
    if (spec.name == "ctc.b" || spec.name == "joint.bout") v.back() = kBlankBiasInit;
    m.parameters.emplace(spec.name, Tensor(spec.shape, std::move(v)));
  }
  return m;
}

Tensor model_features(const Model& model, const Tensor& waveform) {
  const Tensor f = (*model.extractor)(waveform);
  return scalar_mul(add(f, Tensor::filled(f.shape(), kFeatureShift)), kFeatureScale);
}

Tensor features_loss(const Model& model, const ParameterMap& params,
                     const Tensor& features, const LabelSequence& labels) {
  if (labels.vocab_size() != model.tokenizer.size()) {
    throw ContractError("label vocabulary size " + std::to_string(labels.vocab_size()) +
                        " does not match the model's " + std::to_string(model.tokenizer.size()));
  }
  const Tensor enc = encode(model, params, features);
  switch (model.arch()) {
    case Arch::ctc:
      return ctc_loss(log_softmax(linear(enc, param(params, "ctc.w"), param(params, "ctc.b")), 1),
                      labels);
    case Arch::attention:
      return attention_loss(model, params, enc, labels);
    case Arch::rnnt:
      return transducer_loss(model, params, enc, labels);
  }
  throw ContractError("unknown architecture");
}

Tensor model_loss(const Model& model, const Tensor& waveform, const LabelSequence& transcript) {
  return features_loss(model, model.parameters, model_features(model, waveform), transcript);
}

LabelSequence decode(const Model& model, const Tensor& waveform, const DecodeOptions& options) {
  if (model.arch() == Arch::attention && (options.beam < 1 || options.beam > 4)) {
    throw ConfigError("beam width must be in 1..4");
  }
  // Nothing is heard before the first full window.
  if (waveform.rank() == 1 && encoder_frames(model, waveform.size()) == 0) {
    return LabelSequence({}, model.tokenizer.size());
  }
  const Tensor enc = encode(model, model.parameters, model_features(model, waveform.detached()));
  switch (model.arch()) {
    case Arch::ctc:
      return ctc_greedy_decode(log_softmax(
          linear(enc, param(model.parameters, "ctc.w"), param(model.parameters, "ctc.b")), 1));
    case Arch::attention:
      if (options.beam == 1) return attention_greedy(model, enc, nullptr);
      return attention_beam(model, enc, options.beam);
    case Arch::rnnt: {
      ModelStepper stepper(model, enc);
      return rnnt_greedy_decode(stepper, options.max_symbols_per_frame);
    }
  }
  throw ContractError("unknown architecture");
}

std::string transcribe(const Model& model, const Tensor& waveform, const DecodeOptions& options) {
  return model.tokenizer.decode(decode(model, waveform, options));
}

Tensor attention_map(const Model& model, const Tensor& waveform) {
  if (model.arch() != Arch::attention) {
    throw ContractError("attention_map requires an attention model, got " + arch_name(model.arch()));
  }
  const Tensor enc = encode(model, model.parameters, model_features(model, waveform.detached()));
  std::vector<Tensor> rows;
  attention_greedy(model, enc, &rows);
  return concat(rows, 0);
}

std::size_t encoder_frames(const Model& model, std::size_t samples) {
  return num_frames(samples, model.config.features);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and nonnegative");
}

Model train(const Model& model, const std::vector<Utterance>& dataset, const TrainConfig& config,
            std::vector<EpochStats>* history, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw ContractError("train: dataset is empty");
  std::vector<Tensor> features;
  std::vector<LabelSequence> labels;
  for (const Utterance& u : dataset) {
    if (u.sample_rate != model.config.features.sample_rate) {
      throw ConfigError("utterance " + u.id + " has sample rate " + std::to_string(u.sample_rate) +
                        ", model expects " + std::to_string(model.config.features.sample_rate));
    }
    try {
      labels.push_back(model.tokenizer.encode(u.transcript));
    } catch (const ContractError& e) {
      throw ConfigError("utterance " + u.id + ": " + e.what());
    }
    features.push_back(model_features(model, u.waveform));
  }

  Model out = model;
  std::vector<std::string> names;
  std::vector<std::size_t> offsets{0};
  for (const auto& [name, t] : out.parameters) {
    names.push_back(name);
    offsets.push_back(offsets.back() + t.size());
  }
  std::vector<double> flat(offsets.back());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto v = out.parameters.at(names[i]).values();
    std::copy(v.begin(), v.end(), flat.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  }

  Adam adam(flat.size());
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += sz(config.batch)) {
      const std::size_t count = std::min(sz(config.batch), order.size() - start);
      std::vector<double> losses(count);
      std::vector<std::vector<double>> grads(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        Tape tape;
        ParameterMap vars;
        for (const auto& [name, t] : out.parameters) vars.emplace(name, tape.variable(t));
        const Tensor loss = features_loss(out, vars, features[idx], labels[idx]);
        losses[b] = loss.item();
        const Gradients g = tape.backward(loss);
        std::vector<double> flat_grad(flat.size());
        for (std::size_t i = 0; i < names.size(); ++i) {
          const Tensor gi = g.of(vars.at(names[i]));
          std::copy(gi.values().begin(), gi.values().end(),
                    flat_grad.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
        }
        grads[b] = std::move(flat_grad);
      });
      std::vector<double> mean(flat.size(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        batch_loss += losses[b];
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += grads[b][k];
      }
      for (double& v : mean) v /= static_cast<double>(count);
      bool finite = std::isfinite(batch_loss);
      for (double v : mean) finite = finite && std::isfinite(v);
      if (!finite) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch + 1) +
                              " at batch starting with utterance " + dataset[order[start]].id +
                              " (batch loss " + std::to_string(batch_loss) + ")");
      }
      epoch_loss += batch_loss;
      adam.step(flat, mean, config.lr);
      for (std::size_t i = 0; i < names.size(); ++i) {
        Tensor& t = out.parameters.at(names[i]);
        t = Tensor(t.shape(), std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                                                  flat.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1])));
      }
    }
    const EpochStats stats{epoch + 1, epoch_loss / static_cast<double>(dataset.size())};
    if (history != nullptr) history->push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  check_finite(out.parameters);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::string out = "UPTB1";
  const std::string config = model_config_to_json(model.config).dump();
  put<std::uint64_t>(out, config.size());
  out += config;
  put<std::uint64_t>(out, model.parameters.size());
  for (const auto& [name, t] : model.parameters) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put<std::uint64_t>(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path.string());
  if (r.str(5, "magic") != "UPTB1") throw FormatError(path.string() + ": not a UPTB1 checkpoint");
  const auto config_len = r.get<std::uint64_t>("config length");
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(r.str(config_len, "config")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad config JSON: " + e.what());
  }
  Model m = build_model(config);
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != m.parameters.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(m.parameters.size()) +
                      " parameters, found " + std::to_string(count));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    const std::string name = r.str(name_len, "parameter name");
    auto it = m.parameters.find(name);
    if (it == m.parameters.end()) throw FormatError(path.string() + ": unexpected parameter '" + name + "'");
    const auto rank = r.get<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>("parameter shape"));
    if (shape != it->second.shape()) {
      throw FormatError(path.string() + ": parameter '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(it->second.shape()));
    }
    std::vector<double> v(shape_size(shape));
    for (double& x : v) {
      const auto bits = r.get<std::uint64_t>("parameter values");
      std::memcpy(&x, &bits, sizeof x);
      if (!std::isfinite(x)) throw FormatError(path.string() + ": parameter '" + name + "' is not finite");
    }
    it->second = Tensor(shape, std::move(v));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after parameters");
  return m;
}

}  // namespace uptb
