#include <cmath>
#include <random>

#include "doctest.h"
#include "uptb/attack.hpp"

using namespace uptb;

namespace {

ModelConfig tiny_config(Arch arch) {
  ModelConfig c;
  c.encoder_hidden = 6;
  c.embedding_dim = 4;
  c.vocabulary = {"zero", "one", "two"};
  c.features.sample_rate = 4000;
  c.features.num_mels = 8;
  c.seed = 11;
  c = ModelConfig::for_arch(arch, c);
  if (c.decoder_hidden) c.decoder_hidden = 5;
  if (c.attention_dim) c.attention_dim = 4;
  if (c.joint_dim) c.joint_dim = 6;
  return c;
}

const Arch kArchs[] = {Arch::attention, Arch::ctc, Arch::rnnt};

std::vector<Utterance> corpus(int count) {
  CorpusConfig cc;
  cc.vocabulary = {"zero", "one", "two"};
  cc.sample_rate = 4000;
  cc.max_words = 2;
  cc.train_count = count;
  cc.test_count = 1;
  cc.seed = 3;
  return generate_corpus(cc).train;
}

AttackConfig quick_config() {
  AttackConfig c;
  c.steps = 6;
  c.batch_size = 2;
  c.lr = 50.0;
  c.perturbation_seconds = 0.05;
  c.seed = 2;
  return c;
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor random_signal(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(-40000.0, 40000.0);
  std::vector<double> v(n);
  for (double& x : v) x = std::round(d(rng));
  return Tensor::vector(v);
}

}  // namespace

TEST_CASE("perturbation operators on small examples") {
  using M = PerturbationMode;
  CHECK(values_of(apply_perturbation(Tensor::vector({10}), M::additive, Tensor::vector({1, 2, 3}))) ==
        std::vector<double>{11, 2, 3});
  CHECK(values_of(apply_perturbation(Tensor::vector({9}), M::prepend, Tensor::vector({1, 2}))) ==
        std::vector<double>{9, 1, 2});
  CHECK(values_of(apply_perturbation(Tensor::vector({1, 1, 1}), M::additive, Tensor::vector({5}))) ==
        std::vector<double>{6});
  CHECK(values_of(apply_perturbation(Tensor::vector({1, 2}), M::additive, Tensor::vector({5, 5}))) ==
        std::vector<double>{6, 7});

  const Perturbation p{Tensor::vector({4, 4}), M::prepend, 10.0, 4000};
  CHECK(values_of(apply_perturbation(p, Tensor::vector({1}))) == std::vector<double>{4, 4, 1});
  CHECK(p.duration_seconds() == doctest::Approx(0.0005));
  CHECK_THROWS_AS(apply_perturbation(Tensor::zeros({2, 2}), M::prepend, Tensor::vector({1})), ShapeError);
}

TEST_CASE("mode names round-trip") {
  for (auto m : {PerturbationMode::additive, PerturbationMode::prepend}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_mode("overlay"), ConfigError);
}

TEST_CASE("prepend leaves the utterance suffix bitwise intact") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor delta = random_signal(rng, 1 + rng() % 40);
    const Tensor x = random_signal(rng, 1 + rng() % 40);
    const Tensor y = apply_perturbation(delta, PerturbationMode::prepend, x);
    REQUIRE(y.size() == delta.size() + x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[delta.size() + i] == x[i]);
    for (std::size_t i = 0; i < delta.size(); ++i) CHECK(y[i] == delta[i]);
  }
}

TEST_CASE("additive output has the utterance length and adds the overlapping prefix") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor delta = random_signal(rng, 1 + rng() % 40);
    const Tensor x = random_signal(rng, 1 + rng() % 40);
    const Tensor y = apply_perturbation(delta, PerturbationMode::additive, x);
    REQUIRE(y.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(y[i] == x[i] + (i < delta.size() ? delta[i] : 0.0));
    }
  }
}

TEST_CASE("the operator is differentiable in delta with unit or zero slopes") {
  for (auto mode : {PerturbationMode::additive, PerturbationMode::prepend}) {
    Tape tape;
    const Tensor d = tape.variable(Tensor::vector({1, 2, 3, 4}));
    const Tensor y = apply_perturbation(d, mode, Tensor::vector({7, 7}));
    const Tensor g = tape.backward(sum(y)).of(d);
    const std::vector<double> expected = mode == PerturbationMode::prepend
                                             ? std::vector<double>{1, 1, 1, 1}
                                             : std::vector<double>{1, 1, 0, 0};
    CHECK(values_of(g) == expected);
  }
}

TEST_CASE("projection clamps elementwise and is idempotent") {
  CHECK(values_of(project_linf(Tensor::vector({40000, -40000}), 32768)) == std::vector<double>{32768, -32768});
  const Tensor inside = Tensor::vector({3, -2.5, 0});
  CHECK(values_of(project_linf(inside, 4)) == values_of(inside));
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor d = random_signal(rng, 20);
    const double eps = 1.0 + static_cast<double>(rng() % 50000);
    const Tensor once = project_linf(d, eps);
    CHECK(values_of(project_linf(once, eps)) == values_of(once));
    for (double v : once.values()) CHECK(std::abs(v) <= eps);
  }
  CHECK_THROWS_AS(project_linf(inside, 0.0), ContractError);
}

TEST_CASE("attack config validation and learning-rate schedule") {
  AttackConfig c;
  c.steps = 10;
  c.lr = 2.0;
  c.decay_rate = 0.5;
  CHECK(c.decay_start() == 5);
  CHECK(c.lr_at(0) == 2.0);
  CHECK(c.lr_at(4) == 2.0);
  CHECK(c.lr_at(5) == doctest::Approx(1.0));
  CHECK(c.lr_at(7) == doctest::Approx(0.25));
  c.decay_after = 0;
  CHECK(c.lr_at(0) == doctest::Approx(1.0));

  auto invalid = [](auto mutate) {
    AttackConfig bad;
    mutate(bad);
    return bad;
  };
  CHECK_THROWS_AS(invalid([](AttackConfig& b) { b.steps = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(invalid([](AttackConfig& b) { b.batch_size = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(invalid([](AttackConfig& b) { b.decay_rate = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(invalid([](AttackConfig& b) { b.decay_rate = 1.5; }).validate(), ConfigError);
  CHECK_THROWS_AS(invalid([](AttackConfig& b) { b.epsilon = -1.0; }).validate(), ConfigError);
  CHECK_NOTHROW(invalid([](AttackConfig& b) { b.decay_rate = 1.0; }).validate());
}

TEST_CASE("lr 0 keeps delta at its zero initialization") {
  const auto data = corpus(3);
  AttackConfig cfg = quick_config();
  cfg.steps = 1;
  cfg.lr = 0.0;
  for (Arch a : kArchs) {
    const Model m = build_model(tiny_config(a));
    const auto target = m.tokenizer.encode("two");
    for (auto mode : {PerturbationMode::additive, PerturbationMode::prepend}) {
      const auto check_zero = [](const AttackResult& r) {
        for (double v : r.perturbation.samples.values()) CHECK(v == 0.0);
        CHECK(r.loss_curve.size() == 1);
      };
      check_zero(learn_universal(m, data, target, mode, cfg));
      check_zero(learn_per_utterance(m, data[0], target, mode, cfg));
      check_zero(learn_untargeted(m, data, mode, cfg));
    }
  }
}

TEST_CASE("perturbation lengths follow the mode") {
  const auto data = corpus(2);
  const Model m = build_model(tiny_config(Arch::ctc));
  AttackConfig cfg = quick_config();
  cfg.steps = 1;
  const auto target = m.tokenizer.encode("one");
  const auto uni = learn_universal(m, data, target, PerturbationMode::additive, cfg);
  CHECK(uni.perturbation.samples.size() == 200);
  CHECK(uni.perturbation.sample_rate == 4000);
  CHECK(uni.perturbation.mode == PerturbationMode::additive);
  const auto own = learn_per_utterance(m, data[1], target, PerturbationMode::additive, cfg);
  CHECK(own.perturbation.samples.size() == data[1].waveform.size());
  const auto pre = learn_per_utterance(m, data[1], target, PerturbationMode::prepend, cfg);
  CHECK(pre.perturbation.samples.size() == 200);
}

TEST_CASE("attacks are bitwise deterministic under a fixed seed") {
  const auto data = corpus(5);
  for (Arch a : kArchs) {
    const Model m = build_model(tiny_config(a));
    const auto target = m.tokenizer.encode("zero two");
    const AttackConfig cfg = quick_config();
    const auto r1 = learn_universal(m, data, target, PerturbationMode::prepend, cfg);
    const auto r2 = learn_universal(m, data, target, PerturbationMode::prepend, cfg);
    CHECK(values_of(r1.perturbation.samples) == values_of(r2.perturbation.samples));
    CHECK(r1.loss_curve == r2.loss_curve);
    const auto u1 = learn_untargeted(m, data, PerturbationMode::additive, cfg);
    const auto u2 = learn_untargeted(m, data, PerturbationMode::additive, cfg);
    CHECK(values_of(u1.perturbation.samples) == values_of(u2.perturbation.samples));
  }
}

TEST_CASE("the L-infinity bound holds after every step") {
  const auto data = corpus(4);
  const Model m = build_model(tiny_config(Arch::attention));
  const auto target = m.tokenizer.encode("one");
  for (double eps : {5.0, 60.0, 32768.0}) {
    AttackConfig cfg = quick_config();
    cfg.epsilon = eps;
    cfg.lr = 100.0;
    cfg.steps = 8;
    int steps_seen = 0;
    double largest = 0.0;
    AttackHooks hooks;
    hooks.on_step = [&](const StepInfo& info, const Tensor& delta) {
      CHECK(info.step == steps_seen++);
      CHECK(info.lr == cfg.lr_at(info.step));
      for (double v : delta.values()) {
        CHECK(std::abs(v) <= eps);
        largest = std::max(largest, std::abs(v));
      }
    };
    learn_universal(m, data, target, PerturbationMode::prepend, cfg, hooks);
    CHECK(steps_seen == 8);
    if (eps < 100.0) CHECK(largest == eps);  // the bound binds for small eps
  }
}

TEST_CASE("an initial delta is projected and its shape is checked") {
  const auto data = corpus(2);
  const Model m = build_model(tiny_config(Arch::ctc));
  AttackConfig cfg = quick_config();
  cfg.steps = 1;
  cfg.lr = 0.0;
  cfg.epsilon = 10.0;
  AttackHooks hooks;
  hooks.initial_delta = Tensor::filled({200}, 25.0);
  const auto r = learn_universal(m, data, m.tokenizer.encode("one"), PerturbationMode::prepend, cfg, hooks);
  for (double v : r.perturbation.samples.values()) CHECK(v == 10.0);
  hooks.initial_delta = Tensor::zeros({7});
  CHECK_THROWS_AS(learn_universal(m, data, m.tokenizer.encode("one"), PerturbationMode::prepend, cfg, hooks),
                  ShapeError);
}

TEST_CASE("attacks reject mismatched targets and inputs") {
  auto data = corpus(2);
  const Model m = build_model(tiny_config(Arch::ctc));
  const AttackConfig cfg = quick_config();
  CHECK_THROWS_AS(learn_universal(m, data, LabelSequence({0}, 10), PerturbationMode::prepend, cfg),
                  ContractError);
  CHECK_THROWS_AS(learn_universal(m, {}, m.tokenizer.encode("one"), PerturbationMode::prepend, cfg),
                  ContractError);
  data[0].sample_rate = 8000;
  CHECK_THROWS_AS(learn_universal(m, data, m.tokenizer.encode("one"), PerturbationMode::prepend, cfg),
                  ConfigError);
}

TEST_CASE("the empty target is a valid attack goal") {
  const auto data = corpus(2);
  const Model m = build_model(tiny_config(Arch::rnnt));
  const auto r = learn_universal(m, data, m.tokenizer.encode(""), PerturbationMode::prepend, quick_config());
  for (double v : r.loss_curve) CHECK(std::isfinite(v));
}

TEST_CASE("targeted descent lowers and untargeted ascent raises the loss") {
  const auto data = corpus(1);
  const Model m = build_model(tiny_config(Arch::ctc));
  AttackConfig cfg = quick_config();
  cfg.steps = 150;
  cfg.batch_size = 1;
  cfg.lr = 40.0;
  cfg.decay_rate = 0.98;
  const auto target = m.tokenizer.encode("two two");
  const auto r = learn_universal(m, data, target, PerturbationMode::prepend, cfg);
  const std::size_t n = r.loss_curve.size(), tail = n / 10;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < tail; ++i) {
    first += r.loss_curve[n - 2 * tail + i];
    last += r.loss_curve[n - tail + i];
  }
  // Averaged over the final tenth, the curve no longer rises.
  CHECK(last <= first + 1e-9 * std::abs(first));
  CHECK(r.loss_curve.back() < r.loss_curve.front());

  const auto truth = m.tokenizer.encode(data[0].transcript);
  const double clean = model_loss(m, data[0].waveform, truth).item();
  const auto u = learn_untargeted(m, data, PerturbationMode::additive, cfg);
  CHECK(model_loss(m, apply_perturbation(u.perturbation, data[0].waveform), truth).item() > clean);
}
