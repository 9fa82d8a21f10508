#include "uptb/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <utility>

#include "CLI11.hpp"
#include "json.hpp"
#include "uptb/attack.hpp"
#include "uptb/config.hpp"
#include "uptb/dataio.hpp"
#include "uptb/errors.hpp"
#include "uptb/metrics.hpp"
#include "uptb/models.hpp"
#include "uptb/parallel.hpp"

namespace uptb {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct SharedOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool json = false;
};

struct Context {
  SharedOptions shared;
  ExperimentConfig config;
  std::ostream& out;
  bool human() const { return !shared.json; }
};

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Shortest text that reads back as the same double.
std::string exact(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

void ensure_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
}

void refuse_overwrite(const fs::path& p, bool force) {
  if (!force && fs::exists(p)) {
    throw IoError(p.string() + " already exists; pass --force to overwrite");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("failed writing " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<Utterance> load_split(const fs::path& corpus, const char* split) {
  return read_manifest(corpus / split / "manifest.jsonl");
}

void check_rate(const Model& model, const std::vector<Utterance>& utts, const std::string& what) {
  for (const auto& u : utts) {
    if (u.sample_rate != model.config.features.sample_rate) {
      throw ConfigError(what + " utterance " + u.id + " has sample rate " + std::to_string(u.sample_rate) +
                        ", model expects " + std::to_string(model.config.features.sample_rate));
    }
  }
}

// Transcripts of every utterance, computed in parallel, in input order.
std::vector<std::string> transcribe_all(const Model& model, const std::vector<Tensor>& inputs,
                                        const DecodeOptions& options) {
  std::vector<std::string> out(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { out[i] = transcribe(model, inputs[i], options); });
  return out;
}

// ---------------------------------------------------------------- datagen

struct DatagenOptions {
  std::string out;
};

void cmd_datagen(Context& ctx, const DatagenOptions& opt) {
  CorpusConfig cfg = ctx.config.corpus;
  if (ctx.shared.seed) cfg.seed = *ctx.shared.seed;
  const fs::path dir = opt.out.empty() ? fs::path(ctx.config.paths.corpus) : fs::path(opt.out);
  for (const char* split : {"train", "test"}) refuse_overwrite(dir / split, ctx.shared.force);
  const Corpus corpus = generate_corpus(cfg);
  for (const char* split : {"train", "test"}) {
    std::error_code ec;
    fs::remove_all(dir / split, ec);
  }
  write_split(dir / "train", corpus.train);
  write_split(dir / "test", corpus.test);
  if (ctx.human()) {
    ctx.out << "wrote " << corpus.train.size() << " train and " << corpus.test.size() << " test utterances to "
            << dir.string() << '\n';
  } else {
    ctx.out << ordered_json{{"corpus", dir.string()},
                            {"train", corpus.train.size()},
                            {"test", corpus.test.size()}}
                   .dump()
            << '\n';
  }
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string arch;
  std::string corpus;
  std::string out;
};

void cmd_train(Context& ctx, const TrainOptions& opt) {
  ExperimentConfig& cfg = ctx.config;
  if (!opt.arch.empty()) cfg.model.arch = parse_arch(opt.arch);
  if (ctx.shared.seed) cfg.model.seed = cfg.training.seed = *ctx.shared.seed;
  const fs::path corpus = opt.corpus.empty() ? fs::path(cfg.paths.corpus) : fs::path(opt.corpus);
  const fs::path out = opt.out.empty() ? fs::path(cfg.paths.checkpoints) / (arch_name(cfg.model.arch) + ".ckpt")
                                       : fs::path(opt.out);
  refuse_overwrite(out, ctx.shared.force);

  const auto train_set = load_split(corpus, "train");
  const auto test_set = load_split(corpus, "test");
  const Model init = build_model(cfg.model_config());
  check_rate(init, train_set, "train");
  check_rate(init, test_set, "test");

  std::vector<EpochStats> history;
  const Model model = train(init, train_set, cfg.training, &history, [&](const EpochStats& s) {
    if (ctx.human()) ctx.out << "epoch " << s.epoch << " loss " << fixed(s.mean_loss, 6) << '\n' << std::flush;
  });
  ensure_parent(out);
  save_checkpoint(out, model);

  std::vector<Tensor> inputs;
  std::vector<std::string> refs;
  for (const auto& u : test_set) {
    inputs.push_back(u.waveform);
    refs.push_back(u.transcript);
  }
  const auto hyps = transcribe_all(model, inputs, {});
  const double test_wer = test_set.empty() ? 0.0 : corpus_wer(refs, hyps);
  if (ctx.human()) {
    ctx.out << "test WER " << fixed(test_wer, 6) << " over " << test_set.size() << " utterances\n"
            << "checkpoint " << out.string() << '\n';
  } else {
    ordered_json losses = ordered_json::array();
    for (const auto& h : history) losses.push_back(h.mean_loss);
    ctx.out << ordered_json{{"arch", arch_name(cfg.model.arch)},
                            {"checkpoint", out.string()},
                            {"epoch_loss", losses},
                            {"test_wer", test_wer},
                            {"test_count", test_set.size()}}
                   .dump()
            << '\n';
  }
}

// ---------------------------------------------------------------- attack

struct AttackOptions {
  std::string checkpoint;
  std::string corpus;
  std::string mode;
  std::optional<std::string> target;
  std::vector<double> epsilons;
  std::optional<int> steps;
  std::optional<double> lr;
  bool per_utterance = false;
  std::string utterance;
  bool untargeted = false;
  std::string resume;
  std::string out;
};

std::string epsilon_tag(double eps) {
  return eps == std::floor(eps) ? std::to_string(static_cast<long long>(eps)) : exact(eps);
}

struct LoadedPerturbation {
  Perturbation p;
  ordered_json sidecar;
};

LoadedPerturbation load_perturbation(const std::string& prefix) {
  LoadedPerturbation lp;
  const fs::path side = prefix + ".json";
  try {
    lp.sidecar = ordered_json::parse(read_text(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  const WavData wav = read_wav(prefix + ".wav");
  try {
    lp.p.mode = parse_mode(lp.sidecar.at("mode").get<std::string>());
    lp.p.epsilon = lp.sidecar.at("epsilon").get<double>();
    lp.p.sample_rate = lp.sidecar.at("sample_rate").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  if (lp.p.sample_rate != wav.sample_rate) {
    throw FormatError(side.string() + ": sample_rate " + std::to_string(lp.p.sample_rate) +
                      " disagrees with the WAV header (" + std::to_string(wav.sample_rate) + ")");
  }
  lp.p.samples = wav.samples;
  return lp;
}

void cmd_attack(Context& ctx, const AttackOptions& opt) {
  ExperimentConfig& cfg = ctx.config;
  AttackConfig acfg = cfg.attack;
  if (!opt.mode.empty()) acfg.mode = parse_mode(opt.mode);
  if (opt.target) acfg.target = *opt.target;
  if (opt.steps) acfg.steps = *opt.steps;
  if (opt.lr) acfg.lr = *opt.lr;
  if (ctx.shared.seed) acfg.seed = *ctx.shared.seed;
  if (opt.untargeted) acfg.target.clear();
  if (opt.per_utterance && opt.untargeted) throw ConfigError("--per-utterance and --untargeted are exclusive");
  std::vector<double> epsilons = opt.epsilons.empty() ? std::vector<double>{acfg.epsilon} : opt.epsilons;
  if (opt.out.empty()) throw ConfigError("attack requires --out PREFIX");

  const fs::path ckpt = opt.checkpoint.empty()
                            ? fs::path(cfg.paths.checkpoints) / (arch_name(cfg.model.arch) + ".ckpt")
                            : fs::path(opt.checkpoint);
  const Model model = load_checkpoint(ckpt);
  const int rate = model.config.features.sample_rate;
  const LabelSequence target = model.tokenizer.encode(acfg.target);

  const fs::path corpus = opt.corpus.empty() ? fs::path(cfg.paths.corpus) : fs::path(opt.corpus);
  const auto train_set = load_split(corpus, "train");
  check_rate(model, train_set, "train");
  const Utterance* single = nullptr;
  std::vector<Utterance> test_set;
  if (opt.per_utterance) {
    test_set = load_split(corpus, "test");
    if (opt.utterance.empty()) {
      if (train_set.empty()) throw ConfigError("training split of " + corpus.string() + " is empty");
      single = &train_set.front();
    } else {
      for (const std::vector<Utterance>* split : {&train_set, &std::as_const(test_set)}) {
        for (const auto& u : *split) {
          if (u.id == opt.utterance) single = &u;
        }
      }
      if (!single) throw ConfigError("no utterance with id '" + opt.utterance + "' in " + corpus.string());
    }
    check_rate(model, {*single}, "selected");
  } else if (train_set.empty()) {
    throw ConfigError("training split of " + corpus.string() + " is empty");
  }

  AttackHooks hooks;
  if (!opt.resume.empty()) {
    const auto prior = load_perturbation(opt.resume);
    if (prior.p.mode != acfg.mode) {
      throw ConfigError("--resume perturbation is " + mode_name(prior.p.mode) + ", attack mode is " +
                        mode_name(acfg.mode));
    }
    if (prior.p.sample_rate != rate) throw ConfigError("--resume perturbation sample rate differs from the model's");
    hooks.initial_delta = prior.p.samples;
  }

  ordered_json summary = ordered_json::array();
  for (double eps : epsilons) {
    AttackConfig run = acfg;
    run.epsilon = eps;
    run.validate();
    const std::string prefix = epsilons.size() == 1 ? opt.out : opt.out + "-eps" + epsilon_tag(eps);
    for (const char* ext : {".wav", ".json", ".loss.csv"}) refuse_overwrite(prefix + ext, ctx.shared.force);

    AttackResult result;
    if (opt.untargeted) {
      result = learn_untargeted(model, train_set, run.mode, run, hooks);
    } else if (single) {
      result = learn_per_utterance(model, *single, target, run.mode, run, hooks);
    } else {
      result = learn_universal(model, train_set, target, run.mode, run, hooks);
    }

    const fs::path wav = prefix + ".wav";
    ensure_parent(wav);
    write_wav(wav, result.perturbation.samples, rate);
    // The sidecar describes what was written: stats come from the stored
    // int16 samples, not the solver's doubles.
    const Tensor stored = read_wav(wav).samples;
    double peak = 0.0;
    for (double v : stored.values()) peak = std::max(peak, std::abs(v));

    std::ostringstream csv;
    csv << "step,lr,loss\n" << std::setprecision(10);
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      csv << i << ',' << run.lr_at(static_cast<int>(i)) << ',' << result.loss_curve[i] << '\n';
    }
    write_text(prefix + ".loss.csv", csv.str());

    ordered_json side{{"mode", mode_name(run.mode)},
                      {"epsilon", eps},
                      {"sample_rate", rate},
                      {"samples", stored.size()},
                      {"max_abs", peak},
                      {"target", opt.untargeted ? std::string() : canonicalize(run.target)},
                      {"untargeted", opt.untargeted},
                      {"per_utterance", single ? ordered_json(single->id) : ordered_json(nullptr)},
                      {"arch", arch_name(model.arch())},
                      {"steps", run.steps},
                      {"lr", run.lr},
                      {"batch_size", run.batch_size},
                      {"seed", run.seed},
                      {"resumed_from", opt.resume.empty() ? ordered_json(nullptr) : ordered_json(opt.resume)},
                      {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()}};
    write_text(prefix + ".json", side.dump(2) + "\n");

    if (ctx.human()) {
      ctx.out << "epsilon " << epsilon_tag(eps) << ": " << stored.size() << " samples, max|delta| "
              << fixed(peak, 0) << ", final loss " << fixed(side["final_loss"].get<double>(), 6) << " -> "
              << wav.string() << '\n';
    }
    side["prefix"] = prefix;
    summary.push_back(side);
  }
  if (!ctx.human()) ctx.out << ordered_json{{"perturbations", summary}}.dump() << '\n';
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::string checkpoint;
  std::string corpus;
  std::string perturbation;
  std::optional<std::string> target;
  bool silence_baseline = false;
  bool dump_attention = false;
  std::optional<double> bin_width;
  int beam = 1;
  std::string out;
};

void cmd_evaluate(Context& ctx, const EvaluateOptions& opt) {
  ExperimentConfig& cfg = ctx.config;
  const double bin_width = opt.bin_width.value_or(cfg.metrics.bin_width);
  if (!(bin_width > 0.0)) throw ConfigError("--bin-width must be positive");
  const fs::path ckpt = opt.checkpoint.empty()
                            ? fs::path(cfg.paths.checkpoints) / (arch_name(cfg.model.arch) + ".ckpt")
                            : fs::path(opt.checkpoint);
  const Model model = load_checkpoint(ckpt);
  const int rate = model.config.features.sample_rate;
  if (opt.dump_attention && model.arch() != Arch::attention) {
    throw ConfigError("--dump-attention needs an attention model, checkpoint is " + arch_name(model.arch()));
  }
  const DecodeOptions decode_opts{opt.beam, 4};
  if (model.arch() == Arch::attention && (opt.beam < 1 || opt.beam > 4)) {
    throw ConfigError("--beam must be in 1..4");
  }

  std::optional<Perturbation> pert;
  std::string target = canonicalize(cfg.attack.target);
  if (!opt.perturbation.empty()) {
    const auto lp = load_perturbation(opt.perturbation);
    if (lp.p.sample_rate != rate) {
      throw ConfigError("perturbation sample rate " + std::to_string(lp.p.sample_rate) + " differs from the model's " +
                        std::to_string(rate));
    }
    pert = lp.p;
    if (lp.sidecar.contains("target")) target = lp.sidecar["target"].get<std::string>();
  }
  if (opt.target) target = canonicalize(*opt.target);
  if (opt.silence_baseline) {
    const auto n = pert ? pert->samples.size()
                        : static_cast<std::size_t>(std::llround(cfg.attack.perturbation_seconds * rate));
    if (n == 0) throw ConfigError("silence baseline length is zero");
    pert = Perturbation{Tensor::zeros({n}), PerturbationMode::prepend, 32768.0, rate};
  }

  const fs::path corpus = opt.corpus.empty() ? fs::path(cfg.paths.corpus) : fs::path(opt.corpus);
  const auto test_set = load_split(corpus, "test");
  if (test_set.empty()) throw ConfigError("test split of " + corpus.string() + " is empty");
  check_rate(model, test_set, "test");

  const fs::path prefix = opt.out.empty() ? fs::path(cfg.paths.reports) / "report" : fs::path(opt.out);
  std::vector<std::string> outputs = {".csv", ".json", ".hist.csv"};
  if (opt.dump_attention) outputs.push_back(".attention.csv");
  for (const auto& ext : outputs) refuse_overwrite(prefix.string() + ext, ctx.shared.force);

  std::vector<UtteranceRecord> records(test_set.size());
  std::vector<Tensor> attacked_inputs(test_set.size());
  parallel_for(test_set.size(), [&](std::size_t i) {
    const Utterance& u = test_set[i];
    UtteranceRecord& r = records[i];
    r.id = u.id;
    r.length_seconds = u.duration_seconds();
    r.reference = canonicalize(u.transcript);
    r.clean_transcript = transcribe(model, u.waveform, decode_opts);
    attacked_inputs[i] = pert ? apply_perturbation(*pert, u.waveform) : u.waveform;
    r.attacked_transcript = pert ? transcribe(model, attacked_inputs[i], decode_opts) : r.clean_transcript;
    if (pert) {
      // The part of delta the listener hears: all of it when prepended,
      // the overlapping stretch when added.
      const Tensor heard = pert->mode == PerturbationMode::prepend
                               ? pert->samples
                               : apply_perturbation(pert->samples, PerturbationMode::additive,
                                                    Tensor::zeros(u.waveform.shape()));
      try {
        r.distortion_db = distortion_db(heard, u.waveform);
      } catch (const DomainError&) {
        r.distortion_db.reset();
      }
    }
  });

  const AttackReport report = make_report(records, target);
  const auto bins = success_by_length(report, bin_width);
  write_text(prefix.string() + ".csv", report_csv(report));
  ordered_json j = report_json(report);
  j["bin_width"] = bin_width;
  j["perturbation"] = opt.perturbation.empty() ? ordered_json(nullptr) : ordered_json(opt.perturbation);
  j["silence_baseline"] = opt.silence_baseline;
  write_text(prefix.string() + ".json", j.dump(2) + "\n");
  write_text(prefix.string() + ".hist.csv", histogram_csv(bins));

  if (opt.dump_attention) {
    std::vector<std::string> blocks(test_set.size());
    parallel_for(test_set.size(), [&](std::size_t i) {
      const Tensor map = attention_map(model, attacked_inputs[i]);
      const std::size_t rows = map.shape()[0], cols = map.shape()[1];
      const auto w = map.values();
      std::ostringstream s;
      s << std::setprecision(8);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) s << test_set[i].id << ',' << r << ',' << c << ',' << w[r * cols + c] << '\n';
      }
      blocks[i] = s.str();
    });
    // Rows follow the report's id order.
    std::vector<std::size_t> order(test_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return test_set[a].id < test_set[b].id; });
    std::string text = "id,step,frame,weight\n";
    for (auto i : order) text += blocks[i];
    write_text(prefix.string() + ".attention.csv", text);
  }

  if (ctx.human()) {
    ctx.out << "utterances        " << report.records.size() << '\n'
            << "target            \"" << report.target << "\"\n"
            << "success rate      " << fixed(report.success_rate, 4) << '\n'
            << "mean distortion   "
            << (report.mean_distortion_db ? fixed(*report.mean_distortion_db, 2) + " dB" : std::string("n/a")) << '\n'
            << "clean WER         " << fixed(report.clean_wer, 4) << '\n'
            << "attacked WER      " << fixed(report.attacked_wer, 4) << '\n'
            << "success by length (bin " << bin_width << " s)\n";
    for (const auto& b : bins) {
      ctx.out << "  [" << fixed(b.lower, 2) << ", " << fixed(b.upper, 2) << ")  " << b.successes << '/' << b.count
              << "  " << fixed(b.success_rate, 3) << '\n';
    }
    ctx.out << "report " << prefix.string() << ".csv\n";
  } else {
    j.erase("records");
    j["report"] = prefix.string() + ".csv";
    ctx.out << j.dump() << '\n';
  }
}

void add_shared(CLI::App& app, SharedOptions& s) {
  app.add_option("--config", s.config, "Experiment config JSON");
  app.add_option("--seed", s.seed, "Override the command's seeds");
  app.add_flag("--force", s.force, "Overwrite existing outputs");
  app.add_flag("--json", s.json, "Machine-readable output and errors");
}

void report_error(std::ostream& err, bool json, const std::string& kind, const std::string& message) {
  if (json) {
    err << ordered_json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  } else {
    err << "error: " << message << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const bool json_errors = std::find(args.begin(), args.end(), "--json") != args.end();
  CLI::App app{"Universal adversarial perturbations against toy end-to-end recognizers", "uptb"};
  app.require_subcommand(1);
  SharedOptions shared;

  DatagenOptions dg;
  auto* datagen = app.add_subcommand("datagen", "Generate the synthetic corpus");
  add_shared(*datagen, shared);
  datagen->add_option("--out", dg.out, "Corpus directory (default: paths.corpus)");

  TrainOptions tr;
  auto* trainer = app.add_subcommand("train", "Train one recognizer");
  add_shared(*trainer, shared);
  trainer->add_option("--arch", tr.arch, "attention | ctc | rnnt (default: model.arch)");
  trainer->add_option("--corpus", tr.corpus, "Corpus directory");
  trainer->add_option("--out", tr.out, "Checkpoint path (default: paths.checkpoints/ARCH.ckpt)");

  AttackOptions at;
  auto* attacker = app.add_subcommand("attack", "Learn a perturbation");
  add_shared(*attacker, shared);
  attacker->add_option("--checkpoint", at.checkpoint, "Model checkpoint");
  attacker->add_option("--corpus", at.corpus, "Corpus directory");
  attacker->add_option("--mode", at.mode, "additive | prepend");
  attacker->add_option("--target", at.target, "Target transcript; may be empty");
  attacker->add_option("--epsilon", at.epsilons, "L-infinity budget; a comma list runs a sweep")->delimiter(',');
  attacker->add_option("--steps", at.steps, "Solver steps");
  attacker->add_option("--lr", at.lr, "Adam learning rate");
  attacker->add_flag("--per-utterance", at.per_utterance, "Fit a single utterance");
  attacker->add_option("--utterance", at.utterance, "Utterance id for --per-utterance");
  attacker->add_flag("--untargeted", at.untargeted, "Maximize the loss of the true transcripts");
  attacker->add_option("--resume", at.resume, "Start from PREFIX.wav of an earlier run");
  attacker->add_option("--out", at.out, "Output prefix for .wav, .json and .loss.csv")->required();

  EvaluateOptions ev;
  auto* evaluator = app.add_subcommand("evaluate", "Transcribe the test split with and without a perturbation");
  add_shared(*evaluator, shared);
  evaluator->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  evaluator->add_option("--corpus", ev.corpus, "Corpus directory");
  evaluator->add_option("--perturbation", ev.perturbation, "Prefix of an attack's outputs");
  evaluator->add_option("--target", ev.target, "Override the target transcript");
  evaluator->add_flag("--silence-baseline", ev.silence_baseline, "Prepend zeros instead of the perturbation");
  evaluator->add_flag("--dump-attention", ev.dump_attention, "Write attention weights (attention models)");
  evaluator->add_option("--bin-width", ev.bin_width, "Length histogram bin width in seconds");
  evaluator->add_option("--beam", ev.beam, "Beam width for attention models, 1..4");
  evaluator->add_option("--out", ev.out, "Report prefix (default: paths.reports/report)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0 || !json_errors) return app.exit(e, out, err) == 0 ? 0 : 2;
    report_error(err, true, "usage", e.what());
    return 2;
  }

  try {
    Context ctx{shared, shared.config.empty() ? ExperimentConfig{} : load_experiment(shared.config), out};
    ctx.config.validate();
    if (datagen->parsed()) cmd_datagen(ctx, dg);
    if (trainer->parsed()) cmd_train(ctx, tr);
    if (attacker->parsed()) cmd_attack(ctx, at);
    if (evaluator->parsed()) cmd_evaluate(ctx, ev);
  } catch (const Error& e) {
    report_error(err, shared.json, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, shared.json, "internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace uptb
