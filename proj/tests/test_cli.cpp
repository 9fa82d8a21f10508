#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "uptb/cli.hpp"
#include "uptb/dataio.hpp"
#include "uptb/metrics.hpp"
#include "uptb/models.hpp"

using namespace uptb;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One small experiment shared by every case: corpus, a CTC and an attention
// checkpoint, all under a private temp directory.
struct Workspace {
  fs::path root;
  std::string config;

  Workspace() {
    root = fs::temp_directory_path() / ("uptb_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const json cfg = {
        {"paths", {{"corpus", (root / "corpus").string()},
                   {"checkpoints", (root / "ckpt").string()},
                   {"reports", (root / "reports").string()}}},
        {"features", {{"sample_rate", 4000}, {"window_ms", 25}, {"hop_ms", 10}, {"num_mels", 12}, {"fft_size", 128}}},
        {"corpus", {{"max_words", 2}, {"train_count", 12}, {"test_count", 6}, {"seed", 3}}},
        {"model", {{"encoder_layers", 1}, {"encoder_hidden", 8}, {"decoder_hidden", 8}, {"attention_dim", 4},
                   {"joint_dim", 8}, {"embedding_dim", 4}}},
        {"training", {{"epochs", 2}, {"lr", 0.01}, {"batch", 4}}},
        {"attack", {{"steps", 6}, {"batch_size", 4}, {"lr", 50}, {"perturbation_seconds", 0.1},
                    {"target", "one"}}},
        {"metrics", {{"bin_width", 0.25}}}};
    config = (root / "config.json").string();
    std::ofstream(config) << cfg.dump(2);
    REQUIRE(cli({"datagen", "--config", config}).code == 0);
    REQUIRE(cli({"train", "--config", config, "--arch", "ctc"}).code == 0);
    REQUIRE(cli({"train", "--config", config, "--arch", "attention"}).code == 0);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string path(const std::string& rel) const { return (root / rel).string(); }
  std::string ckpt(const char* arch) const { return path(std::string("ckpt/") + arch + ".ckpt"); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

json error_json(const Run& r) {
  CHECK(r.code != 0);
  return json::parse(r.err);
}

}  // namespace

TEST_CASE("datagen writes the configured counts and refuses to overwrite") {
  auto& w = ws();
  CHECK(read_manifest(w.path("corpus/train/manifest.jsonl")).size() == 12);
  CHECK(read_manifest(w.path("corpus/test/manifest.jsonl")).size() == 6);
  const std::string before = slurp(w.path("corpus/train/003.wav"));

  const Run again = cli({"datagen", "--config", w.config, "--json"});
  CHECK(again.code == 1);
  CHECK(error_json(again)["error"]["kind"] == "io");

  const Run forced = cli({"datagen", "--config", w.config, "--force", "--json"});
  REQUIRE(forced.code == 0);
  CHECK(json::parse(forced.out)["train"] == 12);
  CHECK(slurp(w.path("corpus/train/003.wav")) == before);

  REQUIRE(cli({"datagen", "--config", w.config, "--out", w.path("other"), "--seed", "4"}).code == 0);
  CHECK(slurp(w.path("other/train/003.wav")) != before);
}

TEST_CASE("usage and config errors are machine readable with --json") {
  auto& w = ws();
  CHECK(cli({"train", "--no-such-flag", "--json"}).code == 2);
  CHECK(error_json(cli({"train", "--no-such-flag", "--json"}))["error"]["kind"] == "usage");
  const Run plain = cli({"evaluate", "--config", w.path("absent.json")});
  CHECK(plain.code == 1);
  CHECK(plain.err.rfind("error: ", 0) == 0);

  std::ofstream(w.path("bad.json")) << R"({"model": {"layers": 3}})";
  const json e = error_json(cli({"train", "--config", w.path("bad.json"), "--json"}));
  CHECK(e["error"]["kind"] == "config");
  CHECK(e["error"]["message"].get<std::string>().find("layers") != std::string::npos);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("train reports the WER of its own checkpoint and is deterministic") {
  auto& w = ws();
  const Run r = cli({"train", "--config", w.config, "--arch", "ctc", "--out", w.path("ckpt/ctc2.ckpt"), "--json"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["epoch_loss"].size() == 2);
  CHECK(slurp(w.path("ckpt/ctc2.ckpt")) == slurp(w.ckpt("ctc")));

  const Model m = load_checkpoint(w.ckpt("ctc"));
  std::vector<std::string> refs, hyps;
  for (const auto& u : read_manifest(w.path("corpus/test/manifest.jsonl"))) {
    refs.push_back(u.transcript);
    hyps.push_back(transcribe(m, u.waveform));
  }
  CHECK(j["test_wer"].get<double>() == corpus_wer(refs, hyps));
  CHECK(cli({"train", "--config", w.config, "--arch", "ctc"}).code == 1);  // exists, no --force
}

TEST_CASE("train rejects a corpus with words outside the vocabulary") {
  auto& w = ws();
  fs::create_directories(w.path("foreign/train"));
  fs::create_directories(w.path("foreign/test"));
  write_wav(w.path("foreign/train/a.wav"), Tensor::filled({400}, 3.0), 4000);
  write_manifest(w.path("foreign/train/manifest.jsonl"), {{"a", "a.wav", "banana"}});
  write_manifest(w.path("foreign/test/manifest.jsonl"), {});
  const json e = error_json(cli({"train", "--config", w.config, "--corpus", w.path("foreign"), "--out",
                                 w.path("ckpt/x.ckpt"), "--json"}));
  CHECK(e["error"]["kind"] == "config");
  CHECK(e["error"]["message"].get<std::string>().find("banana") != std::string::npos);
}

TEST_CASE("epsilon sweep writes one bounded perturbation per budget") {
  auto& w = ws();
  const Run r = cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("attention"), "--epsilon",
                     "32768,4000,2000", "--out", w.path("atk/sweep"), "--json"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["perturbations"].size() == 3);
  for (double eps : {32768.0, 4000.0, 2000.0}) {
    const std::string prefix = w.path("atk/sweep-eps" + std::to_string(static_cast<int>(eps)));
    const WavData d = read_wav(prefix + ".wav");
    CHECK(d.samples.size() == 400);  // 0.1 s at 4 kHz
    double peak = 0.0;
    const Tensor s = d.samples;
    for (double v : s.values()) peak = std::max(peak, std::abs(v));
    CHECK(peak <= eps);
    const json side = json::parse(slurp(prefix + ".json"));
    CHECK(side["epsilon"] == eps);
    CHECK(side["max_abs"] == peak);
    CHECK(side["target"] == "one");
    const std::string curve = slurp(prefix + ".loss.csv");
    CHECK(curve.rfind("step,lr,loss\n", 0) == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 7);
  }
}

TEST_CASE("attack accepts an empty target and rejects foreign words") {
  auto& w = ws();
  CHECK(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--target", "", "--out",
             w.path("atk/empty")})
            .code == 0);
  CHECK(json::parse(slurp(w.path("atk/empty.json")))["target"] == "");
  const json e = error_json(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--target",
                                 "one banana", "--out", w.path("atk/bad"), "--json"}));
  CHECK(e["error"]["kind"] == "contract");
  CHECK_FALSE(fs::exists(w.path("atk/bad.wav")));
}

TEST_CASE("attack reruns and resumes are byte identical") {
  auto& w = ws();
  const std::vector<std::string> base = {"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"),
                                         "--mode", "additive", "--force"};
  auto with = [&](std::vector<std::string> extra) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(cli(args).code == 0);
  };
  with({"--out", w.path("det/a")});
  with({"--out", w.path("det/b")});
  CHECK(slurp(w.path("det/a.wav")) == slurp(w.path("det/b.wav")));
  CHECK(slurp(w.path("det/a.loss.csv")) == slurp(w.path("det/b.loss.csv")));

  with({"--resume", w.path("det/a"), "--out", w.path("det/ra")});
  with({"--resume", w.path("det/a"), "--out", w.path("det/rb")});
  CHECK(slurp(w.path("det/ra.wav")) == slurp(w.path("det/rb.wav")));
  CHECK(slurp(w.path("det/ra.loss.csv")) == slurp(w.path("det/rb.loss.csv")));
  CHECK(slurp(w.path("det/ra.loss.csv")) != slurp(w.path("det/a.loss.csv")));

  auto mismatched = base;
  mismatched[6] = "prepend";
  mismatched.insert(mismatched.end(), {"--resume", w.path("det/a"), "--out", w.path("det/x"), "--json"});
  CHECK(error_json(cli(mismatched))["error"]["kind"] == "config");
}

TEST_CASE("per-utterance and untargeted variants") {
  auto& w = ws();
  const auto test = read_manifest(w.path("corpus/test/manifest.jsonl"));
  REQUIRE(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--mode", "additive",
               "--per-utterance", "--utterance", test[2].id, "--out", w.path("pu/a")})
              .code == 0);
  const json side = json::parse(slurp(w.path("pu/a.json")));
  CHECK(side["per_utterance"] == test[2].id);
  CHECK(read_wav(w.path("pu/a.wav")).samples.size() == test[2].waveform.size());
  CHECK(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--per-utterance", "--utterance",
             "nope", "--out", w.path("pu/b")})
            .code == 1);

  REQUIRE(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--untargeted", "--out",
               w.path("pu/u")})
              .code == 0);
  CHECK(json::parse(slurp(w.path("pu/u.json")))["untargeted"] == true);
}

TEST_CASE("evaluate reports match a manual recount and are deterministic") {
  auto& w = ws();
  REQUIRE(cli({"attack", "--config", w.config, "--checkpoint", w.ckpt("attention"), "--out", w.path("ev/p"),
               "--force"})
              .code == 0);
  const std::vector<std::string> args = {"evaluate", "--config", w.config, "--checkpoint", w.ckpt("attention"),
                                         "--perturbation", w.path("ev/p"), "--dump-attention", "--force"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", w.path("ev/r1")});
  b.insert(b.end(), {"--out", w.path("ev/r2"), "--json"});
  REQUIRE(cli(a).code == 0);
  const Run rb = cli(b);
  REQUIRE(rb.code == 0);
  CHECK(slurp(w.path("ev/r1.csv")) == slurp(w.path("ev/r2.csv")));
  CHECK(slurp(w.path("ev/r1.attention.csv")) == slurp(w.path("ev/r2.attention.csv")));

  const json j = json::parse(slurp(w.path("ev/r1.json")));
  REQUIRE(j["records"].size() == 6);
  std::size_t hits = 0;
  for (const auto& r : j["records"]) hits += canonicalize(r["attacked_transcript"].get<std::string>()) == "one";
  CHECK(j["success_rate"].get<double>() == static_cast<double>(hits) / 6.0);
  CHECK(json::parse(rb.out)["success_rate"] == j["success_rate"]);

  std::istringstream hist(slurp(w.path("ev/r1.hist.csv")));
  std::string line;
  std::getline(hist, line);
  std::size_t total = 0;
  while (std::getline(hist, line)) {
    std::istringstream row(line);
    std::string lo, hi, count;
    std::getline(row, lo, ',');
    std::getline(row, hi, ',');
    std::getline(row, count, ',');
    total += std::stoul(count);
  }
  CHECK(total == 6);
}

TEST_CASE("evaluate silence baseline and error cases") {
  auto& w = ws();
  REQUIRE(cli({"evaluate", "--config", w.config, "--checkpoint", w.ckpt("ctc"), "--silence-baseline", "--out",
               w.path("ev/silence"), "--force"})
              .code == 0);
  const json j = json::parse(slurp(w.path("ev/silence.json")));
  CHECK(j["silence_baseline"] == true);
  CHECK(j["mean_distortion_db"].is_null());  // zeros have no peak

  const json e = error_json(cli({"evaluate", "--config", w.config, "--checkpoint", w.ckpt("ctc"),
                                 "--dump-attention", "--out", w.path("ev/x"), "--json"}));
  CHECK(e["error"]["kind"] == "config");

  write_wav(w.path("ev/wrong.wav"), Tensor::filled({10}, 5.0), 8000);
  std::ofstream(w.path("ev/wrong.json")) << R"({"mode":"prepend","epsilon":100,"sample_rate":8000})";
  const json rate = error_json(cli({"evaluate", "--config", w.config, "--checkpoint", w.ckpt("ctc"),
                                    "--perturbation", w.path("ev/wrong"), "--out", w.path("ev/y"), "--json"}));
  CHECK(rate["error"]["kind"] == "config");
  CHECK(rate["error"]["message"].get<std::string>().find("sample rate") != std::string::npos);
}
