#include "uptb/dataio.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "uptb/errors.hpp"

namespace uptb {

namespace fs = std::filesystem;

std::vector<std::string> default_vocabulary() {
  return {"zero", "one", "two",   "three", "four",
          "five", "six", "seven", "eight", "nine"};
}

void CorpusConfig::validate() const {
  if (vocabulary.empty()) throw ConfigError("corpus vocabulary is empty");
  std::set<std::string> seen;
  for (const auto& w : vocabulary) {
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("vocabulary word '" + w + "' must be a nonempty token");
    }
    if (!seen.insert(w).second) throw ConfigError("duplicate vocabulary word '" + w + "'");
  }
  if (sample_rate < 1000) throw ConfigError("corpus sample_rate must be at least 1000");
  if (min_words < 1 || max_words < min_words) {
    throw ConfigError("words-per-utterance range must satisfy 1 <= min <= max");
  }
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
  if (!(amplitude > 0.0) || amplitude * (1.0 + amplitude_jitter) > 32767.0) {
    throw ConfigError("amplitude must be positive and stay within int16 range");
  }
  if (amplitude_jitter < 0.0 || amplitude_jitter >= 1.0) {
    throw ConfigError("amplitude_jitter must be in [0, 1)");
  }
  if (rate_jitter < 0.0 || rate_jitter >= 1.0) throw ConfigError("rate_jitter must be in [0, 1)");
  if (!(segment_ms > 0.0) || gap_ms < 0.0) throw ConfigError("segment_ms must be positive, gap_ms nonnegative");
  if (min_silence_ms < 0.0 || max_silence_ms < min_silence_ms) {
    throw ConfigError("silence range must satisfy 0 <= min <= max");
  }
  if (train_count < 0 || test_count < 0) throw ConfigError("split counts must be nonnegative");
}

std::vector<double> word_tone_pattern(std::size_t word_index,
                                      std::size_t vocabulary_size,
                                      int sample_rate) {
  // Frequencies come from an evenly spaced grid between 10% and 85% of
  // Nyquist; the first segment's grid slot is unique per word.
  const std::size_t grid = std::max<std::size_t>(12, vocabulary_size + 2);
  const double nyquist = sample_rate / 2.0;
  auto slot_hz = [&](std::size_t slot) {
    return nyquist * (0.10 + 0.75 * static_cast<double>(slot % grid) /
                                 static_cast<double>(grid - 1));
  };
  std::vector<double> pattern{slot_hz(word_index)};
  pattern.push_back(slot_hz(word_index * 7 + 3));
  if (word_index % 2 == 1) pattern.push_back(slot_hz(word_index * 5 + 8));
  // Avoid a flat pattern where consecutive segments share a slot.
  for (std::size_t s = 1; s < pattern.size(); ++s) {
    if (pattern[s] == pattern[s - 1]) pattern[s] = slot_hz(word_index * 7 + 9);
  }
  return pattern;
}

namespace {

Utterance synthesize(const CorpusConfig& cfg, const std::string& split,
                     std::size_t index) {
  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed),
                    static_cast<std::uint64_t>(split == "train" ? 1 : 2),
                    static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double sr = cfg.sample_rate;
  const auto ms = [&](double v) { return static_cast<std::size_t>(std::lround(v * sr / 1000.0)); };
  const int words = cfg.min_words + static_cast<int>(unit(rng) * (cfg.max_words - cfg.min_words + 1));
  const double rate = uniform(1.0 - cfg.rate_jitter, 1.0 + cfg.rate_jitter);
  const double amp = cfg.amplitude * uniform(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);
  const std::size_t lead = ms(uniform(cfg.min_silence_ms, cfg.max_silence_ms));
  const std::size_t trail = ms(uniform(cfg.min_silence_ms, cfg.max_silence_ms));
  const std::size_t ramp = std::max<std::size_t>(1, ms(10.0));

  std::vector<double> speech;
  std::string transcript;
  for (int w = 0; w < std::min(words, cfg.max_words); ++w) {
    const auto word = static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.vocabulary.size()));
    if (!transcript.empty()) transcript += ' ';
    transcript += cfg.vocabulary[word];
    if (w > 0) speech.resize(speech.size() + ms(cfg.gap_ms * rate * uniform(0.8, 1.2)), 0.0);
    const auto pattern = word_tone_pattern(word, cfg.vocabulary.size(), cfg.sample_rate);
    const double word_amp = amp * uniform(0.9, 1.1);
    std::vector<double> tone;
    double phase = 0.0;
    for (double hz : pattern) {
      const std::size_t len = ms(cfg.segment_ms * rate * uniform(0.9, 1.1));
      const double step = 2.0 * std::numbers::pi * hz / sr;
      for (std::size_t i = 0; i < len; ++i) {
        tone.push_back(word_amp * std::sin(phase));
        phase += step;
      }
    }
    const std::size_t r = std::min(ramp, tone.size() / 2);
    for (std::size_t i = 0; i < r; ++i) {
      const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(r));
      tone[i] *= g;
      tone[tone.size() - 1 - i] *= g;
    }
    speech.insert(speech.end(), tone.begin(), tone.end());
  }

  double power = 0.0;
  for (double v : speech) power += v * v;
  power /= static_cast<double>(std::max<std::size_t>(1, speech.size()));
  // Background noise spans the whole recording, silences included, so no
  // stretch of a corpus utterance is digitally zero.
  std::vector<double> samples(lead, 0.0);
  samples.reserve(lead + speech.size() + trail);
  samples.insert(samples.end(), speech.begin(), speech.end());
  samples.resize(samples.size() + trail, 0.0);
  std::normal_distribution<double> noise(0.0, std::sqrt(power / std::pow(10.0, cfg.snr_db / 10.0)));
  for (double& v : samples) v = std::clamp(std::round(v + noise(rng)), -32768.0, 32767.0);

  std::ostringstream id;
  id << split << '-' << std::setw(3) << std::setfill('0') << index;
  return Utterance{id.str(), Tensor::vector(std::move(samples)), transcript, cfg.sample_rate};
}

// Little-endian helpers.
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus out;
  for (int i = 0; i < config.train_count; ++i) {
    out.train.push_back(synthesize(config, "train", static_cast<std::size_t>(i)));
  }
  for (int i = 0; i < config.test_count; ++i) {
    out.test.push_back(synthesize(config, "test", static_cast<std::size_t>(i)));
  }
  return out;
}

WavData read_wav(const fs::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw FormatError(name + ": RIFF chunk: missing RIFF/WAVE header");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  int sample_rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.data() + pos, 4);
    const std::uint32_t size = get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + size > bytes.size()) {
        throw FormatError(name + ": fmt chunk: truncated");
      }
      const std::uint16_t format = get_u16(p + body);
      const std::uint16_t channels = get_u16(p + body + 2);
      const std::uint16_t bits = get_u16(p + body + 14);
      bool pcm = format == 1;
      if (format == 0xFFFE && size >= 40) pcm = get_u16(p + body + 24) == 1;
      if (!pcm) throw FormatError(name + ": fmt chunk: format " + std::to_string(format) + " is not PCM");
      if (channels != 1) {
        throw FormatError(name + ": fmt chunk: " + std::to_string(channels) + " channels, expected mono");
      }
      if (bits != 16) throw FormatError(name + ": fmt chunk: " + std::to_string(bits) + "-bit samples, expected 16");
      sample_rate = static_cast<int>(get_u32(p + body + 4));
      if (sample_rate <= 0) throw FormatError(name + ": fmt chunk: sample rate must be positive");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(name + ": data chunk: appears before fmt chunk");
      if (body + size > bytes.size()) {
        throw FormatError(name + ": data chunk: truncated (declares " + std::to_string(size) +
                          " bytes, " + std::to_string(bytes.size() - body) + " present)");
      }
      if (size % 2 != 0) throw FormatError(name + ": data chunk: odd byte count");
      std::vector<double> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i] = static_cast<std::int16_t>(get_u16(p + body + 2 * i));
      }
      if (samples.empty()) throw FormatError(name + ": data chunk: no samples");
      return WavData{Tensor::vector(std::move(samples)), sample_rate};
    }
    pos = body + size + (size % 2);
  }
  throw FormatError(name + (have_fmt ? ": data chunk: missing" : ": fmt chunk: missing"));
}

void write_wav(const fs::path& path, const Tensor& waveform, int sample_rate) {
  if (waveform.rank() != 1) {
    throw ShapeError("write_wav: waveform must be rank 1, got " + shape_str(waveform.shape()));
  }
  if (sample_rate <= 0) throw ContractError("write_wav: sample rate must be positive");
  const std::size_t n = waveform.size();
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, static_cast<std::uint32_t>(36 + 2 * n));
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, static_cast<std::uint32_t>(2 * n));
  std::size_t clipped = 0;
  for (double v : waveform.values()) {
    double r = std::round(v);
    if (r > 32767.0 || r < -32768.0) {
      ++clipped;
      r = std::clamp(r, -32768.0, 32767.0);
    }
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(r)));
  }
  if (clipped > 0) {
    spdlog::warn("{}: clipped {} sample(s) to the int16 range", path.string(), clipped);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<Utterance> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<Utterance> out;
  std::string line;
  std::size_t lineno = 0;
  const fs::path base = path.parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
    for (const char* key : {"id", "wav", "transcript"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw FormatError(where + ": missing string field \"" + key + "\"");
      }
    }
    const fs::path wav = base / j["wav"].get<std::string>();
    WavData data;
    try {
      data = read_wav(wav);
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
    out.push_back(Utterance{j["id"].get<std::string>(), data.samples,
                            j["transcript"].get<std::string>(), data.sample_rate});
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["wav"] = e.wav;
    j["transcript"] = e.transcript;
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

void write_split(const fs::path& dir, const std::vector<Utterance>& utterances) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    std::ostringstream name;
    name << std::setw(3) << std::setfill('0') << i << ".wav";
    write_wav(dir / name.str(), utterances[i].waveform, utterances[i].sample_rate);
    entries.push_back({utterances[i].id, name.str(), utterances[i].transcript});
  }
  write_manifest(dir / "manifest.jsonl", entries);
}

}  // namespace uptb
