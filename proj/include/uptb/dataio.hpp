#pragma once

// Synthetic tone-word corpus, PCM16 WAV I/O and JSON-lines manifests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uptb/autodiff.hpp"

namespace uptb {

struct Utterance {
  std::string id;
  Tensor waveform;  // raw 16-bit sample units, rank 1
  std::string transcript;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(waveform.size()) / sample_rate;
  }
};

std::vector<std::string> default_vocabulary();

struct CorpusConfig {
  std::vector<std::string> vocabulary = default_vocabulary();
  int sample_rate = 16000;
  int min_words = 1;
  int max_words = 8;
  double snr_db = 20.0;
  double amplitude = 8000.0;
  double amplitude_jitter = 0.25;  // relative, uniform per utterance
  double rate_jitter = 0.15;       // relative segment-length scaling
  double segment_ms = 70.0;        // nominal tone segment length
  double gap_ms = 50.0;            // nominal pause between words
  double min_silence_ms = 50.0;    // leading and trailing silence (noise only)
  double max_silence_ms = 250.0;
  int train_count = 200;
  int test_count = 50;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  bool operator==(const CorpusConfig&) const = default;
};

// Tone frequencies (Hz) of each segment of a word; two or three segments,
// distinct across the words of the vocabulary.
std::vector<double> word_tone_pattern(std::size_t word_index,
                                      std::size_t vocabulary_size,
                                      int sample_rate);

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

// Pure function of the config. Samples are integers within the int16 range.
Corpus generate_corpus(const CorpusConfig& config);

struct WavData {
  Tensor samples;
  int sample_rate = 0;
};

// Mono PCM16 little-endian. Throws FormatError naming the offending chunk
// and IoError when the file cannot be opened.
WavData read_wav(const std::filesystem::path& path);

// Rounds to the nearest integer and clips to [-32768, 32767], logging a
// warning when any sample is clipped.
void write_wav(const std::filesystem::path& path, const Tensor& waveform,
               int sample_rate);

// JSON lines of {"id", "wav", "transcript"}; wav paths are resolved relative
// to the manifest's directory. Blank lines are skipped.
std::vector<Utterance> read_manifest(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string wav;  // relative to the manifest directory
  std::string transcript;
};
void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);

// Writes `utterances` as dir/NNN.wav plus dir/manifest.jsonl.
void write_split(const std::filesystem::path& dir,
                 const std::vector<Utterance>& utterances);

}  // namespace uptb
