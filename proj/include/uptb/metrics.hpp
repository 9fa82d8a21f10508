#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "uptb/autodiff.hpp"

namespace uptb {

// Lowercase, trim, collapse internal whitespace runs to one space.
std::string canonicalize(std::string_view text);

// Fraction of transcripts equal to `target` after canonicalization.
// Throws ContractError on an empty list.
double success_rate(const std::vector<std::string>& transcripts, std::string_view target);

// 20 log10 max|x|. Throws DomainError for an all-zero signal.
double peak_db(const Tensor& signal);

// peak_db(delta) - peak_db(x).
double distortion_db(const Tensor& delta, const Tensor& x);

// Word-level Levenshtein distance with unit costs.
std::size_t word_edit_distance(std::string_view reference, std::string_view hypothesis);

// edit distance / reference word count. Throws ContractError for an empty
// reference.
double wer(std::string_view reference, std::string_view hypothesis);

struct UtteranceRecord {
  std::string id;
  double length_seconds = 0.0;
  std::string reference;
  std::string clean_transcript;
  std::string attacked_transcript;
  bool success = false;
  std::optional<double> distortion_db;  // empty when either signal is silent
};

struct AttackReport {
  std::string target;
  std::vector<UtteranceRecord> records;
  double success_rate = 0.0;
  std::optional<double> mean_distortion_db;
  std::optional<double> median_distortion_db;
  double clean_wer = 0.0;     // corpus-level, clean transcripts vs references
  double attacked_wer = 0.0;  // corpus-level, attacked transcripts vs references
};

// Sorts records by id, fills `success` from the target and computes the
// aggregates.
AttackReport make_report(std::vector<UtteranceRecord> records, std::string_view target);

// Corpus-level WER: total edits over total reference words.
double corpus_wer(const std::vector<std::string>& references,
                  const std::vector<std::string>& hypotheses);

struct LengthBin {
  double lower = 0.0;  // inclusive, seconds
  double upper = 0.0;  // exclusive
  std::size_t count = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
};

// Buckets records by floor(length / bin_width); empty bins are omitted.
// Throws ContractError if bin_width <= 0.
std::vector<LengthBin> success_by_length(const AttackReport& report, double bin_width);

// One row per record with columns
//   id,length_seconds,reference,clean_transcript,attacked_transcript,success,distortion_db
// followed by footer rows "aggregate,<metric>,<value>".
std::string report_csv(const AttackReport& report);
nlohmann::ordered_json report_json(const AttackReport& report);
// Columns: bin_lower,bin_upper,count,successes,success_rate
std::string histogram_csv(const std::vector<LengthBin>& bins);

}  // namespace uptb
