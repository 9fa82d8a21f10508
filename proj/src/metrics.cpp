#include "uptb/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "uptb/errors.hpp"

namespace uptb {

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string canonicalize(std::string_view text) {
  std::string out;
  for (const std::string& w : words_of(text)) {
    if (!out.empty()) out += ' ';
    for (char c : w) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

double success_rate(const std::vector<std::string>& transcripts, std::string_view target) {
  if (transcripts.empty()) throw ContractError("success_rate: transcript list is empty");
  const std::string want = canonicalize(target);
  std::size_t hits = 0;
  for (const auto& t : transcripts) hits += canonicalize(t) == want;
  return static_cast<double>(hits) / static_cast<double>(transcripts.size());
}

double peak_db(const Tensor& signal) {
  double peak = 0.0;
  for (double v : signal.values()) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0) || !std::isfinite(peak)) {
    throw DomainError("distortion is undefined for a silent or non-finite signal");
  }
  return 20.0 * std::log10(peak);
}

double distortion_db(const Tensor& delta, const Tensor& x) { return peak_db(delta) - peak_db(x); }

std::size_t word_edit_distance(std::string_view reference, std::string_view hypothesis) {
  const auto r = words_of(reference), h = words_of(hypothesis);
  std::vector<std::size_t> prev(h.size() + 1), cur(h.size() + 1);
  for (std::size_t j = 0; j <= h.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= r.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= h.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1)});
    }
    prev.swap(cur);
  }
  return prev[h.size()];
}

double wer(std::string_view reference, std::string_view hypothesis) {
  const std::size_t n = words_of(reference).size();
  if (n == 0) throw ContractError("wer: reference is empty");
  return static_cast<double>(word_edit_distance(reference, hypothesis)) / static_cast<double>(n);
}

double corpus_wer(const std::vector<std::string>& references,
                  const std::vector<std::string>& hypotheses) {
  if (references.size() != hypotheses.size()) {
    throw ContractError("corpus_wer: reference and hypothesis counts differ");
  }
  std::size_t edits = 0, words = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    edits += word_edit_distance(references[i], hypotheses[i]);
    words += words_of(references[i]).size();
  }
  if (words == 0) throw ContractError("corpus_wer: references contain no words");
  return static_cast<double>(edits) / static_cast<double>(words);
}

AttackReport make_report(std::vector<UtteranceRecord> records, std::string_view target) {
  if (records.empty()) throw ContractError("make_report: no records");
  std::sort(records.begin(), records.end(),
            [](const UtteranceRecord& a, const UtteranceRecord& b) { return a.id < b.id; });
  AttackReport r;
  r.target = canonicalize(target);
  std::vector<std::string> attacked, clean, refs;
  std::vector<double> dist;
  for (auto& rec : records) {
    rec.success = canonicalize(rec.attacked_transcript) == r.target;
    attacked.push_back(rec.attacked_transcript);
    clean.push_back(rec.clean_transcript);
    refs.push_back(rec.reference);
    if (rec.distortion_db) dist.push_back(*rec.distortion_db);
  }
  r.records = std::move(records);
  r.success_rate = success_rate(attacked, r.target);
  if (!dist.empty()) {
    double sum = 0.0;
    for (double d : dist) sum += d;
    r.mean_distortion_db = sum / static_cast<double>(dist.size());
    std::sort(dist.begin(), dist.end());
    const std::size_t mid = dist.size() / 2;
    r.median_distortion_db = dist.size() % 2 ? dist[mid] : 0.5 * (dist[mid - 1] + dist[mid]);
  }
  r.clean_wer = corpus_wer(refs, clean);
  r.attacked_wer = corpus_wer(refs, attacked);
  return r;
}

std::vector<LengthBin> success_by_length(const AttackReport& report, double bin_width) {
  if (!(bin_width > 0.0)) throw ContractError("success_by_length: bin width must be positive");
  std::map<long, LengthBin> bins;
  for (const auto& rec : report.records) {
    const long k = static_cast<long>(std::floor(rec.length_seconds / bin_width));
    LengthBin& b = bins[k];
    b.lower = static_cast<double>(k) * bin_width;
    b.upper = static_cast<double>(k + 1) * bin_width;
    ++b.count;
    b.successes += rec.success;
  }
  std::vector<LengthBin> out;
  for (auto& [k, b] : bins) {
    b.success_rate = static_cast<double>(b.successes) / static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

std::string report_csv(const AttackReport& report) {
  std::string out =
      "id,length_seconds,reference,clean_transcript,attacked_transcript,success,distortion_db\n";
  for (const auto& r : report.records) {
    out += csv_field(r.id) + ',' + fixed(r.length_seconds, 4) + ',' + csv_field(r.reference) + ',' +
           csv_field(r.clean_transcript) + ',' + csv_field(r.attacked_transcript) + ',' +
           (r.success ? "1" : "0") + ',' + (r.distortion_db ? fixed(*r.distortion_db, 4) : "") + '\n';
  }
  auto footer = [&](const char* name, const std::string& value) {
    out += std::string("aggregate,") + name + ',' + value + '\n';
  };
  footer("target", csv_field(report.target));
  footer("count", std::to_string(report.records.size()));
  footer("success_rate", fixed(report.success_rate));
  footer("mean_distortion_db", report.mean_distortion_db ? fixed(*report.mean_distortion_db, 4) : "");
  footer("median_distortion_db", report.median_distortion_db ? fixed(*report.median_distortion_db, 4) : "");
  footer("clean_wer", fixed(report.clean_wer));
  footer("attacked_wer", fixed(report.attacked_wer));
  return out;
}

nlohmann::ordered_json report_json(const AttackReport& report) {
  nlohmann::ordered_json j;
  j["target"] = report.target;
  j["count"] = report.records.size();
  j["success_rate"] = report.success_rate;
  j["mean_distortion_db"] = report.mean_distortion_db ? nlohmann::ordered_json(*report.mean_distortion_db) : nullptr;
  j["median_distortion_db"] =
      report.median_distortion_db ? nlohmann::ordered_json(*report.median_distortion_db) : nullptr;
  j["clean_wer"] = report.clean_wer;
  j["attacked_wer"] = report.attacked_wer;
  auto& recs = j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : report.records) {
    nlohmann::ordered_json e;
    e["id"] = r.id;
    e["length_seconds"] = r.length_seconds;
    e["reference"] = r.reference;
    e["clean_transcript"] = r.clean_transcript;
    e["attacked_transcript"] = r.attacked_transcript;
    e["success"] = r.success;
    e["distortion_db"] = r.distortion_db ? nlohmann::ordered_json(*r.distortion_db) : nullptr;
    recs.push_back(std::move(e));
  }
  return j;
}

std::string histogram_csv(const std::vector<LengthBin>& bins) {
  std::string out = "bin_lower,bin_upper,count,successes,success_rate\n";
  for (const auto& b : bins) {
    out += fixed(b.lower, 4) + ',' + fixed(b.upper, 4) + ',' + std::to_string(b.count) + ',' +
           std::to_string(b.successes) + ',' + fixed(b.success_rate) + '\n';
  }
  return out;
}

}  // namespace uptb
