#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <ostream>
#include <regex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "spanedit/actions.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"

namespace spanedit {

// Ranked candidate outputs for one example, best first.
using CandidateList = std::vector<TokenSeq>;

inline bool exact_match(const TokenSeq& candidate, const TokenSeq& gold) { return candidate == gold; }

// 1-based rank of `target` among `candidates`, 0 when absent.
inline std::size_t rank_of(const CandidateList& candidates, const TokenSeq& target) {
  for (std::size_t r = 0; r < candidates.size(); ++r)
    if (candidates[r] == target) return r + 1;
  return 0;
}

namespace detail {

inline void check_sizes(std::size_t a, std::size_t b) {
  if (a != b)
    throw ValidationError("candidate lists (" + std::to_string(a) + ") and references (" + std::to_string(b) +
                          ") differ in count");
}

}  // namespace detail

inline double accuracy_at_k(std::span<const CandidateList> candidates, std::span<const TokenSeq> gold, std::size_t k) {
  detail::check_sizes(candidates.size(), gold.size());
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t r = rank_of(candidates[i], gold[i]);
    if (r != 0 && r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

inline double accuracy(std::span<const CandidateList> candidates, std::span<const TokenSeq> gold) {
  return accuracy_at_k(candidates, gold, 1);
}

inline double mrr(std::span<const CandidateList> candidates, std::span<const TokenSeq> references) {
  detail::check_sizes(candidates.size(), references.size());
  if (references.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < references.size(); ++i)
    if (const std::size_t r = rank_of(candidates[i], references[i])) total += 1.0 / static_cast<double>(r);
  return total / static_cast<double>(references.size());
}

// Reciprocal rank of the unchanged input; a model that never edits scores 1.
inline double input_mrr(std::span<const CandidateList> candidates, std::span<const TokenSeq> inputs) {
  return mrr(candidates, inputs);
}

inline bool is_identifier(const std::string& s) {
  static const std::regex pattern("id[0-9]+");
  return std::regex_match(s, pattern);
}

// Equal up to a consistent one-to-one renaming of identifier tokens.
inline bool structural_match(const TokenSeq& candidate, const TokenSeq& gold) {
  if (candidate.size() != gold.size()) return false;
  std::unordered_map<std::string, std::string> fwd, bwd;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::string& a = candidate[i];
    const std::string& b = gold[i];
    const bool ia = is_identifier(a), ib = is_identifier(b);
    if (ia != ib) return false;
    if (!ia) {
      if (a != b) return false;
      continue;
    }
    if (fwd.emplace(a, b).first->second != b || bwd.emplace(b, a).first->second != a) return false;
  }
  return true;
}

inline double structural_accuracy(std::span<const CandidateList> candidates, std::span<const TokenSeq> gold) {
  detail::check_sizes(candidates.size(), gold.size());
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (!candidates[i].empty() && structural_match(candidates[i].front(), gold[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

struct SpanLengthStats {
  std::map<int, std::size_t> histogram;  // copy length -> count
  std::size_t copies = 0;
  double mean = 0.0;
  double median = 0.0;
  double single_copy_fraction = 0.0;
};

// Lengths of every Copy action across the given action traces.
inline SpanLengthStats span_length_stats(std::span<const std::vector<Action>> traces) {
  SpanLengthStats s;
  std::vector<int> lengths;
  for (const auto& trace : traces)
    for (const Action& a : trace)
      if (a.is_copy()) {
        lengths.push_back(a.length());
        ++s.histogram[a.length()];
      }
  s.copies = lengths.size();
  if (lengths.empty()) return s;
  double total = 0.0;
  for (int l : lengths) total += l;
  s.mean = total / static_cast<double>(lengths.size());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t h = lengths.size() / 2;
  s.median = lengths.size() % 2 ? lengths[h] : 0.5 * (lengths[h - 1] + lengths[h]);
  s.single_copy_fraction = static_cast<double>(s.histogram.count(1) ? s.histogram.at(1) : 0) /
                           static_cast<double>(lengths.size());
  return s;
}

inline void write_histogram_csv(std::ostream& out, const SpanLengthStats& s) {
  out << "length,count\n";
  for (const auto& [len, count] : s.histogram) out << len << ',' << count << '\n';
}

struct EvalReport {
  std::size_t examples = 0;
  std::size_t k = 20;
  double accuracy = 0.0;
  double accuracy_at_k = 0.0;
  double mrr = 0.0;
  double structural_match = 0.0;
  double input_mrr = 0.0;
  SpanLengthStats spans;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (const auto& [len, count] : spans.histogram) hist[std::to_string(len)] = count;
    return {{"examples", examples},
            {"k", k},
            {"accuracy", accuracy},
            {"accuracy_at_k", accuracy_at_k},
            {"mrr", mrr},
            {"structural_match", structural_match},
            {"input_mrr", input_mrr},
            {"copy_length_histogram", hist},
            {"copy_actions", spans.copies},
            {"mean_copy_length", spans.mean},
            {"median_copy_length", spans.median},
            {"single_copy_fraction", spans.single_copy_fraction}};
  }
};

// `traces` may be empty when no greedy traces are available.
inline EvalReport evaluate(std::span<const CandidateList> candidates, std::span<const TokenSeq> gold,
                           std::span<const TokenSeq> inputs, std::span<const std::vector<Action>> traces,
                           std::size_t k = 20) {
  detail::check_sizes(candidates.size(), gold.size());
  detail::check_sizes(candidates.size(), inputs.size());
  if (k < 1) throw ValidationError("k must be >= 1");
  EvalReport r;
  r.examples = gold.size();
  r.k = k;
  r.accuracy = accuracy(candidates, gold);
  r.accuracy_at_k = accuracy_at_k(candidates, gold, k);
  r.mrr = mrr(candidates, gold);
  r.structural_match = structural_accuracy(candidates, gold);
  r.input_mrr = input_mrr(candidates, inputs);
  r.spans = span_length_stats(traces);
  return r;
}

}  // namespace spanedit
