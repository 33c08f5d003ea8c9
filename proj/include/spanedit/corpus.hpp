#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/rng.hpp"

namespace spanedit {

// A whitespace-free, non-empty surface string.
using Token = std::string;
using TokenSeq = std::vector<Token>;

inline constexpr std::string_view kPadSurface = "<pad>";
inline constexpr std::string_view kStartSurface = "<s>";
inline constexpr std::string_view kEosSurface = "</s>";
inline constexpr std::string_view kUnkSurface = "<unk>";

inline bool is_reserved_surface(std::string_view s) {
  return s == kPadSurface || s == kStartSurface || s == kEosSurface || s == kUnkSurface;
}

inline bool is_valid_surface(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return false;
  return true;
}

// ---------------------------------------------------------------------------
// Vocab

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab() {
    for (std::string_view s : {kPadSurface, kStartSurface, kEosSurface, kUnkSurface}) push(std::string(s));
  }

  // Non-reserved surfaces in id order (ids 4, 5, ...).
  explicit Vocab(const std::vector<std::string>& surfaces) : Vocab() {
    for (const std::string& s : surfaces) {
      if (!is_valid_surface(s) || is_reserved_surface(s))
        throw ValidationError("invalid vocabulary surface '" + s + "'");
      if (id_of_.count(s)) throw ValidationError("duplicate vocabulary surface '" + s + "'");
      push(s);
    }
  }

  int size() const { return static_cast<int>(surface_of_.size()); }
  bool contains(const std::string& s) const { return id_of_.count(s) != 0; }
  std::optional<int> find(const std::string& s) const {
    auto it = id_of_.find(s);
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
  }
  int id_or_unk(const std::string& s) const {
    auto it = id_of_.find(s);
    return it == id_of_.end() ? kUnk : it->second;
  }
  const std::string& surface(int id) const { return surface_of_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& surfaces() const { return surface_of_; }

  std::vector<int> encode(const TokenSeq& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const Token& t : tokens) ids.push_back(id_or_unk(t));
    return ids;
  }

  // One surface per line: the four reserved lines, then ids 4.. in order.
  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file " + path.string());
    for (const std::string& s : surface_of_) out << s << '\n';
    if (!out) throw IoError("write failed for " + path.string());
  }

  static Vocab read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocabulary file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    static const std::array<std::string_view, 4> reserved = {kPadSurface, kStartSurface, kEosSurface, kUnkSurface};
    if (lines.size() < 4) throw ParseError(lines.size() + 1, "vocabulary file is missing reserved entries");
    for (std::size_t i = 0; i < 4; ++i)
      if (lines[i] != reserved[i]) throw ParseError(i + 1, "expected reserved surface " + std::string(reserved[i]));
    return Vocab(std::vector<std::string>(lines.begin() + 4, lines.end()));
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.surface_of_ == b.surface_of_; }

 private:
  void push(std::string s) {
    id_of_.emplace(s, static_cast<int>(surface_of_.size()));
    surface_of_.push_back(std::move(s));
  }

  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> surface_of_;
};

// ---------------------------------------------------------------------------
// Examples

struct EditExample {
  TokenSeq input;
  TokenSeq output;
  std::string task_tag;

  friend bool operator==(const EditExample&, const EditExample&) = default;
};

inline void validate_example(const EditExample& ex) {
  if (ex.input.empty()) throw ValidationError("example input must be non-empty");
  for (const TokenSeq* seq : {&ex.input, &ex.output})
    for (const Token& t : *seq) {
      if (!is_valid_surface(t)) throw ValidationError("invalid token surface '" + t + "'");
      if (is_reserved_surface(t)) throw ValidationError("reserved surface '" + t + "' in raw data");
    }
}

// ---------------------------------------------------------------------------
// Synthetic tasks
//
// Content tokens are "w0".."w{A-1}" (A = alphabet_size). Edits whose location
// must be inferred carry a cue token in the input so the mapping x -> y is a
// function of x:
//   insert         "@" precedes the insertion point; "INS" is inserted after it
//   delete         "@" precedes the content token that is removed
//   swap_adjacent  "@" precedes the pair that is swapped
//   duplicate_span "[" and "]" bracket the span appended to the end of x
//   rename_id      identifiers "id0".."id{A-1}" alternate with operators; every
//                  occurrence of one identifier becomes an identifier absent
//                  from x, drawn from "id0".."id{2A-1}"
// min_len/max_len bound the number of content tokens (cues excluded).

enum class TaskKind { insert, del, duplicate_span, rename_id, swap_adjacent };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::insert: return "insert";
    case TaskKind::del: return "delete";
    case TaskKind::duplicate_span: return "duplicate_span";
    case TaskKind::rename_id: return "rename_id";
    case TaskKind::swap_adjacent: return "swap_adjacent";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "insert") return TaskKind::insert;
  if (s == "delete") return TaskKind::del;
  if (s == "duplicate_span") return TaskKind::duplicate_span;
  if (s == "rename_id") return TaskKind::rename_id;
  if (s == "swap_adjacent") return TaskKind::swap_adjacent;
  throw ValidationError("unknown task kind '" + std::string(s) +
                        "' (expected insert|delete|duplicate_span|rename_id|swap_adjacent)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::insert;
  int alphabet_size = 20;
  int min_len = 4;
  int max_len = 12;
  std::uint64_t seed = 0;

  void validate() const {
    if (alphabet_size < 2) throw ValidationError("alphabet_size must be >= 2, got " + std::to_string(alphabet_size));
    if (min_len < 1) throw ValidationError("min_len must be >= 1, got " + std::to_string(min_len));
    if (max_len < 1) throw ValidationError("max_len must be >= 1, got " + std::to_string(max_len));
    if (min_len > max_len)
      throw ValidationError("min_len (" + std::to_string(min_len) + ") must be <= max_len (" +
                            std::to_string(max_len) + ")");
    if (kind == TaskKind::swap_adjacent && min_len < 2)
      throw ValidationError("min_len must be >= 2 for swap_adjacent, got " + std::to_string(min_len));
  }
};

inline const std::array<std::string, 6>& rename_operators() {
  static const std::array<std::string, 6> ops = {"+", "-", "*", "/", "=", "<"};
  return ops;
}

// Edit rules, applied to a full input sequence.
inline TokenSeq apply_insert(const TokenSeq& x, std::size_t pos) {
  TokenSeq y(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(pos));
  y.push_back("INS");
  y.insert(y.end(), x.begin() + static_cast<std::ptrdiff_t>(pos), x.end());
  return y;
}

inline TokenSeq apply_delete(const TokenSeq& x, std::size_t pos) {
  TokenSeq y = x;
  y.erase(y.begin() + static_cast<std::ptrdiff_t>(pos));
  return y;
}

inline TokenSeq apply_swap_adjacent(const TokenSeq& x, std::size_t pos) {
  TokenSeq y = x;
  std::swap(y[pos], y[pos + 1]);
  return y;
}

inline TokenSeq apply_duplicate_span(const TokenSeq& x, std::size_t begin, std::size_t end) {
  TokenSeq y = x;
  y.insert(y.end(), x.begin() + static_cast<std::ptrdiff_t>(begin), x.begin() + static_cast<std::ptrdiff_t>(end));
  return y;
}

inline TokenSeq apply_rename(const TokenSeq& x, const Token& from, const Token& to) {
  TokenSeq y = x;
  for (Token& t : y)
    if (t == from) t = to;
  return y;
}

namespace detail {

inline TokenSeq sample_content(SplitMix64& rng, int alphabet, std::size_t len) {
  TokenSeq c(len);
  for (Token& t : c) t = "w" + std::to_string(rng.uniform(static_cast<std::uint64_t>(alphabet)));
  return c;
}

inline TokenSeq with_cue(const TokenSeq& c, std::size_t at, const char* cue) {
  TokenSeq x(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(at));
  x.push_back(cue);
  x.insert(x.end(), c.begin() + static_cast<std::ptrdiff_t>(at), c.end());
  return x;
}

inline EditExample generate_one(const TaskSpec& spec, SplitMix64& rng) {
  const auto len = static_cast<std::size_t>(rng.uniform_int(spec.min_len, spec.max_len));
  EditExample ex;
  ex.task_tag = to_string(spec.kind);
  switch (spec.kind) {
    case TaskKind::insert: {
      const TokenSeq c = sample_content(rng, spec.alphabet_size, len);
      const std::size_t p = rng.uniform(len + 1);
      ex.input = with_cue(c, p, "@");
      ex.output = apply_insert(ex.input, p + 1);
      break;
    }
    case TaskKind::del: {
      const TokenSeq c = sample_content(rng, spec.alphabet_size, len);
      const std::size_t p = rng.uniform(len);
      ex.input = with_cue(c, p, "@");
      ex.output = apply_delete(ex.input, p + 1);
      break;
    }
    case TaskKind::swap_adjacent: {
      const TokenSeq c = sample_content(rng, spec.alphabet_size, len);
      const std::size_t p = rng.uniform(len - 1);
      ex.input = with_cue(c, p, "@");
      ex.output = apply_swap_adjacent(ex.input, p + 1);
      break;
    }
    case TaskKind::duplicate_span: {
      const TokenSeq c = sample_content(rng, spec.alphabet_size, len);
      const std::size_t span = 1 + rng.uniform(len);
      const std::size_t i = rng.uniform(len - span + 1);
      const std::size_t j = i + span;
      TokenSeq x(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(i));
      x.push_back("[");
      x.insert(x.end(), c.begin() + static_cast<std::ptrdiff_t>(i), c.begin() + static_cast<std::ptrdiff_t>(j));
      x.push_back("]");
      x.insert(x.end(), c.begin() + static_cast<std::ptrdiff_t>(j), c.end());
      ex.input = std::move(x);
      ex.output = apply_duplicate_span(ex.input, i + 1, j + 1);
      break;
    }
    case TaskKind::rename_id: {
      const auto& ops = rename_operators();
      TokenSeq x(len);
      for (std::size_t k = 0; k < len; ++k)
        x[k] = k % 2 == 0 ? "id" + std::to_string(rng.uniform(static_cast<std::uint64_t>(spec.alphabet_size)))
                          : ops[rng.uniform(ops.size())];
      const std::size_t n_ids = (len + 1) / 2;
      const Token from = x[2 * rng.uniform(n_ids)];
      std::set<Token> present;
      for (std::size_t k = 0; k < len; k += 2) present.insert(x[k]);
      std::vector<Token> fresh;
      for (int v = 0; v < 2 * spec.alphabet_size; ++v) {
        Token t = "id" + std::to_string(v);
        if (!present.count(t)) fresh.push_back(std::move(t));
      }
      const Token to = fresh[rng.uniform(fresh.size())];
      ex.input = x;
      ex.output = apply_rename(x, from, to);
      break;
    }
  }
  return ex;
}

}  // namespace detail

// Deterministic in (spec, count): one SplitMix64 stream seeded with spec.seed.
inline std::vector<EditExample> generate_corpus(const TaskSpec& spec, std::size_t count) {
  spec.validate();
  SplitMix64 rng(spec.seed);
  std::vector<EditExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(detail::generate_one(spec, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Splits

enum class Split { train, valid, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

// 80/10/10 by a hash of the example index.
inline Split split_of(std::size_t index) {
  const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(index), 0x5EED5EEDULL) % 10;
  if (h < 8) return Split::train;
  return h == 8 ? Split::valid : Split::test;
}

struct CorpusSplits {
  std::vector<EditExample> train, valid, test;
};

inline CorpusSplits split_corpus(const std::vector<EditExample>& all) {
  CorpusSplits s;
  for (std::size_t i = 0; i < all.size(); ++i) {
    switch (split_of(i)) {
      case Split::train: s.train.push_back(all[i]); break;
      case Split::valid: s.valid.push_back(all[i]); break;
      case Split::test: s.test.push_back(all[i]); break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset file: one JSON object per line, keys input/output/task only.

inline std::string example_to_json_line(const EditExample& ex) {
  nlohmann::ordered_json j;
  j["input"] = ex.input;
  j["output"] = ex.output;
  j["task"] = ex.task_tag;
  return j.dump();
}

inline EditExample example_from_json_line(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "input" && key != "output" && key != "task") throw ParseError(line_no, "unexpected key '" + key + "'");
  auto tokens = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_array()) throw ParseError(line_no, std::string("'") + key + "' must be an array");
    TokenSeq seq;
    for (const auto& t : j[key]) {
      if (!t.is_string()) throw ParseError(line_no, std::string("'") + key + "' must contain strings");
      seq.push_back(t.get<std::string>());
    }
    return seq;
  };
  EditExample ex;
  ex.input = tokens("input");
  ex.output = tokens("output");
  if (!j.contains("task") || !j["task"].is_string()) throw ParseError(line_no, "'task' must be a string");
  ex.task_tag = j["task"].get<std::string>();
  try {
    validate_example(ex);
  } catch (const ValidationError& e) {
    throw ParseError(line_no, e.what());
  }
  return ex;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<EditExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  for (const EditExample& ex : examples) {
    validate_example(ex);
    out << example_to_json_line(ex) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<EditExample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  std::vector<EditExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(example_from_json_line(line, line_no));
  }
  return out;
}

// ---------------------------------------------------------------------------

// Reserved entries plus up to max_size - 4 surfaces from inputs and outputs,
// by descending frequency, ties by ascending surface.
inline Vocab build_vocab(const std::vector<EditExample>& examples, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(Vocab::kReserved))
    throw ValidationError("vocabulary max_size must be >= 4, got " + std::to_string(max_size));
  std::map<std::string, std::size_t> counts;
  for (const EditExample& ex : examples) {
    for (const Token& t : ex.input) ++counts[t];
    for (const Token& t : ex.output) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocab::kReserved);
  std::vector<std::string> surfaces;
  surfaces.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) surfaces.push_back(ranked[i].first);
  return Vocab(surfaces);
}

}  // namespace spanedit
