#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"

namespace spanedit {

// One decoder decision: emit vocabulary token `token`, or copy input tokens
// [begin, end). Zero-length copies do not exist.
struct Action {
  enum class Kind : unsigned char { gen, copy };

  Kind kind = Kind::gen;
  int token = 0;
  int begin = 0;
  int end = 0;

  static Action gen(int token) { return Action{Kind::gen, token, 0, 0}; }
  static Action copy(int begin, int end) {
    if (end <= begin) throw ValidationError("copy span must be non-empty");
    return Action{Kind::copy, 0, begin, end};
  }
  static Action eos() { return gen(Vocab::kEos); }

  bool is_gen() const { return kind == Kind::gen; }
  bool is_copy() const { return kind == Kind::copy; }
  bool is_eos() const { return kind == Kind::gen && token == Vocab::kEos; }
  // Number of output tokens the action emits. EOS counts as one decision
  // that terminates the sequence.
  int length() const { return kind == Kind::gen ? 1 : end - begin; }

  friend auto operator<=>(const Action&, const Action&) = default;
};

inline std::string describe(const Action& a, const Vocab& vocab) {
  if (a.is_copy()) return "Copy(" + std::to_string(a.begin) + "," + std::to_string(a.end) + ")";
  return "Gen(" + vocab.surface(a.token) + ")";
}

// Flat position of an action in a distribution laid out as V vocabulary
// entries followed by an n x n span grid (row = start, column = end - 1).
inline std::size_t action_index(const Action& a, std::size_t vocab_size, std::size_t input_len) {
  if (a.is_gen()) return static_cast<std::size_t>(a.token);
  return vocab_size + static_cast<std::size_t>(a.begin) * input_len + static_cast<std::size_t>(a.end - 1);
}

inline Action action_at(std::size_t index, std::size_t vocab_size, std::size_t input_len) {
  if (index < vocab_size) return Action::gen(static_cast<int>(index));
  const std::size_t cell = index - vocab_size;
  return Action::copy(static_cast<int>(cell / input_len), static_cast<int>(cell % input_len) + 1);
}

// An example mapped to ids. `*_ids` are what the network embeds (UNK for
// out-of-vocabulary surfaces). `*_sym` identify surfaces exactly: the vocab
// id for in-vocabulary surfaces, vocab_size + k for the k-th distinct
// out-of-vocabulary surface.
struct EncodedExample {
  std::vector<int> x_ids, y_ids;
  std::vector<int> x_sym, y_sym;
  std::vector<std::string> oov_surfaces;
  int vocab_size = 0;

  bool in_vocab(int sym) const { return sym < vocab_size; }
  int feed_id(int sym) const { return sym < vocab_size ? sym : Vocab::kUnk; }
  const std::string& surface(int sym, const Vocab& vocab) const {
    return sym < vocab_size ? vocab.surface(sym) : oov_surfaces.at(static_cast<std::size_t>(sym - vocab_size));
  }
  TokenSeq surfaces(const std::vector<int>& syms, const Vocab& vocab) const {
    TokenSeq out;
    out.reserve(syms.size());
    for (int s : syms) out.push_back(surface(s, vocab));
    return out;
  }
};

inline EncodedExample encode_example(const Vocab& vocab, const TokenSeq& input, const TokenSeq& output) {
  if (input.empty()) throw ValidationError("example input must be non-empty");
  EncodedExample e;
  e.vocab_size = vocab.size();
  std::unordered_map<std::string, int> oov;
  auto sym = [&](const Token& t) {
    if (auto id = vocab.find(t)) return *id;
    auto [it, inserted] = oov.emplace(t, e.vocab_size + static_cast<int>(e.oov_surfaces.size()));
    if (inserted) e.oov_surfaces.push_back(t);
    return it->second;
  };
  for (const Token& t : input) {
    e.x_sym.push_back(sym(t));
    e.x_ids.push_back(e.feed_id(e.x_sym.back()));
  }
  for (const Token& t : output) {
    e.y_sym.push_back(sym(t));
    e.y_ids.push_back(e.feed_id(e.y_sym.back()));
  }
  return e;
}

// Symbols emitted by an action, given the input symbols.
inline void append_eval(const Action& a, const std::vector<int>& x_sym, std::vector<int>& out) {
  if (a.is_gen()) {
    out.push_back(a.token);
  } else {
    out.insert(out.end(), x_sym.begin() + a.begin, x_sym.begin() + a.end);
  }
}

}  // namespace spanedit
