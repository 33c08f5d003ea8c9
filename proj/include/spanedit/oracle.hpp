#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "spanedit/actions.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/model.hpp"

// Brute-force ground truth for tests and acceptance runs. Deliberately shares
// nothing with the training objective beyond the Action type and the model's
// single-step inference API: correctness is decided by comparing surfaces
// over the whole action space, sequences are enumerated explicitly, and
// per-prefix distributions come from step-by-step decoding.
namespace spanedit::oracle {

inline constexpr std::size_t kMaxLength = 8;

struct Options {
  int max_copy_len = 0;  // 0 = unlimited
  // Diagnostic: Gen(UNK) is correct for every OOV target token, even when
  // the token could be copied.
  bool relax_unk_rule = false;
};

struct ActionSequence {
  std::vector<Action> actions;  // ends with Gen(EOS)
  friend bool operator==(const ActionSequence&, const ActionSequence&) = default;
};

namespace detail {

inline void check_guard(const TokenSeq& x, const TokenSeq& y) {
  if (x.size() > kMaxLength || y.size() > kMaxLength)
    throw ValidationError("oracle instance too large (n = " + std::to_string(x.size()) + ", m = " +
                          std::to_string(y.size()) + "); shrink it to n, m <= " + std::to_string(kMaxLength));
}

// Every action in the full action space whose evaluation is a prefix of y[k:].
inline std::vector<Action> brute_force_correct(const TokenSeq& x, const TokenSeq& y, const Vocab& vocab,
                                               std::size_t k, const Options& opt) {
  std::vector<Action> out;
  if (k == y.size()) {
    out.push_back(Action::eos());
    return out;
  }
  for (int t = 0; t < vocab.size(); ++t)
    if (!is_reserved_surface(vocab.surface(t)) && vocab.surface(t) == y[k]) out.push_back(Action::gen(t));
  bool copyable = false;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j <= n; ++j) {
      const std::size_t len = j - i;
      if (opt.max_copy_len > 0 && len > static_cast<std::size_t>(opt.max_copy_len)) continue;
      if (k + len > y.size()) continue;
      if (std::equal(x.begin() + static_cast<std::ptrdiff_t>(i), x.begin() + static_cast<std::ptrdiff_t>(j),
                     y.begin() + static_cast<std::ptrdiff_t>(k))) {
        out.push_back(Action::copy(static_cast<int>(i), static_cast<int>(j)));
        copyable = true;
      }
    }
  const bool oov = !vocab.contains(y[k]);
  if (oov && (!copyable || opt.relax_unk_rule)) out.push_back(Action::gen(Vocab::kUnk));
  return out;
}

inline void expand(const std::vector<std::vector<Action>>& correct, std::size_t k, std::vector<Action>& prefix,
                   std::vector<ActionSequence>& out) {
  for (const Action& a : correct[k]) {
    prefix.push_back(a);
    if (a.is_eos())
      out.push_back(ActionSequence{prefix});
    else
      expand(correct, k + static_cast<std::size_t>(a.length()), prefix, out);
    prefix.pop_back();
  }
}

}  // namespace detail

inline std::vector<ActionSequence> enumerate_action_sequences(const TokenSeq& x, const TokenSeq& y, const Vocab& vocab,
                                                              const Options& opt = {}) {
  detail::check_guard(x, y);
  std::vector<std::vector<Action>> correct(y.size() + 1);
  for (std::size_t k = 0; k <= y.size(); ++k) correct[k] = detail::brute_force_correct(x, y, vocab, k, opt);
  std::vector<ActionSequence> out;
  std::vector<Action> prefix;
  detail::expand(correct, 0, prefix, out);
  return out;
}

// Token ids fed back to the decoder for a surface (UNK when out of vocabulary).
inline std::vector<int> feed_ids(const TokenSeq& tokens, const Vocab& vocab) { return vocab.encode(tokens); }

struct Likelihood {
  double probability = 0.0;
  double log_probability = kNegInf;
  std::size_t sequences = 0;
};

// Sum over all action sequences generating y of the product of per-step
// action probabilities; each q is read from the distribution after feeding
// the prefix y[:k] one token at a time.
inline Likelihood exact_likelihood(const TokenSeq& x, const TokenSeq& y, const Model& model, const Options& opt = {}) {
  detail::check_guard(x, y);
  const Vocab& vocab = model.vocab();
  const EncoderOutputs enc = model.encode(vocab.encode(x));
  std::vector<ActionDistribution> dist;
  DecoderState state = model.start_state(enc);
  for (std::size_t k = 0; k <= y.size(); ++k) {
    dist.push_back(model.action_distribution(state, enc));
    if (k < y.size()) state = model.advance(state, vocab.id_or_unk(y[k]));
  }
  const auto seqs = enumerate_action_sequences(x, y, vocab, opt);
  std::vector<double> logs;
  logs.reserve(seqs.size());
  for (const ActionSequence& s : seqs) {
    double lp = 0.0;
    std::size_t k = 0;
    for (const Action& a : s.actions) {
      lp += dist[k].log_prob(a);
      if (!a.is_eos()) k += static_cast<std::size_t>(a.length());
    }
    logs.push_back(lp);
  }
  Likelihood r;
  r.sequences = seqs.size();
  if (logs.empty()) return r;
  const double mx = *std::max_element(logs.begin(), logs.end());
  if (mx == kNegInf) return r;
  double s = 0.0;
  for (double l : logs) s += std::exp(l - mx);
  r.log_probability = mx + std::log(s);
  r.probability = std::exp(r.log_probability);
  return r;
}

// Replays an action sequence, returning the emitted surfaces (EOS excluded).
inline TokenSeq replay(const ActionSequence& seq, const TokenSeq& x, const Vocab& vocab) {
  TokenSeq out;
  for (const Action& a : seq.actions) {
    if (a.is_eos()) break;
    if (a.is_gen())
      out.push_back(vocab.surface(a.token));
    else
      out.insert(out.end(), x.begin() + a.begin, x.begin() + a.end);
  }
  return out;
}

}  // namespace spanedit::oracle
