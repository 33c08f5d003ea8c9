#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "spanedit/actions.hpp"
#include "spanedit/autodiff.hpp"
#include "spanedit/model.hpp"

namespace spanedit {

// correct[k] holds every action that emits a prefix of y[k:]; correct[m] is {Gen(EOS)}.
using CorrectActionTable = std::vector<std::vector<Action>>;

enum class ObjectiveKind { marginal, multi_hot, longest_copy };

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::marginal: return "marginal";
    case ObjectiveKind::multi_hot: return "multi_hot";
    case ObjectiveKind::longest_copy: return "longest_copy";
  }
  return "?";
}

inline ObjectiveKind parse_objective_kind(std::string_view s) {
  if (s == "marginal") return ObjectiveKind::marginal;
  if (s == "multi_hot") return ObjectiveKind::multi_hot;
  if (s == "longest_copy") return ObjectiveKind::longest_copy;
  throw ValidationError("unknown objective '" + std::string(s) + "' (expected marginal|multi_hot|longest_copy)");
}

// Table of correct actions for all k, built from the longest-common-prefix
// table lcp[i][k] = |common prefix of x[i:] and y[k:]| in O(n * m).
//
// Generation rule for out-of-vocabulary targets: Gen(UNK) is correct iff the
// token cannot be copied; a copyable OOV token has copies only.
inline CorrectActionTable correct_action_table(const EncodedExample& ex, int max_copy_len = 0) {
  const std::size_t n = ex.x_sym.size(), m = ex.y_sym.size();
  std::vector<int> lcp((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t k) -> int& { return lcp[i * (m + 1) + k]; };
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t k = m; k-- > 0;)
      if (ex.x_sym[i] == ex.y_sym[k]) at(i, k) = 1 + at(i + 1, k + 1);

  CorrectActionTable table(m + 1);
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<Action>& acts = table[k];
    const int y = ex.y_sym[k];
    if (ex.in_vocab(y)) acts.push_back(Action::gen(y));
    bool copyable = false;
    for (std::size_t i = 0; i < n; ++i) {
      int longest = at(i, k);
      if (max_copy_len > 0) longest = std::min(longest, max_copy_len);
      for (int len = 1; len <= longest; ++len) {
        acts.push_back(Action::copy(static_cast<int>(i), static_cast<int>(i) + len));
        copyable = true;
      }
    }
    if (!ex.in_vocab(y) && !copyable) acts.push_back(Action::gen(Vocab::kUnk));
  }
  table[m].push_back(Action::eos());
  return table;
}

inline std::vector<Action> correct_actions(const EncodedExample& ex, std::size_t k, int max_copy_len = 0) {
  if (k > ex.y_sym.size()) throw ValidationError("position " + std::to_string(k) + " is past the output");
  return correct_action_table(ex, max_copy_len)[k];
}

inline std::vector<Action> correct_actions(const TokenSeq& x, const TokenSeq& y, const Vocab& vocab, std::size_t k,
                                           int max_copy_len = 0) {
  return correct_actions(encode_example(vocab, x, y), k, max_copy_len);
}

// Row k of `log_probs` is log q(. | y[:k]) over V + n * n actions.
struct StepScores {
  ad::Var log_probs;  // [m + 1, V + n * n]
  std::size_t vocab_size = 0;
  std::size_t input_len = 0;

  std::size_t width() const { return vocab_size + input_len * input_len; }
  std::size_t index(std::size_t k, const Action& a) const {
    return k * width() + action_index(a, vocab_size, input_len);
  }
  std::size_t steps() const { return log_probs.shape()[0]; }
};

namespace detail {

inline void check_table(const StepScores& s, const CorrectActionTable& table) {
  if (table.size() != s.steps())
    throw ShapeError("correct-action table has " + std::to_string(table.size()) + " rows but scores have " +
                     std::to_string(s.steps()));
  for (std::size_t k = 0; k < table.size(); ++k)
    if (table[k].empty())
      throw ValidationError("internal error: no correct action at output position " + std::to_string(k));
}

}  // namespace detail

// log p(y | x) summed over every action sequence producing y, by the suffix
// recursion L[m] = log q(EOS | y), L[k] = logsumexp_a (log q(a | y[:k]) + L[k + |a|]).
// Differentiable; cost is linear in the total size of the table.
inline ad::Var marginal_log_likelihood(const StepScores& s, const CorrectActionTable& table) {
  detail::check_table(s, table);
  const std::size_t m = table.size() - 1;
  std::vector<ad::Var> suffix(m + 1);
  suffix[m] = ad::pick(s.log_probs, s.index(m, Action::eos()));
  std::vector<std::size_t> idx;
  std::vector<ad::Var> cont;
  for (std::size_t k = m; k-- > 0;) {
    idx.clear();
    cont.clear();
    for (const Action& a : table[k]) {
      idx.push_back(s.index(k, a));
      cont.push_back(suffix[k + static_cast<std::size_t>(a.length())]);
    }
    suffix[k] = ad::logsumexp(ad::add(ad::gather(s.log_probs, idx), ad::stack(cont)), 0);
  }
  return suffix[0];
}

// Per-step "any correct action" loss, with no credit for how the suffix
// continues: sum_k -log sum_{a in correct[k]} q(a | y[:k]).
inline ad::Var loss_no_marginalization(const StepScores& s, const CorrectActionTable& table) {
  detail::check_table(s, table);
  std::vector<ad::Var> terms;
  terms.reserve(table.size());
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < table.size(); ++k) {
    idx.clear();
    for (const Action& a : table[k]) idx.push_back(s.index(k, a));
    terms.push_back(ad::logsumexp(ad::gather(s.log_probs, idx), 0));
  }
  return ad::neg(ad::sum(ad::stack(terms)));
}

// Deterministic path: at each position the longest correct copy (smallest
// start on ties), else the generate action; ends with Gen(EOS).
inline std::vector<Action> longest_copy_path(const CorrectActionTable& table) {
  std::vector<Action> path;
  const std::size_t m = table.size() - 1;
  std::size_t k = 0;
  while (k < m) {
    const Action* best = nullptr;
    for (const Action& a : table[k])
      if (a.is_copy() && (!best || a.length() > best->length() || (a.length() == best->length() && a.begin < best->begin)))
        best = &a;
    if (!best)
      for (const Action& a : table[k])
        if (a.is_gen()) best = &a;
    if (!best) throw ValidationError("internal error: no correct action at output position " + std::to_string(k));
    path.push_back(*best);
    k += static_cast<std::size_t>(best->length());
  }
  path.push_back(Action::eos());
  return path;
}

inline ad::Var loss_longest_copy(const StepScores& s, const CorrectActionTable& table) {
  detail::check_table(s, table);
  std::vector<std::size_t> idx;
  std::size_t k = 0;
  for (const Action& a : longest_copy_path(table)) {
    idx.push_back(s.index(k, a));
    k += a.is_eos() ? 0 : static_cast<std::size_t>(a.length());
  }
  return ad::neg(ad::sum(ad::gather(s.log_probs, idx)));
}

// Negative log-likelihood style loss of one example for the chosen objective.
inline ad::Var objective_loss(ObjectiveKind kind, const StepScores& s, const CorrectActionTable& table) {
  switch (kind) {
    case ObjectiveKind::marginal: return ad::neg(marginal_log_likelihood(s, table));
    case ObjectiveKind::multi_hot: return loss_no_marginalization(s, table);
    case ObjectiveKind::longest_copy: return loss_longest_copy(s, table);
  }
  throw ValidationError("unknown objective");
}

// Teacher-forced scores for one example on the binder's tape.
inline StepScores teacher_forced_scores(const Model& model, ParameterBinder& p, const EncodedExample& ex,
                                        ForwardMode mode) {
  EncoderVars enc = model.encode(p, ex.x_ids, mode);
  StepScores s;
  s.log_probs = model.teacher_forced_log_probs(p, enc, ex.y_ids, mode);
  s.vocab_size = model.vocab_size();
  s.input_len = ex.x_ids.size();
  return s;
}

// Convenience evaluation of log p(y | x) in inference mode.
inline double marginal_log_likelihood(const Model& model, const TokenSeq& x, const TokenSeq& y) {
  const EncodedExample ex = encode_example(model.vocab(), x, y);
  ad::Tape tape;
  ParameterBinder p(tape, model.parameters(), false);
  const StepScores s = teacher_forced_scores(model, p, ex, ForwardMode{});
  return marginal_log_likelihood(s, correct_action_table(ex, model.config().max_copy_len)).value().item();
}

inline double objective_value(const Model& model, ObjectiveKind kind, const TokenSeq& x, const TokenSeq& y) {
  const EncodedExample ex = encode_example(model.vocab(), x, y);
  ad::Tape tape;
  ParameterBinder p(tape, model.parameters(), false);
  const StepScores s = teacher_forced_scores(model, p, ex, ForwardMode{});
  return objective_loss(kind, s, correct_action_table(ex, model.config().max_copy_len)).value().item();
}

// The objective of one example as a function of all model parameters, in
// registration order; for finite-difference checks.
inline ad::ScalarFn objective_function(const Model& model, ObjectiveKind kind, const EncodedExample& ex) {
  const CorrectActionTable table = correct_action_table(ex, model.config().max_copy_len);
  return [&model, kind, ex, table](ad::Tape& tape, std::span<const ad::Var> params) {
    ParameterBinder p(tape, params);
    const StepScores s = teacher_forced_scores(model, p, ex, ForwardMode{});
    return objective_loss(kind, s, table);
  };
}

}  // namespace spanedit
