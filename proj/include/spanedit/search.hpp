#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spanedit/actions.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/model.hpp"

namespace spanedit {

struct Hypothesis {
  TokenSeq tokens;
  double log_prob = 0.0;
  bool finished = false;
};

struct GreedyResult {
  TokenSeq tokens;
  std::vector<Action> trace;
  double log_prob = 0.0;
  bool finished = false;
};

// Emitted whenever hypotheses with identical tokens are summed inside the
// search loop.
struct MergeEvent {
  std::vector<double> component_log_probs;
  double merged_log_prob = 0.0;
  std::size_t out_length = 0;
  TokenSeq tokens;
};

struct BeamOptions {
  std::size_t beam_size = 20;
  std::size_t max_len = 0;  // 0: 2 * n + 16
  bool merge_in_loop = true;
  // Recompute a merged ray's state from every contributing path and require
  // bitwise equality.
  bool verify_merged_states = false;
  std::function<void(const MergeEvent&)> on_merge;
};

inline std::size_t default_max_len(std::size_t input_len) { return 2 * input_len + 16; }

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

namespace detail {

struct Ray {
  std::vector<int> syms;
  double log_prob = 0.0;
  DecoderState state;
  bool finished = false;
};

struct SymsHash {
  std::size_t operator()(const std::vector<int>& v) const {
    std::size_t h = v.size();
    for (int s : v) h ^= static_cast<std::size_t>(s) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

struct Contribution {
  int parent = -1;  // index into the previous beam
  Action action;    // unused for carried rays
  bool carried = false;
  double log_prob = 0.0;
};

struct Candidate {
  std::vector<int> syms;
  double log_prob = kNegInf;
  bool finished = false;
  std::vector<Contribution> parts;
};

class Decoder {
 public:
  Decoder(const Model& model, const TokenSeq& input)
      : model_(model), vocab_(model.vocab()), ex_(encode_example(model.vocab(), input, {})),
        enc_(model.encode(ex_.x_ids)) {}

  const EncodedExample& example() const { return ex_; }
  const EncoderOutputs& encoder() const { return enc_; }
  DecoderState start() const { return model_.start_state(enc_); }
  ActionDistribution distribution(const DecoderState& s) const { return model_.action_distribution(s, enc_); }

  DecoderState advance(DecoderState s, const Action& a) const {
    if (a.is_gen()) return model_.advance(s, a.token);
    for (int i = a.begin; i < a.end; ++i) s = model_.advance(s, ex_.x_ids[static_cast<std::size_t>(i)]);
    return s;
  }

  TokenSeq surfaces(const std::vector<int>& syms) const { return ex_.surfaces(syms, vocab_); }

  // Lexicographic order on the surfaces of two symbol sequences.
  bool surface_less(const std::vector<int>& a, const std::vector<int>& b) const {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      const std::string& sa = ex_.surface(a[i], vocab_);
      const std::string& sb = ex_.surface(b[i], vocab_);
      if (sa != sb) return sa < sb;
    }
    return a.size() < b.size();
  }

  // Ranking used by top-k and for the returned list: higher log-probability
  // first, then lexicographically smaller tokens, then finished first.
  bool ranks_before(double la, const std::vector<int>& ta, bool fa, double lb, const std::vector<int>& tb,
                    bool fb) const {
    if (la != lb) return la > lb;
    if (ta != tb) {
      if (surface_less(ta, tb)) return true;
      if (surface_less(tb, ta)) return false;
    }
    return fa && !fb;
  }

 private:
  const Model& model_;
  const Vocab& vocab_;
  EncodedExample ex_;
  EncoderOutputs enc_;
};

inline std::vector<Hypothesis> run_beam(const Model& model, const TokenSeq& input, const BeamOptions& opt) {
  if (opt.beam_size < 1) throw ValidationError("beam_size must be >= 1");
  Decoder dec(model, input);
  const std::size_t n = input.size();
  const std::size_t max_len = opt.max_len ? opt.max_len : default_max_len(n);
  const std::size_t V = model.vocab_size();
  const auto& x_sym = dec.example().x_sym;

  std::vector<Ray> beam;
  beam.push_back(Ray{{}, 0.0, dec.start(), false});
  auto unfinished = [](const std::vector<Ray>& b) {
    return std::any_of(b.begin(), b.end(), [](const Ray& r) { return !r.finished; });
  };

  // out_length counts START, so a ray holding t tokens is expanded when
  // t + 1 <= out_length and paused while it is ahead.
  std::size_t out_length = 1;
  while (unfinished(beam) && out_length <= max_len) {
    std::vector<Candidate> cands;
    std::unordered_map<std::vector<int>, std::size_t, SymsHash> index[2];
    auto emit = [&](std::vector<int>&& syms, bool finished, const Contribution& c) {
      if (opt.merge_in_loop) {
        auto& idx = index[finished ? 1 : 0];
        auto it = idx.find(syms);
        if (it != idx.end()) {
          Candidate& cand = cands[it->second];
          cand.log_prob = log_add_exp(cand.log_prob, c.log_prob);
          cand.parts.push_back(c);
          return;
        }
        idx.emplace(syms, cands.size());
      }
      cands.push_back(Candidate{std::move(syms), c.log_prob, finished, {c}});
    };

    for (std::size_t r = 0; r < beam.size(); ++r) {
      const Ray& ray = beam[r];
      if (ray.finished || ray.syms.size() + 1 > out_length) {
        Contribution c;
        c.parent = static_cast<int>(r);
        c.carried = true;
        c.log_prob = ray.log_prob;
        emit(std::vector<int>(ray.syms), ray.finished, c);
        continue;
      }
      const ActionDistribution dist = dec.distribution(ray.state);
      for (std::size_t idx = 0; idx < dist.width(); ++idx) {
        const double lq = dist.at_index(idx);
        if (lq == kNegInf) continue;
        const Action a = action_at(idx, V, n);
        Contribution c;
        c.parent = static_cast<int>(r);
        c.action = a;
        c.log_prob = ray.log_prob + lq;
        std::vector<int> syms = ray.syms;
        if (!a.is_eos()) append_eval(a, x_sym, syms);
        emit(std::move(syms), a.is_eos(), c);
      }
    }

    std::vector<std::size_t> order(cands.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto better = [&](std::size_t a, std::size_t b) {
      return dec.ranks_before(cands[a].log_prob, cands[a].syms, cands[a].finished, cands[b].log_prob, cands[b].syms,
                              cands[b].finished);
    };
    const std::size_t keep = std::min(opt.beam_size, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
    order.resize(keep);

    std::vector<Ray> next;
    next.reserve(keep);
    for (std::size_t ci : order) {
      Candidate& cand = cands[ci];
      if (cand.parts.size() > 1 && opt.on_merge) {
        MergeEvent ev;
        for (const Contribution& c : cand.parts) ev.component_log_probs.push_back(c.log_prob);
        ev.merged_log_prob = cand.log_prob;
        ev.out_length = out_length;
        ev.tokens = dec.surfaces(cand.syms);
        opt.on_merge(ev);
      }
      auto state_from = [&](const Contribution& c) {
        const Ray& parent = beam[static_cast<std::size_t>(c.parent)];
        if (c.carried || c.action.is_eos()) return parent.state;
        return dec.advance(parent.state, c.action);
      };
      Ray ray;
      ray.syms = std::move(cand.syms);
      ray.log_prob = cand.log_prob;
      ray.finished = cand.finished;
      ray.state = state_from(cand.parts.front());
      if (opt.verify_merged_states && !ray.finished)
        for (std::size_t k = 1; k < cand.parts.size(); ++k) {
          const DecoderState other = state_from(cand.parts[k]);
          if (!(other.hidden == ray.state.hidden) || other.tokens_consumed != ray.state.tokens_consumed)
            throw std::logic_error("merged rays disagree on decoder state");
        }
      next.push_back(std::move(ray));
    }
    beam = std::move(next);
    ++out_length;
  }

  // Sum paths that ended on identical outputs (a no-op after in-loop merging).
  std::vector<Ray> merged;
  std::unordered_map<std::vector<int>, std::size_t, SymsHash> seen[2];
  for (Ray& r : beam) {
    auto& idx = seen[r.finished ? 1 : 0];
    auto it = idx.find(r.syms);
    if (it != idx.end()) {
      merged[it->second].log_prob = log_add_exp(merged[it->second].log_prob, r.log_prob);
      continue;
    }
    idx.emplace(r.syms, merged.size());
    merged.push_back(std::move(r));
  }
  std::sort(merged.begin(), merged.end(), [&](const Ray& a, const Ray& b) {
    return dec.ranks_before(a.log_prob, a.syms, a.finished, b.log_prob, b.syms, b.finished);
  });
  std::vector<Hypothesis> out;
  out.reserve(merged.size());
  for (const Ray& r : merged) out.push_back(Hypothesis{dec.surfaces(r.syms), r.log_prob, r.finished});
  return out;
}

}  // namespace detail

// Beam search over output token sequences: rays emitting identical tokens
// are merged by summing their probabilities before pruning, and rays that
// have run ahead of the current output length are carried unexpanded.
inline std::vector<Hypothesis> beam_decode(const Model& model, const TokenSeq& input, BeamOptions opt = {}) {
  opt.merge_in_loop = true;
  return detail::run_beam(model, input, opt);
}

// Ablation: rays are action paths pruned by path probability; equal outputs
// are only summed once the search has finished.
inline std::vector<Hypothesis> beam_decode_merge_at_end(const Model& model, const TokenSeq& input,
                                                        BeamOptions opt = {}) {
  opt.merge_in_loop = false;
  return detail::run_beam(model, input, opt);
}

inline GreedyResult greedy_decode(const Model& model, const TokenSeq& input, std::size_t max_len = 0) {
  detail::Decoder dec(model, input);
  const std::size_t n = input.size();
  if (max_len == 0) max_len = default_max_len(n);
  const std::size_t V = model.vocab_size();
  GreedyResult res;
  std::vector<int> syms;
  DecoderState state = dec.start();
  while (syms.size() < max_len) {
    const ActionDistribution dist = dec.distribution(state);
    std::size_t best = 0;
    double best_lq = kNegInf;
    for (std::size_t idx = 0; idx < dist.width(); ++idx)
      if (dist.at_index(idx) > best_lq) {
        best_lq = dist.at_index(idx);
        best = idx;
      }
    const Action a = action_at(best, V, n);
    res.trace.push_back(a);
    res.log_prob += best_lq;
    if (a.is_eos()) {
      res.finished = true;
      break;
    }
    append_eval(a, dec.example().x_sym, syms);
    state = dec.advance(state, a);
  }
  res.tokens = dec.surfaces(syms);
  return res;
}

}  // namespace spanedit
