// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance [--only N[,N...]] [--quick]
//
// --quick shrinks the training experiments (criteria 5-8) for smoke runs;
// its verdicts are not meaningful.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spanedit/spanedit.hpp"

using namespace spanedit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

const std::vector<std::string> kLetters = {"a", "b", "c", "d", "e", "f"};

// Multiplies every parameter by `scale` so that random models produce
// peaked, not near-uniform, distributions.
void scale_parameters(Model& m, double scale) {
  for (std::size_t p = 0; p < m.parameters().size(); ++p)
    for (double& v : m.parameters().value(p).values()) v *= scale;
}

Model random_model(SplitMix64& rng, const Vocab& vocab, int max_copy_len) {
  ModelConfig c;
  c.embed_dim = static_cast<int>(rng.uniform_int(2, 6));
  c.enc_hidden = static_cast<int>(rng.uniform_int(2, 5));
  c.enc_layers = static_cast<int>(rng.uniform_int(1, 2));
  c.dec_hidden = static_cast<int>(rng.uniform_int(2, 6));
  c.tie_embeddings = rng.uniform(2) == 0;
  c.max_copy_len = max_copy_len;
  c.init_seed = rng.next();
  Model m(c, vocab);
  scale_parameters(m, rng.uniform_real(0.5, 3.0));
  return m;
}

TokenSeq random_tokens(SplitMix64& rng, std::size_t len, const std::vector<std::string>& alphabet) {
  TokenSeq t(len);
  for (auto& s : t) s = alphabet[rng.uniform(alphabet.size())];
  return t;
}

// A target that mixes substrings of x with random tokens, so that both
// copying and generation are exercised.
TokenSeq random_target(SplitMix64& rng, const TokenSeq& x, std::size_t max_len,
                       const std::vector<std::string>& alphabet) {
  const auto m = static_cast<std::size_t>(rng.uniform(max_len + 1));
  TokenSeq y;
  while (y.size() < m) {
    if (rng.uniform(2) == 0) {
      const std::size_t i = rng.uniform(x.size());
      const std::size_t len = 1 + rng.uniform(std::min(x.size() - i, m - y.size()));
      y.insert(y.end(), x.begin() + static_cast<std::ptrdiff_t>(i), x.begin() + static_cast<std::ptrdiff_t>(i + len));
    } else {
      y.push_back(alphabet[rng.uniform(alphabet.size())]);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------

Verdict criterion_oracle_equivalence() {
  const auto t0 = Clock::now();
  SplitMix64 rng(0xC0FFEE);
  const std::size_t instances = 500;
  double max_abs = 0.0, max_rel = 0.0;
  std::size_t sequences = 0;
  for (std::size_t it = 0; it < instances; ++it) {
    std::vector<std::string> letters = kLetters;
    shuffle_in_place(letters, rng);
    const std::size_t known = 1 + rng.uniform(letters.size());
    Vocab vocab(std::vector<std::string>(letters.begin(), letters.begin() + static_cast<std::ptrdiff_t>(known)));
    const int max_copy = std::array<int, 6>{0, 0, 0, 1, 2, 3}[rng.uniform(6)];
    Model model = random_model(rng, vocab, max_copy);
    const TokenSeq x = random_tokens(rng, 1 + rng.uniform(6), kLetters);
    const TokenSeq y = random_target(rng, x, 6, kLetters);
    const double dp = std::exp(marginal_log_likelihood(model, x, y));
    oracle::Options opt;
    opt.max_copy_len = max_copy;
    const oracle::Likelihood ref = oracle::exact_likelihood(x, y, model, opt);
    sequences += ref.sequences;
    const double err = std::abs(dp - ref.probability);
    max_abs = std::max(max_abs, err);
    if (ref.probability > 0) max_rel = std::max(max_rel, err / ref.probability);
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = max_abs <= 1e-9 && secs <= 60.0;
  v.detail = std::to_string(instances) + " instances (" + std::to_string(sequences) +
             " action sequences), max |p_dp - p_oracle| = " + fmt(max_abs) + " (tol 1e-09), max rel = " +
             fmt(max_rel) + ", " + fmt(secs) + " s (limit 60 s)";
  return v;
}

Verdict criterion_lattice() {
  const Vocab vocab({"a", "b", "c", "d", "e", "f"});
  const TokenSeq x{"a", "b", "c", "d", "e"}, y{"a", "b", "f", "d", "e"};
  const auto seqs = oracle::enumerate_action_sequences(x, y, vocab);
  const int a = *vocab.find("a"), b = *vocab.find("b");
  bool gen_prefix = false, copy_prefix = false, replay_ok = true;
  std::set<std::vector<Action>> distinct;
  for (const auto& s : seqs) {
    distinct.insert(s.actions);
    if (s.actions.size() >= 2 && s.actions[0] == Action::gen(a) && s.actions[1] == Action::gen(b)) gen_prefix = true;
    if (s.actions[0] == Action::copy(0, 2)) copy_prefix = true;
    replay_ok = replay_ok && oracle::replay(s, x, vocab) == y;
  }
  Verdict v;
  v.pass = seqs.size() == 25 && distinct.size() == 25 && gen_prefix && copy_prefix && replay_ok;
  v.detail = std::to_string(seqs.size()) + " sequences (expected 25), distinct " + std::to_string(distinct.size()) +
             ", [Gen(a),Gen(b),...] " + (gen_prefix ? "present" : "MISSING") + ", [Copy(0,2),...] " +
             (copy_prefix ? "present" : "MISSING") + ", replay " + (replay_ok ? "ok" : "MISMATCH");
  return v;
}

Verdict criterion_gradient() {
  const auto t0 = Clock::now();
  const Vocab vocab({"a", "b", "c", "d"});
  ModelConfig c;
  c.embed_dim = 3;
  c.enc_hidden = 3;
  c.enc_layers = 2;
  c.dec_hidden = 4;
  c.init_seed = 17;
  Model model(c, vocab);
  scale_parameters(model, 1.5);
  const EncodedExample ex = encode_example(vocab, {"a", "b", "c", "a"}, {"a", "b", "d", "c", "a", "q"});
  std::vector<NArray> params;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) params.push_back(model.parameters().value(p));
  const auto report = ad::grad_check(objective_function(model, ObjectiveKind::marginal, ex), params);
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = report.max_relative_error <= 1e-4 && secs <= 30.0;
  v.detail = std::to_string(report.coordinates) + " coordinates, max relative error " +
             fmt(report.max_relative_error) + " (tol 1e-04) at " + model.parameters().name(report.worst_param) + "[" +
             std::to_string(report.worst_index) + "], " + fmt(secs) + " s (limit 30 s)";
  return v;
}

void all_sequences(const std::vector<std::string>& alphabet, std::size_t max_len, TokenSeq& cur,
                   std::vector<TokenSeq>& out) {
  out.push_back(cur);
  if (cur.size() == max_len) return;
  for (const auto& t : alphabet) {
    cur.push_back(t);
    all_sequences(alphabet, max_len, cur, out);
    cur.pop_back();
  }
}

Verdict criterion_beam_exactness() {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  const Vocab vocab(alphabet);
  const std::size_t max_len = 6;
  // Finished rays can hold at most max_len - 1 tokens: EOS is emitted at
  // out_length = tokens + 1 <= max_len.
  std::vector<TokenSeq> targets;
  TokenSeq cur;
  all_sequences(alphabet, max_len - 1, cur, targets);

  SplitMix64 rng(0xBEA4);
  double max_abs = 0.0, max_merge = 0.0;
  std::size_t compared = 0, missing = 0, events = 0, models = 0;
  for (std::size_t n = 1; n <= 4; ++n)
    for (int draw = 0; draw < 3; ++draw) {
      Model model = random_model(rng, vocab, 0);
      const TokenSeq x = random_tokens(rng, n, alphabet);
      ++models;
      BeamOptions opt;
      opt.beam_size = 1u << 30;
      opt.max_len = max_len;
      opt.verify_merged_states = true;
      opt.on_merge = [&](const MergeEvent& e) {
        ++events;
        double sum = 0.0;
        for (double l : e.component_log_probs) sum += std::exp(l);
        max_merge = std::max(max_merge, std::abs(sum - std::exp(e.merged_log_prob)));
      };
      std::map<TokenSeq, double> beam;
      for (const Hypothesis& h : beam_decode(model, x, opt))
        if (h.finished) beam[h.tokens] = std::exp(h.log_prob);
      for (const TokenSeq& y : targets) {
        const double ref = oracle::exact_likelihood(x, y, model).probability;
        auto it = beam.find(y);
        if (it == beam.end()) {
          ++missing;
          max_abs = std::max(max_abs, ref);
          continue;
        }
        ++compared;
        max_abs = std::max(max_abs, std::abs(it->second - ref));
      }
    }
  Verdict v;
  v.pass = missing == 0 && max_abs <= 1e-9 && max_merge <= 1e-12 && events > 0;
  v.detail = std::to_string(models) + " models, " + std::to_string(compared) + " targets compared (" +
             std::to_string(missing) + " missing), max |p_beam - p_oracle| = " + fmt(max_abs) + " (tol 1e-09); " +
             std::to_string(events) + " merge events, max |sum(components) - merged| = " + fmt(max_merge) +
             " (tol 1e-12), merged states verified";
  return v;
}

Verdict criterion_invariants() {
  const auto t0 = Clock::now();
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e"};
  std::vector<std::string> with_oov = alphabet;
  with_oov.push_back("zz");
  const Vocab vocab(alphabet);
  SplitMix64 rng(0x1A7A);
  double worst_norm = 0.0, worst_tf = 0.0;
  std::size_t mask_errors = 0, path_errors = 0, beam_errors = 0, draws = 0;
  for (std::size_t n = 1; n <= 8; ++n)
    for (int draw = 0; draw < 100; ++draw, ++draws) {
      const int max_copy = static_cast<int>(rng.uniform(4));
      Model model = random_model(rng, vocab, max_copy);
      const TokenSeq x = random_tokens(rng, n, with_oov);
      const TokenSeq y = random_target(rng, x, 6, with_oov);
      const EncodedExample ex = encode_example(vocab, x, y);
      const EncoderOutputs enc = model.encode(ex.x_ids);
      const auto mask = model.action_mask(n);

      // Normalization and masking along the gold prefix.
      std::vector<DecoderState> states{model.start_state(enc)};
      for (int id : ex.y_ids) states.push_back(model.advance(states.back(), id));
      for (const DecoderState& s : states) {
        const ActionDistribution d = model.action_distribution(s, enc);
        double mx = kNegInf;
        for (std::size_t i = 0; i < d.width(); ++i) mx = std::max(mx, d.at_index(i));
        double z = 0.0;
        for (std::size_t i = 0; i < d.width(); ++i) {
          const double l = d.at_index(i);
          const bool masked = (*mask)[i] != 0;
          if (masked != (l == kNegInf) || (!masked && !std::isfinite(l))) ++mask_errors;
          if (l != kNegInf) z += std::exp(l - mx);
        }
        worst_norm = std::max(worst_norm, std::abs(mx + std::log(z)));
      }

      // Batched teacher forcing agrees with step-by-step decoding.
      {
        ad::Tape tape;
        ParameterBinder p(tape, model.parameters(), false);
        const EncoderVars ev = model.encode(p, ex.x_ids, ForwardMode{});
        const NArray tf = model.teacher_forced_states(p, ev, ex.y_ids, ForwardMode{}).value();
        for (std::size_t k = 0; k < states.size(); ++k)
          for (std::size_t j = 0; j < tf.cols(); ++j)
            worst_tf = std::max(worst_tf, std::abs(tf.at(k, j) - states[k].hidden[j]));
      }

      // Path independence: any two action paths emitting the same tokens reach
      // bitwise identical states. Compare token-by-token feeding with the
      // longest-copy segmentation.
      const auto table = correct_action_table(ex, max_copy);
      std::size_t k = 0;
      DecoderState s = states.front();
      for (const Action& a : longest_copy_path(table)) {
        if (a.is_eos()) break;
        for (int t = 0; t < a.length(); ++t) s = model.advance(s, ex.y_ids[k + static_cast<std::size_t>(t)]);
        k += static_cast<std::size_t>(a.length());
        if (!(s.hidden == states[k].hidden) || s.tokens_consumed != static_cast<int>(k)) ++path_errors;
      }

      // Beam invariants with merged-state verification.
      BeamOptions opt;
      opt.beam_size = 1 + rng.uniform(6);
      opt.max_len = 4;
      opt.verify_merged_states = true;
      try {
        const auto hyps = beam_decode(model, x, opt);
        std::set<std::pair<TokenSeq, bool>> keys;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          keys.insert({hyps[i].tokens, hyps[i].finished});
          if (hyps[i].log_prob > 1e-12) ++beam_errors;
          if (i > 0 && hyps[i].log_prob > hyps[i - 1].log_prob) ++beam_errors;
        }
        if (keys.size() != hyps.size() || hyps.size() > opt.beam_size) ++beam_errors;
      } catch (const std::exception&) {
        ++beam_errors;
      }
    }
  Verdict v;
  v.pass = worst_norm <= 1e-9 && mask_errors == 0 && worst_tf <= 1e-12 && path_errors == 0 && beam_errors == 0;
  v.detail = std::to_string(draws) + " draws (n = 1..8 x 100): max |log Z| = " + fmt(worst_norm) +
             " (tol 1e-09), mask errors " + std::to_string(mask_errors) + ", teacher-forced vs stepwise max diff " +
             fmt(worst_tf) + ", path-dependent states " + std::to_string(path_errors) + ", beam invariant errors " +
             std::to_string(beam_errors) + ", " + fmt(seconds_since(t0)) + " s";
  return v;
}

Verdict criterion_scaling() {
  const std::vector<std::size_t> sizes{32, 64, 128};
  std::vector<double> times;
  for (std::size_t N : sizes) {
    // Distinct tokens and y = x: every suffix of y is copyable from many
    // starts, so the table holds N (N + 1) / 2 copies plus N generations.
    std::vector<std::string> surfaces;
    for (std::size_t i = 0; i < N; ++i) surfaces.push_back("t" + std::to_string(i));
    const Vocab vocab(surfaces);
    const EncodedExample ex = encode_example(vocab, surfaces, surfaces);
    const std::size_t V = static_cast<std::size_t>(vocab.size());
    const std::size_t width = V + N * N;
    // Fixed per-step scores: the DP is timed apart from the network.
    NArray scores(Shape{N + 1, width});
    SplitMix64 rng(N);
    for (double& v : scores.values()) v = -rng.uniform_real(0.1, 5.0);
    std::vector<double> samples;
    for (int rep = 0; rep < 15; ++rep) {
      const auto t0 = Clock::now();
      ad::Tape tape;
      StepScores s;
      s.log_probs = tape.constant_ref(scores);
      s.vocab_size = V;
      s.input_len = N;
      const double ll = marginal_log_likelihood(s, correct_action_table(ex)).value().item();
      samples.push_back(seconds_since(t0));
      if (!std::isfinite(ll)) return {false, "non-finite likelihood at N = " + std::to_string(N)};
    }
    std::nth_element(samples.begin(), samples.begin() + 7, samples.end());
    times.push_back(samples[7]);
  }
  // Least squares t = a + c N^2.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double x = static_cast<double>(sizes[i] * sizes[i]);
    sx += x;
    sy += times[i];
    sxx += x * x;
    sxy += x * times[i];
  }
  const double k = static_cast<double>(sizes.size());
  const double c = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  const double a = (sy - c * sx) / k;
  double worst = 0.0;
  std::vector<double> residuals;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double fit = a + c * static_cast<double>(sizes[i] * sizes[i]);
    residuals.push_back(std::abs(times[i] - fit) / times[i]);
    worst = std::max(worst, residuals.back());
  }
  Verdict v;
  v.pass = c > 0 && worst <= 0.25;
  v.detail = "median seconds at N = 32/64/128: " + fmt_list(times) + "; fit t = " + fmt(a) + " + " + fmt(c) +
             " N^2, relative residuals " + fmt_list(residuals) + " (tol 0.25)";
  return v;
}

// ---------------------------------------------------------------------------
// Training experiments shared by criteria 5-8.

struct ExperimentSetup {
  std::size_t examples = 2000;
  int alphabet = 30;
  int min_len = 6;
  int max_len = 20;
  int dim = 32;
  std::size_t epochs = 8;
  std::size_t beam = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct RunMetrics {
  double accuracy = 0.0;            // top-1 of the merged beam
  double accuracy_at_20 = 0.0;      // merged beam
  double accuracy_at_20_end = 0.0;  // merge-at-end beam
  double input_mrr = 0.0;           // merged beam
  double greedy_accuracy = 0.0;
  double mean_copy_length = 0.0;  // greedy traces
  double seconds = 0.0;
};

struct Variant {
  std::string name;
  TaskKind task;
  int max_copy_len;
  ObjectiveKind objective;
  bool merge_at_end;
};

RunMetrics run_experiment(const ExperimentSetup& setup, const Variant& var, std::uint64_t seed) {
  const auto t0 = Clock::now();
  TaskSpec spec;
  spec.kind = var.task;
  spec.alphabet_size = setup.alphabet;
  spec.min_len = setup.min_len;
  spec.max_len = setup.max_len;
  spec.seed = 2024;
  const CorpusSplits splits = split_corpus(generate_corpus(spec, setup.examples));
  const Vocab vocab = build_vocab(splits.train, 10000);
  ModelConfig mc;
  mc.embed_dim = setup.dim;
  mc.enc_hidden = setup.dim;
  mc.dec_hidden = setup.dim;
  mc.dropout = 0.1;
  mc.max_copy_len = var.max_copy_len;
  mc.init_seed = mix_seed(seed, 1);
  Model model(mc, vocab);
  TrainConfig tc;
  tc.objective = var.objective;
  tc.epochs = setup.epochs;
  tc.shuffle_seed = mix_seed(seed, 2);
  tc.dropout_seed = mix_seed(seed, 3);
  tc.valid_every = setup.epochs;  // validate once, at the end
  train(model, splits.train, splits.valid, tc);

  std::vector<CandidateList> merged, at_end;
  std::vector<TokenSeq> gold, inputs;
  std::vector<std::vector<Action>> traces;
  std::size_t greedy_hits = 0;
  auto finished_tokens = [](const std::vector<Hypothesis>& hyps) {
    CandidateList out;
    for (const Hypothesis& h : hyps)
      if (h.finished) out.push_back(h.tokens);
    return out;
  };
  for (const EditExample& ex : splits.test) {
    BeamOptions opt;
    opt.beam_size = setup.beam;
    merged.push_back(finished_tokens(beam_decode(model, ex.input, opt)));
    if (var.merge_at_end) at_end.push_back(finished_tokens(beam_decode_merge_at_end(model, ex.input, opt)));
    const GreedyResult g = greedy_decode(model, ex.input);
    greedy_hits += g.tokens == ex.output;
    traces.push_back(g.trace);
    gold.push_back(ex.output);
    inputs.push_back(ex.input);
  }
  RunMetrics r;
  const EvalReport rep = evaluate(merged, gold, inputs, traces, 20);
  r.accuracy = rep.accuracy;
  r.accuracy_at_20 = rep.accuracy_at_k;
  r.input_mrr = rep.input_mrr;
  r.mean_copy_length = rep.spans.mean;
  r.greedy_accuracy = static_cast<double>(greedy_hits) / static_cast<double>(gold.size());
  if (var.merge_at_end) r.accuracy_at_20_end = accuracy_at_k(at_end, gold, 20);
  r.seconds = seconds_since(t0);
  return r;
}

struct Experiments {
  std::map<std::string, std::vector<RunMetrics>> runs;

  std::vector<double> collect(const std::string& variant, double RunMetrics::*field) const {
    std::vector<double> out;
    for (const RunMetrics& r : runs.at(variant)) out.push_back(r.*field);
    return out;
  }
};

Experiments run_experiments(const ExperimentSetup& setup) {
  const std::vector<Variant> variants{
      {"delete/span", TaskKind::del, 0, ObjectiveKind::marginal, true},
      {"delete/token", TaskKind::del, 1, ObjectiveKind::marginal, false},
      {"duplicate_span/span", TaskKind::duplicate_span, 0, ObjectiveKind::marginal, true},
      {"duplicate_span/token", TaskKind::duplicate_span, 1, ObjectiveKind::marginal, false},
      {"duplicate_span/multi_hot", TaskKind::duplicate_span, 0, ObjectiveKind::multi_hot, false},
      {"duplicate_span/longest_copy", TaskKind::duplicate_span, 0, ObjectiveKind::longest_copy, false},
  };
  Experiments e;
  for (const Variant& v : variants)
    for (std::uint64_t seed : setup.seeds) {
      const RunMetrics r = run_experiment(setup, v, seed);
      std::cout << "  run " << v.name << " seed " << seed << ": acc " << fmt(r.accuracy) << ", acc@20 "
                << fmt(r.accuracy_at_20) << (v.merge_at_end ? ", acc@20 merge-at-end " + fmt(r.accuracy_at_20_end) : "")
                << ", input_mrr " << fmt(r.input_mrr) << ", greedy acc " << fmt(r.greedy_accuracy)
                << ", mean copy len " << fmt(r.mean_copy_length) << ", " << fmt(r.seconds) << " s" << std::endl;
      e.runs[v.name].push_back(r);
    }
  return e;
}

Verdict criterion_span_vs_token(const Experiments& e, double seconds) {
  bool pass = seconds <= 1800.0;
  std::string detail;
  for (const std::string task : {"delete", "duplicate_span"}) {
    const auto span = e.collect(task + "/span", &RunMetrics::accuracy);
    const auto token = e.collect(task + "/token", &RunMetrics::accuracy);
    pass = pass && mean(span) > mean(token);
    detail += task + ": span " + fmt(mean(span)) + " " + fmt_list(span) + " vs token " + fmt(mean(token)) + " " +
              fmt_list(token) + "; ";
  }
  return {pass, detail + "training and evaluation " + fmt(seconds) + " s (limit 1800 s)"};
}

Verdict criterion_ablations(const Experiments& e) {
  const auto marg = e.collect("duplicate_span/span", &RunMetrics::accuracy_at_20);
  const auto multi = e.collect("duplicate_span/multi_hot", &RunMetrics::accuracy_at_20);
  const auto longest = e.collect("duplicate_span/longest_copy", &RunMetrics::accuracy_at_20);
  const auto marg_len = e.collect("duplicate_span/span", &RunMetrics::mean_copy_length);
  const auto multi_len = e.collect("duplicate_span/multi_hot", &RunMetrics::mean_copy_length);
  Verdict v;
  v.pass = mean(marg) >= mean(multi) && mean(marg) >= mean(longest) && mean(multi_len) < mean(marg_len);
  v.detail = "acc@20 marginal " + fmt(mean(marg)) + " vs no-marginalization " + fmt(mean(multi)) +
             " vs always-copy-longest " + fmt(mean(longest)) + "; mean greedy copy length marginal " +
             fmt(mean(marg_len)) + " vs no-marginalization " + fmt(mean(multi_len));
  return v;
}

Verdict criterion_merge(const Experiments& e) {
  bool pass = true;
  std::string detail;
  for (const std::string task : {"delete", "duplicate_span"}) {
    const auto merged = e.collect(task + "/span", &RunMetrics::accuracy_at_20);
    const auto at_end = e.collect(task + "/span", &RunMetrics::accuracy_at_20_end);
    pass = pass && mean(merged) >= mean(at_end);
    detail += task + ": acc@20 merged " + fmt(mean(merged)) + " vs merge-at-end " + fmt(mean(at_end)) + "; ";
  }
  return {pass, detail + "beam 20, same checkpoints"};
}

Verdict criterion_input_mrr(const Experiments& e) {
  const auto span = e.collect("delete/span", &RunMetrics::input_mrr);
  const auto token = e.collect("delete/token", &RunMetrics::input_mrr);
  return {mean(span) < mean(token), "delete: input MRR span " + fmt(mean(span)) + " " + fmt_list(span) +
                                        " vs token " + fmt(mean(token)) + " " + fmt_list(token)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--quick") {
      quick = true;
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--only N[,N...]] [--quick]\n";
      return 1;
    }
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c); };

  std::map<int, std::pair<std::string, Verdict>> results;
  auto report = [&](int id, const std::string& name, const Verdict& v) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << v.detail << std::endl;
    results[id] = {name, v};
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, Verdict{false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "oracle_equivalence", criterion_oracle_equivalence);
  guarded(2, "abcde_lattice", criterion_lattice);
  guarded(3, "gradient_check", criterion_gradient);
  guarded(4, "beam_exactness", criterion_beam_exactness);
  guarded(9, "normalization_path_independence", criterion_invariants);
  guarded(10, "quadratic_scaling", criterion_scaling);

  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    ExperimentSetup setup;
    if (quick) {
      setup.examples = 300;
      setup.epochs = 1;
      setup.seeds = {1};
    }
    std::cout << "training experiments: " << setup.examples << " examples per task, lengths " << setup.min_len << ".."
              << setup.max_len << ", dim " << setup.dim << ", " << setup.epochs << " epochs, seeds "
              << setup.seeds.size() << std::endl;
    const auto t0 = Clock::now();
    try {
      const Experiments e = run_experiments(setup);
      const double secs = seconds_since(t0);
      guarded(5, "span_vs_token_accuracy", [&] { return criterion_span_vs_token(e, secs); });
      guarded(6, "objective_ablations", [&] { return criterion_ablations(e); });
      guarded(7, "merged_vs_merge_at_end", [&] { return criterion_merge(e); });
      guarded(8, "input_mrr_direction", [&] { return criterion_input_mrr(e); });
    } catch (const std::exception& ex) {
      for (auto [id, name] : std::vector<std::pair<int, std::string>>{{5, "span_vs_token_accuracy"},
                                                                     {6, "objective_ablations"},
                                                                     {7, "merged_vs_merge_at_end"},
                                                                     {8, "input_mrr_direction"}})
        if (wanted(id)) report(id, name, Verdict{false, std::string("exception: ") + ex.what()});
    }
  }

  std::size_t failed = 0;
  for (const auto& [id, r] : results) failed += !r.second.pass;
  std::cout << "acceptance: " << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
