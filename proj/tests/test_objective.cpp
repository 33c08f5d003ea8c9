#include <gtest/gtest.h>

#include <algorithm>

#include "helpers.hpp"
#include "spanedit/objective.hpp"
#include "spanedit/oracle.hpp"

using namespace spanedit;
using namespace spanedit::testing;

namespace {

std::vector<Action> sorted(std::vector<Action> a) {
  std::sort(a.begin(), a.end());
  return a;
}

int id(const Vocab& v, const char* s) { return *v.find(s); }

double path_log_prob(const Model& m, const TokenSeq& x, const TokenSeq& y, const std::vector<Action>& path) {
  const Vocab& v = m.vocab();
  const EncoderOutputs enc = m.encode(v.encode(x));
  DecoderState st = m.start_state(enc);
  double lp = 0;
  std::size_t k = 0;
  for (const Action& a : path) {
    lp += m.action_distribution(st, enc).log_prob(a);
    if (a.is_eos()) break;
    for (int i = 0; i < a.length(); ++i) st = m.advance(st, v.id_or_unk(y[k++]));
  }
  return lp;
}

TokenSeq random_seq(SplitMix64& rng, const std::string& alphabet, std::size_t len) {
  TokenSeq s;
  for (std::size_t i = 0; i < len; ++i) s.emplace_back(1, alphabet[rng.uniform(alphabet.size())]);
  return s;
}

}  // namespace

TEST(CorrectActions, AbcdeInstance) {
  const Vocab v = letters("abcdef");
  const TokenSeq x = toks("abcde"), y = toks("abfde");
  EXPECT_EQ(sorted(correct_actions(x, y, v, 0)),
            sorted({Action::gen(id(v, "a")), Action::copy(0, 1), Action::copy(0, 2)}));
  EXPECT_EQ(correct_actions(x, y, v, 2), (std::vector<Action>{Action::gen(id(v, "f"))}));
  EXPECT_EQ(correct_actions(x, y, v, 5), (std::vector<Action>{Action::eos()}));
  EXPECT_THROW(correct_actions(x, y, v, 6), ValidationError);
}

TEST(CorrectActions, UnknownTokenRule) {
  const Vocab v = letters("a");
  EXPECT_EQ(correct_actions(toks("a"), toks("z"), v, 0), (std::vector<Action>{Action::gen(Vocab::kUnk)}));
  // a copyable out-of-vocabulary token has copies only
  EXPECT_EQ(correct_actions(toks("az"), toks("z"), v, 0), (std::vector<Action>{Action::copy(1, 2)}));
}

TEST(CorrectActions, MaxCopyLengthLimitsSpans) {
  const Vocab v = letters("abc");
  const auto acts = correct_actions(toks("abc"), toks("abc"), v, 0, 2);
  EXPECT_EQ(sorted(acts), sorted({Action::gen(id(v, "a")), Action::copy(0, 1), Action::copy(0, 2)}));
}

TEST(CorrectActions, MatchesBruteForceOnRandomInstances) {
  SplitMix64 rng(4);
  const Vocab v = letters("abc");
  for (int trial = 0; trial < 300; ++trial) {
    const TokenSeq x = random_seq(rng, "abcz", 1 + rng.uniform(6));
    const TokenSeq y = random_seq(rng, "abcz", rng.uniform(7));
    const int cap = static_cast<int>(rng.uniform(3));
    oracle::Options opt;
    opt.max_copy_len = cap;
    for (std::size_t k = 0; k <= y.size(); ++k)
      EXPECT_EQ(sorted(correct_actions(x, y, v, k, cap)), sorted(oracle::detail::brute_force_correct(x, y, v, k, opt)));
  }
}

TEST(Marginal, EmptyOutputIsEosProbability) {
  const Vocab v = letters("ab");
  const Model m = small_model(v, 3);
  const TokenSeq x = toks("ab");
  const EncoderOutputs enc = m.encode(v.encode(x));
  const double eos = m.action_distribution(m.start_state(enc), enc).log_prob(Action::eos());
  EXPECT_NEAR(marginal_log_likelihood(m, x, {}), eos, 1e-14);
  EXPECT_NEAR(objective_value(m, ObjectiveKind::multi_hot, x, {}), -eos, 1e-14);
  EXPECT_NEAR(objective_value(m, ObjectiveKind::longest_copy, x, {}), -eos, 1e-14);
}

TEST(Marginal, AbcdeInstanceMatchesOracle) {
  const Vocab v = letters("abcdef");
  const TokenSeq x = toks("abcde"), y = toks("abfde");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = small_model(v, seed);
    const auto ref = oracle::exact_likelihood(x, y, m);
    EXPECT_EQ(ref.sequences, 25u);
    const double lp = marginal_log_likelihood(m, x, y);
    EXPECT_NEAR(std::exp(lp), ref.probability, 1e-9);
    EXPECT_NEAR(lp, ref.log_probability, 1e-9);
  }
}

TEST(Marginal, MatchesOracleOnRandomInstances) {
  SplitMix64 rng(8);
  const Vocab v = letters("abcd");
  for (int trial = 0; trial < 150; ++trial) {
    const int cap = static_cast<int>(rng.uniform(3));
    const Model m = small_model(v, 1000 + static_cast<std::uint64_t>(trial), cap, 1.0 + rng.uniform01() * 2);
    const TokenSeq x = random_seq(rng, "abcdz", 1 + rng.uniform(6));
    TokenSeq y;
    while (y.size() < 6 && rng.uniform(4) != 0) {
      if (rng.uniform(2)) {
        const std::size_t i = rng.uniform(x.size());
        const std::size_t j = std::min(x.size(), i + 1 + rng.uniform(3));
        for (std::size_t t = i; t < j && y.size() < 6; ++t) y.push_back(x[t]);
      } else {
        y.push_back(std::string(1, "abcd"[rng.uniform(4)]));
      }
    }
    oracle::Options opt;
    opt.max_copy_len = cap;
    const auto ref = oracle::exact_likelihood(x, y, m, opt);
    EXPECT_NEAR(std::exp(marginal_log_likelihood(m, x, y)), ref.probability, 1e-9);
  }
}

TEST(Marginal, DominatesEverySinglePath) {
  const Vocab v = letters("abcdef");
  const TokenSeq x = toks("abcde"), y = toks("abfde");
  const Model m = small_model(v, 9);
  const double marginal = marginal_log_likelihood(m, x, y);
  for (const auto& seq : oracle::enumerate_action_sequences(x, y, v))
    EXPECT_GE(marginal, path_log_prob(m, x, y, seq.actions));
}

TEST(Marginal, CertainPathGivesZero) {
  // Hand-built scores with all mass on one correct action per state.
  const Vocab v = letters("ab");
  const EncodedExample ex = encode_example(v, toks("ab"), toks("ab"));
  const CorrectActionTable table = correct_action_table(ex);
  const std::size_t V = 6, n = 2, w = V + n * n;
  NArray lp(Shape{3, w}, kNegInf);
  lp.at(0, action_index(Action::copy(0, 2), V, n)) = 0.0;
  lp.at(1, action_index(Action::copy(1, 2), V, n)) = 0.0;
  lp.at(2, Vocab::kEos) = 0.0;
  ad::Tape t;
  StepScores s{t.constant(lp), V, n};
  EXPECT_EQ(marginal_log_likelihood(s, table).value().item(), 0.0);
}

TEST(Marginal, GradientMatchesFiniteDifferences) {
  const Vocab v = letters("abcdf");
  ModelConfig c;
  c.embed_dim = 3;
  c.enc_hidden = 2;
  c.enc_layers = 2;
  c.dec_hidden = 3;
  c.dropout = 0.0;
  c.init_seed = 5;
  const Model m(c, v);
  const EncodedExample ex = encode_example(v, toks("abcd"), toks("abfcd"));
  std::vector<NArray> params;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) params.push_back(m.parameters().value(i));
  for (ObjectiveKind kind : {ObjectiveKind::marginal, ObjectiveKind::multi_hot, ObjectiveKind::longest_copy}) {
    const auto r = ad::grad_check(objective_function(m, kind, ex), params);
    EXPECT_LE(r.max_relative_error, 1e-4) << to_string(kind) << " worst " << m.parameters().name(r.worst_param);
  }
}

TEST(Marginal, CompletenessOverShortOutputs) {
  const Vocab v = letters("abc");
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Model m = small_model(v, seed, 0, 1.5);
    const TokenSeq x = toks("ab");
    std::vector<double> logs;
    std::vector<TokenSeq> frontier{{}};
    for (int len = 0; len <= 3; ++len) {
      std::vector<TokenSeq> next;
      for (const TokenSeq& y : frontier) {
        logs.push_back(marginal_log_likelihood(m, x, y));
        for (char c : std::string("abc")) {
          TokenSeq z = y;
          z.emplace_back(1, c);
          next.push_back(z);
        }
      }
      frontier = next;
    }
    EXPECT_EQ(logs.size(), 1u + 3 + 9 + 27);
    EXPECT_LE(std::exp(log_sum(logs)), 1.0 + 1e-6);
  }
}

TEST(MultiHot, DiffersFromMarginalWhenPathsOverlap) {
  const Vocab v = letters("abcdef");
  const TokenSeq x = toks("abcde"), y = toks("abfde");
  const Model m = small_model(v, 2);
  EXPECT_GT(std::abs(objective_value(m, ObjectiveKind::multi_hot, x, y) + marginal_log_likelihood(m, x, y)), 1e-6);
}

TEST(MultiHot, EqualsMarginalWithSingleActionPerStep) {
  // Disjoint alphabets: every step has exactly one correct action.
  const Vocab v = letters("abxy");
  const Model m = small_model(v, 6);
  const TokenSeq x = toks("ab"), y = toks("xyx");
  EXPECT_NEAR(objective_value(m, ObjectiveKind::multi_hot, x, y), -marginal_log_likelihood(m, x, y), 1e-12);
}

TEST(LongestCopy, Paths) {
  const Vocab v = letters("abcdef");
  auto path = [&](const char* x, const char* y) {
    return longest_copy_path(correct_action_table(encode_example(v, toks(x), toks(y))));
  };
  EXPECT_EQ(path("abc", "abc"), (std::vector<Action>{Action::copy(0, 3), Action::eos()}));
  EXPECT_EQ(path("abcde", "abfde"), (std::vector<Action>{Action::copy(0, 2), Action::gen(id(v, "f")),
                                                          Action::copy(3, 5), Action::eos()}));
  // ties go to the smallest start
  EXPECT_EQ(path("abab", "ab"), (std::vector<Action>{Action::copy(0, 2), Action::eos()}));
  EXPECT_EQ(path("ab", "ef"), (std::vector<Action>{Action::gen(id(v, "e")), Action::gen(id(v, "f")), Action::eos()}));
}

TEST(LongestCopy, NoCopyInstanceIsTokenNll) {
  const Vocab v = letters("abef");
  const Model m = small_model(v, 7);
  const TokenSeq x = toks("ab"), y = toks("fe");
  const std::vector<Action> gens{Action::gen(id(v, "f")), Action::gen(id(v, "e")), Action::eos()};
  EXPECT_NEAR(objective_value(m, ObjectiveKind::longest_copy, x, y), -path_log_prob(m, x, y, gens), 1e-12);
}

TEST(ObjectiveKinds, RoundTripNames) {
  for (ObjectiveKind k : {ObjectiveKind::marginal, ObjectiveKind::multi_hot, ObjectiveKind::longest_copy})
    EXPECT_EQ(parse_objective_kind(to_string(k)), k);
  EXPECT_THROW(parse_objective_kind("mle"), ValidationError);
}

TEST(Tables, ShapeMismatchIsReported) {
  const Vocab v = letters("ab");
  const EncodedExample ex = encode_example(v, toks("ab"), toks("ab"));
  ad::Tape t;
  StepScores s{t.constant(NArray(Shape{2, 10}, -1.0)), 6, 2};
  EXPECT_THROW(marginal_log_likelihood(s, correct_action_table(ex)), ShapeError);
}
