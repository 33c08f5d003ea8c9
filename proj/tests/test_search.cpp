#include <gtest/gtest.h>

#include <map>
#include <set>

#include "helpers.hpp"
#include "spanedit/oracle.hpp"
#include "spanedit/search.hpp"

using namespace spanedit;
using namespace spanedit::testing;

namespace {

bool has_unk(const TokenSeq& t) {
  for (const auto& s : t)
    if (s == "<unk>") return true;
  return false;
}

std::map<TokenSeq, double> finished_map(const std::vector<Hypothesis>& hs) {
  std::map<TokenSeq, double> m;
  for (const auto& h : hs)
    if (h.finished) m[h.tokens] = h.log_prob;
  return m;
}

// All parameters zero except the output bias: every decoder state is the
// same, vocabulary scores are the bias and every span scores 0.
Model constant_model(const Vocab& v, double eos_bias, double other_bias) {
  Model m = small_model(v, 1);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) m.parameters().value(i).fill(0.0);
  NArray& b = m.parameters().value(*m.parameters().find("dec.out.b"));
  b.fill(other_bias);
  b[Vocab::kEos] = eos_bias;
  return m;
}

}  // namespace

TEST(Beam, RejectsZeroWidth) {
  const Vocab v = letters("ab");
  const Model m = small_model(v, 1);
  BeamOptions o;
  o.beam_size = 0;
  EXPECT_THROW(beam_decode(m, toks("ab"), o), ValidationError);
}

TEST(Beam, MergesTokenAndSpanPaths) {
  const Vocab v = letters("ab");
  const Model m = small_model(v, 2);
  BeamOptions o;
  o.beam_size = 1000;
  o.max_len = 3;
  o.verify_merged_states = true;
  bool saw_ab = false;
  o.on_merge = [&](const MergeEvent& e) {
    EXPECT_NEAR(e.merged_log_prob, log_sum(e.component_log_probs), 1e-12);
    EXPECT_GE(e.component_log_probs.size(), 2u);
    if (e.tokens == toks("ab")) saw_ab = true;
  };
  const auto out = beam_decode(m, toks("ab"), o);
  EXPECT_TRUE(saw_ab);
  // no two results share a token sequence and the list is ranked
  std::set<std::pair<TokenSeq, bool>> keys;
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_TRUE(keys.insert({out[i].tokens, out[i].finished}).second);
    EXPECT_LE(out[i].log_prob, 0.0);
    if (i) EXPECT_GE(out[i - 1].log_prob, out[i].log_prob);
  }
}

TEST(Beam, FullWidthMatchesOracle) {
  const Vocab v = letters("abc");
  SplitMix64 rng(3);
  for (std::size_t n = 1; n <= 4; ++n) {
    const Model m = small_model(v, 40 + n, 0, 1.5);
    TokenSeq x;
    for (std::size_t i = 0; i < n; ++i) x.emplace_back(1, "abc"[rng.uniform(3)]);
    BeamOptions o;
    o.beam_size = std::size_t{1} << 30;
    o.max_len = 5;
    o.verify_merged_states = true;
    std::size_t compared = 0;
    for (const auto& h : beam_decode(m, x, o)) {
      if (!h.finished || h.tokens.size() > 4 || has_unk(h.tokens)) continue;
      EXPECT_NEAR(h.log_prob, oracle::exact_likelihood(x, h.tokens, m).log_probability, 1e-9);
      ++compared;
    }
    // every output over {a, b, c} of length <= 4 is reachable
    EXPECT_EQ(compared, 1u + 3 + 9 + 27 + 81);
  }
}

TEST(Beam, MergeAtEndAgreesWithFullWidthBeam) {
  const Vocab v = letters("ab");
  const Model m = small_model(v, 5);
  BeamOptions o;
  o.beam_size = std::size_t{1} << 30;
  o.max_len = 4;
  const auto a = finished_map(beam_decode(m, toks("aba"), o));
  const auto b = finished_map(beam_decode_merge_at_end(m, toks("aba"), o));
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [tokens, lp] : a) {
    ASSERT_TRUE(b.count(tokens));
    EXPECT_NEAR(b.at(tokens), lp, 1e-10);
  }
}

TEST(Beam, WidthOneMergeAtEndIsGreedy) {
  const Vocab v = letters("abcd");
  SplitMix64 rng(9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Model m = small_model(v, seed, 0, 2.5);
    TokenSeq x;
    for (std::size_t i = 0; i < 2 + rng.uniform(4); ++i) x.emplace_back(1, "abcd"[rng.uniform(4)]);
    BeamOptions o;
    o.beam_size = 1;
    const auto beam = beam_decode_merge_at_end(m, x, o);
    const GreedyResult g = greedy_decode(m, x);
    ASSERT_EQ(beam.size(), 1u);
    EXPECT_EQ(beam[0].tokens, g.tokens);
    EXPECT_EQ(beam[0].finished, g.finished);
    EXPECT_NEAR(beam[0].log_prob, g.log_prob, 1e-12);
  }
}

TEST(Beam, WidthOneMatchesGreedyUnlessAMergeIntervenes) {
  const Vocab v = letters("abcd");
  SplitMix64 rng(10);
  int agreed = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Model m = small_model(v, 500 + seed, 0, 2.5);
    TokenSeq x;
    for (std::size_t i = 0; i < 2 + rng.uniform(4); ++i) x.emplace_back(1, "abcd"[rng.uniform(4)]);
    BeamOptions o;
    o.beam_size = 1;
    bool merged = false;
    o.on_merge = [&](const MergeEvent&) { merged = true; };
    const auto beam = beam_decode(m, x, o);
    const GreedyResult g = greedy_decode(m, x);
    if (beam[0].tokens != g.tokens) {
      EXPECT_TRUE(merged) << "seed " << seed;
    } else if (!merged) {
      EXPECT_NEAR(beam[0].log_prob, g.log_prob, 1e-12);
      ++agreed;
    }
  }
  EXPECT_GT(agreed, 0);
}

TEST(Beam, WiderBeamNeverLowersAProbability) {
  const Vocab v = letters("abc");
  SplitMix64 rng(12);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m = small_model(v, 900 + seed, 0, 2.0);
    TokenSeq x;
    for (std::size_t i = 0; i < 2 + rng.uniform(3); ++i) x.emplace_back(1, "abc"[rng.uniform(3)]);
    std::map<TokenSeq, double> prev;
    for (std::size_t width : {1u, 2u, 4u, 8u, 16u, 64u}) {
      BeamOptions o;
      o.beam_size = width;
      o.max_len = 6;
      const auto cur = finished_map(beam_decode(m, x, o));
      for (const auto& [tokens, lp] : cur)
        if (prev.count(tokens)) EXPECT_GE(lp, prev.at(tokens) - 1e-12) << "width " << width;
      prev = cur;
    }
  }
}

TEST(Beam, ReturnsUnfinishedRaysWhenLengthRunsOut) {
  const Vocab v = letters("ab");
  const Model m = constant_model(v, -50.0, -50.0);
  BeamOptions o;
  o.beam_size = 3;
  o.max_len = 2;
  const auto out = beam_decode(m, toks("ab"), o);
  ASSERT_FALSE(out.empty());
  for (const auto& h : out) EXPECT_FALSE(h.finished);
}

TEST(Greedy, ForcedEosGivesEmptyOutput) {
  const Vocab v = letters("ab");
  const Model m = constant_model(v, 50.0, -50.0);
  const GreedyResult g = greedy_decode(m, toks("ab"));
  EXPECT_TRUE(g.finished);
  EXPECT_TRUE(g.tokens.empty());
  EXPECT_EQ(g.trace, std::vector<Action>{Action::eos()});
  EXPECT_NEAR(g.log_prob, 0.0, 1e-12);
}

TEST(Greedy, StopsAtMaxLenAndTakesFirstArgmax) {
  // every span scores 0 and ties go to the first index, Copy(0,1)
  const Vocab v = letters("ab");
  const Model m = constant_model(v, -50.0, -50.0);
  const GreedyResult g = greedy_decode(m, toks("ba"), 5);
  EXPECT_FALSE(g.finished);
  EXPECT_EQ(g.tokens, toks("bbbbb"));
  EXPECT_EQ(g.trace.size(), 5u);
  for (const Action& a : g.trace) EXPECT_EQ(a, Action::copy(0, 1));
}

TEST(Greedy, TraceAccountsForEveryToken) {
  const Vocab v = letters("abcd");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Model m = small_model(v, 70 + seed, 0, 2.5);
    const GreedyResult g = greedy_decode(m, toks("abcad"));
    std::size_t total = 0;
    for (const Action& a : g.trace)
      if (!a.is_eos()) total += static_cast<std::size_t>(a.length());
    EXPECT_EQ(total, g.tokens.size());
    EXPECT_LE(g.tokens.size(), default_max_len(5));
  }
}

TEST(Greedy, CopiesOutOfVocabularyTokensBySurface) {
  const Vocab v = letters("ab");
  const Model m = constant_model(v, -50.0, -50.0);
  const GreedyResult g = greedy_decode(m, toks("zq"), 2);
  EXPECT_EQ(g.tokens, toks("zz"));
}
