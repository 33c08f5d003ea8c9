#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spanedit/corpus.hpp"

using namespace spanedit;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "spanedit_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t index_of(const TokenSeq& x, const std::string& t) {
  return static_cast<std::size_t>(std::find(x.begin(), x.end(), t) - x.begin());
}

// Re-applies the task's rule to the input, recovering the sampled location
// from the cue tokens.
TokenSeq reapply(TaskKind kind, const TokenSeq& x, const TokenSeq& y) {
  switch (kind) {
    case TaskKind::insert: return apply_insert(x, index_of(x, "@") + 1);
    case TaskKind::del: return apply_delete(x, index_of(x, "@") + 1);
    case TaskKind::swap_adjacent: return apply_swap_adjacent(x, index_of(x, "@") + 1);
    case TaskKind::duplicate_span: return apply_duplicate_span(x, index_of(x, "[") + 1, index_of(x, "]"));
    case TaskKind::rename_id: {
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != y[i]) return apply_rename(x, x[i], y[i]);
      return x;
    }
  }
  return {};
}

}  // namespace

TEST(Rules, InsertPlacesMarkerAtPosition) {
  EXPECT_EQ(apply_insert({"a", "b"}, 1), (TokenSeq{"a", "INS", "b"}));
  EXPECT_EQ(apply_insert({"a"}, 0), (TokenSeq{"INS", "a"}));
  EXPECT_EQ(apply_insert({"a"}, 1), (TokenSeq{"a", "INS"}));
}

TEST(Rules, OtherRules) {
  EXPECT_EQ(apply_delete({"a", "b", "c"}, 1), (TokenSeq{"a", "c"}));
  EXPECT_EQ(apply_swap_adjacent({"a", "b", "c"}, 1), (TokenSeq{"a", "c", "b"}));
  EXPECT_EQ(apply_duplicate_span({"a", "b", "c"}, 0, 2), (TokenSeq{"a", "b", "c", "a", "b"}));
  EXPECT_EQ(apply_rename({"id1", "+", "id2", "*", "id1"}, "id1", "id7"), (TokenSeq{"id7", "+", "id2", "*", "id7"}));
}

TEST(Generate, CountZeroIsEmpty) {
  TaskSpec s;
  EXPECT_TRUE(generate_corpus(s, 0).empty());
}

TEST(Generate, DeterministicAndByteIdentical) {
  TaskSpec s;
  s.seed = 42;
  const auto a = generate_corpus(s, 5);
  const auto b = generate_corpus(s, 5);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 5u);
  write_corpus(temp_path("det_a.jsonl"), a);
  write_corpus(temp_path("det_b.jsonl"), b);
  EXPECT_EQ(slurp(temp_path("det_a.jsonl")), slurp(temp_path("det_b.jsonl")));
}

TEST(Generate, DifferentSeedsDiffer) {
  TaskSpec s;
  s.seed = 1;
  const auto a = generate_corpus(s, 20);
  s.seed = 2;
  EXPECT_NE(a, generate_corpus(s, 20));
}

TEST(Generate, EveryExampleObeysItsRule) {
  for (TaskKind kind : {TaskKind::insert, TaskKind::del, TaskKind::duplicate_span, TaskKind::rename_id,
                        TaskKind::swap_adjacent}) {
    TaskSpec s;
    s.kind = kind;
    s.seed = 9;
    s.min_len = 2;
    s.max_len = 9;
    for (const EditExample& ex : generate_corpus(s, 300)) {
      EXPECT_NO_THROW(validate_example(ex));
      EXPECT_EQ(ex.task_tag, to_string(kind));
      EXPECT_EQ(reapply(kind, ex.input, ex.output), ex.output) << to_string(kind);
    }
  }
}

TEST(Generate, RenameUsesFreshIdentifier) {
  TaskSpec s;
  s.kind = TaskKind::rename_id;
  s.seed = 3;
  for (const EditExample& ex : generate_corpus(s, 200)) {
    ASSERT_EQ(ex.input.size(), ex.output.size());
    std::string from, to;
    for (std::size_t i = 0; i < ex.input.size(); ++i)
      if (ex.input[i] != ex.output[i]) {
        from = ex.input[i];
        to = ex.output[i];
      }
    ASSERT_FALSE(to.empty());
    EXPECT_EQ(std::count(ex.input.begin(), ex.input.end(), to), 0);
    EXPECT_EQ(std::count(ex.output.begin(), ex.output.end(), from), 0);
  }
}

TEST(Generate, LengthsRespectBounds) {
  TaskSpec s;
  s.kind = TaskKind::del;
  s.min_len = 3;
  s.max_len = 5;
  for (const EditExample& ex : generate_corpus(s, 200)) {
    // one cue token on top of the content tokens
    EXPECT_GE(ex.input.size(), 4u);
    EXPECT_LE(ex.input.size(), 6u);
  }
}

TEST(TaskSpecValidation, NamesTheViolatedBound) {
  TaskSpec s;
  s.min_len = 5;
  s.max_len = 3;
  try {
    s.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("min_len"), std::string::npos);
  }
  s = TaskSpec{};
  s.alphabet_size = 1;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(generate_corpus(s, 3), ValidationError);
  s = TaskSpec{};
  s.kind = TaskKind::swap_adjacent;
  s.min_len = 1;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(TaskKinds, RoundTripNames) {
  for (TaskKind k : {TaskKind::insert, TaskKind::del, TaskKind::duplicate_span, TaskKind::rename_id,
                     TaskKind::swap_adjacent})
    EXPECT_EQ(parse_task_kind(to_string(k)), k);
  EXPECT_THROW(parse_task_kind("reverse"), ValidationError);
}

TEST(DatasetFormat, RoundTrip) {
  const std::vector<EditExample> ex{
      {{"a", "b"}, {"a", "INS", "b"}, "insert"}, {{"x"}, {}, "delete"}, {{"p", "q", "r"}, {"r"}, "custom"}};
  const auto path = temp_path("rt.jsonl");
  write_corpus(path, ex);
  EXPECT_EQ(read_corpus(path), ex);
}

TEST(DatasetFormat, RandomCorporaRoundTrip) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TaskSpec s;
    s.kind = static_cast<TaskKind>(seed % 5);
    s.seed = seed;
    const auto ex = generate_corpus(s, 50);
    const auto path = temp_path("rt_random.jsonl");
    write_corpus(path, ex);
    EXPECT_EQ(read_corpus(path), ex);
  }
}

TEST(DatasetFormat, EmptyOutputAllowed) {
  const EditExample e = example_from_json_line(R"({"input":["a"],"output":[],"task":"t"})", 1);
  EXPECT_EQ(e.input, TokenSeq{"a"});
  EXPECT_TRUE(e.output.empty());
  EXPECT_EQ(e.task_tag, "t");
}

TEST(DatasetFormat, ErrorsCarryLineNumbers) {
  const auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"input":["a"],"output":["a"],"task":"t"})" << "\n";
    out << R"({"input":[],"output":["a"],"task":"t"})" << "\n";
  }
  try {
    read_corpus(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(example_from_json_line(R"({"input":["a"],"output":[],"task":"t","extra":1})", 3), ParseError);
  EXPECT_THROW(example_from_json_line(R"({"input":["a"],"output":[]})", 3), ParseError);
  EXPECT_THROW(example_from_json_line(R"({"input":["a b"],"output":[],"task":"t"})", 3), ParseError);
  EXPECT_THROW(example_from_json_line(R"({"input":["<unk>"],"output":[],"task":"t"})", 3), ParseError);
  EXPECT_THROW(example_from_json_line("not json", 4), ParseError);
  EXPECT_THROW(read_corpus(temp_path("does_not_exist.jsonl")), IoError);
}

TEST(BuildVocab, EmptyCorpusHasOnlyReserved) {
  const Vocab v = build_vocab({}, 100);
  EXPECT_EQ(v.size(), 4);
  EXPECT_EQ(v.surface(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.surface(Vocab::kStart), "<s>");
  EXPECT_EQ(v.surface(Vocab::kEos), "</s>");
  EXPECT_EQ(v.surface(Vocab::kUnk), "<unk>");
}

TEST(BuildVocab, FrequencyCutoff) {
  const Vocab v = build_vocab({{{"a", "a", "b"}, {}, "t"}}, 5);
  EXPECT_EQ(v.size(), 5);
  EXPECT_EQ(v.find("a"), 4);
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id_or_unk("b"), Vocab::kUnk);
}

TEST(BuildVocab, LexicographicTieBreak) {
  const Vocab v = build_vocab({{{"b", "a"}, {}, "t"}}, 10);
  EXPECT_EQ(v.find("a"), 4);
  EXPECT_EQ(v.find("b"), 5);
}

TEST(BuildVocab, CountsInputsAndOutputs) {
  const Vocab v = build_vocab({{{"a"}, {"b", "b"}, "t"}}, 10);
  EXPECT_EQ(v.find("b"), 4);
  EXPECT_EQ(v.find("a"), 5);
}

TEST(BuildVocab, InvariantToExampleOrder) {
  TaskSpec s;
  s.seed = 5;
  auto ex = generate_corpus(s, 100);
  const Vocab a = build_vocab(ex, 15);
  std::reverse(ex.begin(), ex.end());
  SplitMix64 rng(1);
  shuffle_in_place(ex, rng);
  EXPECT_EQ(build_vocab(ex, 15), a);
  EXPECT_THROW(build_vocab(ex, 3), ValidationError);
}

TEST(VocabType, InverseMapsAndFileRoundTrip) {
  const Vocab v({"x", "y", "z"});
  for (int id = 0; id < v.size(); ++id) EXPECT_EQ(v.find(v.surface(id)), id);
  const auto path = temp_path("vocab.txt");
  v.write(path);
  EXPECT_EQ(Vocab::read(path), v);
  EXPECT_EQ(slurp(path), "<pad>\n<s>\n</s>\n<unk>\nx\ny\nz\n");
  EXPECT_THROW(Vocab({"x", "x"}), ValidationError);
  EXPECT_THROW(Vocab({"</s>"}), ValidationError);
}

TEST(Splits, DeterministicAndRoughlyEightyTenTen) {
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 10000; ++i) {
    EXPECT_EQ(split_of(i), split_of(i));
    ++counts[static_cast<int>(split_of(i))];
  }
  EXPECT_NEAR(counts[0] / 10000.0, 0.8, 0.02);
  EXPECT_NEAR(counts[1] / 10000.0, 0.1, 0.02);
  EXPECT_NEAR(counts[2] / 10000.0, 0.1, 0.02);
  TaskSpec s;
  const auto all = generate_corpus(s, 200);
  const auto sp = split_corpus(all);
  EXPECT_EQ(sp.train.size() + sp.valid.size() + sp.test.size(), all.size());
}
