// spanedit: generate corpora, train, decode, evaluate and report copy
// statistics. Run `spanedit --help` for the subcommands.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "spanedit/spanedit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spanedit;

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel g_level = LogLevel::info;

LogLevel log_level_from_env() {
  const char* v = std::getenv("SPANEDIT_LOG");
  if (!v || !*v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw UsageError("SPANEDIT_LOG must be error, info or debug (got '" + s + "')");
}

void log(LogLevel level, const std::string& msg) {
  if (level > g_level) return;
  std::cerr << (level == LogLevel::error ? "error: " : level == LogLevel::debug ? "debug: " : "") << msg << '\n';
}

// Flags shared by every subcommand. Each one overrides the config key of the
// same name.
struct Overrides {
  std::string config_path;
  std::vector<std::pair<std::string, std::optional<std::string>>> keys{
      {"task", {}},      {"count", {}},    {"seed", {}},    {"objective", {}},
      {"decoder", {}},   {"beam_size", {}}, {"max_len", {}}, {"threads", {}},
  };
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file");
    for (auto& [key, value] : keys) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      app->add_option(flag, value, "override config key '" + key + "'");
    }
    app->add_option("--set", sets, "override any config key, as key=value (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [key, value] : keys)
      if (value) cfg.set(key, *value);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  }
};

json stamp(const RunConfig& cfg) {
  return {{"format_version", kFormatVersion}, {"config_hash", config_hash(cfg)}};
}

json seeds_json(const RunConfig& cfg) {
  json j;
  for (const char* s : {"seed", "data_seed", "init_seed", "shuffle_seed", "dropout_seed"})
    j[s] = s == std::string("seed") ? cfg.seed : cfg.seed_for(s);
  return j;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what + " path");
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path.string());
}

json trace_json(const std::vector<Action>& trace, const Vocab& vocab) {
  json out = json::array();
  for (const Action& a : trace) {
    if (a.is_eos()) out.push_back({{"op", "eos"}});
    else if (a.is_copy()) out.push_back({{"op", "copy"}, {"begin", a.begin}, {"end", a.end}});
    else out.push_back({{"op", "gen"}, {"token", vocab.surface(a.token)}});
  }
  return out;
}

std::vector<Action> trace_from_json(const nlohmann::json& j, std::size_t line_no) {
  std::vector<Action> out;
  if (!j.is_array()) throw ParseError(line_no, "'trace' must be an array");
  for (const auto& a : j) {
    const std::string op = a.value("op", "");
    if (op == "eos") out.push_back(Action::eos());
    else if (op == "gen") out.push_back(Action::gen(Vocab::kUnk));
    else if (op == "copy") out.push_back(Action::copy(a.at("begin").get<int>(), a.at("end").get<int>()));
    else throw ParseError(line_no, "unknown trace op '" + op + "'");
  }
  return out;
}

TokenSeq tokens_from_json(const nlohmann::json& j, std::size_t line_no, const char* what) {
  if (!j.is_array()) throw ParseError(line_no, std::string("'") + what + "' must be an array of strings");
  TokenSeq out;
  for (const auto& t : j) {
    if (!t.is_string()) throw ParseError(line_no, std::string("'") + what + "' must be an array of strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

// A candidates file line as written by `decode`. A corpus file is accepted
// too: its gold output becomes the single candidate.
struct CandidateRecord {
  TokenSeq input;
  CandidateList candidates;
  std::vector<Action> trace;
  bool has_trace = false;
};

std::vector<CandidateRecord> read_candidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read candidates file " + path.string());
  std::vector<CandidateRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, path.string() + ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("input")) throw ParseError(line_no, path.string() + ": expected an object with 'input'");
    CandidateRecord r;
    try {
      r.input = tokens_from_json(j["input"], line_no, "input");
      if (j.contains("candidates")) {
        for (const auto& c : j["candidates"]) r.candidates.push_back(tokens_from_json(c.at("tokens"), line_no, "tokens"));
      } else if (j.contains("output")) {
        r.candidates.push_back(tokens_from_json(j["output"], line_no, "output"));
      } else {
        throw ParseError(line_no, path.string() + ": record has neither 'candidates' nor 'output'");
      }
      if (j.contains("trace")) {
        r.trace = trace_from_json(j["trace"], line_no);
        r.has_trace = true;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, path.string() + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Overrides& ov, const fs::path& out_dir) {
  const RunConfig cfg = ov.resolve();
  if (out_dir.empty()) throw UsageError("gen-data requires --out DIR");
  ensure_dir(out_dir);
  const auto all = generate_corpus(cfg.task_spec(), cfg.count);
  const CorpusSplits s = split_corpus(all);
  write_corpus(out_dir / "train.jsonl", s.train);
  write_corpus(out_dir / "valid.jsonl", s.valid);
  write_corpus(out_dir / "test.jsonl", s.test);
  json m = stamp(cfg);
  m["kind"] = "corpus";
  m["seeds"] = seeds_json(cfg);
  m["sizes"] = {{"train", s.train.size()}, {"valid", s.valid.size()}, {"test", s.test.size()}};
  m["config"] = cfg.to_json();
  write_json_file(out_dir / "manifest.json", m);
  log(LogLevel::info, "wrote " + std::to_string(all.size()) + " examples (" + std::to_string(s.train.size()) + "/" +
                          std::to_string(s.valid.size()) + "/" + std::to_string(s.test.size()) + ") to " +
                          out_dir.string());
  return 0;
}

int cmd_train(const Overrides& ov, const fs::path& data_dir, const fs::path& out_dir) {
  const RunConfig cfg = ov.resolve();
  if (data_dir.empty() || out_dir.empty()) throw UsageError("train requires --data DIR and --out DIR");
  require_file(data_dir / "train.jsonl", "training corpus");
  const auto train_set = read_corpus(data_dir / "train.jsonl");
  std::vector<EditExample> valid_set;
  if (fs::is_regular_file(data_dir / "valid.jsonl")) valid_set = read_corpus(data_dir / "valid.jsonl");
  ensure_dir(out_dir);

  const Vocab vocab = build_vocab(train_set, cfg.vocab_max);
  Model model(cfg.model_config(vocab.size()), vocab);
  log(LogLevel::info, "training on " + std::to_string(train_set.size()) + " examples, vocab " +
                          std::to_string(vocab.size()) + ", " + std::to_string(model.parameters().size()) +
                          " parameter tensors");

  const fs::path log_path = out_dir / "train_log.jsonl";
  std::ofstream log_out(log_path);
  if (!log_out) throw IoError("cannot write " + log_path.string());
  const json st = stamp(cfg);
  const TrainResult r = train(model, train_set, valid_set, cfg.train_config(), [&](const EpochRecord& rec) {
    json j = rec.to_json();
    j.update(st);
    log_out << j.dump() << '\n' << std::flush;
    log(LogLevel::info, j.dump());
  });

  json extra = stamp(cfg);
  extra["seeds"] = seeds_json(cfg);
  extra["config"] = cfg.to_json();
  extra["best_epoch"] = r.best_epoch;
  save_checkpoint(out_dir / "model.ckpt", model, extra);
  log(LogLevel::info, "wrote " + (out_dir / "model.ckpt").string());
  return 0;
}

std::vector<Hypothesis> run_decoder(const Model& model, const TokenSeq& input, const RunConfig& cfg,
                                    std::size_t* merges, GreedyResult* greedy) {
  *greedy = greedy_decode(model, input, cfg.max_len);
  if (cfg.decoder == DecoderKind::greedy)
    return {Hypothesis{greedy->tokens, greedy->log_prob, greedy->finished}};
  BeamOptions o;
  o.beam_size = cfg.beam_size;
  o.max_len = cfg.max_len;
  o.on_merge = [merges](const MergeEvent&) { ++*merges; };
  return cfg.decoder == DecoderKind::beam_merged ? beam_decode(model, input, o) : beam_decode_merge_at_end(model, input, o);
}

int cmd_decode(const Overrides& ov, const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir) {
  const RunConfig cfg = ov.resolve();
  if (out_dir.empty()) throw UsageError("decode requires --out DIR");
  require_file(checkpoint, "checkpoint");
  require_file(data, "corpus");
  Checkpoint info;
  const Model model = load_checkpoint(checkpoint, &info);
  const auto examples = read_corpus(data);
  ensure_dir(out_dir);

  std::vector<std::string> lines(examples.size());
  std::vector<std::size_t> merges(examples.size(), 0);
  parallel_for(examples.size(), cfg.threads, [&](std::size_t i) {
    GreedyResult g;
    const auto hyps = run_decoder(model, examples[i].input, cfg, &merges[i], &g);
    json cands = json::array();
    for (std::size_t r = 0; r < hyps.size(); ++r)
      cands.push_back({{"tokens", hyps[r].tokens}, {"log_prob", hyps[r].log_prob}, {"finished", hyps[r].finished},
                       {"rank", r + 1}});
    json j = stamp(cfg);
    j["input"] = examples[i].input;
    j["candidates"] = cands;
    j["trace"] = trace_json(g.trace, model.vocab());
    j["merge_events"] = merges[i];
    lines[i] = j.dump();
  });

  const fs::path path = out_dir / "candidates.jsonl";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path.string());
  std::size_t total_merges = 0;
  for (std::size_t m : merges) total_merges += m;
  log(LogLevel::info, "decoded " + std::to_string(examples.size()) + " examples with " + to_string(cfg.decoder) +
                          " (" + std::to_string(total_merges) + " merge events) to " + path.string());
  log(LogLevel::debug, "checkpoint config hash " + info.extra.value("config_hash", std::string("?")));
  return 0;
}

void write_span_csv(const fs::path& path, const RunConfig& cfg, const SpanLengthStats& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# format_version=" << kFormatVersion << " config_hash=" << config_hash(cfg) << '\n';
  write_histogram_csv(out, s);
  if (!out) throw IoError("write failed for " + path.string());
}

int cmd_eval(const Overrides& ov, const fs::path& data, const fs::path& candidates, const fs::path& out_dir) {
  const RunConfig cfg = ov.resolve();
  if (out_dir.empty()) throw UsageError("eval requires --out DIR");
  require_file(data, "gold corpus");
  require_file(candidates, "candidates file");
  const auto gold_examples = read_corpus(data);
  const auto records = read_candidates(candidates);
  if (records.size() != gold_examples.size())
    throw ValidationError("candidates file has " + std::to_string(records.size()) + " records but the corpus has " +
                          std::to_string(gold_examples.size()));
  std::vector<CandidateList> cands;
  std::vector<TokenSeq> gold, inputs;
  std::vector<std::vector<Action>> traces;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].input != gold_examples[i].input)
      throw ValidationError("record " + std::to_string(i + 1) + " input does not match the corpus");
    cands.push_back(records[i].candidates);
    gold.push_back(gold_examples[i].output);
    inputs.push_back(gold_examples[i].input);
    if (records[i].has_trace) traces.push_back(records[i].trace);
  }
  if (!traces.empty() && traces.size() != records.size())
    throw ValidationError("either every record or no record must carry a trace");
  const EvalReport report = evaluate(cands, gold, inputs, traces, cfg.k);
  ensure_dir(out_dir);
  json j = stamp(cfg);
  j["seeds"] = seeds_json(cfg);
  j["candidates"] = candidates.string();
  j.update(report.to_json());
  write_json_file(out_dir / "report.json", j);
  write_span_csv(out_dir / "copy_lengths.csv", cfg, report.spans);
  std::cout << report.to_json().dump(2) << '\n';
  return 0;
}

int cmd_stats(const Overrides& ov, const fs::path& candidates, const fs::path& out_dir) {
  const RunConfig cfg = ov.resolve();
  if (out_dir.empty()) throw UsageError("stats requires --out DIR");
  require_file(candidates, "candidates file");
  std::vector<std::vector<Action>> traces;
  for (const auto& r : read_candidates(candidates)) {
    if (!r.has_trace) throw ValidationError(candidates.string() + " has records without a 'trace'");
    traces.push_back(r.trace);
  }
  const SpanLengthStats s = span_length_stats(traces);
  ensure_dir(out_dir);
  write_span_csv(out_dir / "span_lengths.csv", cfg, s);
  std::cout << "copies " << s.copies << ", mean length " << s.mean << ", median " << s.median
            << ", single-token fraction " << s.single_copy_fraction << '\n';
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"span-copying sequence editor"};
  app.require_subcommand(1);
  Overrides ov_gen, ov_train, ov_decode, ov_eval, ov_stats;
  fs::path out, data, checkpoint, candidates;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus split into train/valid/test");
  ov_gen.attach(gen);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on DIR/train.jsonl, validating on DIR/valid.jsonl");
  ov_train.attach(tr);
  tr->add_option("--data", data, "corpus directory")->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* dec = app.add_subcommand("decode", "decode the inputs of a corpus file");
  ov_decode.attach(dec);
  dec->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  dec->add_option("--data", data, "corpus file (.jsonl)")->required();
  dec->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "score a candidates file against a corpus file");
  ov_eval.attach(ev);
  ev->add_option("--data", data, "gold corpus file (.jsonl)")->required();
  ev->add_option("--candidates", candidates, "candidates file from decode, or a corpus file")->required();
  ev->add_option("--out", out, "output directory")->required();

  auto* st = app.add_subcommand("stats", "copy-length histogram of the greedy traces in a candidates file");
  ov_stats.attach(st);
  st->add_option("--candidates", candidates, "candidates file from decode")->required();
  st->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  if (*gen) return cmd_gen_data(ov_gen, out);
  if (*tr) return cmd_train(ov_train, data, out);
  if (*dec) return cmd_decode(ov_decode, checkpoint, data, out);
  if (*ev) return cmd_eval(ov_eval, data, candidates, out);
  return cmd_stats(ov_stats, candidates, out);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    g_level = log_level_from_env();
    return run(argc, argv);
  } catch (const Error& e) {
    log(LogLevel::error, e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return static_cast<int>(ExitCode::validation);
  }
}
