#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/model.hpp"
#include "spanedit/objective.hpp"
#include "spanedit/train.hpp"

// Run configuration as a flat text file:
//
//   # comment
//   key = value
//
// Unknown keys and malformed values are rejected with the offending line.
// Command-line flags are applied on top of the file. Seeds that are not set
// explicitly (data_seed, init_seed, shuffle_seed, dropout_seed) default to
// `seed`.
namespace spanedit {

inline constexpr int kFormatVersion = 1;

enum class DecoderKind { greedy, beam_merged, beam_merge_at_end };

inline std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::greedy: return "greedy";
    case DecoderKind::beam_merged: return "beam_merged";
    case DecoderKind::beam_merge_at_end: return "beam_merge_at_end";
  }
  return "?";
}

inline DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "greedy") return DecoderKind::greedy;
  if (s == "beam_merged") return DecoderKind::beam_merged;
  if (s == "beam_merge_at_end") return DecoderKind::beam_merge_at_end;
  throw ValidationError("unknown decoder '" + std::string(s) + "' (expected greedy|beam_merged|beam_merge_at_end)");
}

struct RunConfig {
  // data
  TaskKind task = TaskKind::insert;
  std::size_t count = 1000;
  int alphabet_size = 20;
  int min_len = 4;
  int max_input_len = 12;
  // model
  int embed_dim = 64;
  int enc_hidden = 64;
  int enc_layers = 2;
  int dec_hidden = 64;
  double dropout = 0.2;
  bool tie_embeddings = true;
  int max_copy_len = 0;
  std::size_t vocab_max = 10000;
  // training
  ObjectiveKind objective = ObjectiveKind::marginal;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  bool keep_best = false;
  std::size_t valid_limit = 0;
  std::size_t valid_every = 1;
  // decoding and evaluation
  DecoderKind decoder = DecoderKind::beam_merged;
  std::size_t beam_size = 20;
  std::size_t max_len = 0;  // 0: 2 * n + 16
  std::size_t k = 20;
  std::size_t threads = 1;
  // seeds
  std::uint64_t seed = 1;
  std::map<std::string, std::uint64_t> explicit_seeds;

  std::uint64_t seed_for(const std::string& name) const {
    auto it = explicit_seeds.find(name);
    return it == explicit_seeds.end() ? seed : it->second;
  }

  TaskSpec task_spec() const {
    TaskSpec s;
    s.kind = task;
    s.alphabet_size = alphabet_size;
    s.min_len = min_len;
    s.max_len = max_input_len;
    s.seed = seed_for("data_seed");
    return s;
  }

  ModelConfig model_config(int vocab_size) const {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.embed_dim = embed_dim;
    c.enc_hidden = enc_hidden;
    c.enc_layers = enc_layers;
    c.dec_hidden = dec_hidden;
    c.dropout = dropout;
    c.tie_embeddings = tie_embeddings;
    c.max_copy_len = max_copy_len;
    c.init_seed = seed_for("init_seed");
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.objective = objective;
    t.lr = lr;
    t.clip_norm = clip_norm;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.keep_best = keep_best;
    t.valid_limit = valid_limit;
    t.valid_every = valid_every;
    t.shuffle_seed = seed_for("shuffle_seed");
    t.dropout_seed = seed_for("dropout_seed");
    t.threads = threads;
    return t;
  }

  // Sets one key from its textual value.
  void set(const std::string& key, const std::string& value) {
    auto fail = [&](const std::string& why) {
      throw ValidationError("config key '" + key + "': " + why + " (got '" + value + "')");
    };
    auto as_int = [&](long long lo) {
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(value, &pos);
      } catch (const std::exception&) {
        fail("expected an integer");
      }
      if (pos != value.size()) fail("expected an integer");
      if (v < lo) fail("must be >= " + std::to_string(lo));
      return v;
    };
    auto as_u64 = [&]() {
      std::size_t pos = 0;
      unsigned long long v = 0;
      if (!value.empty() && value[0] == '-') fail("expected a non-negative integer");
      try {
        v = std::stoull(value, &pos);
      } catch (const std::exception&) {
        fail("expected a non-negative integer");
      }
      if (pos != value.size()) fail("expected a non-negative integer");
      return static_cast<std::uint64_t>(v);
    };
    auto as_double = [&]() {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        fail("expected a number");
      }
      if (pos != value.size() || !std::isfinite(v)) fail("expected a finite number");
      return v;
    };
    auto as_bool = [&]() {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      fail("expected true or false");
      return false;
    };
    auto as_enum = [&](auto parse) {
      try {
        return parse(value);
      } catch (const ValidationError& e) {
        fail(e.what());
        throw;
      }
    };
    if (key == "task") task = as_enum(parse_task_kind);
    else if (key == "count") count = static_cast<std::size_t>(as_int(0));
    else if (key == "alphabet_size") alphabet_size = static_cast<int>(as_int(2));
    else if (key == "min_len") min_len = static_cast<int>(as_int(1));
    else if (key == "max_input_len") max_input_len = static_cast<int>(as_int(1));
    else if (key == "embed_dim") embed_dim = static_cast<int>(as_int(1));
    else if (key == "enc_hidden") enc_hidden = static_cast<int>(as_int(1));
    else if (key == "enc_layers") enc_layers = static_cast<int>(as_int(1));
    else if (key == "dec_hidden") dec_hidden = static_cast<int>(as_int(1));
    else if (key == "dropout") dropout = as_double();
    else if (key == "tie_embeddings") tie_embeddings = as_bool();
    else if (key == "max_copy_len") max_copy_len = static_cast<int>(as_int(0));
    else if (key == "vocab_max") vocab_max = static_cast<std::size_t>(as_int(4));
    else if (key == "objective") objective = as_enum(parse_objective_kind);
    else if (key == "lr") lr = as_double();
    else if (key == "clip_norm") clip_norm = as_double();
    else if (key == "batch_size") batch_size = static_cast<std::size_t>(as_int(1));
    else if (key == "epochs") epochs = static_cast<std::size_t>(as_int(0));
    else if (key == "keep_best") keep_best = as_bool();
    else if (key == "valid_limit") valid_limit = static_cast<std::size_t>(as_int(0));
    else if (key == "valid_every") valid_every = static_cast<std::size_t>(as_int(1));
    else if (key == "decoder") decoder = as_enum(parse_decoder_kind);
    else if (key == "beam_size") beam_size = static_cast<std::size_t>(as_int(1));
    else if (key == "max_len") max_len = static_cast<std::size_t>(as_int(0));
    else if (key == "k") k = static_cast<std::size_t>(as_int(1));
    else if (key == "threads") threads = static_cast<std::size_t>(as_int(1));
    else if (key == "seed") seed = as_u64();
    else if (key == "data_seed" || key == "init_seed" || key == "shuffle_seed" || key == "dropout_seed")
      explicit_seeds[key] = as_u64();
    else
      throw ValidationError("unknown config key '" + key + "'");
  }

  void validate() const {
    task_spec().validate();
    model_config(Vocab::kReserved).validate();
    train_config().validate();
  }

  // Canonical key = value listing, every key present, sorted by key.
  std::map<std::string, std::string> entries() const {
    auto num = [](double v) {
      std::ostringstream s;
      s.precision(17);
      s << v;
      return s.str();
    };
    std::map<std::string, std::string> e{
        {"task", to_string(task)},
        {"count", std::to_string(count)},
        {"alphabet_size", std::to_string(alphabet_size)},
        {"min_len", std::to_string(min_len)},
        {"max_input_len", std::to_string(max_input_len)},
        {"embed_dim", std::to_string(embed_dim)},
        {"enc_hidden", std::to_string(enc_hidden)},
        {"enc_layers", std::to_string(enc_layers)},
        {"dec_hidden", std::to_string(dec_hidden)},
        {"dropout", num(dropout)},
        {"tie_embeddings", tie_embeddings ? "true" : "false"},
        {"max_copy_len", std::to_string(max_copy_len)},
        {"vocab_max", std::to_string(vocab_max)},
        {"objective", to_string(objective)},
        {"lr", num(lr)},
        {"clip_norm", num(clip_norm)},
        {"batch_size", std::to_string(batch_size)},
        {"epochs", std::to_string(epochs)},
        {"keep_best", keep_best ? "true" : "false"},
        {"valid_limit", std::to_string(valid_limit)},
        {"valid_every", std::to_string(valid_every)},
        {"decoder", to_string(decoder)},
        {"beam_size", std::to_string(beam_size)},
        {"max_len", std::to_string(max_len)},
        {"k", std::to_string(k)},
        {"threads", std::to_string(threads)},
        {"seed", std::to_string(seed)},
    };
    for (const char* s : {"data_seed", "init_seed", "shuffle_seed", "dropout_seed"})
      e[s] = std::to_string(seed_for(s));
    return e;
  }

  std::string canonical() const {
    std::string out;
    for (const auto& [key, value] : entries()) out += key + " = " + value + "\n";
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [key, value] : entries()) j[key] = value;
    return j;
  }
};

// FNV-1a over the canonical listing, as 16 hex digits.
inline std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, origin + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, origin + ": empty key");
    try {
      cfg.set(key, value);
    } catch (const ValidationError& e) {
      throw ParseError(line_no, origin + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  RunConfig cfg;
  apply_config_text(cfg, in, path.string());
  return cfg;
}

}  // namespace spanedit
