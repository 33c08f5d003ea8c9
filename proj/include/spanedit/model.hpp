#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spanedit/actions.hpp"
#include "spanedit/autodiff.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/rng.hpp"

namespace spanedit {

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int enc_hidden = 64;
  int enc_layers = 2;
  int dec_hidden = 64;
  double dropout = 0.2;
  bool tie_embeddings = true;
  // Longest copy the decoder may emit; 0 means unlimited. 1 gives the
  // single-token copying baseline through the same code path.
  int max_copy_len = 0;
  std::uint64_t init_seed = 1;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ValidationError(std::string(name) + " must be positive, got " + std::to_string(v));
    };
    positive(embed_dim, "embed_dim");
    positive(enc_hidden, "enc_hidden");
    positive(enc_layers, "enc_layers");
    positive(dec_hidden, "dec_hidden");
    if (vocab_size < Vocab::kReserved) throw ValidationError("vocab_size must be >= 4, got " + std::to_string(vocab_size));
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1), got " + std::to_string(dropout));
    if (max_copy_len < 0) throw ValidationError("max_copy_len must be >= 0, got " + std::to_string(max_copy_len));
  }

  nlohmann::ordered_json to_json() const {
    return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim},           {"enc_hidden", enc_hidden},
            {"enc_layers", enc_layers}, {"dec_hidden", dec_hidden},         {"dropout", dropout},
            {"tie_embeddings", tie_embeddings}, {"max_copy_len", max_copy_len}, {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.enc_hidden = j.at("enc_hidden").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_hidden = j.at("dec_hidden").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
    c.max_copy_len = j.at("max_copy_len").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameters

class Parameters {
 public:
  std::size_t add(std::string name, NArray value) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name " + name);
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  NArray& value(std::size_t i) { return values_[i]; }
  const NArray& value(std::size_t i) const { return values_[i]; }
  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const NArray& v : values_) n += v.size();
    return n;
  }
  std::vector<NArray> zeros_like() const {
    std::vector<NArray> z;
    z.reserve(values_.size());
    for (const NArray& v : values_) z.emplace_back(v.shape(), 0.0);
    return z;
  }

 private:
  std::vector<std::string> names_;
  std::vector<NArray> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binds parameters onto one tape on first use; tracked leaves when training.
class ParameterBinder {
 public:
  ParameterBinder(ad::Tape& tape, const Parameters& params, bool track)
      : tape_(tape), params_(&params), track_(track), node_of_(params.size(), -1) {}

  // Uses `bound[i]` for parameter i; lets callers supply their own leaves.
  ParameterBinder(ad::Tape& tape, std::span<const ad::Var> bound) : tape_(tape), track_(false) {
    for (const ad::Var& v : bound) node_of_.push_back(v.id());
  }

  ad::Tape& tape() const { return tape_; }

  ad::Var operator()(std::size_t id) {
    int& node = node_of_[id];
    if (node < 0) {
      ad::Var v = track_ ? tape_.variable_ref(params_->value(id)) : tape_.constant_ref(params_->value(id));
      node = v.id();
      return v;
    }
    return ad::Var(&tape_, node);
  }

  // grads[i] += weight * d loss / d param_i, for every bound parameter.
  void accumulate(std::vector<NArray>& grads, double weight) const {
    for (std::size_t i = 0; i < node_of_.size(); ++i) {
      if (node_of_[i] < 0) continue;
      const NArray* g = tape_.grad_if_any(node_of_[i]);
      if (!g) continue;
      for (std::size_t k = 0; k < g->size(); ++k) grads[i][k] += weight * (*g)[k];
    }
  }

 private:
  ad::Tape& tape_;
  const Parameters* params_ = nullptr;
  bool track_;
  std::vector<int> node_of_;
};

// Dropout is applied only when `train` is set; `rng` must then be non-null.
struct ForwardMode {
  bool train = false;
  SplitMix64* rng = nullptr;
};

// ---------------------------------------------------------------------------
// Encoder / decoder values

// Per-token encoder representations and cached per-input projections.
struct EncoderOutputs {
  NArray contextual;      // [n, 2 * enc_hidden]
  NArray summary;         // [dec_hidden]
  NArray attention_keys;  // [n, dec_hidden]: contextual * W_att
  NArray span_start;      // [n, dec_hidden]: contextual * W_span[:, :d_enc]^T
  NArray span_end;        // [n, dec_hidden]: contextual * W_span[:, d_enc:]^T
  std::size_t length() const { return contextual.rows(); }
};

struct EncoderVars {
  ad::Var contextual, summary, attention_keys, span_start, span_end;
  std::size_t length = 0;
};

// Recurrent state after feeding START and `tokens_consumed` output tokens.
struct DecoderState {
  NArray hidden;  // [dec_hidden]
  int tokens_consumed = 0;
};

// Normalized log-probabilities over V generate actions and the n x n span
// grid; cell (i, j - 1) is Copy(i, j); invalid cells hold -inf.
struct ActionDistribution {
  NArray log_q_vocab;  // [V]
  NArray log_q_span;   // [n, n]

  std::size_t vocab_size() const { return log_q_vocab.size(); }
  std::size_t input_len() const { return log_q_span.rows(); }
  std::size_t width() const { return vocab_size() + input_len() * input_len(); }
  double log_prob(const Action& a) const {
    if (a.is_gen()) return log_q_vocab[static_cast<std::size_t>(a.token)];
    return log_q_span.at(static_cast<std::size_t>(a.begin), static_cast<std::size_t>(a.end - 1));
  }
  double at_index(std::size_t idx) const {
    return idx < vocab_size() ? log_q_vocab[idx] : log_q_span[idx - vocab_size()];
  }
};

struct AttentionResult {
  NArray weights;   // [n]
  NArray context;   // [2 * enc_hidden]
  NArray attended;  // [dec_hidden], the vector used for action scoring
};

// ---------------------------------------------------------------------------

class Model {
 public:
  struct GruIds {
    std::size_t W_r, W_z, W_n, U_r, U_z, U_n, b_r, b_z, b_n, c_n;
  };

  Model(ModelConfig config, Vocab vocab) : config_(config), vocab_(std::move(vocab)) {
    if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
    if (config_.vocab_size != vocab_.size())
      throw ValidationError("config vocab_size " + std::to_string(config_.vocab_size) + " does not match vocabulary of " +
                            std::to_string(vocab_.size()));
    config_.validate();
    build_parameters();
  }

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  Parameters& parameters() { return params_; }
  const Parameters& parameters() const { return params_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(config_.vocab_size); }

  // Positions that can never be chosen: PAD/START in the vocabulary head,
  // spans with end <= start, spans longer than max_copy_len.
  std::shared_ptr<const std::vector<std::uint8_t>> action_mask(std::size_t n) const {
    const std::size_t V = vocab_size();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(V + n * n, 0);
    (*mask)[Vocab::kPad] = 1;
    (*mask)[Vocab::kStart] = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < n; ++e) {
        const std::size_t len = e + 1 > i ? e + 1 - i : 0;
        const bool too_long = config_.max_copy_len > 0 && len > static_cast<std::size_t>(config_.max_copy_len);
        if (len == 0 || too_long) (*mask)[V + i * n + e] = 1;
      }
    return mask;
  }

  // ---- differentiable building blocks -----------------------------------

  EncoderVars encode(ParameterBinder& p, std::span<const int> ids, ForwardMode mode) const {
    if (ids.empty()) throw ValidationError("cannot encode an empty input sequence");
    const std::size_t n = ids.size();
    ad::Var layer_in = ad::dropout(ad::embed_lookup(p(embed_), ids), config_.dropout, mode.train, *rng_or_dummy(mode));
    ad::Var fwd, bwd;
    for (int l = 0; l < config_.enc_layers; ++l) {
      fwd = run_gru(p, enc_[static_cast<std::size_t>(l)][0], layer_in, false);
      bwd = run_gru(p, enc_[static_cast<std::size_t>(l)][1], layer_in, true);
      layer_in = ad::concat({fwd, bwd}, 1);
      if (l + 1 < config_.enc_layers)
        layer_in = ad::dropout(layer_in, config_.dropout, mode.train, *rng_or_dummy(mode));
    }
    EncoderVars out;
    out.length = n;
    out.contextual = layer_in;
    ad::Var ends = ad::concat({ad::row(fwd, n - 1), ad::row(bwd, 0)}, 0);
    out.summary = ad::tanh(ad::add(ad::matmul(ends, p(bridge_W_), true), p(bridge_b_)));
    out.attention_keys = ad::matmul(out.contextual, p(att_W_));
    const std::size_t d_enc = 2 * static_cast<std::size_t>(config_.enc_hidden);
    ad::Var span_W = p(span_W_);
    out.span_start = ad::matmul(out.contextual, ad::slice(span_W, 1, 0, d_enc), true);
    out.span_end = ad::matmul(out.contextual, ad::slice(span_W, 1, d_enc, 2 * d_enc), true);
    return out;
  }

  // Decoder states after feeding START, y_0, ..., y_{m-1}: [m + 1, dec_hidden].
  ad::Var teacher_forced_states(ParameterBinder& p, const EncoderVars& enc, std::span<const int> y_ids,
                                ForwardMode mode) const {
    std::vector<int> feed;
    feed.reserve(y_ids.size() + 1);
    feed.push_back(Vocab::kStart);
    feed.insert(feed.end(), y_ids.begin(), y_ids.end());
    ad::Var emb = ad::dropout(ad::embed_lookup(p(embed_), feed), config_.dropout, mode.train, *rng_or_dummy(mode));
    const GruIds& g = dec_;
    ad::Var xr = ad::add(ad::matmul(emb, p(g.W_r), true), p(g.b_r));
    ad::Var xz = ad::add(ad::matmul(emb, p(g.W_z), true), p(g.b_z));
    ad::Var xn = ad::add(ad::matmul(emb, p(g.W_n), true), p(g.b_n));
    std::vector<ad::Var> states;
    states.reserve(feed.size());
    ad::Var h = enc.summary;
    for (std::size_t k = 0; k < feed.size(); ++k) {
      h = gru_cell(p, g, ad::row(xr, k), ad::row(xz, k), ad::row(xn, k), h);
      states.push_back(h);
    }
    return ad::stack(states);
  }

  // Luong attention for a batch of decoder states [r, d]; returns the
  // attentional vectors [r, d]. `weights_out` receives the [r, n] weights.
  ad::Var attend(ParameterBinder& p, const EncoderVars& enc, ad::Var states, ad::Var* weights_out = nullptr,
                 std::shared_ptr<const std::vector<std::uint8_t>> attention_mask = nullptr) const {
    ad::Var scores = ad::matmul(states, enc.attention_keys, true);
    if (attention_mask) scores = ad::masked_fill(scores, std::move(attention_mask));
    ad::Var weights = ad::softmax(scores, scores.shape().rank() - 1);
    if (weights_out) *weights_out = weights;
    ad::Var context = ad::matmul(weights, enc.contextual);
    ad::Var joined = ad::concat({context, states}, context.shape().rank() - 1);
    return ad::tanh(ad::add(ad::matmul(joined, p(comb_W_), true), p(comb_b_)));
  }

  // Log-probabilities of every action for each decoder state: [r, V + n * n].
  ad::Var action_log_probs(ParameterBinder& p, const EncoderVars& enc, ad::Var states) const {
    ad::Var attended = attend(p, enc, states);
    ad::Var logits;
    if (config_.tie_embeddings)
      logits = ad::matmul(ad::matmul(attended, p(out_W_), true), p(embed_), true);
    else
      logits = ad::matmul(attended, p(out_W_), true);
    logits = ad::add(logits, p(out_b_));
    ad::Var u = ad::matmul(attended, enc.span_start, true);
    ad::Var v = ad::matmul(attended, enc.span_end, true);
    ad::Var spans = ad::outer_add(u, v);
    ad::Var all = ad::concat({logits, spans}, 1);
    ad::Var masked = ad::masked_fill(all, action_mask(enc.length));
    return ad::log_softmax(masked, 1);
  }

  ad::Var teacher_forced_log_probs(ParameterBinder& p, const EncoderVars& enc, std::span<const int> y_ids,
                                   ForwardMode mode) const {
    return action_log_probs(p, enc, teacher_forced_states(p, enc, y_ids, mode));
  }

  // ---- inference (no gradient) ------------------------------------------

  EncoderOutputs encode(std::span<const int> ids) const {
    ad::Tape tape;
    ParameterBinder p(tape, params_, false);
    EncoderVars v = encode(p, ids, ForwardMode{});
    EncoderOutputs out;
    out.contextual = v.contextual.value();
    out.summary = v.summary.value();
    out.attention_keys = v.attention_keys.value();
    out.span_start = v.span_start.value();
    out.span_end = v.span_end.value();
    return out;
  }

  DecoderState start_state(const EncoderOutputs& enc) const {
    ad::Tape tape;
    ParameterBinder p(tape, params_, false);
    DecoderState s;
    s.hidden = step(p, tape.constant_ref(enc.summary), Vocab::kStart).value();
    s.tokens_consumed = 0;
    return s;
  }

  // Feeds one output token. The result depends only on the previous state
  // and the token, so any two action paths emitting the same prefix reach
  // bitwise identical states.
  DecoderState advance(const DecoderState& state, int token_id) const {
    if (token_id < 0 || token_id >= config_.vocab_size)
      throw ValidationError("token id " + std::to_string(token_id) + " out of range");
    ad::Tape tape;
    ParameterBinder p(tape, params_, false);
    DecoderState s;
    s.hidden = step(p, tape.constant_ref(state.hidden), token_id).value();
    s.tokens_consumed = state.tokens_consumed + 1;
    return s;
  }

  AttentionResult attention_context(const DecoderState& state, const EncoderOutputs& enc,
                                    std::shared_ptr<const std::vector<std::uint8_t>> mask = nullptr) const {
    ad::Tape tape;
    ParameterBinder p(tape, params_, false);
    EncoderVars ev = bind(tape, enc);
    ad::Var weights;
    ad::Var h = tape.constant_ref(state.hidden);
    ad::Var attended = attend(p, ev, h, &weights, std::move(mask));
    AttentionResult r;
    r.weights = weights.value();
    r.context = ad::matmul(weights, ev.contextual).value();
    r.attended = attended.value();
    return r;
  }

  ActionDistribution action_distribution(const DecoderState& state, const EncoderOutputs& enc) const {
    ad::Tape tape;
    ParameterBinder p(tape, params_, false);
    EncoderVars ev = bind(tape, enc);
    const std::size_t d = state.hidden.size();
    ad::Var h = ad::reshape(tape.constant_ref(state.hidden), Shape{1, d});
    const NArray& lp = action_log_probs(p, ev, h).value();
    const std::size_t V = vocab_size(), n = enc.length();
    ActionDistribution dist;
    dist.log_q_vocab = NArray(Shape{V}, std::vector<double>(lp.data(), lp.data() + V));
    dist.log_q_span = NArray(Shape{n, n}, std::vector<double>(lp.data() + V, lp.data() + V + n * n));
    return dist;
  }

 private:
  static SplitMix64* rng_or_dummy(ForwardMode mode) {
    static thread_local SplitMix64 dummy(0);
    return mode.rng ? mode.rng : &dummy;
  }

  EncoderVars bind(ad::Tape& tape, const EncoderOutputs& enc) const {
    EncoderVars v;
    v.contextual = tape.constant_ref(enc.contextual);
    v.summary = tape.constant_ref(enc.summary);
    v.attention_keys = tape.constant_ref(enc.attention_keys);
    v.span_start = tape.constant_ref(enc.span_start);
    v.span_end = tape.constant_ref(enc.span_end);
    v.length = enc.length();
    return v;
  }

  ad::Var step(ParameterBinder& p, ad::Var h, int token_id) const {
    const int id[1] = {token_id};
    ad::Var x = ad::row(ad::embed_lookup(p(embed_), id), 0);
    const GruIds& g = dec_;
    return gru_cell(p, g, ad::add(ad::matmul(x, p(g.W_r), true), p(g.b_r)),
                    ad::add(ad::matmul(x, p(g.W_z), true), p(g.b_z)),
                    ad::add(ad::matmul(x, p(g.W_n), true), p(g.b_n)), h);
  }

  // r = sigma(x_r + U_r h), z = sigma(x_z + U_z h),
  // c = tanh(x_n + r * (U_n h + c_n)), h' = c + z * (h - c).
  ad::Var gru_cell(ParameterBinder& p, const GruIds& g, ad::Var xr, ad::Var xz, ad::Var xn, ad::Var h) const {
    ad::Var r = ad::sigmoid(ad::add(xr, ad::matmul(h, p(g.U_r), true)));
    ad::Var z = ad::sigmoid(ad::add(xz, ad::matmul(h, p(g.U_z), true)));
    ad::Var hn = ad::add(ad::matmul(h, p(g.U_n), true), p(g.c_n));
    ad::Var c = ad::tanh(ad::add(xn, ad::mul(r, hn)));
    return ad::add(c, ad::mul(z, ad::sub(h, c)));
  }

  // Hidden states of a GRU over the rows of `inputs`, in position order.
  ad::Var run_gru(ParameterBinder& p, const GruIds& g, ad::Var inputs, bool reverse) const {
    const std::size_t n = inputs.shape()[0];
    ad::Var xr = ad::add(ad::matmul(inputs, p(g.W_r), true), p(g.b_r));
    ad::Var xz = ad::add(ad::matmul(inputs, p(g.W_z), true), p(g.b_z));
    ad::Var xn = ad::add(ad::matmul(inputs, p(g.W_n), true), p(g.b_n));
    const std::size_t hidden = params_.value(g.U_r).rows();
    ad::Var h = inputs.tape().constant(NArray(Shape{hidden}, 0.0));
    std::vector<ad::Var> states(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      h = gru_cell(p, g, ad::row(xr, t), ad::row(xz, t), ad::row(xn, t), h);
      states[t] = h;
    }
    return ad::stack(states);
  }

  GruIds add_gru(const std::string& prefix, std::size_t in, std::size_t hidden, SplitMix64& rng) {
    GruIds g{};
    g.W_r = add_matrix(prefix + ".W_r", hidden, in, rng);
    g.W_z = add_matrix(prefix + ".W_z", hidden, in, rng);
    g.W_n = add_matrix(prefix + ".W_n", hidden, in, rng);
    g.U_r = add_matrix(prefix + ".U_r", hidden, hidden, rng);
    g.U_z = add_matrix(prefix + ".U_z", hidden, hidden, rng);
    g.U_n = add_matrix(prefix + ".U_n", hidden, hidden, rng);
    g.b_r = params_.add(prefix + ".b_r", NArray(Shape{hidden}, 0.0));
    g.b_z = params_.add(prefix + ".b_z", NArray(Shape{hidden}, 0.0));
    g.b_n = params_.add(prefix + ".b_n", NArray(Shape{hidden}, 0.0));
    g.c_n = params_.add(prefix + ".c_n", NArray(Shape{hidden}, 0.0));
    return g;
  }

  // Uniform in +-1/sqrt(fan_in), fan_in = number of columns.
  std::size_t add_matrix(const std::string& name, std::size_t rows, std::size_t cols, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    NArray m(Shape{rows, cols});
    for (double& v : m.values()) v = rng.uniform_real(-bound, bound);
    return params_.add(name, std::move(m));
  }

  void build_parameters() {
    SplitMix64 rng(config_.init_seed);
    const auto V = static_cast<std::size_t>(config_.vocab_size);
    const auto e = static_cast<std::size_t>(config_.embed_dim);
    const auto h = static_cast<std::size_t>(config_.enc_hidden);
    const auto d = static_cast<std::size_t>(config_.dec_hidden);
    embed_ = add_matrix("embed", V, e, rng);
    for (int l = 0; l < config_.enc_layers; ++l) {
      const std::size_t in = l == 0 ? e : 2 * h;
      const std::string base = "enc.l" + std::to_string(l);
      enc_.push_back({add_gru(base + ".fwd", in, h, rng), add_gru(base + ".bwd", in, h, rng)});
    }
    bridge_W_ = add_matrix("enc.bridge.W", d, 2 * h, rng);
    bridge_b_ = params_.add("enc.bridge.b", NArray(Shape{d}, 0.0));
    dec_ = add_gru("dec.gru", e, d, rng);
    att_W_ = add_matrix("dec.att.W", 2 * h, d, rng);
    comb_W_ = add_matrix("dec.comb.W", d, 2 * h + d, rng);
    comb_b_ = params_.add("dec.comb.b", NArray(Shape{d}, 0.0));
    out_W_ = config_.tie_embeddings ? add_matrix("dec.out.W", e, d, rng) : add_matrix("dec.out.W", V, d, rng);
    out_b_ = params_.add("dec.out.b", NArray(Shape{V}, 0.0));
    span_W_ = add_matrix("dec.span.W", d, 4 * h, rng);
  }

  ModelConfig config_;
  Vocab vocab_;
  Parameters params_;
  std::size_t embed_ = 0;
  std::vector<std::array<GruIds, 2>> enc_;
  GruIds dec_{};
  std::size_t bridge_W_ = 0, bridge_b_ = 0, att_W_ = 0, comb_W_ = 0, comb_b_ = 0, out_W_ = 0, out_b_ = 0, span_W_ = 0;
};

}  // namespace spanedit
