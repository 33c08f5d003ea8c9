#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/model.hpp"
#include "spanedit/objective.hpp"
#include "spanedit/rng.hpp"
#include "spanedit/search.hpp"

namespace spanedit {

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::marginal;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t dropout_seed = 2;
  // Restore the parameters of the epoch with the best validation exact match.
  bool keep_best = false;
  // Validation examples decoded per epoch; 0 means all.
  std::size_t valid_limit = 0;
  // Run validation every this many epochs (and always after the last one).
  std::size_t valid_every = 1;
  std::size_t threads = 1;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be a finite value >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (valid_every < 1) throw ValidationError("valid_every must be >= 1");
    if (threads < 1) throw ValidationError("threads must be >= 1");
  }
};

// One line of the training log. `exact_match` is absent for training records.
struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> exact_match;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j{{"epoch", epoch}, {"split", split}, {"loss", loss}};
    j["exact_match"] = exact_match ? nlohmann::ordered_json(*exact_match) : nlohmann::ordered_json(nullptr);
    return j;
  }
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_exact_match = -1.0;
};

class Adam {
 public:
  Adam(const Parameters& params, const TrainConfig& cfg)
      : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(Parameters& params, const std::vector<NArray>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      NArray& w = params.value(p);
      const NArray& g = grads[p];
      NArray& m = m_[p];
      NArray& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<NArray> m_, v_;
  std::uint64_t t_ = 0;
};

inline double global_norm(const std::vector<NArray>& grads) {
  double s = 0.0;
  for (const NArray& g : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

// Scales `grads` so the global norm is at most `max_norm`. Returns the
// norm before clipping.
inline double clip_global_norm(std::vector<NArray>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (NArray& g : grads)
      for (double& v : g.values()) v *= scale;
  }
  return norm;
}

// Runs `fn(i)` for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; !failed && (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct PreparedExample {
  EncodedExample encoded;
  CorrectActionTable table;
};

inline PreparedExample prepare_example(const Model& model, const EditExample& ex) {
  PreparedExample p;
  p.encoded = encode_example(model.vocab(), ex.input, ex.output);
  p.table = correct_action_table(p.encoded, model.config().max_copy_len);
  return p;
}

// Loss of one example; adds its gradient to `grads` when given.
inline double example_loss(const Model& model, const PreparedExample& ex, ObjectiveKind kind, ForwardMode mode,
                           std::vector<NArray>* grads, double weight = 1.0) {
  ad::Tape tape;
  ParameterBinder p(tape, model.parameters(), grads != nullptr);
  const StepScores s = teacher_forced_scores(model, p, ex.encoded, mode);
  ad::Var loss = objective_loss(kind, s, ex.table);
  const double value = loss.value().item();
  if (grads && std::isfinite(value)) {
    tape.backward(loss);
    p.accumulate(*grads, weight);
  }
  return value;
}

inline double greedy_exact_match(const Model& model, const std::vector<EditExample>& examples, std::size_t limit,
                                 std::size_t threads) {
  const std::size_t n = limit ? std::min(limit, examples.size()) : examples.size();
  if (n == 0) return 0.0;
  std::vector<char> hit(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    hit[i] = greedy_decode(model, examples[i].input).tokens == examples[i].output;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(n);
}

inline double mean_loss(const Model& model, const std::vector<PreparedExample>& examples, ObjectiveKind kind,
                        std::size_t limit, std::size_t threads) {
  const std::size_t n = limit ? std::min(limit, examples.size()) : examples.size();
  if (n == 0) return 0.0;
  std::vector<double> losses(n);
  parallel_for(n, threads, [&](std::size_t i) { losses[i] = example_loss(model, examples[i], kind, {}, nullptr); });
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(n);
}

// Minibatch training with the chosen objective. The batch loss is the mean
// of per-example losses. Per-example gradients are reduced in example order,
// so results do not depend on `threads`.
inline TrainResult train(Model& model, const std::vector<EditExample>& train_set,
                         const std::vector<EditExample>& valid_set, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_record = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  std::vector<PreparedExample> train_ex, valid_ex;
  train_ex.reserve(train_set.size());
  for (const EditExample& e : train_set) train_ex.push_back(prepare_example(model, e));
  for (const EditExample& e : valid_set) valid_ex.push_back(prepare_example(model, e));

  Parameters& params = model.parameters();
  Adam adam(params, cfg);
  TrainResult result;
  std::optional<Parameters> best;
  auto emit = [&](EpochRecord r) {
    if (on_record) on_record(r);
    result.log.push_back(std::move(r));
  };

  std::vector<std::size_t> order(train_ex.size());
  std::vector<std::vector<NArray>> per_example;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 shuffle_rng(mix_seed(cfg.shuffle_seed, epoch));
    shuffle_in_place(order, shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      per_example.resize(count);
      std::vector<double> losses(count);
      parallel_for(count, cfg.threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        per_example[b] = params.zeros_like();
        SplitMix64 rng(mix_seed(mix_seed(cfg.dropout_seed, epoch), idx));
        try {
          losses[b] = example_loss(model, train_ex[idx], cfg.objective, ForwardMode{true, &rng}, &per_example[b]);
        } catch (const DivergenceError&) {
          throw;
        } catch (const NumericError& e) {
          // non-finite parameters surface as a failed log-sum-exp
          throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", training example " +
                                std::to_string(idx));
        }
      });
      std::vector<NArray> grads = params.zeros_like();
      const double w = 1.0 / static_cast<double>(count);
      for (std::size_t b = 0; b < count; ++b) {
        if (!std::isfinite(losses[b]))
          throw DivergenceError("non-finite loss " + std::to_string(losses[b]) + " at epoch " +
                                std::to_string(epoch) + ", training example " + std::to_string(order[start + b]));
        epoch_loss += losses[b];
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += w * per_example[b][p][k];
      }
      const double norm = clip_global_norm(grads, cfg.clip_norm);
      if (!std::isfinite(norm))
        throw DivergenceError("non-finite gradient norm at epoch " + std::to_string(epoch));
      adam.step(params, grads);
    }
    emit(EpochRecord{epoch, "train", epoch_loss / static_cast<double>(order.size()), std::nullopt});

    const bool run_valid = !valid_ex.empty() && (epoch % cfg.valid_every == 0 || epoch == cfg.epochs);
    if (run_valid) {
      const double vloss = mean_loss(model, valid_ex, cfg.objective, cfg.valid_limit, cfg.threads);
      const double em = greedy_exact_match(model, valid_set, cfg.valid_limit, cfg.threads);
      emit(EpochRecord{epoch, "valid", vloss, em});
      if (em > result.best_exact_match) {
        result.best_exact_match = em;
        result.best_epoch = epoch;
        if (cfg.keep_best) best = params;
      }
    }
  }
  if (cfg.keep_best && best) params = *best;
  return result;
}

}  // namespace spanedit
