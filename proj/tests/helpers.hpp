#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spanedit/corpus.hpp"
#include "spanedit/model.hpp"
#include "spanedit/rng.hpp"

namespace spanedit::testing {

inline Vocab letters(const std::string& chars) {
  std::vector<std::string> s;
  for (char c : chars) s.emplace_back(1, c);
  return Vocab(s);
}

inline TokenSeq toks(const std::string& chars) {
  TokenSeq s;
  for (char c : chars) s.emplace_back(1, c);
  return s;
}

// Small model with random parameters scaled up so distributions are far
// from uniform.
inline Model small_model(const Vocab& vocab, std::uint64_t seed, int max_copy_len = 0, double scale = 2.0,
                         bool tie = true) {
  ModelConfig c;
  c.embed_dim = 4;
  c.enc_hidden = 3;
  c.enc_layers = 2;
  c.dec_hidden = 5;
  c.dropout = 0.0;
  c.tie_embeddings = tie;
  c.max_copy_len = max_copy_len;
  c.init_seed = seed;
  Model m(c, vocab);
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    for (double& v : m.parameters().value(i).values()) v *= scale;
  return m;
}

inline double log_sum(const std::vector<double>& v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  if (mx == -INFINITY) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace spanedit::testing
