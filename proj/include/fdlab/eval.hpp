#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fdlab/rnn_lm.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab {

struct EvalResult {
  double ppl = 0.0;
  double mean_ce = 0.0;   ///< mean token cross-entropy (nats)
  double act_norm = 0.0;  ///< mean (1/d)||m*h||^2 of the final-layer output per token
  std::size_t tokens = 0;
};

/// Mask-free (expected-mask) perplexity over `ids`, threading the carried
/// state through the whole split.
EvalResult perplexity(const LmModel& model, const std::vector<int>& ids, std::size_t batch = 10,
                      std::size_t bptt = 35);

struct McOptions {
  std::size_t samples = 1;  ///< K
  std::uint64_t seed = 0;
  std::size_t batch = 10;
  std::size_t bptt = 35;
  /// Reuse mask draw 0 for every k (testing hook).
  bool identical_masks = false;
  /// Receives the averaged probability rows of every step ([batch, vocab]).
  std::function<void(const Tensor&)> on_step;
};

/// Sequence-averaging Monte-Carlo evaluation: K independent mask draws per
/// window (every stochastic site resampled), each with its own carried state;
/// per-step softmax probabilities are averaged over the draws before scoring.
EvalResult mc_eval(const LmModel& model, const std::vector<int>& ids, const McOptions& options);

/// MC-k perplexities for every k in `prefixes` from one run of K draws: the
/// estimate for k averages the first k draws, so the results are nested.
std::vector<EvalResult> mc_eval_prefixes(const LmModel& model, const std::vector<int>& ids,
                                         const McOptions& options, const std::vector<std::size_t>& prefixes);

}  // namespace fdlab
