#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fdlab/masks.hpp"
#include "fdlab/rnn_lm.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab {

/// A tiny single-sequence language model whose dropout masks can be
/// enumerated exhaustively. The prediction under study is the final-step
/// logit vector.
struct TinyProblem {
  LmModel model;
  std::vector<int> tokens;  ///< input sequence (batch of one)
  std::uint64_t seed = 0;   ///< seed the problem was generated from

  std::string describe() const;
};

/// One independently drawn mask tensor of a TinyProblem: a site, and for
/// per_step sites the step it applies to.
struct MaskSlot {
  int layer = 0;
  Site site = Site::input;
  std::size_t step = 0;  ///< meaningful for per_step slots only
  bool per_step = false;
  DropScheme scheme;
  Shape shape;
};

std::vector<MaskSlot> stochastic_slots(const TinyProblem& problem);
std::size_t mask_bits(const TinyProblem& problem);

/// Final-step logits for a single forward pass under `masks`.
Tensor tiny_prediction(const TinyProblem& problem, const MaskSet& masks);

/// A finite distribution over prediction vectors: the exact law of p(s).
struct OutcomeTable {
  std::vector<Tensor> outputs;
  std::vector<double> probabilities;
  Tensor mean_mask_output;  ///< p(s-bar), the all-ones-mask prediction
};

/// Every joint mask assignment of `problem` with its probability and prediction.
OutcomeTable enumerate_outcomes(const TinyProblem& problem);

struct Expectations {
  double e_pair_sq_dist = 0.0;         ///< E_{si,sj} ||p(si) - p(sj)||^2 over ordered i.i.d. pairs
  std::vector<double> unit_variance;   ///< Var_s p_q(s) per output unit
  Tensor e_prediction;                 ///< E_s p(s)
  double r_eld_tilde = 0.0;            ///< E_s ||p(s) - p(s-bar)||^2
  std::size_t outcomes = 0;
  bool explicit_pairs = true;          ///< false when the pair term used the moment form

  double two_sum_var() const;
};

/// Outcome counts up to this size sum ordered pairs explicitly.
inline constexpr std::size_t kExplicitPairLimit = 4096;

Expectations expectations_from(const OutcomeTable& table);
/// Exact expectations by enumeration. Throws std::length_error beyond the bit budget.
Expectations exact_expectations(const TinyProblem& problem);
/// Independent second enumerator: its own scalar LSTM, bit decoding and
/// accumulation, sharing nothing with the tape path beyond the parameters.
Expectations reference_expectations(const TinyProblem& problem);

/// Random tiny problem with at most `max_bits` mask bits at input and output
/// sites, dropout `rate`, and the given activation granularity.
TinyProblem random_tiny_problem(std::uint64_t seed, std::size_t max_bits, double rate, Granularity granularity);

/// Population used by the verification suite: `count` problems alternating
/// rates {0.1, 0.5} and granularities {per_step, per_sequence}.
std::vector<TinyProblem> tiny_population(std::size_t count, std::uint64_t seed, std::size_t max_bits);

struct CheckFailure {
  std::uint64_t seed = 0;
  std::string configuration;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct ClaimReport {
  std::string claim;
  std::size_t checked = 0;
  std::vector<CheckFailure> violations;
  double worst_abs_deviation = 0.0;  ///< identity: |lhs - rhs|; bound: max(lhs - rhs, 0)
  double worst_rel_deviation = 0.0;
  double max_ratio = 0.0;            ///< bound: max lhs/rhs over configurations with rhs > 0
  std::uint64_t worst_seed = 0;
  double max_enumerator_gap = 0.0;   ///< largest relative gap between the two enumerators
  bool passed() const { return violations.empty(); }
};

/// |E_pair - 2 sum Var| <= 1e-9 max(1, |E_pair|) on every problem, and the two
/// enumerators agree to 1e-12.
ClaimReport check_remark1(const std::vector<TinyProblem>& problems);
/// E_pair <= 4 R_eld + 1e-12 on every problem.
ClaimReport check_prop1(const std::vector<TinyProblem>& problems);

struct McReport {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double exact = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
  double z = 0.0;  ///< |mean - exact| / std_error (0 when both are 0)
  bool passed = false;
};

/// Mean of `samples` single-pair r_fd estimates, each pair drawn as two
/// independently seeded MaskSets, compared to the exact expectation.
McReport mc_estimator_consistency(const TinyProblem& problem, std::size_t samples, std::uint64_t seed);

}  // namespace fdlab
