#pragma once

#include <span>
#include <string>
#include <vector>

#include "fdlab/rnn_lm.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab {

enum class RegKind { none, fd, eld, eldm, pi, ar, tar, pr };

std::string to_string(RegKind kind);
RegKind reg_kind_from_string(const std::string& s);

/// Active auxiliary penalties and their coefficients.
///
/// kappa weighs the two-pass penalties (FD, ELD, ELDM, PI), alpha weighs AR,
/// beta weighs TAR and gamma weighs PR. At most one two-pass kind may be
/// active; AR, TAR and PR stack on top of it.
struct RegularizerSpec {
  std::vector<RegKind> kinds;
  double kappa = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  bool has(RegKind kind) const;
  /// The two-pass kind in use, or RegKind::none.
  RegKind siamese() const;
  /// True for FD, ELD, ELDM and PI, which forward every batch twice.
  bool two_pass() const { return siamese() != RegKind::none; }
  /// True when the second pass runs without dropout (ELD, ELDM).
  bool second_pass_mask_free() const;
  void validate() const;
  std::string describe() const;
};

// Penalties on single tensors. Rank-2 inputs are summed over their rows.

/// ||p_i - p_j||^2, differentiable in both arguments.
Var r_fd(Var p_i, Var p_j);
/// ||p_dropout - p_meanmask||^2 with no gradient into p_meanmask.
Var r_eld(Var p_dropout, Var p_meanmask);
/// (alpha/d) ||mask * h||^2.
Var r_ar(Var h, Var mask, double alpha);
/// (alpha/d) ||h||^2 for an activation that already carries its mask.
Var r_ar(Var masked_h, double alpha);
/// (beta/d) ||h_t - h_prev||^2.
Var r_tar(Var h_t, Var h_prev, double beta);
/// (gamma/m) ||p||^2.
Var r_pr(Var p, double gamma);

/// Outputs of the passes that feed an objective. `second` is empty for
/// single-pass objectives; it holds copy j for FD/PI and the mask-free pass
/// for ELD/ELDM.
struct SiameseOutputs {
  std::vector<StepOutput> first;
  std::vector<StepOutput> second;
  Var first_initial_hidden;  ///< carried state before step 0 (for TAR)
};

/// An objective split into the target-loss part and the penalty part.
/// Values are per sequence (sum over time steps) averaged over the batch.
struct Objective {
  Var total;
  Var target;
  Var penalty;
};

/// Token targets for a window: targets[t][b].
using Targets = std::vector<std::vector<int>>;

/// (1/B) sum_t sum_b w_b * CE(logits_t[b], y_tb). Empty `label_weights` means all 1.
Var target_loss(const std::vector<StepOutput>& steps, const Targets& targets,
                std::span<const double> label_weights = {});
/// kappa/(m T) * (1/B) sum_t r_fd(p_i^t, p_j^t).
Var fd_penalty(const std::vector<StepOutput>& first, const std::vector<StepOutput>& second, double kappa);
/// kappa/(m T) * (1/B) sum_t r_eld(p^t, p_meanmask^t).
Var eld_penalty(const std::vector<StepOutput>& dropout, const std::vector<StepOutput>& mask_free, double kappa);

/// sum_t 1/2 (l_i + l_j) + kappa/(mT) sum_t r_fd.
Objective fd_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                       std::span<const double> label_weights = {});
/// Target loss on the dropout pass plus the ELD penalty.
Objective eld_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                        std::span<const double> label_weights = {});
/// Target loss averaged over the dropout and mask-free passes plus the ELD penalty.
Objective eldm_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                         std::span<const double> label_weights = {});
/// Target loss on copy i only plus the FD penalty between both copies.
Objective pi_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                       std::span<const double> label_weights = {});

/// Full training objective for `spec`. Target terms only count labeled
/// columns (`label_weights`), penalties count every column.
Objective build_objective(const RegularizerSpec& spec, const SiameseOutputs& out, const Targets& targets,
                          std::span<const double> label_weights = {});

}  // namespace fdlab
