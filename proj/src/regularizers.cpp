#include "fdlab/regularizers.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "fdlab/error.hpp"

namespace fdlab {

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::none: return "none";
    case RegKind::fd: return "fd";
    case RegKind::eld: return "eld";
    case RegKind::eldm: return "eldm";
    case RegKind::pi: return "pi";
    case RegKind::ar: return "ar";
    case RegKind::tar: return "tar";
    case RegKind::pr: return "pr";
  }
  return "?";
}

RegKind reg_kind_from_string(const std::string& s) {
  for (RegKind k : {RegKind::none, RegKind::fd, RegKind::eld, RegKind::eldm, RegKind::pi, RegKind::ar, RegKind::tar,
                    RegKind::pr}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown regularizer kind '" + s + "'");
}

bool RegularizerSpec::has(RegKind kind) const { return std::find(kinds.begin(), kinds.end(), kind) != kinds.end(); }

RegKind RegularizerSpec::siamese() const {
  for (RegKind k : kinds) {
    if (k == RegKind::fd || k == RegKind::eld || k == RegKind::eldm || k == RegKind::pi) return k;
  }
  return RegKind::none;
}

bool RegularizerSpec::second_pass_mask_free() const {
  const RegKind k = siamese();
  return k == RegKind::eld || k == RegKind::eldm;
}

void RegularizerSpec::validate() const {
  for (double c : {kappa, alpha, beta, gamma}) {
    if (!(c >= 0.0)) throw std::invalid_argument("regularizer coefficients must be >= 0");
  }
  int two_pass = 0;
  for (RegKind k : kinds) {
    if (k == RegKind::fd || k == RegKind::eld || k == RegKind::eldm || k == RegKind::pi) ++two_pass;
    if (k == RegKind::none && kinds.size() > 1) throw std::invalid_argument("'none' cannot be combined");
  }
  if (two_pass > 1) throw std::invalid_argument("at most one of fd/eld/eldm/pi may be active");
}

std::string RegularizerSpec::describe() const {
  std::ostringstream os;
  if (kinds.empty()) return "none";
  for (std::size_t i = 0; i < kinds.size(); ++i) os << (i ? "+" : "") << to_string(kinds[i]);
  return os.str();
}

// ---------------------------------------------------------------------------

Var r_fd(Var p_i, Var p_j) { return squared_distance(p_i, p_j); }

Var r_eld(Var p_dropout, Var p_meanmask) { return squared_distance(p_dropout, detach(p_meanmask)); }

Var r_ar(Var h, Var mask, double alpha) {
  if (h.shape() != mask.shape()) {
    throw ShapeError("r_ar: activation " + shape_str(h.shape()) + " and mask " + shape_str(mask.shape()) + " differ");
  }
  return r_ar(mul(mask, h), alpha);
}

Var r_ar(Var masked_h, double alpha) {
  const double d = static_cast<double>(masked_h.value().cols());
  return scale(sum(square(masked_h)), alpha / d);
}

Var r_tar(Var h_t, Var h_prev, double beta) {
  const double d = static_cast<double>(h_t.value().cols());
  return scale(squared_distance(h_t, h_prev), beta / d);
}

Var r_pr(Var p, double gamma) {
  const double m = static_cast<double>(p.value().cols());
  return scale(sum(square(p)), gamma / m);
}

// ---------------------------------------------------------------------------

namespace {

Var accumulate_sum(Var acc, Var term) { return acc.valid() ? add(acc, term) : term; }

double batch_size_of(const std::vector<StepOutput>& steps) {
  return static_cast<double>(steps.front().logits.value().rows());
}

void check_pair(const std::vector<StepOutput>& a, const std::vector<StepOutput>& b) {
  if (a.empty() || a.size() != b.size()) {
    throw ShapeError("siamese outputs differ in length: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

Var zero_like(const std::vector<StepOutput>& steps) { return steps.front().logits.tape().constant(Tensor::scalar(0.0)); }

}  // namespace

Var target_loss(const std::vector<StepOutput>& steps, const Targets& targets, std::span<const double> label_weights) {
  if (steps.empty()) throw ShapeError("target_loss: no steps");
  if (targets.size() != steps.size()) {
    throw ShapeError("target_loss: " + std::to_string(targets.size()) + " target rows for " +
                     std::to_string(steps.size()) + " steps");
  }
  Var total;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    total = accumulate_sum(total, softmax_cross_entropy(steps[t].logits, targets[t], label_weights));
  }
  return scale(total, 1.0 / batch_size_of(steps));
}

Var fd_penalty(const std::vector<StepOutput>& first, const std::vector<StepOutput>& second, double kappa) {
  check_pair(first, second);
  const double m = static_cast<double>(first.front().logits.value().cols());
  const double steps = static_cast<double>(first.size());
  Var total;
  for (std::size_t t = 0; t < first.size(); ++t) total = accumulate_sum(total, r_fd(first[t].logits, second[t].logits));
  return scale(total, kappa / (m * steps) / batch_size_of(first));
}

Var eld_penalty(const std::vector<StepOutput>& dropout, const std::vector<StepOutput>& mask_free, double kappa) {
  check_pair(dropout, mask_free);
  const double m = static_cast<double>(dropout.front().logits.value().cols());
  const double steps = static_cast<double>(dropout.size());
  Var total;
  for (std::size_t t = 0; t < dropout.size(); ++t) {
    total = accumulate_sum(total, r_eld(dropout[t].logits, mask_free[t].logits));
  }
  return scale(total, kappa / (m * steps) / batch_size_of(dropout));
}

Objective fd_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                       std::span<const double> label_weights) {
  const Var target =
      scale(add(target_loss(out.first, targets, label_weights), target_loss(out.second, targets, label_weights)), 0.5);
  const Var penalty = fd_penalty(out.first, out.second, kappa);
  return {add(target, penalty), target, penalty};
}

Objective eld_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                        std::span<const double> label_weights) {
  const Var target = target_loss(out.first, targets, label_weights);
  const Var penalty = eld_penalty(out.first, out.second, kappa);
  return {add(target, penalty), target, penalty};
}

Objective eldm_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                         std::span<const double> label_weights) {
  const Var target =
      scale(add(target_loss(out.first, targets, label_weights), target_loss(out.second, targets, label_weights)), 0.5);
  const Var penalty = eld_penalty(out.first, out.second, kappa);
  return {add(target, penalty), target, penalty};
}

Objective pi_objective(const SiameseOutputs& out, const Targets& targets, double kappa,
                       std::span<const double> label_weights) {
  const Var target = target_loss(out.first, targets, label_weights);
  const Var penalty = fd_penalty(out.first, out.second, kappa);
  return {add(target, penalty), target, penalty};
}

Objective build_objective(const RegularizerSpec& spec, const SiameseOutputs& out, const Targets& targets,
                          std::span<const double> label_weights) {
  spec.validate();
  Objective obj;
  switch (spec.siamese()) {
    case RegKind::fd: obj = fd_objective(out, targets, spec.kappa, label_weights); break;
    case RegKind::eld: obj = eld_objective(out, targets, spec.kappa, label_weights); break;
    case RegKind::eldm: obj = eldm_objective(out, targets, spec.kappa, label_weights); break;
    case RegKind::pi: obj = pi_objective(out, targets, spec.kappa, label_weights); break;
    default: {
      const Var target = target_loss(out.first, targets, label_weights);
      obj = {target, target, zero_like(out.first)};
      break;
    }
  }

  const double batch = batch_size_of(out.first);
  Var extra;
  if (spec.has(RegKind::ar)) {
    for (const StepOutput& s : out.first) extra = accumulate_sum(extra, r_ar(s.masked_hidden, spec.alpha));
  }
  if (spec.has(RegKind::tar)) {
    if (!out.first_initial_hidden.valid()) throw std::invalid_argument("TAR needs the carried hidden state");
    Var prev = out.first_initial_hidden;
    for (const StepOutput& s : out.first) {
      extra = accumulate_sum(extra, r_tar(s.hidden, prev, spec.beta));
      prev = s.hidden;
    }
  }
  if (spec.has(RegKind::pr)) {
    for (const StepOutput& s : out.first) extra = accumulate_sum(extra, r_pr(s.logits, spec.gamma));
  }
  if (extra.valid()) {
    const Var activity = scale(extra, 1.0 / batch);
    obj.penalty = add(obj.penalty, activity);
    obj.total = add(obj.total, activity);
  }
  return obj;
}

}  // namespace fdlab
