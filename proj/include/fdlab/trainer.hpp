#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fdlab/data.hpp"
#include "fdlab/regularizers.hpp"
#include "fdlab/rnn_lm.hpp"

namespace fdlab {

struct OptimizerConfig {
  double lr = 30.0;
  double weight_decay = 1.2e-6;
  double clip = 0.25;                 ///< global gradient-norm threshold; 0 disables clipping
  bool asgd = true;                   ///< allow the switch to averaging
  std::size_t nonmono = 5;            ///< non-monotone interval n
  std::size_t lr_decay_patience = 20; ///< validations without improvement before decaying
  double lr_decay_factor = 0.1;

  void validate() const;
};

struct OptimizerState {
  double lr = 0.0;
  bool averaging = false;
  std::size_t trigger_epoch = 0;  ///< validation index (1-based) that switched averaging on
  std::vector<Tensor> shadow_sum; ///< sum of post-update parameters since the trigger
  std::size_t shadow_count = 0;
  std::vector<double> val_history;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  std::size_t decay_events = 0;

  static OptimizerState initial(const OptimizerConfig& cfg);
  /// Running mean of parameters since the trigger; empty before the first averaged step.
  std::vector<Tensor> shadow() const;
};

/// Appends `val_metric` to the history and switches averaging on when at least
/// n earlier validations exist and `val_metric` is no better than the best of
/// the last n of them. Returns true on the call that triggers.
bool ntasgd_maybe_trigger(OptimizerState& opt, const OptimizerConfig& cfg, double val_metric);

/// Multiplies the learning rate by the decay factor after `lr_decay_patience`
/// validations without a new best. Returns true when a decay happened.
bool lr_schedule_update(OptimizerState& opt, const OptimizerConfig& cfg, double val_metric);

/// Scales all gradients so their global L2 norm is at most `threshold`;
/// returns the norm before clipping.
double clip_gradients(std::vector<Parameter>& params, double threshold);

/// theta -= lr * (grad + weight_decay * theta); then folds theta into the
/// averaging shadow when averaging is on.
void sgd_update(std::vector<Parameter>& params, OptimizerState& opt, const OptimizerConfig& cfg);

/// Copy of `model` with the averaged shadow when averaging is active.
LmModel evaluation_model(const LmModel& model, const OptimizerState& opt);

enum class CarryMode { separate, shared };
enum class SiameseMasks { independent, shared };

struct RunConfig {
  LmConfig model;
  RegularizerSpec regularizer;
  OptimizerConfig optimizer;
  std::size_t batch_size = 20;
  bool halve_batch = true;         ///< two-pass runs use batch_size / 2
  std::size_t bptt = 35;
  std::size_t epochs = 1;
  std::size_t epoch_tokens = 0;    ///< training tokens per epoch; 0 = one pass over the split
  std::uint64_t seed = 1;
  std::size_t eval_batch_size = 10;
  CarryMode carry = CarryMode::separate;
  SiameseMasks siamese_masks = SiameseMasks::independent;
  double labeled_fraction = 1.0;   ///< leading fraction of batch columns that carry targets
  bool record_wall_time = false;   ///< write real timings into the metrics file

  std::size_t effective_batch() const;
  /// Per-column target weights (empty when every column is labeled).
  std::vector<double> label_weights() const;
  void validate() const;
};

/// Target loss over labeled columns plus penalties over all columns. Warns on
/// stderr when no column is labeled and no two-pass penalty is active.
Objective semi_supervised_objective(const RegularizerSpec& spec, const SiameseOutputs& out, const Targets& targets,
                                    const std::vector<bool>& labeled);

struct StepInput {
  const std::vector<std::vector<int>>* inputs = nullptr;
  const Targets* targets = nullptr;
  std::vector<double> label_weights;
  std::uint64_t seed_i = 0;
  std::uint64_t seed_j = 0;
  CarryMode carry = CarryMode::separate;
};

struct StepResult {
  double loss = 0.0;        ///< per-token objective that was differentiated
  double target = 0.0;      ///< target part of the objective, per sequence
  double penalty = 0.0;
  double grad_norm = 0.0;   ///< before clipping
  double act_norm_sum = 0.0;///< sum over steps and rows of (1/d)||m*h||^2, copy i
  std::size_t rows = 0;     ///< steps * batch
  std::size_t stored_doubles = 0;
};

/// One optimization step: forward pass(es) under fresh masks, objective per
/// `spec`, backward, clipping, SGD update, carries advanced.
StepResult siamese_step(LmModel& model, const RegularizerSpec& spec, const StepInput& in, OptimizerState& opt,
                        const OptimizerConfig& ocfg, Carry& carry_i, Carry& carry_j);

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double ppl = 0.0;
  double act_norm = 0.0;
  double lr = 0.0;
  bool averaging = false;
  double wall_s = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,ppl,act_norm,lr,averaging,wall_s";
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
  std::filesystem::path out_dir;            ///< empty: nothing written
  std::optional<LmModel> initial_model;     ///< resume from these parameters
  bool verbose = false;
  std::function<void(const MetricsRow&)> on_row;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::vector<double> val_ppl;          ///< per epoch
  std::vector<double> train_act_norm;   ///< per epoch
  double best_val_ppl = 0.0;
  std::size_t best_epoch = 0;
  LmModel best_model;                   ///< averaged shadow when it was active
  LmModel final_model;
  OptimizerState optimizer;
  std::size_t steps = 0;
  std::size_t peak_stored_doubles = 0;  ///< tape plus parameter values and gradients
  double wall_s = 0.0;
};

/// Trains per `cfg`. With an output directory: metrics.csv, timing.csv and
/// best.ckpt are written there.
TrainResult train(const RunConfig& cfg, const Corpus& corpus, const TrainOptions& options = {});

}  // namespace fdlab
