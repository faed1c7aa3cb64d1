#include "fdlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "fdlab/checkpoint.hpp"
#include "fdlab/error.hpp"
#include "fdlab/eval.hpp"
#include "fdlab/rng.hpp"

namespace fdlab {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (!(clip >= 0.0)) throw std::invalid_argument("optimizer: clip must be >= 0");
  if (nonmono == 0) throw std::invalid_argument("optimizer: nonmono must be positive");
  if (lr_decay_patience == 0) throw std::invalid_argument("optimizer: lr_decay_patience must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw std::invalid_argument("optimizer: lr_decay_factor must be in (0, 1]");
  }
}

OptimizerState OptimizerState::initial(const OptimizerConfig& cfg) {
  OptimizerState s;
  s.lr = cfg.lr;
  return s;
}

std::vector<Tensor> OptimizerState::shadow() const {
  std::vector<Tensor> out;
  if (shadow_count == 0) return out;
  const double inv = 1.0 / static_cast<double>(shadow_count);
  for (const Tensor& sum : shadow_sum) {
    Tensor t = sum;
    for (double& v : t.data()) v *= inv;
    out.push_back(std::move(t));
  }
  return out;
}

bool ntasgd_maybe_trigger(OptimizerState& opt, const OptimizerConfig& cfg, double val_metric) {
  bool fire = false;
  const std::size_t n = cfg.nonmono;
  if (cfg.asgd && !opt.averaging && opt.val_history.size() >= n) {
    const double best_recent = *std::min_element(opt.val_history.end() - static_cast<std::ptrdiff_t>(n),
                                                 opt.val_history.end());
    fire = val_metric >= best_recent;
  }
  opt.val_history.push_back(val_metric);
  if (fire) {
    opt.averaging = true;
    opt.trigger_epoch = opt.val_history.size();
  }
  return fire;
}

bool lr_schedule_update(OptimizerState& opt, const OptimizerConfig& cfg, double val_metric) {
  if (val_metric < opt.best_val) {
    opt.best_val = val_metric;
    opt.stall = 0;
    return false;
  }
  if (++opt.stall < cfg.lr_decay_patience) return false;
  opt.lr *= cfg.lr_decay_factor;
  opt.stall = 0;
  ++opt.decay_events;
  return true;
}

double clip_gradients(std::vector<Parameter>& params, double threshold) {
  double sq = 0.0;
  for (const Parameter& p : params) {
    for (double g : p.grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (threshold > 0.0 && norm > threshold) {
    const double s = threshold / norm;
    for (Parameter& p : params) {
      for (double& g : p.grad.data()) g *= s;
    }
  }
  return norm;
}

void sgd_update(std::vector<Parameter>& params, OptimizerState& opt, const OptimizerConfig& cfg) {
  for (Parameter& p : params) {
    auto v = p.value.data();
    auto g = p.grad.data();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= opt.lr * (g[k] + cfg.weight_decay * v[k]);
  }
  if (!opt.averaging) return;
  if (opt.shadow_sum.empty()) {
    for (const Parameter& p : params) opt.shadow_sum.emplace_back(p.value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = opt.shadow_sum[i].data();
    auto src = params[i].value.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  ++opt.shadow_count;
}

LmModel evaluation_model(const LmModel& model, const OptimizerState& opt) {
  LmModel copy = model;
  if (!opt.averaging || opt.shadow_count == 0) return copy;
  std::vector<Tensor> avg = opt.shadow();
  for (std::size_t i = 0; i < avg.size(); ++i) copy.parameters()[i].value = std::move(avg[i]);
  return copy;
}

// ---------------------------------------------------------------------------

std::size_t RunConfig::effective_batch() const {
  if (regularizer.two_pass() && halve_batch) return std::max<std::size_t>(1, batch_size / 2);
  return batch_size;
}

std::vector<double> RunConfig::label_weights() const {
  if (labeled_fraction >= 1.0) return {};
  const std::size_t b = effective_batch();
  const auto labeled = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(b)));
  std::vector<double> w(b, 0.0);
  for (std::size_t i = 0; i < std::min(labeled, b); ++i) w[i] = 1.0;
  return w;
}

void RunConfig::validate() const {
  model.validate();
  regularizer.validate();
  optimizer.validate();
  if (batch_size == 0 || bptt == 0 || eval_batch_size == 0) throw std::invalid_argument("run: sizes must be positive");
  if (epochs == 0) throw std::invalid_argument("run: epochs must be positive");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0)) {
    throw std::invalid_argument("run: labeled_fraction must be in [0, 1]");
  }
}

Objective semi_supervised_objective(const RegularizerSpec& spec, const SiameseOutputs& out, const Targets& targets,
                                    const std::vector<bool>& labeled) {
  std::vector<double> w(labeled.size());
  bool any = false;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    w[i] = labeled[i] ? 1.0 : 0.0;
    any = any || labeled[i];
  }
  if (!any && !spec.two_pass()) {
    std::cerr << "warning: batch has no labeled samples and no consistency penalty; it carries no gradient signal\n";
  }
  return build_objective(spec, out, targets, w);
}

// ---------------------------------------------------------------------------

StepResult siamese_step(LmModel& model, const RegularizerSpec& spec, const StepInput& in, OptimizerState& opt,
                        const OptimizerConfig& ocfg, Carry& carry_i, Carry& carry_j) {
  const LmConfig& cfg = model.config();
  const auto& inputs = *in.inputs;
  const std::size_t steps = inputs.size();
  const std::size_t batch = inputs.front().size();
  const std::vector<SiteSpec> layout = cfg.mask_layout(batch);

  Tape tape;
  const MaskSet masks_i = MaskSet::sample(layout, steps, in.seed_i);
  ForwardResult first = forward(bind(tape, model, masks_i), inputs, masks_i, carry_i);

  SiameseOutputs outputs;
  outputs.first_initial_hidden = first.initial_hidden;
  std::optional<ForwardResult> second;
  if (spec.two_pass()) {
    const MaskSet masks_j =
        spec.second_pass_mask_free() ? MaskSet::expected(layout) : MaskSet::sample(layout, steps, in.seed_j);
    const Carry& start = in.carry == CarryMode::shared ? carry_i : carry_j;
    second = forward(bind(tape, model, masks_j), inputs, masks_j, start);
    outputs.second = second->steps;
  }
  outputs.first = first.steps;

  const Objective obj = build_objective(spec, outputs, *in.targets, in.label_weights);
  const Var loss = scale(obj.total, 1.0 / static_cast<double>(steps));

  StepResult r;
  r.loss = loss.value().item();
  r.target = obj.target.value().item();
  r.penalty = obj.penalty.value().item();
  model.zero_grad();
  tape.backward(loss);
  r.stored_doubles = tape.stored_doubles();
  for (const Parameter& p : model.parameters()) r.stored_doubles += p.value.size() + p.grad.size();

  r.grad_norm = clip_gradients(model.parameters(), ocfg.clip);
  sgd_update(model.parameters(), opt, ocfg);

  for (const StepOutput& s : first.steps) {
    const Tensor& h = s.masked_hidden.value();
    const double d = static_cast<double>(h.cols());
    for (std::size_t row = 0; row < h.rows(); ++row) {
      double sq = 0.0;
      for (std::size_t k = 0; k < h.cols(); ++k) sq += h.at(row, k) * h.at(row, k);
      r.act_norm_sum += sq / d;
    }
  }
  r.rows = steps * batch;

  carry_i = std::move(first.carry);
  if (second && in.carry == CarryMode::separate) carry_j = std::move(second->carry);
  return r;
}

// ---------------------------------------------------------------------------

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%d,%.3f", row.epoch, row.split.c_str(), row.loss,
                row.ppl, row.act_norm, row.lr, row.averaging ? 1 : 0, row.wall_s);
  return buf;
}

namespace {

class MetricsFile {
 public:
  MetricsFile() = default;
  explicit MetricsFile(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << kMetricsHeader << '\n';
    check();
  }
  void write(const std::string& line) {
    if (!out_.is_open()) return;
    out_ << line << '\n';
    out_.flush();
    check();
  }

 private:
  void check() {
    if (!out_) throw std::runtime_error("metrics write failed");
  }
  std::ofstream out_;
};

}  // namespace

TrainResult train(const RunConfig& cfg_in, const Corpus& corpus, const TrainOptions& options) {
  RunConfig cfg = cfg_in;
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = corpus.vocab.size();
  if (cfg.model.vocab_size != corpus.vocab.size()) {
    throw std::invalid_argument("model vocab_size " + std::to_string(cfg.model.vocab_size) + " differs from corpus " +
                                std::to_string(corpus.vocab.size()));
  }
  cfg.validate();

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const std::size_t batch = cfg.effective_batch();
  const BatchStream stream(corpus.train, batch, cfg.bptt);
  if (stream.windows() == 0) throw std::invalid_argument("train split too short for batch size " +
                                                         std::to_string(batch));
  const std::size_t per_epoch =
      cfg.epoch_tokens == 0 ? stream.windows()
                            : std::max<std::size_t>(1, (cfg.epoch_tokens + batch * cfg.bptt - 1) / (batch * cfg.bptt));

  LmModel model = options.initial_model ? *options.initial_model : LmModel::initialize(cfg.model, derive_seed(cfg.seed, {0}));
  if (!(model.config() == cfg.model)) throw std::invalid_argument("resumed model does not match the configured model");

  MetricsFile metrics;
  std::ofstream timing;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics = MetricsFile(options.out_dir / "metrics.csv");
    timing.open(options.out_dir / "timing.csv", std::ios::trunc);
    timing << "epoch,wall_s\n";
  }

  TrainResult result;
  OptimizerState opt = OptimizerState::initial(cfg.optimizer);
  Carry carry_i = zero_carry(cfg.model, batch);
  Carry carry_j = carry_i;
  const std::vector<double> weights = cfg.label_weights();
  if (!weights.empty() && std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; }) &&
      !cfg.regularizer.two_pass()) {
    std::cerr << "warning: no labeled columns and no consistency penalty; training has no gradient signal\n";
  }
  std::size_t cursor = 0;
  double best = std::numeric_limits<double>::infinity();

  auto emit = [&](const MetricsRow& row) {
    result.rows.push_back(row);
    metrics.write(format_metrics_row(row));
    if (options.on_row) options.on_row(row);
    if (options.verbose) std::cerr << format_metrics_row(row) << '\n';
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0, act_sum = 0.0;
    std::size_t tokens = 0, rows = 0;
    for (std::size_t k = 0; k < per_epoch; ++k) {
      if (cursor == stream.windows()) {
        cursor = 0;
        carry_i = zero_carry(cfg.model, batch);
        carry_j = carry_i;
      }
      const BatchStream::Window win = stream.window(cursor);
      StepInput in;
      in.inputs = &win.inputs;
      in.targets = &win.targets;
      in.label_weights = weights;
      in.seed_i = derive_seed(cfg.seed, {1, result.steps, 0});
      in.seed_j = cfg.siamese_masks == SiameseMasks::shared ? in.seed_i : derive_seed(cfg.seed, {1, result.steps, 1});
      in.carry = cfg.carry;
      StepResult step;
      try {
        step = siamese_step(model, cfg.regularizer, in, opt, cfg.optimizer, carry_i, carry_j);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(result.steps) + ", window " + std::to_string(cursor) + ", lr " +
                           std::to_string(opt.lr) + ", seed " + std::to_string(cfg.seed) + ")");
      }
      const std::size_t labeled = weights.empty()
                                      ? batch
                                      : static_cast<std::size_t>(std::count(weights.begin(), weights.end(), 1.0));
      loss_sum += step.target * static_cast<double>(batch);
      tokens += win.inputs.size() * labeled;
      act_sum += step.act_norm_sum;
      rows += step.rows;
      result.peak_stored_doubles = std::max(result.peak_stored_doubles, step.stored_doubles);
      ++result.steps;
      ++cursor;
    }

    const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
    const double recorded_wall = cfg.record_wall_time ? wall : 0.0;
    const double train_loss = tokens ? loss_sum / static_cast<double>(tokens) : 0.0;
    const double train_act = act_sum / static_cast<double>(rows);
    emit({epoch, "train", train_loss, std::exp(train_loss), train_act, opt.lr, opt.averaging, recorded_wall});

    const LmModel eval_model = evaluation_model(model, opt);
    const EvalResult val = perplexity(eval_model, corpus.valid, cfg.eval_batch_size, cfg.bptt);
    emit({epoch, "valid", val.mean_ce, val.ppl, val.act_norm, opt.lr, opt.averaging, recorded_wall});
    result.val_ppl.push_back(val.ppl);
    result.train_act_norm.push_back(train_act);
    if (timing.is_open()) timing << epoch << ',' << wall << '\n';

    if (val.ppl < best) {
      best = val.ppl;
      result.best_epoch = epoch;
      result.best_model = eval_model;
      if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "best.ckpt", eval_model, corpus.mode);
    }
    ntasgd_maybe_trigger(opt, cfg.optimizer, val.ppl);
    lr_schedule_update(opt, cfg.optimizer, val.ppl);
  }

  result.best_val_ppl = best;
  result.final_model = std::move(model);
  result.optimizer = std::move(opt);
  result.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

}  // namespace fdlab
