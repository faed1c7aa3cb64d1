// Acceptance checks that run in minutes: oracle identities, gradient
// fidelity, reduction to the baseline, the averaging rule and determinism.
// Prints one PASS/FAIL line per criterion; exits 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>

#include "fdlab/commands.hpp"
#include "fdlab/config.hpp"
#include "fdlab/regularizers.hpp"
#include "fdlab/trainer.hpp"
#include "fdlab/verify.hpp"
#include "support.hpp"

using namespace fdlab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s %d %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void run_guarded(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what());
  }
}

const fs::path kSource = FDLAB_SOURCE_DIR;

// 1, 2, 6 share the verification population.
void oracle_checks() {
  VerifyOptions o;  // 100 networks, 12-bit budget, 1e5 MC samples
  const auto t0 = std::chrono::steady_clock::now();
  const VerifyReport r = run_verification(o);
  const double secs = seconds_since(t0);
  report(1, r.variance_identity.passed() && r.variance_identity.checked == 100 && secs < 120.0,
         fmt("variance identity: %zu nets, worst rel dev %.3g, enumerator gap %.3g, %.1f s", r.variance_identity.checked,
             r.variance_identity.worst_rel_deviation, r.variance_identity.max_enumerator_gap, secs));
  report(2, r.eld_bound.passed() && r.eld_bound.checked == 100,
         fmt("eld bound: %zu violations over %zu nets, max ratio %.4f", r.eld_bound.violations.size(), r.eld_bound.checked,
             r.eld_bound.max_ratio));
  report(6, r.mc.passed && r.mc.samples == 100000 && r.mc.z <= 5.0,
         fmt("mc consistency: exact %.6g mean %.6g se %.3g z %.2f (%s)", r.mc.exact, r.mc.mean, r.mc.std_error, r.mc.z,
             r.mc_problem.c_str()));
}

void gradient_fidelity() {
  LmConfig c;
  c.vocab_size = 7;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.num_layers = 2;
  c.tie_embeddings = false;
  c.embedding.rate = 0.1;
  c.input.rate = 0.3;
  c.output.rate = 0.3;
  c.weight.rate = 0.3;
  const LmModel model = LmModel::initialize(c, 4);
  const std::vector<std::vector<int>> inputs = {{1, 2, 3}, {4, 0, 6}};
  const Targets targets = {{2, 3, 5}, {0, 6, 1}};
  const MaskSet a = MaskSet::sample(c.mask_layout(3), 3, 11);
  const MaskSet b = MaskSet::sample(c.mask_layout(3), 3, 12);
  const auto fn = [&](Tape&, const std::vector<Var>& nodes) {
    SiameseOutputs out;
    out.first = forward(testing::bind_nodes(model, nodes, a), inputs, a, zero_carry(c, 3)).steps;
    out.second = forward(testing::bind_nodes(model, nodes, b), inputs, b, zero_carry(c, 3)).steps;
    return fd_objective(out, targets, 5.0).total;
  };
  const double err = testing::max_grad_error(fn, testing::parameter_values(model));
  report(3, err <= 1e-6, fmt("gradient fidelity: max rel error %.3g over all parameters of a 2x8 model", err));
}

Corpus tiny_corpus() { return load_corpus(kSource / "data" / "tiny", TokenMode::word); }

RunConfig tiny_run(const Corpus& corpus) {
  RunConfig r;
  r.model.vocab_size = corpus.vocab.size();
  r.model.embed_dim = 16;
  r.model.hidden_dim = 16;
  r.model.embedding.rate = 0.1;
  r.model.input.rate = 0.2;
  r.model.output.rate = 0.3;
  r.model.weight.rate = 0.3;
  r.optimizer.lr = 10.0;
  r.optimizer.nonmono = 1;
  r.batch_size = 8;
  r.bptt = 20;
  r.epochs = 2;
  r.epoch_tokens = 100 * 8 * 20;
  r.seed = 3;
  return r;
}

void reduction_identity() {
  const Corpus corpus = tiny_corpus();
  const RunConfig base = tiny_run(corpus);
  RunConfig fd = base;
  fd.regularizer.kinds = {RegKind::fd};
  fd.regularizer.kappa = 0.0;
  fd.siamese_masks = SiameseMasks::shared;
  fd.halve_batch = false;
  const TrainResult a = train(base, corpus);
  const TrainResult b = train(fd, corpus);
  bool same = a.steps == 200 && b.steps == 200 && a.rows.size() == b.rows.size();
  for (std::size_t i = 0; same && i < a.rows.size(); ++i) {
    same = format_metrics_row(a.rows[i]) == format_metrics_row(b.rows[i]) && a.rows[i].loss == b.rows[i].loss;
  }
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.final_model.parameters().size(); ++i) {
    const Tensor& x = a.final_model.parameters()[i].value;
    const Tensor& y = b.final_model.parameters()[i].value;
    for (std::size_t k = 0; k < x.size(); ++k) differing += x[k] != y[k];
  }
  report(4, same && differing == 0,
         fmt("reduction identity: %zu steps, %zu metric rows, %zu differing parameter values", b.steps, b.rows.size(),
             differing));
}

void decomposition_identity() {
  Rng rng(2024);
  double worst = 0.0, worst_rel = 0.0;
  // Standard normal entries: an absolute 1e-12 is meaningful only while the
  // squared norms stay within a few hundred.
  for (int k = 0; k < 10000; ++k) {
    const std::size_t m = 1 + rng.below(64);
    Tensor pi(Shape{m}), pj(Shape{m});
    for (std::size_t q = 0; q < m; ++q) {
      pi[q] = rng.normal();
      pj[q] = rng.normal();
    }
    Tape tape;
    tape.set_grad_enabled(false);
    const double r = r_fd(tape.constant(pi), tape.constant(pj)).value().item();
    double ii = 0.0, jj = 0.0, ij = 0.0;
    for (std::size_t q = 0; q < m; ++q) {
      ii += pi[q] * pi[q];
      jj += pj[q] * pj[q];
      ij += pi[q] * pj[q];
    }
    const double gap = std::abs(r - (ii + jj - 2 * ij));
    worst = std::max(worst, gap);
    worst_rel = std::max(worst_rel, gap / std::max(r, 1e-300));
  }
  report(5, worst <= 1e-12,
         fmt("decomposition identity: max abs gap %.3g (rel %.3g) over 10000 pairs", worst, worst_rel));
}

void ntasgd_rule() {
  OptimizerConfig cfg;
  cfg.nonmono = 5;
  OptimizerState s = OptimizerState::initial(cfg);
  const double history[] = {100, 99, 98, 99, 99, 99, 99, 99};
  std::size_t fired = 0, fired_at = 99;
  for (std::size_t i = 0; i < 8; ++i) {
    if (ntasgd_maybe_trigger(s, cfg, history[i])) {
      ++fired;
      fired_at = i;
    }
  }
  const bool trigger_ok = fired == 1 && fired_at == 5 && s.trigger_epoch == 6;

  // Shadow: average of post-update parameters from the triggering validation on.
  const Corpus corpus = tiny_corpus();
  RunConfig run = tiny_run(corpus);
  LmModel model = LmModel::initialize(run.model, 5);
  OptimizerState opt = OptimizerState::initial(run.optimizer);
  const BatchStream stream(corpus.train, run.batch_size, run.bptt);
  Carry ci = zero_carry(run.model, run.batch_size), cj = ci;
  std::vector<std::vector<Tensor>> snapshots;
  std::size_t step = 0;
  for (double val : {50.0, 60.0, 70.0}) {
    for (int k = 0; k < 4; ++k, ++step) {
      const BatchStream::Window w = stream.window(step);
      StepInput in;
      in.inputs = &w.inputs;
      in.targets = &w.targets;
      in.seed_i = derive_seed(1, {1, step, 0});
      siamese_step(model, run.regularizer, in, opt, run.optimizer, ci, cj);
      if (opt.averaging) {
        std::vector<Tensor> snap;
        for (const Parameter& p : model.parameters()) snap.push_back(p.value);
        snapshots.push_back(std::move(snap));
      }
    }
    ntasgd_maybe_trigger(opt, run.optimizer, val);
  }
  double worst = snapshots.empty() ? INFINITY : 0.0;
  const std::vector<Tensor> shadow = opt.shadow();
  for (std::size_t i = 0; i < shadow.size() && !snapshots.empty(); ++i) {
    for (std::size_t k = 0; k < shadow[i].size(); ++k) {
      double mean = 0.0;
      for (const auto& snap : snapshots) mean += snap[i][k];
      worst = std::max(worst, std::abs(shadow[i][k] - mean / static_cast<double>(snapshots.size())));
    }
  }
  report(9, trigger_ok && snapshots.size() == 4 && worst <= 1e-12,
         fmt("nt-asgd: fired %zu time(s) at index %zu (epoch %zu, expected 6), shadow over %zu steps max gap %.3g",
             fired, fired_at, s.trigger_epoch, snapshots.size(), worst));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Two configs: the smoke run as shipped, and a shortened desk FD run written
// out as its own config file.
void determinism() {
  const fs::path work = fs::temp_directory_path() / "fdlab_acceptance_determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path desk_ini = kSource / "configs" / "desk" / "fd.ini";
  ExperimentConfig desk = load_config(desk_ini);
  desk.data_dir = resolve_data_dir(desk.data_dir, desk_ini.parent_path());
  desk.run.epochs = 1;
  desk.run.epoch_tokens = 4000;
  desk.run.seed = 7;
  std::ofstream(work / "desk_fd.ini") << render_config(desk);

  bool same = true;
  std::string detail;
  for (const fs::path& cfg : {kSource / "configs" / "smoke.ini", work / "desk_fd.ini"}) {
    std::string metrics[2];
    for (int k = 0; k < 2; ++k) {
      TrainCommand cmd;
      cmd.config = cfg;
      cmd.out = work / (cfg.stem().string() + "_" + std::to_string(k));
      std::ostringstream log;
      cmd_train(cmd, log);
      metrics[k] = slurp(cmd.out / "metrics.csv");
    }
    const bool eq = !metrics[0].empty() && metrics[0] == metrics[1];
    same = same && eq;
    detail += fmt(" %s:%s(%zu bytes)", cfg.filename().c_str(), eq ? "identical" : "DIFFERENT", metrics[0].size());
  }
  fs::remove_all(work);
  report(10, same, "determinism: metrics.csv" + detail);
}

}  // namespace

int main() {
  run_guarded(1, oracle_checks);
  run_guarded(3, gradient_fidelity);
  run_guarded(4, reduction_identity);
  run_guarded(5, decomposition_identity);
  run_guarded(9, ntasgd_rule);
  run_guarded(10, determinism);
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
