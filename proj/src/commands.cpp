#include "fdlab/commands.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "fdlab/checkpoint.hpp"
#include "fdlab/eval.hpp"

namespace fdlab {

namespace fs = std::filesystem;

fs::path resolve_data_dir(const fs::path& configured, const fs::path& config_dir) {
  if (!configured.empty()) {
    const fs::path p = configured.is_absolute() ? configured : config_dir / configured;
    return fs::weakly_canonical(p);
  }
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return fs::weakly_canonical(env);
  throw std::invalid_argument(std::string("no data directory: set data.dir in the config or ") + kDataDirEnv);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

TrainResult cmd_train(const TrainCommand& cmd, std::ostream& log) {
  ExperimentConfig cfg = load_config(cmd.config);
  if (cmd.seed) cfg.run.seed = *cmd.seed;
  cfg.data_dir = resolve_data_dir(cfg.data_dir, fs::absolute(cmd.config).parent_path());
  const Corpus corpus = load_corpus(cfg.data_dir, cfg.mode);
  if (cfg.run.model.vocab_size == 0) cfg.run.model.vocab_size = corpus.vocab.size();

  TrainOptions opts;
  opts.out_dir = cmd.out;
  opts.verbose = cmd.verbose;
  if (cmd.resume) {
    Checkpoint ck = load_checkpoint(*cmd.resume);
    if (ck.mode != cfg.mode) throw std::invalid_argument("resume checkpoint was trained in another token mode");
    opts.initial_model = std::move(ck.model);
  }
  fs::create_directories(cmd.out);
  write_text(cmd.out / "resolved_config.ini", render_config(cfg));
  log << "training " << cfg.run.regularizer.describe() << " on " << cfg.data_dir.string() << " (vocab "
      << corpus.vocab.size() << ", " << corpus.train.size() << " train tokens, seed " << cfg.run.seed << ")\n";
  TrainResult r = train(cfg.run, corpus, opts);
  log << "best_val_ppl=" << fmt(r.best_val_ppl) << " epoch=" << r.best_epoch << "\n";
  return r;
}

double cmd_eval(const EvalCommand& cmd, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(cmd.checkpoint);
  const fs::path dir = resolve_data_dir(cmd.data_dir, fs::current_path());
  const Corpus corpus = load_corpus(dir, ck.mode);
  if (corpus.vocab.size() != ck.model.config().vocab_size) {
    throw std::invalid_argument("checkpoint vocabulary (" + std::to_string(ck.model.config().vocab_size) +
                                ") does not match the corpus in " + dir.string() + " (" +
                                std::to_string(corpus.vocab.size()) + ")");
  }
  const std::vector<int>& ids = corpus.split(cmd.split);
  EvalResult r;
  if (cmd.mc == 0) {
    r = perplexity(ck.model, ids, cmd.batch, cmd.bptt);
    out << "split=" << cmd.split << " mode=mask_free tokens=" << r.tokens << " loss=" << fmt(r.mean_ce) << "\n";
  } else {
    McOptions o;
    o.samples = cmd.mc;
    o.seed = cmd.mc_seed;
    o.batch = cmd.batch;
    o.bptt = cmd.bptt;
    r = mc_eval(ck.model, ids, o);
    out << "split=" << cmd.split << " mode=mc" << cmd.mc << " tokens=" << r.tokens << " loss=" << fmt(r.mean_ce)
        << "\n";
  }
  out << "ppl=" << fmt(r.ppl) << "\n";
  return r.ppl;
}

bool GridOutcome::all_succeeded() const {
  for (const GridRunRecord& r : runs)
    if (!r.error.empty()) return false;
  return true;
}

GridOutcome cmd_grid(const GridCommand& cmd, std::ostream& out) {
  const GridSpec grid = load_grid(cmd.config);
  const std::optional<double> baseline = cmd.baseline ? cmd.baseline : grid.baseline;
  const fs::path config_dir = fs::absolute(cmd.config).parent_path();
  fs::create_directories(cmd.out);

  std::vector<ExperimentConfig> configs;
  for (std::size_t i = 0; i < grid.runs; ++i) {
    ExperimentConfig c = grid_run(grid, i);
    c.data_dir = resolve_data_dir(c.data_dir, config_dir);
    configs.push_back(std::move(c));
  }
  // Corpora are immutable, so runs on the same data share one copy.
  std::map<std::pair<std::string, int>, Corpus> corpora;
  for (const ExperimentConfig& c : configs) {
    const auto key = std::make_pair(c.data_dir.string(), static_cast<int>(c.mode));
    if (!corpora.count(key)) corpora.emplace(key, load_corpus(c.data_dir, c.mode));
  }

  GridOutcome outcome;
  outcome.runs.resize(grid.runs);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.runs; i = next++) {
      ExperimentConfig c = configs[i];
      GridRunRecord& rec = outcome.runs[i];
      rec.index = i;
      rec.seed = c.run.seed;
      try {
        const Corpus& corpus = corpora.at({c.data_dir.string(), static_cast<int>(c.mode)});
        if (c.run.model.vocab_size == 0) c.run.model.vocab_size = corpus.vocab.size();
        char name[32];
        std::snprintf(name, sizeof name, "run_%03zu", i);
        const fs::path dir = cmd.out / name;
        fs::create_directories(dir);
        write_text(dir / "resolved_config.ini", render_config(c));
        TrainOptions opts;
        opts.out_dir = dir;
        rec.best_val_ppl = train(c.run, corpus, opts).best_val_ppl;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mutex);
      out << "run " << i << " seed " << rec.seed << ": "
          << (rec.error.empty() ? "best_val_ppl=" + fmt(rec.best_val_ppl) : "failed: " + rec.error) << "\n";
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cmd.parallel, grid.runs));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  std::vector<double> ppls;
  std::ofstream csv(cmd.out / "runs.csv", std::ios::trunc);
  csv << "run,seed,best_val_ppl,error\n";
  for (const GridRunRecord& r : outcome.runs) {
    csv << r.index << ',' << r.seed << ',' << (r.error.empty() ? fmt(r.best_val_ppl) : "") << ",\"" << r.error
        << "\"\n";
    if (r.error.empty()) ppls.push_back(r.best_val_ppl);
  }
  outcome.summary = summarize_grid(ppls, baseline);
  const GridSummary& s = outcome.summary;
  std::ofstream summary(cmd.out / "summary.csv", std::ios::trunc);
  summary << "runs,best,top5_avg,top10_avg,beating_baseline,baseline\n"
          << s.runs << ',' << fmt(s.best) << ',' << fmt(s.top5_mean) << ',' << fmt(s.top10_mean) << ','
          << (s.beating_baseline ? std::to_string(*s.beating_baseline) : "") << ','
          << (baseline ? fmt(*baseline) : "") << "\n";
  out << "\n" << "runs  best        top5_avg    top10_avg   beating_baseline\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-5zu %-11.4f %-11.4f %-11.4f %s\n", s.runs, s.best, s.top5_mean, s.top10_mean,
                s.beating_baseline ? (std::to_string(*s.beating_baseline) + "/" + std::to_string(s.runs)).c_str()
                                   : "n/a (no baseline given)");
  out << line;
  return outcome;
}

}  // namespace fdlab
