// Python module fdlab._fdlab: training, evaluation, verification and a few
// numeric building blocks.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fdlab/commands.hpp"
#include "fdlab/config.hpp"
#include "fdlab/error.hpp"
#include "fdlab/masks.hpp"
#include "fdlab/oracle.hpp"
#include "fdlab/regularizers.hpp"
#include "fdlab/runtime.hpp"
#include "fdlab/verify.hpp"

namespace py = pybind11;
using namespace fdlab;

namespace {

py::dict train_py(const std::filesystem::path& config, const std::filesystem::path& out,
                  std::optional<std::uint64_t> seed) {
  TrainCommand cmd;
  cmd.config = config;
  cmd.out = out;
  cmd.seed = seed;
  std::ostringstream log;
  TrainResult r;
  {
    py::gil_scoped_release release;
    r = cmd_train(cmd, log);
  }
  py::dict d;
  d["best_val_ppl"] = r.best_val_ppl;
  d["best_epoch"] = r.best_epoch;
  d["val_ppl"] = r.val_ppl;
  d["train_act_norm"] = r.train_act_norm;
  d["steps"] = r.steps;
  d["averaging"] = r.optimizer.averaging;
  return d;
}

double eval_py(const std::filesystem::path& checkpoint, const std::filesystem::path& data, const std::string& split,
               std::size_t mc, std::uint64_t mc_seed, std::size_t batch, std::size_t bptt) {
  EvalCommand cmd;
  cmd.checkpoint = checkpoint;
  cmd.data_dir = data;
  cmd.split = split;
  cmd.mc = mc;
  cmd.mc_seed = mc_seed;
  cmd.batch = batch;
  cmd.bptt = bptt;
  std::ostringstream sink;
  py::gil_scoped_release release;
  return cmd_eval(cmd, sink);
}

std::string verify_py(std::size_t bits, std::size_t trials, std::uint64_t seed, std::size_t mc_samples) {
  VerifyOptions o;
  o.bits = bits;
  o.trials = trials;
  o.seed = seed;
  o.mc_samples = mc_samples;
  py::gil_scoped_release release;
  return to_json(run_verification(o));
}

double r_fd_py(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("r_fd: vectors differ in length");
  Tape tape;
  tape.set_grad_enabled(false);
  return r_fd(tape.constant(Tensor({a.size()}, a)), tape.constant(Tensor({b.size()}, b))).value().item();
}

py::dict tiny_expectations_py(std::uint64_t seed, std::size_t max_bits, double rate, const std::string& granularity) {
  const TinyProblem p = random_tiny_problem(seed, max_bits, rate, granularity_from_string(granularity));
  const Expectations e = exact_expectations(p);
  py::dict d;
  d["bits"] = mask_bits(p);
  d["outcomes"] = e.outcomes;
  d["e_pair_sq_dist"] = e.e_pair_sq_dist;
  d["two_sum_var"] = e.two_sum_var();
  d["r_eld_tilde"] = e.r_eld_tilde;
  d["problem"] = p.describe();
  return d;
}

std::vector<double> sample_mask_py(double rate, std::size_t n, std::uint64_t seed) {
  DropScheme s;
  s.rate = rate;
  const Tensor m = sample(s, {n}, seed);
  return {m.data().begin(), m.data().end()};
}

}  // namespace

PYBIND11_MODULE(_fdlab, m) {
  tune_allocator();
  m.doc() = "Fraternal dropout language-model lab";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("train", &train_py, py::arg("config"), py::arg("out"), py::arg("seed") = std::nullopt,
        "Train from an INI config into `out`; returns a summary dict.");
  m.def("evaluate", &eval_py, py::arg("checkpoint"), py::arg("data"), py::arg("split") = "valid",
        py::arg("mc") = 0, py::arg("mc_seed") = 1, py::arg("batch") = 10, py::arg("bptt") = 35,
        "Perplexity of a checkpoint; mc > 0 uses sequence averaging over that many mask draws.");
  m.def("verify_json", &verify_py, py::arg("bits") = 12, py::arg("trials") = 100, py::arg("seed") = 1,
        py::arg("mc_samples") = 100000, "Enumeration checks on tiny networks, as a JSON string.");
  m.def("render_config", [](const std::filesystem::path& p) { return render_config(load_config(p)); },
        py::arg("path"), "Fully resolved config as INI text.");
  m.def("r_fd", &r_fd_py, py::arg("p_i"), py::arg("p_j"), "Squared distance between two prediction vectors.");
  m.def("tiny_expectations", &tiny_expectations_py, py::arg("seed"), py::arg("max_bits") = 12,
        py::arg("rate") = 0.5, py::arg("granularity") = "per_step",
        "Exact mask expectations of a random tiny network.");
  m.def("sample_mask", &sample_mask_py, py::arg("rate"), py::arg("n"), py::arg("seed"),
        "Inverted-dropout mask of n entries.");
}
