#include "fdlab/verify.hpp"

#include <chrono>
#include <stdexcept>

#include <json.hpp>

namespace fdlab {

VerifyReport run_verification(const VerifyOptions& options) {
  if (options.bits > kMaxEnumerationBits) {
    throw std::length_error("bit budget exceeded: at most " + std::to_string(kMaxEnumerationBits) +
                            " mask bits can be enumerated, " + std::to_string(options.bits) + " requested");
  }
  if (options.bits < 2) throw std::invalid_argument("--bits must be at least 2");
  if (options.trials == 0) throw std::invalid_argument("--trials must be positive");
  if (options.mc_samples < 2) throw std::invalid_argument("--mc-samples must be at least 2");
  const auto t0 = std::chrono::steady_clock::now();
  VerifyReport r;
  r.options = options;
  const std::vector<TinyProblem> population = tiny_population(options.trials, options.seed, options.bits);
  r.variance_identity = check_remark1(population);
  r.eld_bound = check_prop1(population);
  // Rate-0.5 member: the noisiest estimator in the population.
  const TinyProblem& probe = population.size() > 1 ? population[1] : population[0];
  r.mc_problem = probe.describe();
  r.mc = mc_estimator_consistency(probe, options.mc_samples, derive_seed(options.seed, {0x6d63}));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

namespace {

nlohmann::json claim_json(const ClaimReport& c) {
  nlohmann::json j;
  j["claim"] = c.claim;
  j["passed"] = c.passed();
  j["checked"] = c.checked;
  j["worst_abs_deviation"] = c.worst_abs_deviation;
  j["worst_rel_deviation"] = c.worst_rel_deviation;
  j["worst_seed"] = c.worst_seed;
  if (c.claim == "eld_bound") j["max_ratio"] = c.max_ratio;
  if (c.claim == "variance_identity") j["max_enumerator_gap"] = c.max_enumerator_gap;
  j["violations"] = nlohmann::json::array();
  for (const CheckFailure& f : c.violations) {
    j["violations"].push_back({{"seed", f.seed}, {"configuration", f.configuration}, {"lhs", f.lhs}, {"rhs", f.rhs}});
  }
  return j;
}

}  // namespace

std::string to_json(const VerifyReport& r, int indent) {
  nlohmann::json j;
  j["passed"] = r.passed();
  j["bits"] = r.options.bits;
  j["trials"] = r.options.trials;
  j["seed"] = r.options.seed;
  j["variance_identity"] = claim_json(r.variance_identity);
  j["eld_bound"] = claim_json(r.eld_bound);
  j["mc"] = {{"passed", r.mc.passed},       {"samples", r.mc.samples},     {"seed", r.mc.seed},
             {"exact", r.mc.exact},         {"mean", r.mc.mean},           {"std_error", r.mc.std_error},
             {"z", r.mc.z},                 {"problem", r.mc_problem}};
  j["seconds"] = r.seconds;
  return j.dump(indent);
}

}  // namespace fdlab
