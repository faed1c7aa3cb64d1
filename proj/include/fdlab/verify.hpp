#pragma once

#include <cstdint>
#include <string>

#include "fdlab/oracle.hpp"

namespace fdlab {

struct VerifyOptions {
  std::size_t bits = 12;         ///< mask-bit budget per tiny network
  std::size_t trials = 100;      ///< tiny networks in the population
  std::uint64_t seed = 1;
  std::size_t mc_samples = 100000;
};

struct VerifyReport {
  VerifyOptions options;
  ClaimReport variance_identity;
  ClaimReport eld_bound;
  McReport mc;
  std::string mc_problem;
  double seconds = 0.0;
  bool passed() const { return variance_identity.passed() && eld_bound.passed() && mc.passed; }
};

/// Runs the variance-identity, ELD-bound and Monte-Carlo checks. Throws
/// std::length_error when `bits` exceeds the enumeration budget.
VerifyReport run_verification(const VerifyOptions& options);

std::string to_json(const VerifyReport& report, int indent = 2);

}  // namespace fdlab
