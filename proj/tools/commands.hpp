// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/grad_check.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace timepro::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kNumericError = 3,
};

/// Runs one command line (without the program name). Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  Index instances = 0;
  std::size_t entries = 0;
  // Location of the worst entry.
  Index worst_instance = 0;
  std::size_t worst_input = 0;
  Index worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Reverse-mode vs central differences for every differentiable module and the
/// end-to-end loss, over `instances` seeded random draws each.
std::vector<GradSuiteEntry> run_grad_suite(Index instances, std::uint64_t seed,
                                           const GradCheckOptions& options = {1e-3, Stencil::central4, 0});

}  // namespace timepro::cli
