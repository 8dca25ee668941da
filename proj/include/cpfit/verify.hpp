#pragma once

// Desk-scale self-check: every structured formula is compared against its
// dense counterpart on seeded random instances, and the worst error per
// identity is reported.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cpfit {

struct VerifyOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  /// Negative control: the structured side sees a slightly perturbed factor,
  /// so every identity must fail.
  bool perturb = false;
};

struct VerifyCheck {
  std::string name;
  std::string description;
  double max_error = 0.0;
  double threshold = 0.0;
  std::size_t cases = 0;
  [[nodiscard]] bool pass() const { return cases > 0 && max_error <= threshold; }
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  [[nodiscard]] bool all_pass() const;
};

VerifyReport run_verify(const VerifyOptions& opts);

void print_report(std::ostream& out, const VerifyReport& report);

}  // namespace cpfit
