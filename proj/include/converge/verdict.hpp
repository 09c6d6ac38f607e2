#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "converge/matrix_kit.hpp"

namespace converge {

enum class VerdictStatus { Certified, Falsified, Inconclusive };

const char* to_string(VerdictStatus s);

struct Witness {
  Vec xi1;
  Vec xi2;
  long long k0 = 0;
  long long k = 0;
  double observed = 0.0;
  double allowed = 0.0;
};

// Outcome of a sampling or grid check. Certified results always carry a
// scope ("on-grid" / "on-samples"): they are evidence over the checked set,
// never a global proof.
struct Verdict {
  VerdictStatus status = VerdictStatus::Inconclusive;
  std::optional<Witness> witness;
  std::map<std::string, double> constants;
  std::size_t samples_used = 0;
  std::string scope;
  std::vector<std::string> notes;
};

}  // namespace converge
