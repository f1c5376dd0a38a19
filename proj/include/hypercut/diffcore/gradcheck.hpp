#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "hypercut/diffcore/graph.hpp"

namespace hypercut::diff {

struct GradcheckOptions {
  double epsilon = 1e-3;
  /// Checks at most this many elements per tensor (evenly strided); 0 = all.
  std::size_t max_elements = 0;
  /// Also check inputs declared with requires_grad.
  bool include_inputs = true;
};

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares reverse-mode gradients of a scalar `loss` against central finite
/// differences, both evaluated in double precision. The relative error of an
/// element is |analytic - numeric| / max(|analytic|, |numeric|, floor), where
/// floor is 1e-3 of the largest numeric gradient magnitude in that tensor.
GradcheckReport gradcheck(BasicGraph<double>& graph, Var loss,
                          const std::map<std::string, BasicTensor<double>>& inputs, double tolerance,
                          const GradcheckOptions& options = {});

}  // namespace hypercut::diff
