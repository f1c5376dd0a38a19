#include "hypercut/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hypercut::diff {

namespace {

struct Target {
  std::string name;
  BasicTensor<double>* values;  // perturbed in place
  std::string input_name;       // non-empty for graph inputs
};

}  // namespace

GradcheckReport gradcheck(BasicGraph<double>& graph, Var loss,
                          const std::map<std::string, BasicTensor<double>>& inputs, double tolerance,
                          const GradcheckOptions& options) {
  std::map<std::string, BasicTensor<double>> bound = inputs;
  for (auto* p : graph.parameters()) {
    if (p->trainable) {
      p->grad.resize(p->value.shape());
      p->grad.fill(0.0);
    }
  }
  graph.evaluate(bound);
  graph.backward(loss);

  std::vector<Target> targets;
  std::vector<BasicTensor<double>> analytic;
  for (auto* p : graph.parameters()) {
    if (!p->trainable) continue;
    targets.push_back({p->name, &p->value, {}});
    analytic.push_back(p->grad);
  }
  if (options.include_inputs) {
    for (auto& [name, tensor] : bound) {
      const Var v = graph.find_input(name);
      if (!graph.requires_grad(v)) continue;
      targets.push_back({"input:" + name, &tensor, name});
      analytic.push_back(graph.grad(v));
    }
  }

  auto eval_loss = [&]() {
    graph.evaluate(bound);
    return graph.value(loss).item();
  };

  GradcheckReport report;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Target& target = targets[t];
    BasicTensor<double>& values = *target.values;
    const std::size_t n = values.size();
    const std::size_t stride =
        options.max_elements == 0 || n <= options.max_elements ? 1 : (n + options.max_elements - 1) / options.max_elements;

    std::vector<std::size_t> idx;
    std::vector<double> numeric;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + options.epsilon;
      const double up = eval_loss();
      values[i] = saved - options.epsilon;
      const double down = eval_loss();
      values[i] = saved;
      idx.push_back(i);
      numeric.push_back((up - down) / (2.0 * options.epsilon));
    }

    double scale = 0.0;
    for (double g : numeric) scale = std::max(scale, std::abs(g));
    const double floor = std::max(1e-3 * scale, 1e-12);

    GradcheckEntry entry;
    entry.name = target.name;
    entry.checked = idx.size();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double a = analytic[t][idx[j]];
      const double err = std::abs(a - numeric[j]);
      const double denom = std::max({std::abs(a), std::abs(numeric[j]), floor});
      entry.max_abs_error = std::max(entry.max_abs_error, err);
      entry.max_rel_error = std::max(entry.max_rel_error, err / denom);
    }
    entry.passed = entry.max_rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  // Leave the graph evaluated at the unperturbed point.
  eval_loss();
  return report;
}

}  // namespace hypercut::diff
