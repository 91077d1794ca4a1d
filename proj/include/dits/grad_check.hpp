#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dits/tensor.hpp"

namespace dits {

/// Per-parameter comparison between analytic gradients and central
/// differences. Relative error uses max(|a|, |b|, kAbsFloor) in the
/// denominator.
struct GradReport {
  static constexpr double kAbsFloor = 1e-8;

  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };

  std::vector<Entry> params;
  double max_rel_err = 0.0;
};

struct ParamRef {
  std::string name;
  Tensor* value;
};

/// Checks d(eval)/d(param) for every listed parameter against central
/// differences (f(p+h) - f(p-h)) / 2h.
///
/// Contract for `eval`: when called with a graph, it must route each listed
/// parameter through graph->leaf(...) and return the scalar loss; when
/// called with nullptr it evaluates the loss from the current parameter
/// values with no recording. Parameters are perturbed in place and restored.
inline GradReport grad_check(
    const std::vector<ParamRef>& params,
    const std::function<Tensor(Graph*)>& eval, double step = 1e-5) {
  GradReport report;

  Graph g;
  Tensor loss = eval(&g);
  if (loss.size() != 1)
    throw Error("grad_check: eval must produce a scalar loss, got shape " +
                shape_str(loss.shape()));
  g.backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(g.grad_of(*p.value));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    GradReport::Entry entry;
    entry.name = p.name;
    double* data = p.value->data();
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double fp = eval(nullptr).values()[0];
      data[i] = saved - step;
      const double fm = eval(nullptr).values()[0];
      data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw Error("grad_check: non-finite loss while perturbing parameter '" +
                    p.name + "' element " + std::to_string(i));
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi].data()[i];
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), GradReport::kAbsFloor});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dits
