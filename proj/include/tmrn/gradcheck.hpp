#ifndef TMRN_GRADCHECK_HPP
#define TMRN_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "tmrn/graph.hpp"

namespace tmrn {

/// Builds a scalar expression from leaf vars (one per input tensor).
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckResult {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;  // index of the input tensor holding the worst element
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

namespace detail {
inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  Var out = f(g, vars);
  if (out.value().size() != 1)
    throw DimError("finite_diff_check: f must be scalar-valued, got " +
                   shape_to_string(out.value().shape()));
  return out.value().at(0);
}
}  // namespace detail

/// Compares reverse-mode gradients of f against central finite differences,
/// element by element, over every input tensor. Relative error uses
/// |a - n| / max(|a|, |n|, floor); the floor absorbs finite-difference noise
/// around zero gradients.
///
/// f must be deterministic; this is checked by evaluating it twice and
/// requiring bit-identical values. step == 0 is rejected.
inline GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor> inputs,
                                         double step, double rtol, double floor = 1e-6) {
  if (step <= 0.0) throw ValueError("finite_diff_check: step must be positive");
  if (inputs.empty()) throw ValueError("finite_diff_check: no inputs");

  const double v0 = detail::eval_scalar(f, inputs);
  const double v1 = detail::eval_scalar(f, inputs);
  if (v0 != v1) throw ValueError("finite_diff_check: f is not deterministic");

  // Analytic gradients in one reverse pass.
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(g.input(t, true));
    Var out = f(g, vars);
    g.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = vars[i].grad();
      if (analytic[i].empty()) analytic[i].assign(inputs[i].size(), 0.0);
    }
  }

  GradCheckResult r;
  r.pass = true;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double orig = inputs[i].at(e);
      inputs[i].at(e) = orig + step;
      const double fp = detail::eval_scalar(f, inputs);
      inputs[i].at(e) = orig - step;
      const double fm = detail::eval_scalar(f, inputs);
      inputs[i].at(e) = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i][e];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst_input = i;
        r.worst_element = e;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
    }
  }
  r.pass = r.max_rel_err <= rtol;
  return r;
}

}  // namespace tmrn

#endif  // TMRN_GRADCHECK_HPP
