#include "qotr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "qotr/errors.hpp"

namespace qotr {
namespace {

double evaluate(const ScalarFn& f) {
  Graph<double> g;
  Var<double> out = f(g);
  if (out.numel() != 1) throw ContractError("grad_check function must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check function returned a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>*>& tensors,
                           const GradCheckOptions& opts) {
  if (!(opts.h >= 1e-6 && opts.h <= 1e-4)) {
    throw ContractError("grad_check step h must lie in [1e-6, 1e-4]");
  }
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    Var<double> out = f(g);
    if (out.numel() != 1) throw ContractError("grad_check function must return a scalar");
    if (!std::isfinite(out.value()[0])) {
      throw NumericError("grad_check function returned a non-finite value");
    }
    g.backward(out);
    for (const Tensor<double>* t : tensors) {
      const Tensor<double>* gr = g.grad(*t);
      analytic.push_back(gr ? *gr : Tensor<double>(t->shape(), 0.0));
    }
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor<double>& p = *tensors[k];
    std::vector<std::size_t> elems(p.numel());
    std::iota(elems.begin(), elems.end(), std::size_t{0});
    if (opts.max_elements_per_tensor && elems.size() > opts.max_elements_per_tensor) {
      std::shuffle(elems.begin(), elems.end(), rng);
      elems.resize(opts.max_elements_per_tensor);
    }
    for (std::size_t i : elems) {
      const double saved = p[i];
      p[i] = saved + opts.h;
      const double fp = evaluate(f);
      p[i] = saved - opts.h;
      const double fm = evaluate(f);
      p[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace qotr
