#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vickd/tensor.hpp"

namespace vickd {

template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};

template <typename Real>
using ParamList = std::vector<NamedParam<Real>>;

template <typename Real>
std::int64_t param_count(const ParamList<Real>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename Real>
void zero_grads(ParamList<Real>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <typename Real>
void set_requires_grad(ParamList<Real>& params, bool b) {
  for (auto& p : params) p.tensor.set_requires_grad(b);
}

// Linear learning-rate decay; exact at both endpoints.
struct LrSchedule {
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::int64_t total_steps = 1;

  double operator()(std::int64_t step) const {
    if (step >= total_steps) return lr_end;
    if (step <= 0) return lr_start;
    const double f = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_start + (lr_end - lr_start) * f;
  }
};

// Adam with bias correction. Moment buffers are kept in step order with the
// parameter list; the list must not change between steps.
template <typename Real>
struct AdamState {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  std::int64_t step = 0;
  std::vector<std::vector<Real>> m, v;

  void init(const ParamList<Real>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), Real(0));
      v.emplace_back(p.tensor.numel(), Real(0));
    }
    step = 0;
  }
};

template <typename Real>
void adam_step(ParamList<Real>& params, AdamState<Real>& st, Real lr) {
  if (st.m.size() != params.size())
    throw std::runtime_error("adam_step: state not initialized for this parameter list");
  st.step += 1;
  const Real bc1 = Real(1) - std::pow(st.beta1, Real(st.step));
  const Real bc2 = Real(1) - std::pow(st.beta2, Real(st.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = params[pi].tensor;
    const std::int64_t n = t.numel();
    if (static_cast<std::int64_t>(st.m[pi].size()) != n)
      throw std::runtime_error("adam_step: moment shape mismatch for " + params[pi].name);
    if (t.grad().empty()) continue;  // no gradient accumulated: leave untouched
    Real* w = t.value().data();
    const Real* g = t.grad().data();
    Real* m = st.m[pi].data();
    Real* v = st.v[pi].data();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = st.beta1 * m[i] + (Real(1) - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (Real(1) - st.beta2) * g[i] * g[i];
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace vickd
