#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hseg/tensor.hpp"

namespace hseg {

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0.0;
  std::map<std::string, double> per_parameter;
  bool passed = false;
};

// Finite-difference step. 64-bit mode uses the 1e-4 contract step; 32-bit mode
// widens it because float-rounded function values through a 1e-4 step leave
// ~1e-3 quantisation noise in the slope.
template <class Real>
constexpr double fd_step() {
  return sizeof(Real) == sizeof(double) ? 1e-4 : 1e-2;
}

// One named tensor to perturb: value slot plus where its analytic gradient
// lands after backward().
template <class Real>
struct GradSlot {
  std::string name;
  Tensor<Real>* value = nullptr;
  Tensor<Real>* grad = nullptr;
};

// Compares analytic gradients against central finite differences of a scalar
// objective. forward() must be a pure function of the slot values; backward()
// must populate every slot's grad for the current values. Accumulation is in
// 64-bit regardless of Real.
template <class Real>
GradCheckReport grad_check(const std::string& op_name, std::vector<GradSlot<Real>> slots,
                           const std::function<double()>& forward,
                           const std::function<void()>& backward, double tol,
                           double step = fd_step<Real>(), size_t max_per_slot = 0) {
  GradCheckReport report;
  report.op_name = op_name;

  forward();
  backward();
  std::vector<Tensor<double>> analytic;
  analytic.reserve(slots.size());
  for (auto& s : slots) analytic.push_back(s.grad->template cast<double>());

  for (size_t si = 0; si < slots.size(); ++si) {
    auto& slot = slots[si];
    const size_t count = slot.value->v.size();
    // deterministic strided subsample when a cap is set (whole-model checks)
    const size_t checks =
        max_per_slot > 0 ? std::min(count, max_per_slot) : count;
    double worst = 0.0;
    for (size_t q = 0; q < checks; ++q) {
      const size_t i = checks == count ? q : q * count / checks;
      const Real saved = slot.value->v[i];
      auto slope_at = [&](double h) {
        slot.value->v[i] = static_cast<Real>(static_cast<double>(saved) + h);
        const double f_plus = forward();
        slot.value->v[i] = static_cast<Real>(static_cast<double>(saved) - h);
        const double f_minus = forward();
        slot.value->v[i] = saved;
        return (f_plus - f_minus) / (2.0 * h);
      };
      // Richardson refinement of the central difference kills the O(h^2)
      // truncation term that curved composites would otherwise leave.
      const double d1 = slope_at(step);
      const double d2 = slope_at(step / 2.0);
      const double fd = (4.0 * d2 - d1) / 3.0;
      const double an = analytic[si].v[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
    report.per_parameter[slot.name] = worst;
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace hseg
