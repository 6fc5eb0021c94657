#ifndef CVAE_OPTIM_HPP
#define CVAE_OPTIM_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cvae {

/// Bias-corrected Adam. Moment buffers are allocated on the first step to
/// match the parameter layout and must keep that layout afterwards.
struct AdamState {
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  AdamState(double b1, double b2, double eps);
};

/// One Adam update in place. Throws on shape mismatch or non-finite gradients;
/// in either case neither params nor state are modified.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, double lr);

double global_norm(std::span<const std::span<const double>> grads);

/// Rescales grads so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_global_norm(std::span<const std::span<double>> grads, double max_norm);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

/// Compares `analytic` against central differences of `f` around `params`.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> params, std::span<const double> analytic,
                           double h, double tolerance, double abs_floor = 1e-8);

}  // namespace cvae

#endif  // CVAE_OPTIM_HPP
