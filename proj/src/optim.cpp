#include "cvae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cvae {

AdamState::AdamState(double b1, double b2, double eps) : beta1(b1), beta2(b2), eps_adam(eps) {
  if (!(b1 > 0.0 && b1 < 1.0) || !(b2 > 0.0 && b2 < 1.0) || !(eps > 0.0)) {
    throw std::invalid_argument("AdamState: betas must lie in (0, 1) and eps must be positive");
  }
}

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) {
      throw std::invalid_argument("adam_step: shape mismatch in block " + std::to_string(k));
    }
    if (!std::all_of(grads[k].begin(), grads[k].end(), [](double g) { return std::isfinite(g); })) {
      throw std::invalid_argument("adam_step: non-finite gradient in block " + std::to_string(k));
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: moment buffers do not match parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k].size()) {
      throw std::invalid_argument("adam_step: moment buffers do not match parameters");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m1 = state.first_moment[k];
    auto& m2 = state.second_moment[k];
    auto p = params[k];
    const auto g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m1[i] = state.beta1 * m1[i] + (1.0 - state.beta1) * g[i];
      m2[i] = state.beta2 * m2[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m1[i] / correction1;
      const double v_hat = m2[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps_adam);
    }
  }
}

double global_norm(std::span<const std::span<const double>> grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) {
      sq += v * v;
    }
  }
  return std::sqrt(sq);
}

double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  std::vector<std::span<const double>> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (double& v : g) {
        v *= scale;
      }
    }
  }
  return norm;
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> params, std::span<const double> analytic,
                           double h, double tolerance, double abs_floor) {
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: gradient length differs from parameter length");
  }
  std::vector<double> probe(params.begin(), params.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("grad_check: non-finite evaluation at coordinate " +
                               std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > report.max_rel_error || i == 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace cvae
