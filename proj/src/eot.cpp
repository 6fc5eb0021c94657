#include "cvae/eot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cvae {

namespace {

constexpr double kMaxDualExponent = 30.0;

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("epsilon must be positive and finite");
  }
}

void check_positive_weights(std::span<const double> w, const char* name) {
  for (double v : w) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("sinkhorn: ") + name +
                                  " weights must be strictly positive");
    }
  }
}

// log sum_k exp(values_k) for values laid out with a stride.
template <typename Fn>
double lse_of(std::size_t count, Fn&& term) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) {
    top = std::max(top, term(k));
  }
  if (!std::isfinite(top)) {
    return top;
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    acc += std::exp(term(k) - top);
  }
  return top + std::log(acc);
}

DiscretePlan build_plan(const Tensor2& cost, std::span<const double> mu, std::span<const double> nu,
                        const std::vector<double>& u, const std::vector<double>& v,
                        double epsilon) {
  const std::size_t m = cost.rows();
  const std::size_t n = cost.cols();
  DiscretePlan plan{Tensor2(m, n), {mu.begin(), mu.end()}, {nu.begin(), nu.end()}};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      plan.pi(i, j) = std::exp((u[i] + v[j] - cost(i, j)) / epsilon) * mu[i] * nu[j];
    }
  }
  return plan;
}

}  // namespace

SinkhornResult sinkhorn(const Tensor2& cost, std::span<const double> mu,
                        std::span<const double> nu, const SinkhornOptions& options,
                        const DualPotentialPair* warm_start) {
  const double eps = options.epsilon;
  check_epsilon(eps);
  const std::size_t m = cost.rows();
  const std::size_t n = cost.cols();
  if (mu.size() != m || nu.size() != n || m == 0 || n == 0) {
    throw std::invalid_argument("sinkhorn: marginal lengths do not match the cost table");
  }
  check_positive_weights(mu, "row");
  check_positive_weights(nu, "column");

  std::vector<double> log_mu(m), log_nu(n);
  std::transform(mu.begin(), mu.end(), log_mu.begin(), [](double w) { return std::log(w); });
  std::transform(nu.begin(), nu.end(), log_nu.begin(), [](double w) { return std::log(w); });

  std::vector<double> u(m, 0.0), v(n, 0.0), u_next(m);
  if (warm_start != nullptr && warm_start->u.size() == m && warm_start->v.size() == n) {
    u = warm_start->u;
    v = warm_start->v;
  }

  auto update_v = [&] {
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = -eps * lse_of(m, [&](std::size_t i) { return log_mu[i] + (u[i] - cost(i, j)) / eps; });
    }
  };

  SinkhornResult result;
  update_v();
  std::size_t iter = 0;
  double violation = std::numeric_limits<double>::infinity();
  for (; iter < options.max_iter; ++iter) {
    // Columns are exact after the v-update; the row sums of the current plan
    // follow from the pending u-update: r_i = mu_i exp((u_i - u_next_i) / eps).
    violation = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      u_next[i] =
          -eps * lse_of(n, [&](std::size_t j) { return log_nu[j] + (v[j] - cost(i, j)) / eps; });
      const double row_sum = mu[i] * std::exp((u[i] - u_next[i]) / eps);
      violation = std::max(violation, std::abs(row_sum - mu[i]));
    }
    if (!std::isfinite(violation)) {
      throw std::runtime_error("sinkhorn: non-finite iterate");
    }
    if (violation < options.tol) {
      break;
    }
    u.swap(u_next);
    update_v();
  }
  result.iterations = iter;
  result.converged = violation < options.tol;
  result.plan = build_plan(cost, mu, nu, u, v, eps);
  result.marginal_violation = marginal_violation(result.plan);
  result.potentials = DualPotentialPair{std::move(u), std::move(v), eps};
  return result;
}

SinkhornResult sinkhorn(const CostMatrix& cost, std::span<const double> mu,
                        std::span<const double> nu, const SinkhornOptions& options,
                        const DualPotentialPair* warm_start) {
  return sinkhorn(cost.values(), mu, nu, options, warm_start);
}

double transport_cost(const DiscretePlan& plan, const Tensor2& cost) {
  if (plan.pi.rows() != cost.rows() || plan.pi.cols() != cost.cols()) {
    throw std::invalid_argument("transport_cost: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < cost.size(); ++k) {
    total += plan.pi.flat()[k] * cost.flat()[k];
  }
  return total;
}

double entropic_primal_value(const DiscretePlan& plan, const Tensor2& cost, double epsilon) {
  double kl = 0.0;
  for (std::size_t i = 0; i < plan.pi.rows(); ++i) {
    for (std::size_t j = 0; j < plan.pi.cols(); ++j) {
      const double p = plan.pi(i, j);
      if (p > 0.0) {
        kl += p * std::log(p / (plan.mu[i] * plan.nu[j]));
      }
    }
  }
  // Normalization terms of KL between unnormalized measures vanish when pi
  // has unit mass; keep them so the value is exact for approximate plans.
  double mass = 0.0;
  for (double p : plan.pi.flat()) {
    mass += p;
  }
  kl += 1.0 - mass;
  return transport_cost(plan, cost) + epsilon * kl;
}

double marginal_violation(const DiscretePlan& plan) {
  const std::size_t m = plan.pi.rows();
  const std::size_t n = plan.pi.cols();
  std::vector<double> rows(m, 0.0), cols(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      rows[i] += plan.pi(i, j);
      cols[j] += plan.pi(i, j);
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    worst = std::max(worst, std::abs(rows[i] - plan.mu[i]));
  }
  for (std::size_t j = 0; j < n; ++j) {
    worst = std::max(worst, std::abs(cols[j] - plan.nu[j]));
  }
  return worst;
}

double soft_assign(std::span<const double> u, std::span<const double> cost_column,
                   std::span<const double> mu, double epsilon, std::span<double> weights) {
  const std::size_t m = u.size();
  if (cost_column.size() != m || mu.size() != m || weights.size() != m) {
    throw std::invalid_argument("soft_assign: length mismatch");
  }
  const double inv_eps = 1.0 / epsilon;
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    const double a = (u[i] - cost_column[i]) * inv_eps;
    weights[i] = a;
    if (mu[i] > 0.0 && a > top) {
      top = a;
    }
  }
  if (!std::isfinite(top)) {
    throw std::runtime_error("soft_assign: no finite term");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = mu[i] > 0.0 ? mu[i] * std::exp(weights[i] - top) : 0.0;
    weights[i] = w;
    total += w;
  }
  const double inv_total = 1.0 / total;
  for (std::size_t i = 0; i < m; ++i) {
    weights[i] *= inv_total;
  }
  return -epsilon * (top + std::log(total));
}

double c_eps_transform(std::span<const double> u, std::span<const double> cost_column,
                       std::span<const double> mu, double epsilon) {
  check_epsilon(epsilon);
  std::vector<double> scratch(u.size());
  return soft_assign(u, cost_column, mu, epsilon, scratch);
}

std::vector<double> resolve_latent_weights(std::span<const double> latent_weights,
                                           std::size_t n) {
  if (latent_weights.empty()) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
  }
  if (latent_weights.size() != n) {
    throw std::invalid_argument("latent weights do not match the latent batch");
  }
  return {latent_weights.begin(), latent_weights.end()};
}

namespace {

void check_semidual_inputs(std::span<const double> u, const CostMatrix& cost,
                           std::span<const double> mu, double epsilon) {
  check_epsilon(epsilon);
  if (u.size() != cost.num_data() || mu.size() != cost.num_data()) {
    throw std::invalid_argument("potential length does not match the data");
  }
  if (cost.num_latent() == 0) {
    throw std::invalid_argument("empty latent batch");
  }
}

}  // namespace

SemidualAccumulator::SemidualAccumulator(std::span<const double> u, std::span<const double> mu,
                                         double epsilon)
    : u_(u),
      mu_(mu),
      epsilon_(epsilon),
      mean_u_(dot(mu, u)),
      weights_(u.size()),
      expected_(u.size(), 0.0) {
  check_epsilon(epsilon);
  if (u.size() != mu.size()) {
    throw std::invalid_argument("potential length does not match the data");
  }
}

double SemidualAccumulator::add(std::span<const double> cost_column, double nu_j) {
  const double t = soft_assign(u_, cost_column, mu_, epsilon_, weights_);
  value_ += nu_j * (mean_u_ + t);
  for (std::size_t i = 0; i < expected_.size(); ++i) {
    expected_[i] += nu_j * weights_[i];
  }
  return t;
}

std::vector<double> SemidualAccumulator::gradient() const {
  std::vector<double> grad(mu_.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] = mu_[i] - expected_[i];
  }
  return grad;
}

double semidual_value(std::span<const double> u, const CostMatrix& cost,
                      std::span<const double> mu, std::span<const double> latent_weights,
                      double epsilon) {
  check_semidual_inputs(u, cost, mu, epsilon);
  const auto nu = resolve_latent_weights(latent_weights, cost.num_latent());
  SemidualAccumulator acc(u, mu, epsilon);
  for (std::size_t j = 0; j < cost.num_latent(); ++j) {
    acc.add(cost.column(j), nu[j]);
  }
  return acc.value();
}

std::vector<double> semidual_gradient(std::span<const double> u, const CostMatrix& cost,
                                      std::span<const double> mu,
                                      std::span<const double> latent_weights, double epsilon,
                                      std::span<double> transforms) {
  check_semidual_inputs(u, cost, mu, epsilon);
  const auto nu = resolve_latent_weights(latent_weights, cost.num_latent());
  if (!transforms.empty() && transforms.size() != cost.num_latent()) {
    throw std::invalid_argument("semidual_gradient: transforms buffer has wrong length");
  }
  SemidualAccumulator acc(u, mu, epsilon);
  for (std::size_t j = 0; j < cost.num_latent(); ++j) {
    const double t = acc.add(cost.column(j), nu[j]);
    if (!transforms.empty()) {
      transforms[j] = t;
    }
  }
  return acc.gradient();
}

DualValue dual_value(std::span<const double> u, std::span<const double> v, const CostMatrix& cost,
                     std::span<const double> mu, std::span<const double> latent_weights,
                     double epsilon) {
  check_semidual_inputs(u, cost, mu, epsilon);
  if (v.size() != cost.num_latent()) {
    throw std::invalid_argument("dual_value: v length does not match the latent batch");
  }
  const auto nu = resolve_latent_weights(latent_weights, cost.num_latent());
  DualValue result;
  double total = 0.0;
  for (std::size_t j = 0; j < cost.num_latent(); ++j) {
    const auto col = cost.column(j);
    double inner = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      double exponent = (u[i] + v[j] - col[i]) / epsilon;
      if (exponent > kMaxDualExponent) {
        exponent = kMaxDualExponent;
        result.overflow_risk = true;
      }
      inner += mu[i] * (u[i] + v[j] - epsilon * std::exp(exponent));
    }
    total += nu[j] * inner;
  }
  result.value = total;
  return result;
}

double semidual_objective(const SemiDualPotential& potential, const Decoder& decoder,
                          const EmpiricalMeasure& data, const Tensor2& Z_batch,
                          std::span<const double> z_weights) {
  const CostMatrix cost = cost_matrix(decoder, data, Z_batch);
  return semidual_value(potential.u, cost, data.weights, z_weights, potential.epsilon);
}

std::vector<double> semidual_grad_u(const SemiDualPotential& potential, const Decoder& decoder,
                                    const EmpiricalMeasure& data, const Tensor2& Z_batch,
                                    std::span<const double> z_weights) {
  const CostMatrix cost = cost_matrix(decoder, data, Z_batch);
  return semidual_gradient(potential.u, cost, data.weights, z_weights, potential.epsilon);
}

DualValue dual_objective(const DualPotentialPair& pair, const Decoder& decoder,
                         const EmpiricalMeasure& data, const Tensor2& Z_batch,
                         std::span<const double> z_weights) {
  const CostMatrix cost = cost_matrix(decoder, data, Z_batch);
  return dual_value(pair.u, pair.v, cost, data.weights, z_weights, pair.epsilon);
}

std::vector<double> conditional_plan_weights(const SemiDualPotential& potential,
                                             const Decoder& decoder, const EmpiricalMeasure& data,
                                             std::span<const double> z) {
  check_epsilon(potential.epsilon);
  Tensor2 zt(1, z.size(), std::vector<double>(z.begin(), z.end()));
  const CostMatrix cost = cost_matrix(decoder, data, zt);
  if (potential.u.size() != data.size()) {
    throw std::invalid_argument("potential length does not match the data");
  }
  std::vector<double> w(data.size());
  soft_assign(potential.u, cost.column(0), data.weights, potential.epsilon, w);
  return w;
}

double normalize_log_weights(std::span<const double> log_weights, std::span<double> out) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) {
    throw std::runtime_error("importance weights are all zero or non-finite");
  }
  for (std::size_t j = 0; j < log_weights.size(); ++j) {
    out[j] = std::exp(log_weights[j] - lse);
  }
  return lse;
}

double effective_sample_size(std::span<const double> normalized_weights) {
  double sq = 0.0;
  for (double w : normalized_weights) {
    sq += w * w;
  }
  return 1.0 / sq;
}

WeightedLatentSample importance_weights_from_costs(std::span<const double> u, double epsilon,
                                                   std::size_t data_index, const CostMatrix& cost,
                                                   std::span<const double> transforms,
                                                   std::span<const double> extra_log_weights) {
  check_epsilon(epsilon);
  if (data_index >= cost.num_data() || data_index >= u.size()) {
    throw std::out_of_range("importance weights: data index out of range");
  }
  const std::size_t n = cost.num_latent();
  if (transforms.size() != n || (!extra_log_weights.empty() && extra_log_weights.size() != n)) {
    throw std::invalid_argument("importance weights: batch length mismatch");
  }
  WeightedLatentSample s;
  s.log_weights.resize(n);
  s.normalized_weights.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    s.log_weights[j] = (u[data_index] + transforms[j] - cost(data_index, j)) / epsilon;
    if (!extra_log_weights.empty()) {
      s.log_weights[j] += extra_log_weights[j];
    }
  }
  normalize_log_weights(s.log_weights, s.normalized_weights);
  s.ess = effective_sample_size(s.normalized_weights);
  s.degenerate = s.ess < 2.0;
  return s;
}

namespace {

WeightedLatentSample weigh_draws(const SemiDualPotential& potential, const Decoder& decoder,
                                 const EmpiricalMeasure& data, std::size_t data_index,
                                 Tensor2 draws, Tensor2 Z,
                                 std::span<const double> extra_log_weights) {
  if (potential.u.size() != data.size()) {
    throw std::invalid_argument("potential length does not match the data");
  }
  const CostMatrix cost = cost_matrix(decoder, data, Z);
  std::vector<double> transforms(Z.rows());
  std::vector<double> scratch(data.size());
  for (std::size_t j = 0; j < Z.rows(); ++j) {
    transforms[j] =
        soft_assign(potential.u, cost.column(j), data.weights, potential.epsilon, scratch);
  }
  WeightedLatentSample s = importance_weights_from_costs(
      potential.u, potential.epsilon, data_index, cost, transforms, extra_log_weights);
  s.prior_draws = std::move(draws);
  s.Z = std::move(Z);
  return s;
}

}  // namespace

WeightedLatentSample posterior_importance_sample(const SemiDualPotential& potential,
                                                 const Decoder& decoder,
                                                 const EmpiricalMeasure& data,
                                                 std::size_t data_index, const Prior& prior,
                                                 std::size_t n, Rng& rng) {
  if (data_index >= data.size()) {
    throw std::out_of_range("posterior_importance_sample: data index out of range");
  }
  if (n == 0) {
    throw std::invalid_argument("posterior_importance_sample: n must be at least 1");
  }
  check_epsilon(potential.epsilon);
  Tensor2 draws = prior_sample(prior, n, rng);
  Tensor2 Z = decoder_inputs(prior, draws);
  return weigh_draws(potential, decoder, data, data_index, std::move(draws), std::move(Z), {});
}

WeightedLatentSample posterior_enumerate(const SemiDualPotential& potential,
                                         const Decoder& decoder, const EmpiricalMeasure& data,
                                         std::size_t data_index, const CategoricalPrior& prior) {
  if (data_index >= data.size()) {
    throw std::out_of_range("posterior_enumerate: data index out of range");
  }
  check_epsilon(potential.epsilon);
  const std::size_t k = prior.num_categories();
  Tensor2 draws(k, 1);
  std::vector<double> log_prior(k);
  for (std::size_t c = 0; c < k; ++c) {
    draws(c, 0) = static_cast<double>(c);
    log_prior[c] = prior.probs[c] > 0.0 ? std::log(prior.probs[c])
                                        : -std::numeric_limits<double>::infinity();
  }
  return weigh_draws(potential, decoder, data, data_index, std::move(draws), prior.atoms,
                     log_prior);
}

}  // namespace cvae
