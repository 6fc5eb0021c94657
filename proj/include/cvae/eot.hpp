#ifndef CVAE_EOT_HPP
#define CVAE_EOT_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "cvae/cost.hpp"
#include "cvae/dists.hpp"
#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

/// Finite dual vector over the data points. The semi-dual objective is
/// invariant under u -> u + s, so comparisons should be gauge-fixed.
struct SemiDualPotential {
  std::vector<double> u;
  double epsilon = 1.0;
};

struct DualPotentialPair {
  std::vector<double> u;  // one per data point
  std::vector<double> v;  // one per latent point
  double epsilon = 1.0;
};

/// Coupling between data (rows) and latent points (columns).
struct DiscretePlan {
  Tensor2 pi;
  std::vector<double> mu;
  std::vector<double> nu;
};

/// Prior draws with self-normalized importance weights targeting q(z | x_i).
struct WeightedLatentSample {
  Tensor2 prior_draws;  // raw prior samples (category indices for categorical priors)
  Tensor2 Z;            // decoder-space latent points
  std::vector<double> log_weights;
  std::vector<double> normalized_weights;
  double ess = 0.0;
  bool degenerate = false;  // ess < 2
};

struct SinkhornOptions {
  double epsilon = 1.0;
  double tol = 1e-9;
  std::size_t max_iter = 10000;
};

struct SinkhornResult {
  DiscretePlan plan;
  DualPotentialPair potentials;
  std::size_t iterations = 0;
  double marginal_violation = 0.0;
  bool converged = false;
};

/// Log-domain Sinkhorn on an m x n cost table. The plan is
/// exp((u_i + v_j - c_ij) / eps) * mu_i * nu_j. Stops once the largest
/// marginal violation drops below tol; otherwise returns the last iterate
/// with converged = false. `warm_start`, when given, seeds the potentials.
SinkhornResult sinkhorn(const Tensor2& cost, std::span<const double> mu,
                        std::span<const double> nu, const SinkhornOptions& options,
                        const DualPotentialPair* warm_start = nullptr);
SinkhornResult sinkhorn(const CostMatrix& cost, std::span<const double> mu,
                        std::span<const double> nu, const SinkhornOptions& options,
                        const DualPotentialPair* warm_start = nullptr);

/// <pi, c>
double transport_cost(const DiscretePlan& plan, const Tensor2& cost);
/// <pi, c> + eps * KL(pi || mu x nu)
double entropic_primal_value(const DiscretePlan& plan, const Tensor2& cost, double epsilon);
/// Largest absolute row- or column-marginal error.
double marginal_violation(const DiscretePlan& plan);

/// Soft assignment of one latent point over the data points.
///
/// Writes w_i = mu_i exp((u_i - c_i)/eps) / sum_k mu_k exp((u_k - c_k)/eps)
/// into `weights` and returns the c,eps-transform -eps log sum_i mu_i
/// exp((u_i - c_i)/eps). Every soft-min in the library goes through here.
double soft_assign(std::span<const double> u, std::span<const double> cost_column,
                   std::span<const double> mu, double epsilon, std::span<double> weights);

double c_eps_transform(std::span<const double> u, std::span<const double> cost_column,
                       std::span<const double> mu, double epsilon);

/// Weights of the latent batch: uniform 1/n when `latent_weights` is empty.
std::vector<double> resolve_latent_weights(std::span<const double> latent_weights,
                                           std::size_t n);

/// Streaming semi-dual accumulation, one latent column at a time. The
/// matrix-level functions below are thin loops over this.
class SemidualAccumulator {
 public:
  SemidualAccumulator(std::span<const double> u, std::span<const double> mu, double epsilon);

  /// Adds latent point j with weight nu_j and returns its c,eps-transform.
  /// weights() then holds its soft assignment.
  double add(std::span<const double> cost_column, double nu_j);

  std::span<const double> weights() const { return weights_; }
  /// sum_j nu_j [<mu, u> + u^{c,eps}(z_j)] over the columns added so far.
  double value() const { return value_; }
  /// mu_i - sum_j nu_j w_ij.
  std::vector<double> gradient() const;

 private:
  std::span<const double> u_;
  std::span<const double> mu_;
  double epsilon_;
  double mean_u_;
  double value_ = 0.0;
  std::vector<double> weights_;
  std::vector<double> expected_;
};

/// Semi-dual value sum_j nu_j [<mu, u> + u^{c,eps}(z_j)] on a precomputed cost matrix.
double semidual_value(std::span<const double> u, const CostMatrix& cost,
                      std::span<const double> mu, std::span<const double> latent_weights,
                      double epsilon);

/// d/du of semidual_value: mu_i - sum_j nu_j w_ij. Also returns the c,eps
/// transforms per latent point when `transforms` is non-empty.
std::vector<double> semidual_gradient(std::span<const double> u, const CostMatrix& cost,
                                      std::span<const double> mu,
                                      std::span<const double> latent_weights, double epsilon,
                                      std::span<double> transforms = {});

struct DualValue {
  double value = 0.0;
  bool overflow_risk = false;  // some exponent was clamped at +30
};

/// sum_ij mu_i nu_j [u_i + v_j - eps exp((u_i + v_j - c_ij)/eps)]
DualValue dual_value(std::span<const double> u, std::span<const double> v, const CostMatrix& cost,
                     std::span<const double> mu, std::span<const double> latent_weights,
                     double epsilon);

// Decoder-level entry points. Z_batch holds decoder-space latent points;
// z_weights defaults to uniform Monte Carlo weights.

double semidual_objective(const SemiDualPotential& potential, const Decoder& decoder,
                          const EmpiricalMeasure& data, const Tensor2& Z_batch,
                          std::span<const double> z_weights = {});

std::vector<double> semidual_grad_u(const SemiDualPotential& potential, const Decoder& decoder,
                                    const EmpiricalMeasure& data, const Tensor2& Z_batch,
                                    std::span<const double> z_weights = {});

DualValue dual_objective(const DualPotentialPair& pair, const Decoder& decoder,
                         const EmpiricalMeasure& data, const Tensor2& Z_batch,
                         std::span<const double> z_weights = {});

/// pi(x_i | z): the soft assignment of z over the data. This vector is also
/// the derivative of the semi-dual objective with respect to c(x_i, z).
std::vector<double> conditional_plan_weights(const SemiDualPotential& potential,
                                             const Decoder& decoder, const EmpiricalMeasure& data,
                                             std::span<const double> z);

/// Self-normalized log-weights (u_i + u^{c,eps}(z_j) - c(x_i, z_j)) / eps for
/// data point i, given a cost matrix over the full data set and the
/// transforms of its latent columns.
WeightedLatentSample importance_weights_from_costs(std::span<const double> u, double epsilon,
                                                   std::size_t data_index, const CostMatrix& cost,
                                                   std::span<const double> transforms,
                                                   std::span<const double> extra_log_weights = {});

/// Draws n latent points from the prior and importance-weights them toward
/// q(z | x_i).
WeightedLatentSample posterior_importance_sample(const SemiDualPotential& potential,
                                                 const Decoder& decoder,
                                                 const EmpiricalMeasure& data,
                                                 std::size_t data_index, const Prior& prior,
                                                 std::size_t n, Rng& rng);

/// Exact posterior over the atoms of a categorical prior: every atom once,
/// log-weights include log p_k.
WeightedLatentSample posterior_enumerate(const SemiDualPotential& potential,
                                         const Decoder& decoder, const EmpiricalMeasure& data,
                                         std::size_t data_index, const CategoricalPrior& prior);

/// 1 / sum w^2 for normalized weights.
double effective_sample_size(std::span<const double> normalized_weights);

/// Normalizes log-weights in place into `out` and returns their log-sum-exp.
double normalize_log_weights(std::span<const double> log_weights, std::span<double> out);

}  // namespace cvae

#endif  // CVAE_EOT_HPP
