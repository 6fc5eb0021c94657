#ifndef CVAE_EVAL_HPP
#define CVAE_EVAL_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvae/dists.hpp"
#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"
#include "cvae/train.hpp"

namespace cvae {

struct MixtureMetrics {
  double high_density_ratio = 0.0;
  double std_within_modes = 0.0;
  std::vector<std::size_t> samples_assigned;  // nearest mean per sample
};

/// Nearest-mean assignment; a sample counts as high density when its
/// Euclidean distance to that mean is at most k * sigma.
/// std_within_modes = sqrt(sum ||x - mean||^2 / (N d)).
MixtureMetrics high_density_ratio(const Tensor2& samples, const Tensor2& means, double sigma,
                                  double k = 4.0);

struct MmdEstimate {
  double value = 0.0;  // unbiased MMD^2
  double bandwidth = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

/// Median Euclidean distance over all distinct pairs of the pooled rows.
double median_pairwise_distance(const Tensor2& a, const Tensor2& b);

/// Unbiased MMD^2 with kernel exp(-|a-b|^2 / (2 h^2)); h defaults to the
/// median pairwise distance of A and B pooled.
MmdEstimate mmd_rbf(const Tensor2& a, const Tensor2& b,
                    std::optional<double> bandwidth = std::nullopt);

struct AggregateOptions {
  /// Prior draws shared by the posteriors of several data points.
  std::size_t pool_size = 1024;
  /// Aggregate draws taken from one pool before it is redrawn.
  std::size_t draws_per_pool = 128;
};

struct AggregateSample {
  Tensor2 Z;  // decoder-space latent points
  double ess_min = 0.0;
  std::size_t degenerate = 0;  // draws whose weights had ESS < 2
};

/// Ancestral sampling of q(z|x) p_D(x): pick x_i from the data weights, then
/// one z by resampling the self-normalized posterior weights of a prior pool.
/// Categorical priors enumerate the atoms exactly; models with an encoder
/// sample the encoder instead.
AggregateSample aggregate_posterior_sample(const TrainedModel& model, const EmpiricalMeasure& data,
                                           std::size_t n, Rng& rng,
                                           const AggregateOptions& options = {});

struct LatentCodes {
  Tensor2 Z;  // one posterior mean per data point
  std::vector<double> ess;
};

/// Self-normalized importance estimate of E[z | x_i] for every data point
/// (exact for categorical priors, the encoder mean for the baseline VAE).
LatentCodes latent_representation(const TrainedModel& model, const EmpiricalMeasure& data,
                                  Rng& rng, const AggregateOptions& options = {});

struct EvaluationOptions {
  std::size_t n_samples = 2000;  // generated samples for the mixture metrics
  std::size_t n_mmd = 2000;      // aggregate-posterior and prior draws each
  double sigma = 0.05;
  /// Generated samples are draws from p(x|z) when true, decoder means otherwise.
  bool noisy_samples = true;
  std::uint64_t seed = 0;
  AggregateOptions aggregate;
};

struct RunMetrics {
  std::optional<double> high_density_ratio;  // only with ground-truth means
  std::optional<double> std_within_modes;
  double mmd = 0.0;
  double mmd_bandwidth = 0.0;
  double ess_min = 0.0;
  std::uint64_t seed = 0;
};

/// Mixture metrics on generated samples (when `means` is given) and MMD
/// between the aggregate posterior and the prior.
RunMetrics evaluate_model(const TrainedModel& model, const EmpiricalMeasure& data,
                          const Tensor2* means, const EvaluationOptions& options);

/// JSON object with keys high_density_ratio, std_within_modes, mmd,
/// mmd_bandwidth, ess_min, seed (null for absent or non-finite values).
std::string metrics_json(const RunMetrics& metrics);

}  // namespace cvae

#endif  // CVAE_EVAL_HPP
