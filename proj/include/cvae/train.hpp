#ifndef CVAE_TRAIN_HPP
#define CVAE_TRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvae/cost.hpp"
#include "cvae/dists.hpp"
#include "cvae/eot.hpp"
#include "cvae/mlp.hpp"
#include "cvae/rng.hpp"

namespace cvae {

enum class Strategy { Primal, Dual, SinkhornDiscrete, BaselineVAE };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::Dual;
  double epsilon = 0.5;
  /// Potential step: u_i += lr_u * epsilon * grad_i / mu_i.
  double lr_u = 0.5;
  /// Adam learning rate for decoder (and encoder / atom) parameters; 0 freezes them.
  double lr_theta = 1e-3;
  std::size_t inner_iters = 50;
  /// Data points per decoder step for Primal and BaselineVAE; 0 means all.
  std::size_t batch_m = 0;
  /// Latent points per Monte Carlo batch.
  std::size_t batch_n = 256;
  std::size_t epochs = 10;
  /// Outer iterations (one potential phase plus one decoder step) per epoch.
  std::size_t iters_per_epoch = 20;
  std::uint64_t seed = 0;
  std::size_t posterior_samples = 64;
  double grad_clip = 10.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double sinkhorn_tol = 1e-9;
  std::size_t sinkhorn_max_iter = 10000;

  void validate() const;
};

/// Writes "key value" lines for every field.
void write_config(std::ostream& os, const TrainConfig& config);

struct EpochDiagnostics {
  std::size_t iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double marginal_violation = 0.0;
  double ess_min = 0.0;
};

/// CSV with header iter,objective,grad_norm,marginal_violation,ess_min.
void write_diagnostics_csv(const std::filesystem::path& path,
                           std::span<const EpochDiagnostics> history);

/// Amortized Gaussian encoder q(z|x) of the baseline VAE: d_x -> 2 d_z
/// (mean, log-variance floored at log_var_floor).
struct EncoderNet {
  MlpParams net;
  double log_var_floor = -10.0;

  std::size_t latent_dim() const { return net.output_dim() / 2; }
  friend bool operator==(const EncoderNet&, const EncoderNet&) = default;
};

EncoderNet make_encoder(std::size_t data_dim, std::size_t latent_dim,
                        std::span<const std::size_t> hidden, std::uint64_t seed);

struct TrainedModel {
  TrainConfig config;
  Decoder decoder;
  SemiDualPotential potential;           // empty u for the baseline VAE
  std::vector<double> latent_potential;  // Sinkhorn v over atoms
  Prior prior;
  std::optional<EncoderNet> encoder;  // baseline VAE only
  std::vector<EpochDiagnostics> history;
};

/// Thrown when training hits a non-finite loss or degenerate weights.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::vector<EpochDiagnostics> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<EpochDiagnostics>& history() const { return history_; }

 private:
  std::vector<EpochDiagnostics> history_;
};

/// Called after every epoch with the current model and the 1-based epoch.
using EpochCallback = std::function<void(const TrainedModel&, std::size_t)>;

TrainedModel train_dual(const TrainConfig& config, const EmpiricalMeasure& data, const Prior& prior,
                        Decoder decoder0, Rng& rng, const EpochCallback& on_epoch = {});
TrainedModel train_primal(const TrainConfig& config, const EmpiricalMeasure& data,
                          const Prior& prior, Decoder decoder0, Rng& rng,
                          const EpochCallback& on_epoch = {});
TrainedModel train_sinkhorn_discrete(const TrainConfig& config, const EmpiricalMeasure& data,
                                     const CategoricalPrior& prior, Decoder decoder0, Rng& rng,
                                     const EpochCallback& on_epoch = {});
TrainedModel train_vae_baseline(const TrainConfig& config, const EmpiricalMeasure& data,
                                const GaussianPrior& prior, Decoder decoder0, EncoderNet encoder0,
                                Rng& rng, const EpochCallback& on_epoch = {});

/// Dispatches on config.strategy. The encoder is built from the decoder's
/// hidden widths when the strategy needs one.
TrainedModel train(const TrainConfig& config, const EmpiricalMeasure& data, const Prior& prior,
                   Decoder decoder0, Rng& rng, const EpochCallback& on_epoch = {});

// Single steps, exposed for verification.

/// u += lr_u * epsilon * grad / mu, returning the gradient used.
std::vector<double> potential_ascent_step(SemiDualPotential& potential, const CostMatrix& cost,
                                          std::span<const double> mu,
                                          std::span<const double> latent_weights, double lr_u);

struct DecoderGradient {
  double objective = 0.0;
  MlpParams grads;
  Tensor2 grad_latent;  // d objective / d Z
};

/// Gradient of the semi-dual objective with respect to decoder parameters:
/// sum_j nu_j sum_i w_ij dc(x_i, z_j)/dtheta with w the soft assignments.
DecoderGradient dual_decoder_gradient(const Decoder& decoder, const SemiDualPotential& potential,
                                      const EmpiricalMeasure& data, const Tensor2& Z,
                                      std::span<const double> z_weights = {});

struct PrimalGradient {
  DecoderGradient gradient;
  std::vector<double> ess;  // per batch data point
  std::vector<std::vector<double>> weights;  // self-normalized, per batch data point
};

/// Importance-weighted reconstruction gradient:
/// (1/|B|) sum_{i in B} sum_j w_ij dc(x_i, z_j)/dtheta, with weights from
/// the potential and the c,eps-transforms computed once for the draws.
PrimalGradient primal_decoder_gradient(const Decoder& decoder, const SemiDualPotential& potential,
                                       const EmpiricalMeasure& data,
                                       std::span<const std::size_t> batch, const Tensor2& Z,
                                       std::span<const double> extra_log_weights = {});

/// Gradient of sum_ij pi_ij c(x_i, a_j) in decoder parameters and atoms.
DecoderGradient plan_decoder_gradient(const Decoder& decoder, const EmpiricalMeasure& data,
                                      const Tensor2& atoms, const Tensor2& plan);

struct VaeStep {
  double elbo = 0.0;           // batch mean
  double reconstruction = 0.0;  // batch mean of -log p(x|z)
  double kl = 0.0;              // batch mean
  MlpParams decoder_grads;
  MlpParams encoder_grads;
};

/// Negative-ELBO gradient on a batch with given reparameterization noise
/// (rows of `noise` are N(0, I) draws, one per batch row).
VaeStep vae_step(const Decoder& decoder, const EncoderNet& encoder, const Tensor2& batch,
                 const Tensor2& noise);

/// KL(N(mean, diag exp(log_var)) || N(0, I)).
double gaussian_kl_standard(std::span<const double> mean, std::span<const double> log_var);

// Checkpoints: text, every float64 with 17 significant digits.
void write_checkpoint(std::ostream& os, const TrainedModel& model);
TrainedModel read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace cvae

#endif  // CVAE_TRAIN_HPP
