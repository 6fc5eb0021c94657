#include "cvae/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cvae/optim.hpp"
#include "cvae/textio.hpp"

namespace cvae {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Primal:
      return "primal";
    case Strategy::Dual:
      return "dual";
    case Strategy::SinkhornDiscrete:
      return "sinkhorn";
    case Strategy::BaselineVAE:
      return "baseline-vae";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "primal") return Strategy::Primal;
  if (name == "dual") return Strategy::Dual;
  if (name == "sinkhorn") return Strategy::SinkhornDiscrete;
  if (name == "baseline-vae") return Strategy::BaselineVAE;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("TrainConfig: epsilon must be positive");
  }
  if (!(lr_u > 0.0) || !(lr_theta >= 0.0) || !std::isfinite(lr_u) || !std::isfinite(lr_theta)) {
    throw std::invalid_argument("TrainConfig: lr_u must be positive and lr_theta nonnegative");
  }
  if (inner_iters == 0 || batch_n == 0 || epochs == 0 || iters_per_epoch == 0 ||
      posterior_samples == 0) {
    throw std::invalid_argument("TrainConfig: counts must be positive");
  }
  if (!(grad_clip > 0.0)) {
    throw std::invalid_argument("TrainConfig: grad_clip must be positive");
  }
}

void write_config(std::ostream& os, const TrainConfig& c) {
  os << "strategy " << to_string(c.strategy) << '\n'
     << "epsilon " << format_double(c.epsilon) << '\n'
     << "lr_u " << format_double(c.lr_u) << '\n'
     << "lr_theta " << format_double(c.lr_theta) << '\n'
     << "inner_iters " << c.inner_iters << '\n'
     << "batch_m " << c.batch_m << '\n'
     << "batch_n " << c.batch_n << '\n'
     << "epochs " << c.epochs << '\n'
     << "iters_per_epoch " << c.iters_per_epoch << '\n'
     << "seed " << c.seed << '\n'
     << "posterior_samples " << c.posterior_samples << '\n'
     << "grad_clip " << format_double(c.grad_clip) << '\n'
     << "adam_beta1 " << format_double(c.adam_beta1) << '\n'
     << "adam_beta2 " << format_double(c.adam_beta2) << '\n'
     << "sinkhorn_tol " << format_double(c.sinkhorn_tol) << '\n'
     << "sinkhorn_max_iter " << c.sinkhorn_max_iter << '\n';
}

namespace {

TrainConfig read_config_block(TokenReader& in) {
  TrainConfig c;
  in.expect("strategy");
  c.strategy = parse_strategy(in.next());
  in.expect("epsilon");
  c.epsilon = in.read_double();
  in.expect("lr_u");
  c.lr_u = in.read_double();
  in.expect("lr_theta");
  c.lr_theta = in.read_double();
  in.expect("inner_iters");
  c.inner_iters = in.read_size();
  in.expect("batch_m");
  c.batch_m = in.read_size();
  in.expect("batch_n");
  c.batch_n = in.read_size();
  in.expect("epochs");
  c.epochs = in.read_size();
  in.expect("iters_per_epoch");
  c.iters_per_epoch = in.read_size();
  in.expect("seed");
  c.seed = std::stoull(in.next());
  in.expect("posterior_samples");
  c.posterior_samples = in.read_size();
  in.expect("grad_clip");
  c.grad_clip = in.read_double();
  in.expect("adam_beta1");
  c.adam_beta1 = in.read_double();
  in.expect("adam_beta2");
  c.adam_beta2 = in.read_double();
  in.expect("sinkhorn_tol");
  c.sinkhorn_tol = in.read_double();
  in.expect("sinkhorn_max_iter");
  c.sinkhorn_max_iter = in.read_size();
  return c;
}

}  // namespace

void write_diagnostics_csv(const std::filesystem::path& path,
                           std::span<const EpochDiagnostics> history) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "iter,objective,grad_norm,marginal_violation,ess_min\n";
  for (const auto& h : history) {
    out << h.iter << ',' << format_double(h.objective) << ',' << format_double(h.grad_norm) << ','
        << format_double(h.marginal_violation) << ',' << format_double(h.ess_min) << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

EncoderNet make_encoder(std::size_t data_dim, std::size_t latent_dim,
                        std::span<const std::size_t> hidden, std::uint64_t seed) {
  std::vector<std::size_t> sizes{data_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * latent_dim);
  return EncoderNet{mlp_init(sizes, seed), -10.0};
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct LatentBatch {
  Tensor2 Z;
  std::vector<double> weights;  // empty: uniform
};

// Monte Carlo draws for Gaussian priors; categorical priors are enumerated
// exactly (every atom, weighted by its probability).
LatentBatch draw_latent_batch(const Prior& prior, std::size_t n, Rng& rng) {
  if (const auto* c = std::get_if<CategoricalPrior>(&prior)) {
    return {c->atoms, c->probs};
  }
  return {prior_sample(prior, n, rng), {}};
}

std::vector<std::size_t> sample_batch(std::size_t m, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (batch == 0 || batch >= m) {
    return idx;
  }
  for (std::size_t k = 0; k < batch; ++k) {
    const std::size_t pick = k + rng.index(m - k);
    std::swap(idx[k], idx[pick]);
  }
  idx.resize(batch);
  return idx;
}

void require_finite(double value, const char* what, const std::vector<EpochDiagnostics>& history) {
  if (!std::isfinite(value)) {
    throw TrainingAborted(std::string("non-finite ") + what + " after " +
                              std::to_string(history.size()) + " epochs",
                          history);
  }
}

struct ParamUpdater {
  AdamState adam;
  double clip = 10.0;

  double step(std::vector<std::span<double>> params, std::vector<std::span<double>> grads,
              double lr, const std::vector<EpochDiagnostics>& history) {
    const double norm = clip_global_norm(grads, clip);
    require_finite(norm, "gradient", history);
    if (lr > 0.0) {
      std::vector<std::span<const double>> g(grads.begin(), grads.end());
      adam_step(adam, params, g, lr);
    }
    return norm;
  }
};

void check_training_inputs(const TrainConfig& config, const EmpiricalMeasure& data,
                           const Prior& prior, const Decoder& decoder) {
  config.validate();
  if (data.dim() != decoder.data_dim()) {
    throw std::invalid_argument("training data dimension does not match the decoder");
  }
  if (latent_input_dim(prior) != decoder.latent_dim()) {
    throw std::invalid_argument("prior dimension does not match the decoder input");
  }
}

double max_abs(std::span<const double> v) {
  double worst = 0.0;
  for (double x : v) {
    worst = std::max(worst, std::abs(x));
  }
  return worst;
}

void apply_potential_step(SemiDualPotential& potential, std::span<const double> grad,
                          std::span<const double> mu, double lr_u) {
  const double scale = lr_u * potential.epsilon;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (mu[i] > 0.0) {
      potential.u[i] += scale * grad[i] / mu[i];
    }
  }
}

// Same step as potential_ascent_step, streaming cost columns instead of
// forming the m x n matrix.
std::vector<double> streaming_potential_step(SemiDualPotential& potential, const Decoder& decoder,
                                             const EmpiricalMeasure& data, const Tensor2& Z,
                                             std::span<const double> latent_weights, double lr_u) {
  const DecoderPass pass = decoder_forward(decoder, Z);
  const auto nu = resolve_latent_weights(latent_weights, Z.rows());
  SemidualAccumulator acc(potential.u, data.weights, potential.epsilon);
  std::vector<double> column(data.size());
  for (std::size_t j = 0; j < Z.rows(); ++j) {
    cost_column(decoder, data.points, pass.heads.row(j), column);
    acc.add(column, nu[j]);
  }
  std::vector<double> grad = acc.gradient();
  apply_potential_step(potential, grad, data.weights, lr_u);
  return grad;
}

// Inner potential phase shared by the dual and primal strategies. Returns
// the last gradient.
std::vector<double> run_potential_phase(const TrainConfig& config, const EmpiricalMeasure& data,
                                        const Prior& prior, const Decoder& decoder,
                                        SemiDualPotential& potential, Rng& rng) {
  std::vector<double> grad;
  for (std::size_t k = 0; k < config.inner_iters; ++k) {
    const LatentBatch batch = draw_latent_batch(prior, config.batch_n, rng);
    grad = streaming_potential_step(potential, decoder, data, batch.Z, batch.weights,
                                    config.lr_u);
  }
  return grad;
}

}  // namespace

std::vector<double> potential_ascent_step(SemiDualPotential& potential, const CostMatrix& cost,
                                          std::span<const double> mu,
                                          std::span<const double> latent_weights, double lr_u) {
  std::vector<double> grad =
      semidual_gradient(potential.u, cost, mu, latent_weights, potential.epsilon);
  apply_potential_step(potential, grad, mu, lr_u);
  return grad;
}

DecoderGradient dual_decoder_gradient(const Decoder& decoder, const SemiDualPotential& potential,
                                      const EmpiricalMeasure& data, const Tensor2& Z,
                                      std::span<const double> z_weights) {
  if (potential.u.size() != data.size()) {
    throw std::invalid_argument("potential length does not match the data");
  }
  const DecoderPass pass = decoder_forward(decoder, Z);
  const auto nu = resolve_latent_weights(z_weights, Z.rows());
  SemidualAccumulator acc(potential.u, data.weights, potential.epsilon);
  Tensor2 grad_head(Z.rows(), pass.heads.cols());
  std::vector<double> column(data.size());
  for (std::size_t j = 0; j < Z.rows(); ++j) {
    cost_column(decoder, data.points, pass.heads.row(j), column);
    acc.add(column, nu[j]);
    // d objective / d c_ij = nu_j w_ij: the soft assignment of z_j.
    auto row = grad_head.row(j);
    accumulate_head_grad(decoder, pass.heads.row(j), data.points, acc.weights(), row);
    for (double& g : row) {
      g *= nu[j];
    }
  }
  MlpBackward back = mlp_backward(decoder.net, pass.cache, grad_head);
  return {acc.value(), std::move(back.grads), std::move(back.grad_input)};
}

PrimalGradient primal_decoder_gradient(const Decoder& decoder, const SemiDualPotential& potential,
                                       const EmpiricalMeasure& data,
                                       std::span<const std::size_t> batch, const Tensor2& Z,
                                       std::span<const double> extra_log_weights) {
  if (batch.empty()) {
    throw std::invalid_argument("primal_decoder_gradient: empty data batch");
  }
  const DecoderPass pass = decoder_forward(decoder, Z);
  const CostMatrix cost = cost_matrix_from_heads(decoder, data.points, pass.heads);
  const std::size_t n = Z.rows();
  // The c,eps-transforms depend only on the draws; computed once, shared by the batch.
  std::vector<double> transforms(n);
  std::vector<double> scratch(data.size());
  for (std::size_t j = 0; j < n; ++j) {
    transforms[j] =
        soft_assign(potential.u, cost.column(j), data.weights, potential.epsilon, scratch);
  }
  PrimalGradient out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Tensor2 column_weights(n, batch.size());
  double objective = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const WeightedLatentSample s = importance_weights_from_costs(
        potential.u, potential.epsilon, batch[b], cost, transforms, extra_log_weights);
    for (std::size_t j = 0; j < n; ++j) {
      column_weights(j, b) = inv_b * s.normalized_weights[j];
      objective += inv_b * s.normalized_weights[j] * cost(batch[b], j);
    }
    out.ess.push_back(s.ess);
    out.weights.push_back(s.normalized_weights);
  }
  const Tensor2 batch_points = gather_rows(data.points, batch);
  Tensor2 grad_head(n, pass.heads.cols());
  for (std::size_t j = 0; j < n; ++j) {
    accumulate_head_grad(decoder, pass.heads.row(j), batch_points, column_weights.row(j),
                         grad_head.row(j));
  }
  MlpBackward back = mlp_backward(decoder.net, pass.cache, grad_head);
  out.gradient = {objective, std::move(back.grads), std::move(back.grad_input)};
  return out;
}

DecoderGradient plan_decoder_gradient(const Decoder& decoder, const EmpiricalMeasure& data,
                                      const Tensor2& atoms, const Tensor2& plan) {
  if (plan.rows() != data.size() || plan.cols() != atoms.rows()) {
    throw std::invalid_argument("plan_decoder_gradient: plan shape mismatch");
  }
  const DecoderPass pass = decoder_forward(decoder, atoms);
  const CostMatrix cost = cost_matrix_from_heads(decoder, data.points, pass.heads);
  Tensor2 grad_head(atoms.rows(), pass.heads.cols());
  std::vector<double> column(data.size());
  double objective = 0.0;
  for (std::size_t j = 0; j < atoms.rows(); ++j) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      column[i] = plan(i, j);
      objective += plan(i, j) * cost(i, j);
    }
    accumulate_head_grad(decoder, pass.heads.row(j), data.points, column, grad_head.row(j));
  }
  MlpBackward back = mlp_backward(decoder.net, pass.cache, grad_head);
  return {objective, std::move(back.grads), std::move(back.grad_input)};
}

double gaussian_kl_standard(std::span<const double> mean, std::span<const double> log_var) {
  double kl = 0.0;
  for (std::size_t d = 0; d < mean.size(); ++d) {
    kl += 0.5 * (std::exp(log_var[d]) + mean[d] * mean[d] - 1.0 - log_var[d]);
  }
  return kl;
}

VaeStep vae_step(const Decoder& decoder, const EncoderNet& encoder, const Tensor2& batch,
                 const Tensor2& noise) {
  const std::size_t b = batch.rows();
  const std::size_t dz = encoder.latent_dim();
  if (noise.rows() != b || noise.cols() != dz || decoder.latent_dim() != dz) {
    throw std::invalid_argument("vae_step: noise or latent dimension mismatch");
  }
  const MlpForward enc = mlp_forward(encoder.net, batch);
  Tensor2 z(b, dz);
  std::vector<double> log_var(dz);
  VaeStep out;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    const auto head = enc.output.row(r);
    for (std::size_t d = 0; d < dz; ++d) {
      log_var[d] = std::max(head[dz + d], encoder.log_var_floor);
      z(r, d) = head[d] + std::exp(0.5 * log_var[d]) * noise(r, d);
    }
    out.kl += inv_b * gaussian_kl_standard(head.first(dz), log_var);
  }
  const DecoderPass dec = decoder_forward(decoder, z);
  Tensor2 grad_head(b, dec.heads.cols());
  const double w[1] = {inv_b};
  for (std::size_t r = 0; r < b; ++r) {
    out.reconstruction += inv_b * cost_from_head(decoder, batch.row(r), dec.heads.row(r));
    const Tensor2 xr(1, batch.cols(), std::vector<double>(batch.row(r).begin(), batch.row(r).end()));
    accumulate_head_grad(decoder, dec.heads.row(r), xr, w, grad_head.row(r));
  }
  out.elbo = -(out.reconstruction + out.kl);
  MlpBackward dec_back = mlp_backward(decoder.net, dec.cache, grad_head);
  out.decoder_grads = std::move(dec_back.grads);

  Tensor2 grad_enc(b, 2 * dz);
  for (std::size_t r = 0; r < b; ++r) {
    const auto head = enc.output.row(r);
    for (std::size_t d = 0; d < dz; ++d) {
      const double gz = dec_back.grad_input(r, d);
      const double lv = std::max(head[dz + d], encoder.log_var_floor);
      grad_enc(r, d) = gz + inv_b * head[d];
      if (head[dz + d] > encoder.log_var_floor) {
        grad_enc(r, dz + d) =
            gz * noise(r, d) * 0.5 * std::exp(0.5 * lv) + inv_b * 0.5 * (std::exp(lv) - 1.0);
      }
    }
  }
  out.encoder_grads = mlp_backward(encoder.net, enc.cache, grad_enc).grads;
  return out;
}

TrainedModel train_dual(const TrainConfig& config, const EmpiricalMeasure& data, const Prior& prior,
                        Decoder decoder0, Rng& rng, const EpochCallback& on_epoch) {
  check_training_inputs(config, data, prior, decoder0);
  TrainedModel model;
  model.config = config;
  model.prior = prior;
  model.decoder = std::move(decoder0);
  model.potential = {std::vector<double>(data.size(), 0.0), config.epsilon};
  ParamUpdater updater{AdamState(config.adam_beta1, config.adam_beta2, 1e-8), config.grad_clip};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double objective_sum = 0.0;
    double norm_sum = 0.0;
    std::vector<double> last_grad;
    EpochDiagnostics diag;
    for (std::size_t it = 0; it < config.iters_per_epoch; ++it) {
      last_grad =
          run_potential_phase(config, data, model.prior, model.decoder, model.potential, rng);

      const LatentBatch batch = draw_latent_batch(model.prior, config.batch_n, rng);
      DecoderGradient g =
          dual_decoder_gradient(model.decoder, model.potential, data, batch.Z, batch.weights);
      require_finite(g.objective, "semi-dual objective", model.history);
      objective_sum += g.objective;
      norm_sum += updater.step(parameter_spans(model.decoder.net), parameter_spans(g.grads),
                               config.lr_theta, model.history);

      if (it + 1 == config.iters_per_epoch) {
        const CostMatrix cost = cost_matrix(model.decoder, data, batch.Z);
        std::vector<double> transforms(batch.Z.rows());
        semidual_gradient(model.potential.u, cost, data.weights, batch.weights, config.epsilon,
                          transforms);
        std::vector<double> extra;
        if (!batch.weights.empty()) {
          for (double p : batch.weights) {
            extra.push_back(p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity());
          }
        }
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < data.size(); ++i) {
          worst = std::min(worst, importance_weights_from_costs(model.potential.u, config.epsilon,
                                                                i, cost, transforms, extra)
                                      .ess);
        }
        diag.ess_min = worst;
      }
    }
    const double inv = 1.0 / static_cast<double>(config.iters_per_epoch);
    diag.iter = epoch;
    diag.objective = objective_sum * inv;
    diag.grad_norm = norm_sum * inv;
    diag.marginal_violation = max_abs(last_grad);
    model.history.push_back(diag);
    if (on_epoch) {
      on_epoch(model, epoch);
    }
  }
  return model;
}

TrainedModel train_primal(const TrainConfig& config, const EmpiricalMeasure& data,
                          const Prior& prior, Decoder decoder0, Rng& rng,
                          const EpochCallback& on_epoch) {
  check_training_inputs(config, data, prior, decoder0);
  TrainedModel model;
  model.config = config;
  model.prior = prior;
  model.decoder = std::move(decoder0);
  model.potential = {std::vector<double>(data.size(), 0.0), config.epsilon};
  ParamUpdater updater{AdamState(config.adam_beta1, config.adam_beta2, 1e-8), config.grad_clip};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double objective_sum = 0.0;
    double norm_sum = 0.0;
    double ess_min = std::numeric_limits<double>::infinity();
    std::vector<double> last_grad;
    for (std::size_t it = 0; it < config.iters_per_epoch; ++it) {
      last_grad =
          run_potential_phase(config, data, model.prior, model.decoder, model.potential, rng);

      const std::vector<std::size_t> batch = sample_batch(data.size(), config.batch_m, rng);
      const Tensor2 draws = prior_sample(model.prior, config.posterior_samples, rng);
      const Tensor2 Z = decoder_inputs(model.prior, draws);
      PrimalGradient pg = primal_decoder_gradient(model.decoder, model.potential, data, batch, Z);
      std::size_t degenerate = 0;
      for (double e : pg.ess) {
        ess_min = std::min(ess_min, e);
        if (e < 2.0) {
          ++degenerate;
        }
      }
      if (2 * degenerate > pg.ess.size()) {
        throw TrainingAborted(
            "importance weights degenerate (ESS < 2) for " + std::to_string(degenerate) + " of " +
                std::to_string(pg.ess.size()) +
                " data points; raise epsilon or posterior_samples",
            model.history);
      }
      require_finite(pg.gradient.objective, "reconstruction objective", model.history);
      objective_sum += pg.gradient.objective;
      norm_sum += updater.step(parameter_spans(model.decoder.net),
                               parameter_spans(pg.gradient.grads), config.lr_theta, model.history);
    }
    const double inv = 1.0 / static_cast<double>(config.iters_per_epoch);
    model.history.push_back({epoch, objective_sum * inv, norm_sum * inv, max_abs(last_grad), ess_min});
    if (on_epoch) {
      on_epoch(model, epoch);
    }
  }
  return model;
}

TrainedModel train_sinkhorn_discrete(const TrainConfig& config, const EmpiricalMeasure& data,
                                     const CategoricalPrior& prior, Decoder decoder0, Rng& rng,
                                     const EpochCallback& on_epoch) {
  (void)rng;  // the discrete path is deterministic given the initial decoder and atoms
  check_training_inputs(config, data, prior, decoder0);
  TrainedModel model;
  model.config = config;
  model.prior = prior;
  model.decoder = std::move(decoder0);
  auto& cat = std::get<CategoricalPrior>(model.prior);
  ParamUpdater updater{AdamState(config.adam_beta1, config.adam_beta2, 1e-8), config.grad_clip};
  const SinkhornOptions options{config.epsilon, config.sinkhorn_tol, config.sinkhorn_max_iter};

  // Zero-probability atoms carry no mass; Sinkhorn runs on the support.
  std::vector<std::size_t> support;
  for (std::size_t k = 0; k < cat.num_categories(); ++k) {
    if (cat.probs[k] > 0.0) {
      support.push_back(k);
    }
  }
  std::vector<double> nu;
  for (std::size_t k : support) {
    nu.push_back(cat.probs[k]);
  }

  DualPotentialPair warm;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double objective_sum = 0.0;
    double norm_sum = 0.0;
    double violation = 0.0;
    double ess_min = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < config.iters_per_epoch; ++it) {
      const Tensor2 atoms = gather_rows(cat.atoms, support);
      const Tensor2 cost = cost_matrix(model.decoder, data, atoms).values();
      const SinkhornResult sk = sinkhorn(cost, data.weights, nu, options,
                                         warm.u.empty() ? nullptr : &warm);
      warm = sk.potentials;
      violation = std::max(violation, sk.marginal_violation);
      const double primal = entropic_primal_value(sk.plan, cost, config.epsilon);
      require_finite(primal, "transport objective", model.history);
      objective_sum += primal;
      for (std::size_t i = 0; i < data.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < support.size(); ++j) {
          const double c = sk.plan.pi(i, j) / data.weights[i];
          sq += c * c;
        }
        ess_min = std::min(ess_min, 1.0 / sq);
      }

      DecoderGradient g = plan_decoder_gradient(model.decoder, data, atoms, sk.plan.pi);
      Tensor2 atom_grads(cat.num_categories(), cat.atom_dim());
      for (std::size_t j = 0; j < support.size(); ++j) {
        const auto src = g.grad_latent.row(j);
        std::copy(src.begin(), src.end(), atom_grads.row(support[j]).begin());
      }
      auto params = parameter_spans(model.decoder.net);
      params.push_back(cat.atoms.flat());
      auto grads = parameter_spans(g.grads);
      grads.push_back(atom_grads.flat());
      norm_sum += updater.step(params, grads, config.lr_theta, model.history);
    }
    const double inv = 1.0 / static_cast<double>(config.iters_per_epoch);
    model.history.push_back({epoch, objective_sum * inv, norm_sum * inv, violation, ess_min});

    // Potentials reported against the current decoder and atoms.
    model.potential = {warm.u, config.epsilon};
    model.latent_potential.assign(cat.num_categories(), 0.0);
    for (std::size_t j = 0; j < support.size(); ++j) {
      model.latent_potential[support[j]] = warm.v[j];
    }
    if (on_epoch) {
      on_epoch(model, epoch);
    }
  }
  return model;
}

TrainedModel train_vae_baseline(const TrainConfig& config, const EmpiricalMeasure& data,
                                const GaussianPrior& prior, Decoder decoder0, EncoderNet encoder0,
                                Rng& rng, const EpochCallback& on_epoch) {
  check_training_inputs(config, data, prior, decoder0);
  if (prior.dim() != encoder0.latent_dim() || encoder0.net.input_dim() != data.dim()) {
    throw std::invalid_argument("encoder dimensions do not match data and prior");
  }
  for (std::size_t d = 0; d < prior.dim(); ++d) {
    if (prior.mean[d] != 0.0 || prior.stddev[d] != 1.0) {
      throw std::invalid_argument("baseline VAE requires a standard normal prior");
    }
  }
  TrainedModel model;
  model.config = config;
  model.prior = prior;
  model.decoder = std::move(decoder0);
  model.encoder = std::move(encoder0);
  ParamUpdater updater{AdamState(config.adam_beta1, config.adam_beta2, 1e-8), config.grad_clip};
  const std::size_t dz = prior.dim();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double objective_sum = 0.0;
    double norm_sum = 0.0;
    for (std::size_t it = 0; it < config.iters_per_epoch; ++it) {
      const std::vector<std::size_t> idx = sample_batch(data.size(), config.batch_m, rng);
      const Tensor2 batch = gather_rows(data.points, idx);
      Tensor2 noise(batch.rows(), dz);
      for (double& v : noise.flat()) {
        v = rng.normal();
      }
      VaeStep step = vae_step(model.decoder, *model.encoder, batch, noise);
      require_finite(step.elbo, "ELBO", model.history);
      objective_sum += -step.elbo;
      auto params = parameter_spans(model.decoder.net);
      auto enc_params = parameter_spans(model.encoder->net);
      params.insert(params.end(), enc_params.begin(), enc_params.end());
      auto grads = parameter_spans(step.decoder_grads);
      auto enc_grads = parameter_spans(step.encoder_grads);
      grads.insert(grads.end(), enc_grads.begin(), enc_grads.end());
      norm_sum += updater.step(params, grads, config.lr_theta, model.history);
    }
    const double inv = 1.0 / static_cast<double>(config.iters_per_epoch);
    model.history.push_back({epoch, objective_sum * inv, norm_sum * inv, kNaN, kNaN});
    if (on_epoch) {
      on_epoch(model, epoch);
    }
  }
  return model;
}

TrainedModel train(const TrainConfig& config, const EmpiricalMeasure& data, const Prior& prior,
                   Decoder decoder0, Rng& rng, const EpochCallback& on_epoch) {
  switch (config.strategy) {
    case Strategy::Dual:
      return train_dual(config, data, prior, std::move(decoder0), rng, on_epoch);
    case Strategy::Primal:
      return train_primal(config, data, prior, std::move(decoder0), rng, on_epoch);
    case Strategy::SinkhornDiscrete: {
      const auto* cat = std::get_if<CategoricalPrior>(&prior);
      if (cat == nullptr) {
        throw std::invalid_argument("sinkhorn strategy requires a categorical prior");
      }
      return train_sinkhorn_discrete(config, data, *cat, std::move(decoder0), rng, on_epoch);
    }
    case Strategy::BaselineVAE: {
      const auto* g = std::get_if<GaussianPrior>(&prior);
      if (g == nullptr) {
        throw std::invalid_argument("baseline VAE requires a Gaussian prior");
      }
      std::vector<std::size_t> hidden(decoder0.net.layer_sizes.begin() + 1,
                                      decoder0.net.layer_sizes.end() - 1);
      EncoderNet encoder = make_encoder(data.dim(), g->dim(), hidden, rng.split());
      return train_vae_baseline(config, data, *g, std::move(decoder0), std::move(encoder), rng,
                                on_epoch);
    }
  }
  throw std::logic_error("unhandled strategy");
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& os, const TrainedModel& model) {
  os << "cvae-checkpoint 1\n";
  write_config(os, model.config);
  os << "likelihood "
     << (model.decoder.likelihood == Likelihood::Gaussian ? "gaussian" : "bernoulli") << '\n'
     << "log_var_floor " << format_double(model.decoder.log_var_floor) << '\n'
     << "logit_clamp " << format_double(model.decoder.logit_clamp) << '\n';
  write_mlp(os, model.decoder.net);
  os << "potential " << model.potential.u.size() << ' ' << format_double(model.potential.epsilon)
     << '\n';
  write_doubles(os, model.potential.u);
  os << "latent_potential " << model.latent_potential.size() << '\n';
  write_doubles(os, model.latent_potential);
  if (const auto* g = std::get_if<GaussianPrior>(&model.prior)) {
    os << "prior gaussian " << g->dim() << '\n';
    write_doubles(os, g->mean);
    write_doubles(os, g->stddev);
  } else {
    const auto& c = std::get<CategoricalPrior>(model.prior);
    os << "prior categorical " << c.num_categories() << ' ' << c.atom_dim() << '\n';
    write_doubles(os, c.probs);
    for (std::size_t k = 0; k < c.num_categories(); ++k) {
      write_doubles(os, c.atoms.row(k));
    }
  }
  if (model.encoder) {
    os << "encoder 1 " << format_double(model.encoder->log_var_floor) << '\n';
    write_mlp(os, model.encoder->net);
  } else {
    os << "encoder 0\n";
  }
  os << "end\n";
}

TrainedModel read_checkpoint(std::istream& is) {
  TokenReader in(is);
  in.expect("cvae-checkpoint");
  if (in.read_size() != 1) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  TrainedModel model;
  model.config = read_config_block(in);
  in.expect("likelihood");
  const std::string lik = in.next();
  if (lik == "gaussian") {
    model.decoder.likelihood = Likelihood::Gaussian;
  } else if (lik == "bernoulli") {
    model.decoder.likelihood = Likelihood::Bernoulli;
  } else {
    throw std::runtime_error("unknown likelihood '" + lik + "'");
  }
  in.expect("log_var_floor");
  model.decoder.log_var_floor = in.read_double();
  in.expect("logit_clamp");
  model.decoder.logit_clamp = in.read_double();
  model.decoder.net = read_mlp(is);
  in.expect("potential");
  const std::size_t m = in.read_size();
  model.potential.epsilon = in.read_double();
  model.potential.u = in.read_doubles(m);
  in.expect("latent_potential");
  model.latent_potential = in.read_doubles(in.read_size());
  in.expect("prior");
  const std::string kind = in.next();
  if (kind == "gaussian") {
    const std::size_t d = in.read_size();
    auto mean = in.read_doubles(d);
    auto stddev = in.read_doubles(d);
    model.prior = GaussianPrior(std::move(mean), std::move(stddev));
  } else if (kind == "categorical") {
    const std::size_t k = in.read_size();
    const std::size_t d = in.read_size();
    auto probs = in.read_doubles(k);
    Tensor2 atoms(k, d, in.read_doubles(k * d));
    model.prior = CategoricalPrior(std::move(probs), std::move(atoms));
  } else {
    throw std::runtime_error("unknown prior '" + kind + "'");
  }
  in.expect("encoder");
  if (in.read_size() == 1) {
    EncoderNet enc;
    enc.log_var_floor = in.read_double();
    enc.net = read_mlp(is);
    model.encoder = std::move(enc);
  }
  in.expect("end");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  write_checkpoint(out, model);
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  return read_checkpoint(in);
}

}  // namespace cvae
