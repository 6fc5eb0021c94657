#include "cvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cvae/cost.hpp"
#include "cvae/eot.hpp"
#include "json.hpp"

namespace cvae {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

// Index k with cdf[k-1] <= u * total < cdf[k]; zero-weight entries are never chosen.
std::size_t pick_index(std::span<const double> weights, double u) {
  double total = 0.0;
  for (double w : weights) {
    total += w;
  }
  const double target = u * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) {
      continue;
    }
    acc += weights[k];
    last_positive = k;
    if (target < acc) {
      return k;
    }
  }
  return last_positive;
}

// Prior points (decoder space) with costs and c,eps-transforms against the data.
struct LatentPool {
  Tensor2 Z;
  std::vector<double> extra_log_weights;
  CostMatrix cost;
  std::vector<double> transforms;
};

LatentPool make_pool(const TrainedModel& model, const EmpiricalMeasure& data, std::size_t size,
                     Rng& rng) {
  LatentPool pool;
  if (const auto* cat = std::get_if<CategoricalPrior>(&model.prior)) {
    pool.Z = cat->atoms;
    for (double p : cat->probs) {
      pool.extra_log_weights.push_back(p > 0.0 ? std::log(p)
                                               : -std::numeric_limits<double>::infinity());
    }
  } else {
    pool.Z = prior_sample(model.prior, size, rng);
  }
  pool.cost = cost_matrix(model.decoder, data, pool.Z);
  pool.transforms.resize(pool.Z.rows());
  std::vector<double> scratch(data.size());
  for (std::size_t j = 0; j < pool.Z.rows(); ++j) {
    pool.transforms[j] = soft_assign(model.potential.u, pool.cost.column(j), data.weights,
                                     model.potential.epsilon, scratch);
  }
  return pool;
}

void check_model(const TrainedModel& model, const EmpiricalMeasure& data) {
  if (data.dim() != model.decoder.data_dim()) {
    throw std::invalid_argument("data dimension does not match the model");
  }
  if (!model.encoder && model.potential.u.size() != data.size()) {
    throw std::invalid_argument("potential length does not match the data");
  }
}

// Encoder heads for the selected rows: mean and standard deviation.
struct EncoderOutput {
  Tensor2 mean;
  Tensor2 stddev;
};

EncoderOutput run_encoder(const EncoderNet& encoder, const Tensor2& x) {
  const std::size_t dz = encoder.latent_dim();
  const MlpForward f = mlp_forward(encoder.net, x);
  EncoderOutput out{Tensor2(x.rows(), dz), Tensor2(x.rows(), dz)};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t d = 0; d < dz; ++d) {
      out.mean(r, d) = f.output(r, d);
      out.stddev(r, d) = std::exp(0.5 * std::max(f.output(r, dz + d), encoder.log_var_floor));
    }
  }
  return out;
}

}  // namespace

MixtureMetrics high_density_ratio(const Tensor2& samples, const Tensor2& means, double sigma,
                                  double k) {
  if (samples.rows() == 0 || means.rows() == 0) {
    throw std::invalid_argument("high_density_ratio: empty samples or means");
  }
  if (samples.cols() != means.cols()) {
    throw std::invalid_argument("high_density_ratio: dimension mismatch");
  }
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("high_density_ratio: sigma must be positive");
  }
  MixtureMetrics m;
  m.samples_assigned.resize(samples.rows());
  const double radius_sq = (k * sigma) * (k * sigma);
  std::size_t inside = 0;
  double total_sq = 0.0;
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t c = 0; c < means.rows(); ++c) {
      const double d2 = squared_distance(samples.row(r), means.row(c));
      if (d2 < best) {
        best = d2;
        best_k = c;
      }
    }
    m.samples_assigned[r] = best_k;
    total_sq += best;
    if (best <= radius_sq) {
      ++inside;
    }
  }
  const double n = static_cast<double>(samples.rows());
  m.high_density_ratio = static_cast<double>(inside) / n;
  m.std_within_modes = std::sqrt(total_sq / (n * static_cast<double>(samples.cols())));
  return m;
}

double median_pairwise_distance(const Tensor2& a, const Tensor2& b) {
  const std::size_t total = a.rows() + b.rows();
  auto row = [&](std::size_t r) { return r < a.rows() ? a.row(r) : b.row(r - a.rows()); };
  std::vector<double> d;
  d.reserve(total * (total - 1) / 2);
  for (std::size_t r = 0; r < total; ++r) {
    for (std::size_t s = r + 1; s < total; ++s) {
      d.push_back(squared_distance(row(r), row(s)));
    }
  }
  if (d.empty()) {
    throw std::invalid_argument("median_pairwise_distance: need at least two points");
  }
  // Lower median, so the result is always an observed distance.
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>((d.size() - 1) / 2);
  std::nth_element(d.begin(), mid, d.end());
  return std::sqrt(*mid);
}

MmdEstimate mmd_rbf(const Tensor2& a, const Tensor2& b, std::optional<double> bandwidth) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("mmd_rbf: dimension mismatch");
  }
  if (a.rows() < 2 || b.rows() < 2) {
    throw std::invalid_argument("mmd_rbf: each sample needs at least two points");
  }
  MmdEstimate est;
  est.n_a = a.rows();
  est.n_b = b.rows();
  est.bandwidth = bandwidth ? *bandwidth : median_pairwise_distance(a, b);
  if (!(est.bandwidth > 0.0) || !std::isfinite(est.bandwidth)) {
    throw std::invalid_argument("mmd_rbf: degenerate bandwidth (identical points?)");
  }
  const double scale = -0.5 / (est.bandwidth * est.bandwidth);
  auto within = [&](const Tensor2& x) {
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t t = r + 1; t < x.rows(); ++t) {
        s += std::exp(scale * squared_distance(x.row(r), x.row(t)));
      }
    }
    const double n = static_cast<double>(x.rows());
    return 2.0 * s / (n * (n - 1.0));
  };
  double cross = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t t = 0; t < b.rows(); ++t) {
      cross += std::exp(scale * squared_distance(a.row(r), b.row(t)));
    }
  }
  cross /= static_cast<double>(a.rows()) * static_cast<double>(b.rows());
  est.value = within(a) + within(b) - 2.0 * cross;
  return est;
}

AggregateSample aggregate_posterior_sample(const TrainedModel& model, const EmpiricalMeasure& data,
                                           std::size_t n, Rng& rng,
                                           const AggregateOptions& options) {
  check_model(model, data);
  if (n == 0 || options.pool_size == 0 || options.draws_per_pool == 0) {
    throw std::invalid_argument("aggregate_posterior_sample: counts must be positive");
  }
  AggregateSample out;
  out.Z = Tensor2(n, model.decoder.latent_dim());
  out.ess_min = std::numeric_limits<double>::infinity();

  if (model.encoder) {
    std::vector<std::size_t> picks(n);
    for (auto& p : picks) {
      p = pick_index(data.weights, rng.uniform());
    }
    const EncoderOutput enc = run_encoder(*model.encoder, gather_rows(data.points, picks));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t d = 0; d < out.Z.cols(); ++d) {
        out.Z(r, d) = enc.mean(r, d) + enc.stddev(r, d) * rng.normal();
      }
    }
    out.ess_min = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  const bool discrete = std::holds_alternative<CategoricalPrior>(model.prior);
  std::optional<LatentPool> pool;
  for (std::size_t r = 0; r < n; ++r) {
    if (!pool || (!discrete && r % options.draws_per_pool == 0)) {
      pool = make_pool(model, data, options.pool_size, rng);
    }
    const std::size_t i = pick_index(data.weights, rng.uniform());
    const WeightedLatentSample s =
        importance_weights_from_costs(model.potential.u, model.potential.epsilon, i, pool->cost,
                                      pool->transforms, pool->extra_log_weights);
    out.ess_min = std::min(out.ess_min, s.ess);
    if (s.degenerate) {
      ++out.degenerate;
    }
    const std::size_t j = pick_index(s.normalized_weights, rng.uniform());
    const auto src = pool->Z.row(j);
    std::copy(src.begin(), src.end(), out.Z.row(r).begin());
  }
  return out;
}

LatentCodes latent_representation(const TrainedModel& model, const EmpiricalMeasure& data,
                                  Rng& rng, const AggregateOptions& options) {
  check_model(model, data);
  LatentCodes out;
  if (model.encoder) {
    out.Z = run_encoder(*model.encoder, data.points).mean;
    return out;
  }
  const LatentPool pool = make_pool(model, data, options.pool_size, rng);
  out.Z = Tensor2(data.size(), model.decoder.latent_dim());
  out.ess.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const WeightedLatentSample s =
        importance_weights_from_costs(model.potential.u, model.potential.epsilon, i, pool.cost,
                                      pool.transforms, pool.extra_log_weights);
    out.ess[i] = s.ess;
    auto dst = out.Z.row(i);
    for (std::size_t j = 0; j < pool.Z.rows(); ++j) {
      const double w = s.normalized_weights[j];
      if (w == 0.0) {
        continue;
      }
      const auto z = pool.Z.row(j);
      for (std::size_t d = 0; d < dst.size(); ++d) {
        dst[d] += w * z[d];
      }
    }
  }
  return out;
}

RunMetrics evaluate_model(const TrainedModel& model, const EmpiricalMeasure& data,
                          const Tensor2* means, const EvaluationOptions& options) {
  Rng root(options.seed);
  Rng sample_rng(root.split());
  Rng aggregate_rng(root.split());
  Rng prior_rng(root.split());
  RunMetrics out;
  out.seed = options.seed;
  if (means != nullptr) {
    const Tensor2 z = decoder_inputs(model.prior, prior_sample(model.prior, options.n_samples,
                                                               sample_rng));
    const Tensor2 x = options.noisy_samples ? sample_observation(model.decoder, z, sample_rng)
                                            : decode_mean(model.decoder, z);
    const MixtureMetrics m = high_density_ratio(x, *means, options.sigma);
    out.high_density_ratio = m.high_density_ratio;
    out.std_within_modes = m.std_within_modes;
  }
  const AggregateSample agg =
      aggregate_posterior_sample(model, data, options.n_mmd, aggregate_rng, options.aggregate);
  const Tensor2 prior_z =
      decoder_inputs(model.prior, prior_sample(model.prior, options.n_mmd, prior_rng));
  const MmdEstimate mmd = mmd_rbf(agg.Z, prior_z);
  out.mmd = mmd.value;
  out.mmd_bandwidth = mmd.bandwidth;
  out.ess_min = agg.ess_min;
  return out;
}

std::string metrics_json(const RunMetrics& metrics) {
  auto value = [](std::optional<double> v) -> nlohmann::json {
    if (v && std::isfinite(*v)) {
      return *v;
    }
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["high_density_ratio"] = value(metrics.high_density_ratio);
  j["std_within_modes"] = value(metrics.std_within_modes);
  j["mmd"] = value(metrics.mmd);
  j["mmd_bandwidth"] = value(metrics.mmd_bandwidth);
  j["ess_min"] = value(metrics.ess_min);
  j["seed"] = metrics.seed;
  return j.dump(2) + "\n";
}

}  // namespace cvae
