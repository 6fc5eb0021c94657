#include "cvae/cost.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvae {

namespace {

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

Decoder make_decoder(Likelihood likelihood, std::size_t latent_dim, std::size_t data_dim,
                     std::span<const std::size_t> hidden, std::uint64_t seed) {
  if (latent_dim == 0 || data_dim == 0) {
    throw std::invalid_argument("decoder dimensions must be positive");
  }
  std::vector<std::size_t> sizes;
  sizes.push_back(latent_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(likelihood == Likelihood::Gaussian ? 2 * data_dim : data_dim);
  Decoder d;
  d.likelihood = likelihood;
  d.net = mlp_init(sizes, seed);
  return d;
}

// Per-latent quantities that turn c(x, z) into a cheap function of x.
//   Gaussian:  constant + sum_d scale_d * (x_d - center_d)^2
//   Bernoulli: constant - <x, center>
struct PreparedHead {
  std::vector<double> center;
  std::vector<double> scale;
  double constant = 0.0;
};

PreparedHead prepare(const Decoder& decoder, std::span<const double> head) {
  const std::size_t dx = decoder.data_dim();
  if (head.size() != decoder.net.output_dim()) {
    throw std::invalid_argument("decoder head has wrong width");
  }
  PreparedHead p;
  p.center.resize(dx);
  if (decoder.likelihood == Likelihood::Gaussian) {
    p.scale.resize(dx);
    double constant = 0.0;
    for (std::size_t d = 0; d < dx; ++d) {
      const double log_var = std::max(head[dx + d], decoder.log_var_floor);
      p.center[d] = head[d];
      p.scale[d] = 0.5 * std::exp(-log_var);
      constant += 0.5 * (kLogTwoPi + log_var);
    }
    p.constant = constant;
  } else {
    double constant = 0.0;
    for (std::size_t d = 0; d < dx; ++d) {
      const double logit = std::clamp(head[d], -decoder.logit_clamp, decoder.logit_clamp);
      p.center[d] = logit;
      constant += softplus(logit);
    }
    p.constant = constant;
  }
  if (!std::isfinite(p.constant)) {
    throw std::runtime_error("decoder produced a non-finite output");
  }
  return p;
}

double prepared_cost(Likelihood likelihood, const PreparedHead& p, std::span<const double> x) {
  if (likelihood == Likelihood::Gaussian) {
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double diff = x[d] - p.center[d];
      acc += p.scale[d] * (diff * diff);
    }
    return p.constant + acc;
  }
  return p.constant - dot(x, p.center);
}

void check_latent(const Decoder& decoder, std::size_t cols) {
  if (cols != decoder.latent_dim()) {
    throw std::invalid_argument("latent points have " + std::to_string(cols) +
                                " columns, decoder expects " +
                                std::to_string(decoder.latent_dim()));
  }
}

void check_data(const Decoder& decoder, std::size_t cols) {
  if (cols != decoder.data_dim()) {
    throw std::invalid_argument("data points have " + std::to_string(cols) +
                                " columns, decoder expects " + std::to_string(decoder.data_dim()));
  }
}

}  // namespace

std::size_t Decoder::data_dim() const {
  const std::size_t out = net.output_dim();
  return likelihood == Likelihood::Gaussian ? out / 2 : out;
}

Decoder make_gaussian_decoder(std::size_t latent_dim, std::size_t data_dim,
                              std::span<const std::size_t> hidden, std::uint64_t seed) {
  return make_decoder(Likelihood::Gaussian, latent_dim, data_dim, hidden, seed);
}

Decoder make_bernoulli_decoder(std::size_t latent_dim, std::size_t data_dim,
                               std::span<const std::size_t> hidden, std::uint64_t seed) {
  return make_decoder(Likelihood::Bernoulli, latent_dim, data_dim, hidden, seed);
}

CostMatrix::CostMatrix(Tensor2 by_latent, std::uint64_t batch_id)
    : latent_batch_id(batch_id), by_latent_(std::move(by_latent)) {
  data_ids.resize(by_latent_.cols());
  for (std::size_t i = 0; i < data_ids.size(); ++i) {
    data_ids[i] = i;
  }
}

CostMatrix CostMatrix::from_data_major(const Tensor2& values) {
  Tensor2 t(values.cols(), values.rows());
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (std::size_t j = 0; j < values.cols(); ++j) {
      t(j, i) = values(i, j);
    }
  }
  return CostMatrix(std::move(t));
}

Tensor2 CostMatrix::values() const {
  Tensor2 out(num_data(), num_latent());
  for (std::size_t j = 0; j < num_latent(); ++j) {
    for (std::size_t i = 0; i < num_data(); ++i) {
      out(i, j) = by_latent_(j, i);
    }
  }
  return out;
}

DecoderPass decoder_forward(const Decoder& decoder, const Tensor2& Z) {
  check_latent(decoder, Z.cols());
  MlpForward f = mlp_forward(decoder.net, Z);
  if (!f.output.all_finite()) {
    throw std::runtime_error("decoder produced a non-finite output");
  }
  return {std::move(f.output), std::move(f.cache)};
}

double cost_from_head(const Decoder& decoder, std::span<const double> x,
                      std::span<const double> head) {
  check_data(decoder, x.size());
  return prepared_cost(decoder.likelihood, prepare(decoder, head), x);
}

void accumulate_head_grad(const Decoder& decoder, std::span<const double> head,
                          const Tensor2& points, std::span<const double> weights,
                          std::span<double> out) {
  const std::size_t dx = decoder.data_dim();
  check_data(decoder, points.cols());
  if (weights.size() != points.rows() || out.size() != head.size()) {
    throw std::invalid_argument("accumulate_head_grad: size mismatch");
  }
  if (decoder.likelihood == Likelihood::Gaussian) {
    // dc/dmean_d = -(x_d - mean_d) / var_d ; dc/dlogvar_d = 1/2 - (x_d - mean_d)^2 / (2 var_d)
    std::vector<double> first(dx, 0.0);
    std::vector<double> second(dx, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      const double w = weights[i];
      if (w == 0.0) {
        continue;
      }
      total += w;
      const auto x = points.row(i);
      for (std::size_t d = 0; d < dx; ++d) {
        const double diff = x[d] - head[d];
        first[d] += w * diff;
        second[d] += w * (diff * diff);
      }
    }
    for (std::size_t d = 0; d < dx; ++d) {
      const double raw = head[dx + d];
      const double log_var = std::max(raw, decoder.log_var_floor);
      const double inv_var = std::exp(-log_var);
      out[d] += -first[d] * inv_var;
      if (raw > decoder.log_var_floor) {
        out[dx + d] += 0.5 * total - 0.5 * second[d] * inv_var;
      }
    }
    return;
  }
  // dc/dlogit_d = sigmoid(logit_d) - x_d inside the clamp, 0 outside.
  std::vector<double> weighted_x(dx, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const double w = weights[i];
    if (w == 0.0) {
      continue;
    }
    total += w;
    const auto x = points.row(i);
    for (std::size_t d = 0; d < dx; ++d) {
      weighted_x[d] += w * x[d];
    }
  }
  for (std::size_t d = 0; d < dx; ++d) {
    const double raw = head[d];
    if (raw > -decoder.logit_clamp && raw < decoder.logit_clamp) {
      out[d] += total * sigmoid(raw) - weighted_x[d];
    }
  }
}

double cost_eval(const Decoder& decoder, std::span<const double> x, std::span<const double> z) {
  check_data(decoder, x.size());
  Tensor2 zt(1, z.size(), std::vector<double>(z.begin(), z.end()));
  const DecoderPass pass = decoder_forward(decoder, zt);
  return prepared_cost(decoder.likelihood, prepare(decoder, pass.heads.row(0)), x);
}

void cost_column(const Decoder& decoder, const Tensor2& points, std::span<const double> head,
                 std::span<double> out) {
  check_data(decoder, points.cols());
  const std::size_t m = points.rows();
  if (out.size() != m) {
    throw std::invalid_argument("cost_column: output length does not match the data");
  }
  const PreparedHead p = prepare(decoder, head);
  if (decoder.likelihood == Likelihood::Gaussian) {
    // Dimension-outer loop with the per-entry summation order of
    // prepared_cost, so both agree bit for bit.
    const std::size_t dx = p.center.size();
    const double* x = points.flat().data();
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t d = 0; d < dx; ++d) {
      const double center = p.center[d];
      const double scale = p.scale[d];
      for (std::size_t i = 0; i < m; ++i) {
        const double diff = x[i * dx + d] - center;
        out[i] += scale * (diff * diff);
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      out[i] = p.constant + out[i];
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = prepared_cost(decoder.likelihood, p, points.row(i));
  }
}

CostMatrix cost_matrix_from_heads(const Decoder& decoder, const Tensor2& points,
                                  const Tensor2& heads) {
  check_data(decoder, points.cols());
  Tensor2 by_latent(heads.rows(), points.rows());
  for (std::size_t j = 0; j < heads.rows(); ++j) {
    cost_column(decoder, points, heads.row(j), by_latent.row(j));
  }
  return CostMatrix(std::move(by_latent));
}

CostMatrix cost_matrix(const Decoder& decoder, const EmpiricalMeasure& data, const Tensor2& Z) {
  const DecoderPass pass = decoder_forward(decoder, Z);
  return cost_matrix_from_heads(decoder, data.points, pass.heads);
}

MlpBackward cost_backward(const Decoder& decoder, std::span<const double> x,
                          std::span<const double> z, double weight) {
  if (!std::isfinite(weight)) {
    throw std::invalid_argument("cost_backward: non-finite weight");
  }
  check_data(decoder, x.size());
  Tensor2 zt(1, z.size(), std::vector<double>(z.begin(), z.end()));
  const DecoderPass pass = decoder_forward(decoder, zt);
  Tensor2 grad_head(1, pass.heads.cols());
  const Tensor2 xt(1, x.size(), std::vector<double>(x.begin(), x.end()));
  const double w[1] = {weight};
  accumulate_head_grad(decoder, pass.heads.row(0), xt, w, grad_head.row(0));
  MlpBackward back = mlp_backward(decoder.net, pass.cache, grad_head);
  for (const auto& s : parameter_spans(std::as_const(back.grads))) {
    for (double v : s) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("cost_backward: non-finite gradient");
      }
    }
  }
  return back;
}

CostMinimum cost_minimum(const Decoder& decoder, std::span<const double> z) {
  if (decoder.likelihood != Likelihood::Gaussian) {
    throw std::invalid_argument("cost_minimum: requires a Gaussian decoder");
  }
  Tensor2 zt(1, z.size(), std::vector<double>(z.begin(), z.end()));
  const DecoderPass pass = decoder_forward(decoder, zt);
  const auto head = pass.heads.row(0);
  const std::size_t dx = decoder.data_dim();
  CostMinimum result;
  result.argmin.assign(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(dx));
  // Same accumulation as the cost's constant term, so cost(argmin) matches exactly.
  result.min_value = prepare(decoder, head).constant;
  return result;
}

Tensor2 decode_mean(const Decoder& decoder, const Tensor2& Z) {
  const DecoderPass pass = decoder_forward(decoder, Z);
  const std::size_t dx = decoder.data_dim();
  Tensor2 out(Z.rows(), dx);
  for (std::size_t j = 0; j < Z.rows(); ++j) {
    const auto head = pass.heads.row(j);
    auto row = out.row(j);
    for (std::size_t d = 0; d < dx; ++d) {
      row[d] = decoder.likelihood == Likelihood::Gaussian
                   ? head[d]
                   : sigmoid(std::clamp(head[d], -decoder.logit_clamp, decoder.logit_clamp));
    }
  }
  return out;
}

Tensor2 sample_observation(const Decoder& decoder, const Tensor2& Z, Rng& rng) {
  const DecoderPass pass = decoder_forward(decoder, Z);
  const std::size_t dx = decoder.data_dim();
  Tensor2 out(Z.rows(), dx);
  for (std::size_t j = 0; j < Z.rows(); ++j) {
    const auto head = pass.heads.row(j);
    auto row = out.row(j);
    for (std::size_t d = 0; d < dx; ++d) {
      if (decoder.likelihood == Likelihood::Gaussian) {
        const double log_var = std::max(head[dx + d], decoder.log_var_floor);
        row[d] = head[d] + std::exp(0.5 * log_var) * rng.normal();
      } else {
        const double p =
            sigmoid(std::clamp(head[d], -decoder.logit_clamp, decoder.logit_clamp));
        row[d] = rng.uniform() < p ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

}  // namespace cvae
