#ifndef CVAE_COST_HPP
#define CVAE_COST_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cvae/dists.hpp"
#include "cvae/mlp.hpp"
#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

enum class Likelihood { Gaussian, Bernoulli };

/// Conditional likelihood p(x|z) parameterized by an MLP; its negative log
/// density is the transport cost c(x, z).
///
/// Gaussian: the net maps d_z -> 2 d_x; the first d_x outputs are the mean and
/// the last d_x the log-variance, floored at log_var_floor.
/// Bernoulli: the net maps d_z -> d_x logits, clamped to +-logit_clamp.
struct Decoder {
  Likelihood likelihood = Likelihood::Gaussian;
  MlpParams net;
  double log_var_floor = -10.0;
  double logit_clamp = 15.0;

  std::size_t latent_dim() const { return net.input_dim(); }
  std::size_t data_dim() const;

  friend bool operator==(const Decoder&, const Decoder&) = default;
};

/// hidden lists the hidden-layer widths, e.g. {128, 128, 128}.
Decoder make_gaussian_decoder(std::size_t latent_dim, std::size_t data_dim,
                              std::span<const std::size_t> hidden, std::uint64_t seed);
Decoder make_bernoulli_decoder(std::size_t latent_dim, std::size_t data_dim,
                               std::span<const std::size_t> hidden, std::uint64_t seed);

/// Cost matrix between m data points and n latent points.
///
/// Stored latent-major (one contiguous row of m costs per latent point) since
/// every consumer reduces over data points for a fixed z. Logical shape is
/// m x n: entry (i, j) is c(x_i, z_j).
class CostMatrix {
 public:
  CostMatrix() = default;
  /// by_latent has shape n x m.
  explicit CostMatrix(Tensor2 by_latent, std::uint64_t latent_batch_id = 0);
  /// Builds from a logical m x n table.
  static CostMatrix from_data_major(const Tensor2& values);

  std::size_t num_data() const { return by_latent_.cols(); }
  std::size_t num_latent() const { return by_latent_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return by_latent_(j, i); }
  /// Costs of every data point against latent point j.
  std::span<const double> column(std::size_t j) const { return by_latent_.row(j); }
  const Tensor2& by_latent() const { return by_latent_; }
  /// Logical m x n table.
  Tensor2 values() const;

  std::vector<std::size_t> data_ids;
  std::uint64_t latent_batch_id = 0;

 private:
  Tensor2 by_latent_;
};

/// Raw network outputs for a batch of latent points, with the backprop cache.
struct DecoderPass {
  Tensor2 heads;
  MlpCache cache;
};

DecoderPass decoder_forward(const Decoder& decoder, const Tensor2& Z);

/// c(x, z) for the latent point whose raw head is `head`.
double cost_from_head(const Decoder& decoder, std::span<const double> x,
                      std::span<const double> head);

/// out += sum_i weights[i] * d c(x_i, .) / d head, over the rows of `points`.
/// Entries with zero weight are skipped.
void accumulate_head_grad(const Decoder& decoder, std::span<const double> head,
                          const Tensor2& points, std::span<const double> weights,
                          std::span<double> out);

double cost_eval(const Decoder& decoder, std::span<const double> x, std::span<const double> z);

/// out[i] = c(x_i, z) over the rows of `points` for the latent point whose
/// raw head is `head`. One column of cost_matrix_from_heads.
void cost_column(const Decoder& decoder, const Tensor2& points, std::span<const double> head,
                 std::span<double> out);

/// Entry (i, j) equals cost_eval(decoder, x_i, z_j) bit for bit; one decoder
/// forward per z_j.
CostMatrix cost_matrix(const Decoder& decoder, const EmpiricalMeasure& data, const Tensor2& Z);
CostMatrix cost_matrix_from_heads(const Decoder& decoder, const Tensor2& points,
                                  const Tensor2& heads);

/// Gradient of weight * c(x, z) with respect to the decoder parameters, plus
/// the gradient with respect to z.
MlpBackward cost_backward(const Decoder& decoder, std::span<const double> x,
                          std::span<const double> z, double weight);

struct CostMinimum {
  std::vector<double> argmin;
  double min_value = 0.0;
};

/// Closed-form minimizer of the Gaussian cost in x: the decoder mean, with
/// value sum_i log sqrt(2 pi sigma_i^2). Throws for non-Gaussian decoders.
CostMinimum cost_minimum(const Decoder& decoder, std::span<const double> z);

/// Gaussian means or Bernoulli probabilities, one row per latent point.
Tensor2 decode_mean(const Decoder& decoder, const Tensor2& Z);

/// Draws x ~ p(x|z) for every latent row.
Tensor2 sample_observation(const Decoder& decoder, const Tensor2& Z, Rng& rng);

}  // namespace cvae

#endif  // CVAE_COST_HPP
