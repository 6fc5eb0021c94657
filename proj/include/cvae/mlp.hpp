#ifndef CVAE_MLP_HPP
#define CVAE_MLP_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cvae/tensor.hpp"

namespace cvae {

enum class Activation { ReLU };

/// Fully connected network: ReLU on every hidden layer, linear output layer.
///
/// weights[k] has shape layer_sizes[k+1] x layer_sizes[k] and biases[k] has
/// length layer_sizes[k+1]. The same struct doubles as the gradient container
/// returned by mlp_backward.
struct MlpParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<Tensor2> weights;
  std::vector<std::vector<double>> biases;
  Activation activation = Activation::ReLU;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Intermediate values kept by mlp_forward for the backward pass.
struct MlpCache {
  std::vector<Tensor2> layer_inputs;  // input to layer k (post-activation of layer k-1)
  std::vector<Tensor2> pre_activations;  // affine output of layer k
};

struct MlpForward {
  Tensor2 output;
  MlpCache cache;
};

struct MlpBackward {
  MlpParams grads;
  Tensor2 grad_input;
};

/// He-initialized weights (std sqrt(2 / fan_in)) and zero biases.
MlpParams mlp_init(std::span<const std::size_t> layer_sizes, std::uint64_t seed);

/// Same shapes as `like`, all entries zero.
MlpParams mlp_zeros_like(const MlpParams& like);

MlpForward mlp_forward(const MlpParams& params, const Tensor2& batch);

/// Reverse-mode gradients of sum(grad_output .* output). The ReLU derivative
/// at exactly zero is taken as 0.
MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache,
                         const Tensor2& grad_output);

/// Views of every parameter array, weights and biases interleaved per layer.
std::vector<std::span<double>> parameter_spans(MlpParams& params);
std::vector<std::span<const double>> parameter_spans(const MlpParams& params);

/// All parameters concatenated in parameter_spans order, and the inverse.
std::vector<double> flatten(const MlpParams& params);
void unflatten(std::span<const double> flat, MlpParams& params);

/// dst += scale * src over matching shapes.
void axpy(MlpParams& dst, double scale, const MlpParams& src);

void write_mlp(std::ostream& os, const MlpParams& params);
MlpParams read_mlp(std::istream& is);

}  // namespace cvae

#endif  // CVAE_MLP_HPP
