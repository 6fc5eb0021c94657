#include "cvae/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "cvae/rng.hpp"
#include "cvae/textio.hpp"

namespace cvae {

std::size_t MlpParams::num_parameters() const {
  std::size_t total = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    total += weights[k].size() + biases[k].size();
  }
  return total;
}

MlpParams mlp_init(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("mlp_init: need at least input and output sizes");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) {
      throw std::invalid_argument("mlp_init: zero layer size");
    }
  }
  Rng rng(seed);
  MlpParams params;
  params.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const std::size_t fan_in = layer_sizes[k];
    const std::size_t fan_out = layer_sizes[k + 1];
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor2 w(fan_out, fan_in);
    for (double& v : w.flat()) {
      v = scale * rng.normal();
    }
    params.weights.push_back(std::move(w));
    params.biases.emplace_back(fan_out, 0.0);
  }
  return params;
}

MlpParams mlp_zeros_like(const MlpParams& like) {
  MlpParams out;
  out.layer_sizes = like.layer_sizes;
  out.activation = like.activation;
  for (std::size_t k = 0; k < like.weights.size(); ++k) {
    out.weights.emplace_back(like.weights[k].rows(), like.weights[k].cols());
    out.biases.emplace_back(like.biases[k].size(), 0.0);
  }
  return out;
}

namespace {

void check_shapes(const MlpParams& params) {
  if (params.layer_sizes.size() < 2 || params.weights.size() + 1 != params.layer_sizes.size() ||
      params.biases.size() != params.weights.size()) {
    throw std::invalid_argument("MlpParams: inconsistent layer count");
  }
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    if (params.weights[k].rows() != params.layer_sizes[k + 1] ||
        params.weights[k].cols() != params.layer_sizes[k] ||
        params.biases[k].size() != params.layer_sizes[k + 1]) {
      throw std::invalid_argument("MlpParams: layer " + std::to_string(k) + " has wrong shape");
    }
  }
}

}  // namespace

MlpForward mlp_forward(const MlpParams& params, const Tensor2& batch) {
  check_shapes(params);
  if (batch.cols() != params.input_dim()) {
    throw std::invalid_argument("mlp_forward: batch has " + std::to_string(batch.cols()) +
                                " columns, network expects " +
                                std::to_string(params.input_dim()));
  }
  const std::size_t n = batch.rows();
  const std::size_t layers = params.num_layers();
  MlpForward result;
  result.cache.layer_inputs.reserve(layers);
  result.cache.pre_activations.reserve(layers);

  Tensor2 current = batch;
  for (std::size_t k = 0; k < layers; ++k) {
    const Tensor2& w = params.weights[k];
    const std::vector<double>& b = params.biases[k];
    Tensor2 pre(n, w.rows());
    for (std::size_t r = 0; r < n; ++r) {
      const auto in = current.row(r);
      auto out = pre.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        out[o] = b[o] + dot(in, w.row(o));
      }
    }
    result.cache.layer_inputs.push_back(std::move(current));
    if (k + 1 < layers) {
      current = pre;
      for (double& v : current.flat()) {
        v = v > 0.0 ? v : 0.0;
      }
    }
    result.cache.pre_activations.push_back(std::move(pre));
  }
  result.output = result.cache.pre_activations.back();
  return result;
}

MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache,
                         const Tensor2& grad_output) {
  check_shapes(params);
  const std::size_t layers = params.num_layers();
  if (cache.layer_inputs.size() != layers || cache.pre_activations.size() != layers) {
    throw std::invalid_argument("mlp_backward: cache does not match network depth");
  }
  const Tensor2& last = cache.pre_activations.back();
  if (grad_output.rows() != last.rows() || grad_output.cols() != last.cols()) {
    throw std::invalid_argument("mlp_backward: grad_output shape differs from forward output");
  }
  const std::size_t n = grad_output.rows();
  MlpBackward result{mlp_zeros_like(params), Tensor2{}};

  Tensor2 grad = grad_output;
  for (std::size_t kk = layers; kk-- > 0;) {
    const Tensor2& w = params.weights[kk];
    const Tensor2& input = cache.layer_inputs[kk];
    if (input.rows() != n || input.cols() != w.cols()) {
      throw std::invalid_argument("mlp_backward: cached input has wrong shape");
    }
    Tensor2& gw = result.grads.weights[kk];
    std::vector<double>& gb = result.grads.biases[kk];
    Tensor2 grad_in(n, w.cols());
    for (std::size_t r = 0; r < n; ++r) {
      const auto g = grad.row(r);
      const auto in = input.row(r);
      auto gi = grad_in.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double go = g[o];
        if (go == 0.0) {
          continue;
        }
        gb[o] += go;
        auto gw_row = gw.row(o);
        const auto w_row = w.row(o);
        for (std::size_t c = 0; c < w.cols(); ++c) {
          gw_row[c] += go * in[c];
          gi[c] += go * w_row[c];
        }
      }
    }
    if (kk > 0) {
      // ReLU mask from the previous layer's pre-activation; derivative 0 at 0.
      const Tensor2& pre = cache.pre_activations[kk - 1];
      auto gi = grad_in.flat();
      const auto p = pre.flat();
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (!(p[i] > 0.0)) {
          gi[i] = 0.0;
        }
      }
    }
    grad = std::move(grad_in);
  }
  result.grad_input = std::move(grad);
  return result;
}

std::vector<std::span<double>> parameter_spans(MlpParams& params) {
  std::vector<std::span<double>> spans;
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    spans.emplace_back(params.weights[k].flat());
    spans.emplace_back(params.biases[k]);
  }
  return spans;
}

std::vector<std::span<const double>> parameter_spans(const MlpParams& params) {
  std::vector<std::span<const double>> spans;
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    spans.emplace_back(params.weights[k].flat());
    spans.emplace_back(params.biases[k]);
  }
  return spans;
}

std::vector<double> flatten(const MlpParams& params) {
  std::vector<double> out;
  out.reserve(params.num_parameters());
  for (auto span : parameter_spans(params)) {
    out.insert(out.end(), span.begin(), span.end());
  }
  return out;
}

void unflatten(std::span<const double> flat, MlpParams& params) {
  if (flat.size() != params.num_parameters()) {
    throw std::invalid_argument("unflatten: length does not match the network");
  }
  std::size_t offset = 0;
  for (auto span : parameter_spans(params)) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), span.size(), span.begin());
    offset += span.size();
  }
}

void axpy(MlpParams& dst, double scale, const MlpParams& src) {
  auto d = parameter_spans(dst);
  const auto s = parameter_spans(src);
  if (d.size() != s.size()) {
    throw std::invalid_argument("axpy: parameter layouts differ");
  }
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (d[k].size() != s[k].size()) {
      throw std::invalid_argument("axpy: parameter layouts differ");
    }
    for (std::size_t i = 0; i < d[k].size(); ++i) {
      d[k][i] += scale * s[k][i];
    }
  }
}

void write_mlp(std::ostream& os, const MlpParams& params) {
  check_shapes(params);
  os << "mlp " << params.layer_sizes.size();
  for (std::size_t s : params.layer_sizes) {
    os << ' ' << s;
  }
  os << "\nactivation relu\n";
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    const Tensor2& w = params.weights[k];
    os << "weights " << k << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (std::size_t r = 0; r < w.rows(); ++r) {
      write_doubles(os, w.row(r));
    }
    os << "bias " << k << ' ' << params.biases[k].size() << '\n';
    write_doubles(os, params.biases[k]);
  }
}

MlpParams read_mlp(std::istream& is) {
  TokenReader in(is);
  in.expect("mlp");
  const std::size_t count = in.read_size();
  MlpParams params;
  for (std::size_t i = 0; i < count; ++i) {
    params.layer_sizes.push_back(in.read_size());
  }
  in.expect("activation");
  in.expect("relu");
  if (count < 2) {
    throw std::runtime_error("read_mlp: fewer than two layer sizes");
  }
  for (std::size_t k = 0; k + 1 < count; ++k) {
    in.expect("weights");
    if (in.read_size() != k) {
      throw std::runtime_error("read_mlp: layers out of order");
    }
    const std::size_t rows = in.read_size();
    const std::size_t cols = in.read_size();
    params.weights.emplace_back(rows, cols, in.read_doubles(rows * cols));
    in.expect("bias");
    if (in.read_size() != k) {
      throw std::runtime_error("read_mlp: layers out of order");
    }
    params.biases.push_back(in.read_doubles(in.read_size()));
  }
  check_shapes(params);
  return params;
}

}  // namespace cvae
