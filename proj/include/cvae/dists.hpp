#ifndef CVAE_DISTS_HPP
#define CVAE_DISTS_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

/// Diagonal Gaussian prior over latent space.
struct GaussianPrior {
  std::vector<double> mean;
  std::vector<double> stddev;

  GaussianPrior() = default;
  GaussianPrior(std::vector<double> mean, std::vector<double> stddev);
  static GaussianPrior standard(std::size_t dim);

  std::size_t dim() const { return mean.size(); }
};

/// Categorical prior over K latent atoms.
///
/// Samples are category indices. Each category is fed to decoders through an
/// atom row (K x d_z), which the Sinkhorn trainer may update.
struct CategoricalPrior {
  std::vector<double> probs;
  Tensor2 atoms;

  CategoricalPrior() = default;
  CategoricalPrior(std::vector<double> probs, Tensor2 atoms);
  /// Atoms drawn i.i.d. from N(0, I_dim) with the given seed.
  static CategoricalPrior with_random_atoms(std::vector<double> probs, std::size_t dim,
                                            std::uint64_t seed);

  std::size_t num_categories() const { return probs.size(); }
  std::size_t atom_dim() const { return atoms.cols(); }
};

using Prior = std::variant<GaussianPrior, CategoricalPrior>;

/// n x dim Gaussian draws, or n x 1 category indices for a categorical prior.
Tensor2 prior_sample(const Prior& prior, std::size_t n, Rng& rng);

/// Exact log density (Gaussian) or log probability of the category in z[0].
double prior_log_density(const Prior& prior, std::span<const double> z);

/// Maps prior samples to decoder inputs: identity for Gaussians, atom rows for
/// category indices.
Tensor2 decoder_inputs(const Prior& prior, const Tensor2& samples);

/// Dimension of the decoder input implied by the prior.
std::size_t latent_input_dim(const Prior& prior);

/// Weighted point cloud. Weights are nonnegative and sum to one.
struct EmpiricalMeasure {
  Tensor2 points;
  std::vector<double> weights;

  EmpiricalMeasure() = default;
  /// Rejects negative or non-finite weights and renormalizes the rest.
  EmpiricalMeasure(Tensor2 points, std::vector<double> weights);

  std::size_t size() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }
  bool is_uniform() const;
};

/// Uniform weights 1/m. Throws on empty input.
EmpiricalMeasure empirical_from_rows(Tensor2 points);

enum class WeightColumn { Absent, Present };

/// Headerless CSV, one point per row; optionally a trailing weight column.
void save_csv(const std::filesystem::path& path, const EmpiricalMeasure& measure,
              WeightColumn weights = WeightColumn::Absent);
EmpiricalMeasure load_csv(const std::filesystem::path& path,
                          WeightColumn weights = WeightColumn::Absent);

/// Plain matrix CSV helpers shared by the CLI and tests.
void save_matrix_csv(const std::filesystem::path& path, const Tensor2& values);
Tensor2 load_matrix_csv(const std::filesystem::path& path);

}  // namespace cvae

#endif  // CVAE_DISTS_HPP
