#ifndef CVAE_DATA_HPP
#define CVAE_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvae/dists.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

struct GridSpec {
  std::vector<double> grid_values{-2.0, -1.0, 0.0, 1.0, 2.0};
  double sigma = 0.05;
  std::size_t samples_per_component = 300;
  std::uint64_t seed = 0;
};

struct GridDataset {
  EmpiricalMeasure data;
  Tensor2 means;                        // one row per component
  std::vector<std::size_t> component;  // generating component of each sample
};

/// Isotropic Gaussian mixture on the Cartesian grid grid_values^2. Samples
/// are grouped by component, components in row-major grid order.
GridDataset make_grid25(const GridSpec& spec);

struct IdxImageSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, image-major
};

enum class IdxError { FileNotFound, BadMagic, Truncated, DimensionOverflow };

class IdxReadError : public std::runtime_error {
 public:
  IdxReadError(IdxError code, const std::string& what) : std::runtime_error(what), code_(code) {}
  IdxError code() const { return code_; }

 private:
  IdxError code_;
};

/// Reads the first max_count images of an unsigned-byte IDX image file
/// (magic 0x00000803). Throws IdxReadError.
IdxImageSet read_idx_images(const std::filesystem::path& path,
                            std::size_t max_count = static_cast<std::size_t>(-1));
void write_idx_images(const std::filesystem::path& path, const IdxImageSet& images);

enum class BinarizeMode { Threshold, MeanScale };

/// Threshold: pixel/255 >= 0.5 -> 1, else 0. MeanScale: pixel/255.
EmpiricalMeasure binarize(const IdxImageSet& images, BinarizeMode mode);

}  // namespace cvae

#endif  // CVAE_DATA_HPP
