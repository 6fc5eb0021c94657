#include "cvae/data.hpp"

#include <array>
#include <fstream>
#include <limits>

#include "cvae/rng.hpp"

namespace cvae {

GridDataset make_grid25(const GridSpec& spec) {
  if (spec.grid_values.empty() || !(spec.sigma > 0.0) || spec.samples_per_component == 0) {
    throw std::invalid_argument("make_grid25: empty grid, nonpositive sigma or zero samples");
  }
  const std::size_t g = spec.grid_values.size();
  const std::size_t components = g * g;
  Tensor2 means(components, 2);
  for (std::size_t a = 0; a < g; ++a) {
    for (std::size_t b = 0; b < g; ++b) {
      means(a * g + b, 0) = spec.grid_values[a];
      means(a * g + b, 1) = spec.grid_values[b];
    }
  }
  Rng rng(spec.seed);
  Tensor2 points(components * spec.samples_per_component, 2);
  std::vector<std::size_t> component(points.rows());
  std::size_t r = 0;
  for (std::size_t k = 0; k < components; ++k) {
    for (std::size_t s = 0; s < spec.samples_per_component; ++s, ++r) {
      points(r, 0) = means(k, 0) + spec.sigma * rng.normal();
      points(r, 1) = means(k, 1) + spec.sigma * rng.normal();
      component[r] = k;
    }
  }
  return {empirical_from_rows(std::move(points)), std::move(means), std::move(component)};
}

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IdxReadError(IdxError::Truncated, "truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

IdxImageSet read_idx_images(const std::filesystem::path& path, std::size_t max_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IdxReadError(IdxError::FileNotFound, "cannot open IDX file " + path.string());
  }
  const std::uint32_t magic = read_be32(in, path);
  if (magic != kIdxImageMagic) {
    throw IdxReadError(IdxError::BadMagic, "IDX magic mismatch in " + path.string());
  }
  const std::uint64_t count = read_be32(in, path);
  const std::uint64_t rows = read_be32(in, path);
  const std::uint64_t cols = read_be32(in, path);
  // 2^32 * 2^32 already overflows; keep the per-image size and total bounded.
  const std::uint64_t limit = std::numeric_limits<std::uint32_t>::max();
  if (rows * cols > limit || (rows * cols != 0 && count > limit / (rows * cols))) {
    throw IdxReadError(IdxError::DimensionOverflow,
                       "IDX dimensions too large in " + path.string());
  }
  IdxImageSet set;
  set.count = static_cast<std::size_t>(std::min<std::uint64_t>(count, max_count));
  set.rows = static_cast<std::size_t>(rows);
  set.cols = static_cast<std::size_t>(cols);
  set.pixels.resize(set.count * set.rows * set.cols);
  if (!set.pixels.empty() &&
      !in.read(reinterpret_cast<char*>(set.pixels.data()),
               static_cast<std::streamsize>(set.pixels.size()))) {
    throw IdxReadError(IdxError::Truncated, "truncated IDX pixel data in " + path.string());
  }
  return set;
}

void write_idx_images(const std::filesystem::path& path, const IdxImageSet& images) {
  if (images.pixels.size() != images.count * images.rows * images.cols) {
    throw std::invalid_argument("write_idx_images: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

EmpiricalMeasure binarize(const IdxImageSet& images, BinarizeMode mode) {
  const std::size_t d = images.rows * images.cols;
  Tensor2 points(images.count, d);
  auto flat = points.flat();
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double v = images.pixels[k] / 255.0;
    flat[k] = mode == BinarizeMode::MeanScale ? v : (v >= 0.5 ? 1.0 : 0.0);
  }
  return empirical_from_rows(std::move(points));
}

}  // namespace cvae
