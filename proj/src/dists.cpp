#include "cvae/dists.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cvae/textio.hpp"

namespace cvae {

GaussianPrior::GaussianPrior(std::vector<double> m, std::vector<double> s)
    : mean(std::move(m)), stddev(std::move(s)) {
  if (mean.empty() || mean.size() != stddev.size()) {
    throw std::invalid_argument("GaussianPrior: mean and stddev must be non-empty and equal length");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !(stddev[i] > 0.0) || !std::isfinite(stddev[i])) {
      throw std::invalid_argument("GaussianPrior: stddev must be positive and finite");
    }
  }
}

GaussianPrior GaussianPrior::standard(std::size_t dim) {
  return GaussianPrior(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
}

CategoricalPrior::CategoricalPrior(std::vector<double> p, Tensor2 a)
    : probs(std::move(p)), atoms(std::move(a)) {
  if (probs.empty()) {
    throw std::invalid_argument("CategoricalPrior: no categories");
  }
  double total = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("CategoricalPrior: probabilities must be nonnegative");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("CategoricalPrior: probabilities must sum to 1");
  }
  if (atoms.rows() != probs.size() || atoms.cols() == 0) {
    throw std::invalid_argument("CategoricalPrior: need one atom row per category");
  }
}

CategoricalPrior CategoricalPrior::with_random_atoms(std::vector<double> probs, std::size_t dim,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  Tensor2 atoms(probs.size(), dim);
  for (double& v : atoms.flat()) {
    v = rng.normal();
  }
  return CategoricalPrior(std::move(probs), std::move(atoms));
}

namespace {

std::size_t sample_category(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) {
      continue;
    }
    last_positive = k;
    cumulative += probs[k];
    if (u < cumulative) {
      return k;
    }
  }
  return last_positive;
}

}  // namespace

Tensor2 prior_sample(const Prior& prior, std::size_t n, Rng& rng) {
  if (n == 0) {
    throw std::invalid_argument("prior_sample: n must be at least 1");
  }
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    Tensor2 out(n, g->dim());
    for (std::size_t r = 0; r < n; ++r) {
      auto row = out.row(r);
      for (std::size_t d = 0; d < g->dim(); ++d) {
        row[d] = g->mean[d] + g->stddev[d] * rng.normal();
      }
    }
    return out;
  }
  const auto& c = std::get<CategoricalPrior>(prior);
  Tensor2 out(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    out(r, 0) = static_cast<double>(sample_category(c.probs, rng));
  }
  return out;
}

double prior_log_density(const Prior& prior, std::span<const double> z) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    if (z.size() != g->dim()) {
      throw std::invalid_argument("prior_log_density: dimension mismatch");
    }
    const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double total = 0.0;
    for (std::size_t d = 0; d < z.size(); ++d) {
      const double s = (z[d] - g->mean[d]) / g->stddev[d];
      total += -0.5 * s * s - std::log(g->stddev[d]) - half_log_two_pi;
    }
    return total;
  }
  const auto& c = std::get<CategoricalPrior>(prior);
  if (z.size() != 1) {
    throw std::invalid_argument("prior_log_density: categorical sample must be a single index");
  }
  const double k = z[0];
  if (!(k >= 0.0) || k != std::floor(k) || static_cast<std::size_t>(k) >= c.probs.size()) {
    throw std::invalid_argument("prior_log_density: category out of range");
  }
  return std::log(c.probs[static_cast<std::size_t>(k)]);
}

Tensor2 decoder_inputs(const Prior& prior, const Tensor2& samples) {
  if (std::holds_alternative<GaussianPrior>(prior)) {
    return samples;
  }
  const auto& c = std::get<CategoricalPrior>(prior);
  Tensor2 out(samples.rows(), c.atom_dim());
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    const auto k = static_cast<std::size_t>(samples(r, 0));
    if (k >= c.num_categories()) {
      throw std::invalid_argument("decoder_inputs: category out of range");
    }
    const auto atom = c.atoms.row(k);
    std::copy(atom.begin(), atom.end(), out.row(r).begin());
  }
  return out;
}

std::size_t latent_input_dim(const Prior& prior) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    return g->dim();
  }
  return std::get<CategoricalPrior>(prior).atom_dim();
}

EmpiricalMeasure::EmpiricalMeasure(Tensor2 p, std::vector<double> w)
    : points(std::move(p)), weights(std::move(w)) {
  if (points.rows() == 0) {
    throw std::invalid_argument("EmpiricalMeasure: no points");
  }
  if (weights.size() != points.rows()) {
    throw std::invalid_argument("EmpiricalMeasure: one weight per point required");
  }
  double total = 0.0;
  for (double v : weights) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("EmpiricalMeasure: weights must be nonnegative and finite");
    }
    total += v;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("EmpiricalMeasure: weights sum to zero");
  }
  for (double& v : weights) {
    v /= total;
  }
}

bool EmpiricalMeasure::is_uniform() const {
  for (double w : weights) {
    if (w != weights.front()) {
      return false;
    }
  }
  return true;
}

EmpiricalMeasure empirical_from_rows(Tensor2 points) {
  if (points.rows() == 0) {
    throw std::invalid_argument("empirical_from_rows: empty input");
  }
  const std::size_t m = points.rows();
  std::vector<double> weights(m, 1.0 / static_cast<double>(m));
  EmpiricalMeasure out;
  out.points = std::move(points);
  out.weights = std::move(weights);
  return out;
}

namespace {

std::vector<std::vector<double>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field(line.data() + start,
                                   (comma == std::string::npos ? line.size() : comma) - start);
      try {
        row.push_back(parse_double(field));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": cannot parse '" + std::string(field) + "'");
      }
      if (comma == std::string::npos) {
        break;
      }
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": inconsistent column count");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_row(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      os << ',';
    }
    os << format_double(values[i]);
  }
  os << '\n';
}

}  // namespace

void save_matrix_csv(const std::filesystem::path& path, const Tensor2& values) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (std::size_t r = 0; r < values.rows(); ++r) {
    write_row(out, values.row(r));
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

Tensor2 load_matrix_csv(const std::filesystem::path& path) {
  const auto rows = read_csv_rows(path);
  if (rows.empty()) {
    return Tensor2{};
  }
  std::vector<double> flat;
  flat.reserve(rows.size() * rows.front().size());
  for (const auto& r : rows) {
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor2(rows.size(), rows.front().size(), std::move(flat));
}

void save_csv(const std::filesystem::path& path, const EmpiricalMeasure& measure,
              WeightColumn weights) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  std::vector<double> row(measure.dim() + (weights == WeightColumn::Present ? 1 : 0));
  for (std::size_t r = 0; r < measure.size(); ++r) {
    const auto p = measure.points.row(r);
    std::copy(p.begin(), p.end(), row.begin());
    if (weights == WeightColumn::Present) {
      row.back() = measure.weights[r];
    }
    write_row(out, row);
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

EmpiricalMeasure load_csv(const std::filesystem::path& path, WeightColumn weights) {
  Tensor2 table = load_matrix_csv(path);
  if (table.rows() == 0) {
    throw std::runtime_error(path.string() + ": no data rows");
  }
  if (weights == WeightColumn::Absent) {
    return empirical_from_rows(std::move(table));
  }
  if (table.cols() < 2) {
    throw std::runtime_error(path.string() + ": weight column requires at least two columns");
  }
  const std::size_t dim = table.cols() - 1;
  Tensor2 points(table.rows(), dim);
  std::vector<double> w(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto src = table.row(r);
    std::copy_n(src.begin(), dim, points.row(r).begin());
    w[r] = src[dim];
  }
  return EmpiricalMeasure(std::move(points), std::move(w));
}

}  // namespace cvae
