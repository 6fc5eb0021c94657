#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "json.hpp"
#include "cvae/data.hpp"
#include "cvae/eval.hpp"
#include "support.hpp"

using namespace cvae;
using cvae::testing::random_tensor;

namespace {

const std::vector<std::size_t> kHidden{6, 5};

double naive_mmd(const Tensor2& a, const Tensor2& b, double h) {
  auto k = [&](std::span<const double> x, std::span<const double> y) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
    return std::exp(-d2 / (2.0 * h * h));
  };
  const double n = static_cast<double>(a.rows()), m = static_cast<double>(b.rows());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j)
      if (i != j) xx += k(a.row(i), a.row(j));
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      if (i != j) yy += k(b.row(i), b.row(j));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) xy += k(a.row(i), b.row(j));
  return xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2.0 * xy / (n * m);
}

Tensor2 rotate(const Tensor2& x, double angle) {
  Tensor2 r(x.rows(), 2);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    r(i, 0) = std::cos(angle) * x(i, 0) - std::sin(angle) * x(i, 1);
    r(i, 1) = std::sin(angle) * x(i, 0) + std::cos(angle) * x(i, 1);
  }
  return r;
}

TrainedModel model_with(Decoder d, SemiDualPotential pot, Prior prior) {
  TrainedModel m;
  m.decoder = std::move(d);
  m.potential = std::move(pot);
  m.prior = std::move(prior);
  return m;
}

}  // namespace

TEST_CASE("high density ratio on exact means and ground-truth draws") {
  const GridDataset g = make_grid25(GridSpec{});
  const MixtureMetrics exact = high_density_ratio(g.means, g.means, 0.05);
  CHECK(exact.high_density_ratio == 1.0);
  CHECK(exact.std_within_modes == 0.0);

  GridSpec big;
  big.samples_per_component = 4000;
  big.seed = 12;
  const GridDataset draws = make_grid25(big);
  const MixtureMetrics mm = high_density_ratio(draws.data.points, draws.means, 0.05);
  // P(chi2_2 > 16) = exp(-8).
  CHECK(std::exp(-8.0) == doctest::Approx(3.35e-4).epsilon(0.01));
  CHECK(mm.high_density_ratio >= 0.9996);
  CHECK(mm.std_within_modes == doctest::Approx(0.05).epsilon(0.02));
  for (std::size_t i = 0; i < draws.data.size(); i += 997) CHECK(mm.samples_assigned[i] == draws.component[i]);
}

TEST_CASE("high density ratio is permutation invariant") {
  Rng rng(4);
  const Tensor2 means = random_tensor(6, 2, rng, 2.0);
  const Tensor2 x = random_tensor(300, 2, rng, 2.0);
  const MixtureMetrics a = high_density_ratio(x, means, 0.3);
  std::vector<std::size_t> ps(300), pm{5, 3, 1, 0, 2, 4};
  for (std::size_t i = 0; i < 300; ++i) ps[i] = (i * 7) % 300;
  const MixtureMetrics b = high_density_ratio(gather_rows(x, ps), gather_rows(means, pm), 0.3);
  CHECK(a.high_density_ratio == b.high_density_ratio);
  CHECK(a.std_within_modes == doctest::Approx(b.std_within_modes).epsilon(1e-14));
  CHECK_THROWS(high_density_ratio(Tensor2(), means, 0.3));
  CHECK_THROWS(high_density_ratio(x, means, 0.0));
}

TEST_CASE("median pairwise distance against sorting all pairs") {
  Rng rng(5);
  const Tensor2 a = random_tensor(9, 3, rng), b = random_tensor(8, 3, rng);
  std::vector<double> d;
  std::vector<std::vector<double>> all;
  for (std::size_t i = 0; i < 9; ++i) all.emplace_back(a.row(i).begin(), a.row(i).end());
  for (std::size_t i = 0; i < 8; ++i) all.emplace_back(b.row(i).begin(), b.row(i).end());
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += std::pow(all[i][k] - all[j][k], 2);
      d.push_back(std::sqrt(s));
    }
  std::sort(d.begin(), d.end());
  CHECK(median_pairwise_distance(a, b) == doctest::Approx(d[(d.size() - 1) / 2]).epsilon(1e-14));
}

TEST_CASE("mmd equals the naive double loop and is symmetric and rotation invariant") {
  Rng rng(6);
  const Tensor2 a = random_tensor(40, 2, rng), b = random_tensor(30, 2, rng, 1.5);
  const MmdEstimate e = mmd_rbf(a, b);
  CHECK(e.n_a == 40);
  CHECK(e.n_b == 30);
  CHECK(std::abs(e.value - naive_mmd(a, b, e.bandwidth)) < 1e-12);
  CHECK(std::abs(mmd_rbf(a, b, 0.7).value - naive_mmd(a, b, 0.7)) < 1e-12);
  CHECK(std::abs(mmd_rbf(b, a).value - e.value) < 1e-12);
  CHECK(std::abs(mmd_rbf(rotate(a, 0.9), rotate(b, 0.9)).value - e.value) < 1e-12);
  CHECK(std::abs(e.value) <= 1.0);
}

TEST_CASE("mmd null scale, separated populations, degenerate input") {
  Rng rng(7);
  const Tensor2 x = random_tensor(4000, 2, rng);
  std::vector<std::size_t> lo(2000), hi(2000);
  for (std::size_t i = 0; i < 2000; ++i) {
    lo[i] = i;
    hi[i] = 2000 + i;
  }
  CHECK(std::abs(mmd_rbf(gather_rows(x, lo), gather_rows(x, hi)).value) < 3.0 / 2000.0);

  const Tensor2 a = random_tensor(2000, 2, rng);
  Tensor2 b = random_tensor(2000, 2, rng);
  for (double& v : b.flat()) v += 5.0;
  CHECK(mmd_rbf(a, b).value > 0.5);

  CHECK_THROWS(mmd_rbf(Tensor2(3, 2, 1.0), Tensor2(3, 2, 1.0)));
  CHECK_THROWS(mmd_rbf(Tensor2(1, 2, 1.0), Tensor2(3, 2, 0.0)));
}

TEST_CASE("aggregate posterior equals the prior for constant costs or one data point") {
  Rng rng(8);
  Decoder flat = make_gaussian_decoder(2, 2, kHidden, 0);
  flat.net = mlp_zeros_like(flat.net);
  const EmpiricalMeasure data = empirical_from_rows(random_tensor(50, 2, rng));
  const TrainedModel m = model_with(flat, SemiDualPotential{cvae::testing::random_vector(50, rng), 0.5},
                                    GaussianPrior::standard(2));
  const AggregateSample s = aggregate_posterior_sample(m, data, 2000, rng);
  CHECK(s.Z.rows() == 2000);
  CHECK(s.degenerate == 0);
  Rng prior_rng(9);
  const Tensor2 p = prior_sample(m.prior, 2000, prior_rng);
  CHECK(std::abs(mmd_rbf(s.Z, p).value) < 3.0 / 2000.0);

  const TrainedModel one = model_with(make_gaussian_decoder(2, 2, kHidden, 3), SemiDualPotential{{0.0}, 0.5},
                                      GaussianPrior::standard(2));
  const EmpiricalMeasure single = empirical_from_rows(random_tensor(1, 2, rng));
  const AggregateSample s1 = aggregate_posterior_sample(one, single, 2000, rng);
  CHECK(std::abs(mmd_rbf(s1.Z, p).value) < 3.0 / 2000.0);
  CHECK(s1.ess_min == doctest::Approx(1024.0).epsilon(1e-9));
}

TEST_CASE("discrete prior: atom frequencies and exact latent means") {
  Rng rng(10);
  const Decoder d = make_gaussian_decoder(2, 2, kHidden, 5);
  const EmpiricalMeasure data = empirical_from_rows(random_tensor(8, 2, rng));
  const CategoricalPrior prior({0.1, 0.2, 0.3, 0.4}, random_tensor(4, 2, rng));
  const SinkhornResult r =
      sinkhorn(cost_matrix(d, data, prior.atoms), data.weights, prior.probs, SinkhornOptions{.epsilon = 0.3});
  REQUIRE(r.converged);
  const TrainedModel m = model_with(d, SemiDualPotential{r.potentials.u, 0.3}, prior);

  const std::size_t n = 4000;
  const AggregateSample s = aggregate_posterior_sample(m, data, n, rng);
  std::vector<double> count(4, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < 4; ++k) {
      if (s.Z(t, 0) == prior.atoms(k, 0) && s.Z(t, 1) == prior.atoms(k, 1)) count[k] += 1.0;
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = prior.probs[k];
    CHECK(std::abs(count[k] - n * p) <= 3.0 * std::sqrt(n * p * (1.0 - p)));
  }

  const LatentCodes codes = latent_representation(m, data, rng);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double exact = 0.0;
      for (std::size_t k = 0; k < 4; ++k) exact += r.plan.pi(i, k) / data.weights[i] * prior.atoms(k, c);
      CHECK(std::abs(codes.Z(i, c) - exact) < 1e-6);
    }
  }
}

TEST_CASE("latent representation with one data point is the prior mean") {
  Rng rng(11);
  const TrainedModel g = model_with(make_gaussian_decoder(2, 2, kHidden, 1), SemiDualPotential{{0.0}, 0.5},
                                    GaussianPrior({0.5, -1.0}, {1.0, 1.0}));
  const EmpiricalMeasure one = empirical_from_rows(random_tensor(1, 2, rng));
  AggregateOptions big;
  big.pool_size = 20000;
  const LatentCodes c = latent_representation(g, one, rng, big);
  CHECK(std::abs(c.Z(0, 0) - 0.5) < 0.05);
  CHECK(std::abs(c.Z(0, 1) + 1.0) < 0.05);

  const CategoricalPrior cat({0.25, 0.75}, Tensor2::from_rows({{1.0, 0.0}, {-1.0, 2.0}}));
  const TrainedModel k = model_with(make_gaussian_decoder(2, 2, kHidden, 1), SemiDualPotential{{0.0}, 0.5}, cat);
  const LatentCodes ck = latent_representation(k, one, rng);
  CHECK(ck.Z(0, 0) == doctest::Approx(0.25 - 0.75).epsilon(1e-12));
  CHECK(ck.Z(0, 1) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("evaluate_model and metrics JSON schema") {
  Rng rng(12);
  GridSpec spec;
  spec.samples_per_component = 4;
  const GridDataset g = make_grid25(spec);
  const TrainedModel m = model_with(make_gaussian_decoder(2, 2, kHidden, 2),
                                    SemiDualPotential{std::vector<double>(g.data.size(), 0.0), 0.5},
                                    GaussianPrior::standard(2));
  EvaluationOptions opts;
  opts.n_samples = 200;
  opts.n_mmd = 200;
  opts.seed = 77;
  const RunMetrics a = evaluate_model(m, g.data, &g.means, opts);
  const RunMetrics b = evaluate_model(m, g.data, &g.means, opts);
  CHECK(metrics_json(a) == metrics_json(b));
  REQUIRE(a.high_density_ratio.has_value());
  const auto j = nlohmann::json::parse(metrics_json(a));
  for (const char* key : {"high_density_ratio", "std_within_modes", "mmd", "mmd_bandwidth", "ess_min", "seed"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["seed"] == 77);

  const RunMetrics no_means = evaluate_model(m, g.data, nullptr, opts);
  const auto jn = nlohmann::json::parse(metrics_json(no_means));
  CHECK(jn["high_density_ratio"].is_null());
  RunMetrics bad = a;
  bad.mmd = NAN;
  CHECK(nlohmann::json::parse(metrics_json(bad))["mmd"].is_null());
}
