#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "cvae/eot.hpp"
#include "cvae/optim.hpp"
#include "support.hpp"

using namespace cvae;
using cvae::testing::random_tensor;

namespace {

const std::vector<std::size_t> kHidden{6, 5};

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (double& x : w) x = 0.2 + rng.uniform();
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= s;
  return w;
}

// Brute-force assignment cost over all n! permutations (uniform marginals).
double best_permutation_cost(const Tensor2& c) {
  std::vector<std::size_t> p(c.rows());
  std::iota(p.begin(), p.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    best = std::min(best, s / static_cast<double>(p.size()));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST_CASE("sinkhorn trivial limits") {
  const SinkhornOptions o1{.epsilon = 0.1};
  const SinkhornResult r1 = sinkhorn(Tensor2::from_rows({{3.7}}), uniform(1), uniform(1), o1);
  CHECK(r1.plan.pi(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r1.converged);

  // Exact: pi_11 = 1 / (2 (1 + exp(-1/eps))). At eps = 100 that is 0.25125,
  // so the independence limit is only reached to 1e-3 from eps ~ 1000 on.
  const Tensor2 anti = Tensor2::from_rows({{0, 1}, {1, 0}});
  const SinkhornResult r2 = sinkhorn(anti, uniform(2), uniform(2), SinkhornOptions{.epsilon = 100.0});
  const double diag = 1.0 / (2.0 * (1.0 + std::exp(-0.01)));
  CHECK(r2.plan.pi(0, 0) == doctest::Approx(diag).epsilon(1e-9));
  CHECK(r2.plan.pi(0, 1) == doctest::Approx(0.5 - diag).epsilon(1e-9));
  const SinkhornResult r3 = sinkhorn(anti, uniform(2), uniform(2), SinkhornOptions{.epsilon = 1000.0});
  for (double p : r3.plan.pi.flat()) CHECK(std::abs(p - 0.25) < 1e-3);
}

TEST_CASE("sinkhorn matches permutation enumeration at small epsilon") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 c(4, 4);
    for (double& x : c.flat()) x = static_cast<double>(rng.index(10));
    const SinkhornOptions o{.epsilon = 0.01};
    const SinkhornResult r = sinkhorn(c, uniform(4), uniform(4), o);
    const double exact = best_permutation_cost(c);
    // Tied optima make the small-epsilon rate very slow; the plan is still
    // within the marginal tolerance that matters for the cost.
    CHECK(r.marginal_violation < 1e-3);
    CHECK(std::abs(transport_cost(r.plan, c) - exact) <= 0.01 * std::max(exact, 1e-12) + 1e-12);
  }
}

TEST_CASE("sinkhorn marginals, duality gap and warm start") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor2 c = random_tensor(16, 8, rng);
    const auto mu = random_simplex(16, rng);
    const auto nu = random_simplex(8, rng);
    const SinkhornOptions o{.epsilon = 0.1};
    const SinkhornResult r = sinkhorn(c, mu, nu, o);
    REQUIRE(r.converged);
    CHECK(marginal_violation(r.plan) < 1e-9);
    const CostMatrix C = CostMatrix::from_data_major(c);
    const DualValue d = dual_value(r.potentials.u, r.potentials.v, C, mu, nu, 0.1);
    CHECK_FALSE(d.overflow_risk);
    CHECK(std::abs(entropic_primal_value(r.plan, c, 0.1) - d.value - 0.1) < 1e-6);

    // Weak duality for arbitrary potentials.
    const auto u = cvae::testing::random_vector(16, rng, 0.1);
    const auto v = cvae::testing::random_vector(8, rng, 0.1);
    CHECK(dual_value(u, v, C, mu, nu, 0.1).value <= entropic_primal_value(r.plan, c, 0.1) + 1e-12);

    const SinkhornResult w = sinkhorn(C, mu, nu, o, &r.potentials);
    CHECK(w.iterations <= 2);
  }
}

TEST_CASE("sinkhorn flags non-convergence") {
  Rng rng(1);
  const Tensor2 c = random_tensor(6, 6, rng, 5.0);
  const SinkhornOptions o{.epsilon = 0.01, .tol = 1e-14, .max_iter = 3};
  const SinkhornResult r = sinkhorn(c, uniform(6), uniform(6), o);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 3);
  CHECK_THROWS(sinkhorn(c, uniform(5), uniform(6), o));
}

TEST_CASE("c,eps-transform examples") {
  const std::vector<double> mu1{1.0}, u1{0.4}, c1{2.5};
  CHECK(c_eps_transform(u1, c1, mu1, 0.3) == doctest::Approx(2.1).epsilon(1e-14));

  const std::vector<double> u{0.0, 0.0}, c{0.0, 1.0};
  CHECK(c_eps_transform(u, c, uniform(2), 1.0) == doctest::Approx(0.3798854930417225).epsilon(1e-14));

  Rng rng(9);
  const auto ur = cvae::testing::random_vector(7, rng);
  const auto cr = cvae::testing::random_vector(7, rng);
  const auto mu = random_simplex(7, rng);
  std::vector<double> shifted = ur;
  for (double& x : shifted) x += 1.75;
  CHECK(c_eps_transform(shifted, cr, mu, 0.4) ==
        doctest::Approx(c_eps_transform(ur, cr, mu, 0.4) - 1.75).epsilon(1e-13));

  // Soft-min limit within eps * log m of the hard c-transform.
  double hard = INFINITY;
  for (std::size_t i = 0; i < 7; ++i) hard = std::min(hard, cr[i] - ur[i]);
  const double soft = c_eps_transform(ur, cr, mu, 1e-4);
  CHECK(std::abs(soft - hard) <= 1e-4 * std::log(1.0 / *std::min_element(mu.begin(), mu.end())) + 1e-12);
}

TEST_CASE("soft assignment structure and limits") {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.index(12);
    const auto u = cvae::testing::random_vector(m, rng, 3.0);
    const auto c = cvae::testing::random_vector(m, rng, 3.0);
    const auto mu = random_simplex(m, rng);
    std::vector<double> w(m);
    soft_assign(u, c, mu, std::exp(rng.normal() * 3.0), w);
    double s = 0.0;
    for (double x : w) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const auto u = cvae::testing::random_vector(5, rng);
  const auto c = cvae::testing::random_vector(5, rng);
  const auto mu = random_simplex(5, rng);
  std::vector<double> w(5);
  soft_assign(u, c, mu, 1e3, w);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(w[i] - mu[i]) < 1e-2);
  soft_assign(u, c, mu, 1e-4, w);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 5; ++i) {
    if (c[i] - u[i] < c[best] - u[best]) best = i;
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(w[i] - (i == best ? 1.0 : 0.0)) < 1e-12);
}

TEST_CASE("semi-dual value and gradient on cost tables") {
  Rng rng(11);
  const Tensor2 c = random_tensor(9, 5, rng);
  const CostMatrix C = CostMatrix::from_data_major(c);
  const auto mu = random_simplex(9, rng);
  const auto nu = random_simplex(5, rng);
  const auto u = cvae::testing::random_vector(9, rng, 0.5);

  const auto g = semidual_gradient(u, C, mu, nu, 0.7);
  CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) < 1e-14);

  std::vector<double> shifted = u;
  for (double& x : shifted) x += 3.0;
  CHECK(semidual_value(shifted, C, mu, nu, 0.7) ==
        doctest::Approx(semidual_value(u, C, mu, nu, 0.7)).epsilon(1e-14));

  // Equal costs with u = 0 and uniform mu: stationary.
  const CostMatrix flat = CostMatrix::from_data_major(Tensor2(4, 3, 2.0));
  for (double x : semidual_gradient(std::vector<double>(4, 0.0), flat, uniform(4), {}, 0.5)) {
    CHECK(std::abs(x) < 1e-15);
  }

  auto f = [&](std::span<const double> uu) { return semidual_value(uu, C, mu, nu, 0.7); };
  CHECK(grad_check(f, u, g, 1e-6, 1e-6, 1e-6).max_rel_error < 1e-6);

  // Large eps: value tends to the plain expected cost.
  const CostMatrix small = CostMatrix::from_data_major(Tensor2::from_rows({{0.3, 1.1}, {0.7, 2.0}}));
  const std::vector<double> z2(2, 0.0);
  double mean_cost = (0.3 + 1.1 + 0.7 + 2.0) / 4.0;
  CHECK(semidual_value(z2, small, uniform(2), {}, 1e6) == doctest::Approx(mean_cost).epsilon(1e-5));
  // Direct scalar evaluation for a finite epsilon.
  const double eps = 2.0;
  const double direct =
      0.5 * (-eps * std::log(0.5 * (std::exp(-0.3 / eps) + std::exp(-0.7 / eps)))) +
      0.5 * (-eps * std::log(0.5 * (std::exp(-1.1 / eps) + std::exp(-2.0 / eps))));
  CHECK(semidual_value(z2, small, uniform(2), {}, eps) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("semi-dual ascent is monotone on a fixed instance") {
  Rng rng(12);
  const CostMatrix C = CostMatrix::from_data_major(random_tensor(8, 6, rng));
  const auto mu = uniform(8);
  std::vector<double> u(8, 0.0);
  double prev = semidual_value(u, C, mu, {}, 0.5);
  for (int k = 0; k < 200; ++k) {
    const auto g = semidual_gradient(u, C, mu, {}, 0.5);
    for (std::size_t i = 0; i < 8; ++i) u[i] += 0.2 * g[i];
    const double cur = semidual_value(u, C, mu, {}, 0.5);
    CHECK(cur >= prev - 1e-12);
    prev = cur;
  }
}

TEST_CASE("accumulator agrees with matrix-level functions") {
  Rng rng(13);
  const CostMatrix C = CostMatrix::from_data_major(random_tensor(7, 4, rng));
  const auto mu = random_simplex(7, rng);
  const auto nu = random_simplex(4, rng);
  const auto u = cvae::testing::random_vector(7, rng);
  SemidualAccumulator acc(u, mu, 0.3);
  std::vector<double> t(4);
  for (std::size_t j = 0; j < 4; ++j) t[j] = acc.add(C.column(j), nu[j]);
  std::vector<double> t2(4);
  const auto g = semidual_gradient(u, C, mu, nu, 0.3, t2);
  CHECK(acc.value() == semidual_value(u, C, mu, nu, 0.3));
  CHECK(acc.gradient() == g);
  CHECK(t == t2);
}

TEST_CASE("decoder-level semi-dual: gradient check and discrete consistency") {
  Rng rng(14);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Decoder d = make_gaussian_decoder(2, 2, kHidden, s);
    const EmpiricalMeasure data = empirical_from_rows(random_tensor(6, 2, rng));
    const Tensor2 Z = random_tensor(5, 2, rng);
    const SemiDualPotential pot{cvae::testing::random_vector(6, rng), 0.8};
    const auto g = semidual_grad_u(pot, d, data, Z);
    auto f = [&](std::span<const double> u) {
      return semidual_objective(SemiDualPotential{{u.begin(), u.end()}, 0.8}, d, data, Z);
    };
    CHECK(grad_check(f, pot.u, g, 1e-4, 1e-6, 1e-6).max_rel_error < 1e-6);
  }

  // Atoms of a categorical prior with weights nu, at Sinkhorn-optimal u.
  const Decoder d = make_gaussian_decoder(2, 2, kHidden, 99);
  const EmpiricalMeasure data = empirical_from_rows(random_tensor(8, 2, rng));
  const Tensor2 atoms = random_tensor(4, 2, rng);
  const std::vector<double> nu{0.1, 0.2, 0.3, 0.4};
  const CostMatrix C = cost_matrix(d, data, atoms);
  const SinkhornResult r = sinkhorn(C, data.weights, nu, SinkhornOptions{.epsilon = 0.5});
  REQUIRE(r.converged);
  const double uv = std::inner_product(r.potentials.u.begin(), r.potentials.u.end(), data.weights.begin(), 0.0) +
                    std::inner_product(r.potentials.v.begin(), r.potentials.v.end(), nu.begin(), 0.0);
  const SemiDualPotential pot{r.potentials.u, 0.5};
  CHECK(std::abs(semidual_objective(pot, d, data, atoms, nu) - uv) < 1e-6);
  const DualValue dv = dual_objective(DualPotentialPair{r.potentials.u, r.potentials.v, 0.5}, d, data, atoms, nu);
  CHECK(std::abs(dv.value + 0.5 - entropic_primal_value(r.plan, C.values(), 0.5)) < 1e-6);
  for (double x : semidual_grad_u(pot, d, data, atoms, nu)) CHECK(std::abs(x) < 1e-8);

  // Plan conditionals pi(x_i | z_k) are the soft assignments.
  for (std::size_t k = 0; k < 4; ++k) {
    const auto w = conditional_plan_weights(pot, d, data, atoms.row(k));
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(w[i] - r.plan.pi(i, k) / nu[k]) < 1e-8);
  }
}

TEST_CASE("dual objective trivial values") {
  const Decoder d = make_gaussian_decoder(1, 1, kHidden, 0);
  CostMatrix zero = CostMatrix::from_data_major(Tensor2(3, 2, 0.0));
  const std::vector<double> u(3, 0.0), v(2, 0.0);
  CHECK(dual_value(u, v, zero, uniform(3), {}, 0.7).value == doctest::Approx(-0.7));
  const std::vector<double> big(3, 50.0);
  const DualValue hot = dual_value(big, v, zero, uniform(3), {}, 1.0);
  CHECK(hot.overflow_risk);
  CHECK(hot.value < dual_value(u, v, zero, uniform(3), {}, 1.0).value);
}

TEST_CASE("conditional plan weights: gauge invariance") {
  Rng rng(15);
  const Decoder d = make_gaussian_decoder(2, 2, kHidden, 3);
  const EmpiricalMeasure data = empirical_from_rows(random_tensor(6, 2, rng));
  const auto z = cvae::testing::random_vector(2, rng);
  SemiDualPotential pot{cvae::testing::random_vector(6, rng), 0.5};
  const auto w = conditional_plan_weights(pot, d, data, z);
  for (double& x : pot.u) x -= 4.0;
  const auto w2 = conditional_plan_weights(pot, d, data, z);
  for (std::size_t i = 0; i < 6; ++i) CHECK(w2[i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("importance sampling of q(z|x)") {
  Rng rng(16);
  const Decoder d = make_gaussian_decoder(2, 2, kHidden, 4);
  const Prior prior = GaussianPrior::standard(2);

  // One data point: posterior equals prior.
  const EmpiricalMeasure one = empirical_from_rows(random_tensor(1, 2, rng));
  const WeightedLatentSample s1 =
      posterior_importance_sample(SemiDualPotential{{0.3}, 0.5}, d, one, 0, prior, 64, rng);
  for (double w : s1.normalized_weights) CHECK(w == doctest::Approx(1.0 / 64).epsilon(1e-12));
  CHECK(s1.ess == doctest::Approx(64.0).epsilon(1e-10));
  CHECK_FALSE(s1.degenerate);

  const EmpiricalMeasure data = empirical_from_rows(random_tensor(5, 2, rng));
  const WeightedLatentSample hot =
      posterior_importance_sample(SemiDualPotential{std::vector<double>(5, 0.0), 1e6}, d, data, 2, prior, 100, rng);
  CHECK(hot.ess > 99.9);

  const WeightedLatentSample cold =
      posterior_importance_sample(SemiDualPotential{std::vector<double>(5, 0.0), 0.01}, d, data, 2, prior, 100, rng);
  double s = 0.0;
  for (double w : cold.normalized_weights) s += w;
  CHECK(std::abs(s - 1.0) < 1e-12);
  CHECK(cold.ess >= 1.0);
  CHECK(cold.ess <= 100.0);
  CHECK(cold.degenerate == (cold.ess < 2.0));
  CHECK_THROWS_AS(posterior_importance_sample(SemiDualPotential{std::vector<double>(5, 0.0), 1.0}, d, data, 5,
                                              prior, 10, rng),
                  std::out_of_range);
}

TEST_CASE("exact posterior over atoms matches the Sinkhorn plan") {
  Rng rng(17);
  const Decoder d = make_gaussian_decoder(2, 2, kHidden, 8);
  const EmpiricalMeasure data = empirical_from_rows(random_tensor(8, 2, rng));
  const CategoricalPrior prior({0.4, 0.3, 0.2, 0.1}, random_tensor(4, 2, rng));
  const CostMatrix C = cost_matrix(d, data, prior.atoms);
  const SinkhornResult r = sinkhorn(C, data.weights, prior.probs, SinkhornOptions{.epsilon = 0.3});
  REQUIRE(r.converged);
  const SemiDualPotential pot{r.potentials.u, 0.3};
  for (std::size_t i = 0; i < 8; ++i) {
    const WeightedLatentSample q = posterior_enumerate(pot, d, data, i, prior);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(q.normalized_weights[k] - r.plan.pi(i, k) / data.weights[i]) < 1e-6);
    }
    CHECK(q.Z == prior.atoms);
  }
}

TEST_CASE("ESS and log-weight normalization") {
  const std::vector<double> w{0.25, 0.25, 0.25, 0.25};
  CHECK(effective_sample_size(w) == doctest::Approx(4.0));
  const std::vector<double> one{1.0, 0.0, 0.0};
  CHECK(effective_sample_size(one) == doctest::Approx(1.0));
  const std::vector<double> lw{1000.0, 1000.0 + std::log(3.0)};
  std::vector<double> out(2);
  CHECK(normalize_log_weights(lw, out) == doctest::Approx(1000.0 + std::log(4.0)));
  CHECK(out[0] == doctest::Approx(0.25));
  CHECK(out[1] == doctest::Approx(0.75));
}
