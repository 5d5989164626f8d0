#include <doctest.h>

#include <chrono>

#include "oracles.hpp"
#include "rdtac/errors.hpp"
#include "rdtac/spectral.hpp"

using namespace rdtac;
using doctest::Approx;

TEST_CASE("DCT small cases") {
  const SpectralPlan p(2, 1);
  const std::vector<double> ones{1.0, 1.0};
  const auto c = dct2_forward(ones, p);
  CHECK(c[0] == Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(std::abs(c[1]) < 1e-15);

  const std::vector<double> impulse{1.0, 0.0};
  const auto d = dct2_forward(impulse, p);
  CHECK(d[0] == Approx(0.70710678118654752).epsilon(1e-14));
  CHECK(d[1] == Approx(0.70710678118654752).epsilon(1e-14));

  const std::vector<double> dc{std::sqrt(2.0), 0.0};
  const auto back = dct2_inverse(dc, p);
  CHECK(back[0] == Approx(1.0).epsilon(1e-14));
  CHECK(back[1] == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("DCT matches the naive cosine sum") {
  std::mt19937_64 rng(3);
  for (auto [nx, ny] : {std::pair<std::size_t, std::size_t>{1, 1}, {5, 1}, {1, 7}, {4, 3}, {8, 8}, {13, 6}}) {
    const SpectralPlan p(nx, ny);
    const auto x = oracle::random_vector(nx * ny, rng);
    CHECK(oracle::max_abs_diff(dct2_forward(x, p), oracle::dct_2d(x, nx, ny)) < 1e-12);
  }
}

TEST_CASE("DCT round trip and Parseval") {
  std::mt19937_64 rng(11);
  for (std::size_t n : {2u, 3u, 8u, 17u, 64u}) {
    const SpectralPlan p(n, n + 1);
    const auto x = oracle::random_vector(p.size(), rng);
    const auto c = dct2_forward(x, p);
    CHECK(oracle::max_abs_diff(dct2_inverse(c, p), x) < 1e-12);
    CHECK(std::abs(oracle::norm2(c) - oracle::norm2(x)) < 1e-12 * std::max(1.0, oracle::norm2(x)));
  }
}

TEST_CASE("shape mismatches are rejected") {
  const SpectralPlan p(4, 4);
  std::vector<double> wrong(15);
  CHECK_THROWS_AS(dct2_forward(wrong, p), ShapeError);
  CHECK_THROWS_AS(dct2_inverse(wrong, p), ShapeError);
  CHECK_THROWS_AS(implicit_diffusion_step(wrong, 1.0, 1.0, p), ShapeError);
  CHECK_THROWS_AS(SpectralPlan(0, 3), ShapeError);
}

TEST_CASE("Laplacian eigenvalues") {
  auto e2 = laplacian_eigenvalues(2, 1);
  CHECK(e2[0] == Approx(0.0));
  CHECK(e2[1] == Approx(2.0).epsilon(1e-14));
  auto e3 = laplacian_eigenvalues(3, 1);
  CHECK(std::abs(e3[0]) < 1e-15);
  CHECK(e3[1] == Approx(1.0).epsilon(1e-14));
  CHECK(e3[2] == Approx(3.0).epsilon(1e-14));

  for (std::size_t nx : {2u, 3u, 4u, 8u}) {
    for (std::size_t ny : {2u, 3u, 4u, 8u}) {
      auto ev = laplacian_eigenvalues(nx, ny);
      CHECK(ev[0] == 0.0);
      std::sort(ev.begin(), ev.end());
      CHECK(oracle::max_abs_diff(ev, oracle::sorted_dense_eigenvalues(nx, ny)) < 1e-12);
    }
  }
}

TEST_CASE("implicit diffusion step") {
  const SpectralPlan p(2, 1);
  const std::vector<double> u{2.0, 0.0};
  const auto x = implicit_diffusion_step(u, 1.0, 0.5, p);
  CHECK(x[0] == Approx(1.5).epsilon(1e-14));
  CHECK(x[1] == Approx(0.5).epsilon(1e-14));

  CHECK(implicit_diffusion_step(u, 0.0, 0.5, p) == u);
  CHECK_THROWS_AS(implicit_diffusion_step(u, -1.0, 0.5, p), ArgumentError);
  CHECK_THROWS_AS(implicit_diffusion_step(u, 1.0, 0.0, p), ArgumentError);

  const SpectralPlan q(5, 4);
  const std::vector<double> c(q.size(), 3.25);
  CHECK(oracle::max_abs_diff(implicit_diffusion_step(c, 2.0, 0.7, q), c) < 1e-14);
}

TEST_CASE("implicit diffusion matches a dense solve") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> kappa(0.0, 5.0), h(0.01, 1.0);
  for (std::size_t nx = 1; nx <= 6; ++nx) {
    for (std::size_t ny = 1; ny <= 6; ++ny) {
      const SpectralPlan p(nx, ny);
      const auto u = oracle::random_vector(p.size(), rng);
      const double k = kappa(rng), hh = h(rng);
      const auto ref = oracle::dense_diffusion_solve(u, nx, ny, k, hh);
      CHECK(oracle::max_abs_diff(implicit_diffusion_step(u, k, hh, p), ref) < 1e-12 * oracle::norm2(ref) + 1e-15);
    }
  }
}

TEST_CASE("diffusion VJP") {
  SUBCASE("single mode") {
    // Mode k=2 of a 4-point line has lambda = 2.
    const SpectralPlan p(4, 1);
    const std::vector<double> coeff{0.0, 0.0, 1.0, 0.0};
    const auto u = dct2_inverse(coeff, p);
    const auto g = dct2_inverse(coeff, p);
    const auto vjp = diffusion_step_vjp(u, g, 1.0, 0.5, p);
    CHECK(vjp.grad_kappa == Approx(-0.25).epsilon(1e-13));
  }
  SUBCASE("zero cotangent") {
    const SpectralPlan p(3, 3);
    std::mt19937_64 rng(1);
    const auto u = oracle::random_vector(9, rng);
    const auto vjp = diffusion_step_vjp(u, std::vector<double>(9, 0.0), 2.0, 0.3, p);
    CHECK(vjp.grad_kappa == 0.0);
    CHECK(oracle::norm2(vjp.grad_u) == 0.0);
  }
  SUBCASE("finite differences on 6x6") {
    const SpectralPlan p(6, 6);
    std::mt19937_64 rng(7);
    const auto u = oracle::random_vector(36, rng);
    const auto g = oracle::random_vector(36, rng);
    const double kappa = 0.8, h = 0.4, eps = 1e-6;
    auto objective = [&](const std::vector<double>& uu, double k) {
      const auto x = implicit_diffusion_step(uu, k, h, p);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += g[i] * x[i];
      return s;
    };
    const auto vjp = diffusion_step_vjp(u, g, kappa, h, p);
    const double fd_k = (objective(u, kappa + eps) - objective(u, kappa - eps)) / (2 * eps);
    CHECK(oracle::rel_err(vjp.grad_kappa, fd_k) < 1e-6);
    for (std::size_t i = 0; i < u.size(); i += 5) {
      auto up = u, dn = u;
      up[i] += eps;
      dn[i] -= eps;
      const double fd = (objective(up, kappa) - objective(dn, kappa)) / (2 * eps);
      CHECK(oracle::rel_err(vjp.grad_u[i], fd) < 1e-6);
    }
  }
}

TEST_CASE("diffusion conserves mass and contracts") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> kappa(0.0, 5.0), h(0.01, 1.0);
  const SpectralPlan p(9, 7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = oracle::random_vector(p.size(), rng, -2.0, 3.0);
    const auto x = implicit_diffusion_step(u, kappa(rng), h(rng), p);
    double su = 0.0, sx = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      su += u[i];
      sx += x[i];
    }
    CHECK(std::abs(su - sx) <= 1e-10 * std::max(1.0, std::abs(su)));
    CHECK(oracle::norm2(x) <= oracle::norm2(u));
  }
}

TEST_CASE("transform cost grows near n log n") {
  auto time_it = [](std::size_t n) {
    const SpectralPlan p(n, n);
    std::vector<double> x(p.size(), 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i % 17);
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < 8; ++r) {
      p.forward_inplace(x);
      p.inverse_inplace(x);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  time_it(256);
  const double small = time_it(256), large = time_it(512);
  CHECK(large / small < 5.0);
}

TEST_CASE("plans are movable") {
  SpectralPlan a(4, 3);
  SpectralPlan b = std::move(a);
  std::vector<double> x(12, 1.0);
  CHECK(dct2_forward(x, b)[0] == Approx(std::sqrt(12.0)));
}
