#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bfflow/errors.hpp"
#include "bfflow/grid.hpp"
#include "bfflow/linalg.hpp"
#include "bfflow/physics.hpp"
#include "bfflow/rng.hpp"
#include "test_util.hpp"

using namespace bfflow;
using namespace bfflow::testing;
using std::numbers::pi;

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(Grid::make(1, 8), std::invalid_argument);
  CHECK_THROWS_AS(Grid::make(2, 2), std::invalid_argument);
  CHECK_THROWS_AS(Grid::make(2, 9), std::invalid_argument);
  const Grid g = Grid::make(2, 16);
  CHECK(g.h * (g.n + 1) == 1.0);
  CHECK(g.size() == 256);
  CHECK(Grid::make(3, 6).size() == 216);
  const auto idx = g.unravel(g.stride(1) * 3 + 5);
  CHECK(idx[0] == 5);
  CHECK(idx[1] == 3);
}

TEST_CASE("field arithmetic rejects mismatched grids") {
  ScalarField a(Grid::make(2, 8)), b(Grid::make(2, 10));
  CHECK_THROWS_AS(a += b, std::invalid_argument);
  CHECK_THROWS_AS(ScalarField(Grid::make(2, 8), std::vector<double>(5)), std::invalid_argument);
}

TEST_CASE("zero fields map to zero") {
  const Grid g = Grid::make(2, 8);
  CHECK(max_abs(grad(ScalarField(g)).values) == 0.0);
  CHECK(max_abs(div(VectorField(g)).values) == 0.0);
  CHECK(max_abs(laplacian(VectorField(g)).values) == 0.0);
  CHECK(sobolev_norm(ScalarField(g), 0.5) == 0.0);
}

TEST_CASE("grad and div are exact negative adjoints") {
  for (int n : {8, 16, 32}) {
    const Grid g = Grid::make(2, n);
    for (int trial = 0; trial < 100; ++trial) {
      const ScalarField p = random_scalar(g, 1000 + trial);
      const VectorField u = random_vector(g, 5000 + trial);
      const double lhs = inner(grad(p), u), rhs = inner(p, div(u));
      const double scale = norm_l2(grad(p)) * norm_l2(u) + norm_l2(p) * norm_l2(div(u));
      CHECK(std::abs(lhs + rhs) <= 1e-13 * scale);
    }
  }
  const Grid g3 = Grid::make(3, 6);
  const ScalarField p = random_scalar(g3, 1);
  const VectorField u = random_vector(g3, 2);
  CHECK(std::abs(inner(grad(p), u) + inner(p, div(u))) <= 1e-13 * norm_l2(grad(p)) * norm_l2(u));
}

TEST_CASE("grad and div match analytic derivatives to O(h^2)") {
  double err_prev = 0.0;
  for (int n : {16, 32}) {
    const Grid g = Grid::make(2, n);
    const ScalarField p = sine_mode(g, 1, 1);
    const VectorField gp = grad(p);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto idx = g.unravel(i);
      const double x = g.coord(idx[0]), y = g.coord(idx[1]);
      err = std::max(err, std::abs(gp.at(0, i) - pi * std::cos(pi * x) * std::sin(pi * y)));
    }
    if (err_prev > 0.0) CHECK(err_prev / err > 3.0);
    err_prev = err;
  }
  // div of an exact gradient field is the Laplacian away from the boundary layer.
  const Grid g = Grid::make(2, 32);
  VectorField u(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unravel(i);
    const double x = g.coord(idx[0]), y = g.coord(idx[1]);
    u.at(0, i) = pi * std::cos(pi * x) * std::sin(pi * y);
    u.at(1, i) = pi * std::sin(pi * x) * std::cos(pi * y);
  }
  const ScalarField du = div(u);
  double err = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unravel(i);
    if (idx[0] < 1 || idx[1] < 1 || idx[0] > g.n - 2 || idx[1] > g.n - 2) continue;
    const double exact = -2 * pi * pi * std::sin(pi * g.coord(idx[0])) * std::sin(pi * g.coord(idx[1]));
    err = std::max(err, std::abs(du[i] - exact));
  }
  CHECK(err < 20.0 * g.h * g.h * 2 * pi * pi);
}

TEST_CASE("div of a constant field lives in the boundary layer") {
  const Grid g = Grid::make(2, 16);
  VectorField u(g);
  for (std::size_t i = 0; i < g.size(); ++i) u.at(0, i) = 1.0;
  const ScalarField d = div(u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unravel(i);
    if (idx[0] >= 2 && idx[0] <= g.n - 3) CHECK(d[i] == 0.0);
  }
  CHECK(max_abs(d.values) > 0.0);
}

TEST_CASE("laplacian: sine eigenvectors, definiteness, edge factorization") {
  const Grid g = Grid::make(2, 16);
  for (auto [k1, k2] : {std::pair{1, 1}, std::pair{2, 5}, std::pair{7, 3}}) {
    const ScalarField f = sine_mode(g, k1, k2);
    const double lam = -(4 / (g.h * g.h)) *
                       (std::pow(std::sin(k1 * pi * g.h / 2), 2) + std::pow(std::sin(k2 * pi * g.h / 2), 2));
    const ScalarField lf = laplacian(f);
    ScalarField diff = lf;
    diff.axpy(-lam, f);
    CHECK(norm_l2(diff) <= 1e-12 * std::abs(lam) * norm_l2(f));
    CHECK(sine_eigenvalue_1d(k1, g.h) + sine_eigenvalue_1d(k2, g.h) == doctest::Approx(-lam).epsilon(1e-13));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const VectorField u = random_vector(g, 77 + trial);
    CHECK(inner(laplacian(u), u) < 0.0);
    CHECK(dirichlet_seminorm_sq(u) == doctest::Approx(-inner(laplacian(u), u)).epsilon(1e-12));
  }
  // laplacian = -E^T E as a matrix identity on 8^2 (column by column).
  const Grid g8 = Grid::make(2, 8);
  double worst = 0.0;
  for (std::size_t j = 0; j < g8.size(); ++j) {
    ScalarField e(g8);
    e[j] = 1.0;
    ScalarField a = laplacian(e);
    a += edge_gradient_adjoint(g8, edge_gradient(e));
    worst = std::max(worst, max_abs(a.values) * g8.h * g8.h);
  }
  CHECK(worst <= 1e-13);
}

TEST_CASE("stencil operations are linear") {
  const Grid g = Grid::make(2, 16);
  const ScalarField f = random_scalar(g, 3), h = random_scalar(g, 4);
  const VectorField u = random_vector(g, 5), v = random_vector(g, 6);
  const double a = 1.7, b = -0.3;
  VectorField lhs = grad(a * f + b * h);
  lhs -= a * grad(f) + b * grad(h);
  CHECK(norm_l2(lhs) <= 1e-13 * norm_l2(grad(f)) * 2);
  ScalarField ld = div(a * u + b * v);
  ld -= a * div(u) + b * div(v);
  CHECK(norm_l2(ld) <= 1e-13 * norm_l2(div(u)) * 2);
  VectorField ll = laplacian(a * u + b * v);
  ll -= a * laplacian(u) + b * laplacian(v);
  CHECK(norm_l2(ll) <= 1e-13 * norm_l2(laplacian(u)) * 2);
}

TEST_CASE("weighted inner product") {
  const Grid g = Grid::make(2, 8);
  VectorField u(g);
  for (std::size_t i = 0; i < g.size(); ++i) u.at(0, i) = 1.0;
  CHECK(weighted_inner(MediumMatrix::diagonal({2.0, 3.0}), u, u) ==
        doctest::Approx(2.0 * g.h * g.h * 64).epsilon(1e-14));
  const VectorField a = random_vector(g, 8), b = random_vector(g, 9);
  CHECK(weighted_inner(MediumMatrix::identity(2), a, a) == doctest::Approx(inner(a, a)).epsilon(1e-15));
  const MediumMatrix d = MediumMatrix::make(2, {2.0, 0.5, 0.5, 1.0});
  CHECK(std::abs(weighted_inner(d, a, b) - weighted_inner(d, b, a)) <= 1e-15 * norm_l2(a) * norm_l2(b) * 3);
  CHECK(weighted_inner(d, a, a) > 0.0);
}

TEST_CASE("project_mean_zero") {
  const Grid g = Grid::make(2, 16);
  ScalarField c(g);
  for (auto& v : c.values) v = 3.25;
  CHECK(max_abs(project_mean_zero(c).values) <= 1e-14);
  const ScalarField p = random_scalar(g, 10);
  const double m = mean(p);
  const ScalarField q = project_mean_zero(p);
  CHECK(std::abs(mean(q)) <= 1e-14);
  ScalarField back = q;
  for (auto& v : back.values) v += m;
  CHECK(norm_l2(back - p) <= 1e-14 * norm_l2(p));
  CHECK(norm_l2(project_mean_zero(q) - q) <= 1e-15 * norm_l2(q));
}

TEST_CASE("sine basis: round trip, Parseval, eigenvalues, shifted solve") {
  for (const Grid g : {Grid::make(2, 16), Grid::make(2, 10), Grid::make(3, 6)}) {
    const SineBasis basis(g);
    const ScalarField f = random_scalar(g, 11);
    const auto c = basis.forward(f.values);
    double s = 0.0;
    for (double x : c) s += x * x;
    CHECK(std::sqrt(s) == doctest::Approx(norm_l2(f)).epsilon(1e-12));
    const auto back = basis.inverse(c);
    double err = 0.0;
    for (std::size_t i = 0; i < back.size(); ++i) err = std::max(err, std::abs(back[i] - f[i]));
    CHECK(err <= 1e-12);

    for (double shift : {0.0, 2.5}) {
      const auto x = basis.solve_shifted(f.values, shift);
      ScalarField xs(g, x);
      ScalarField r = laplacian(xs);
      r *= -1.0;
      r.axpy(shift, xs);
      r -= f;
      CHECK(norm_l2(r) <= 1e-11 * norm_l2(f));
    }
  }
}

TEST_CASE("sobolev_norm") {
  const Grid g = Grid::make(2, 16);
  const SineBasis basis(g);
  const ScalarField f = random_scalar(g, 12);
  CHECK(sobolev_norm(f, 0.0) == doctest::Approx(norm_l2(f)).epsilon(1e-12));
  CHECK_THROWS_AS(sobolev_norm(f, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(sobolev_norm(f, -0.1), std::invalid_argument);

  ScalarField m = sine_mode(g, 1, 1);
  m *= 1.0 / norm_l2(m);
  const double lam1 = 8 / (g.h * g.h) * std::pow(std::sin(pi * g.h / 2), 2);
  CHECK(sobolev_norm(m, 1.0) == doctest::Approx(std::sqrt(lam1)).epsilon(1e-12));

  // Monotone in delta because lambda_min >= 1 on the unit box.
  double lmin = 1e300;
  for (double l : basis.eigenvalues()) lmin = std::min(lmin, l);
  REQUIRE(lmin >= 1.0);
  double prev = 0.0;
  for (double delta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double s = sobolev_norm(f, delta, basis);
    CHECK(s >= prev);
    prev = s;
  }
  // Vector order 1 is the H1 seminorm.
  const VectorField u = random_vector(g, 13);
  CHECK(sobolev_norm(u, 1.0, basis) == doctest::Approx(std::sqrt(dirichlet_seminorm_sq(u))).epsilon(1e-12));
}

TEST_CASE("Dirichlet solver and conjugate gradients") {
  const Grid g = Grid::make(2, 16);
  const DirichletSolver solver(g);
  const VectorField b = random_vector(g, 14);
  for (double shift : {0.0, 1.0}) {
    const VectorField x = solver.solve(b, shift);
    VectorField r = laplacian(x);
    r *= -1.0;
    r.axpy(shift, x);
    r -= b;
    CHECK(norm_l2(r) <= 1e-12 * norm_l2(b));
  }
  // Plain CG on a diagonal SPD system.
  const std::vector<double> diag{1, 2, 3, 4, 5};
  const std::vector<double> rhs{1, 1, 1, 1, 1};
  std::vector<double> x(5, 0.0);
  auto op = [&](std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = diag[i] * in[i];
  };
  const CgResult res = conjugate_gradient(op, rhs, x, CgOptions{1e-14});
  CHECK(res.iterations <= 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(x[i] == doctest::Approx(1.0 / diag[i]).epsilon(1e-12));
  std::vector<double> y(5, 0.0);
  CHECK_THROWS_AS(conjugate_gradient(op, rhs, y, CgOptions{1e-30, 0.0, 1}), ConvergenceError);
}

TEST_CASE("portable RNG reference streams") {
  std::uint64_t st = 0;
  CHECK(splitmix64(st) == 0xe220a8397b1dcdafULL);
  Xoshiro256 r0(0);
  CHECK(r0.next() == 0x99ec5f36cb75f2b4ULL);
  CHECK(r0.next() == 0xbf6e1f784956452aULL);
  CHECK(r0.next() == 0x1a5f849d4933e6e0ULL);
  Xoshiro256 r42(42);
  CHECK(r42.next() == 0x15780b2e0c2ec716ULL);
  CHECK(r42.next() == 0x6104d9866d113a7eULL);
  Xoshiro256 u(42);
  CHECK(u.uniform() == static_cast<double>(0x15780b2e0c2ec716ULL >> 11) * 0x1.0p-53);

  Xoshiro256 n(7);
  double s = 0.0, s2 = 0.0;
  const int count = 20000;
  for (int i = 0; i < count; ++i) {
    const double z = n.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / count) < 0.05);
  CHECK(std::abs(s2 / count - 1.0) < 0.05);
}

TEST_CASE("smooth random fields are grid independent") {
  // Node (i+1)/9 of the 8^2 grid is node 3i+2 of the 26^2 grid.
  const Grid a = Grid::make(2, 8), b = Grid::make(2, 26);
  const ScalarField fa = smooth_random(a, 5, 3), fb = smooth_random(b, 5, 3);
  double err = 0.0;
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      const std::size_t ia = static_cast<std::size_t>(i + 8 * j);
      const std::size_t ib = static_cast<std::size_t>((3 * i + 2) + 26 * (3 * j + 2));
      err = std::max(err, std::abs(fa[ia] - fb[ib]));
    }
  CHECK(err <= 1e-12);
}

TEST_CASE("band-limited noise equals sine-basis white noise on its own grid") {
  const Grid g = Grid::make(2, 8);
  const ScalarField f = band_limited_noise(g, g, 3);
  const ScalarField fine = band_limited_noise(Grid::make(2, 16), g, 3);
  CHECK(f.all_finite());
  CHECK(fine.all_finite());
  // Sampled sine modes k <= n stay discretely orthonormal, so the norm is grid independent.
  CHECK(norm_l2(fine) == doctest::Approx(norm_l2(f)).epsilon(1e-12));
}
