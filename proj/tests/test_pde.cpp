#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nopkit/pde.hpp"
#include "nopkit/rng.hpp"

using namespace nop;

namespace {

constexpr double PI = 3.14159265358979323846;

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double l2(const Tensor& a) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
    return std::sqrt(s);
}

} // namespace

TEST_CASE("poisson: quadrature of the Green's function") {
    std::size_t s = 85;
    Grid g = Grid::uniform_1d(s, 0.0, 1.0, false);
    double h = 1.0 / double(s - 1);

    // zero source
    FieldSample zero{g, Tensor({s, 1}, 0.0)};
    FieldSample uz = solve_poisson_green(zero);
    CHECK(max_abs_diff(uz.values, Tensor({s, 1}, 0.0)) == 0.0);

    // discrete delta at y=0.5 reads the kernel back out: u(0.5) = G(0.5,0.5) = 1/4
    std::vector<double> delta(s, 0.0);
    delta[(s - 1) / 2] = 1.0 / h;
    FieldSample ud = solve_poisson_green({g, Tensor({s, 1}, delta)});
    CHECK(ud.values.data()[(s - 1) / 2] == doctest::Approx(0.25).epsilon(1e-12));

    // sine eigenfunction: u = sin(pi x)/pi^2
    std::vector<double> f(s), uref(s);
    for (std::size_t j = 0; j < s; ++j) {
        double x = double(j) * h;
        f[j] = std::sin(PI * x);
        uref[j] = std::sin(PI * x) / (PI * PI);
    }
    FieldSample us = solve_poisson_green({g, Tensor({s, 1}, f)});
    CHECK(max_abs_diff(us.values, Tensor({s, 1}, uref)) < 1e-3);

    // f == 1: integrand piecewise linear with the kink on a node, so the
    // trapezoid rule is exact: u(x) = x(1-x)/2
    FieldSample u1 = solve_poisson_green({g, Tensor({s, 1}, 1.0)});
    for (std::size_t j = 0; j < s; ++j) {
        double x = double(j) * h;
        CHECK(std::abs(u1.values.data()[j] - 0.5 * x * (1.0 - x)) < 1e-12);
    }
}

TEST_CASE("darcy: constant coefficient matches the series solution") {
    std::size_t s = 85;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, false);
    FieldSample a{g, Tensor({s, s, 1}, 1.0)};
    FieldSample u = solve_darcy_fdm(a);

    // boundary nodes are exactly zero
    for (std::size_t j = 0; j < s; ++j) {
        CHECK(u.values.data()[j] == 0.0);
        CHECK(u.values.data()[(s - 1) * s + j] == 0.0);
        CHECK(u.values.data()[j * s] == 0.0);
        CHECK(u.values.data()[j * s + s - 1] == 0.0);
    }

    // -Lap u = 1 on the unit square: double sine series at the center
    double ref = 0;
    for (int k = 1; k <= 399; k += 2)
        for (int l = 1; l <= 399; l += 2) {
            double skl = std::sin(k * PI / 2) * std::sin(l * PI / 2);
            ref += 16.0 / (PI * PI * PI * PI * PI * PI) /
                   (double(k) * double(l) * (double(k * k) + double(l * l))) * skl * PI * PI;
        }
    double center = u.values.data()[(s / 2) * s + (s / 2)];
    CHECK(std::abs(center - ref) < 1e-3);

    CHECK_THROWS_AS(solve_darcy_fdm({g, Tensor({s, s, 1}, -1.0)}), DomainError);
}

TEST_CASE("darcy: discrete flux balance on a two-valued coefficient") {
    std::size_t s = 43;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, false);
    std::vector<double> av(s * s);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
            av[i * s + j] = (std::sin(3.0 * double(i) + double(j)) > 0) ? 12.0 : 3.0;
    FieldSample a{g, Tensor({s, s, 1}, av)};
    FieldSample u = solve_darcy_fdm(a);

    // independently reassemble the operator and check A u = f
    double h = 1.0 / double(s - 1);
    double worst = 0;
    auto at = [&](std::size_t i, std::size_t j) { return av[i * s + j]; };
    auto uu = [&](std::size_t i, std::size_t j) { return u.values.data()[i * s + j]; };
    auto hm = [](double p, double q) { return 2 * p * q / (p + q); };
    for (std::size_t i = 1; i + 1 < s; ++i) {
        for (std::size_t j = 1; j + 1 < s; ++j) {
            double r = hm(at(i, j), at(i - 1, j)) * (uu(i, j) - uu(i - 1, j)) +
                       hm(at(i, j), at(i + 1, j)) * (uu(i, j) - uu(i + 1, j)) +
                       hm(at(i, j), at(i, j - 1)) * (uu(i, j) - uu(i, j - 1)) +
                       hm(at(i, j), at(i, j + 1)) * (uu(i, j) - uu(i, j + 1));
            worst = std::max(worst, std::abs(r / (h * h) - 1.0));
        }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("darcy: second-order convergence under refinement") {
    auto smooth = [](const Grid& g) {
        std::size_t s = g.sizes[0];
        std::vector<double> av(s * s);
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t j = 0; j < s; ++j) {
                double x = g.coord(0, i), y = g.coord(1, j);
                av[i * s + j] = 1.0 + 0.5 * std::sin(2 * PI * x) * std::cos(2 * PI * y);
            }
        return FieldSample{g, Tensor({s, s, 1}, av)};
    };
    Grid g43 = Grid::uniform_2d(43, 0, 1, false);
    Grid g85 = Grid::uniform_2d(85, 0, 1, false);
    Grid g169 = Grid::uniform_2d(169, 0, 1, false);
    FieldSample u43 = solve_darcy_fdm(smooth(g43));
    FieldSample u85 = downsample(solve_darcy_fdm(smooth(g85)), {2, 2});
    FieldSample u169 = downsample(solve_darcy_fdm(smooth(g169)), {4, 4});
    double e1 = max_abs_diff(u43.values, u85.values);
    double e2 = max_abs_diff(u85.values, u169.values);
    CHECK(e1 / e2 > 3.0);
    CHECK(e1 / e2 < 5.0);
}

TEST_CASE("burgers: heat part is exact and the full march self-converges") {
    std::size_t s = 128;
    Grid g = Grid::uniform_1d(s, 0.0, 2 * PI, true);

    FieldSample zero{g, Tensor({s, 1}, 0.0)};
    FieldSample z1 = solve_burgers(zero, 0.1, 0.1, {1e-3, true});
    CHECK(l2(z1.values) == 0.0);

    std::vector<double> sine(s), decayed(s);
    for (std::size_t j = 0; j < s; ++j) {
        sine[j] = std::sin(g.coord(0, j));
        decayed[j] = std::exp(-0.1) * sine[j];
    }
    FieldSample heat = solve_burgers({g, Tensor({s, 1}, sine)}, 1.0, 0.1, {1e-3, false});
    CHECK(max_abs_diff(heat.values, Tensor({s, 1}, decayed)) < 1e-8);

    // temporal self-convergence on a measure draw: halving dt halves the
    // difference (first order), and the relative difference is below 1e-4
    std::size_t sb = 2048;
    Grid gb = Grid::uniform_1d(sb, 0.0, 2 * PI, true);
    Rng rng(2);
    FieldSample u0 = sample_grf(MeasureSpec::standard(MeasureKind::burgers_ic), gb, rng);
    FieldSample fine = solve_burgers(u0, 1.0, 0.1, {1e-4, true});
    FieldSample coarse = solve_burgers(u0, 1.0, 0.1, {2e-4, true});
    FieldSample coarser = solve_burgers(u0, 1.0, 0.1, {4e-4, true});
    auto rel_l2 = [](const Tensor& a, const Tensor& b) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            double d = a.data()[i] - b.data()[i];
            num += d * d;
            den += a.data()[i] * a.data()[i];
        }
        return std::sqrt(num / den);
    };
    double d12 = rel_l2(fine.values, coarse.values);
    double d24 = rel_l2(fine.values, coarser.values);
    CHECK(d12 < 1e-4);
    CHECK(d24 / d12 > 2.5); // ~3 for a first-order method
    CHECK(d24 / d12 < 3.5);

    // strongly viscous runs dissipate monotonically
    double prev = l2(Tensor({s, 1}, sine));
    FieldSample cur{g, Tensor({s, 1}, sine)};
    for (int i = 0; i < 5; ++i) {
        cur = solve_burgers(cur, 0.2, 0.5, {1e-3, true});
        double now = l2(cur.values);
        CHECK(now <= prev * (1 + 1e-12));
        prev = now;
    }
}

TEST_CASE("navier-stokes: taylor-green decay and trivial solutions") {
    std::size_t s = 64;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, true);
    double nu = 1e-2;
    std::vector<double> w0(s * s), wref(s * s);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
            double x = g.coord(0, i), y = g.coord(1, j);
            w0[i * s + j] = 4 * PI * std::sin(2 * PI * x) * std::sin(2 * PI * y);
            wref[i * s + j] = w0[i * s + j] * std::exp(-8 * PI * PI * nu);
        }
    NsOptions opt;
    opt.forcing = false;
    auto frames = solve_navier_stokes({g, Tensor({s, s, 1}, w0)}, 1.0, nu, 1.0, opt);
    REQUIRE(frames.size() == 1);
    double rel = max_abs_diff(frames[0].values, Tensor({s, s, 1}, wref)) / (4 * PI);
    CHECK(rel < 1e-4);

    auto zf = solve_navier_stokes({g, Tensor({s, s, 1}, 0.0)}, 0.05, nu, 0.05, opt);
    CHECK(l2(zf[0].values) == 0.0);

    CHECK_THROWS_AS(solve_navier_stokes({g, Tensor({s, s, 1}, 1.0)}, 0.1, nu, 0.1, opt),
                    DomainError);
}

TEST_CASE("navier-stokes: unforced enstrophy decays") {
    std::size_t s = 32;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, true);
    Rng rng(5);
    FieldSample w0 = sample_grf(MeasureSpec::standard(MeasureKind::ns_vorticity_ic), g, rng);
    NsOptions opt;
    opt.forcing = false;
    auto frames = solve_navier_stokes(w0, 2.0, 1e-3, 0.25, opt);
    double prev = l2(w0.values);
    for (const auto& fr : frames) {
        double now = l2(fr.values);
        CHECK(now <= prev * (1 + 1e-8));
        prev = now;
    }
}

TEST_CASE("downsample: strides, endpoints, composition") {
    // 421-point endpoint grid -> 85 points, endpoints preserved
    std::size_t s = 421;
    Grid g = Grid::uniform_1d(s, 0.0, 1.0, false);
    std::vector<double> v(s);
    for (std::size_t j = 0; j < s; ++j) v[j] = double(j);
    FieldSample f{g, Tensor({s, 1}, v)};
    FieldSample d = downsample(f, {5});
    CHECK(d.grid.sizes[0] == 85);
    CHECK(d.values.data()[0] == 0.0);
    CHECK(d.values.data()[84] == 420.0);
    CHECK(d.values.data()[1] == 5.0);

    FieldSample ident = downsample(f, {1});
    CHECK(max_abs_diff(ident.values, f.values) == 0.0);

    // periodic: 8192 / 32 = 256
    Grid gp = Grid::uniform_1d(8192, 0.0, 2 * PI, true);
    FieldSample fp{gp, Tensor({8192, 1}, 1.0)};
    CHECK(downsample(fp, {32}).grid.sizes[0] == 256);

    // composition multiplies factors
    FieldSample two = downsample(downsample(f, {2}), {2});
    FieldSample four = downsample(f, {4});
    CHECK(max_abs_diff(two.values, four.values) == 0.0);

    CHECK_THROWS_AS(downsample(f, {9}), ConfigError);
}

TEST_CASE("build_dataset: manifests, sizes, determinism") {
    Grid g = Grid::uniform_1d(85, 0.0, 1.0, false);
    Dataset empty = build_dataset("poisson", 0, g, 99);
    CHECK(empty.inputs.empty());
    CHECK(empty.manifest.problem == "poisson");
    CHECK(empty.manifest.seed == 99);
    CHECK(empty.manifest.format_version == 1);

    Dataset d1 = build_dataset("poisson", 3, g, 7);
    Dataset d2 = build_dataset("poisson", 3, g, 7);
    REQUIRE(d1.inputs.size() == 3);
    REQUIRE(d1.outputs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(max_abs_diff(d1.inputs[i].values, d2.inputs[i].values) == 0.0);
        CHECK(max_abs_diff(d1.outputs[i].values, d2.outputs[i].values) == 0.0);
    }
    Dataset d3 = build_dataset("poisson", 3, g, 8);
    CHECK(max_abs_diff(d1.inputs[0].values, d3.inputs[0].values) > 0.0);

    Grid gb = Grid::uniform_1d(128, 0.0, 2 * PI, true);
    BuildOptions bo;
    bo.t_end = 0.05;
    bo.dt = 1e-3;
    Dataset db = build_dataset("burgers", 2, gb, 3, bo);
    CHECK(db.manifest.viscosity == 0.1);
    CHECK(db.manifest.dt == 1e-3);
    CHECK(db.inputs[0].values.size() == 128);

    CHECK_THROWS_AS(build_dataset("advection", 1, g, 1), ConfigError);
}

TEST_CASE("build_dataset: ns trajectory split") {
    Grid g = Grid::uniform_2d(16, 0.0, 1.0, true);
    BuildOptions bo;
    bo.t_end = 12.0;
    bo.dt = 5e-3;
    bo.viscosity = 1e-3;
    Dataset ds = build_dataset("ns_trajectory", 1, g, 21, bo);
    CHECK(ds.inputs[0].channels() == 10);
    CHECK(ds.outputs[0].channels() == 2);

    bo.t_end = 0.5;
    Dataset one = build_dataset("ns_onestep", 1, g, 21, bo);
    CHECK(one.inputs[0].channels() == 1);
    CHECK(one.outputs[0].channels() == 1);
}
