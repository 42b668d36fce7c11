#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "nopkit/rng.hpp"
#include "nopkit/spectral.hpp"

using namespace nop;

namespace {

constexpr double PI = 3.14159265358979323846;

// independent eigenvalue oracle: lambda = c (rho + tau^2)^(-alpha)
double lam(const MeasureSpec& s, double rho) {
    return s.scale / std::pow(rho + s.tau2, s.alpha);
}

} // namespace

TEST_CASE("rng determinism and stream independence") {
    Rng a(42, 3), b(42, 3), c(42, 4);
    bool same = true, differ = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        same = same && (x == y);
        differ = differ || (x != z);
    }
    CHECK(same);
    CHECK(differ);

    // uniform in [0,1), normal has roughly unit scale
    Rng r(7);
    double m = 0, m2 = 0;
    int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double g = r.normal();
        m += g / n;
        m2 += g * g / n;
    }
    CHECK(std::abs(m) < 0.03);
    CHECK(std::abs(m2 - 1.0) < 0.05);
}

TEST_CASE("standard measures carry the documented eigenvalue scales") {
    MeasureSpec bu = MeasureSpec::standard(MeasureKind::burgers_ic);
    CHECK(lam(bu, 0.0) == doctest::Approx(1.0)); // 625 / 25^2
    MeasureSpec ns = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
    CHECK(lam(ns, 0.0) == doctest::Approx(std::pow(7.0, -3.5)));
    MeasureSpec po = MeasureSpec::standard(MeasureKind::poisson_source);
    CHECK(lam(po, PI * PI) == doctest::Approx(std::pow(PI * PI + 1.0, -2.0)));
    MeasureSpec da = MeasureSpec::standard(MeasureKind::darcy_coeff);
    CHECK(da.threshold);
    CHECK(lam(da, 0.0) == doctest::Approx(1.0 / 81.0));
}

TEST_CASE("modal variances match the covariance eigenvalues: periodic 1-D") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::burgers_ic);
    std::size_t s = 64;
    Grid g = Grid::uniform_1d(s, 0.0, 2.0 * PI, true);
    double L = 2.0 * PI;
    std::vector<double> var(20, 0.0);
    int draws = 2000;
    for (int d = 0; d < draws; ++d) {
        Rng rng(11, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        std::vector<std::complex<double>> buf(s);
        for (std::size_t j = 0; j < s; ++j) buf[j] = f.values.data()[j];
        fft_nd_raw(buf.data(), {s}, {0}, false);
        for (std::size_t m = 0; m < 20; ++m) {
            // <w, e^{i k x}/sqrt(L)> = sqrt(L) * DFT_m / s
            double c2 = std::norm(buf[m] / double(s)) * L;
            var[m] += c2 / draws;
        }
    }
    for (std::size_t m = 0; m < 20; ++m) {
        double kappa = 2.0 * PI * double(m) / L;
        double target = lam(spec, kappa * kappa);
        CHECK(std::abs(var[m] - target) < 0.1 * target);
    }
}

TEST_CASE("modal variances match the covariance eigenvalues: periodic 2-D") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
    std::size_t s = 32;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, true);
    // 20 lowest nonzero modes in loop order
    std::vector<std::pair<std::size_t, std::size_t>> modes;
    for (std::size_t f1 = 0; f1 < 3 && modes.size() < 20; ++f1)
        for (std::size_t f2 = 0; f2 < 8 && modes.size() < 20; ++f2)
            if (f1 + f2 > 0) modes.push_back({f1, f2});
    std::vector<double> var(modes.size(), 0.0);
    int draws = 2000;
    for (int d = 0; d < draws; ++d) {
        Rng rng(13, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        std::vector<std::complex<double>> buf(s * s);
        for (std::size_t j = 0; j < s * s; ++j) buf[j] = f.values.data()[j];
        fft_nd_raw(buf.data(), {s, s}, {0, 1}, false);
        for (std::size_t m = 0; m < modes.size(); ++m) {
            double c2 = std::norm(buf[modes[m].first * s + modes[m].second] / double(s * s));
            var[m] += c2 / draws;
        }
    }
    double mean_abs = 0.0;
    for (int d = 0; d < 50; ++d) {
        Rng rng(14, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        double m = 0;
        for (std::size_t j = 0; j < s * s; ++j) m += f.values.data()[j] / double(s * s);
        mean_abs = std::max(mean_abs, std::abs(m));
    }
    CHECK(mean_abs < 1e-12); // vorticity draws are mean-zero
    for (std::size_t m = 0; m < modes.size(); ++m) {
        double rho = 4.0 * PI * PI * double(modes[m].first * modes[m].first +
                                            modes[m].second * modes[m].second);
        double target = lam(spec, rho);
        CHECK(std::abs(var[m] - target) < 0.1 * target);
    }
}

TEST_CASE("modal variances match the covariance eigenvalues: Dirichlet sine basis") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::poisson_source);
    std::size_t s = 85;
    Grid g = Grid::uniform_1d(s, 0.0, 1.0, false);
    double h = 1.0 / double(s - 1);
    std::vector<double> var(20, 0.0);
    int draws = 2000;
    for (int d = 0; d < draws; ++d) {
        Rng rng(17, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        CHECK(std::abs(f.values.data()[0]) < 1e-12);      // boundary values vanish
        CHECK(std::abs(f.values.data()[s - 1]) < 1e-12);
        for (std::size_t k = 1; k <= 20; ++k) {
            double c = 0;
            for (std::size_t j = 0; j < s; ++j)
                c += h * f.values.data()[j] * std::sqrt(2.0) * std::sin(PI * double(k) * double(j) * h);
            var[k - 1] += c * c / draws;
        }
    }
    for (std::size_t k = 1; k <= 20; ++k) {
        double target = lam(spec, PI * PI * double(k * k));
        CHECK(std::abs(var[k - 1] - target) < 0.1 * target);
    }
}

TEST_CASE("modal variances match the covariance eigenvalues: Neumann cosine basis") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::darcy_coeff);
    spec.threshold = false; // examine the underlying Gaussian field
    std::size_t s = 31;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, false);
    double h = 1.0 / double(s - 1);
    std::vector<std::pair<std::size_t, std::size_t>> modes;
    for (std::size_t k1 = 0; k1 < 4 && modes.size() < 20; ++k1)
        for (std::size_t k2 = 0; k2 < 6 && modes.size() < 20; ++k2)
            if (k1 + k2 > 0) modes.push_back({k1, k2}); // constant mode is zeroed
    auto phi = [&](std::size_t k, std::size_t j) {
        double base = k == 0 ? 1.0 : std::sqrt(2.0) * std::cos(PI * double(k) * double(j) * h);
        return base;
    };
    auto wq = [&](std::size_t j) { return (j == 0 || j == s - 1) ? 0.5 * h : h; };
    std::vector<double> var(modes.size(), 0.0);
    int draws = 2000;
    for (int d = 0; d < draws; ++d) {
        Rng rng(19, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        for (std::size_t m = 0; m < modes.size(); ++m) {
            double c = 0;
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j)
                    c += wq(i) * wq(j) * f.values.data()[i * s + j] *
                         phi(modes[m].first, i) * phi(modes[m].second, j);
            var[m] += c * c / draws;
        }
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
        double rho = PI * PI * double(modes[m].first * modes[m].first +
                                      modes[m].second * modes[m].second);
        double target = lam(spec, rho);
        CHECK(std::abs(var[m] - target) < 0.1 * target);
    }
}

TEST_CASE("darcy pushforward yields two-valued coefficients") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::darcy_coeff);
    std::size_t s = 85;
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, false);
    int both = 0;
    for (int d = 0; d < 100; ++d) {
        Rng rng(23, std::uint64_t(d));
        FieldSample f = sample_grf(spec, g, rng);
        bool has3 = false, has12 = false;
        for (std::size_t i = 0; i < s * s; ++i) {
            double v = f.values.data()[i];
            CHECK((v == 3.0 || v == 12.0));
            has3 = has3 || v == 3.0;
            has12 = has12 || v == 12.0;
        }
        if (has3 && has12) ++both;
    }
    CHECK(both >= 99);
}

TEST_CASE("noise injection") {
    Grid g = Grid::uniform_1d(10000, 0.0, 1.0, false);
    FieldSample a{g, Tensor({10000, 1}, 2.0)};
    Rng rng(29);

    FieldSample clean = add_noise(a, 0.0, rng);
    for (std::size_t i = 0; i < 10000; ++i) CHECK(clean.values.data()[i] == 2.0);

    FieldSample noisy = add_noise(a, 0.1, rng);
    double m = 0, m2 = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
        double v = noisy.values.data()[i];
        m += v / 10000.0;
        m2 += v * v / 10000.0;
    }
    double sd = std::sqrt(m2 - m * m);
    CHECK(std::abs(sd - 0.2) < 0.01); // level * ||a||_inf = 0.1 * 2

    FieldSample zero{g, Tensor({10000, 1}, 0.0)};
    FieldSample zn = add_noise(zero, 0.5, rng);
    for (std::size_t i = 0; i < 10000; ++i) CHECK(zn.values.data()[i] == 0.0);
}

TEST_CASE("sampler validation") {
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::burgers_ic);
    Grid endpoint = Grid::uniform_1d(16, 0.0, 1.0, false);
    Rng r(1);
    CHECK_THROWS_AS(sample_grf(spec, endpoint, r), ConfigError);

    MeasureSpec bad = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
    bad.alpha = 1.0; // <= d/2 in 2-D
    Grid torus = Grid::uniform_2d(16, 0.0, 1.0, true);
    CHECK_THROWS_AS(sample_grf(bad, torus, r), ConfigError);
}
