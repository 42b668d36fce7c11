#include "nopkit/rng.hpp"

#include <cmath>
#include <complex>

#include "nopkit/spectral.hpp"

namespace nop {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace

std::uint64_t Rng::next_u64() {
    return splitmix(seed_ + splitmix(stream_ + splitmix(counter_++)));
}

double Rng::uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] so the log is finite
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = double(next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
}

MeasureSpec MeasureSpec::standard(MeasureKind kind) {
    MeasureSpec s;
    s.kind = kind;
    switch (kind) {
    case MeasureKind::poisson_source:
        s.scale = 1.0;
        s.tau2 = 1.0;
        s.alpha = 2.0;
        s.boundary = BoundaryType::dirichlet;
        break;
    case MeasureKind::darcy_coeff:
        s.scale = 1.0;
        s.tau2 = 9.0;
        s.alpha = 2.0;
        s.boundary = BoundaryType::neumann;
        s.threshold = true;
        break;
    case MeasureKind::burgers_ic:
        s.scale = 625.0;
        s.tau2 = 25.0;
        s.alpha = 2.0;
        s.boundary = BoundaryType::periodic;
        break;
    case MeasureKind::ns_vorticity_ic:
        s.scale = std::pow(7.0, 1.5);
        s.tau2 = 49.0;
        s.alpha = 2.5;
        s.boundary = BoundaryType::periodic;
        break;
    }
    return s;
}

namespace {

double eigenvalue(const MeasureSpec& spec, double rho) {
    return spec.scale * std::pow(rho + spec.tau2, -spec.alpha);
}

// 1-D periodic draw via conjugate-symmetric Fourier coefficients.
std::vector<double> sample_periodic_1d(const MeasureSpec& spec, const Grid& g, Rng& rng) {
    std::size_t s = g.sizes[0];
    double L = g.length(0);
    std::vector<std::complex<double>> b(s, 0.0);
    // basis e^{i kappa x} / sqrt(L); coefficient variance lambda_k
    auto coef_scale = [&](long f) {
        double kappa = 2.0 * kPi * double(f) / L;
        return std::sqrt(eigenvalue(spec, kappa * kappa) / L);
    };
    b[0] = coef_scale(0) * rng.normal();
    for (std::size_t m = 1; m < (s + 1) / 2; ++m) {
        double c = coef_scale(long(m));
        double re = rng.normal() / std::sqrt(2.0);
        double im = rng.normal() / std::sqrt(2.0);
        b[m] = c * std::complex<double>(re, im);
        b[s - m] = std::conj(b[m]);
    }
    if (s % 2 == 0) b[s / 2] = coef_scale(long(s / 2)) * rng.normal();
    fft_nd_raw(b.data(), {s}, {0}, true);
    std::vector<double> out(s);
    for (std::size_t j = 0; j < s; ++j) out[j] = b[j].real() * double(s);
    return out;
}

// 2-D periodic draw; ns initial vorticity zero-means the field (the Poisson
// solve for the streamfunction needs mean-zero data on the torus).
std::vector<double> sample_periodic_2d(const MeasureSpec& spec, const Grid& g, Rng& rng) {
    std::size_t s1 = g.sizes[0], s2 = g.sizes[1];
    double L1 = g.length(0), L2 = g.length(1);
    double area = L1 * L2;
    std::vector<std::complex<double>> b(s1 * s2, 0.0);
    for (std::size_t m1 = 0; m1 < s1; ++m1) {
        long f1 = long(m1) <= long(s1) / 2 ? long(m1) : long(m1) - long(s1);
        std::size_t n1 = (s1 - m1) % s1;
        for (std::size_t m2 = 0; m2 < s2; ++m2) {
            std::size_t n2 = (s2 - m2) % s2;
            std::size_t idx = m1 * s2 + m2;
            std::size_t mirror = n1 * s2 + n2;
            if (idx > mirror) continue;
            long f2 = long(m2) <= long(s2) / 2 ? long(m2) : long(m2) - long(s2);
            double k1 = 2.0 * kPi * double(f1) / L1;
            double k2 = 2.0 * kPi * double(f2) / L2;
            double c = std::sqrt(eigenvalue(spec, k1 * k1 + k2 * k2) / area);
            if (idx == 0 && spec.kind == MeasureKind::ns_vorticity_ic) continue;
            if (idx == mirror) {
                b[idx] = c * rng.normal();
            } else {
                double re = rng.normal() / std::sqrt(2.0);
                double im = rng.normal() / std::sqrt(2.0);
                b[idx] = c * std::complex<double>(re, im);
                b[mirror] = std::conj(b[idx]);
            }
        }
    }
    fft_nd_raw(b.data(), {s1, s2}, {0, 1}, true);
    std::vector<double> out(s1 * s2);
    for (std::size_t j = 0; j < s1 * s2; ++j) out[j] = b[j].real() * double(s1 * s2);
    return out;
}

// 1-D Dirichlet draw in the sine eigenbasis (modes k = 1 .. s-2).
std::vector<double> sample_dirichlet_1d(const MeasureSpec& spec, const Grid& g, Rng& rng) {
    std::size_t s = g.sizes[0];
    double L = g.length(0);
    std::size_t K = s >= 2 ? s - 2 : 0;
    std::vector<double> xi(K);
    for (std::size_t k = 0; k < K; ++k) xi[k] = rng.normal();
    std::vector<double> out(s, 0.0);
    for (std::size_t k = 1; k <= K; ++k) {
        double rho = kPi * double(k) / L;
        double amp = std::sqrt(eigenvalue(spec, rho * rho) * 2.0 / L) * xi[k - 1];
        for (std::size_t j = 0; j < s; ++j) {
            double x = g.coord(0, j) - g.extent[0][0];
            out[j] += amp * std::sin(kPi * double(k) * x / L);
        }
    }
    return out;
}

// 2-D Neumann draw in the cosine-product eigenbasis via two matrix products.
// darcy_coeff zeroes the constant mode: without this the field is often
// single-signed and the threshold map degenerates to a constant coefficient.
std::vector<double> sample_neumann_2d(const MeasureSpec& spec, const Grid& g, Rng& rng) {
    std::size_t s1 = g.sizes[0], s2 = g.sizes[1];
    double L1 = g.length(0), L2 = g.length(1);
    std::size_t K1 = s1, K2 = s2; // modes k = 0 .. s-1 per axis
    std::vector<double> C(K1 * K2);
    for (std::size_t k1 = 0; k1 < K1; ++k1) {
        for (std::size_t k2 = 0; k2 < K2; ++k2) {
            double r1 = kPi * double(k1) / L1;
            double r2 = kPi * double(k2) / L2;
            C[k1 * K2 + k2] = std::sqrt(eigenvalue(spec, r1 * r1 + r2 * r2)) * rng.normal();
        }
    }
    if (spec.kind == MeasureKind::darcy_coeff) C[0] = 0.0;
    auto basis = [](std::size_t s, std::size_t K, const Grid& g, std::size_t axis) {
        double L = g.length(axis);
        std::vector<double> B(s * K);
        for (std::size_t i = 0; i < s; ++i) {
            double x = g.coord(axis, i) - g.extent[axis][0];
            B[i * K + 0] = std::sqrt(1.0 / L);
            for (std::size_t k = 1; k < K; ++k)
                B[i * K + k] = std::sqrt(2.0 / L) * std::cos(kPi * double(k) * x / L);
        }
        return B;
    };
    std::vector<double> B1 = basis(s1, K1, g, 0);
    std::vector<double> B2 = basis(s2, K2, g, 1);
    std::vector<double> tmp(s1 * K2), out(s1 * s2);
    dgemm_nn(B1.data(), C.data(), tmp.data(), s1, K1, K2, false);
    dgemm_nt(tmp.data(), B2.data(), out.data(), s1, K2, s2, false);
    return out;
}

} // namespace

FieldSample sample_grf(const MeasureSpec& spec, const Grid& grid, Rng& rng) {
    std::size_t d = grid.dims();
    if (spec.alpha <= double(d) / 2.0)
        throw ConfigError("sample_grf: exponent alpha <= d/2 gives non-function samples");
    bool want_periodic = spec.boundary == BoundaryType::periodic;
    if (grid.periodic != want_periodic)
        throw ConfigError("sample_grf: grid periodicity does not match the measure boundary");
    if (spec.threshold && spec.kind != MeasureKind::darcy_coeff)
        throw ConfigError("sample_grf: threshold map is reserved for darcy_coeff");

    std::vector<double> vals;
    switch (spec.boundary) {
    case BoundaryType::periodic:
        if (d == 1)
            vals = sample_periodic_1d(spec, grid, rng);
        else if (d == 2)
            vals = sample_periodic_2d(spec, grid, rng);
        else
            throw ConfigError("sample_grf: periodic sampler supports 1-D and 2-D grids");
        break;
    case BoundaryType::dirichlet:
        if (d != 1) throw ConfigError("sample_grf: Dirichlet sampler is 1-D");
        vals = sample_dirichlet_1d(spec, grid, rng);
        break;
    case BoundaryType::neumann:
        if (d != 2) throw ConfigError("sample_grf: Neumann sampler is 2-D");
        vals = sample_neumann_2d(spec, grid, rng);
        break;
    }
    if (spec.threshold)
        for (double& v : vals) v = v >= 0.0 ? spec.threshold_above : spec.threshold_below;

    Shape shape = grid.sizes;
    shape.push_back(1);
    return {grid, Tensor(shape, std::move(vals))};
}

FieldSample add_noise(const FieldSample& a, double level, Rng& rng) {
    if (level < 0.0) throw ConfigError("add_noise: negative noise level");
    double sup = 0.0;
    const double* v = a.values.data();
    for (std::size_t i = 0; i < a.values.size(); ++i) sup = std::max(sup, std::abs(v[i]));
    std::vector<double> out(a.values.size());
    double amp = level * sup;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = v[i] + (amp == 0.0 ? 0.0 : amp * rng.normal());
    return {a.grid, Tensor(a.values.shape(), std::move(out))};
}

} // namespace nop
