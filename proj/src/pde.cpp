#include "nopkit/pde.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "nopkit/spectral.hpp"

namespace nop {

namespace {

constexpr double kPi = 3.14159265358979323846;

double green_1d(double x, double y) { return 0.5 * (x + y - std::abs(y - x)) - x * y; }

void check_finite(const std::vector<std::complex<double>>& v, const char* where) {
    for (const auto& c : v)
        if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
            throw SolverError(std::string(where) + ": solution blew up (non-finite values)");
}

} // namespace

FieldSample solve_poisson_green(const FieldSample& f) {
    const Grid& g = f.grid;
    if (g.dims() != 1 || g.periodic)
        throw ConfigError("solve_poisson_green: needs a 1-D endpoint grid");
    std::size_t s = g.sizes[0];
    double h = g.spacing(0);
    const double* fv = f.values.data();
    std::vector<double> u(s, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
        double x = g.coord(0, i);
        double acc = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
            double w = (j == 0 || j == s - 1) ? 0.5 * h : h;
            acc += w * green_1d(x, g.coord(0, j)) * fv[j];
        }
        u[i] = acc;
    }
    return {g, Tensor({s, 1}, std::move(u))};
}

FieldSample solve_darcy_fdm(const FieldSample& a, double f) {
    const Grid& g = a.grid;
    if (g.dims() != 2 || g.periodic)
        throw ConfigError("solve_darcy_fdm: needs a 2-D endpoint grid");
    std::size_t s1 = g.sizes[0], s2 = g.sizes[1];
    const double* av = a.values.data();
    for (std::size_t i = 0; i < s1 * s2; ++i)
        if (!(av[i] > 0.0)) throw DomainError("solve_darcy_fdm: coefficient must be positive");
    double hx = g.spacing(0), hy = g.spacing(1);
    std::size_t n1 = s1 - 2, n2 = s2 - 2; // interior unknowns
    std::size_t n = n1 * n2;
    auto aat = [&](std::size_t i, std::size_t j) { return av[i * s2 + j]; };
    auto harm = [](double p, double q) { return 2.0 * p * q / (p + q); };
    // face coefficients for interior node (i,j) (1-based in the full grid)
    std::vector<double> cN(n), cS(n), cW(n), cE(n), diag(n);
    for (std::size_t i = 1; i <= n1; ++i) {
        for (std::size_t j = 1; j <= n2; ++j) {
            std::size_t t = (i - 1) * n2 + (j - 1);
            cN[t] = harm(aat(i, j), aat(i - 1, j)) / (hx * hx);
            cS[t] = harm(aat(i, j), aat(i + 1, j)) / (hx * hx);
            cW[t] = harm(aat(i, j), aat(i, j - 1)) / (hy * hy);
            cE[t] = harm(aat(i, j), aat(i, j + 1)) / (hy * hy);
            diag[t] = cN[t] + cS[t] + cW[t] + cE[t];
        }
    }
    auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
        for (std::size_t i = 0; i < n1; ++i) {
            for (std::size_t j = 0; j < n2; ++j) {
                std::size_t t = i * n2 + j;
                double v = diag[t] * x[t];
                if (i > 0) v -= cN[t] * x[t - n2];
                if (i + 1 < n1) v -= cS[t] * x[t + n2];
                if (j > 0) v -= cW[t] * x[t - 1];
                if (j + 1 < n2) v -= cE[t] * x[t + 1];
                y[t] = v;
            }
        }
    };
    // Jacobi-preconditioned conjugate gradients
    std::vector<double> x(n, 0.0), r(n, f), z(n), p(n), q(n);
    double bnorm = std::sqrt(double(n)) * std::abs(f);
    if (bnorm == 0.0) {
        Shape shape = {s1, s2, 1};
        return {g, Tensor(shape, 0.0)};
    }
    for (std::size_t t = 0; t < n; ++t) z[t] = r[t] / diag[t];
    p = z;
    double rz = 0;
    for (std::size_t t = 0; t < n; ++t) rz += r[t] * z[t];
    std::size_t cap = 20 * std::max<std::size_t>(s1, 200);
    double rel = 1.0;
    for (std::size_t it = 0; it < cap; ++it) {
        apply(p, q);
        double pq = 0;
        for (std::size_t t = 0; t < n; ++t) pq += p[t] * q[t];
        double alpha = rz / pq;
        double rnorm2 = 0;
        for (std::size_t t = 0; t < n; ++t) {
            x[t] += alpha * p[t];
            r[t] -= alpha * q[t];
            rnorm2 += r[t] * r[t];
        }
        rel = std::sqrt(rnorm2) / bnorm;
        if (rel < 1e-10) break;
        double rz_new = 0;
        for (std::size_t t = 0; t < n; ++t) {
            z[t] = r[t] / diag[t];
            rz_new += r[t] * z[t];
        }
        double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t t = 0; t < n; ++t) p[t] = z[t] + beta * p[t];
    }
    if (rel >= 1e-10)
        throw SolverError("solve_darcy_fdm: CG stalled at relative residual " + std::to_string(rel));
    std::vector<double> u(s1 * s2, 0.0);
    for (std::size_t i = 1; i <= n1; ++i)
        for (std::size_t j = 1; j <= n2; ++j) u[i * s2 + j] = x[(i - 1) * n2 + (j - 1)];
    return {g, Tensor({s1, s2, 1}, std::move(u))};
}

FieldSample solve_burgers(const FieldSample& u0, double t_end, double nu,
                          const BurgersOptions& opt) {
    const Grid& g = u0.grid;
    if (g.dims() != 1 || !g.periodic)
        throw ConfigError("solve_burgers: needs a 1-D periodic grid");
    if (!(nu > 0.0)) throw ConfigError("solve_burgers: viscosity must be positive");
    std::size_t s = g.sizes[0];
    double L = g.length(0);
    std::vector<std::complex<double>> uh(s), work(s);
    for (std::size_t j = 0; j < s; ++j) uh[j] = u0.values.data()[j];
    fft_nd_raw(uh.data(), {s}, {0}, false);

    std::vector<double> kappa(s), visc(s);
    std::vector<bool> keep(s);
    for (std::size_t m = 0; m < s; ++m) {
        long fq = long(m) <= long(s) / 2 ? long(m) : long(m) - long(s);
        kappa[m] = 2.0 * kPi * double(fq) / L;
        keep[m] = std::labs(fq) <= long(s) / 3; // 2/3 dealiasing
    }
    std::size_t steps = std::size_t(std::llround(t_end / opt.dt));
    for (std::size_t m = 0; m < s; ++m) visc[m] = std::exp(-nu * kappa[m] * kappa[m] * opt.dt);

    for (std::size_t step = 0; step < steps; ++step) {
        for (std::size_t m = 0; m < s; ++m) uh[m] *= visc[m];
        if (opt.nonlinear) {
            work = uh;
            fft_nd_raw(work.data(), {s}, {0}, true);
            for (std::size_t j = 0; j < s; ++j) {
                double u = work[j].real();
                work[j] = u * u;
            }
            fft_nd_raw(work.data(), {s}, {0}, false);
            for (std::size_t m = 0; m < s; ++m) {
                if (!keep[m]) {
                    work[m] = 0.0;
                    continue;
                }
                // -1/2 d/dx (u^2)
                uh[m] += opt.dt * std::complex<double>(0, -0.5 * kappa[m]) * work[m];
            }
        }
        if ((step & 1023) == 0) check_finite(uh, "solve_burgers");
    }
    check_finite(uh, "solve_burgers");
    fft_nd_raw(uh.data(), {s}, {0}, true);
    std::vector<double> out(s);
    for (std::size_t j = 0; j < s; ++j) out[j] = uh[j].real();
    return {g, Tensor({s, 1}, std::move(out))};
}

std::vector<FieldSample> solve_navier_stokes(const FieldSample& w0, double t_end, double nu,
                                             double record_every, const NsOptions& opt) {
    const Grid& g = w0.grid;
    if (g.dims() != 2 || !g.periodic)
        throw ConfigError("solve_navier_stokes: needs a 2-D periodic grid");
    if (!(nu > 0.0)) throw ConfigError("solve_navier_stokes: viscosity must be positive");
    std::size_t s1 = g.sizes[0], s2 = g.sizes[1];
    std::size_t J = s1 * s2;
    {
        double mean = 0;
        for (std::size_t i = 0; i < J; ++i) mean += w0.values.data()[i] / double(J);
        if (std::abs(mean) > 1e-10)
            throw DomainError("solve_navier_stokes: initial vorticity must be mean-zero");
    }
    std::vector<std::complex<double>> wh(J);
    for (std::size_t i = 0; i < J; ++i) wh[i] = w0.values.data()[i];
    fft_nd_raw(wh.data(), {s1, s2}, {0, 1}, false);

    std::vector<double> k1(J), k2(J), ksq(J);
    std::vector<bool> keep(J);
    for (std::size_t m1 = 0; m1 < s1; ++m1) {
        long f1 = long(m1) <= long(s1) / 2 ? long(m1) : long(m1) - long(s1);
        for (std::size_t m2 = 0; m2 < s2; ++m2) {
            long f2 = long(m2) <= long(s2) / 2 ? long(m2) : long(m2) - long(s2);
            std::size_t t = m1 * s2 + m2;
            k1[t] = 2.0 * kPi * double(f1) / g.length(0);
            k2[t] = 2.0 * kPi * double(f2) / g.length(1);
            ksq[t] = k1[t] * k1[t] + k2[t] * k2[t];
            keep[t] = std::labs(f1) <= long(s1) / 3 && std::labs(f2) <= long(s2) / 3;
        }
    }
    // forcing spectrum
    std::vector<std::complex<double>> fh(J, 0.0);
    if (opt.forcing) {
        std::vector<std::complex<double>> fphys(J);
        for (std::size_t i = 0; i < s1; ++i)
            for (std::size_t j = 0; j < s2; ++j) {
                double x = g.coord(0, i), y = g.coord(1, j);
                fphys[i * s2 + j] =
                    0.1 * (std::sin(2 * kPi * (x + y)) + std::cos(2 * kPi * (x + y)));
            }
        fh = fphys;
        fft_nd_raw(fh.data(), {s1, s2}, {0, 1}, false);
    }

    std::vector<std::complex<double>> ux(J), uy(J), wx(J), wy(J), nl(J);
    auto tendency = [&](const std::vector<std::complex<double>>& w,
                        std::vector<std::complex<double>>& out) {
        for (std::size_t t = 0; t < J; ++t) {
            std::complex<double> psi = ksq[t] > 0 ? w[t] / ksq[t] : 0.0;
            ux[t] = std::complex<double>(0, k2[t]) * psi;   // d(psi)/dy
            uy[t] = std::complex<double>(0, -k1[t]) * psi;  // -d(psi)/dx
            wx[t] = std::complex<double>(0, k1[t]) * w[t];
            wy[t] = std::complex<double>(0, k2[t]) * w[t];
        }
        fft_nd_raw(ux.data(), {s1, s2}, {0, 1}, true);
        fft_nd_raw(uy.data(), {s1, s2}, {0, 1}, true);
        fft_nd_raw(wx.data(), {s1, s2}, {0, 1}, true);
        fft_nd_raw(wy.data(), {s1, s2}, {0, 1}, true);
        for (std::size_t t = 0; t < J; ++t)
            nl[t] = -(ux[t].real() * wx[t].real() + uy[t].real() * wy[t].real());
        fft_nd_raw(nl.data(), {s1, s2}, {0, 1}, false);
        for (std::size_t t = 0; t < J; ++t) out[t] = (keep[t] ? nl[t] : 0.0) + fh[t];
    };

    double dt = opt.dt;
    std::size_t steps = std::size_t(std::llround(t_end / dt));
    std::size_t rec_stride = std::max<std::size_t>(1, std::size_t(std::llround(record_every / dt)));
    std::vector<std::complex<double>> g0(J), g1(J), wstar(J);
    std::vector<FieldSample> frames;
    for (std::size_t step = 0; step < steps; ++step) {
        tendency(wh, g0);
        for (std::size_t t = 0; t < J; ++t) {
            double a = 1.0 - 0.5 * nu * dt * ksq[t];
            double b = 1.0 + 0.5 * nu * dt * ksq[t];
            wstar[t] = (a * wh[t] + dt * g0[t]) / b;
        }
        tendency(wstar, g1);
        for (std::size_t t = 0; t < J; ++t) {
            double a = 1.0 - 0.5 * nu * dt * ksq[t];
            double b = 1.0 + 0.5 * nu * dt * ksq[t];
            wh[t] = (a * wh[t] + 0.5 * dt * (g0[t] + g1[t])) / b;
        }
        if ((step + 1) % rec_stride == 0) {
            check_finite(wh, "solve_navier_stokes");
            std::vector<std::complex<double>> phys = wh;
            fft_nd_raw(phys.data(), {s1, s2}, {0, 1}, true);
            std::vector<double> vals(J);
            for (std::size_t t = 0; t < J; ++t) vals[t] = phys[t].real();
            frames.push_back({g, Tensor({s1, s2, 1}, std::move(vals))});
        }
    }
    return frames;
}

FieldSample downsample(const FieldSample& f, const std::vector<std::size_t>& factor) {
    const Grid& g = f.grid;
    if (factor.size() != g.dims()) throw ConfigError("downsample: factor rank mismatch");
    Grid out = g;
    for (std::size_t j = 0; j < g.dims(); ++j) {
        if (factor[j] == 0) throw ConfigError("downsample: zero factor");
        std::size_t base = g.periodic ? g.sizes[j] : g.sizes[j] - 1;
        if (base % factor[j] != 0)
            throw ConfigError("downsample: factor " + std::to_string(factor[j]) +
                              " does not divide axis of size " + std::to_string(g.sizes[j]));
        out.sizes[j] = g.periodic ? g.sizes[j] / factor[j] : base / factor[j] + 1;
    }
    std::size_t C = f.channels();
    std::vector<double> vals(out.points() * C);
    std::vector<std::size_t> idx(g.dims(), 0);
    const double* src = f.values.data();
    for (std::size_t p = 0; p < out.points(); ++p) {
        std::size_t flat = 0;
        for (std::size_t j = 0; j < g.dims(); ++j) flat = flat * g.sizes[j] + idx[j] * factor[j];
        for (std::size_t c = 0; c < C; ++c) vals[p * C + c] = src[flat * C + c];
        for (std::size_t j = g.dims(); j-- > 0;) {
            if (++idx[j] < out.sizes[j]) break;
            idx[j] = 0;
        }
    }
    Shape shape = out.sizes;
    shape.push_back(C);
    return {out, Tensor(shape, std::move(vals))};
}

Dataset build_dataset(const std::string& problem, std::size_t N, const Grid& grid,
                      std::uint64_t seed, const BuildOptions& opt) {
    Dataset ds;
    DatasetManifest& man = ds.manifest;
    man.problem = problem;
    man.seed = seed;
    man.count = N;
    man.grid_sizes = grid.sizes;
    man.periodic = grid.periodic;
    for (const auto& e : grid.extent) {
        man.extent_lo.push_back(e[0]);
        man.extent_hi.push_back(e[1]);
    }
    man.source_resolution = grid.sizes[0];

    MeasureSpec spec;
    if (problem == "poisson") {
        spec = MeasureSpec::standard(MeasureKind::poisson_source);
        man.measure = "poisson_source";
    } else if (problem == "darcy") {
        spec = MeasureSpec::standard(MeasureKind::darcy_coeff);
        man.measure = "darcy_coeff";
    } else if (problem == "burgers") {
        spec = MeasureSpec::standard(MeasureKind::burgers_ic);
        man.measure = "burgers_ic";
        man.viscosity = opt.viscosity > 0 ? opt.viscosity : 0.1;
        man.dt = opt.dt > 0 ? opt.dt : 1e-4;
        man.t_end = opt.t_end > 0 ? opt.t_end : 1.0;
    } else if (problem == "ns_onestep" || problem == "ns_trajectory") {
        spec = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
        man.measure = "ns_vorticity_ic";
        man.viscosity = opt.viscosity > 0 ? opt.viscosity : 1e-3;
        man.dt = opt.dt > 0 ? opt.dt : 1e-4;
        man.t_end = opt.t_end > 0 ? opt.t_end : (problem == "ns_onestep" ? 1.0 : 20.0);
    } else {
        throw ConfigError("build_dataset: unknown problem '" + problem + "'");
    }

    for (std::size_t i = 0; i < N; ++i) {
        Rng rng(seed, i); // per-sample stream: generation order independent
        FieldSample in = sample_grf(spec, grid, rng);
        try {
            if (problem == "poisson") {
                ds.inputs.push_back(in);
                ds.outputs.push_back(solve_poisson_green(in));
            } else if (problem == "darcy") {
                ds.inputs.push_back(in);
                ds.outputs.push_back(solve_darcy_fdm(in));
            } else if (problem == "burgers") {
                ds.inputs.push_back(in);
                BurgersOptions bo;
                bo.dt = man.dt;
                ds.outputs.push_back(solve_burgers(in, man.t_end, man.viscosity, bo));
            } else if (problem == "ns_onestep") {
                NsOptions no;
                no.dt = man.dt;
                auto frames = solve_navier_stokes(in, man.t_end, man.viscosity, man.t_end, no);
                ds.inputs.push_back(in);
                ds.outputs.push_back(frames.back());
            } else { // ns_trajectory: w on (0,10] -> w on (10,T]
                NsOptions no;
                no.dt = man.dt;
                auto frames =
                    solve_navier_stokes(in, man.t_end, man.viscosity, opt.record_every, no);
                std::size_t split = std::size_t(std::llround(10.0 / opt.record_every));
                if (frames.size() <= split)
                    throw ConfigError("build_dataset: ns_trajectory needs t_end > 10");
                auto stack = [&](std::size_t lo, std::size_t hi) {
                    std::size_t J = grid.points();
                    std::vector<double> vals(J * (hi - lo));
                    for (std::size_t t = lo; t < hi; ++t)
                        for (std::size_t p = 0; p < J; ++p)
                            vals[p * (hi - lo) + (t - lo)] = frames[t].values.data()[p];
                    Shape shape = grid.sizes;
                    shape.push_back(hi - lo);
                    return FieldSample{grid, Tensor(shape, std::move(vals))};
                };
                ds.inputs.push_back(stack(0, split));
                ds.outputs.push_back(stack(split, frames.size()));
            }
        } catch (const SolverError& e) {
            throw SolverError("sample " + std::to_string(i) + ": " + e.what());
        }
    }
    if (N > 0) {
        man.input_shape = ds.inputs[0].values.shape();
        man.output_shape = ds.outputs[0].values.shape();
    }
    return ds;
}

} // namespace nop
