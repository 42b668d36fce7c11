#pragma once
// Ground-truth solution operators, dataset assembly, resolution downsampling.
#include <cstdint>
#include <string>
#include <vector>

#include "nopkit/grid.hpp"
#include "nopkit/rng.hpp"

namespace nop {

// u(x) = int G(x,y) f(y) dy with G(x,y) = (x+y-|y-x|)/2 - xy, trapezoidal
// quadrature. 1-D Dirichlet grid on (0,1).
FieldSample solve_poisson_green(const FieldSample& f);

// -div(a grad u) = f on (0,1)^2, u = 0 on the boundary. 5-point conservative
// scheme with harmonic-mean face coefficients; Jacobi-preconditioned CG to
// relative residual 1e-10. DomainError if a <= 0 anywhere; SolverError with
// the residual if CG fails to converge.
FieldSample solve_darcy_fdm(const FieldSample& a, double f = 1.0);

struct BurgersOptions {
    double dt = 1e-4;
    bool nonlinear = true; // test hook: false leaves only the heat part
};
// Periodic 1-D on (0,2pi): exact viscous factor in Fourier space, forward
// Euler on -1/2 d/dx(u^2) computed spectrally with 2/3 dealiasing.
FieldSample solve_burgers(const FieldSample& u0, double t_end, double nu,
                          const BurgersOptions& opt = {});

struct NsOptions {
    double dt = 1e-3;
    bool forcing = true; // 0.1(sin(2pi(x1+x2)) + cos(2pi(x1+x2)))
};
// Vorticity-streamfunction pseudospectral solver on the unit torus:
// Crank-Nicolson viscous update, Heun for nonlinear + forcing, 2/3 dealiasing.
// Returns the vorticity recorded every record_every time units (first entry at
// t = record_every). DomainError for nonzero-mean w0; SolverError on blow-up.
std::vector<FieldSample> solve_navier_stokes(const FieldSample& w0, double t_end, double nu,
                                             double record_every, const NsOptions& opt = {});

// Strided subsampling, no filtering. Factor must divide s_j (periodic) or
// s_j - 1 (endpoint grids, endpoints preserved).
FieldSample downsample(const FieldSample& f, const std::vector<std::size_t>& factor);

struct DatasetManifest {
    int format_version = 1;
    std::string problem;
    std::string measure;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::vector<std::size_t> grid_sizes;
    bool periodic = false;
    std::vector<double> extent_lo, extent_hi;
    std::vector<std::size_t> input_shape, output_shape; // per-sample value shapes
    double viscosity = 0.0;
    double dt = 0.0;
    double t_end = 0.0;
    std::size_t source_resolution = 0;
};

struct Dataset {
    std::vector<FieldSample> inputs;
    std::vector<FieldSample> outputs;
    DatasetManifest manifest;
};

struct BuildOptions {
    double viscosity = 0.0; // 0 -> problem default
    double t_end = 0.0;     // 0 -> problem default
    double dt = 0.0;        // 0 -> problem default
    double record_every = 1.0;
};

// problem in {poisson, darcy, burgers, ns_onestep, ns_trajectory}. Inputs are
// iid draws of the problem's measure; per-sample Rng stream id = sample index,
// so generation order does not affect the data.
Dataset build_dataset(const std::string& problem, std::size_t N, const Grid& grid,
                      std::uint64_t seed, const BuildOptions& opt = {});

} // namespace nop
