#pragma once
// pCN MCMC over initial conditions with a solver or surrogate forward map.
#include <functional>
#include <string>
#include <vector>

#include "nopkit/rng.hpp"

namespace nop {

struct InverseProblemSpec {
    std::function<FieldSample(const FieldSample&)> forward; // initial field -> observed-time field
    Grid grid;                                              // torus the unknown lives on
    MeasureSpec prior = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
    double gamma = 0.1; // observational noise scale
    // Default noise covariance is gamma^2 I. The flag switches to (1/gamma^2) I,
    // i.e. the precision-style reading of the same symbol.
    bool precision_covariance = false;
    double beta = 0.1; // pCN step size, 0 < beta < 1 (beta = 0 degenerates to a constant chain)
    std::size_t burn_in = 5000;
    std::size_t retained = 25000;
    std::uint64_t seed = 0;
    std::size_t thin = 0; // if > 0, keep every thin-th retained sample in the result

    // Overrides for testing the sampler itself: a custom prior draw and a
    // custom negative log-likelihood (bypasses forward/observe when set).
    std::function<FieldSample(Rng&)> prior_sampler;
    std::function<double(const FieldSample&)> nll;
};

// Bilinear interpolation of a periodic 2-D field at the 7x7 interior points
// (i/8, j/8), i,j = 1..7, flattened row-major along axis 0.
std::vector<double> observe(const FieldSample& w);

// log p(y | w0) up to a constant: -1/2 * ||y - observe(forward(w0))||^2
// weighted by the inverse noise covariance.
double log_likelihood(const FieldSample& w0, const std::vector<double>& y,
                      const InverseProblemSpec& spec);

struct ChainResult {
    FieldSample posterior_mean;
    double acceptance_rate = 0.0; // over the retained phase
    std::size_t retained = 0;
    std::vector<FieldSample> samples; // thinned retained states (empty unless spec.thin > 0)
    bool acceptance_warning = false;
    std::string warning;
};

// Preconditioned Crank-Nicolson: w' = sqrt(1-beta^2) w + beta xi with xi a
// prior draw, accepted with min(1, exp(Phi(w) - Phi(w'))) in log space.
// Proposal and acceptance randomness are indexed by step, so two chains built
// from the same seed see identical proposal streams regardless of the forward
// map. Acceptance outside [0.05, 0.95] sets a warning suggesting a beta change.
ChainResult pcn_chain(const InverseProblemSpec& spec, const std::vector<double>& y);

struct InvertComparison {
    ChainResult solver, surrogate;
    double solver_seconds_per_call = 0.0;
    double surrogate_seconds_per_call = 0.0;
    double posterior_mean_rel_l2 = 0.0; // between the two posterior means
};

// Runs both chains with a common proposal stream and reports per-forward-call
// wall-clock time. Both specs must share grid, prior, seed, and chain lengths.
InvertComparison invert_compare(const InverseProblemSpec& with_solver,
                                const InverseProblemSpec& with_surrogate,
                                const std::vector<double>& y);

} // namespace nop
