#include "nopkit/bayes.hpp"

#include <chrono>
#include <cmath>
#include <memory>

namespace nop {

namespace {

double bilinear_periodic(const double* v, std::size_t s0, std::size_t s1, double f0, double f1) {
    double p0 = f0 * double(s0), p1 = f1 * double(s1);
    std::size_t i0 = std::size_t(std::floor(p0)) % s0, j0 = std::size_t(std::floor(p1)) % s1;
    std::size_t i1 = (i0 + 1) % s0, j1 = (j0 + 1) % s1;
    double a = p0 - std::floor(p0), b = p1 - std::floor(p1);
    return (1 - a) * (1 - b) * v[i0 * s1 + j0] + (1 - a) * b * v[i0 * s1 + j1] +
           a * (1 - b) * v[i1 * s1 + j0] + a * b * v[i1 * s1 + j1];
}

FieldSample pcn_blend(const FieldSample& w, const FieldSample& xi, double beta) {
    double c = std::sqrt(1.0 - beta * beta);
    std::vector<double> d(w.values.size());
    const double* a = w.values.data();
    const double* b = xi.values.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = c * a[i] + beta * b[i];
    return {w.grid, Tensor(w.values.shape(), std::move(d))};
}

} // namespace

std::vector<double> observe(const FieldSample& w) {
    if (w.grid.sizes.size() != 2 || !w.grid.periodic)
        throw ConfigError("observe: expects a periodic 2-D field");
    if (w.channels() != 1) throw ConfigError("observe: expects a single channel");
    std::size_t s0 = w.grid.sizes[0], s1 = w.grid.sizes[1];
    std::vector<double> y(49);
    for (std::size_t i = 1; i <= 7; ++i)
        for (std::size_t j = 1; j <= 7; ++j)
            y[(i - 1) * 7 + (j - 1)] =
                bilinear_periodic(w.values.data(), s0, s1, double(i) / 8.0, double(j) / 8.0);
    return y;
}

double log_likelihood(const FieldSample& w0, const std::vector<double>& y,
                      const InverseProblemSpec& spec) {
    if (!spec.forward) throw ConfigError("log_likelihood: no forward map configured");
    std::vector<double> pred = observe(spec.forward(w0));
    if (pred.size() != y.size()) throw ConfigError("log_likelihood: observation size mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = y[i] - pred[i];
        sq += d * d;
    }
    double inv_var = spec.precision_covariance ? spec.gamma * spec.gamma
                                               : 1.0 / (spec.gamma * spec.gamma);
    return -0.5 * inv_var * sq;
}

ChainResult pcn_chain(const InverseProblemSpec& spec, const std::vector<double>& y) {
    if (spec.beta < 0.0 || spec.beta >= 1.0)
        throw ConfigError("pcn_chain: beta must lie in [0, 1)");
    if (spec.retained == 0) throw ConfigError("pcn_chain: nothing to retain");
    auto draw_prior = [&](Rng& rng) {
        return spec.prior_sampler ? spec.prior_sampler(rng)
                                  : sample_grf(spec.prior, spec.grid, rng);
    };
    auto phi = [&](const FieldSample& w) {
        double v = spec.nll ? spec.nll(w) : -log_likelihood(w, y, spec);
        if (!std::isfinite(v)) throw SolverError("pcn_chain: non-finite negative log-likelihood");
        return v;
    };

    Rng init(spec.seed, 0xFFFFFFFFFFFFFFFFull);
    FieldSample w = draw_prior(init);
    double phi_w = phi(w);

    ChainResult res;
    std::vector<double> mean(w.values.size(), 0.0);
    std::size_t accepted = 0;
    std::size_t total = spec.burn_in + spec.retained;
    for (std::size_t t = 0; t < total; ++t) {
        Rng prop_rng(spec.seed, 2 * t);
        Rng acc_rng(spec.seed, 2 * t + 1);
        FieldSample xi = draw_prior(prop_rng);
        FieldSample w_new = pcn_blend(w, xi, spec.beta);
        double phi_new = phi(w_new);
        double log_alpha = phi_w - phi_new; // log of the pCN acceptance ratio
        if (std::log(acc_rng.uniform()) < log_alpha) {
            w = std::move(w_new);
            phi_w = phi_new;
            if (t >= spec.burn_in) ++accepted;
        }
        if (t >= spec.burn_in) {
            const double* d = w.values.data();
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += d[i];
            if (spec.thin > 0 && (t - spec.burn_in) % spec.thin == 0) res.samples.push_back(w);
        }
    }
    for (double& m : mean) m /= double(spec.retained);
    res.posterior_mean = {w.grid, Tensor(w.values.shape(), std::move(mean))};
    res.acceptance_rate = double(accepted) / double(spec.retained);
    res.retained = spec.retained;
    if (res.acceptance_rate < 0.05) {
        res.acceptance_warning = true;
        res.warning = "acceptance rate " + std::to_string(res.acceptance_rate) +
                      " below 0.05; decrease beta";
    } else if (res.acceptance_rate > 0.95 && spec.beta > 0.0) {
        res.acceptance_warning = true;
        res.warning = "acceptance rate " + std::to_string(res.acceptance_rate) +
                      " above 0.95; increase beta";
    }
    return res;
}

InvertComparison invert_compare(const InverseProblemSpec& with_solver,
                                const InverseProblemSpec& with_surrogate,
                                const std::vector<double>& y) {
    if (!same_grid(with_solver.grid, with_surrogate.grid) ||
        with_solver.seed != with_surrogate.seed ||
        with_solver.burn_in != with_surrogate.burn_in ||
        with_solver.retained != with_surrogate.retained ||
        with_solver.beta != with_surrogate.beta)
        throw ConfigError("invert_compare: chain settings must match apart from the forward map");

    auto timed_run = [&](const InverseProblemSpec& spec, double& per_call) {
        auto calls = std::make_shared<std::size_t>(0);
        auto seconds = std::make_shared<double>(0.0);
        InverseProblemSpec timed = spec;
        auto inner = spec.forward;
        timed.forward = [=](const FieldSample& w0) {
            auto t0 = std::chrono::steady_clock::now();
            FieldSample out = inner(w0);
            *seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ++*calls;
            return out;
        };
        ChainResult res = pcn_chain(timed, y);
        per_call = *calls > 0 ? *seconds / double(*calls) : 0.0;
        return res;
    };

    InvertComparison cmp;
    cmp.solver = timed_run(with_solver, cmp.solver_seconds_per_call);
    cmp.surrogate = timed_run(with_surrogate, cmp.surrogate_seconds_per_call);

    const double* a = cmp.solver.posterior_mean.values.data();
    const double* b = cmp.surrogate.posterior_mean.values.data();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < cmp.solver.posterior_mean.values.size(); ++i) {
        double d = a[i] - b[i];
        num += d * d;
        den += a[i] * a[i];
    }
    cmp.posterior_mean_rel_l2 = den > 0.0 ? std::sqrt(num / den) : 0.0;
    return cmp;
}

} // namespace nop
