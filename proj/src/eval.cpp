#include "nopkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nop {

namespace {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::fno: return "fno";
        case Variant::gno: return "gno";
        case Variant::lno: return "lno";
        case Variant::mgno: return "mgno";
        case Variant::deeponet: return "deeponet";
        case Variant::greens: return "greens";
    }
    return "?";
}

} // namespace

std::string model_fingerprint(const OperatorModel& m) {
    std::ostringstream os;
    os << variant_name(m.cfg.variant) << " dv=" << m.cfg.d_v << " layers=" << m.cfg.layers
       << " seed=" << m.cfg.seed << " params=" << parameter_count(m);
    return os.str();
}

ErrorEntry evaluate(const OperatorModel& m, const Dataset& ds) {
    ErrorEntry e;
    e.resolution = ds.inputs.empty() ? 0 : ds.inputs[0].grid.sizes[0];
    e.samples = ds.inputs.size();
    e.mean_rel_l2 = mean_relative_error(m, ds);
    return e;
}

ErrorReport resolution_sweep(const OperatorModel& m, const std::vector<Dataset>& sets) {
    if (sets.empty()) throw ConfigError("resolution_sweep: no datasets");
    ErrorReport rep;
    rep.fingerprint = model_fingerprint(m);
    std::size_t params_before = parameter_count(m);
    for (const Dataset& ds : sets) rep.entries.push_back(evaluate(m, ds));
    if (parameter_count(m) != params_before)
        throw ContractError("resolution_sweep: parameter count changed during the sweep");
    std::sort(rep.entries.begin(), rep.entries.end(),
              [](const ErrorEntry& a, const ErrorEntry& b) { return a.resolution < b.resolution; });
    return rep;
}

ErrorEntry superresolution(const OperatorModel& m, const Dataset& high_res) {
    std::vector<std::vector<double>> before;
    for (auto& [name, t] : named_parameters(m))
        before.emplace_back(t.data(), t.data() + t.size());
    ErrorEntry e = evaluate(m, high_res);
    std::size_t k = 0;
    for (auto& [name, t] : named_parameters(m)) {
        if (std::memcmp(before[k].data(), t.data(), t.size() * sizeof(double)) != 0)
            throw ContractError("superresolution: parameters changed during evaluation (" + name +
                                ")");
        ++k;
    }
    return e;
}

RobustnessReport robustness_study(const OperatorModel& m, const Dataset& test,
                                  double noise_level, Rng& rng) {
    RobustnessReport rep;
    rep.noise_level = noise_level;
    rep.clean_err = evaluate(m, test).mean_rel_l2;
    Dataset noisy;
    noisy.manifest = test.manifest;
    noisy.outputs = test.outputs;
    for (const FieldSample& a : test.inputs) noisy.inputs.push_back(add_noise(a, noise_level, rng));
    rep.noisy_err = evaluate(m, noisy).mean_rel_l2;
    return rep;
}

double fit_loglog_slope(const SpectrumProfile& p, double lo, double hi) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.wavenumber.size(); ++i) {
        double k = p.wavenumber[i];
        if (k < lo || k > hi || k <= 0.0 || p.magnitude[i] <= 0.0) continue;
        double x = std::log(k), y = std::log(p.magnitude[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n < 2) throw ConfigError("fit_loglog_slope: fewer than two usable bins in band");
    double denom = double(n) * sxx - sx * sx;
    return (double(n) * sxy - sx * sy) / denom;
}

SpectraComparison compare_spectra(const FieldSample& pred, const FieldSample& truth,
                                  double band_lo, double band_hi) {
    if (!same_grid(pred.grid, truth.grid))
        throw ConfigError("compare_spectra: fields live on different grids");
    SpectraComparison cmp;
    cmp.pred = spectrum(pred);
    cmp.truth = spectrum(truth);
    std::size_t s = truth.grid.sizes[0];
    cmp.band_lo = band_lo > 0.0 ? band_lo : 4.0;
    cmp.band_hi = band_hi > 0.0 ? band_hi : double(s) / 6.0;
    auto safe_slope = [&](const SpectrumProfile& p) {
        std::size_t usable = 0;
        for (std::size_t i = 0; i < p.wavenumber.size(); ++i)
            if (p.wavenumber[i] >= cmp.band_lo && p.wavenumber[i] <= cmp.band_hi &&
                p.magnitude[i] > 0.0)
                ++usable;
        return usable < 2 ? std::numeric_limits<double>::quiet_NaN()
                          : fit_loglog_slope(p, cmp.band_lo, cmp.band_hi);
    };
    cmp.pred_slope = safe_slope(cmp.pred);
    cmp.truth_slope = safe_slope(cmp.truth);
    return cmp;
}

void write_report_csv(const std::string& path, const ErrorReport& report) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_report_csv: cannot open " + path);
    out.precision(17);
    out << "resolution,mean_rel_l2,samples\n";
    for (const ErrorEntry& e : report.entries)
        out << e.resolution << ',' << e.mean_rel_l2 << ',' << e.samples << '\n';
}

std::string format_report(const ErrorReport& report) {
    std::ostringstream os;
    os << "model: " << report.fingerprint << '\n';
    os << std::left << std::setw(12) << "resolution" << std::setw(16) << "rel-L2"
       << std::setw(10) << "samples" << '\n';
    for (const ErrorEntry& e : report.entries)
        os << std::left << std::setw(12) << e.resolution << std::setw(16)
           << std::setprecision(6) << e.mean_rel_l2 << std::setw(10) << e.samples << '\n';
    return os.str();
}

} // namespace nop
