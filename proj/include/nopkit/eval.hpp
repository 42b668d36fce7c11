#pragma once
// Error reports, resolution sweeps, zero-shot super-resolution, robustness,
// and spectral comparisons.
#include <string>
#include <vector>

#include "nopkit/train.hpp"

namespace nop {

struct ErrorEntry {
    std::size_t resolution = 0; // leading grid size
    double mean_rel_l2 = 0.0;
    std::size_t samples = 0;
};

struct ErrorReport {
    std::vector<ErrorEntry> entries; // sorted ascending by resolution
    std::string fingerprint;         // model variant + sizes + parameter count
};

std::string model_fingerprint(const OperatorModel& m);

// Monte-Carlo mean relative-L2 of the model over the dataset.
ErrorEntry evaluate(const OperatorModel& m, const Dataset& ds);

// One evaluate entry per dataset, same parameters throughout. Models that are
// not discretization-transferable fail inside the forward pass (ContractError).
ErrorReport resolution_sweep(const OperatorModel& m, const std::vector<Dataset>& sets);

// Zero-shot evaluation at a resolution the model was not trained on. Asserts
// the parameters are byte-identical before and after (no hidden retraining).
ErrorEntry superresolution(const OperatorModel& m, const Dataset& high_res);

struct RobustnessReport {
    double noise_level = 0.0;
    double clean_err = 0.0;
    double noisy_err = 0.0; // inputs perturbed by add_noise, outputs untouched
};

RobustnessReport robustness_study(const OperatorModel& m, const Dataset& test,
                                  double noise_level, Rng& rng);

struct SpectraComparison {
    SpectrumProfile pred, truth;
    double pred_slope = 0.0, truth_slope = 0.0; // log-log fit over the band
    double band_lo = 0.0, band_hi = 0.0;
};

// Least-squares slope of log magnitude vs log |k| over lo <= |k| <= hi;
// zero-magnitude bins are skipped. ConfigError if fewer than two bins remain.
double fit_loglog_slope(const SpectrumProfile& p, double lo, double hi);

// Paired spectra of two fields on one grid. Default band [4, s/6] stays clear
// of the forced/DC modes and the dealiasing edge; pass lo/hi to override.
// Slopes come back NaN when a profile has too few usable bins (e.g. all zero).
SpectraComparison compare_spectra(const FieldSample& pred, const FieldSample& truth,
                                  double band_lo = 0.0, double band_hi = 0.0);

void write_report_csv(const std::string& path, const ErrorReport& report);
std::string format_report(const ErrorReport& report); // aligned-column text

} // namespace nop
