#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nopkit/eval.hpp"

using namespace nop;

namespace {

constexpr double kPi = 3.14159265358979323846;

// band-limited family: three harmonics with rng-drawn coefficients, so the
// same draw can be sampled exactly at any resolution
FieldSample harmonics(const Grid& g, std::uint64_t seed, std::uint64_t stream) {
    Rng rng(seed, stream);
    double c[6];
    for (double& x : c) x = rng.normal();
    std::size_t s = g.sizes[0];
    std::vector<double> v(s);
    for (std::size_t i = 0; i < s; ++i) {
        double x = double(i) / double(s);
        v[i] = 0.0;
        for (int k = 1; k <= 3; ++k)
            v[i] += c[2 * (k - 1)] * std::sin(2.0 * kPi * k * x) +
                    c[2 * (k - 1) + 1] * std::cos(2.0 * kPi * k * x);
    }
    return {g, Tensor({s, 1}, std::move(v))};
}

Dataset harmonic_dataset(std::size_t n, std::size_t s, double target_scale,
                         std::uint64_t seed) {
    Dataset ds;
    Grid g = Grid::uniform_1d(s, 0.0, 1.0, true);
    for (std::size_t i = 0; i < n; ++i) {
        FieldSample a = harmonics(g, seed, i);
        FieldSample u = a;
        if (target_scale != 1.0) {
            std::vector<double> d(a.values.data(), a.values.data() + a.values.size());
            for (double& x : d) x *= target_scale;
            u = {g, Tensor(a.values.shape(), std::move(d))};
        }
        ds.inputs.push_back(a);
        ds.outputs.push_back(u);
    }
    ds.manifest.count = n;
    return ds;
}

ModelConfig tiny_fno() {
    ModelConfig cfg;
    cfg.variant = Variant::fno;
    cfg.dims = 1;
    cfg.d_v = 8;
    cfg.layers = 2;
    cfg.kmax = {4};
    cfg.q_hidden = 16;
    cfg.act = Activation::gelu;
    cfg.seed = 1;
    return cfg;
}

// model trained once on the identity task at s=32, shared by several cases
const OperatorModel& identity_model() {
    static OperatorModel m = [] {
        OperatorModel model = make_model(tiny_fno());
        Dataset tr = harmonic_dataset(16, 32, 1.0, 11);
        TrainConfig cfg;
        cfg.epochs = 300;
        cfg.initial_lr = 5e-3;
        cfg.halve_every = 120;
        cfg.batch_size = 4;
        cfg.seed = 3;
        train(model, tr, nullptr, cfg);
        return model;
    }();
    return m;
}

} // namespace

TEST_CASE("evaluate: oracle gives 0, zero model gives 1, order does not matter") {
    OperatorModel m = make_model(tiny_fno());
    Dataset ds = harmonic_dataset(6, 32, 1.0, 5);
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        ModelOutput out = model_forward(m, ds.inputs[i]);
        ds.outputs[i] = {ds.inputs[i].grid, out.values};
    }
    CHECK(evaluate(m, ds).mean_rel_l2 == 0.0);
    CHECK(evaluate(m, ds).samples == 6);
    CHECK(evaluate(m, ds).resolution == 32);

    Dataset target = harmonic_dataset(6, 32, 3.0, 5);
    OperatorModel z = make_model(tiny_fno());
    std::fill(z.q2_w.data(), z.q2_w.data() + z.q2_w.size(), 0.0);
    std::fill(z.q2_b.data(), z.q2_b.data() + z.q2_b.size(), 0.0);
    CHECK(evaluate(z, target).mean_rel_l2 == doctest::Approx(1.0).epsilon(1e-14));

    Dataset shuffled;
    shuffled.manifest = target.manifest;
    for (std::size_t i : {3, 0, 5, 1, 4, 2}) {
        shuffled.inputs.push_back(target.inputs[i]);
        shuffled.outputs.push_back(target.outputs[i]);
    }
    CHECK(evaluate(m, shuffled).mean_rel_l2 ==
          doctest::Approx(evaluate(m, target).mean_rel_l2).epsilon(1e-13));
}

TEST_CASE("resolution sweep: flat errors on a band-limited task, sorted entries") {
    OperatorModel m = make_model(tiny_fno());
    std::vector<Dataset> sets;
    for (std::size_t s : {256, 64, 128}) sets.push_back(harmonic_dataset(4, s, 3.0, 7));
    ErrorReport rep = resolution_sweep(m, sets);
    REQUIRE(rep.entries.size() == 3);
    CHECK(rep.entries[0].resolution == 64);
    CHECK(rep.entries[1].resolution == 128);
    CHECK(rep.entries[2].resolution == 256);
    double lo = rep.entries[0].mean_rel_l2, hi = lo;
    for (const ErrorEntry& e : rep.entries) {
        CHECK(e.mean_rel_l2 >= 0.0);
        lo = std::min(lo, e.mean_rel_l2);
        hi = std::max(hi, e.mean_rel_l2);
    }
    CHECK(hi / lo < 1.1);
    CHECK(rep.fingerprint.find("fno") != std::string::npos);
}

TEST_CASE("resolution sweep: deeponet rejects a grid that misses its sensors") {
    ModelConfig cfg;
    cfg.variant = Variant::deeponet;
    cfg.dims = 1;
    cfg.sensors = 32;
    cfg.basis = 8;
    cfg.net_width = 16;
    cfg.seed = 2;
    OperatorModel m = make_model(cfg);
    std::vector<Dataset> sets = {harmonic_dataset(2, 32, 1.0, 9), harmonic_dataset(2, 64, 1.0, 9)};
    CHECK_THROWS_AS(resolution_sweep(m, sets), ContractError);
}

TEST_CASE("superresolution: zero-shot identity error tracks the train resolution") {
    const OperatorModel& m = identity_model();
    Dataset low = harmonic_dataset(8, 32, 1.0, 17);
    Dataset high = harmonic_dataset(8, 128, 1.0, 17);
    double e_low = evaluate(m, low).mean_rel_l2;
    ErrorEntry e_high = superresolution(m, high);
    CHECK(e_low < 0.05);
    CHECK(e_high.resolution == 128);
    CHECK(std::abs(e_high.mean_rel_l2 - e_low) <= 0.2 * std::max(e_low, 1e-12));
}

TEST_CASE("superresolution: darcy gno transfers from a 16 grid to 61") {
    Grid g61 = Grid::uniform_2d(61, 0.0, 1.0, false);
    Dataset high = build_dataset("darcy", 6, g61, 31);
    Dataset low;
    low.manifest = high.manifest;
    for (std::size_t i = 0; i < high.inputs.size(); ++i) {
        low.inputs.push_back(downsample(high.inputs[i], {4, 4}));
        low.outputs.push_back(downsample(high.outputs[i], {4, 4}));
    }
    ModelConfig cfg;
    cfg.variant = Variant::gno;
    cfg.dims = 2;
    cfg.d_v = 4;
    cfg.layers = 2;
    cfg.q_hidden = 8;
    cfg.radius = 0.25;
    cfg.subsample = 48;
    cfg.kernel_width = 32;
    cfg.seed = 6;
    cfg.graph_seed = 7;
    OperatorModel m = make_model(cfg);
    std::size_t params = parameter_count(m);
    TrainConfig tc;
    tc.epochs = 15;
    tc.batch_size = 6;
    tc.seed = 8;
    train(m, low, nullptr, tc);
    double e_low = evaluate(m, low).mean_rel_l2;
    ErrorEntry e_high = superresolution(m, high);
    CHECK(parameter_count(m) == params);
    CHECK(e_high.mean_rel_l2 < 2.0 * e_low);
}

TEST_CASE("robustness: zero noise is a no-op, input noise hurts a clean-trained model") {
    const OperatorModel& m = identity_model();
    Dataset te = harmonic_dataset(8, 32, 1.0, 23);
    Rng r0(0, 0);
    RobustnessReport zero = robustness_study(m, te, 0.0, r0);
    CHECK(zero.clean_err == zero.noisy_err);
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed, 0);
        RobustnessReport rep = robustness_study(m, te, 0.1, rng);
        CHECK(rep.noisy_err >= rep.clean_err);
    }
}

TEST_CASE("spectral slope fit: exact power law, band filtering, degenerate input") {
    SpectrumProfile p;
    for (std::size_t k = 1; k <= 32; ++k) {
        p.wavenumber.push_back(double(k));
        p.magnitude.push_back(std::pow(double(k), -5.0 / 3.0));
    }
    CHECK(fit_loglog_slope(p, 4.0, 20.0) == doctest::Approx(-5.0 / 3.0).epsilon(1e-12));
    p.magnitude[0] = 1e6; // outside the band, must not affect the fit
    CHECK(fit_loglog_slope(p, 4.0, 20.0) == doctest::Approx(-5.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(fit_loglog_slope(p, 100.0, 200.0), ConfigError);
}

TEST_CASE("compare_spectra: equal fields give equal profiles, zero field gives NaN slope") {
    Grid g = Grid::uniform_2d(32, 0.0, 1.0, true);
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::ns_vorticity_ic);
    Rng rng(41, 0);
    FieldSample w = sample_grf(spec, g, rng);
    SpectraComparison cmp = compare_spectra(w, w);
    REQUIRE(cmp.pred.magnitude.size() == cmp.truth.magnitude.size());
    for (std::size_t i = 0; i < cmp.pred.magnitude.size(); ++i)
        CHECK(cmp.pred.magnitude[i] == cmp.truth.magnitude[i]);
    CHECK(cmp.pred_slope == cmp.truth_slope);
    CHECK(cmp.band_lo == 4.0);
    CHECK(cmp.band_hi == doctest::Approx(32.0 / 6.0));

    FieldSample zero{g, Tensor({32, 32, 1}, 0.0)};
    SpectraComparison zc = compare_spectra(zero, w);
    for (double mag : zc.pred.magnitude) CHECK(mag == 0.0);
    CHECK(std::isnan(zc.pred_slope));
    CHECK_FALSE(std::isnan(zc.truth_slope));
}

TEST_CASE("test error is nonincreasing at epoch milestones on the linear task") {
    Dataset tr = harmonic_dataset(16, 32, 3.0, 29);
    Dataset te = harmonic_dataset(8, 32, 3.0, 37);
    OperatorModel m = make_model(tiny_fno());
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.seed = 12;
    TrainResult r = train(m, tr, &te, cfg);
    REQUIRE(r.history.size() == 200);
    double e50 = r.history[49].test_err;
    double e100 = r.history[99].test_err;
    double e200 = r.history[199].test_err;
    CHECK(e100 <= e50);
    CHECK(e200 <= e100);
}

TEST_CASE("report csv and aligned text") {
    ErrorReport rep;
    rep.fingerprint = "fno dv=8";
    rep.entries = {{64, 0.01, 4}, {128, 0.011, 4}};
    std::string txt = format_report(rep);
    CHECK(txt.find("resolution") != std::string::npos);
    CHECK(txt.find("fno dv=8") != std::string::npos);
    CHECK(txt.find("64") != std::string::npos);
    std::string path = "eval_report_test.csv";
    write_report_csv(path, rep);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "resolution,mean_rel_l2,samples");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    in.close();
    std::remove(path.c_str());
}
