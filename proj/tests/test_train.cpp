#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "nopkit/train.hpp"

using namespace nop;

namespace {

FieldSample scaled(const FieldSample& a, double s) {
    std::vector<double> d(a.values.data(), a.values.data() + a.values.size());
    for (double& x : d) x *= s;
    return {a.grid, Tensor(a.values.shape(), std::move(d))};
}

// inputs drawn from the smooth periodic measure, outputs u = 3a
Dataset linear_toy(std::size_t n, std::size_t s, std::uint64_t seed) {
    Dataset ds;
    Grid g = Grid::uniform_1d(s, 0.0, 1.0, true);
    MeasureSpec spec = MeasureSpec::standard(MeasureKind::burgers_ic);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(seed, i);
        FieldSample a = sample_grf(spec, g, rng);
        ds.inputs.push_back(a);
        ds.outputs.push_back(scaled(a, 3.0));
    }
    ds.manifest.problem = "linear_toy";
    ds.manifest.count = n;
    return ds;
}

Dataset take(const Dataset& ds, std::size_t begin, std::size_t count) {
    Dataset out;
    out.manifest = ds.manifest;
    out.manifest.count = count;
    for (std::size_t i = begin; i < begin + count; ++i) {
        out.inputs.push_back(ds.inputs[i]);
        out.outputs.push_back(ds.outputs[i]);
    }
    return out;
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

} // namespace

TEST_CASE("relative l2: exact ratios and error taxonomy") {
    Grid g = Grid::uniform_1d(8, 0.0, 1.0, true);
    std::vector<double> tv = {1, -2, 3, 0.5, -1, 2, 0.25, 4};
    FieldSample truth{g, Tensor({8, 1}, tv)};
    CHECK(relative_l2(truth, truth) == 0.0);
    FieldSample zero{g, Tensor({8, 1}, 0.0)};
    CHECK(relative_l2(zero, truth) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(relative_l2(scaled(truth, 2.0), truth) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(relative_l2(truth, zero), DomainError);
    Grid g2 = Grid::uniform_1d(8, 0.0, 2.0, true);
    FieldSample other{g2, Tensor({8, 1}, tv)};
    CHECK_THROWS_AS(relative_l2(other, truth), ConfigError);

    // batched tensor loss averages per-sample ratios
    Tensor truth_b({2, 4, 1}, {1, 1, 1, 1, 2, 2, 2, 2});
    Tensor pred_b({2, 4, 1}, {1, 1, 1, 1, 0, 0, 0, 0}); // errors 0 and 1
    CHECK(relative_l2_loss(pred_b, truth_b).item() == doctest::Approx(0.5).epsilon(1e-15));
    Tensor zero_b({2, 4, 1}, 0.0);
    CHECK_THROWS_AS(relative_l2_loss(pred_b, zero_b), DomainError);
}

TEST_CASE("adam: zero grad, exact first step, alternating bound, non-finite abort") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Tensor p({3}, {1.0, -2.0, 0.5}, true);
        AdamState st;
        adam_step({{"p", p}}, st, 1e-3);
        CHECK(st.step == 1);
        CHECK(p.data()[0] == 1.0);
        CHECK(p.data()[1] == -2.0);
        CHECK(p.data()[2] == 0.5);
    }

    SUBCASE("first step with unit gradient") {
        Tensor p({1}, {0.25}, true);
        detail::grad_buffer(p)[0] = 1.0;
        AdamState st;
        adam_step({{"p", p}}, st, 1e-3);
        double expect = 0.25 - 1e-3 / std::sqrt(1.0 + 1e-8);
        CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-14));
        CHECK(0.25 - p.data()[0] == doctest::Approx(9.99999995e-4).epsilon(1e-9));
    }

    SUBCASE("two opposing unit steps stay within 2 lr of the start") {
        Tensor p({1}, {0.0}, true);
        AdamState st;
        detail::grad_buffer(p)[0] = 1.0;
        adam_step({{"p", p}}, st, 1e-3);
        detail::grad_buffer(p)[0] = -1.0;
        adam_step({{"p", p}}, st, 1e-3);
        CHECK(std::abs(p.data()[0]) < 2e-3);
    }

    SUBCASE("non-finite gradient aborts with the parameter name") {
        Tensor p({1}, {0.0}, true);
        detail::grad_buffer(p)[0] = std::nan("");
        AdamState st;
        CHECK_THROWS_WITH_AS(adam_step({{"theta", p}}, st, 1e-3),
                             "adam_step: non-finite gradient for theta", SolverError);
    }
}

TEST_CASE("learning rate halves every halve_every epochs exactly") {
    TrainConfig cfg;
    cfg.initial_lr = 1e-3;
    cfg.halve_every = 100;
    CHECK(lr_at(cfg, 0) == 1e-3);
    CHECK(lr_at(cfg, 99) == 1e-3);
    CHECK(lr_at(cfg, 100) == 0.5e-3);
    CHECK(lr_at(cfg, 250) == 0.25e-3);
    CHECK(lr_at(cfg, 499) == 0.0625e-3);
}

TEST_CASE("zero-epoch training is the identity and emits no history") {
    Dataset ds = linear_toy(4, 16, 3);
    OperatorModel m = make_model(tiny_fno());
    std::vector<double> before;
    for (auto& [name, t] : named_parameters(m))
        before.insert(before.end(), t.data(), t.data() + t.size());
    TrainConfig cfg;
    cfg.epochs = 0;
    TrainResult r = train(m, ds, nullptr, cfg);
    CHECK(r.history.empty());
    std::size_t k = 0;
    for (auto& [name, t] : named_parameters(m))
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.data()[i] == before[k++]);
}

TEST_CASE("tiny fno learns the linear 3a operator") {
    Dataset ds = linear_toy(20, 32, 5);
    OperatorModel m = make_model(tiny_fno());
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.initial_lr = 5e-3;
    cfg.halve_every = 150;
    cfg.batch_size = 5;
    cfg.seed = 2;
    TrainResult r = train(m, ds, nullptr, cfg);
    REQUIRE(r.history.size() == 400);
    for (const EpochRecord& rec : r.history) CHECK(std::isfinite(rec.train_err));
    CHECK(r.history.back().train_err < 0.01);
    CHECK(mean_relative_error(m, ds) < 0.01);
}

TEST_CASE("fixed seed reruns give identical history") {
    Dataset ds = linear_toy(12, 16, 7);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    cfg.seed = 9;
    OperatorModel m1 = make_model(tiny_fno());
    OperatorModel m2 = make_model(tiny_fno());
    TrainResult r1 = train(m1, ds, &ds, cfg);
    TrainResult r2 = train(m2, ds, &ds, cfg);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_err == r2.history[i].train_err);
        CHECK(r1.history[i].test_err == r2.history[i].test_err);
    }
}

TEST_CASE("relative-l2 training beats mse training on the burgers toy test error") {
    BuildOptions opt;
    opt.t_end = 0.5;
    Grid g = Grid::uniform_1d(64, 0.0, 2.0 * 3.14159265358979323846, true);
    Dataset all = build_dataset("burgers", 24, g, 13, opt);
    Dataset tr = take(all, 0, 16), te = take(all, 16, 8);
    ModelConfig mc = tiny_fno();
    mc.kmax = {6};
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.seed = 4;
    OperatorModel m_rel = make_model(mc);
    OperatorModel m_mse = make_model(mc);
    TrainConfig cfg_mse = cfg;
    cfg_mse.mse_loss = true;
    train(m_rel, tr, nullptr, cfg);
    train(m_mse, tr, nullptr, cfg_mse);
    double e_rel = mean_relative_error(m_rel, te);
    double e_mse = mean_relative_error(m_mse, te);
    CHECK(e_rel <= e_mse);
}

TEST_CASE("checkpoint hook fires on the schedule and at the end") {
    Dataset ds = linear_toy(4, 16, 21);
    OperatorModel m = make_model(tiny_fno());
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.checkpoint_every = 2;
    std::vector<std::size_t> calls;
    cfg.checkpoint_hook = [&](const OperatorModel&, std::size_t e) { calls.push_back(e); };
    train(m, ds, nullptr, cfg);
    CHECK(calls == std::vector<std::size_t>{2, 4, 5});
}

TEST_CASE("divergent training aborts with a solver error") {
    Dataset ds = linear_toy(8, 16, 23);
    OperatorModel m = make_model(tiny_fno());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.initial_lr = 1e200;
    CHECK_THROWS_AS(train(m, ds, nullptr, cfg), SolverError);
}

TEST_CASE("history csv round trip") {
    std::vector<EpochRecord> h = {{0, 1e-3, 0.5, 0.6}, {1, 1e-3, 0.4, 0.5}};
    std::string path = "train_history_test.csv";
    write_history_csv(path, h);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,lr,train_err,test_err");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    in.close();
    std::remove(path.c_str());
}
