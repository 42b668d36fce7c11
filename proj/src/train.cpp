#include "nopkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace nop {

double relative_l2(const FieldSample& pred, const FieldSample& truth) {
    if (!same_grid(pred.grid, truth.grid) || pred.values.size() != truth.values.size())
        throw ConfigError("relative_l2: samples live on different grids");
    const double* p = pred.values.data();
    const double* t = truth.values.data();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        double d = p[i] - t[i];
        num += d * d;
        den += t[i] * t[i];
    }
    if (den == 0.0) throw DomainError("relative_l2: truth is identically zero");
    return std::sqrt(num / den);
}

Tensor relative_l2_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape() && pred.size() != truth.size())
        throw ShapeError("relative_l2_loss: shape mismatch");
    std::size_t batch = pred.rank() == 3 ? pred.dim(0) : 1;
    std::size_t n = pred.size() / batch;
    Tensor d = sub(reshape(pred, {batch, n}), reshape(truth, {batch, n}));
    Tensor num = sum_last(mul(d, d));
    const double* t = truth.data();
    std::vector<double> inv_den(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        double den = 0.0;
        for (std::size_t i = 0; i < n; ++i) den += t[b * n + i] * t[b * n + i];
        if (den == 0.0) throw DomainError("relative_l2_loss: truth is identically zero");
        inv_den[b] = 1.0 / den;
    }
    return mean_all(sqrt_op(mul(num, Tensor({batch}, std::move(inv_den)))));
}

Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.size() != truth.size()) throw ShapeError("mse_loss: shape mismatch");
    Tensor d = sub(pred, reshape(truth, pred.shape()));
    return mean_all(mul(d, d));
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr, double weight_decay) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.size(), 0.0);
            state.v[i].assign(params[i].second.size(), 0.0);
        }
    } else if (state.m.size() != params.size()) {
        throw ContractError("adam_step: state does not match the parameter list");
    }
    ++state.step;
    double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        const double* g = t.has_grad() ? t.grad() : nullptr;
        double* th = t.data();
        for (std::size_t k = 0; k < t.size(); ++k) {
            double gi = g ? g[k] : 0.0;
            if (!std::isfinite(gi))
                throw SolverError("adam_step: non-finite gradient for " + params[i].first);
            gi += weight_decay * th[k];
            state.m[i][k] = state.beta1 * state.m[i][k] + (1.0 - state.beta1) * gi;
            state.v[i][k] = state.beta2 * state.v[i][k] + (1.0 - state.beta2) * gi * gi;
            th[k] -= lr * (state.m[i][k] / bc1) / std::sqrt(state.v[i][k] / bc2 + state.eps);
        }
    }
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    return std::ldexp(cfg.initial_lr, -int(epoch / cfg.halve_every));
}

ModelOutput predict_sample(const OperatorModel& m, const FieldSample& a,
                           std::size_t out_channels) {
    if (m.cfg.variant == Variant::fno && m.cfg.autoregressive) {
        FieldSample rolled = autoregressive_rollout(m, a, out_channels);
        return {reshape(rolled.values, {a.grid.points(), out_channels}), {}};
    }
    return model_forward(m, a);
}

namespace {

Tensor truth_values(const FieldSample& truth, const std::vector<std::size_t>& nodes) {
    std::size_t c = truth.channels();
    if (nodes.empty()) return reshape(truth.values, {truth.grid.points(), c});
    const double* t = truth.values.data();
    std::vector<double> d(nodes.size() * c);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (std::size_t ch = 0; ch < c; ++ch) d[i * c + ch] = t[nodes[i] * c + ch];
    return Tensor({nodes.size(), c}, std::move(d));
}

Tensor batch_loss(const OperatorModel& m, const Dataset& ds, const std::size_t* idx,
                  std::size_t bsz, bool use_mse) {
    bool batched_fno = m.cfg.variant == Variant::fno && !m.cfg.autoregressive;
    if (batched_fno || m.cfg.variant == Variant::greens) {
        const Grid& g = ds.inputs[idx[0]].grid;
        std::size_t J = g.points(), da = m.cfg.d_a, du = m.cfg.d_u;
        std::vector<double> in(bsz * J * da), tr(bsz * J * du);
        for (std::size_t b = 0; b < bsz; ++b) {
            const Tensor& iv = ds.inputs[idx[b]].values;
            const Tensor& ov = ds.outputs[idx[b]].values;
            if (iv.size() != J * da || ov.size() != J * du)
                throw ConfigError("train: dataset shapes do not match the model");
            std::copy(iv.data(), iv.data() + iv.size(), in.begin() + b * J * da);
            std::copy(ov.data(), ov.data() + ov.size(), tr.begin() + b * J * du);
        }
        Tensor in_t({bsz, J, da}, std::move(in));
        Tensor pred = batched_fno ? fno_forward_batch(m, in_t, g) : greens_forward_batch(m, in_t, g);
        Tensor truth({bsz, J, du}, std::move(tr));
        return use_mse ? mse_loss(pred, truth) : relative_l2_loss(pred, truth);
    }
    Tensor acc;
    for (std::size_t b = 0; b < bsz; ++b) {
        const FieldSample& a = ds.inputs[idx[b]];
        const FieldSample& t = ds.outputs[idx[b]];
        ModelOutput out = predict_sample(m, a, t.channels());
        Tensor truth = truth_values(t, out.nodes);
        Tensor term = use_mse ? mse_loss(out.values, truth)
                              : relative_l2_loss(out.values, truth);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return mul_scalar(acc, 1.0 / double(bsz));
}

} // namespace

double mean_relative_error(const OperatorModel& m, const Dataset& ds) {
    if (ds.inputs.empty()) throw ConfigError("mean_relative_error: empty dataset");
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        const FieldSample& truth = ds.outputs[i];
        ModelOutput out = predict_sample(m, ds.inputs[i], truth.channels());
        const double* p = out.values.data();
        std::size_t c = truth.channels();
        const double* t = truth.values.data();
        double num = 0.0, den = 0.0;
        if (out.nodes.empty()) {
            for (std::size_t k = 0; k < truth.values.size(); ++k) {
                double d = p[k] - t[k];
                num += d * d;
                den += t[k] * t[k];
            }
        } else {
            for (std::size_t ni = 0; ni < out.nodes.size(); ++ni)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double tv = t[out.nodes[ni] * c + ch];
                    double d = p[ni * c + ch] - tv;
                    num += d * d;
                    den += tv * tv;
                }
        }
        if (den == 0.0) throw DomainError("mean_relative_error: truth is identically zero");
        acc += std::sqrt(num / den);
    }
    return acc / double(ds.inputs.size());
}

TrainResult train(OperatorModel& model, const Dataset& train_data, const Dataset* test_data,
                  const TrainConfig& cfg) {
    if (cfg.initial_lr <= 0.0 || cfg.batch_size < 1 || cfg.halve_every < 1)
        throw ConfigError("train: lr, batch size, and halving period must be positive");
    if (train_data.inputs.empty()) throw ConfigError("train: empty training set");
    auto params = named_parameters(model);
    AdamState state;
    TrainResult res;
    std::size_t n = train_data.inputs.size();
    bool have_test = test_data != nullptr && !test_data->inputs.empty();
    double best_test = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        double lr = lr_at(cfg, e);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t(0));
        Rng shuffle(cfg.seed, 0x7261696Eull + e); // per-epoch permutation stream
        for (std::size_t i = 0; i + 1 < n; ++i) {
            std::size_t j = i + std::size_t(shuffle.uniform() * double(n - i));
            if (j >= n) j = n - 1;
            std::swap(perm[i], perm[j]);
        }
        double err_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t bsz = std::min(cfg.batch_size, n - start);
            for (auto& [name, t] : params)
                if (t.has_grad()) t.zero_grad();
            Tensor loss;
            double lv = 0.0;
            {
                Tape tape;
                loss = batch_loss(model, train_data, &perm[start], bsz, cfg.mse_loss);
                lv = loss.item();
                if (!std::isfinite(lv))
                    throw SolverError("train: non-finite loss at epoch " + std::to_string(e));
                tape.backward(loss);
            }
            adam_step(params, state, lr, cfg.weight_decay);
            err_sum += lv * double(bsz);
        }
        EpochRecord rec;
        rec.epoch = e;
        rec.lr = lr;
        rec.train_err = err_sum / double(n);
        rec.test_err = have_test ? mean_relative_error(model, *test_data)
                                 : std::numeric_limits<double>::quiet_NaN();
        res.history.push_back(rec);
        if (cfg.checkpoint_hook && cfg.checkpoint_every > 0 &&
            (e + 1) % cfg.checkpoint_every == 0 && e + 1 < cfg.epochs)
            cfg.checkpoint_hook(model, e + 1);
        if (cfg.early_stop_patience > 0 && have_test) {
            if (rec.test_err < best_test) {
                best_test = rec.test_err;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                break;
            }
        }
    }
    if (cfg.checkpoint_hook && cfg.epochs > 0)
        cfg.checkpoint_hook(model, res.history.size());
    return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_history_csv: cannot open " + path);
    out.precision(17);
    out << "epoch,lr,train_err,test_err\n";
    for (const EpochRecord& r : history)
        out << r.epoch << ',' << r.lr << ',' << r.train_err << ',' << r.test_err << '\n';
}

} // namespace nop
