#pragma once
// Loss, optimizer, schedule, and the training loop.
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nopkit/model.hpp"
#include "nopkit/pde.hpp"

namespace nop {

// ||pred - truth||_2 / ||truth||_2 over the grid; DomainError on zero truth.
double relative_l2(const FieldSample& pred, const FieldSample& truth);

// Differentiable batch mean of per-sample relative-L2 errors. pred/truth are
// (batch, points, channels) or any matching shapes treated as a single sample.
Tensor relative_l2_loss(const Tensor& pred, const Tensor& truth);
Tensor mse_loss(const Tensor& pred, const Tensor& truth);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v; // parallel to the parameter list
};

// Bias-corrected update theta -= lr * m_hat / sqrt(v_hat + eps); missing
// gradient buffers count as zero. SolverError names any non-finite gradient.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr, double weight_decay = 0.0);

struct TrainConfig {
    std::size_t epochs = 500;
    double initial_lr = 1e-3;
    std::size_t halve_every = 100; // lr(e) = initial * 2^-floor(e / halve_every)
    std::size_t batch_size = 20;
    std::uint64_t seed = 0;
    bool mse_loss = false;       // default trains on relative L2
    double weight_decay = 0.0;
    std::size_t early_stop_patience = 0; // 0 = off; needs a test set
    std::size_t checkpoint_every = 0;    // extra hook calls every K epochs
    std::function<void(const OperatorModel&, std::size_t)> checkpoint_hook;
};

double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_err = 0.0;
    double test_err = 0.0; // NaN when no test set was given
};

struct TrainResult {
    std::vector<EpochRecord> history;
};

// Forward pass used by both training and evaluation: autoregressive models
// roll out to the truth's channel count; graph variants fill `nodes`.
ModelOutput predict_sample(const OperatorModel& m, const FieldSample& a,
                           std::size_t out_channels);

// Mean relative-L2 over the dataset (graph variants are scored on their node
// subsets).
double mean_relative_error(const OperatorModel& m, const Dataset& ds);

// Shuffled mini-batch training with per-epoch permutations drawn from the run
// seed. Throws SolverError on a non-finite loss (the last checkpoint_hook call
// then holds the last good state).
TrainResult train(OperatorModel& model, const Dataset& train_data, const Dataset* test_data,
                  const TrainConfig& cfg);

// CSV columns: epoch, lr, train_err, test_err.
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

} // namespace nop
