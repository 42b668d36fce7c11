#pragma once
// Operator-learning layers and models: pointwise lift/projection wrapped
// around graph, low-rank, multipole, Fourier, and attention kernel blocks.
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nopkit/grid.hpp"
#include "nopkit/rng.hpp"
#include "nopkit/spectral.hpp"
#include "nopkit/tensor.hpp"

namespace nop {

enum class Activation { identity, relu, gelu };
Tensor activate(const Tensor& v, Activation act);

// Fully-connected network. Weights are stored (in, out) and applied as
// x @ W + b; activation between layers, none after the last.
struct Mlp {
    std::vector<Tensor> weights, biases;
    Activation act = Activation::relu;

    // widths = {in, hidden..., out}; entries drawn uniform(-1/sqrt(fan_in),
    // 1/sqrt(fan_in)).
    static Mlp create(const std::vector<std::size_t>& widths, Activation act, Rng& rng);

    Tensor forward(const Tensor& x) const; // (n, in) -> (n, out)
    std::size_t in_width() const { return weights.front().dim(0); }
    std::size_t out_width() const { return weights.back().dim(1); }
    void collect(const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out) const;
};

// Edge-feature net producing d_v x d_v kernel matrices; three hidden layers.
Mlp make_kernel_net(std::size_t edge_dim, std::size_t d_v, std::size_t width, Rng& rng);

// ------------------------------------------------------------------ graphs
struct Graph {
    std::vector<std::size_t> nodes;     // grid-point indices, ascending
    Tensor coords;                      // (J', d) node coordinates
    std::vector<std::size_t> senders;   // edge y -> x, node-local indices
    std::vector<std::size_t> receivers; // grouped by receiver
    std::vector<double> in_degree;      // per node, >= 1
    Tensor edge_features;               // (E, 2d + 2c): (x, y, a(x), a(y))

    std::size_t node_count() const { return nodes.size(); }
    std::size_t edge_count() const { return senders.size(); }
};

// J' nodes sampled uniformly without replacement; a directed edge from every
// sampled y with |y - x| <= radius (self included, so neighborhoods are never
// empty).
Graph build_ball_graph(const Grid& g, const FieldSample& a, double radius,
                       std::size_t subsample, Rng& rng);

// Directed edges between two node sets (used for multipole level transitions).
struct CrossEdges {
    std::vector<std::size_t> senders;   // indices into the source level
    std::vector<std::size_t> receivers; // indices into the target level
    std::vector<double> in_degree;      // per target node, >= 1
    Tensor edge_features;               // (x_target, y_source, a(x), a(y))
};

struct MgnoLevels {
    std::vector<Graph> level;     // nested node sets, coarsening with depth
    std::vector<CrossEdges> down; // L-1 transitions fine l -> coarse l+1
    std::vector<CrossEdges> up;   // L-1 transitions coarse l+1 -> fine l
};

// counts must be nonincreasing and radii nondecreasing (coarser levels reach
// further); transitions use the coarser level's radius. An isolated receiver
// in an upward transition gets an edge from the nearest coarse node.
MgnoLevels build_mgno_levels(const Grid& g, const FieldSample& a,
                             const std::vector<double>& radii,
                             const std::vector<std::size_t>& counts, Rng& rng);

// ------------------------------------------------------------------ layers
// v_{out}(x) = act(W v(x) + (1/|N(x)|) sum_{y in N(x)} kernel(e(x,y)) v(y) + b)
Tensor gno_layer(const Tensor& v, const Graph& g, const Mlp& kernel,
                 const Tensor& w, const Tensor& b, Activation act);

// Rank-r separable kernel: u(x) = act(W v(x) + sum_j Phi_j(x) m_j + b) with
// m_j = mean_y Psi_j(y) v(y); phi/psi map coords to rank * d_v * d_v factors.
Tensor lno_layer(const Tensor& v, const Tensor& coords, const Mlp& phi, const Mlp& psi,
                 std::size_t rank, const Tensor& w, const Tensor& b, Activation act);

// One V-cycle: downward vc_{l+1} = act(K_{l+1,l} vc_l), then upward
// vh_l = act((W_l + K_{l,l}) vc_l + K_{l,l+1} vh_{l+1}).
Tensor mgno_vcycle(const Tensor& v, const MgnoLevels& lv,
                   const std::vector<Mlp>& k_within, const std::vector<Mlp>& k_down,
                   const std::vector<Mlp>& k_up, const std::vector<Tensor>& w,
                   Activation act);

// u = act(W v + ifft(pad(sym(R) . truncate(fft(v)))) + b) on a uniform grid.
// v: (batch, points, d_v); r_re/r_im: (|ModeSet|, d_v, d_v).
Tensor fno_layer(const Tensor& v, const Grid& g, const ModeSet& ms,
                 const Tensor& r_re, const Tensor& r_im,
                 const Tensor& w, const Tensor& b, Activation act);

// Space-time variant: the last (time) axis is zero-padded by pad_t points
// before the transform and cropped after; ms is built on the padded sizes.
Tensor fno3d_layer(const Tensor& v, const Grid& g, const ModeSet& ms, std::size_t pad_t,
                   const Tensor& r_re, const Tensor& r_im,
                   const Tensor& w, const Tensor& b, Activation act);

// Single-headed attention block on k points:
// u_j = act(v_j + R_out sum_q S_j(z_q) R_val v_q), scores <A v_j, B v_q>/sqrt(m),
// softmax over j. a_proj/b_proj: (d_v, m); r_out/r_val: (d_v, d_v).
Tensor attention_kernel_layer(const Tensor& v, const Tensor& a_proj, const Tensor& b_proj,
                              const Tensor& r_out, const Tensor& r_val, Activation act);

// Branch-trunk product: out(x) = sum_k branch_k(sensors) * trunk_k(x).
// ContractError if the sensor count does not match the branch input width.
Tensor deeponet_forward(const Tensor& sensors, const Mlp& branch, const Mlp& trunk,
                        const Tensor& query);

// ------------------------------------------------------------------ models
enum class Variant { fno, gno, lno, mgno, deeponet, greens };

struct ModelConfig {
    Variant variant = Variant::fno;
    Activation act = Activation::relu;
    std::size_t dims = 1;      // coordinate dimension
    std::size_t d_a = 1;       // input channels
    std::size_t d_u = 1;       // output channels
    std::size_t d_v = 64;      // layer width
    std::size_t layers = 4;    // hidden kernel layers T
    std::size_t q_hidden = 128;

    std::vector<std::size_t> kmax = {16}; // fno: per-axis mode cutoff
    std::size_t pad_t = 0;                // fno on 3-axis grids: time padding
    bool autoregressive = false;          // fno: d_a input steps -> 1 step

    double radius = 0.25;          // gno ball radius
    std::size_t subsample = 300;   // gno node budget per forward
    std::size_t kernel_width = 256;

    std::size_t rank = 4; // lno
    std::size_t factor_width = 256;

    std::vector<double> level_radii;       // mgno
    std::vector<std::size_t> level_counts; // mgno

    std::size_t sensors = 0; // deeponet branch input width
    std::size_t basis = 128; // deeponet shared output width p
    std::size_t net_width = 128;

    std::uint64_t seed = 0;
    std::uint64_t graph_seed = 0;
};

struct OperatorModel {
    ModelConfig cfg;
    Tensor p_w, p_b;                 // lift (dims + d_a) -> d_v
    Tensor q1_w, q1_b, q2_w, q2_b;   // projection d_v -> q_hidden -> d_u
    std::vector<Tensor> w, b;        // per-layer local term
    std::vector<Tensor> r_re, r_im;  // fno mode blocks
    std::vector<Mlp> kernels;        // gno: per layer; greens: single scalar net
    std::vector<Mlp> phi, psi;       // lno factor nets per layer
    std::vector<std::vector<Mlp>> mg_within, mg_down, mg_up; // per layer, per level
    std::vector<std::vector<Tensor>> mg_w;
    Mlp branch, trunk;               // deeponet
};

OperatorModel make_model(const ModelConfig& cfg);

// Stable-order parameter registry (shared tensor handles).
std::vector<std::pair<std::string, Tensor>> named_parameters(const OperatorModel& m);
std::size_t parameter_count(const OperatorModel& m);

struct ModelOutput {
    Tensor values;                  // (n, d_u)
    std::vector<std::size_t> nodes; // empty -> all grid points, row-major order
};

// Lift (x, a(x)), apply the kernel layers, project. Graph variants evaluate on
// min(subsample, points) nodes drawn deterministically from cfg.graph_seed.
ModelOutput model_forward(const OperatorModel& m, const FieldSample& a);

// Batched uniform-grid forward for training (fno variants): (B, J, d_a) ->
// (B, J, d_u).
Tensor fno_forward_batch(const OperatorModel& m, const Tensor& a_vals, const Grid& g);

// Batched forward for the scalar-kernel variant: the kernel matrix depends
// only on the grid, so it is assembled once per batch. (B, J, 1) -> (B, J, 1).
Tensor greens_forward_batch(const OperatorModel& m, const Tensor& f_vals, const Grid& g);

// Iterate a single-step autoregressive model: feed the last d_a predicted
// channels back in, returning (points, steps) stacked predictions.
FieldSample autoregressive_rollout(const OperatorModel& m, const FieldSample& a0,
                                   std::size_t steps);

} // namespace nop
