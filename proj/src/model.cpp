#include "nopkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nop {

Tensor activate(const Tensor& v, Activation act) {
    switch (act) {
    case Activation::identity: return v;
    case Activation::relu: return relu(v);
    case Activation::gelu: return gelu(v);
    }
    throw ConfigError("activate: unknown activation");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    std::vector<double> d(n);
    for (double& x : d) x = (2.0 * rng.uniform() - 1.0) * bound;
    return Tensor(std::move(shape), std::move(d), true);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t(0));
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + std::size_t(rng.uniform() * double(n - i));
        if (j >= n) j = n - 1;
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

// Per-point trapezoid quadrature weights (plain h^d on periodic grids).
std::vector<double> quadrature_weights(const Grid& g) {
    std::size_t d = g.dims(), J = g.points();
    std::vector<double> w(J, 1.0);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < J; ++p) {
        for (std::size_t ax = 0; ax < d; ++ax) {
            double f = g.spacing(ax);
            if (!g.periodic && (idx[ax] == 0 || idx[ax] + 1 == g.sizes[ax])) f *= 0.5;
            w[p] *= f;
        }
        for (std::size_t ax = d; ax-- > 0;) {
            if (++idx[ax] < g.sizes[ax]) break;
            idx[ax] = 0;
        }
    }
    return w;
}

// Averaged kernel aggregation shared by the graph layers:
// out(x) = (1/|N(x)|) sum_{y->x} kernel(e(x,y)) v(y).
Tensor kernel_aggregate(const Mlp& kernel, const Tensor& feats,
                        const std::vector<std::size_t>& senders,
                        const std::vector<std::size_t>& receivers,
                        const std::vector<double>& in_degree, std::size_t n_out,
                        const Tensor& v) {
    std::size_t dv = v.dim(1), e = senders.size();
    if (kernel.out_width() != dv * dv)
        throw ShapeError("kernel_aggregate: kernel output is not d_v x d_v");
    Tensor km = reshape(kernel.forward(feats), {e, dv, dv});
    Tensor msgs = edge_matvec(km, gather_rows(v, senders));
    Tensor agg = scatter_add_rows(msgs, receivers, n_out);
    std::vector<double> inv(n_out);
    for (std::size_t i = 0; i < n_out; ++i) inv[i] = 1.0 / in_degree[i];
    return mul(agg, Tensor({n_out, 1}, std::move(inv)));
}

// Edge feature row layout: (x, y, a(x), a(y)).
void push_edge_features(std::vector<double>& out, const double* coords, std::size_t d,
                        const double* av, std::size_t c, std::size_t gx, std::size_t gy,
                        const double* cx, const double* cy) {
    (void)coords;
    out.insert(out.end(), cx, cx + d);
    out.insert(out.end(), cy, cy + d);
    out.insert(out.end(), av + gx * c, av + gx * c + c);
    out.insert(out.end(), av + gy * c, av + gy * c + c);
}

Graph graph_from_nodes(const Grid& g, const FieldSample& a, std::vector<std::size_t> nodes,
                       double radius) {
    std::size_t d = g.dims(), c = a.channels(), jp = nodes.size();
    Graph gr;
    gr.nodes = std::move(nodes);
    Tensor call = grid_coordinates(g);
    const double* xs = call.data();
    const double* av = a.values.data();
    std::vector<double> nc(jp * d);
    for (std::size_t i = 0; i < jp; ++i)
        for (std::size_t k = 0; k < d; ++k) nc[i * d + k] = xs[gr.nodes[i] * d + k];
    gr.coords = Tensor({jp, d}, nc);
    double r2 = radius * radius;
    std::vector<double> feats;
    for (std::size_t i = 0; i < jp; ++i) {
        std::size_t deg = 0;
        for (std::size_t j = 0; j < jp; ++j) {
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = nc[i * d + k] - nc[j * d + k];
                dist2 += diff * diff;
            }
            if (dist2 > r2) continue;
            gr.receivers.push_back(i);
            gr.senders.push_back(j);
            ++deg;
            push_edge_features(feats, xs, d, av, c, gr.nodes[i], gr.nodes[j], &nc[i * d],
                               &nc[j * d]);
        }
        gr.in_degree.push_back(double(deg));
    }
    gr.edge_features = Tensor({gr.senders.size(), 2 * d + 2 * c}, std::move(feats));
    return gr;
}

CrossEdges cross_edges(const Grid& g, const FieldSample& a,
                       const std::vector<std::size_t>& target_nodes,
                       const std::vector<std::size_t>& source_nodes, double radius) {
    std::size_t d = g.dims(), c = a.channels();
    Tensor call = grid_coordinates(g);
    const double* xs = call.data();
    const double* av = a.values.data();
    double r2 = radius * radius;
    CrossEdges ce;
    std::vector<double> feats;
    for (std::size_t i = 0; i < target_nodes.size(); ++i) {
        const double* cx = xs + target_nodes[i] * d;
        std::size_t deg = 0, nearest = 0;
        double best = 0.0;
        for (std::size_t j = 0; j < source_nodes.size(); ++j) {
            const double* cy = xs + source_nodes[j] * d;
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = cx[k] - cy[k];
                dist2 += diff * diff;
            }
            if (j == 0 || dist2 < best) {
                best = dist2;
                nearest = j;
            }
            if (dist2 > r2) continue;
            ce.receivers.push_back(i);
            ce.senders.push_back(j);
            ++deg;
            push_edge_features(feats, xs, d, av, c, target_nodes[i], source_nodes[j], cx, cy);
        }
        if (deg == 0) { // keep |N(x)| >= 1: fall back to the nearest source node
            const double* cy = xs + source_nodes[nearest] * d;
            ce.receivers.push_back(i);
            ce.senders.push_back(nearest);
            deg = 1;
            push_edge_features(feats, xs, d, av, c, target_nodes[i], source_nodes[nearest], cx,
                               cy);
        }
        ce.in_degree.push_back(double(deg));
    }
    ce.edge_features = Tensor({ce.senders.size(), 2 * d + 2 * c}, std::move(feats));
    return ce;
}

} // namespace

// --------------------------------------------------------------------- Mlp

Mlp Mlp::create(const std::vector<std::size_t>& widths, Activation act, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
    Mlp m;
    m.act = act;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        double bound = 1.0 / std::sqrt(double(widths[i]));
        m.weights.push_back(uniform_tensor({widths[i], widths[i + 1]}, bound, rng));
        m.biases.push_back(uniform_tensor({widths[i + 1]}, bound, rng));
    }
    return m;
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor v = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        v = add(matmul(v, weights[i]), biases[i]);
        if (i + 1 < weights.size()) v = activate(v, act);
    }
    return v;
}

void Mlp::collect(const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor>>& out) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.emplace_back(prefix + ".w" + std::to_string(i), weights[i]);
        out.emplace_back(prefix + ".b" + std::to_string(i), biases[i]);
    }
}

Mlp make_kernel_net(std::size_t edge_dim, std::size_t d_v, std::size_t width, Rng& rng) {
    return Mlp::create({edge_dim, width, width, width, d_v * d_v}, Activation::relu, rng);
}

// ------------------------------------------------------------------- graphs

Graph build_ball_graph(const Grid& g, const FieldSample& a, double radius,
                       std::size_t subsample, Rng& rng) {
    if (!same_grid(g, a.grid)) throw ConfigError("build_ball_graph: field grid mismatch");
    if (radius <= 0.0) throw ConfigError("build_ball_graph: radius must be positive");
    if (subsample < 1) throw ConfigError("build_ball_graph: need at least one node");
    std::size_t J = g.points();
    return graph_from_nodes(g, a, sample_without_replacement(J, std::min(subsample, J), rng),
                            radius);
}

MgnoLevels build_mgno_levels(const Grid& g, const FieldSample& a,
                             const std::vector<double>& radii,
                             const std::vector<std::size_t>& counts, Rng& rng) {
    std::size_t L = counts.size();
    if (L < 1 || radii.size() != L)
        throw ConfigError("build_mgno_levels: counts/radii length mismatch");
    for (std::size_t l = 1; l < L; ++l)
        if (counts[l] > counts[l - 1] || radii[l] < radii[l - 1])
            throw ConfigError("build_mgno_levels: counts must coarsen and radii must grow");
    std::vector<std::vector<std::size_t>> nodes(L);
    nodes[0] = sample_without_replacement(g.points(), std::min(counts[0], g.points()), rng);
    for (std::size_t l = 1; l < L; ++l) {
        std::size_t k = std::min(counts[l], nodes[l - 1].size());
        for (std::size_t p : sample_without_replacement(nodes[l - 1].size(), k, rng))
            nodes[l].push_back(nodes[l - 1][p]);
        std::sort(nodes[l].begin(), nodes[l].end());
    }
    MgnoLevels lv;
    for (std::size_t l = 0; l < L; ++l)
        lv.level.push_back(graph_from_nodes(g, a, nodes[l], radii[l]));
    for (std::size_t l = 0; l + 1 < L; ++l) {
        lv.down.push_back(cross_edges(g, a, nodes[l + 1], nodes[l], radii[l + 1]));
        lv.up.push_back(cross_edges(g, a, nodes[l], nodes[l + 1], radii[l + 1]));
    }
    return lv;
}

// ------------------------------------------------------------------- layers

Tensor gno_layer(const Tensor& v, const Graph& g, const Mlp& kernel, const Tensor& w,
                 const Tensor& b, Activation act) {
    if (v.rank() != 2 || v.dim(0) != g.node_count())
        throw ShapeError("gno_layer: v must be (nodes, d_v)");
    Tensor agg = kernel_aggregate(kernel, g.edge_features, g.senders, g.receivers, g.in_degree,
                                  g.node_count(), v);
    return activate(add(add(matmul(v, w), agg), b), act);
}

Tensor lno_layer(const Tensor& v, const Tensor& coords, const Mlp& phi, const Mlp& psi,
                 std::size_t rank, const Tensor& w, const Tensor& b, Activation act) {
    if (rank < 1) throw ConfigError("lno_layer: rank must be >= 1");
    if (v.rank() != 2 || coords.rank() != 2 || coords.dim(0) != v.dim(0))
        throw ShapeError("lno_layer: v and coords must share the point dimension");
    std::size_t J = v.dim(0), dv = v.dim(1);
    if (phi.out_width() != rank * dv * dv || psi.out_width() != rank * dv * dv)
        throw ShapeError("lno_layer: factor nets must produce rank * d_v * d_v outputs");
    Tensor pmat = reshape(phi.forward(coords), {J * rank, dv, dv});
    Tensor smat = reshape(psi.forward(coords), {J * rank, dv, dv});
    std::vector<std::size_t> tile(J * rank), comp(J * rank);
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = 0; j < rank; ++j) {
            tile[i * rank + j] = i;
            comp[i * rank + j] = j;
        }
    Tensor pv = edge_matvec(smat, gather_rows(v, tile)); // (J*rank, dv)
    Tensor ones({1, J}, 1.0);
    Tensor moments = reshape(
        mul_scalar(matmul(ones, reshape(pv, {J, rank * dv})), 1.0 / double(J)), {rank, dv});
    Tensor kv = edge_matvec(pmat, gather_rows(moments, comp));
    Tensor k = scatter_add_rows(kv, tile, J);
    return activate(add(add(matmul(v, w), k), b), act);
}

Tensor mgno_vcycle(const Tensor& v, const MgnoLevels& lv, const std::vector<Mlp>& k_within,
                   const std::vector<Mlp>& k_down, const std::vector<Mlp>& k_up,
                   const std::vector<Tensor>& w, Activation act) {
    std::size_t L = lv.level.size();
    if (L < 1 || k_within.size() != L || w.size() != L || k_down.size() + 1 != L ||
        k_up.size() + 1 != L)
        throw ConfigError("mgno_vcycle: level/kernel counts disagree");
    if (v.rank() != 2 || v.dim(0) != lv.level[0].node_count())
        throw ShapeError("mgno_vcycle: v must live on the finest level's nodes");
    std::vector<Tensor> vc(L);
    vc[0] = v;
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const CrossEdges& t = lv.down[l];
        vc[l + 1] = activate(kernel_aggregate(k_down[l], t.edge_features, t.senders, t.receivers,
                                              t.in_degree, lv.level[l + 1].node_count(), vc[l]),
                             act);
    }
    Tensor vh;
    for (std::size_t l = L; l-- > 0;) {
        const Graph& gl = lv.level[l];
        Tensor loc = add(matmul(vc[l], w[l]),
                         kernel_aggregate(k_within[l], gl.edge_features, gl.senders,
                                          gl.receivers, gl.in_degree, gl.node_count(), vc[l]));
        if (l + 1 < L) {
            const CrossEdges& t = lv.up[l];
            loc = add(loc, kernel_aggregate(k_up[l], t.edge_features, t.senders, t.receivers,
                                            t.in_degree, gl.node_count(), vh));
        }
        vh = activate(loc, act);
    }
    return vh;
}

Tensor fno_layer(const Tensor& v, const Grid& g, const ModeSet& ms, const Tensor& r_re,
                 const Tensor& r_im, const Tensor& w, const Tensor& b, Activation act) {
    if (v.rank() != 3) throw ShapeError("fno_layer: v must be (batch, points, d_v)");
    std::size_t batch = v.dim(0), J = v.dim(1), c = v.dim(2);
    Tensor conv = spectral_conv(v, g, ms, r_re, r_im);
    Tensor loc = reshape(matmul(reshape(v, {batch * J, c}), w), {batch, J, w.dim(1)});
    return activate(add(add(loc, conv), b), act);
}

Tensor fno3d_layer(const Tensor& v, const Grid& g, const ModeSet& ms, std::size_t pad_t,
                   const Tensor& r_re, const Tensor& r_im, const Tensor& w, const Tensor& b,
                   Activation act) {
    if (g.dims() != 3) throw ConfigError("fno3d_layer: expected a 3-axis grid");
    if (v.rank() != 3 || v.dim(1) != g.points())
        throw ShapeError("fno3d_layer: v must be (batch, points, d_v)");
    std::size_t sx = g.sizes[0], sy = g.sizes[1], st = g.sizes[2];
    std::vector<std::size_t> padded{sx, sy, st + pad_t};
    if (ms.sizes != padded)
        throw ConfigError("fno3d_layer: mode set must be built on the padded sizes");
    std::size_t batch = v.dim(0), J = v.dim(1), c = v.dim(2);
    Grid gp = g;
    gp.sizes[2] = st + pad_t;
    Tensor vp = v;
    if (pad_t > 0) {
        Tensor v4 = reshape(v, {batch, sx * sy, st, c});
        Tensor zeros({batch, sx * sy, pad_t, c}, 0.0);
        vp = reshape(concat({v4, zeros}, 2), {batch, sx * sy * (st + pad_t), c});
    }
    Tensor conv = spectral_conv(vp, gp, ms, r_re, r_im);
    if (pad_t > 0)
        conv = reshape(slice(reshape(conv, {batch, sx * sy, st + pad_t, c}), 2, 0, st),
                       {batch, J, c});
    Tensor loc = reshape(matmul(reshape(v, {batch * J, c}), w), {batch, J, w.dim(1)});
    return activate(add(add(loc, conv), b), act);
}

Tensor attention_kernel_layer(const Tensor& v, const Tensor& a_proj, const Tensor& b_proj,
                              const Tensor& r_out, const Tensor& r_val, Activation act) {
    if (a_proj.rank() != 2 || a_proj.dim(1) < 1)
        throw ConfigError("attention_kernel_layer: projection width m must be >= 1");
    std::size_t m = a_proj.dim(1);
    Tensor av = matmul(v, a_proj);
    Tensor bv = matmul(v, b_proj);
    Tensor scores = mul_scalar(matmul(av, transpose2d(bv)), 1.0 / std::sqrt(double(m)));
    Tensor s = softmax_last(transpose2d(scores)); // (q, j): weight of point j under query q
    Tensor y = matmul(v, r_val);
    Tensor t = matmul(transpose2d(s), y); // row j: sum_q S_j(z_q) (R_val v)_q
    return activate(add(v, matmul(t, r_out)), act);
}

Tensor deeponet_forward(const Tensor& sensors, const Mlp& branch, const Mlp& trunk,
                        const Tensor& query) {
    if (sensors.size() != branch.in_width())
        throw ContractError(
            "deeponet_forward: sensor count does not match the fixed-sensor branch input");
    Tensor g = branch.forward(reshape(sensors, {1, sensors.size()}));
    Tensor phi = trunk.forward(query);
    if (g.dim(1) != phi.dim(1))
        throw ShapeError("deeponet_forward: branch/trunk output widths differ");
    return matmul(phi, transpose2d(g));
}

// ------------------------------------------------------------------- models

OperatorModel make_model(const ModelConfig& cfg) {
    if (cfg.d_v < 1 || cfg.dims < 1) throw ConfigError("make_model: d_v and dims must be >= 1");
    Rng rng(cfg.seed);
    OperatorModel m;
    m.cfg = cfg;
    bool lifted = cfg.variant == Variant::fno || cfg.variant == Variant::gno ||
                  cfg.variant == Variant::lno || cfg.variant == Variant::mgno;
    if (lifted) {
        std::size_t din = cfg.dims + cfg.d_a;
        m.p_w = uniform_tensor({din, cfg.d_v}, 1.0 / std::sqrt(double(din)), rng);
        m.p_b = uniform_tensor({cfg.d_v}, 1.0 / std::sqrt(double(din)), rng);
        double bq1 = 1.0 / std::sqrt(double(cfg.d_v));
        m.q1_w = uniform_tensor({cfg.d_v, cfg.q_hidden}, bq1, rng);
        m.q1_b = uniform_tensor({cfg.q_hidden}, bq1, rng);
        double bq2 = 1.0 / std::sqrt(double(cfg.q_hidden));
        m.q2_w = uniform_tensor({cfg.q_hidden, cfg.d_u}, bq2, rng);
        m.q2_b = uniform_tensor({cfg.d_u}, bq2, rng);
    }
    double bv = 1.0 / std::sqrt(double(cfg.d_v));
    std::size_t edge_dim = 2 * cfg.dims + 2 * cfg.d_a;
    switch (cfg.variant) {
    case Variant::fno: {
        if (cfg.kmax.size() != cfg.dims)
            throw ConfigError("make_model: fno needs one kmax per grid axis");
        std::size_t modes = 1;
        for (std::size_t k : cfg.kmax) modes *= 2 * k;
        for (std::size_t t = 0; t < cfg.layers; ++t) {
            m.w.push_back(uniform_tensor({cfg.d_v, cfg.d_v}, bv, rng));
            m.b.push_back(uniform_tensor({cfg.d_v}, bv, rng));
            double br = 1.0 / double(cfg.d_v);
            m.r_re.push_back(uniform_tensor({modes, cfg.d_v, cfg.d_v}, br, rng));
            m.r_im.push_back(uniform_tensor({modes, cfg.d_v, cfg.d_v}, br, rng));
        }
        break;
    }
    case Variant::gno:
        for (std::size_t t = 0; t < cfg.layers; ++t) {
            m.w.push_back(uniform_tensor({cfg.d_v, cfg.d_v}, bv, rng));
            m.b.push_back(uniform_tensor({cfg.d_v}, bv, rng));
            m.kernels.push_back(make_kernel_net(edge_dim, cfg.d_v, cfg.kernel_width, rng));
        }
        break;
    case Variant::lno:
        if (cfg.rank < 1) throw ConfigError("make_model: lno rank must be >= 1");
        for (std::size_t t = 0; t < cfg.layers; ++t) {
            m.w.push_back(uniform_tensor({cfg.d_v, cfg.d_v}, bv, rng));
            m.b.push_back(uniform_tensor({cfg.d_v}, bv, rng));
            std::size_t out = cfg.rank * cfg.d_v * cfg.d_v;
            m.phi.push_back(Mlp::create({cfg.dims, cfg.factor_width, cfg.factor_width,
                                         cfg.factor_width, out},
                                        Activation::relu, rng));
            m.psi.push_back(Mlp::create({cfg.dims, cfg.factor_width, cfg.factor_width,
                                         cfg.factor_width, out},
                                        Activation::relu, rng));
        }
        break;
    case Variant::mgno: {
        std::size_t L = cfg.level_counts.size();
        if (L < 1 || cfg.level_radii.size() != L)
            throw ConfigError("make_model: mgno needs matching level counts and radii");
        for (std::size_t t = 0; t < cfg.layers; ++t) {
            std::vector<Mlp> within, down, up;
            std::vector<Tensor> wl;
            for (std::size_t l = 0; l < L; ++l) {
                within.push_back(make_kernel_net(edge_dim, cfg.d_v, cfg.kernel_width, rng));
                wl.push_back(uniform_tensor({cfg.d_v, cfg.d_v}, bv, rng));
            }
            for (std::size_t l = 0; l + 1 < L; ++l) {
                down.push_back(make_kernel_net(edge_dim, cfg.d_v, cfg.kernel_width, rng));
                up.push_back(make_kernel_net(edge_dim, cfg.d_v, cfg.kernel_width, rng));
            }
            m.mg_within.push_back(std::move(within));
            m.mg_down.push_back(std::move(down));
            m.mg_up.push_back(std::move(up));
            m.mg_w.push_back(std::move(wl));
        }
        break;
    }
    case Variant::deeponet:
        if (cfg.sensors < 1) throw ConfigError("make_model: deeponet needs a sensor count");
        m.branch = Mlp::create({cfg.sensors, cfg.net_width, cfg.net_width, cfg.basis}, cfg.act,
                               rng);
        m.trunk =
            Mlp::create({cfg.dims, cfg.net_width, cfg.net_width, cfg.basis}, cfg.act, rng);
        break;
    case Variant::greens:
        m.kernels.push_back(Mlp::create({2 * cfg.dims, cfg.kernel_width, cfg.kernel_width,
                                         cfg.kernel_width, 1},
                                        Activation::relu, rng));
        break;
    }
    return m;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const OperatorModel& m) {
    std::vector<std::pair<std::string, Tensor>> out;
    auto put = [&out](const std::string& n, const Tensor& t) {
        if (t.defined()) out.emplace_back(n, t);
    };
    put("p.w", m.p_w);
    put("p.b", m.p_b);
    std::size_t layers = std::max(
        {m.w.size(), m.kernels.size(), m.phi.size(), m.mg_within.size()});
    for (std::size_t t = 0; t < layers; ++t) {
        std::string pre = "layer" + std::to_string(t);
        if (t < m.w.size()) put(pre + ".w", m.w[t]);
        if (t < m.b.size()) put(pre + ".b", m.b[t]);
        if (t < m.r_re.size()) put(pre + ".r_re", m.r_re[t]);
        if (t < m.r_im.size()) put(pre + ".r_im", m.r_im[t]);
        if (t < m.kernels.size()) m.kernels[t].collect(pre + ".kernel", out);
        if (t < m.phi.size()) m.phi[t].collect(pre + ".phi", out);
        if (t < m.psi.size()) m.psi[t].collect(pre + ".psi", out);
        if (t < m.mg_within.size()) {
            for (std::size_t l = 0; l < m.mg_within[t].size(); ++l) {
                m.mg_within[t][l].collect(pre + ".within" + std::to_string(l), out);
                put(pre + ".w" + std::to_string(l), m.mg_w[t][l]);
            }
            for (std::size_t l = 0; l < m.mg_down[t].size(); ++l) {
                m.mg_down[t][l].collect(pre + ".down" + std::to_string(l), out);
                m.mg_up[t][l].collect(pre + ".up" + std::to_string(l), out);
            }
        }
    }
    put("q1.w", m.q1_w);
    put("q1.b", m.q1_b);
    put("q2.w", m.q2_w);
    put("q2.b", m.q2_b);
    m.branch.collect("branch", out);
    m.trunk.collect("trunk", out);
    return out;
}

std::size_t parameter_count(const OperatorModel& m) {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters(m)) n += t.size();
    return n;
}

namespace {

Tensor lift(const OperatorModel& m, const Tensor& coords, const Tensor& a_vals) {
    return add(matmul(concat({coords, a_vals}, 1), m.p_w), m.p_b);
}

Tensor project(const OperatorModel& m, const Tensor& v) {
    Tensor h = activate(add(matmul(v, m.q1_w), m.q1_b), m.cfg.act);
    return add(matmul(h, m.q2_w), m.q2_b);
}

Tensor node_values(const FieldSample& a, const std::vector<std::size_t>& nodes) {
    std::size_t c = a.channels();
    const double* av = a.values.data();
    std::vector<double> d(nodes.size() * c);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (std::size_t ch = 0; ch < c; ++ch) d[i * c + ch] = av[nodes[i] * c + ch];
    return Tensor({nodes.size(), c}, std::move(d));
}

} // namespace

ModelOutput model_forward(const OperatorModel& m, const FieldSample& a) {
    const ModelConfig& cfg = m.cfg;
    const Grid& g = a.grid;
    if (g.dims() != cfg.dims) throw ConfigError("model_forward: grid dimension mismatch");
    std::size_t J = g.points();
    if (cfg.variant != Variant::deeponet && a.channels() != cfg.d_a)
        throw ConfigError("model_forward: input channel count mismatch");
    Tensor coords = grid_coordinates(g);
    Tensor a_vals = reshape(a.values, {J, a.channels()});
    switch (cfg.variant) {
    case Variant::fno: {
        if (cfg.kmax.size() != cfg.dims)
            throw ConfigError("model_forward: fno kmax/grid dimension mismatch");
        Tensor v = reshape(lift(m, coords, a_vals), {1, J, cfg.d_v});
        if (cfg.pad_t > 0 && cfg.dims == 3) {
            std::vector<std::size_t> padded = g.sizes;
            padded[2] += cfg.pad_t;
            ModeSet ms = make_mode_set(padded, cfg.kmax);
            for (std::size_t t = 0; t < cfg.layers; ++t)
                v = fno3d_layer(v, g, ms, cfg.pad_t, m.r_re[t], m.r_im[t], m.w[t], m.b[t],
                                cfg.act);
        } else {
            ModeSet ms = make_mode_set(g.sizes, cfg.kmax);
            for (std::size_t t = 0; t < cfg.layers; ++t)
                v = fno_layer(v, g, ms, m.r_re[t], m.r_im[t], m.w[t], m.b[t], cfg.act);
        }
        return {project(m, reshape(v, {J, cfg.d_v})), {}};
    }
    case Variant::gno: {
        Rng grng(cfg.graph_seed);
        Graph gr = build_ball_graph(g, a, cfg.radius, cfg.subsample, grng);
        Tensor v = lift(m, gr.coords, node_values(a, gr.nodes));
        for (std::size_t t = 0; t < cfg.layers; ++t)
            v = gno_layer(v, gr, m.kernels[t], m.w[t], m.b[t], cfg.act);
        return {project(m, v), gr.nodes};
    }
    case Variant::lno: {
        Tensor v = lift(m, coords, a_vals);
        for (std::size_t t = 0; t < cfg.layers; ++t)
            v = lno_layer(v, coords, m.phi[t], m.psi[t], cfg.rank, m.w[t], m.b[t], cfg.act);
        return {project(m, v), {}};
    }
    case Variant::mgno: {
        Rng grng(cfg.graph_seed);
        MgnoLevels lv = build_mgno_levels(g, a, cfg.level_radii, cfg.level_counts, grng);
        Tensor v = lift(m, lv.level[0].coords, node_values(a, lv.level[0].nodes));
        for (std::size_t t = 0; t < cfg.layers; ++t)
            v = mgno_vcycle(v, lv, m.mg_within[t], m.mg_down[t], m.mg_up[t], m.mg_w[t],
                            cfg.act);
        return {project(m, v), lv.level[0].nodes};
    }
    case Variant::deeponet:
        return {deeponet_forward(a.values, m.branch, m.trunk, coords), {}};
    case Variant::greens: {
        std::size_t d = g.dims();
        const double* xs = coords.data();
        std::vector<double> pairs(J * J * 2 * d);
        for (std::size_t i = 0; i < J; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                double* row = &pairs[(i * J + j) * 2 * d];
                for (std::size_t k = 0; k < d; ++k) {
                    row[k] = xs[i * d + k];
                    row[d + k] = xs[j * d + k];
                }
            }
        Tensor kmat = reshape(m.kernels[0].forward(Tensor({J * J, 2 * d}, std::move(pairs))),
                              {J, J});
        Tensor wq({J, 1}, quadrature_weights(g));
        return {matmul(kmat, mul(a_vals, wq)), {}};
    }
    }
    throw ConfigError("model_forward: unknown variant");
}

Tensor fno_forward_batch(const OperatorModel& m, const Tensor& a_vals, const Grid& g) {
    const ModelConfig& cfg = m.cfg;
    if (cfg.variant != Variant::fno)
        throw ConfigError("fno_forward_batch: fno variants only");
    if (a_vals.rank() != 3 || a_vals.dim(1) != g.points() || a_vals.dim(2) != cfg.d_a)
        throw ShapeError("fno_forward_batch: expected (batch, points, d_a)");
    std::size_t batch = a_vals.dim(0), J = g.points(), d = g.dims();
    Tensor coords = grid_coordinates(g);
    std::vector<double> tiled(batch * J * d);
    for (std::size_t bi = 0; bi < batch; ++bi)
        std::copy(coords.data(), coords.data() + J * d, tiled.begin() + bi * J * d);
    Tensor coords_b({batch, J, d}, std::move(tiled));
    Tensor feats = concat({coords_b, a_vals}, 2);
    Tensor v = reshape(
        add(matmul(reshape(feats, {batch * J, d + cfg.d_a}), m.p_w), m.p_b),
        {batch, J, cfg.d_v});
    if (cfg.pad_t > 0 && cfg.dims == 3) {
        std::vector<std::size_t> padded = g.sizes;
        padded[2] += cfg.pad_t;
        ModeSet ms = make_mode_set(padded, cfg.kmax);
        for (std::size_t t = 0; t < cfg.layers; ++t)
            v = fno3d_layer(v, g, ms, cfg.pad_t, m.r_re[t], m.r_im[t], m.w[t], m.b[t], cfg.act);
    } else {
        ModeSet ms = make_mode_set(g.sizes, cfg.kmax);
        for (std::size_t t = 0; t < cfg.layers; ++t)
            v = fno_layer(v, g, ms, m.r_re[t], m.r_im[t], m.w[t], m.b[t], cfg.act);
    }
    return reshape(project(m, reshape(v, {batch * J, cfg.d_v})), {batch, J, cfg.d_u});
}

Tensor greens_forward_batch(const OperatorModel& m, const Tensor& f_vals, const Grid& g) {
    if (m.cfg.variant != Variant::greens)
        throw ConfigError("greens_forward_batch: scalar-kernel variant only");
    std::size_t J = g.points(), d = g.dims();
    if (f_vals.rank() != 3 || f_vals.dim(1) != J || f_vals.dim(2) != 1)
        throw ShapeError("greens_forward_batch: expected (batch, points, 1)");
    std::size_t batch = f_vals.dim(0);
    Tensor coords = grid_coordinates(g);
    const double* xs = coords.data();
    std::vector<double> pairs(J * J * 2 * d);
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = 0; j < J; ++j) {
            double* row = &pairs[(i * J + j) * 2 * d];
            for (std::size_t k = 0; k < d; ++k) {
                row[k] = xs[i * d + k];
                row[d + k] = xs[j * d + k];
            }
        }
    Tensor kmat = reshape(m.kernels[0].forward(Tensor({J * J, 2 * d}, std::move(pairs))),
                          {J, J});
    Tensor wq({J}, quadrature_weights(g));
    Tensor weighted = mul(reshape(f_vals, {batch, J}), wq);
    return reshape(matmul(weighted, transpose2d(kmat)), {batch, J, 1});
}

FieldSample autoregressive_rollout(const OperatorModel& m, const FieldSample& a0,
                                   std::size_t steps) {
    const ModelConfig& cfg = m.cfg;
    if (cfg.variant != Variant::fno || !cfg.autoregressive)
        throw ConfigError("autoregressive_rollout: model is not an autoregressive fno");
    if (a0.channels() != cfg.d_a)
        throw ConfigError("autoregressive_rollout: window width mismatch");
    if (cfg.d_u != 1)
        throw ConfigError("autoregressive_rollout: single-step models emit one channel");
    std::size_t J = a0.grid.points();
    Tensor window = reshape(a0.values, {J, cfg.d_a});
    std::vector<Tensor> outs;
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor u = model_forward(m, FieldSample{a0.grid, window}).values;
        outs.push_back(u);
        window = cfg.d_a > 1 ? concat({slice(window, 1, 1, cfg.d_a - 1), u}, 1) : u;
    }
    return {a0.grid, concat(outs, 1)};
}

} // namespace nop
