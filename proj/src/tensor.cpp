#include "nopkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace nop {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;
};

namespace {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

thread_local Tape* g_tape = nullptr;

void ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
}

} // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_size(impl_->shape), fill);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    if (shape_size(shape) != data.size())
        throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("tensor: undefined handle");
    return impl_->shape;
}
std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }
std::size_t Tensor::rank() const { return shape().size(); }
std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw ShapeError("tensor: axis out of range");
    return s[axis];
}
double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }
double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor has size " + std::to_string(size()));
    return impl_->data[0];
}
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
double* Tensor::grad() { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
const double* Tensor::grad() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
void Tensor::zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}
Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }
Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

// ------------------------------------------------------------------ Tape

struct Tape::State {
    std::vector<std::shared_ptr<TensorImpl>> nodes;
    bool consumed = false;
};

Tape::Tape() : state_(std::make_unique<State>()) {
    prev_ = g_tape;
    g_tape = this;
}
Tape::~Tape() { g_tape = prev_; }
Tape* Tape::current() { return g_tape; }
std::size_t Tape::node_count() const { return state_->nodes.size(); }
void Tape::append(std::shared_ptr<TensorImpl> node) { state_->nodes.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
    if (state_->consumed)
        throw ContractError("backward: tape already consumed (double backward is unsupported)");
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    state_->consumed = true;
    TensorImpl& l = *loss.impl();
    ensure_grad(l);
    l.grad[0] = 1.0;
    for (auto it = state_->nodes.rbegin(); it != state_->nodes.rend(); ++it) {
        TensorImpl& node = **it;
        if (!node.backward_fn || node.grad.empty()) continue;
        node.backward_fn(node);
    }
}

namespace detail {

bool wants_grad(const TensorImpl& t) { return t.requires_grad; }
bool wants_grad(const Tensor& t) { return t.requires_grad(); }

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    bool need = false;
    for (const auto& p : parents)
        if (p.requires_grad()) need = true;
    if (need && g_tape != nullptr) {
        TensorImpl& impl = *out.impl();
        impl.requires_grad = true;
        impl.parents.reserve(parents.size());
        for (auto& p : parents) impl.parents.push_back(p.impl());
        impl.backward_fn = std::move(backward);
        g_tape->append(out.impl());
    }
    return out;
}

double* grad_buffer(const Tensor& t) {
    ensure_grad(*t.impl());
    return t.impl()->grad.data();
}

const double* grad_data(const TensorImpl& t) { return t.grad.data(); }

} // namespace detail

// ------------------------------------------------------- broadcasting core

namespace {

struct Bcast {
    Shape out;
    std::vector<std::size_t> stra, strb; // strides per out dim (0 = broadcast)
    std::size_t total = 0;
    bool same = false;
};

Bcast make_bcast(const Shape& a, const Shape& b, const char* opname) {
    Bcast p;
    if (a == b) {
        p.out = a;
        p.total = shape_size(a);
        p.same = true;
        return p;
    }
    std::size_t r = std::max(a.size(), b.size());
    p.out.resize(r);
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (r - b.size()));
    for (std::size_t d = 0; d < r; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1)
            throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        p.out[d] = std::max(pa[d], pb[d]);
    }
    p.stra.assign(r, 0);
    p.strb.assign(r, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t d = r; d-- > 0;) {
        p.stra[d] = (pa[d] == 1) ? 0 : sa;
        p.strb[d] = (pb[d] == 1) ? 0 : sb;
        sa *= pa[d];
        sb *= pb[d];
    }
    p.total = shape_size(p.out);
    return p;
}

template <class Body>
void bcast_for(const Bcast& p, Body body) {
    if (p.same) {
        for (std::size_t i = 0; i < p.total; ++i) body(i, i, i);
        return;
    }
    std::size_t r = p.out.size();
    std::vector<std::size_t> ix(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < p.total; ++io) {
        body(ia, ib, io);
        for (std::size_t d = r; d-- > 0;) {
            ++ix[d];
            ia += p.stra[d];
            ib += p.strb[d];
            if (ix[d] < p.out[d]) break;
            ia -= p.stra[d] * p.out[d];
            ib -= p.strb[d] * p.out[d];
            ix[d] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    Bcast plan = make_bcast(a.shape(), b.shape(), name);
    std::vector<double> out(plan.total);
    const double* pa = a.data();
    const double* pb = b.data();
    bcast_for(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) {
        switch (op) {
            case BinOp::Add: out[io] = pa[ia] + pb[ib]; break;
            case BinOp::Sub: out[io] = pa[ia] - pb[ib]; break;
            case BinOp::Mul: out[io] = pa[ia] * pb[ib]; break;
            case BinOp::Div: out[io] = pa[ia] / pb[ib]; break;
        }
    });
    Tensor ta = a, tb = b;
    return detail::make_node(plan.out, std::move(out), {a, b}, [ta, tb, plan, op](TensorImpl& o) {
        const double* g = o.grad.data();
        double* ga = ta.requires_grad() ? detail::grad_buffer(ta) : nullptr;
        double* gb = tb.requires_grad() ? detail::grad_buffer(tb) : nullptr;
        const double* pa = ta.data();
        const double* pb = tb.data();
        bcast_for(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) {
            double go = g[io];
            switch (op) {
                case BinOp::Add:
                    if (ga) ga[ia] += go;
                    if (gb) gb[ib] += go;
                    break;
                case BinOp::Sub:
                    if (ga) ga[ia] += go;
                    if (gb) gb[ib] -= go;
                    break;
                case BinOp::Mul:
                    if (ga) ga[ia] += go * pb[ib];
                    if (gb) gb[ib] += go * pa[ia];
                    break;
                case BinOp::Div: {
                    double inv = 1.0 / pb[ib];
                    if (ga) ga[ia] += go * inv;
                    if (gb) gb[ib] -= go * pa[ia] * inv * inv;
                    break;
                }
            }
        });
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div, "div"); }

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + s;
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i];
    });
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta, s](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] * s;
    });
}

// ------------------------------------------------------------ activations

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] > 0.0 ? pa[i] : 0.0;
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        const double* x = ta.data();
        for (std::size_t i = 0; i < o.data.size(); ++i)
            if (x[i] > 0.0) ga[i] += g[i];
    });
}

Tensor gelu(const Tensor& a) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    static const double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * inv_sqrt2));
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        const double* x = ta.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            ga[i] += g[i] * (cdf + x[i] * pdf);
        }
    });
}

Tensor exp_op(const Tensor& a) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(pa[i]);
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        const double* y = o.data.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] * y[i];
    });
}

Tensor log_op(const Tensor& a) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(pa[i] > 0.0)) throw DomainError("log: non-positive input");
        out[i] = std::log(pa[i]);
    }
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        const double* x = ta.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] / x[i];
    });
}

Tensor sqrt_op(const Tensor& a) {
    std::vector<double> out(a.size());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (pa[i] < 0.0) throw DomainError("sqrt: negative input");
        out[i] = std::sqrt(pa[i]);
    }
    Tensor ta = a;
    return detail::make_node(a.shape(), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        const double* y = o.data.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
    });
}

// -------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor ta = a;
    std::vector<double> out(a.data(), a.data() + a.size());
    return detail::make_node(std::move(shape), std::move(out), {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i];
    });
}

namespace {
std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> str(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) str[d - 1] = str[d] * s[d];
    return str;
}
} // namespace

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
    const Shape& sa = a.shape();
    if (perm.size() != sa.size()) throw ShapeError("permute: rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    Shape so(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) {
        if (perm[d] >= sa.size() || seen[perm[d]]) throw ShapeError("permute: invalid permutation");
        seen[perm[d]] = true;
        so[d] = sa[perm[d]];
    }
    auto stra = row_major_strides(sa);
    std::vector<std::size_t> str_in_out_order(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) str_in_out_order[d] = stra[perm[d]];

    std::vector<double> out(a.size());
    const double* pa = a.data();
    std::size_t r = so.size();
    std::vector<std::size_t> ix(r, 0);
    std::size_t ia = 0;
    for (std::size_t io = 0; io < out.size(); ++io) {
        out[io] = pa[ia];
        for (std::size_t d = r; d-- > 0;) {
            ++ix[d];
            ia += str_in_out_order[d];
            if (ix[d] < so[d]) break;
            ia -= str_in_out_order[d] * so[d];
            ix[d] = 0;
        }
    }
    Tensor ta = a;
    return detail::make_node(so, std::move(out), {a},
                             [ta, so, str_in_out_order](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        std::size_t r = so.size();
        std::vector<std::size_t> ix(r, 0);
        std::size_t ia = 0;
        for (std::size_t io = 0; io < o.data.size(); ++io) {
            ga[ia] += g[io];
            for (std::size_t d = r; d-- > 0;) {
                ++ix[d];
                ia += str_in_out_order[d];
                if (ix[d] < so[d]) break;
                ia -= str_in_out_order[d] * so[d];
                ix[d] = 0;
            }
        }
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
    return permute(a, {1, 0});
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t count) {
    const Shape& sa = a.shape();
    if (axis >= sa.size()) throw ShapeError("slice: axis out of range");
    if (start + count > sa[axis]) throw ShapeError("slice: range out of bounds");
    Shape so = sa;
    so[axis] = count;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= sa[d];
    for (std::size_t d = axis + 1; d < sa.size(); ++d) inner *= sa[d];
    std::vector<double> out(shape_size(so));
    const double* pa = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * count * inner,
                    pa + (o * sa[axis] + start) * inner,
                    count * inner * sizeof(double));
    Tensor ta = a;
    std::size_t dim_a = sa[axis];
    return detail::make_node(so, std::move(out), {a},
                             [ta, outer, inner, count, start, dim_a](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t ou = 0; ou < outer; ++ou) {
            const double* gs = g + ou * count * inner;
            double* gd = ga + (ou * dim_a + start) * inner;
            for (std::size_t i = 0; i < count * inner; ++i) gd[i] += gs[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    Shape so = s0;
    so[axis] = 0;
    for (const auto& p : parts) {
        const Shape& sp = p.shape();
        if (sp.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && sp[d] != s0[d])
                throw ShapeError("concat: shape mismatch at axis " + std::to_string(d));
        so[axis] += sp[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
    std::vector<double> out(shape_size(so));
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::size_t c = p.shape()[axis];
        const double* pp = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * so[axis] + off) * inner,
                        pp + o * c * inner, c * inner * sizeof(double));
        off += c;
    }
    std::vector<Tensor> parents = parts;
    std::size_t total_axis = so[axis];
    return detail::make_node(so, std::move(out), parents,
                             [parents, offsets, outer, inner, total_axis, axis](TensorImpl& o) {
        const double* g = o.grad.data();
        for (std::size_t pi = 0; pi < parents.size(); ++pi) {
            if (!parents[pi].requires_grad()) continue;
            Tensor tp = parents[pi];
            double* gp = detail::grad_buffer(tp);
            std::size_t c = tp.shape()[axis];
            for (std::size_t ou = 0; ou < outer; ++ou) {
                const double* gs = g + (ou * total_axis + offsets[pi]) * inner;
                double* gd = gp + ou * c * inner;
                for (std::size_t i = 0; i < c * inner; ++i) gd[i] += gs[i];
            }
        }
    });
}

// --------------------------------------------------------- gather/scatter

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    if (a.rank() < 1) throw ShapeError("gather_rows: rank 0 input");
    std::size_t n = a.dim(0);
    std::size_t rest = a.size() / std::max<std::size_t>(n, 1);
    for (std::size_t i : idx)
        if (i >= n) throw ShapeError("gather_rows: index out of range");
    Shape so = a.shape();
    so[0] = idx.size();
    std::vector<double> out(idx.size() * rest);
    const double* pa = a.data();
    for (std::size_t e = 0; e < idx.size(); ++e)
        std::memcpy(out.data() + e * rest, pa + idx[e] * rest, rest * sizeof(double));
    Tensor ta = a;
    return detail::make_node(so, std::move(out), {a}, [ta, idx, rest](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t e = 0; e < idx.size(); ++e) {
            const double* gs = g + e * rest;
            double* gd = ga + idx[e] * rest;
            for (std::size_t i = 0; i < rest; ++i) gd[i] += gs[i];
        }
    });
}

Tensor scatter_add_rows(const Tensor& src, const std::vector<std::size_t>& idx, std::size_t n_rows) {
    if (src.rank() < 1 || src.dim(0) != idx.size())
        throw ShapeError("scatter_add_rows: leading dim must match index count");
    std::size_t rest = idx.empty() ? 0 : src.size() / idx.size();
    if (src.rank() >= 1 && idx.empty()) rest = src.size();
    for (std::size_t i : idx)
        if (i >= n_rows) throw ShapeError("scatter_add_rows: index out of range");
    Shape so = src.shape();
    so[0] = n_rows;
    std::vector<double> out(n_rows * rest, 0.0);
    const double* ps = src.data();
    for (std::size_t e = 0; e < idx.size(); ++e) {
        double* pd = out.data() + idx[e] * rest;
        const double* pe = ps + e * rest;
        for (std::size_t i = 0; i < rest; ++i) pd[i] += pe[i];
    }
    Tensor ts = src;
    return detail::make_node(so, std::move(out), {src}, [ts, idx, rest](TensorImpl& o) {
        double* gs = detail::grad_buffer(ts);
        const double* g = o.grad.data();
        for (std::size_t e = 0; e < idx.size(); ++e) {
            const double* gd = g + idx[e] * rest;
            double* ge = gs + e * rest;
            for (std::size_t i = 0; i < rest; ++i) ge[i] += gd[i];
        }
    });
}

// -------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    const double* pa = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += pa[i];
    Tensor ta = a;
    return detail::make_node({1}, {s}, {a}, [ta](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        double g = o.grad[0];
        for (std::size_t i = 0; i < ta.size(); ++i) ga[i] += g;
    });
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean_all: empty tensor");
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor max_all(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("max_all: empty tensor");
    const double* pa = a.data();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < a.size(); ++i)
        if (pa[i] > pa[arg]) arg = i;
    Tensor ta = a;
    return detail::make_node({1}, {pa[arg]}, {a}, [ta, arg](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        ga[arg] += o.grad[0];
    });
}

Tensor sum_last(const Tensor& a) {
    if (a.rank() < 1) throw ShapeError("sum_last: rank 0 input");
    std::size_t m = a.shape().back();
    std::size_t rows = a.size() / std::max<std::size_t>(m, 1);
    Shape so(a.shape().begin(), a.shape().end() - 1);
    if (so.empty()) so = {1};
    std::vector<double> out(rows, 0.0);
    const double* pa = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* row = pa + r * m;
        for (std::size_t j = 0; j < m; ++j) s += row[j];
        out[r] = s;
    }
    Tensor ta = a;
    return detail::make_node(so, std::move(out), {a}, [ta, rows, m](TensorImpl& o) {
        double* ga = detail::grad_buffer(ta);
        const double* g = o.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            double gr = g[r];
            double* row = ga + r * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += gr;
        }
    });
}

// ----------------------------------------------------------------- dgemm

void dgemm_nn(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    parallel_for(n, [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* crow = c + i * m;
            if (!accumulate)
                for (std::size_t j = 0; j < m; ++j) crow[j] = 0.0;
            const double* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                double av = arow[p];
                const double* brow = b + p * m;
                for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

void dgemm_nt(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    parallel_for(n, [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double* brow = b + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
                if (accumulate)
                    crow[j] += s;
                else
                    crow[j] = s;
            }
        }
    });
}

void dgemm_tn(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    // c (n,m) = a^T b with a stored (k,n), b stored (k,m)
    parallel_for(n, [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* crow = c + i * m;
            if (!accumulate)
                for (std::size_t j = 0; j < m; ++j) crow[j] = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                double av = a[p * n + i];
                const double* brow = b + p * m;
                for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    std::size_t n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(n * m);
    dgemm_nn(a.data(), b.data(), out.data(), n, k, m, false);
    Tensor ta = a, tb = b;
    return detail::make_node({n, m}, std::move(out), {a, b}, [ta, tb, n, k, m](TensorImpl& o) {
        const double* g = o.grad.data();
        if (ta.requires_grad()) {
            double* ga = detail::grad_buffer(ta);
            dgemm_nt(g, tb.data(), ga, n, m, k, true);
        }
        if (tb.requires_grad()) {
            double* gb = detail::grad_buffer(tb);
            dgemm_tn(ta.data(), g, gb, k, n, m, true);
        }
    });
}

Tensor edge_matvec(const Tensor& k, const Tensor& x) {
    if (k.rank() != 3 || x.rank() != 2)
        throw ShapeError("edge_matvec: expected (e,m,n) and (e,n)");
    std::size_t e = k.dim(0), m = k.dim(1), n = k.dim(2);
    if (x.dim(0) != e || x.dim(1) != n)
        throw ShapeError("edge_matvec: shape mismatch " + shape_str(k.shape()) + " vs " +
                         shape_str(x.shape()));
    std::vector<double> out(e * m, 0.0);
    const double* pk = k.data();
    const double* px = x.data();
    parallel_for(e, [&, pk, px, m, n](std::size_t e0, std::size_t e1) {
        for (std::size_t ei = e0; ei < e1; ++ei) {
            const double* mat = pk + ei * m * n;
            const double* vec = px + ei * n;
            double* dst = out.data() + ei * m;
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                const double* row = mat + i * n;
                for (std::size_t j = 0; j < n; ++j) s += row[j] * vec[j];
                dst[i] = s;
            }
        }
    });
    Tensor tk = k, tx = x;
    return detail::make_node({e, m}, std::move(out), {k, x}, [tk, tx, e, m, n](TensorImpl& o) {
        const double* g = o.grad.data();
        double* gk = tk.requires_grad() ? detail::grad_buffer(tk) : nullptr;
        double* gx = tx.requires_grad() ? detail::grad_buffer(tx) : nullptr;
        const double* pk = tk.data();
        const double* px = tx.data();
        parallel_for(e, [=](std::size_t e0, std::size_t e1) {
            for (std::size_t ei = e0; ei < e1; ++ei) {
                const double* go = g + ei * m;
                const double* vec = px + ei * n;
                const double* mat = pk + ei * m * n;
                for (std::size_t i = 0; i < m; ++i) {
                    double gi = go[i];
                    if (gk) {
                        double* grow = gk + ei * m * n + i * n;
                        for (std::size_t j = 0; j < n; ++j) grow[j] += gi * vec[j];
                    }
                    if (gx) {
                        double* gv = gx + ei * n;
                        const double* row = mat + i * n;
                        for (std::size_t j = 0; j < n; ++j) gv[j] += gi * row[j];
                    }
                }
            }
        });
    });
}

// --------------------------------------------------------------- composites

Tensor softmax_last(const Tensor& a) {
    std::size_t m = a.shape().back();
    std::size_t rows = a.size() / m;
    // row maxima as a constant for stability; softmax is shift invariant
    Shape keep = a.shape();
    keep.back() = 1;
    std::vector<double> mx(rows);
    const double* pa = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double v = pa[r * m];
        for (std::size_t j = 1; j < m; ++j) v = std::max(v, pa[r * m + j]);
        mx[r] = v;
    }
    Tensor shift(keep, std::move(mx));
    Tensor e = exp_op(sub(a, shift));
    Tensor s = reshape(sum_last(e), keep);
    return div(e, s);
}

ComplexPair complex_mul(const ComplexPair& a, const ComplexPair& b) {
    // Wirtinger bookkeeping reduces to the real bilinear expansion below.
    Tensor re = sub(mul(a.re, b.re), mul(a.im, b.im));
    Tensor im = add(mul(a.re, b.im), mul(a.im, b.re));
    return {re, im};
}

void assert_finite(const Tensor& t, const std::string& context) {
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(p[i]))
            throw SolverError(context + ": non-finite value encountered");
}

} // namespace nop
