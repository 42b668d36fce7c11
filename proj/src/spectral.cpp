#include "nopkit/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>

namespace nop {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// ------------------------------------------------------------- 1-D plans

struct FftPlan {
    std::size_t n = 0;
    bool pow2 = false;
    std::vector<std::complex<double>> roots; // e^{-2pi i j/n}
    std::vector<std::size_t> rev;

    explicit FftPlan(std::size_t n_) : n(n_) {
        pow2 = (n & (n - 1)) == 0 && n > 0;
        roots.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            double a = -kTwoPi * double(j) / double(n);
            roots[j] = {std::cos(a), std::sin(a)};
        }
        if (pow2) {
            rev.resize(n);
            std::size_t lg = 0;
            while ((std::size_t(1) << lg) < n) ++lg;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t r = 0;
                for (std::size_t b = 0; b < lg; ++b)
                    if (i & (std::size_t(1) << b)) r |= std::size_t(1) << (lg - 1 - b);
                rev[i] = r;
            }
        }
    }

    // unnormalized forward (sign -1), in place; scratch must hold n entries
    void forward(std::complex<double>* x, std::complex<double>* scratch) const {
        if (n <= 1) return;
        if (pow2) {
            for (std::size_t i = 0; i < n; ++i)
                if (rev[i] > i) std::swap(x[i], x[rev[i]]);
            for (std::size_t len = 2; len <= n; len <<= 1) {
                std::size_t step = n / len;
                for (std::size_t base = 0; base < n; base += len) {
                    for (std::size_t j = 0; j < len / 2; ++j) {
                        std::complex<double> w = roots[j * step];
                        std::complex<double> u = x[base + j];
                        std::complex<double> t = w * x[base + j + len / 2];
                        x[base + j] = u + t;
                        x[base + j + len / 2] = u - t;
                    }
                }
            }
        } else {
            composite(x, n, 1, scratch);
        }
    }

  private:
    static std::size_t smallest_factor(std::size_t m) {
        for (std::size_t p = 2; p * p <= m; ++p)
            if (m % p == 0) return p;
        return m;
    }

    // exact mixed-radix Cooley-Tukey over the full-size twiddle table; prime
    // lengths fall back to the direct DFT. `step` = (table size) / m.
    void composite(std::complex<double>* x, std::size_t m, std::size_t step,
                   std::complex<double>* scratch) const {
        std::size_t p = smallest_factor(m);
        if (p == m) {
            // direct DFT, exact for prime lengths
            for (std::size_t k = 0; k < m; ++k) {
                std::complex<double> acc = 0.0;
                std::size_t idx = 0, inc = k * step % n;
                for (std::size_t j = 0; j < m; ++j) {
                    acc += x[j] * roots[idx];
                    idx += inc;
                    if (idx >= n) idx -= n;
                }
                scratch[k] = acc;
            }
            std::copy(scratch, scratch + m, x);
            return;
        }
        std::size_t sub = m / p;
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t j = 0; j < sub; ++j) scratch[r * sub + j] = x[j * p + r];
        std::copy(scratch, scratch + m, x);
        for (std::size_t r = 0; r < p; ++r) composite(x + r * sub, sub, step * p, scratch);
        for (std::size_t k = 0; k < m; ++k) {
            std::size_t km = k % sub;
            std::complex<double> acc = 0.0;
            for (std::size_t r = 0; r < p; ++r)
                acc += roots[r * k * step % n] * x[r * sub + km];
            scratch[k] = acc;
        }
        std::copy(scratch, scratch + m, x);
    }
};

const FftPlan& plan_for(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

std::size_t prod(const std::vector<std::size_t>& v) {
    std::size_t p = 1;
    for (std::size_t x : v) p *= x;
    return p;
}

// sign -1: forward; sign +1: conjugate-exponent transform. scale applied last.
void nd_transform(std::complex<double>* x, const std::vector<std::size_t>& shape,
                  const std::vector<std::size_t>& axes, int sign, double scale) {
    std::size_t total = prod(shape);
    for (std::size_t axis : axes) {
        if (axis >= shape.size()) throw ShapeError("fft: axis out of range");
        std::size_t n = shape[axis];
        std::size_t inner = 1;
        for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
        std::size_t outer = total / (n * inner);
        const FftPlan& plan = plan_for(n);
        std::vector<std::complex<double>> line(n), scratch(n);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                std::complex<double>* base = x + o * n * inner + i;
                for (std::size_t j = 0; j < n; ++j) line[j] = base[j * inner];
                if (sign > 0)
                    for (auto& c : line) c = std::conj(c);
                plan.forward(line.data(), scratch.data());
                if (sign > 0)
                    for (auto& c : line) c = std::conj(c);
                for (std::size_t j = 0; j < n; ++j) base[j * inner] = line[j];
            }
        }
    }
    if (scale != 1.0)
        for (std::size_t i = 0; i < total; ++i) x[i] *= scale;
}

} // namespace

void fft_raw(std::complex<double>* x, std::size_t n) {
    std::vector<std::complex<double>> scratch(n);
    plan_for(n).forward(x, scratch.data());
}

void ifft_raw(std::complex<double>* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
    fft_raw(x, n);
    double inv = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]) * inv;
}

void fft_nd_raw(std::complex<double>* x, const std::vector<std::size_t>& shape,
                const std::vector<std::size_t>& axes, bool inverse) {
    double scale = 1.0;
    if (inverse) {
        for (std::size_t a : axes) scale /= double(shape[a]);
    }
    nd_transform(x, shape, axes, inverse ? +1 : -1, scale);
}

// ----------------------------------------------------- differentiable fft

namespace {

// Transform a (re, im) pair; returns interleaved buffer split back out.
void run_pair(const double* re, const double* im, std::size_t n,
              const std::vector<std::size_t>& shape, const std::vector<std::size_t>& axes,
              int sign, double scale, std::vector<double>& out_re, std::vector<double>& out_im) {
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = {re ? re[i] : 0.0, im ? im[i] : 0.0};
    nd_transform(buf.data(), shape, axes, sign, scale);
    out_re.resize(n);
    out_im.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out_re[i] = buf[i].real();
        out_im[i] = buf[i].imag();
    }
}

ComplexPair transform_autodiff(const ComplexPair& v, const std::vector<std::size_t>& axes,
                               int sign, double scale) {
    if (v.re.shape() != v.im.shape())
        throw ShapeError("fft: real/imag parts differ in shape");
    const Shape shape = v.re.shape();
    std::size_t n = v.re.size();
    std::vector<double> ore, oim;
    run_pair(v.re.data(), v.im.data(), n, shape, axes, sign, scale, ore, oim);

    Tensor vre = v.re, vim = v.im;
    // adjoint of the pair map is the conjugate-exponent transform of the
    // gradient (the transform matrix is symmetric)
    auto backward_part = [vre, vim, shape, axes, sign, scale, n](TensorImpl& o, bool is_im) {
        std::vector<double> hre, him;
        const double* g = detail::grad_data(o);
        if (!is_im)
            run_pair(g, nullptr, n, shape, axes, -sign, scale, hre, him);
        else
            run_pair(nullptr, g, n, shape, axes, -sign, scale, hre, him);
        if (vre.requires_grad()) {
            double* gr = detail::grad_buffer(vre);
            for (std::size_t i = 0; i < n; ++i) gr[i] += hre[i];
        }
        if (vim.requires_grad()) {
            double* gi = detail::grad_buffer(vim);
            for (std::size_t i = 0; i < n; ++i) gi[i] += him[i];
        }
    };
    Tensor out_re = detail::make_node(shape, std::move(ore), {v.re, v.im},
                                      [backward_part](TensorImpl& o) { backward_part(o, false); });
    Tensor out_im = detail::make_node(shape, std::move(oim), {v.re, v.im},
                                      [backward_part](TensorImpl& o) { backward_part(o, true); });
    return {out_re, out_im};
}

} // namespace

ComplexPair fft(const ComplexPair& v, const std::vector<std::size_t>& axes) {
    return transform_autodiff(v, axes, -1, 1.0);
}

ComplexPair ifft(const ComplexPair& v, const std::vector<std::size_t>& axes) {
    double scale = 1.0;
    for (std::size_t a : axes) {
        if (a >= v.re.rank()) throw ShapeError("ifft: axis out of range");
        scale /= double(v.re.dim(a));
    }
    return transform_autodiff(v, axes, +1, scale);
}

ComplexPair fft_real(const Tensor& v, const std::vector<std::size_t>& axes) {
    Tensor zero(v.shape(), 0.0);
    return fft({v, zero}, axes);
}

// ------------------------------------------------------------------ ModeSet

ModeSet make_mode_set(const std::vector<std::size_t>& sizes,
                      const std::vector<std::size_t>& kmax) {
    if (sizes.size() != kmax.size() || sizes.empty())
        throw ConfigError("mode set: sizes/kmax rank mismatch");
    ModeSet ms;
    ms.sizes = sizes;
    ms.kmax = kmax;
    std::vector<std::vector<std::size_t>> axis_lists;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        if (kmax[j] == 0) throw ConfigError("mode set: kmax must be positive");
        if (2 * kmax[j] >= sizes[j])
            throw ConfigError("mode set: cutoff " + std::to_string(kmax[j]) +
                              " >= s/2 for axis size " + std::to_string(sizes[j]) +
                              " (modes would double-count)");
        std::vector<std::size_t> lst;
        for (std::size_t k = 0; k < kmax[j]; ++k) lst.push_back(k);
        for (std::size_t k = sizes[j] - kmax[j]; k < sizes[j]; ++k) lst.push_back(k);
        axis_lists.push_back(std::move(lst));
    }
    std::size_t d = sizes.size();
    std::vector<std::size_t> cursor(d, 0);
    while (true) {
        std::vector<std::size_t> k(d);
        std::size_t flat = 0;
        for (std::size_t j = 0; j < d; ++j) {
            k[j] = axis_lists[j][cursor[j]];
            flat = flat * sizes[j] + k[j];
        }
        ms.modes.push_back(k);
        ms.flat.push_back(flat);
        std::size_t j = d;
        while (j-- > 0) {
            if (++cursor[j] < axis_lists[j].size()) break;
            cursor[j] = 0;
            if (j == 0) return ms;
        }
        if (cursor[0] == 0 && j == std::size_t(-1)) break;
    }
    return ms;
}

ComplexPair truncate_modes(const ComplexPair& w, const ModeSet& ms) {
    std::size_t spatial = prod(ms.sizes);
    if (w.re.size() % spatial != 0)
        throw ShapeError("truncate_modes: spectrum does not match mode-set grid");
    std::size_t channels = w.re.size() / spatial;
    Tensor re = gather_rows(reshape(w.re, {spatial, channels}), ms.flat);
    Tensor im = gather_rows(reshape(w.im, {spatial, channels}), ms.flat);
    return {re, im};
}

ComplexPair pad_modes(const ComplexPair& block, const ModeSet& ms, std::size_t channels) {
    if (block.re.rank() != 2 || block.re.dim(0) != ms.count() || block.re.dim(1) != channels)
        throw ShapeError("pad_modes: block shape mismatch");
    std::size_t spatial = prod(ms.sizes);
    Shape full = ms.sizes;
    full.push_back(channels);
    Tensor re = reshape(scatter_add_rows(block.re, ms.flat, spatial), full);
    Tensor im = reshape(scatter_add_rows(block.im, ms.flat, spatial), full);
    return {re, im};
}

namespace {

// Per mode: index of its negation within the ModeSet, or npos if absent.
std::vector<std::size_t> mirror_indices(const ModeSet& ms) {
    std::size_t d = ms.sizes.size();
    // per-axis map from wavenumber to position in the retained axis list
    std::vector<std::vector<long>> pos(d);
    for (std::size_t j = 0; j < d; ++j) {
        pos[j].assign(ms.sizes[j], -1);
        std::size_t km = ms.kmax[j];
        for (std::size_t k = 0; k < km; ++k) pos[j][k] = long(k);
        for (std::size_t k = 0; k < km; ++k) pos[j][ms.sizes[j] - km + k] = long(km + k);
    }
    std::vector<std::size_t> axis_counts(d);
    for (std::size_t j = 0; j < d; ++j) axis_counts[j] = 2 * ms.kmax[j];
    std::vector<std::size_t> mirror(ms.count(), std::size_t(-1));
    for (std::size_t i = 0; i < ms.count(); ++i) {
        std::size_t idx = 0;
        bool ok = true;
        for (std::size_t j = 0; j < d; ++j) {
            std::size_t neg = (ms.sizes[j] - ms.modes[i][j]) % ms.sizes[j];
            long p = pos[j][neg];
            if (p < 0) {
                ok = false;
                break;
            }
            idx = idx * axis_counts[j] + std::size_t(p);
        }
        if (ok) mirror[i] = idx;
    }
    return mirror;
}

} // namespace

ComplexPair enforce_conjugate_symmetry(const ComplexPair& r, const ModeSet& ms) {
    if (r.re.rank() < 1 || r.re.dim(0) != ms.count())
        throw ShapeError("enforce_conjugate_symmetry: leading dim must equal |ModeSet|");
    std::vector<std::size_t> mirror = mirror_indices(ms);
    std::vector<std::size_t> gather_idx(ms.count());
    Shape mask_shape(r.re.rank(), 1);
    mask_shape[0] = ms.count();
    Tensor mask(mask_shape, 0.0);
    for (std::size_t i = 0; i < ms.count(); ++i) {
        if (mirror[i] == std::size_t(-1)) {
            gather_idx[i] = i; // value irrelevant, masked to zero
        } else {
            gather_idx[i] = mirror[i];
            mask.data()[i] = 1.0;
        }
    }
    Tensor re = mul(mul_scalar(add(r.re, gather_rows(r.re, gather_idx)), 0.5), mask);
    Tensor im = mul(mul_scalar(sub(r.im, gather_rows(r.im, gather_idx)), 0.5), mask);
    return {re, im};
}

// ------------------------------------------------- fused spectral convolution

namespace {

struct ConvPlan {
    std::vector<std::size_t> sizes, kmax;
    std::size_t d = 0, J = 0, M = 0, Mh = 0;
    std::vector<std::size_t> h; // retained half-frequency count per axis
    // forward tables, per axis: (h, s) angle = 2*pi*f*x/s
    std::vector<std::vector<double>> fcos, fsin;
    // synthesis tables, per axis: (s, h)
    std::vector<std::vector<double>> scos, ssin;
    std::vector<double> wlast;              // synthesis weights on the last axis
    std::vector<std::size_t> plus_idx, minus_idx; // half mode -> full ModeSet index
};

std::shared_ptr<const ConvPlan> conv_plan(const ModeSet& ms) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const ConvPlan>> cache;
    std::string key;
    for (std::size_t s : ms.sizes) key += std::to_string(s) + "x";
    key += "|";
    for (std::size_t k : ms.kmax) key += std::to_string(k) + "x";
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto plan = std::make_shared<ConvPlan>();
    plan->sizes = ms.sizes;
    plan->kmax = ms.kmax;
    plan->d = ms.sizes.size();
    plan->J = prod(ms.sizes);
    plan->M = ms.count();
    std::size_t d = plan->d;
    // signed frequency lists; last axis keeps f >= 0, the conjugate half is
    // implied by realness
    std::vector<std::vector<long>> freqs(d);
    for (std::size_t j = 0; j < d; ++j) {
        long km = long(ms.kmax[j]);
        if (j + 1 == d) {
            for (long f = 0; f < km; ++f) freqs[j].push_back(f);
        } else {
            for (long f = 0; f < km; ++f) freqs[j].push_back(f);
            for (long f = -(km - 1); f <= -1; ++f) freqs[j].push_back(f);
        }
        plan->h.push_back(freqs[j].size());
    }
    for (std::size_t j = 0; j < d; ++j) {
        std::size_t s = ms.sizes[j], hh = plan->h[j];
        plan->fcos.emplace_back(hh * s);
        plan->fsin.emplace_back(hh * s);
        plan->scos.emplace_back(s * hh);
        plan->ssin.emplace_back(s * hh);
        for (std::size_t fi = 0; fi < hh; ++fi) {
            for (std::size_t x = 0; x < s; ++x) {
                double a = kTwoPi * double(freqs[j][fi]) * double(x) / double(s);
                double c = std::cos(a), sn = std::sin(a);
                plan->fcos[j][fi * s + x] = c;
                plan->fsin[j][fi * s + x] = sn;
                plan->scos[j][x * hh + fi] = c;
                plan->ssin[j][x * hh + fi] = sn;
            }
        }
    }
    plan->Mh = 1;
    for (std::size_t j = 0; j < d; ++j) plan->Mh *= plan->h[j];
    plan->wlast.resize(plan->h[d - 1]);
    for (std::size_t fi = 0; fi < plan->h[d - 1]; ++fi)
        plan->wlast[fi] = (freqs[d - 1][fi] == 0) ? 1.0 : 2.0;
    // map half modes to +k / -k entries of the full corner list; position of
    // signed frequency f in the per-axis corner list is f (f>=0) or 2k+f (f<0)
    plan->plus_idx.resize(plan->Mh);
    plan->minus_idx.resize(plan->Mh);
    std::vector<std::size_t> cursor(d, 0);
    for (std::size_t m = 0; m < plan->Mh; ++m) {
        std::size_t ip = 0, im = 0;
        for (std::size_t j = 0; j < d; ++j) {
            long f = freqs[j][cursor[j]];
            long km = long(ms.kmax[j]);
            std::size_t pp = f >= 0 ? std::size_t(f) : std::size_t(2 * km + f);
            std::size_t pm = f <= 0 ? std::size_t(-f) : std::size_t(2 * km - f);
            ip = ip * (2 * ms.kmax[j]) + pp;
            im = im * (2 * ms.kmax[j]) + pm;
        }
        plan->plus_idx[m] = ip;
        plan->minus_idx[m] = im;
        for (std::size_t j = d; j-- > 0;) {
            if (++cursor[j] < plan->h[j]) break;
            cursor[j] = 0;
        }
    }
    std::lock_guard<std::mutex> lock(mu);
    cache[key] = plan;
    return plan;
}

// out[o,f,i] = sum_x in[o,x,i] cos(th), out_im[o,f,i] = -sum_x in[o,x,i] sin(th)
void contract_r2c(const double* in, double* out_re, double* out_im,
                  std::size_t outer, std::size_t n, std::size_t h, std::size_t inner,
                  const double* ctab, const double* stab) {
    parallel_for(outer, [=](std::size_t o0, std::size_t o1) {
        for (std::size_t o = o0; o < o1; ++o) {
            const double* ib = in + o * n * inner;
            for (std::size_t f = 0; f < h; ++f) {
                double* orr = out_re + (o * h + f) * inner;
                double* oii = out_im + (o * h + f) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    orr[i] = 0.0;
                    oii[i] = 0.0;
                }
                const double* ct = ctab + f * n;
                const double* st = stab + f * n;
                for (std::size_t x = 0; x < n; ++x) {
                    double c = ct[x], s = st[x];
                    const double* row = ib + x * inner;
                    for (std::size_t i = 0; i < inner; ++i) {
                        orr[i] += c * row[i];
                        oii[i] -= s * row[i];
                    }
                }
            }
        }
    });
}

// sign -1: out = sum_x in * e^{-i th};  sign +1: out = sum_x in * e^{+i th}
// tables are (h_out, n_in) with angle th(f, x)
void contract_c2c(const double* in_re, const double* in_im, double* out_re, double* out_im,
                  std::size_t outer, std::size_t n, std::size_t h, std::size_t inner,
                  const double* ctab, const double* stab, int sign) {
    double sg = double(sign);
    parallel_for(outer, [=](std::size_t o0, std::size_t o1) {
        for (std::size_t o = o0; o < o1; ++o) {
            const double* ibr = in_re + o * n * inner;
            const double* ibi = in_im + o * n * inner;
            for (std::size_t f = 0; f < h; ++f) {
                double* orr = out_re + (o * h + f) * inner;
                double* oii = out_im + (o * h + f) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    orr[i] = 0.0;
                    oii[i] = 0.0;
                }
                const double* ct = ctab + f * n;
                const double* st = stab + f * n;
                for (std::size_t x = 0; x < n; ++x) {
                    double c = ct[x], s = sg * st[x];
                    const double* rr = ibr + x * inner;
                    const double* ri = ibi + x * inner;
                    for (std::size_t i = 0; i < inner; ++i) {
                        orr[i] += c * rr[i] - s * ri[i];
                        oii[i] += c * ri[i] + s * rr[i];
                    }
                }
            }
        }
    });
}

// out[o,x,i] = scale * sum_f w[f] * (re[o,f,i] cos(th) - im[o,f,i] sin(th))
// tables are (s, h) with angle th(x, f)
void synth_last(const double* in_re, const double* in_im, double* out,
                std::size_t outer, std::size_t h, std::size_t s, std::size_t inner,
                const double* ctab, const double* stab, const double* w, double scale) {
    parallel_for(outer, [=](std::size_t o0, std::size_t o1) {
        for (std::size_t o = o0; o < o1; ++o) {
            const double* ibr = in_re + o * h * inner;
            const double* ibi = in_im + o * h * inner;
            for (std::size_t x = 0; x < s; ++x) {
                double* ob = out + (o * s + x) * inner;
                for (std::size_t i = 0; i < inner; ++i) ob[i] = 0.0;
                const double* ct = ctab + x * h;
                const double* st = stab + x * h;
                for (std::size_t f = 0; f < h; ++f) {
                    double c = w[f] * scale * ct[f];
                    double sn = w[f] * scale * st[f];
                    const double* rr = ibr + f * inner;
                    const double* ri = ibi + f * inner;
                    for (std::size_t i = 0; i < inner; ++i) ob[i] += c * rr[i] - sn * ri[i];
                }
            }
        }
    });
}

struct PairBuf {
    std::vector<double> re, im;
    void alloc(std::size_t n) {
        re.assign(n, 0.0);
        im.assign(n, 0.0);
    }
};

// Forward half-spectrum transform of a real array (B, s_1..s_d, C) onto the
// retained modes: result (B, Mh, C).
void half_forward(const ConvPlan& p, const double* v, std::size_t B, std::size_t C,
                  PairBuf& out, PairBuf& tmp) {
    std::size_t d = p.d;
    // axis d-1 first (real -> complex)
    {
        std::size_t inner = C;
        std::size_t n = p.sizes[d - 1];
        std::size_t outer = B * p.J / n;
        out.alloc(outer * p.h[d - 1] * inner);
        contract_r2c(v, out.re.data(), out.im.data(), outer, n, p.h[d - 1], inner,
                     p.fcos[d - 1].data(), p.fsin[d - 1].data());
    }
    for (std::size_t j = d - 1; j-- > 0;) {
        std::size_t inner = C;
        for (std::size_t q = j + 1; q < d; ++q) inner *= p.h[q];
        std::size_t n = p.sizes[j];
        std::size_t outer = B;
        for (std::size_t q = 0; q < j; ++q) outer *= p.sizes[q];
        tmp.alloc(outer * p.h[j] * inner);
        contract_c2c(out.re.data(), out.im.data(), tmp.re.data(), tmp.im.data(), outer, n,
                     p.h[j], inner, p.fcos[j].data(), p.fsin[j].data(), -1);
        std::swap(out, tmp);
    }
}

// Adjoint of half_forward: grad (B, Mh, C) -> grad of real array (B, J, C).
void half_forward_adjoint(const ConvPlan& p, const PairBuf& g, std::size_t B, std::size_t C,
                          std::vector<double>& gv, PairBuf& a, PairBuf& tmp) {
    std::size_t d = p.d;
    a.re = g.re;
    a.im = g.im;
    for (std::size_t j = 0; j < d - 1; ++j) {
        std::size_t inner = C;
        for (std::size_t q = j + 1; q < d; ++q) inner *= p.h[q];
        std::size_t outer = B;
        for (std::size_t q = 0; q < j; ++q) outer *= p.sizes[q];
        tmp.alloc(outer * p.sizes[j] * inner);
        contract_c2c(a.re.data(), a.im.data(), tmp.re.data(), tmp.im.data(), outer, p.h[j],
                     p.sizes[j], inner, p.scos[j].data(), p.ssin[j].data(), +1);
        std::swap(a, tmp);
    }
    std::size_t inner = C;
    std::size_t outer = B * p.J / p.sizes[d - 1];
    gv.assign(B * p.J * C, 0.0);
    std::vector<double> unit(p.h[d - 1], 1.0);
    synth_last(a.re.data(), a.im.data(), gv.data(), outer, p.h[d - 1], p.sizes[d - 1], inner,
               p.scos[d - 1].data(), p.ssin[d - 1].data(), unit.data(), 1.0);
}

// Synthesis: modes (B, Mh, C) -> real (B, J, C) with conjugate weights + 1/J.
void half_synthesis(const ConvPlan& p, const PairBuf& u, std::size_t B, std::size_t C,
                    std::vector<double>& out, PairBuf& a, PairBuf& tmp) {
    std::size_t d = p.d;
    a.re = u.re;
    a.im = u.im;
    for (std::size_t j = 0; j < d - 1; ++j) {
        std::size_t inner = C;
        for (std::size_t q = j + 1; q < d; ++q) inner *= p.h[q];
        std::size_t outer = B;
        for (std::size_t q = 0; q < j; ++q) outer *= p.sizes[q];
        tmp.alloc(outer * p.sizes[j] * inner);
        contract_c2c(a.re.data(), a.im.data(), tmp.re.data(), tmp.im.data(), outer, p.h[j],
                     p.sizes[j], inner, p.scos[j].data(), p.ssin[j].data(), +1);
        std::swap(a, tmp);
    }
    std::size_t inner = C;
    std::size_t outer = B * p.J / p.sizes[d - 1];
    out.assign(B * p.J * C, 0.0);
    synth_last(a.re.data(), a.im.data(), out.data(), outer, p.h[d - 1], p.sizes[d - 1], inner,
               p.scos[d - 1].data(), p.ssin[d - 1].data(), p.wlast.data(), 1.0 / double(p.J));
}

// Adjoint of half_synthesis: grad real (B, J, C) -> grad modes (B, Mh, C).
void half_synthesis_adjoint(const ConvPlan& p, const double* g, std::size_t B, std::size_t C,
                            PairBuf& out, PairBuf& tmp) {
    std::size_t d = p.d;
    std::size_t n = p.sizes[d - 1];
    std::size_t hh = p.h[d - 1];
    // weighted/scaled forward tables on the last axis
    std::vector<double> wc(hh * n), ws(hh * n);
    for (std::size_t f = 0; f < hh; ++f) {
        double w = p.wlast[f] / double(p.J);
        for (std::size_t x = 0; x < n; ++x) {
            wc[f * n + x] = w * p.fcos[d - 1][f * n + x];
            ws[f * n + x] = w * p.fsin[d - 1][f * n + x];
        }
    }
    std::size_t inner = C;
    std::size_t outer = B * p.J / n;
    out.alloc(outer * hh * inner);
    contract_r2c(g, out.re.data(), out.im.data(), outer, n, hh, inner, wc.data(), ws.data());
    for (std::size_t j = d - 1; j-- > 0;) {
        std::size_t inner2 = C;
        for (std::size_t q = j + 1; q < d; ++q) inner2 *= p.h[q];
        std::size_t outer2 = B;
        for (std::size_t q = 0; q < j; ++q) outer2 *= p.sizes[q];
        tmp.alloc(outer2 * p.h[j] * inner2);
        contract_c2c(out.re.data(), out.im.data(), tmp.re.data(), tmp.im.data(), outer2,
                     p.sizes[j], p.h[j], inner2, p.fcos[j].data(), p.fsin[j].data(), -1);
        std::swap(out, tmp);
    }
}

} // namespace

Tensor spectral_conv(const Tensor& v, const Grid& grid, const ModeSet& ms,
                     const Tensor& r_re, const Tensor& r_im) {
    if (grid.sizes != ms.sizes)
        throw ConfigError("spectral_conv: grid and mode set disagree on sizes");
    if (v.rank() != 3 || v.dim(1) != grid.points())
        throw ShapeError("spectral_conv: expected v of shape (batch, points, channels)");
    std::size_t B = v.dim(0), C = v.dim(2);
    if (r_re.rank() != 3 || r_re.dim(0) != ms.count() || r_re.dim(1) != C || r_re.dim(2) != C ||
        r_re.shape() != r_im.shape())
        throw ShapeError("spectral_conv: R must be (|ModeSet|, c, c) as a real/imag pair");

    auto plan = conv_plan(ms);
    const ConvPlan& p = *plan;
    std::size_t Mh = p.Mh;

    // symmetrized R gathered on the half modes
    auto rsym = std::make_shared<PairBuf>();
    rsym->alloc(Mh * C * C);
    {
        const double* rr = r_re.data();
        const double* ri = r_im.data();
        for (std::size_t m = 0; m < Mh; ++m) {
            const double* pr = rr + p.plus_idx[m] * C * C;
            const double* pi = ri + p.plus_idx[m] * C * C;
            const double* mr = rr + p.minus_idx[m] * C * C;
            const double* mi = ri + p.minus_idx[m] * C * C;
            double* outr = rsym->re.data() + m * C * C;
            double* outi = rsym->im.data() + m * C * C;
            for (std::size_t t = 0; t < C * C; ++t) {
                outr[t] = 0.5 * (pr[t] + mr[t]);
                outi[t] = 0.5 * (pi[t] - mi[t]);
            }
        }
    }

    auto vhat = std::make_shared<PairBuf>();
    PairBuf tmp;
    half_forward(p, v.data(), B, C, *vhat, tmp);

    // mode-wise matrix multiply u_hat = Rsym * v_hat
    PairBuf uhat;
    uhat.alloc(B * Mh * C);
    parallel_for(B * Mh, [&](std::size_t w0, std::size_t w1) {
        for (std::size_t w = w0; w < w1; ++w) {
            std::size_t m = w % Mh;
            const double* vr = vhat->re.data() + w * C;
            const double* vi = vhat->im.data() + w * C;
            const double* Rr = rsym->re.data() + m * C * C;
            const double* Ri = rsym->im.data() + m * C * C;
            double* ur = uhat.re.data() + w * C;
            double* ui = uhat.im.data() + w * C;
            for (std::size_t i = 0; i < C; ++i) {
                double ar = 0.0, ai = 0.0;
                const double* rrow = Rr + i * C;
                const double* irow = Ri + i * C;
                for (std::size_t jj = 0; jj < C; ++jj) {
                    ar += rrow[jj] * vr[jj] - irow[jj] * vi[jj];
                    ai += rrow[jj] * vi[jj] + irow[jj] * vr[jj];
                }
                ur[i] = ar;
                ui[i] = ai;
            }
        }
    });

    std::vector<double> out;
    PairBuf work;
    half_synthesis(p, uhat, B, C, out, work, tmp);

    Tensor tv = v, tr = r_re, ti = r_im;
    return detail::make_node(
        v.shape(), std::move(out), {v, r_re, r_im},
        [tv, tr, ti, plan, rsym, vhat, B, C](TensorImpl& o) {
            const ConvPlan& p = *plan;
            std::size_t Mh = p.Mh;
            PairBuf gu, tmp;
            half_synthesis_adjoint(p, detail::grad_data(o), B, C, gu, tmp);

            if (tr.requires_grad() || ti.requires_grad()) {
                // gRsym[m] += sum_b gu[b,m] * conj(vhat[b,m])^T, scattered to +-k
                double* grr = tr.requires_grad() ? detail::grad_buffer(tr) : nullptr;
                double* gri = ti.requires_grad() ? detail::grad_buffer(ti) : nullptr;
                std::vector<double> gsr(Mh * C * C, 0.0), gsi(Mh * C * C, 0.0);
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t m = 0; m < Mh; ++m) {
                        std::size_t w = b * Mh + m;
                        const double* gr = gu.re.data() + w * C;
                        const double* gi = gu.im.data() + w * C;
                        const double* vr = vhat->re.data() + w * C;
                        const double* vi = vhat->im.data() + w * C;
                        double* sr = gsr.data() + m * C * C;
                        double* si = gsi.data() + m * C * C;
                        for (std::size_t i = 0; i < C; ++i) {
                            for (std::size_t jj = 0; jj < C; ++jj) {
                                sr[i * C + jj] += gr[i] * vr[jj] + gi[i] * vi[jj];
                                si[i * C + jj] += gi[i] * vr[jj] - gr[i] * vi[jj];
                            }
                        }
                    }
                }
                for (std::size_t m = 0; m < Mh; ++m) {
                    const double* sr = gsr.data() + m * C * C;
                    const double* si = gsi.data() + m * C * C;
                    if (grr) {
                        double* a = grr + p.plus_idx[m] * C * C;
                        double* bq = grr + p.minus_idx[m] * C * C;
                        for (std::size_t t = 0; t < C * C; ++t) {
                            a[t] += 0.5 * sr[t];
                            bq[t] += 0.5 * sr[t];
                        }
                    }
                    if (gri) {
                        double* a = gri + p.plus_idx[m] * C * C;
                        double* bq = gri + p.minus_idx[m] * C * C;
                        for (std::size_t t = 0; t < C * C; ++t) {
                            a[t] += 0.5 * si[t];
                            bq[t] -= 0.5 * si[t];
                        }
                    }
                }
            }

            if (tv.requires_grad()) {
                // gVhat = Rsym^H gu
                PairBuf gv_modes;
                gv_modes.alloc(B * Mh * C);
                parallel_for(B * Mh, [&](std::size_t w0, std::size_t w1) {
                    for (std::size_t w = w0; w < w1; ++w) {
                        std::size_t m = w % Mh;
                        const double* gr = gu.re.data() + w * C;
                        const double* gi = gu.im.data() + w * C;
                        const double* Rr = rsym->re.data() + m * C * C;
                        const double* Ri = rsym->im.data() + m * C * C;
                        double* orv = gv_modes.re.data() + w * C;
                        double* oiv = gv_modes.im.data() + w * C;
                        for (std::size_t jj = 0; jj < C; ++jj) {
                            double ar = 0.0, ai = 0.0;
                            for (std::size_t i = 0; i < C; ++i) {
                                double rr = Rr[i * C + jj], ii = Ri[i * C + jj];
                                ar += rr * gr[i] + ii * gi[i];
                                ai += rr * gi[i] - ii * gr[i];
                            }
                            orv[jj] = ar;
                            oiv[jj] = ai;
                        }
                    }
                });
                std::vector<double> gv;
                PairBuf a;
                half_forward_adjoint(p, gv_modes, B, C, gv, a, tmp);
                double* gvt = detail::grad_buffer(tv);
                for (std::size_t i = 0; i < gv.size(); ++i) gvt[i] += gv[i];
            }
        });
}

// ------------------------------------------------------------------ spectrum

SpectrumProfile spectrum(const FieldSample& w) {
    if (w.grid.dims() != 2) throw ConfigError("spectrum: requires a 2-D field");
    std::size_t s = w.grid.sizes[0];
    if (w.grid.sizes[1] != s) throw ConfigError("spectrum: requires a square grid");
    std::size_t C = w.channels();
    std::size_t J = s * s;
    std::vector<std::complex<double>> buf(J);
    const double* vals = w.values.data();
    for (std::size_t i = 0; i < J; ++i) buf[i] = vals[i * C]; // channel 0
    fft_nd_raw(buf.data(), {s, s}, {0, 1}, false);
    std::size_t kcap = 2 * (s / 2);
    std::vector<double> sum(kcap + 1, 0.0);
    std::vector<std::size_t> cnt(kcap + 1, 0);
    for (std::size_t k1 = 0; k1 < s; ++k1) {
        long f1 = long(k1) <= long(s) / 2 ? long(k1) : long(k1) - long(s);
        for (std::size_t k2 = 0; k2 < s; ++k2) {
            long f2 = long(k2) <= long(s) / 2 ? long(k2) : long(k2) - long(s);
            std::size_t bin = std::size_t(std::labs(f1) + std::labs(f2));
            if (bin > kcap) continue;
            sum[bin] += std::abs(buf[k1 * s + k2]) / double(J);
            cnt[bin] += 1;
        }
    }
    SpectrumProfile prof;
    for (std::size_t b = 0; b <= kcap; ++b) {
        if (cnt[b] == 0) continue;
        prof.wavenumber.push_back(double(b));
        prof.magnitude.push_back(sum[b] / double(cnt[b]));
    }
    return prof;
}

} // namespace nop
