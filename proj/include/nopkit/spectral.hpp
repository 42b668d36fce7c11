#pragma once
// Discrete Fourier transforms, FNO mode-set bookkeeping, spectra.
//
// Convention throughout: forward transform is unnormalized, inverse carries
// the 1/prod(s_j) factor.
#include <complex>
#include <cstddef>
#include <vector>

#include "nopkit/grid.hpp"
#include "nopkit/tensor.hpp"

namespace nop {

// ---------------------------------------------------------------- raw FFT
// Plans are cached internally; radix-2 fast path, exact O(n^2) DFT fallback
// for other lengths (benchmark grids use sizes like 85, 141, 211, 421).
void fft_raw(std::complex<double>* x, std::size_t n);  // unnormalized forward
void ifft_raw(std::complex<double>* x, std::size_t n); // normalized inverse

// Transform selected axes of a row-major nd array in place.
void fft_nd_raw(std::complex<double>* x, const std::vector<std::size_t>& shape,
                const std::vector<std::size_t>& axes, bool inverse);

// ------------------------------------------------------- differentiable fft
// Shapes are arbitrary; `axes` index into the tensor shape. Both parts of the
// pair must agree in shape.
ComplexPair fft(const ComplexPair& v, const std::vector<std::size_t>& axes);
ComplexPair ifft(const ComplexPair& v, const std::vector<std::size_t>& axes);
ComplexPair fft_real(const Tensor& v, const std::vector<std::size_t>& axes);

// ----------------------------------------------------------------- ModeSet
struct ModeSet {
    std::vector<std::size_t> sizes;                 // grid sizes s_j
    std::vector<std::size_t> kmax;                  // cutoffs per axis
    std::vector<std::vector<std::size_t>> modes;    // retained multi-indices
    std::vector<std::size_t> flat;                  // row-major flat index of each mode
    std::size_t count() const { return modes.size(); }
};

// Retained set: per axis k < kmax or k >= s - kmax ("corners").
// ConfigError if any 2*kmax_j >= s_j (modes would double-count).
ModeSet make_mode_set(const std::vector<std::size_t>& sizes,
                      const std::vector<std::size_t>& kmax);

// w: full spectrum shaped (s_1,...,s_d, channels) -> compact (|ModeSet|, channels)
ComplexPair truncate_modes(const ComplexPair& w, const ModeSet& ms);
// inverse: zero-fill the complement
ComplexPair pad_modes(const ComplexPair& block, const ModeSet& ms, std::size_t channels);

// R(-k) = conj(R(k)) on the mode block (leading dim |ModeSet|). Modes whose
// negation falls outside the retained corners are zeroed: a nonzero unpaired
// coefficient would break the real-output guarantee. Self-conjugate modes
// become real. Differentiable.
ComplexPair enforce_conjugate_symmetry(const ComplexPair& r, const ModeSet& ms);

// ------------------------------------------------- fused spectral convolution
// u = ifft(pad(sym(R) . truncate(fft(v)))) for real v, computed with
// half-spectrum transforms restricted to the retained modes. Mathematically
// identical to the explicit route (a test asserts this); differentiable in v
// and R. v: (batch, prod(sizes), channels); r_re/r_im: (|ModeSet|, c, c).
Tensor spectral_conv(const Tensor& v, const Grid& grid, const ModeSet& ms,
                     const Tensor& r_re, const Tensor& r_im);

// ----------------------------------------------------------------- spectrum
struct SpectrumProfile {
    std::vector<double> wavenumber; // |k| = |k1| + |k2| bins, ascending
    std::vector<double> magnitude;  // per-bin mean |w_hat(k)| / J
};

// 2-D periodic square field (channel 0). ConfigError on non-square grids.
SpectrumProfile spectrum(const FieldSample& w);

} // namespace nop
