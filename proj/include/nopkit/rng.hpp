#pragma once
// Counter-based seeded randomness and Gaussian random field samplers.
#include <cstdint>

#include "nopkit/grid.hpp"

namespace nop {

// Identical (seed, stream, call sequence) gives identical outputs everywhere:
// each 64-bit draw is a pure hash of (seed, stream, counter).
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double normal();   // N(0,1), Box-Muller with spare caching

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t seed_, stream_, counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

enum class MeasureKind { poisson_source, darcy_coeff, burgers_ic, ns_vorticity_ic };
enum class BoundaryType { dirichlet, neumann, periodic };

// Gaussian measure N(0, c (-Laplacian + tau2 I)^{-alpha}) on the grid's domain,
// optionally pushed through a two-level threshold map.
struct MeasureSpec {
    MeasureKind kind = MeasureKind::poisson_source;
    double scale = 1.0;
    double tau2 = 1.0;
    double alpha = 2.0;
    BoundaryType boundary = BoundaryType::dirichlet;
    bool threshold = false; // darcy_coeff only
    double threshold_above = 12.0;
    double threshold_below = 3.0;

    static MeasureSpec standard(MeasureKind kind);
};

// Karhunen-Loeve draw in the operator's eigenbasis (sines for Dirichlet,
// cosine products for Neumann, complex exponentials for periodic), truncated
// at the grid's representable modes. ConfigError if alpha <= d/2 or the grid
// does not match the boundary type.
FieldSample sample_grf(const MeasureSpec& spec, const Grid& grid, Rng& rng);

// a + level * ||a||_inf * xi with pointwise iid standard normal xi.
FieldSample add_noise(const FieldSample& a, double level, Rng& rng);

} // namespace nop
