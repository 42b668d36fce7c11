#include "nopkit/grid.hpp"

namespace nop {

Tensor grid_coordinates(const Grid& g) {
    std::size_t d = g.dims();
    std::size_t n = g.points();
    std::vector<double> out(n * d);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t j = 0; j < d; ++j) out[p * d + j] = g.coord(j, idx[j]);
        for (std::size_t j = d; j-- > 0;) {
            if (++idx[j] < g.sizes[j]) break;
            idx[j] = 0;
        }
    }
    return Tensor({n, d}, std::move(out));
}

} // namespace nop
