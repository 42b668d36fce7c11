#pragma once
// Structured grids and sampled fields.
#include <array>
#include <cstddef>
#include <vector>

#include "nopkit/common.hpp"
#include "nopkit/tensor.hpp"

namespace nop {

struct Grid {
    std::vector<std::size_t> sizes;                 // points per axis
    std::vector<std::array<double, 2>> extent;      // [min,max] per axis
    bool periodic = false;                          // all axes share the flag here

    std::size_t dims() const { return sizes.size(); }
    std::size_t points() const {
        std::size_t n = 1;
        for (std::size_t s : sizes) n *= s;
        return n;
    }
    double length(std::size_t axis) const { return extent[axis][1] - extent[axis][0]; }
    double spacing(std::size_t axis) const {
        std::size_t s = sizes[axis];
        return periodic ? length(axis) / double(s) : length(axis) / double(s - 1);
    }
    // periodic grids omit the duplicated endpoint
    double coord(std::size_t axis, std::size_t i) const {
        return extent[axis][0] + double(i) * spacing(axis);
    }

    static Grid uniform_1d(std::size_t s, double lo, double hi, bool periodic) {
        return Grid{{s}, {{lo, hi}}, periodic};
    }
    static Grid uniform_2d(std::size_t s, double lo, double hi, bool periodic) {
        return Grid{{s, s}, {{lo, hi}, {lo, hi}}, periodic};
    }
};

inline bool same_grid(const Grid& a, const Grid& b) {
    return a.sizes == b.sizes && a.extent == b.extent && a.periodic == b.periodic;
}

struct FieldSample {
    Grid grid;
    Tensor values; // shape (s_1, ..., s_d, channels)

    std::size_t channels() const {
        return values.size() / grid.points();
    }
};

// Flattened coordinate matrix (points, d) in row-major grid order.
Tensor grid_coordinates(const Grid& g);

} // namespace nop
