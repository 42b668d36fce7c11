#pragma once
// Shared error taxonomy and small utilities used across the library.
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace nop {

// Error taxonomy. The CLI maps ConfigError/ShapeError/ContractError to exit
// code 2 and DomainError/SolverError (numerical failures) to exit code 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct SolverError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };

// Deterministic parallel loop: the index range is split into contiguous
// chunks, each element is computed by exactly one worker with a fixed serial
// inner loop, so results are bitwise independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Worker count (NOPKIT_THREADS env var, default hardware concurrency, >= 1).
std::size_t worker_count();

} // namespace nop
