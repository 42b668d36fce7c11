#pragma once
// Dense float64 tensors with a reverse-mode autodiff tape.
//
// Tensors are value-semantic handles onto shared storage. Ops record onto the
// thread-local active Tape when any input requires gradients; a tape can be
// walked backward exactly once (no double backward). Complex quantities are
// represented as explicit real/imaginary tensor pairs.
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "nopkit/common.hpp"

namespace nop {

using Shape = std::vector<std::size_t>;

struct TensorImpl;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rank() const;
    std::size_t dim(std::size_t axis) const;

    double* data();
    const double* data() const;
    double item() const; // size-1 tensors only

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    // Gradient buffer (allocated lazily during backward / accumulation).
    bool has_grad() const;
    double* grad();
    const double* grad() const;
    void zero_grad();

    Tensor detach() const; // copies values, drops graph + grad flag
    Tensor clone() const;  // copies values, keeps requires_grad flag (leaf)

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Real/imaginary pair with identical shapes.
struct ComplexPair {
    Tensor re, im;
};

struct TensorImpl;
namespace detail {
Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward);
} // namespace detail

class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and walks recorded ops in reverse creation
    // order, accumulating into .grad buffers. Callable once per tape.
    void backward(const Tensor& loss);

    std::size_t node_count() const;

    static Tape* current();

private:
    struct State;
    std::unique_ptr<State> state_;
    Tape* prev_ = nullptr;

    void append(std::shared_ptr<TensorImpl> node);
    friend Tensor detail::make_node(Shape, std::vector<double>, std::vector<Tensor>,
                                    std::function<void(TensorImpl&)>);
};

// ---- elementwise / arithmetic (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a); // exact erf form
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);  // DomainError on non-positive entries
Tensor sqrt_op(const Tensor& a); // DomainError on negative entries

// ---- shape ops ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor transpose2d(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// ---- gather / scatter over leading dimension ----
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor scatter_add_rows(const Tensor& src, const std::vector<std::size_t>& idx, std::size_t n_rows);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor max_all(const Tensor& a); // gradient flows to first argmax
Tensor sum_last(const Tensor& a); // reduce trailing axis

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b); // (n,k) x (k,m)
// Per-row matrix-vector product: k (e,m,n), x (e,n) -> (e,m).
Tensor edge_matvec(const Tensor& k, const Tensor& x);

// ---- composites ----
Tensor softmax_last(const Tensor& a);
ComplexPair complex_mul(const ComplexPair& a, const ComplexPair& b);

// Raw dgemm helpers (also used by non-autodiff numeric code).
// c (n,m) = a (n,k) * b (k,m); accumulate adds into c.
void dgemm_nn(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate);
// c (n,m) = a (n,k) * b^T, b stored (m,k)
void dgemm_nt(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate);
// c (n,m) = a^T * b, a stored (k,n), b (k,m)
void dgemm_tn(const double* a, const double* b, double* c,
              std::size_t n, std::size_t k, std::size_t m, bool accumulate);

void assert_finite(const Tensor& t, const std::string& context);

namespace detail {
// make_node (declared above): node factory for custom primitives defined in
// other translation units (spectral transforms etc.). backward receives the
// output impl and must accumulate into the parents' grad buffers.
double* grad_buffer(const Tensor& t);          // allocates if needed
const double* grad_data(const TensorImpl& t);  // output grad (never null inside backward)
bool wants_grad(const TensorImpl& t);
bool wants_grad(const Tensor& t);
} // namespace detail

} // namespace nop
