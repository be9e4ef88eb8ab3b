#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfc/errors.hpp"

namespace mfc::num {

// Dense 64-bit tensors of rank 0..2 with reverse-mode differentiation.
// Forward ops record a closure on the active Tape when any operand requires
// gradients; backward() replays the record once, in reverse order.

namespace detail {
struct Node {
    std::vector<int> shape;      // {} scalar, {n} vector, {r,c} matrix
    std::vector<double> value;
    std::vector<double> grad;    // allocated iff requires_grad
    bool requires_grad = false;
    uint64_t tape_id = 0;        // tape that produced this node, 0 for leaves
};
using NodePtr = std::shared_ptr<Node>;
}  // namespace detail

class Tensor;
void backward(const Tensor& loss);

// One computation record per training step. Construction pushes the tape as
// the thread-local target for op recording; destruction restores the previous
// one. Single-threaded within a record.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();
    uint64_t id() const { return id_; }
    size_t size() const { return ops_.size(); }
    bool consumed() const { return consumed_; }
    void record(std::function<void()> backward_fn);

private:
    friend void backward(const Tensor&);
    friend struct OpRecorder;
    std::vector<std::function<void()>> ops_;
    Tape* prev_ = nullptr;
    uint64_t id_ = 0;
    bool consumed_ = false;
};

// Suspends recording while alive (constant-side evaluations, inference).
class NoTape {
public:
    NoTape();
    ~NoTape();
    NoTape(const NoTape&) = delete;
    NoTape& operator=(const NoTape&) = delete;

private:
    Tape* saved_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor vector(std::vector<double> v, bool requires_grad = false);
    static Tensor matrix(int rows, int cols, std::vector<double> v, bool requires_grad = false);
    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const std::vector<int>& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
    int rows() const;
    int cols() const;

    const std::vector<double>& value() const { return n_->value; }
    double item() const;                       // scalar extraction
    double at(int i) const;                    // vector element
    double at(int r, int c) const;             // matrix element

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg);           // leaves only; (re)allocates grad
    const std::vector<double>& grad() const;
    void zero_grad();

    // In-place value mutation for optimizers and initialization. Must not be
    // called on tensors participating in a live record.
    std::vector<double>& mutable_value() { return n_->value; }

    detail::NodePtr node() const { return n_; }

private:
    explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}
    detail::NodePtr n_;
    friend struct OpRecorder;
    friend Tensor make_tensor(std::vector<int>, std::vector<double>);
};

std::string shape_str(const std::vector<int>& s);

// ---- primitive forward ops (all pure; recorded when needed) ----

Tensor add(const Tensor& a, const Tensor& b);         // same shape | scalar | matrix+row-vector
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise, same broadcasts
Tensor divide(const Tensor& a, const Tensor& b);      // same shape | scalar denominator/numerator
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k]x[k,n]; vector operand on either side

Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor sqrt_op(const Tensor& x);

Tensor softmax(const Tensor& x);                      // vector, or row-wise on a matrix

Tensor sum(const Tensor& x);                          // -> scalar
Tensor mean(const Tensor& x);                         // -> scalar
Tensor mse(const Tensor& a, const Tensor& b);         // mean squared difference -> scalar
Tensor l1(const Tensor& a, const Tensor& b);          // mean absolute difference -> scalar
Tensor dot(const Tensor& a, const Tensor& b);         // vectors -> scalar

Tensor mean_pool_time(const Tensor& x);               // [T,D] -> [D]
Tensor downsample_time(const Tensor& x, int factor);  // strided mean pool over rows
Tensor repeat_rows(const Tensor& x, int factor, int out_rows);
Tensor broadcast_row(const Tensor& v, int rows);      // [D] -> [rows,D]
Tensor shift_rows(const Tensor& x, int delta);        // zero-padded row shift
Tensor concat_cols(const std::vector<Tensor>& xs);    // [T,Di] -> [T,sum Di]
Tensor concat_vec(const std::vector<Tensor>& xs);     // vectors -> one vector
Tensor select_row(const Tensor& x, int t);            // [T,D] -> [D]
Tensor select_index(const Tensor& v, int i);          // [n] -> scalar
Tensor stack_rows(const std::vector<Tensor>& rows);   // k vectors [D] -> [k,D]

Tensor cross_entropy(const Tensor& logits, int target);                       // -> scalar
Tensor row_cross_entropy(const Tensor& logits, const std::vector<int>& targets);  // mean over rows

// cosine similarity of two vectors; throws NumericalError on zero norms
Tensor cosine(const Tensor& a, const Tensor& b);

// ---- reverse pass ----
void backward(const Tensor& loss);

// ---- finite-difference gradient verification ----
struct GradCheckReport {
    double max_relative_error = 0.0;
    bool pass = false;
    bool finite = true;
    std::string message;
};

// Compares the analytic gradient of f at x against central finite differences
// coordinate-wise; pass iff the max relative error (absolute floor 1e-8) is
// below rtol. Non-finite evaluations yield a failing diagnostic report.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step = 1e-5, double rtol = 1e-4);

// Same check for a loss builder that closes over x (a requires-grad leaf the
// builder uses in place, e.g. a registered model parameter).
GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor x, double step = 1e-5,
                                   double rtol = 1e-4);

}  // namespace mfc::num
