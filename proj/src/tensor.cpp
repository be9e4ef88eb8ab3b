#include "mfc/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace mfc::num {

namespace {

thread_local Tape* tl_tape = nullptr;
std::atomic<uint64_t> g_tape_counter{1};

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

[[noreturn]] void shape_fail(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
    throw ContractViolation(os.str());
}

}  // namespace

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

// ---- Tape -------------------------------------------------------------

Tape::Tape() : prev_(tl_tape), id_(g_tape_counter.fetch_add(1)) { tl_tape = this; }

Tape::~Tape() { tl_tape = prev_; }

Tape* Tape::current() { return tl_tape; }

void Tape::record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

NoTape::NoTape() : saved_(tl_tape) { tl_tape = nullptr; }

NoTape::~NoTape() { tl_tape = saved_; }

// ---- Tensor -----------------------------------------------------------

Tensor make_tensor(std::vector<int> shape, std::vector<double> value) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    Tensor t = make_tensor({}, {v});
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
    int n = static_cast<int>(v.size());
    Tensor t = make_tensor({n}, std::move(v));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v, bool requires_grad) {
    if (rows <= 0 || cols <= 0 || static_cast<int64_t>(v.size()) != int64_t{rows} * cols) {
        throw ContractViolation("matrix: data length does not match shape [" +
                                std::to_string(rows) + "," + std::to_string(cols) + "]");
    }
    Tensor t = make_tensor({rows, cols}, std::move(v));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    Tensor t = make_tensor(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), 0.0));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw ContractViolation("rows(): tensor is not a matrix, shape " + shape_str(shape()));
    return n_->shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ContractViolation("cols(): tensor is not a matrix, shape " + shape_str(shape()));
    return n_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractViolation("item(): tensor is not scalar, shape " + shape_str(shape()));
    return n_->value[0];
}

double Tensor::at(int i) const { return n_->value.at(static_cast<size_t>(i)); }

double Tensor::at(int r, int c) const {
    return n_->value.at(static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c));
}

void Tensor::set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg) {
        n_->grad.assign(n_->value.size(), 0.0);
    } else {
        n_->grad.clear();
    }
}

const std::vector<double>& Tensor::grad() const {
    if (!n_->requires_grad) {
        throw ContractViolation("grad(): tensor does not require gradients");
    }
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_->requires_grad) n_->grad.assign(n_->value.size(), 0.0);
}

// ---- op recording helper ----------------------------------------------

namespace {

using detail::Node;
using detail::NodePtr;

bool should_record(std::initializer_list<const Tensor*> inputs) {
    Tape* t = Tape::current();
    if (!t) return false;
    if (t->consumed()) {
        throw ContractViolation("op recorded after backward(); rebuild the forward graph");
    }
    for (const Tensor* in : inputs) {
        if (in->requires_grad()) return true;
    }
    return false;
}

void finish(Tensor& out, std::initializer_list<const Tensor*> inputs,
            std::function<void()> backward_fn) {
    if (!should_record(inputs)) return;
    out.set_requires_grad(true);
    out.node()->tape_id = Tape::current()->id();
    Tape::current()->record(std::move(backward_fn));
}

void acc(const NodePtr& n, size_t i, double g) {
    if (n->requires_grad) n->grad[i] += g;
}

}  // namespace

// ---- elementwise with limited broadcasting ------------------------------

namespace {

enum class Bcast { Same, BScalar, AScalar, BRow, ARow };

Bcast bcast_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1 && b.rank() == 0) return Bcast::BScalar;
    if (a.numel() == 1 && a.rank() == 0) return Bcast::AScalar;
    if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.shape()[0]) return Bcast::BRow;
    if (b.rank() == 2 && a.rank() == 1 && b.cols() == a.shape()[0]) return Bcast::ARow;
    shape_fail(op, a.shape(), b.shape());
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda, BwdB dfdb) {
    const Bcast mode = bcast_mode(op, a, b);
    const Tensor& big = (mode == Bcast::AScalar || mode == Bcast::ARow) ? b : a;
    const size_t n = big.value().size();
    const size_t cols = big.rank() == 2 ? static_cast<size_t>(big.cols()) : n;

    std::vector<double> out(n);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto a_at = [&](size_t i) -> double {
        switch (mode) {
            case Bcast::AScalar: return av[0];
            case Bcast::ARow: return av[i % cols];
            default: return av[i];
        }
    };
    auto b_at = [&](size_t i) -> double {
        switch (mode) {
            case Bcast::BScalar: return bv[0];
            case Bcast::BRow: return bv[i % cols];
            default: return bv[i];
        }
    };
    for (size_t i = 0; i < n; ++i) out[i] = fwd(a_at(i), b_at(i));

    Tensor r = make_tensor(big.shape(), std::move(out));
    auto an = a.node(), bn = b.node(), rn = r.node();
    finish(r, {&a, &b}, [an, bn, rn, mode, cols, n, dfda, dfdb]() {
        auto aval = [&](size_t i) -> double {
            switch (mode) {
                case Bcast::AScalar: return an->value[0];
                case Bcast::ARow: return an->value[i % cols];
                default: return an->value[i];
            }
        };
        auto bval = [&](size_t i) -> double {
            switch (mode) {
                case Bcast::BScalar: return bn->value[0];
                case Bcast::BRow: return bn->value[i % cols];
                default: return bn->value[i];
            }
        };
        for (size_t i = 0; i < n; ++i) {
            const double g = rn->grad[i];
            if (g == 0.0) continue;
            const double ga = g * dfda(aval(i), bval(i));
            const double gb = g * dfdb(aval(i), bval(i));
            if (an->requires_grad) {
                size_t ai = (mode == Bcast::AScalar) ? 0 : (mode == Bcast::ARow) ? i % cols : i;
                an->grad[ai] += ga;
            }
            if (bn->requires_grad) {
                size_t bi = (mode == Bcast::BScalar) ? 0 : (mode == Bcast::BRow) ? i % cols : i;
                bn->grad[bi] += gb;
            }
        }
    });
    return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    return binary_op(
        "divide", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd dydx_from_xy) {
    const size_t n = x.value().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = fwd(x.value()[i]);
    Tensor r = make_tensor(x.shape(), std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, n, dydx_from_xy]() {
        for (size_t i = 0; i < n; ++i) {
            xn->grad[i] += rn->grad[i] * dydx_from_xy(xn->value[i], rn->value[i]);
        }
    });
    return r;
}

}  // namespace

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor tanh_op(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0 ? v : 0.0; },
                    [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor log_op(const Tensor& x) {
    return unary_op(x, [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor exp_op(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor sqrt_op(const Tensor& x) {
    return unary_op(x, [](double v) { return std::sqrt(v); },
                    [](double, double y) { return 0.5 / y; });
}

// ---- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    // vector operands are treated as [1,k] (lhs) or [k,1] (rhs)
    const bool a_vec = a.rank() == 1;
    const bool b_vec = b.rank() == 1;
    if (a.rank() == 0 || b.rank() == 0) shape_fail("matmul", a.shape(), b.shape());
    const int m = a_vec ? 1 : a.shape()[0];
    const int k = a_vec ? a.shape()[0] : a.shape()[1];
    const int kb = b_vec ? b.shape()[0] : b.shape()[0];
    const int n = b_vec ? 1 : b.shape()[1];
    if (k != kb) shape_fail("matmul", a.shape(), b.shape());

    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const double* A = a.value().data();
    const double* B = b.value().data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = B + static_cast<size_t>(p) * n;
            double* orow = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }

    std::vector<int> oshape;
    if (a_vec && b_vec) oshape = {};           // dot-like
    else if (a_vec) oshape = {n};              // [k]x[k,n] -> [n]
    else if (b_vec) oshape = {m};              // [m,k]x[k] -> [m]
    else oshape = {m, n};

    Tensor r = make_tensor(std::move(oshape), std::move(out));
    auto an = a.node(), bn = b.node(), rn = r.node();
    finish(r, {&a, &b}, [an, bn, rn, m, k, n]() {
        const double* G = rn->grad.data();
        if (an->requires_grad) {
            double* dA = an->grad.data();
            const double* B = bn->value.data();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    const double g = G[i * n + j];
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) dA[i * k + p] += g * B[p * n + j];
                }
            }
        }
        if (bn->requires_grad) {
            double* dB = bn->grad.data();
            const double* A = an->value.data();
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    for (int j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
                }
            }
        }
    });
    return r;
}

// ---- softmax ------------------------------------------------------------

Tensor softmax(const Tensor& x) {
    if (x.rank() == 0) throw ContractViolation("softmax: scalar input");
    const int rows = x.rank() == 2 ? x.shape()[0] : 1;
    const int cols = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
    std::vector<double> out(x.value().size());
    for (int r = 0; r < rows; ++r) {
        const double* row = x.value().data() + static_cast<size_t>(r) * cols;
        double* orow = out.data() + static_cast<size_t>(r) * cols;
        double mx = row[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < cols; ++j) orow[j] /= denom;
    }
    Tensor r = make_tensor(x.shape(), std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, rows, cols]() {
        for (int rr = 0; rr < rows; ++rr) {
            const double* y = rn->value.data() + static_cast<size_t>(rr) * cols;
            const double* g = rn->grad.data() + static_cast<size_t>(rr) * cols;
            double* dx = xn->grad.data() + static_cast<size_t>(rr) * cols;
            double gy = 0.0;
            for (int j = 0; j < cols; ++j) gy += g[j] * y[j];
            for (int j = 0; j < cols; ++j) dx[j] += y[j] * (g[j] - gy);
        }
    });
    return r;
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.value()) s += v;
    Tensor r = make_tensor({}, {s});
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn]() {
        const double g = rn->grad[0];
        for (auto& gv : xn->grad) gv += g;
    });
    return r;
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.value()) s += v;
    Tensor r = make_tensor({}, {s / n});
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, n]() {
        const double g = rn->grad[0] / n;
        for (auto& gv : xn->grad) gv += g;
    });
    return r;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mse", a.shape(), b.shape());
    const size_t n = a.value().size();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    Tensor r = make_tensor({}, {s / static_cast<double>(n)});
    auto an = a.node(), bn = b.node(), rn = r.node();
    finish(r, {&a, &b}, [an, bn, rn, n]() {
        const double g = rn->grad[0] * 2.0 / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
            const double d = an->value[i] - bn->value[i];
            acc(an, i, g * d);
            acc(bn, i, -g * d);
        }
    });
    return r;
}

Tensor l1(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("l1", a.shape(), b.shape());
    const size_t n = a.value().size();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
    Tensor r = make_tensor({}, {s / static_cast<double>(n)});
    auto an = a.node(), bn = b.node(), rn = r.node();
    finish(r, {&a, &b}, [an, bn, rn, n]() {
        const double g = rn->grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
            const double d = an->value[i] - bn->value[i];
            const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            acc(an, i, g * sg);
            acc(bn, i, -g * sg);
        }
    });
    return r;
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.shape() != b.shape()) {
        shape_fail("dot", a.shape(), b.shape());
    }
    const size_t n = a.value().size();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a.value()[i] * b.value()[i];
    Tensor r = make_tensor({}, {s});
    auto an = a.node(), bn = b.node(), rn = r.node();
    finish(r, {&a, &b}, [an, bn, rn, n]() {
        const double g = rn->grad[0];
        for (size_t i = 0; i < n; ++i) {
            acc(an, i, g * bn->value[i]);
            acc(bn, i, g * an->value[i]);
        }
    });
    return r;
}

// ---- time-axis ops ---------------------------------------------------------

namespace {
void require_matrix(const char* op, const Tensor& x) {
    if (x.rank() != 2) {
        throw ContractViolation(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(x.shape()));
    }
}
}  // namespace

Tensor mean_pool_time(const Tensor& x) {
    require_matrix("mean_pool_time", x);
    const int T = x.rows(), D = x.cols();
    std::vector<double> out(static_cast<size_t>(D), 0.0);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(j)] += x.value()[static_cast<size_t>(t) * D + j];
    }
    for (auto& v : out) v /= T;
    Tensor r = make_tensor({D}, std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, T, D]() {
        for (int j = 0; j < D; ++j) {
            const double g = rn->grad[static_cast<size_t>(j)] / T;
            for (int t = 0; t < T; ++t) xn->grad[static_cast<size_t>(t) * D + j] += g;
        }
    });
    return r;
}

Tensor downsample_time(const Tensor& x, int factor) {
    require_matrix("downsample_time", x);
    if (factor <= 0) throw ContractViolation("downsample_time: factor must be positive");
    const int T = x.rows(), D = x.cols();
    const int To = (T + factor - 1) / factor;
    std::vector<double> out(static_cast<size_t>(To) * D, 0.0);
    for (int i = 0; i < To; ++i) {
        const int lo = i * factor;
        const int hi = std::min(T, lo + factor);
        for (int t = lo; t < hi; ++t) {
            for (int j = 0; j < D; ++j) out[static_cast<size_t>(i) * D + j] += x.value()[static_cast<size_t>(t) * D + j];
        }
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(i) * D + j] /= (hi - lo);
    }
    Tensor r = make_tensor({To, D}, std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, T, D, To, factor]() {
        for (int i = 0; i < To; ++i) {
            const int lo = i * factor;
            const int hi = std::min(T, lo + factor);
            const double w = 1.0 / (hi - lo);
            for (int j = 0; j < D; ++j) {
                const double g = rn->grad[static_cast<size_t>(i) * D + j] * w;
                for (int t = lo; t < hi; ++t) xn->grad[static_cast<size_t>(t) * D + j] += g;
            }
        }
    });
    return r;
}

Tensor repeat_rows(const Tensor& x, int factor, int out_rows) {
    require_matrix("repeat_rows", x);
    if (factor <= 0 || out_rows <= 0) throw ContractViolation("repeat_rows: bad factor/out_rows");
    const int Ti = x.rows(), D = x.cols();
    if ((out_rows + factor - 1) / factor > Ti) {
        throw ContractViolation("repeat_rows: out_rows " + std::to_string(out_rows) +
                                " exceeds input rows " + std::to_string(Ti) + " x factor " +
                                std::to_string(factor));
    }
    std::vector<double> out(static_cast<size_t>(out_rows) * D);
    for (int t = 0; t < out_rows; ++t) {
        const int i = t / factor;
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(t) * D + j] = x.value()[static_cast<size_t>(i) * D + j];
    }
    Tensor r = make_tensor({out_rows, D}, std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, out_rows, factor, D]() {
        for (int t = 0; t < out_rows; ++t) {
            const int i = t / factor;
            for (int j = 0; j < D; ++j) {
                xn->grad[static_cast<size_t>(i) * D + j] += rn->grad[static_cast<size_t>(t) * D + j];
            }
        }
    });
    return r;
}

Tensor broadcast_row(const Tensor& v, int rows) {
    if (v.rank() != 1) throw ContractViolation("broadcast_row: expected a vector, got " + shape_str(v.shape()));
    const int D = v.shape()[0];
    std::vector<double> out(static_cast<size_t>(rows) * D);
    for (int t = 0; t < rows; ++t) {
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(t) * D + j] = v.value()[static_cast<size_t>(j)];
    }
    Tensor r = make_tensor({rows, D}, std::move(out));
    auto vn = v.node(), rn = r.node();
    finish(r, {&v}, [vn, rn, rows, D]() {
        for (int j = 0; j < D; ++j) {
            double g = 0.0;
            for (int t = 0; t < rows; ++t) g += rn->grad[static_cast<size_t>(t) * D + j];
            vn->grad[static_cast<size_t>(j)] += g;
        }
    });
    return r;
}

Tensor shift_rows(const Tensor& x, int delta) {
    require_matrix("shift_rows", x);
    const int T = x.rows(), D = x.cols();
    std::vector<double> out(static_cast<size_t>(T) * D, 0.0);
    for (int t = 0; t < T; ++t) {
        const int src = t - delta;
        if (src < 0 || src >= T) continue;
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(t) * D + j] = x.value()[static_cast<size_t>(src) * D + j];
    }
    Tensor r = make_tensor({T, D}, std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, T, D, delta]() {
        for (int t = 0; t < T; ++t) {
            const int src = t - delta;
            if (src < 0 || src >= T) continue;
            for (int j = 0; j < D; ++j) {
                xn->grad[static_cast<size_t>(src) * D + j] += rn->grad[static_cast<size_t>(t) * D + j];
            }
        }
    });
    return r;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractViolation("concat_cols: no inputs");
    const int T = xs[0].rank() == 2 ? xs[0].rows() : -1;
    if (T < 0) throw ContractViolation("concat_cols: expected matrices");
    int total = 0;
    for (const auto& x : xs) {
        require_matrix("concat_cols", x);
        if (x.rows() != T) shape_fail("concat_cols", xs[0].shape(), x.shape());
        total += x.cols();
    }
    std::vector<double> out(static_cast<size_t>(T) * total);
    int off = 0;
    for (const auto& x : xs) {
        const int D = x.cols();
        for (int t = 0; t < T; ++t) {
            for (int j = 0; j < D; ++j) {
                out[static_cast<size_t>(t) * total + off + j] = x.value()[static_cast<size_t>(t) * D + j];
            }
        }
        off += D;
    }
    Tensor r = make_tensor({T, total}, std::move(out));
    bool any_rg = false;
    for (const auto& x : xs) any_rg = any_rg || x.requires_grad();
    if (Tape::current() && any_rg) {
        std::vector<detail::NodePtr> ins;
        ins.reserve(xs.size());
        for (const auto& x : xs) ins.push_back(x.node());
        auto rn = r.node();
        r.set_requires_grad(true);
        rn->tape_id = Tape::current()->id();
        Tape::current()->record([ins, rn, T, total]() {
            int off2 = 0;
            for (const auto& in : ins) {
                const int D = in->shape[1];
                if (in->requires_grad) {
                    for (int t = 0; t < T; ++t) {
                        for (int j = 0; j < D; ++j) {
                            in->grad[static_cast<size_t>(t) * D + j] +=
                                rn->grad[static_cast<size_t>(t) * total + off2 + j];
                        }
                    }
                }
                off2 += D;
            }
        });
    }
    return r;
}

Tensor concat_vec(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractViolation("concat_vec: no inputs");
    int total = 0;
    for (const auto& x : xs) {
        if (x.rank() != 1) throw ContractViolation("concat_vec: expected vectors, got " + shape_str(x.shape()));
        total += x.shape()[0];
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    for (const auto& x : xs) out.insert(out.end(), x.value().begin(), x.value().end());
    Tensor r = make_tensor({total}, std::move(out));
    bool any_rg = false;
    for (const auto& x : xs) any_rg = any_rg || x.requires_grad();
    if (Tape::current() && any_rg) {
        std::vector<detail::NodePtr> ins;
        for (const auto& x : xs) ins.push_back(x.node());
        auto rn = r.node();
        r.set_requires_grad(true);
        rn->tape_id = Tape::current()->id();
        Tape::current()->record([ins, rn]() {
            size_t off = 0;
            for (const auto& in : ins) {
                const size_t n = in->value.size();
                if (in->requires_grad) {
                    for (size_t i = 0; i < n; ++i) in->grad[i] += rn->grad[off + i];
                }
                off += n;
            }
        });
    }
    return r;
}

Tensor select_row(const Tensor& x, int t) {
    require_matrix("select_row", x);
    if (t < 0 || t >= x.rows()) {
        throw ContractViolation("select_row: row " + std::to_string(t) + " out of range for " +
                                shape_str(x.shape()));
    }
    const int D = x.cols();
    std::vector<double> out(x.value().begin() + static_cast<size_t>(t) * D,
                            x.value().begin() + static_cast<size_t>(t + 1) * D);
    Tensor r = make_tensor({D}, std::move(out));
    auto xn = x.node(), rn = r.node();
    finish(r, {&x}, [xn, rn, t, D]() {
        for (int j = 0; j < D; ++j) xn->grad[static_cast<size_t>(t) * D + j] += rn->grad[static_cast<size_t>(j)];
    });
    return r;
}

Tensor select_index(const Tensor& v, int i) {
    if (v.rank() != 1) throw ContractViolation("select_index: expected a vector");
    if (i < 0 || i >= v.shape()[0]) {
        throw ContractViolation("select_index: index " + std::to_string(i) + " out of range for " +
                                shape_str(v.shape()));
    }
    Tensor r = make_tensor({}, {v.value()[static_cast<size_t>(i)]});
    auto vn = v.node(), rn = r.node();
    finish(r, {&v}, [vn, rn, i]() { vn->grad[static_cast<size_t>(i)] += rn->grad[0]; });
    return r;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractViolation("stack_rows: no inputs");
    const int D = rows[0].rank() == 1 ? rows[0].shape()[0] : -1;
    if (D < 0) throw ContractViolation("stack_rows: expected vectors");
    for (const auto& rrow : rows) {
        if (rrow.rank() != 1 || rrow.shape()[0] != D) shape_fail("stack_rows", rows[0].shape(), rrow.shape());
    }
    const int T = static_cast<int>(rows.size());
    std::vector<double> out(static_cast<size_t>(T) * D);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < D; ++j) out[static_cast<size_t>(t) * D + j] = rows[static_cast<size_t>(t)].value()[static_cast<size_t>(j)];
    }
    Tensor r = make_tensor({T, D}, std::move(out));
    bool any_rg = false;
    for (const auto& rrow : rows) any_rg = any_rg || rrow.requires_grad();
    if (Tape::current() && any_rg) {
        std::vector<detail::NodePtr> ins;
        for (const auto& rrow : rows) ins.push_back(rrow.node());
        auto rn = r.node();
        r.set_requires_grad(true);
        rn->tape_id = Tape::current()->id();
        Tape::current()->record([ins, rn, D]() {
            for (size_t t = 0; t < ins.size(); ++t) {
                if (!ins[t]->requires_grad) continue;
                for (int j = 0; j < D; ++j) {
                    ins[t]->grad[static_cast<size_t>(j)] += rn->grad[t * static_cast<size_t>(D) + static_cast<size_t>(j)];
                }
            }
        });
    }
    return r;
}

// ---- classification losses ---------------------------------------------

Tensor cross_entropy(const Tensor& logits, int target) {
    if (logits.rank() != 1) throw ContractViolation("cross_entropy: expected a logit vector");
    const int V = logits.shape()[0];
    if (target < 0 || target >= V) {
        throw ContractViolation("cross_entropy: target " + std::to_string(target) +
                                " out of range for " + std::to_string(V) + " classes");
    }
    const auto& lv = logits.value();
    double mx = lv[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, lv[static_cast<size_t>(j)]);
    double denom = 0.0;
    std::vector<double> p(static_cast<size_t>(V));
    for (int j = 0; j < V; ++j) {
        p[static_cast<size_t>(j)] = std::exp(lv[static_cast<size_t>(j)] - mx);
        denom += p[static_cast<size_t>(j)];
    }
    for (auto& v : p) v /= denom;
    const double loss = -std::log(p[static_cast<size_t>(target)]);
    Tensor r = make_tensor({}, {loss});
    auto ln = logits.node(), rn = r.node();
    finish(r, {&logits}, [ln, rn, p = std::move(p), target]() {
        const double g = rn->grad[0];
        for (size_t j = 0; j < p.size(); ++j) {
            ln->grad[j] += g * (p[j] - (static_cast<int>(j) == target ? 1.0 : 0.0));
        }
    });
    return r;
}

Tensor row_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_matrix("row_cross_entropy", logits);
    const int T = logits.rows(), V = logits.cols();
    if (static_cast<int>(targets.size()) != T) {
        throw ContractViolation("row_cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(T) + " rows");
    }
    std::vector<double> probs(static_cast<size_t>(T) * V);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        const int tgt = targets[static_cast<size_t>(t)];
        if (tgt < 0 || tgt >= V) throw ContractViolation("row_cross_entropy: target out of range");
        const double* row = logits.value().data() + static_cast<size_t>(t) * V;
        double* prow = probs.data() + static_cast<size_t>(t) * V;
        double mx = row[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < V; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < V; ++j) prow[j] /= denom;
        total += -std::log(prow[tgt]);
    }
    Tensor r = make_tensor({}, {total / T});
    auto ln = logits.node(), rn = r.node();
    finish(r, {&logits}, [ln, rn, probs = std::move(probs), targets, T, V]() {
        const double g = rn->grad[0] / T;
        for (int t = 0; t < T; ++t) {
            const int tgt = targets[static_cast<size_t>(t)];
            for (int j = 0; j < V; ++j) {
                ln->grad[static_cast<size_t>(t) * V + j] +=
                    g * (probs[static_cast<size_t>(t) * V + j] - (j == tgt ? 1.0 : 0.0));
            }
        }
    });
    return r;
}

Tensor cosine(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.shape() != b.shape()) {
        shape_fail("cosine", a.shape(), b.shape());
    }
    double na = 0.0, nb = 0.0;
    for (double v : a.value()) na += v * v;
    for (double v : b.value()) nb += v * v;
    if (na < 1e-24 || nb < 1e-24) {
        throw NumericalError("cosine: zero-norm embedding");
    }
    Tensor num = dot(a, b);
    Tensor den = mul(sqrt_op(dot(a, a)), sqrt_op(dot(b, b)));
    return divide(num, den);
}

// ---- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractViolation("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    Tape* tape = Tape::current();
    if (!tape) throw ContractViolation("backward: no active computation record");
    if (tape->consumed_) {
        throw ContractViolation("backward: record already replayed once; rebuild the forward graph");
    }
    if (!loss.requires_grad() || loss.node()->tape_id != tape->id()) {
        throw ContractViolation("backward: loss was not produced under the active record");
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = tape->ops_.rbegin(); it != tape->ops_.rend(); ++it) (*it)();
    tape->consumed_ = true;
}

// ---- finite-difference gradient check --------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double rtol) {
    GradCheckReport rep;
    const auto shape = x.shape();
    const std::vector<double> x0 = x.value();

    std::vector<double> analytic;
    {
        Tape tape;
        Tensor xg = make_tensor(shape, x0);
        xg.set_requires_grad(true);
        Tensor y = f(xg);
        if (y.numel() != 1) {
            throw ContractViolation("grad_check: f must return a scalar");
        }
        if (!std::isfinite(y.item())) {
            rep.finite = false;
            rep.message = "non-finite value in f(x)";
            return rep;
        }
        backward(y);
        analytic = xg.grad();
    }

    auto eval_at = [&](const std::vector<double>& v) -> double {
        NoTape guard;
        Tensor xc = make_tensor(shape, v);
        return f(xc).item();
    };

    double max_rel = 0.0;
    std::vector<double> xv = x0;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double orig = xv[i];
        xv[i] = orig + step;
        const double fp = eval_at(xv);
        xv[i] = orig - step;
        const double fm = eval_at(xv);
        xv[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            rep.finite = false;
            rep.message = "non-finite value in finite-difference evaluation at coordinate " +
                          std::to_string(i);
            return rep;
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double an = analytic[i];
        // magnitudes below the absolute floor are treated as zero
        const double m = std::max(std::abs(an), std::abs(fd));
        if (m < 1e-8) continue;
        max_rel = std::max(max_rel, std::abs(an - fd) / m);
    }
    rep.max_relative_error = max_rel;
    rep.pass = max_rel < rtol;
    if (!rep.pass) rep.message = "max relative error " + std::to_string(max_rel);
    return rep;
}

GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor x, double step,
                                   double rtol) {
    GradCheckReport rep;
    if (!x.requires_grad()) {
        throw ContractViolation("grad_check_inplace: x must require gradients");
    }
    std::vector<double> analytic;
    {
        Tape tape;
        x.zero_grad();
        Tensor y = f();
        if (y.numel() != 1) throw ContractViolation("grad_check_inplace: f must return a scalar");
        if (!std::isfinite(y.item())) {
            rep.finite = false;
            rep.message = "non-finite value in f()";
            return rep;
        }
        backward(y);
        analytic = x.grad();
        x.zero_grad();
    }

    double max_rel = 0.0;
    auto& xv = x.mutable_value();
    for (size_t i = 0; i < xv.size(); ++i) {
        const double orig = xv[i];
        double fp, fm;
        {
            NoTape guard;
            xv[i] = orig + step;
            fp = f().item();
            xv[i] = orig - step;
            fm = f().item();
            xv[i] = orig;
        }
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            rep.finite = false;
            rep.message = "non-finite value in finite-difference evaluation at coordinate " +
                          std::to_string(i);
            return rep;
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double an = analytic[i];
        const double m = std::max(std::abs(an), std::abs(fd));
        if (m < 1e-8) continue;
        max_rel = std::max(max_rel, std::abs(an - fd) / m);
    }
    rep.max_relative_error = max_rel;
    rep.pass = max_rel < rtol;
    if (!rep.pass) rep.message = "max relative error " + std::to_string(max_rel);
    return rep;
}

}  // namespace mfc::num
