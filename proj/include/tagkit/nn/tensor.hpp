#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tagkit/rng.hpp"

// Dense tensor core with reverse-mode differentiation. Tensors are handles to
// graph nodes; every operation records provenance so backward() can push
// gradients to all reachable leaves. Values are 64-bit floats; shapes are
// (rows x cols) with vectors stored as single-row matrices.

namespace tagkit::nn {

extern "C" void openblas_set_num_threads(int) __attribute__((weak));

inline void pin_blas_threads() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (openblas_set_num_threads) openblas_set_num_threads(1);
    });
}

struct TensorNode {
    std::size_t rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;

    std::size_t size() const { return rows * cols; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false) {
        if (values.size() != rows * cols)
            throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                        " != " + std::to_string(rows) + "x" + std::to_string(cols));
        auto n = std::make_shared<TensorNode>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return Tensor(std::move(n));
    }

    static Tensor row(std::vector<double> values, bool requires_grad = false) {
        std::size_t n = values.size();
        return matrix(1, n, std::move(values), requires_grad);
    }

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return matrix(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }

    static Tensor scalar(double v) { return matrix(1, 1, {v}); }

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const {
        if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
        return node_->value[0];
    }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

[[noreturn]] inline void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(op + ": incompatible shapes (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ") vs (" + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
}

inline void check_finite(const TensorNode& n, const char* op) {
#ifndef NDEBUG
    for (double v : n.value)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value after op ") + op);
#else
    (void)n;
    (void)op;
#endif
}

inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                          std::vector<std::shared_ptr<TensorNode>> parents, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->ensure_grad();
        n->parents = std::move(parents);
    }
    check_finite(*n, op);
    return Tensor(std::move(n));
}

// C (m x n) += op(A) * op(B), row-major; leading dimensions are those of the
// stored matrices.
inline void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     double beta) {
    pin_blas_threads();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
                c, static_cast<int>(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and shape ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("add", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()}, "add");
    if (out.requires_grad()) {
        auto an = a.node().get(), bn = b.node().get(), on = out.node().get();
        out.node()->backprop = [an, bn, on] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
        };
    }
    return out;
}

// a (m x n) + b (1 x n), b broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || a.cols() != b.cols()) detail::shape_error("add_rowvec", a, b);
    std::vector<double> v(a.size());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            v[r * a.cols() + c] = a.values()[r * a.cols() + c] + b.values()[c];
    Tensor out =
        detail::make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()}, "add_rowvec");
    if (out.requires_grad()) {
        auto an = a.node().get(), bn = b.node().get(), on = out.node().get();
        out.node()->backprop = [an, bn, on] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (std::size_t r = 0; r < on->rows; ++r)
                    for (std::size_t c = 0; c < on->cols; ++c)
                        bn->grad[c] += on->grad[r * on->cols + c];
        };
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("mul", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()}, "mul");
    if (out.requires_grad()) {
        auto an = a.node().get(), bn = b.node().get(), on = out.node().get();
        out.node()->backprop = [an, bn, on] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->value[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->value[i];
        };
    }
    return out;
}

// alpha * a + beta, elementwise.
inline Tensor affine(const Tensor& a, double alpha, double beta) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * a.values()[i] + beta;
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "affine");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on, alpha] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += alpha * on->grad[i];
        };
    }
    return out;
}

// Each row scaled by a fixed per-row factor (factors are constants, not
// differentiated through).
inline Tensor scale_rows(const Tensor& a, const std::vector<double>& factors) {
    if (factors.size() != a.rows())
        throw std::invalid_argument("scale_rows: factor count != rows");
    std::vector<double> v(a.size());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            v[r * a.cols() + c] = a.values()[r * a.cols() + c] * factors[r];
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "scale_rows");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        auto f = std::make_shared<std::vector<double>>(factors);
        out.node()->backprop = [an, on, f] {
            for (std::size_t r = 0; r < on->rows; ++r)
                for (std::size_t c = 0; c < on->cols; ++c)
                    an->grad[r * on->cols + c] += on->grad[r * on->cols + c] * (*f)[r];
        };
    }
    return out;
}

inline Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size())
        throw std::invalid_argument("reshape: size mismatch for " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    Tensor out = detail::make_result(rows, cols, a.values(), {a.node()}, "reshape");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        };
    }
    return out;
}

inline Tensor tanh(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.values()[i]);
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "tanh");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] * (1.0 - on->value[i] * on->value[i]);
        };
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a.values()[i];
        v[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "sigmoid");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] * on->value[i] * (1.0 - on->value[i]);
        };
    }
    return out;
}

// Exact GELU (erf form); smooth, so finite-difference checks behave.
inline Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a.values()[i];
        v[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "gelu");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double x = an->value[i];
                double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                double density = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                an->grad[i] += on->grad[i] * (phi + x * density);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(m * n, 0.0);
    detail::gemm_acc(false, false, m, n, k, a.values().data(), k, b.values().data(), n, v.data(),
                     0.0);
    Tensor out = detail::make_result(m, n, std::move(v), {a.node(), b.node()}, "matmul");
    if (out.requires_grad()) {
        auto an = a.node().get(), bn = b.node().get(), on = out.node().get();
        out.node()->backprop = [an, bn, on, m, n, k] {
            if (an->requires_grad)  // dA += G * B^T
                detail::gemm_acc(false, true, m, k, n, on->grad.data(), n, bn->value.data(), n,
                                 an->grad.data(), 1.0);
            if (bn->requires_grad)  // dB += A^T * G
                detail::gemm_acc(true, false, k, n, m, an->value.data(), k, on->grad.data(), n,
                                 bn->grad.data(), 1.0);
        };
    }
    return out;
}

// a (m x k) * b^T where b is (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) detail::shape_error("matmul_nt", a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> v(m * n, 0.0);
    detail::gemm_acc(false, true, m, n, k, a.values().data(), k, b.values().data(), k, v.data(),
                     0.0);
    Tensor out = detail::make_result(m, n, std::move(v), {a.node(), b.node()}, "matmul_nt");
    if (out.requires_grad()) {
        auto an = a.node().get(), bn = b.node().get(), on = out.node().get();
        out.node()->backprop = [an, bn, on, m, n, k] {
            if (an->requires_grad)  // dA += G * B
                detail::gemm_acc(false, false, m, k, n, on->grad.data(), n, bn->value.data(), k,
                                 an->grad.data(), 1.0);
            if (bn->requires_grad)  // dB += G^T * A
                detail::gemm_acc(true, false, n, k, m, on->grad.data(), n, an->value.data(), k,
                                 bn->grad.data(), 1.0);
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions, softmax, normalization
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = detail::make_result(1, 1, {s}, {a.node()}, "sum_all");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
        };
    }
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor out = detail::make_result(1, 1, {s * inv}, {a.node()}, "mean_all");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on, inv] {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0] * inv;
        };
    }
    return out;
}

// (m x n) -> (1 x n), mean over rows.
inline Tensor mean_rows(const Tensor& a) {
    std::vector<double> v(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) v[c] += a.values()[r * a.cols() + c];
    const double inv = 1.0 / static_cast<double>(a.rows());
    for (double& x : v) x *= inv;
    Tensor out = detail::make_result(1, a.cols(), std::move(v), {a.node()}, "mean_rows");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on, inv] {
            for (std::size_t r = 0; r < an->rows; ++r)
                for (std::size_t c = 0; c < an->cols; ++c)
                    an->grad[r * an->cols + c] += on->grad[c] * inv;
        };
    }
    return out;
}

// Row-wise softmax. When col_valid is non-empty, invalid columns are excluded
// (their output is exactly 0).
inline Tensor softmax_rows(const Tensor& a, const std::vector<char>& col_valid = {}) {
    if (!col_valid.empty() && col_valid.size() != a.cols())
        throw std::invalid_argument("softmax_rows: mask length != cols");
    std::vector<double> v(a.size(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* in = a.values().data() + r * a.cols();
        double* out_row = v.data() + r * a.cols();
        double mx = -1e300;
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (col_valid.empty() || col_valid[c]) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            if (col_valid.empty() || col_valid[c]) {
                out_row[c] = std::exp(in[c] - mx);
                sum += out_row[c];
            }
        }
        for (std::size_t c = 0; c < a.cols(); ++c) out_row[c] /= sum;
    }
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "softmax_rows");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on] {
            for (std::size_t r = 0; r < on->rows; ++r) {
                const double* s = on->value.data() + r * on->cols;
                const double* g = on->grad.data() + r * on->cols;
                double dot = 0.0;
                for (std::size_t c = 0; c < on->cols; ++c) dot += g[c] * s[c];
                for (std::size_t c = 0; c < on->cols; ++c)
                    an->grad[r * on->cols + c] += s[c] * (g[c] - dot);
            }
        };
    }
    return out;
}

// Per-row layer normalization with learned gain/bias (1 x n).
inline Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    if (gain.rows() != 1 || gain.cols() != a.cols()) detail::shape_error("layer_norm gain", a, gain);
    if (bias.rows() != 1 || bias.cols() != a.cols()) detail::shape_error("layer_norm bias", a, bias);
    const std::size_t n = a.cols();
    std::vector<double> v(a.size()), xhat(a.size()), inv_std(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* in = a.values().data() + r * n;
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += in[c];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<double>(n);
        double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (std::size_t c = 0; c < n; ++c) {
            double xh = (in[c] - mean) * istd;
            xhat[r * n + c] = xh;
            v[r * n + c] = xh * gain.values()[c] + bias.values()[c];
        }
    }
    Tensor out = detail::make_result(a.rows(), n, std::move(v),
                                     {a.node(), gain.node(), bias.node()}, "layer_norm");
    if (out.requires_grad()) {
        auto an = a.node().get(), gn = gain.node().get(), bn = bias.node().get(),
             on = out.node().get();
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
        out.node()->backprop = [an, gn, bn, on, xh, istd] {
            const std::size_t n = on->cols;
            for (std::size_t r = 0; r < on->rows; ++r) {
                const double* g = on->grad.data() + r * n;
                const double* x = xh->data() + r * n;
                double mean_dxhat = 0.0, mean_dxhat_x = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    double dxhat = g[c] * gn->value[c];
                    mean_dxhat += dxhat;
                    mean_dxhat_x += dxhat * x[c];
                    if (gn->requires_grad) gn->grad[c] += g[c] * x[c];
                    if (bn->requires_grad) bn->grad[c] += g[c];
                }
                mean_dxhat /= static_cast<double>(n);
                mean_dxhat_x /= static_cast<double>(n);
                if (an->requires_grad) {
                    for (std::size_t c = 0; c < n; ++c) {
                        double dxhat = g[c] * gn->value[c];
                        an->grad[r * n + c] +=
                            (dxhat - mean_dxhat - x[c] * mean_dxhat_x) * (*istd)[r];
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather / scatter / concat
// ---------------------------------------------------------------------------

// Rows of `table` selected by ids -> (|ids| x cols). Also serves as the
// embedding lookup.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    const std::size_t n = table.cols();
    std::vector<double> v(ids.size() * n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows()) throw std::out_of_range("gather_rows: id out of range");
        std::copy_n(table.values().data() + ids[i] * n, n, v.data() + i * n);
    }
    Tensor out = detail::make_result(ids.size(), n, std::move(v), {table.node()}, "gather_rows");
    if (out.requires_grad()) {
        auto tn = table.node().get(), on = out.node().get();
        auto idx = std::make_shared<std::vector<std::size_t>>(ids);
        out.node()->backprop = [tn, on, idx] {
            const std::size_t n = on->cols;
            for (std::size_t i = 0; i < idx->size(); ++i)
                for (std::size_t c = 0; c < n; ++c)
                    tn->grad[(*idx)[i] * n + c] += on->grad[i * n + c];
        };
    }
    return out;
}

// (E x d) rows accumulated into (n_rows x d) at positions dst.
inline Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& dst,
                               std::size_t n_rows) {
    if (dst.size() != x.rows()) throw std::invalid_argument("scatter_add_rows: |dst| != rows");
    const std::size_t n = x.cols();
    std::vector<double> v(n_rows * n, 0.0);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i] >= n_rows) throw std::out_of_range("scatter_add_rows: dst out of range");
        for (std::size_t c = 0; c < n; ++c) v[dst[i] * n + c] += x.values()[i * n + c];
    }
    Tensor out = detail::make_result(n_rows, n, std::move(v), {x.node()}, "scatter_add_rows");
    if (out.requires_grad()) {
        auto xn = x.node().get(), on = out.node().get();
        auto idx = std::make_shared<std::vector<std::size_t>>(dst);
        out.node()->backprop = [xn, on, idx] {
            const std::size_t n = on->cols;
            for (std::size_t i = 0; i < idx->size(); ++i)
                for (std::size_t c = 0; c < n; ++c)
                    xn->grad[i * n + c] += on->grad[(*idx)[i] * n + c];
        };
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    std::size_t rows = parts[0].rows(), total = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) detail::shape_error("concat_cols", parts[0], p);
        total += p.cols();
    }
    std::vector<double> v(rows * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.values().data() + r * p.cols(), p.cols(), v.data() + r * total + off);
        off += p.cols();
    }
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    Tensor out = detail::make_result(rows, total, std::move(v), std::move(parents), "concat_cols");
    if (out.requires_grad()) {
        auto on = out.node().get();
        std::vector<TensorNode*> raw;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            raw.push_back(p.node().get());
            widths.push_back(p.cols());
        }
        out.node()->backprop = [on, raw, widths] {
            std::size_t off = 0;
            for (std::size_t k = 0; k < raw.size(); ++k) {
                if (raw[k]->requires_grad)
                    for (std::size_t r = 0; r < on->rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                            raw[k]->grad[r * widths[k] + c] += on->grad[r * on->cols + off + c];
                off += widths[k];
            }
        };
    }
    return out;
}

inline Tensor stack_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_rows: empty input");
    std::size_t cols = parts[0].cols(), rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) detail::shape_error("stack_rows", parts[0], p);
        rows += p.rows();
    }
    std::vector<double> v;
    v.reserve(rows * cols);
    for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    Tensor out = detail::make_result(rows, cols, std::move(v), std::move(parents), "stack_rows");
    if (out.requires_grad()) {
        auto on = out.node().get();
        std::vector<TensorNode*> raw;
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) {
            raw.push_back(p.node().get());
            sizes.push_back(p.size());
        }
        out.node()->backprop = [on, raw, sizes] {
            std::size_t off = 0;
            for (std::size_t k = 0; k < raw.size(); ++k) {
                if (raw[k]->requires_grad)
                    for (std::size_t i = 0; i < sizes[k]; ++i) raw[k]->grad[i] += on->grad[off + i];
                off += sizes[k];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout and loss
// ---------------------------------------------------------------------------

// Train mode: each element zeroed independently with probability rate,
// survivors scaled by 1/(1-rate). Eval mode (or rate 0): identity.
inline Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) {
        Tensor out = detail::make_result(a.rows(), a.cols(), a.values(), {a.node()}, "dropout");
        if (out.requires_grad()) {
            auto an = a.node().get(), on = out.node().get();
            out.node()->backprop = [an, on] {
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            };
        }
        return out;
    }
    const double scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(a.size());
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        (*mask)[i] = rng.next_double() < rate ? 0.0 : scale;
        v[i] = a.values()[i] * (*mask)[i];
    }
    Tensor out = detail::make_result(a.rows(), a.cols(), std::move(v), {a.node()}, "dropout");
    if (out.requires_grad()) {
        auto an = a.node().get(), on = out.node().get();
        out.node()->backprop = [an, on, mask] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] * (*mask)[i];
        };
    }
    return out;
}

inline constexpr double kBceEps = 1e-7;

// Mean binary cross-entropy over all entries; probabilities clamped to
// [eps, 1-eps] with eps = 1e-7.
inline Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels) {
    if (labels.size() != probs.size())
        throw std::invalid_argument("bce_loss: " + std::to_string(probs.size()) +
                                    " probabilities vs " + std::to_string(labels.size()) +
                                    " labels");
    constexpr double kEps = kBceEps;
    const double inv = 1.0 / static_cast<double>(labels.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double p = std::clamp(probs.values()[i], kEps, 1.0 - kEps);
        loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    Tensor out = detail::make_result(1, 1, {loss * inv}, {probs.node()}, "bce_loss");
    if (out.requires_grad()) {
        auto pn = probs.node().get(), on = out.node().get();
        auto y = std::make_shared<std::vector<double>>(labels);
        out.node()->backprop = [pn, on, y, inv] {
            for (std::size_t i = 0; i < y->size(); ++i) {
                double p = pn->value[i];
                if (p <= kBceEps || p >= 1.0 - kBceEps) continue;  // flat in the clamped region
                pn->grad[i] += on->grad[0] * inv * (-(*y)[i] / p + (1.0 - (*y)[i]) / (1.0 - p));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable leaf with requires_grad; the recorded graph is cleared afterwards.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::logic_error("backward: loss must be scalar");
    auto root = loss.node();
    if (root->backward_done)
        throw std::logic_error("backward called twice without a new forward pass");
    if (!root->requires_grad) {
        root->backward_done = true;
        return;  // loss does not depend on any parameter
    }

    // iterative topological order
    std::vector<TensorNode*> order;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{root.get(), 0}};
    std::unordered_set<TensorNode*> visited{root.get()};
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            TensorNode* parent = node->parents[next_child++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();

    for (TensorNode* n : order) {
        if (n->parents.empty()) continue;  // leaf parameters keep their gradients
        n->parents.clear();
        n->backprop = nullptr;
        n->backward_done = true;
    }
    root->backward_done = true;
}

}  // namespace tagkit::nn
