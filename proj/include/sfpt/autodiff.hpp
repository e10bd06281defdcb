#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. Every value is a 2-D tensor; scalars are 1x1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include "sfpt/error.hpp"

namespace sfpt::ad {

using SparseOp = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const noexcept { return value.size(); }
    bool is_leaf() const noexcept { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

namespace detail {
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }
    static Tensor full(std::size_t rows, std::size_t cols, double v, bool requires_grad = false) {
        return from(rows, cols, std::vector<double>(rows * cols, v), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
        if (data.size() != rows * cols) throw DimensionError("data length does not match shape");
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    template <typename Derived>
    static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
        std::vector<double> data(static_cast<std::size_t>(m.rows() * m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
        return from(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                    std::move(data), requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& mutable_data() { return node_->value; }
    double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const {
        if (size() != 1) throw DimensionError("item() needs a 1x1 tensor");
        return node_->value[0];
    }

    /// Gradient buffer; zeros when nothing has been accumulated yet.
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    ConstMatrixMap matrix() const {
        return ConstMatrixMap(node_->value.data(), static_cast<Eigen::Index>(rows()),
                              static_cast<Eigen::Index>(cols()));
    }

    /// Same values, cut from the graph.
    Tensor detach() const { return from(rows(), cols(), data(), false); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()) + ")");
    }
}

/// Creates an op result. The backward closure is dropped when no input
/// needs a gradient or recording is disabled.
inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        for (auto& t : inputs) n->parents.push_back(t.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor(std::move(n));
}

inline Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

inline MatrixMap map(std::vector<double>& v, std::size_t r, std::size_t c) {
    return MatrixMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline ConstMatrixMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
    return ConstMatrixMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [deriv](Node& self) {
        Node& pa = parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            pa.grad[i] += self.grad[i] * deriv(pa.value[i], self.value[i]);
        }
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& in = detail::parent(self, p);
            if (!in.requires_grad) continue;
            in.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& in = detail::parent(self, p);
            if (!in.requires_grad) continue;
            in.ensure_grad();
            const double sign = p == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += sign * self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor abs(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Tensor leaky_relu(const Tensor& a, double alpha = 0.2) {
    return detail::unary(
        a, [alpha](double x) { return x > 0 ? x : alpha * x; },
        [alpha](double x, double) { return x > 0 ? 1.0 : alpha; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor sqrt(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// Gradient passes where lo <= x <= hi.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Broadcasting

/// a (N×C) + row (1×C) added to every row.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: need 1xC row");
    std::vector<double> out(a.size());
    const std::size_t c = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] + row.data()[j];
    return detail::make_result(a.rows(), c, std::move(out), {a, row}, [c](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pr = detail::parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t i = 0; i < self.rows; ++i)
                for (std::size_t j = 0; j < c; ++j) pr.grad[j] += self.grad[i * c + j];
        }
    });
}

/// a (N×C) scaled row-wise by col (N×1).
inline Tensor mul_col(const Tensor& a, const Tensor& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw DimensionError("mul_col: need Nx1 column");
    const std::size_t c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] * col.data()[i];
    return detail::make_result(a.rows(), c, std::move(out), {a, col}, [c](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pc = detail::parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.rows; ++i)
                for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[i * c + j] * pc.value[i];
        }
        if (pc.requires_grad) {
            pc.ensure_grad();
            for (std::size_t i = 0; i < self.rows; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < c; ++j) s += self.grad[i * c + j] * pa.value[i * c + j];
                pc.grad[i] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    detail::map(out, m, n).noalias() = detail::cmap(a.data(), m, k) * detail::cmap(b.data(), k, n);
    return detail::make_result(m, n, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        const auto g = detail::cmap(self.grad, m, n);
        if (pa.requires_grad) {
            pa.ensure_grad();
            detail::map(pa.grad, m, k).noalias() += g * detail::cmap(pb.value, k, n).transpose();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            detail::map(pb.grad, k, n).noalias() += detail::cmap(pa.value, m, k).transpose() * g;
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    detail::map(out, c, r) = detail::cmap(a.data(), r, c).transpose();
    return detail::make_result(c, r, std::move(out), {a}, [r, c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        detail::map(pa.grad, r, c) += detail::cmap(self.grad, c, r).transpose();
    });
}

/// S·x with a constant sparse left factor.
inline Tensor sparse_matmul(std::shared_ptr<const SparseOp> s, const Tensor& x) {
    if (static_cast<std::size_t>(s->cols()) != x.rows()) throw DimensionError("sparse_matmul: size mismatch");
    const std::size_t m = static_cast<std::size_t>(s->rows()), k = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    detail::map(out, m, n).noalias() = (*s) * detail::cmap(x.data(), k, n);
    return detail::make_result(m, n, std::move(out), {x}, [s, m, k, n](Node& self) {
        Node& px = detail::parent(self, 0);
        if (!px.requires_grad) return;
        px.ensure_grad();
        detail::map(px.grad, k, n).noalias() += s->transpose() * detail::cmap(self.grad, m, n);
    });
}

inline Tensor sparse_matmul(const SparseOp& s, const Tensor& x) {
    return sparse_matmul(std::make_shared<const SparseOp>(s), x);
}

// ---------------------------------------------------------------------------
// Structure

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    const std::size_t r = parts.front().rows();
    std::vector<std::size_t> offsets;
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        offsets.push_back(c);
        c += p.cols();
    }
    std::vector<double> out(r * c);
    for (std::size_t t = 0; t < parts.size(); ++t) {
        const std::size_t pc = parts[t].cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(parts[t].data().begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                        out.begin() + static_cast<std::ptrdiff_t>(i * c + offsets[t]));
    }
    return detail::make_result(r, c, std::move(out), parts, [offsets, c](Node& self) {
        for (std::size_t t = 0; t < self.parents.size(); ++t) {
            Node& p = detail::parent(self, t);
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < self.rows; ++i)
                for (std::size_t j = 0; j < p.cols; ++j) p.grad[i * p.cols + j] += self.grad[i * c + offsets[t] + j];
        }
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        offsets.push_back(r);
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return detail::make_result(r, c, std::move(out), parts, [offsets, c](Node& self) {
        for (std::size_t t = 0; t < self.parents.size(); ++t) {
            Node& p = detail::parent(self, t);
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const std::size_t base = offsets[t] * c;
            for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[base + i];
        }
    });
}

/// Columns [begin, end).
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols()) throw DimensionError("slice_cols: range out of bounds");
    const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * c + begin + j];
    return detail::make_result(r, w, std::move(out), {a}, [begin, c, w](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i)
            for (std::size_t j = 0; j < w; ++j) pa.grad[i * c + begin + j] += self.grad[i * w + j];
    });
}

/// Rows [begin, end).
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw DimensionError("slice_rows: range out of bounds");
    const std::size_t c = a.cols();
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                            a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
    return detail::make_result(end - begin, c, std::move(out), {a}, [begin, c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[begin * c + i] += self.grad[i];
    });
}

/// Row selection out[r] = a[index[r]]; repeated indices allowed.
inline Tensor gather_rows(const Tensor& a, std::vector<int> index) {
    const std::size_t c = a.cols();
    std::vector<double> out(index.size() * c);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= a.rows())
            throw DimensionError("gather_rows: index out of range");
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(index[r]) * c), c,
                    out.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    const std::size_t n = index.size();
    return detail::make_result(n, c, std::move(out), {a},
                               [index = std::move(index), c](Node& self) {
                                   Node& pa = detail::parent(self, 0);
                                   if (!pa.requires_grad) return;
                                   pa.ensure_grad();
                                   for (std::size_t r = 0; r < index.size(); ++r)
                                       for (std::size_t j = 0; j < c; ++j)
                                           pa.grad[static_cast<std::size_t>(index[r]) * c + j] += self.grad[r * c + j];
                               });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    return detail::make_result(1, 1, {s}, {a}, [](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (double& g : pa.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// N×C -> N×1.
inline Tensor sum_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += a.data()[i * c + j];
    return detail::make_result(r, 1, std::move(out), {a}, [c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i)
            for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[i];
    });
}

/// N×C -> 1×C.
inline Tensor sum_cols(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
    return detail::make_result(1, c, std::move(out), {a}, [r, c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j];
    });
}

/// Euclidean norm of each row, N×C -> N×1. The gradient at a zero row is 0.
inline Tensor norm_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += a.data()[i * c + j] * a.data()[i * c + j];
        out[i] = std::sqrt(s);
    }
    return detail::make_result(r, 1, std::move(out), {a}, [c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i) {
            if (self.value[i] == 0.0) continue;
            const double f = self.grad[i] / self.value[i];
            for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += f * pa.value[i * c + j];
        }
    });
}

/// Rows scaled to unit length; rows with norm <= eps map to zero.
inline Tensor normalize_rows(const Tensor& a, double eps = 1e-12) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size(), 0.0);
    std::vector<double> norms(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += a.data()[i * c + j] * a.data()[i * c + j];
        norms[i] = std::sqrt(s);
        if (norms[i] > eps)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] / norms[i];
    }
    return detail::make_result(r, c, std::move(out), {a}, [c, norms = std::move(norms), eps](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i) {
            if (norms[i] <= eps) continue;
            double dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                pa.grad[i * c + j] += (self.grad[i * c + j] - dot * self.value[i * c + j]) / norms[i];
        }
    });
}

inline Tensor softmax_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    if (c == 0) throw DimensionError("softmax over empty rows");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = a.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    return detail::make_result(r, c, std::move(out), {a}, [c](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i) {
            double dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                pa.grad[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Small per-row 3-D geometry

/// Row-wise cross product of two N×3 tensors.
inline Tensor cross_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != 3) throw DimensionError("cross_rows: need Nx3");
    detail::check_same_shape(a, b, "cross_rows");
    const std::size_t r = a.rows();
    std::vector<double> out(r * 3);
    auto cross = [](const double* x, const double* y, double* z) {
        z[0] = x[1] * y[2] - x[2] * y[1];
        z[1] = x[2] * y[0] - x[0] * y[2];
        z[2] = x[0] * y[1] - x[1] * y[0];
    };
    for (std::size_t i = 0; i < r; ++i) cross(&a.data()[i * 3], &b.data()[i * 3], &out[i * 3]);
    return detail::make_result(r, 3, std::move(out), {a, b}, [cross](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        double tmp[3];
        // d(a×b) = da×b + a×db  =>  ga = b×g, gb = g×a
        for (std::size_t i = 0; i < self.rows; ++i) {
            const double* g = &self.grad[i * 3];
            if (pa.requires_grad) {
                pa.ensure_grad();
                cross(&pb.value[i * 3], g, tmp);
                for (int j = 0; j < 3; ++j) pa.grad[i * 3 + static_cast<std::size_t>(j)] += tmp[j];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                cross(g, &pa.value[i * 3], tmp);
                for (int j = 0; j < 3; ++j) pb.grad[i * 3 + static_cast<std::size_t>(j)] += tmp[j];
            }
        }
    });
}

/// Row-wise outer products: out[i] = vec(a_i b_iᵀ), N×3, N×3 -> N×9.
inline Tensor outer_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != 3) throw DimensionError("outer_rows: need Nx3");
    detail::check_same_shape(a, b, "outer_rows");
    const std::size_t r = a.rows();
    std::vector<double> out(r * 9);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < 3; ++p)
            for (std::size_t q = 0; q < 3; ++q) out[i * 9 + p * 3 + q] = a.data()[i * 3 + p] * b.data()[i * 3 + q];
    return detail::make_result(r, 9, std::move(out), {a, b}, [](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i)
            for (std::size_t p = 0; p < 3; ++p)
                for (std::size_t q = 0; q < 3; ++q) {
                    const double g = self.grad[i * 9 + p * 3 + q];
                    if (pa.requires_grad) pa.grad[i * 3 + p] += g * pb.value[i * 3 + q];
                    if (pb.requires_grad) pb.grad[i * 3 + q] += g * pa.value[i * 3 + p];
                }
    });
}

/// Row-wise matrix-vector products: out[i] = M_i x_i with M_i the row-major
/// 3×3 stored in row i of m (N×9), x N×3.
inline Tensor apply_rows(const Tensor& m, const Tensor& x) {
    if (m.cols() != 9 || x.cols() != 3 || m.rows() != x.rows()) throw DimensionError("apply_rows: need Nx9, Nx3");
    const std::size_t r = m.rows();
    std::vector<double> out(r * 3, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < 3; ++p)
            for (std::size_t q = 0; q < 3; ++q) out[i * 3 + p] += m.data()[i * 9 + p * 3 + q] * x.data()[i * 3 + q];
    return detail::make_result(r, 3, std::move(out), {m, x}, [](Node& self) {
        Node& pm = detail::parent(self, 0);
        Node& px = detail::parent(self, 1);
        if (pm.requires_grad) pm.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i)
            for (std::size_t p = 0; p < 3; ++p) {
                const double g = self.grad[i * 3 + p];
                for (std::size_t q = 0; q < 3; ++q) {
                    if (pm.requires_grad) pm.grad[i * 9 + p * 3 + q] += g * px.value[i * 3 + q];
                    if (px.requires_grad) px.grad[i * 3 + q] += g * pm.value[i * 9 + p * 3 + q];
                }
            }
    });
}

/// Row-wise 3×3 products of row-major matrices: out[i] = A_i B_i.
inline Tensor matmul_rows3(const Tensor& a, const Tensor& b) {
    if (a.cols() != 9) throw DimensionError("matmul_rows3: need Kx9");
    detail::check_same_shape(a, b, "matmul_rows3");
    using M3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
    const std::size_t r = a.rows();
    std::vector<double> out(r * 9);
    for (std::size_t i = 0; i < r; ++i) {
        Eigen::Map<M3> o(&out[i * 9]);
        o = Eigen::Map<const M3>(&a.data()[i * 9]) * Eigen::Map<const M3>(&b.data()[i * 9]);
    }
    return detail::make_result(r, 9, std::move(out), {a, b}, [](Node& self) {
        Node& pa = detail::parent(self, 0);
        Node& pb = detail::parent(self, 1);
        for (std::size_t i = 0; i < self.rows; ++i) {
            const Eigen::Map<const M3> g(&self.grad[i * 9]);
            if (pa.requires_grad) {
                pa.ensure_grad();
                Eigen::Map<M3>(&pa.grad[i * 9]) += g * Eigen::Map<const M3>(&pb.value[i * 9]).transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                Eigen::Map<M3>(&pb.grad[i * 9]) += Eigen::Map<const M3>(&pa.value[i * 9]).transpose() * g;
            }
        }
    });
}

/// Proper polar factor of every row (row-major 3×3): the rotation R in SO(3)
/// maximizing <R, A>_F. With A = U Σ Vᵀ and the sign fix D, R = U D Vᵀ.
/// Backward uses dR = U' Ω Vᵀ, Ω_ij = (Y_ij - Y_ji) / (σ'_i + σ'_j).
inline Tensor proper_polar_rows(const Tensor& a) {
    if (a.cols() != 9) throw DimensionError("proper_polar_rows: need Kx9");
    using M3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
    const std::size_t r = a.rows();
    struct Factor {
        Eigen::Matrix3d u;  // sign-corrected
        Eigen::Matrix3d v;
        Eigen::Vector3d s;  // sign-corrected
        bool valid;
    };
    std::vector<Factor> factors(r);
    std::vector<double> out(r * 9);
    for (std::size_t i = 0; i < r; ++i) {
        const Eigen::Matrix3d m = Eigen::Map<const M3>(&a.data()[i * 9]);
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Factor f{svd.matrixU(), svd.matrixV(), svd.singularValues(), svd.singularValues()(0) > 1e-300};
        if (!f.valid) {
            Eigen::Map<M3>(&out[i * 9]).setIdentity();
            factors[i] = f;
            continue;
        }
        if ((f.u * f.v.transpose()).determinant() < 0) {
            f.u.col(2) *= -1.0;
            f.s(2) *= -1.0;
        }
        Eigen::Map<M3> o(&out[i * 9]);
        o = f.u * f.v.transpose();
        factors[i] = f;
    }
    return detail::make_result(r, 9, std::move(out), {a}, [factors = std::move(factors)](Node& self) {
        Node& pa = detail::parent(self, 0);
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i) {
            const Factor& f = factors[i];
            if (!f.valid) continue;
            const Eigen::Matrix3d g = Eigen::Map<const M3>(&self.grad[i * 9]);
            const Eigen::Matrix3d gamma = f.u.transpose() * g * f.v;
            Eigen::Matrix3d psi = Eigen::Matrix3d::Zero();
            for (int p = 0; p < 3; ++p)
                for (int q = 0; q < 3; ++q) {
                    if (p == q) continue;
                    double denom = f.s(p) + f.s(q);
                    if (std::abs(denom) < 1e-12) denom = denom < 0 ? -1e-12 : 1e-12;
                    psi(p, q) = (gamma(p, q) - gamma(q, p)) / denom;
                }
            Eigen::Map<M3>(&pa.grad[i * 9]) += f.u * psi * f.v.transpose();
        }
    });
}

// ---------------------------------------------------------------------------
// Backpropagation

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
/// Intermediate gradients are rebuilt from zero on each call.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw DimensionError("backward needs a scalar loss");
    if (!loss.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS yields a topological order (parents first).
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    }
    Node* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradcheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_near_kink = 0;
    bool passed = true;

    bool near_kink() const noexcept { return skipped_near_kink > 0; }
};

struct GradcheckOptions {
    double eps = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor: error = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-3;
    /// One-sided slopes differing by more than this (relative) mark a kink.
    double kink_threshold = 1e-2;
    /// Upper bound on checked coordinates per tensor (0 = all).
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

/// Checks the analytic gradient of the scalar `f()` with respect to every
/// tensor in `inputs`. `f` must rebuild its graph from the current values of
/// the inputs on each call. Inputs are restored on return.
inline GradcheckReport gradcheck_inputs(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                        const GradcheckOptions& opt = {}) {
    std::vector<bool> previous;
    for (auto& t : inputs) {
        previous.push_back(t.requires_grad());
        t.node()->requires_grad = true;
        t.zero_grad();
    }
    {
        Tensor loss = f();
        backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.push_back(t.grad());

    GradcheckReport rep;
    std::mt19937_64 rng(opt.seed);
    auto eval = [&]() {
        NoGradGuard ng;
        return f().item();
    };
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& vals = inputs[ti].mutable_data();
        std::vector<std::size_t> coords(vals.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_tensor);
        }
        for (std::size_t idx : coords) {
            const double orig = vals[idx];
            vals[idx] = orig + opt.eps;
            const double fp = eval();
            vals[idx] = orig - opt.eps;
            const double fm = eval();
            vals[idx] = orig;
            const double f0 = eval();
            const double fwd = (fp - f0) / opt.eps;
            const double bwd = (f0 - fm) / opt.eps;
            const double scale_k = std::max({1.0, std::abs(fwd), std::abs(bwd)});
            if (std::abs(fwd - bwd) > opt.kink_threshold * scale_k) {
                ++rep.skipped_near_kink;
                continue;
            }
            const double numeric = (fp - fm) / (2 * opt.eps);
            const double a = analytic[ti][idx];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.floor});
            rep.max_absolute_error = std::max(rep.max_absolute_error, abs_err);
            rep.max_relative_error = std::max(rep.max_relative_error, rel);
            ++rep.checked;
        }
    }
    rep.passed = rep.max_relative_error < opt.tolerance;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        inputs[ti].zero_grad();
        inputs[ti].node()->requires_grad = previous[ti];
    }
    return rep;
}

/// Single-input form: f maps x to a scalar.
inline GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                 double eps = 1e-5, double tol = 1e-4) {
    Tensor leaf = Tensor::from(x.rows(), x.cols(), x.data(), true);
    GradcheckOptions opt;
    opt.eps = eps;
    opt.tolerance = tol;
    return gradcheck_inputs([&] { return f(leaf); }, {leaf}, opt);
}

}  // namespace sfpt::ad
