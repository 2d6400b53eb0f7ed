#pragma once

// Dense f64 tensor with reverse-mode gradients recorded on an explicit tape.
// Tensors are immutable values after construction except for their grad slot.
// One tape per worker thread; backward replay is strictly reverse execution
// order, which keeps gradients bit-identical between runs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace m2da {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
public:
    Tensor() : d_(std::make_shared<Data>()) {}

    Tensor(Shape shape, std::vector<double> values) : d_(std::make_shared<Data>()) {
        if (numel(shape) != values.size()) {
            throw std::invalid_argument("Tensor: shape does not match value count");
        }
        d_->shape = std::move(shape);
        d_->v = std::move(values);
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(Shape shape, double value) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t size() const { return d_->v.size(); }

    const std::vector<double>& values() const { return d_->v; }
    std::vector<double>& values() { return d_->v; }
    const double* data() const { return d_->v.data(); }
    double* data() { return d_->v.data(); }

    double item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return d_->v[0];
    }

    double at(std::size_t i) const { return d_->v[i]; }
    double at(std::size_t i, std::size_t j) const { return d_->v[i * dim(1) + j]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return d_->v[(i * dim(1) + j) * dim(2) + k];
    }

    bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

    // Grad slot, lazily allocated to zeros of the same extent.
    std::vector<double>& grad() {
        if (d_->g.size() != d_->v.size()) d_->g.assign(d_->v.size(), 0.0);
        return d_->g;
    }
    const std::vector<double>& grad() const {
        if (d_->g.size() != d_->v.size()) d_->g.assign(d_->v.size(), 0.0);
        return d_->g;
    }
    bool has_grad() const { return d_->g.size() == d_->v.size(); }
    void zero_grad() { d_->g.assign(d_->v.size(), 0.0); }

    // Identity of the underlying storage; two handles to the same tensor compare equal.
    const void* id() const { return d_.get(); }

    bool all_finite() const {
        for (double x : d_->v)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    struct Data {
        Shape shape;
        std::vector<double> v;
        mutable std::vector<double> g;
    };
    std::shared_ptr<Data> d_;
};

// Ordered record of executed ops. backward() visits each node exactly once,
// in reverse execution order. Tensors appearing on the tape but unreachable
// from the loss simply keep their zeroed grads.
class Tape {
public:
    void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> pull) {
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(pull)});
    }

    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
        for (auto& n : nodes_) {
            for (auto& t : n.in) t.zero_grad();
            n.out.zero_grad();
        }
        Tensor l = loss;
        l.grad()[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
    }

    std::size_t num_ops() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        std::vector<Tensor> in;
        Tensor out;
        std::function<void()> pull;
    };
    std::vector<Node> nodes_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) + b.at(i);
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i];
                cb.grad()[i] += co.grad()[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) - b.at(i);
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i];
                cb.grad()[i] -= co.grad()[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) * b.at(i);
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i] * cb.at(i);
                cb.grad()[i] += co.grad()[i] * ca.at(i);
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) / b.at(i);
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i] / cb.at(i);
                cb.grad()[i] -= co.grad()[i] * ca.at(i) / (cb.at(i) * cb.at(i));
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) * c;
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, c]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) ca.grad()[i] += co.grad()[i] * c;
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) + c;
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) ca.grad()[i] += co.grad()[i];
        });
    }
    return out;
}

// Broadcast a 1-element tensor across all entries of a.
inline Tensor sub_scalar_t(const Tensor& a, const Tensor& s, Tape* tape = nullptr) {
    if (s.size() != 1) throw std::invalid_argument("sub_scalar_t: s must be scalar");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) - s.at(0);
    if (tape) {
        Tensor ca = a, cs = s, co = out;
        tape->record({a, s}, out, [ca, cs, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i];
                cs.grad()[0] -= co.grad()[i];
            }
        });
    }
    return out;
}

inline Tensor div_scalar_t(const Tensor& a, const Tensor& s, Tape* tape = nullptr) {
    if (s.size() != 1) throw std::invalid_argument("div_scalar_t: s must be scalar");
    double sv = s.at(0);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) / sv;
    if (tape) {
        Tensor ca = a, cs = s, co = out;
        tape->record({a, s}, out, [ca, cs, co, sv]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                ca.grad()[i] += co.grad()[i] / sv;
                cs.grad()[0] -= co.grad()[i] * ca.at(i) / (sv * sv);
            }
        });
    }
    return out;
}

inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i)
                if (ca.at(i) > 0.0) ca.grad()[i] += co.grad()[i];
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a.at(i);
        out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                 : std::exp(x) / (1.0 + std::exp(x));
    }
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                double y = co.at(i);
                ca.grad()[i] += co.grad()[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

inline Tensor tanh_op(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::tanh(a.at(i));
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                double y = co.at(i);
                ca.grad()[i] += co.grad()[i] * (1.0 - y * y);
            }
        });
    }
    return out;
}

inline Tensor abs_op(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::abs(a.at(i));
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                double s = ca.at(i) > 0.0 ? 1.0 : (ca.at(i) < 0.0 ? -1.0 : 0.0);
                ca.grad()[i] += co.grad()[i] * s;
            }
        });
    }
    return out;
}

inline Tensor log_op(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::log(a.at(i));
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) ca.grad()[i] += co.grad()[i] / ca.at(i);
        });
    }
    return out;
}

inline Tensor sqrt_op(const Tensor& a, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::sqrt(a.at(i));
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i)
                ca.grad()[i] += co.grad()[i] * 0.5 / co.at(i);
        });
    }
    return out;
}

// min(a, b) elementwise; ties route the gradient to a.
inline Tensor min_op(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "min_op");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::min(a.at(i), b.at(i));
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                if (ca.at(i) <= cb.at(i)) ca.grad()[i] += co.grad()[i];
                else cb.grad()[i] += co.grad()[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    Tensor out = Tensor::scalar(acc);
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < ca.size(); ++i) ca.grad()[i] += co.grad()[0];
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a, Tape* tape = nullptr) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    double n = static_cast<double>(a.size());
    Tensor out = Tensor::scalar(acc / n);
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, n]() mutable {
            for (std::size_t i = 0; i < ca.size(); ++i) ca.grad()[i] += co.grad()[0] / n;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr) {
    if (numel(shape) != a.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), a.values());
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) ca.grad()[i] += co.grad()[i];
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a, Tape* tape = nullptr) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: 2D only");
    std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.at(i, j);
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, m, n]() mutable {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ca.grad()[i * n + j] += co.grad()[j * m + i];
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    if (cols == 0) throw std::invalid_argument("concat_rows: 2D parts required");
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols)
            throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, cols});
    std::size_t r = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.size(), out.data() + r * cols);
        r += p.dim(0);
    }
    if (tape) {
        std::vector<Tensor> cp = parts;
        Tensor co = out;
        tape->record(parts, out, [cp, co, cols]() mutable {
            std::size_t r = 0;
            for (auto& p : cp) {
                for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] += co.grad()[r * cols + i];
                r += p.dim(0);
            }
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1, Tape* tape = nullptr) {
    if (a.rank() != 2 || r1 > a.dim(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    std::size_t cols = a.dim(1);
    Tensor out = Tensor::zeros({r1 - r0, cols});
    std::copy(a.data() + r0 * cols, a.data() + r1 * cols, out.data());
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, r0, cols]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) ca.grad()[r0 * cols + i] += co.grad()[i];
        });
    }
    return out;
}

// [C,H,W] feature map to [H*W, C] token matrix, row-major over (h, w).
inline Tensor tokens_from_chw(const Tensor& a, Tape* tape = nullptr) {
    if (a.rank() != 3) throw std::invalid_argument("tokens_from_chw: 3D input required");
    std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
    Tensor out = Tensor::zeros({h * w, c});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < h * w; ++p) out.data()[p * c + ci] = a.data()[ci * h * w + p];
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, c, h, w]() mutable {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t p = 0; p < h * w; ++p)
                    ca.grad()[ci * h * w + p] += co.grad()[p * c + ci];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n], ikj order.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                        std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B[k x n]^T
inline void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                        std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner extents do not match");
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
    if (tape) {
        Tensor ca = a, cb = b, co = out;
        tape->record({a, b}, out, [ca, cb, co, m, k, n]() mutable {
            detail::gemm_nt_acc(co.grad().data(), cb.data(), ca.grad().data(), m, n, k);
            detail::gemm_tn_acc(ca.data(), co.grad().data(), cb.grad().data(), m, k, n);
        });
    }
    return out;
}

// out[i,:] = a[i,:] + v  (row-broadcast add, used for biases and embeddings)
inline Tensor add_rowvec(const Tensor& a, const Tensor& v, Tape* tape = nullptr) {
    if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(1))
        throw std::invalid_argument("add_rowvec: shape mismatch");
    std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = a.at(i, j) + v.at(j);
    if (tape) {
        Tensor ca = a, cv = v, co = out;
        tape->record({a, v}, out, [ca, cv, co, m, n]() mutable {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    ca.grad()[i * n + j] += co.grad()[i * n + j];
                    cv.grad()[j] += co.grad()[i * n + j];
                }
        });
    }
    return out;
}

// out[i,:] = a[i,:] * s[i]  (per-row scaling; s is a length-m vector)
inline Tensor scale_rows(const Tensor& a, const Tensor& s, Tape* tape = nullptr) {
    if (a.rank() != 2 || s.rank() != 1 || s.dim(0) != a.dim(0))
        throw std::invalid_argument("scale_rows: shape mismatch");
    std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = a.at(i, j) * s.at(i);
    if (tape) {
        Tensor ca = a, cs = s, co = out;
        tape->record({a, s}, out, [ca, cs, co, m, n]() mutable {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    ca.grad()[i * n + j] += co.grad()[i * n + j] * cs.at(i);
                    cs.grad()[i] += co.grad()[i * n + j] * ca.at(i, j);
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and attention building blocks
// ---------------------------------------------------------------------------

// Softmax over the last axis (1D vectors or 2D rows), max-subtracted.
inline Tensor softmax(const Tensor& a, Tape* tape = nullptr) {
    if (a.rank() != 1 && a.rank() != 2) throw std::invalid_argument("softmax: rank 1 or 2 only");
    std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
    std::size_t n = a.rank() == 2 ? a.dim(1) : a.dim(0);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data() + i * n;
        double* y = out.data() + i * n;
        double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, rows, n]() mutable {
            for (std::size_t i = 0; i < rows; ++i) {
                const double* y = co.data() + i * n;
                const double* gy = co.grad().data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
                for (std::size_t j = 0; j < n; ++j) ca.grad()[i * n + j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// Layer normalization over the last axis with affine gain/bias.
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5, Tape* tape = nullptr) {
    if (a.rank() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
    std::size_t n = a.dim(a.rank() - 1);
    if (gain.size() != n || bias.size() != n)
        throw std::invalid_argument("layer_norm: gain/bias extent mismatch");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    std::size_t rows = a.size() / n;
    Tensor out = Tensor::zeros(a.shape());
    std::vector<double> inv_sigma(rows), xhat(a.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += x[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            double xh = (x[j] - mu) * is;
            xhat[i * n + j] = xh;
            out.data()[i * n + j] = xh * gain.at(j) + bias.at(j);
        }
    }
    if (tape) {
        Tensor ca = a, cg = gain, cb = bias, co = out;
        tape->record({a, gain, bias}, out, [ca, cg, cb, co, rows, n, inv_sigma, xhat]() mutable {
            for (std::size_t i = 0; i < rows; ++i) {
                const double* gy = co.grad().data() + i * n;
                const double* xh = xhat.data() + i * n;
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    double gj = gy[j] * cg.at(j);
                    mean_g += gj;
                    mean_gx += gj * xh[j];
                    cg.grad()[j] += gy[j] * xh[j];
                    cb.grad()[j] += gy[j];
                }
                mean_g /= static_cast<double>(n);
                mean_gx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double gj = gy[j] * cg.at(j);
                    ca.grad()[i * n + j] += inv_sigma[i] * (gj - mean_g - xh[j] * mean_gx);
                }
            }
        });
    }
    return out;
}

// Channel-wise mean over spatial dims: [C,H,W] -> [C].
inline Tensor global_avg_pool(const Tensor& a, Tape* tape = nullptr) {
    if (a.rank() != 3) throw std::invalid_argument("global_avg_pool: [C,H,W] input required");
    std::size_t c = a.dim(0), hw = a.dim(1) * a.dim(2);
    Tensor out = Tensor::zeros({c});
    for (std::size_t ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += a.data()[ci * hw + p];
        out.data()[ci] = acc / static_cast<double>(hw);
    }
    if (tape) {
        Tensor ca = a, co = out;
        tape->record({a}, out, [ca, co, c, hw]() mutable {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t p = 0; p < hw; ++p)
                    ca.grad()[ci * hw + p] += co.grad()[ci] / static_cast<double>(hw);
        });
    }
    return out;
}

// softmax(q k^T / sqrt(scale_dim)) v
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::size_t scale_dim, Tape* tape = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
        k.dim(0) != v.dim(0))
        throw std::invalid_argument("scaled_dot_attention: dimension mismatch");
    Tensor logits = scale(matmul(q, transpose(k, tape), tape),
                          1.0 / std::sqrt(static_cast<double>(scale_dim)), tape);
    return matmul(softmax(logits, tape), v, tape);
}

// ---------------------------------------------------------------------------
// Convolution / pooling / resampling (the small set the toy encoders need)
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1,
                     std::size_t pad = 0, Tape* tape = nullptr) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || b.size() != w.dim(0))
        throw std::invalid_argument("conv2d: shape mismatch");
    std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (h + 2 * pad < kh || wd + 2 * pad < kw) throw std::invalid_argument("conv2d: kernel too big");
    std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out = Tensor::zeros({cout, ho, wo});
    auto run = [=](const double* xd, const double* wdta, const double* bd, double* od) {
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    double acc = bd[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                    static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                acc += xd[(ci * h + iy) * wd + ix] *
                                       wdta[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    od[(co * ho + oy) * wo + ox] = acc;
                }
    };
    run(x.data(), w.data(), b.data(), out.data());
    if (tape) {
        Tensor cx = x, cw = w, cb = b, co = out;
        tape->record({x, w, b}, out, [cx, cw, cb, co, cin, h, wd, cout, kh, kw, ho, wo, stride,
                                      pad]() mutable {
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        double g = co.grad()[(c * ho + oy) * wo + ox];
                        if (g == 0.0) continue;
                        cb.grad()[c] += g;
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                    static_cast<std::ptrdiff_t>(pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                    cx.grad()[(ci * h + iy) * wd + ix] +=
                                        g * cw.at((((c * cin + ci) * kh + ky) * kw + kx));
                                    cw.grad()[((c * cin + ci) * kh + ky) * kw + kx] +=
                                        g * cx.at((ci * h + iy) * wd + ix);
                                }
                            }
                    }
        });
    }
    return out;
}

inline Tensor avg_pool2d(const Tensor& x, std::size_t k, Tape* tape = nullptr) {
    if (x.rank() != 3 || x.dim(1) % k != 0 || x.dim(2) % k != 0)
        throw std::invalid_argument("avg_pool2d: extent not divisible by window");
    std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / k, wo = w / k;
    Tensor out = Tensor::zeros({c, ho, wo});
    double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < k; ++dy)
                    for (std::size_t dx = 0; dx < k; ++dx)
                        acc += x.at((ci * h + oy * k + dy) * w + ox * k + dx);
                out.data()[(ci * ho + oy) * wo + ox] = acc * inv;
            }
    if (tape) {
        Tensor cx = x, co = out;
        tape->record({x}, out, [cx, co, c, h, w, ho, wo, k, inv]() mutable {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        double g = co.grad()[(ci * ho + oy) * wo + ox] * inv;
                        for (std::size_t dy = 0; dy < k; ++dy)
                            for (std::size_t dx = 0; dx < k; ++dx)
                                cx.grad()[(ci * h + oy * k + dy) * w + ox * k + dx] += g;
                    }
        });
    }
    return out;
}

inline Tensor upsample_nearest(const Tensor& x, std::size_t ho, std::size_t wo,
                               Tape* tape = nullptr) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_nearest: [C,H,W] input required");
    std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = Tensor::zeros({c, ho, wo});
    std::vector<std::size_t> src((std::size_t)ho * wo);
    for (std::size_t oy = 0; oy < ho; ++oy) {
        std::size_t iy = std::min(h - 1, oy * h / ho);
        for (std::size_t ox = 0; ox < wo; ++ox) {
            std::size_t ix = std::min(w - 1, ox * w / wo);
            src[oy * wo + ox] = iy * w + ix;
        }
    }
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < ho * wo; ++p)
            out.data()[ci * ho * wo + p] = x.data()[ci * h * w + src[p]];
    if (tape) {
        Tensor cx = x, co = out;
        tape->record({x}, out, [cx, co, c, h, w, ho, wo, src]() mutable {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t p = 0; p < ho * wo; ++p)
                    cx.grad()[ci * h * w + src[p]] += co.grad()[ci * ho * wo + p];
        });
    }
    return out;
}

// Half-sample symmetric (reflective) padding for a 2D map.
inline Tensor pad_symmetric(const Tensor& x, std::size_t r, Tape* tape = nullptr) {
    if (x.rank() != 2) throw std::invalid_argument("pad_symmetric: 2D input required");
    std::size_t h = x.dim(0), w = x.dim(1);
    if (r >= h || r >= w) throw std::invalid_argument("pad_symmetric: radius too large");
    auto fold = [](std::ptrdiff_t i, std::size_t n) -> std::size_t {
        if (i < 0) i = -i - 1;
        if (i >= static_cast<std::ptrdiff_t>(n)) i = 2 * static_cast<std::ptrdiff_t>(n) - i - 1;
        return static_cast<std::size_t>(i);
    };
    std::size_t ho = h + 2 * r, wo = w + 2 * r;
    Tensor out = Tensor::zeros({ho, wo});
    std::vector<std::size_t> src(ho * wo);
    for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
            std::size_t iy = fold(static_cast<std::ptrdiff_t>(oy) - static_cast<std::ptrdiff_t>(r), h);
            std::size_t ix = fold(static_cast<std::ptrdiff_t>(ox) - static_cast<std::ptrdiff_t>(r), w);
            src[oy * wo + ox] = iy * w + ix;
        }
    for (std::size_t p = 0; p < ho * wo; ++p) out.data()[p] = x.data()[src[p]];
    if (tape) {
        Tensor cx = x, co = out;
        tape->record({x}, out, [cx, co, src]() mutable {
            for (std::size_t p = 0; p < co.size(); ++p) cx.grad()[src[p]] += co.grad()[p];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses-level primitives
// ---------------------------------------------------------------------------

// Elementwise binary cross-entropy with clamping; gradient is zero where the
// prediction is clamped.
inline Tensor bce(const Tensor& p, const Tensor& t, double clamp_eps = 1e-7,
                  Tape* tape = nullptr) {
    detail::check_same_shape(p, t, "bce");
    Tensor out = Tensor::zeros(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pc = std::clamp(p.at(i), clamp_eps, 1.0 - clamp_eps);
        out.data()[i] = -(t.at(i) * std::log(pc) + (1.0 - t.at(i)) * std::log(1.0 - pc));
    }
    if (tape) {
        Tensor cp = p, ct = t, co = out;
        tape->record({p, t}, out, [cp, ct, co, clamp_eps]() mutable {
            for (std::size_t i = 0; i < co.size(); ++i) {
                double pv = cp.at(i);
                if (pv <= clamp_eps || pv >= 1.0 - clamp_eps) continue;
                cp.grad()[i] += co.grad()[i] * (pv - ct.at(i)) / (pv * (1.0 - pv));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// f must be a pure scalar-valued function of x, evaluable with or without a
// tape. Returns the max over coordinates of |analytic - numeric| relative to
// the gradient's overall scale (its max-magnitude component), with central
// differences of step h. Scaling by the per-coordinate magnitude instead
// would let central-difference roundoff (~eps*|f|/h) dominate wherever a
// single component happens to pass through zero.
inline double finite_diff_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                                const Tensor& x, double h = 1e-5) {
    Tape tape;
    Tensor x0(x.shape(), x.values());
    Tensor y = f(x0, &tape);
    tape.backward(y);
    std::vector<double> analytic = x0.grad();

    std::vector<double> numeric(x.size());
    double scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp(x.shape(), x.values());
        Tensor xm(x.shape(), x.values());
        xp.data()[i] += h;
        xm.data()[i] -= h;
        numeric[i] = (f(xp, nullptr).item() - f(xm, nullptr).item()) / (2.0 * h);
        scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[i])});
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (scale + 1e-8));
    return worst;
}

// ---------------------------------------------------------------------------
// Deterministic RNG (Box-Muller over mt19937_64, portable across stdlibs)
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t next_u64() { return gen_(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    Tensor normal_tensor(Shape shape, double stdev = 1.0, double mean_v = 0.0) {
        std::size_t n = numel(shape);
        std::vector<double> v(n);
        for (auto& x : v) x = mean_v + stdev * normal();
        return Tensor(std::move(shape), std::move(v));
    }

    Tensor uniform_tensor(Shape shape, double lo, double hi) {
        std::size_t n = numel(shape);
        std::vector<double> v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return Tensor(std::move(shape), std::move(v));
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace m2da
