#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "jitter/rng.hpp"

namespace jitter {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor carrying an optional reverse-mode closure. The graph
// is rebuilt dynamically on every forward pass and freed when the root dies.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same size as data once touched
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backprop;

    std::size_t size() const { return data.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return data.size() == 1; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline TensorPtr tensor(std::vector<int> shape, std::vector<double> data,
                        bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr scalar(double v) { return tensor({1}, {v}); }

inline TensorPtr zeros(std::vector<int> shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline TensorPtr full(std::vector<int> shape, double v, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

inline TensorPtr randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                       bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& v : d) v = stddev * rng.gauss();
    return tensor(std::move(shape), std::move(d), requires_grad);
}

// Global switch for graph recording; off for teacher/eval forwards.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = saved; }
};

inline void check_finite(const Tensor& t, const char* op) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
    }
}

namespace detail {

inline bool track(const std::vector<TensorPtr>& parents) {
    if (!grad_mode()) return false;
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

inline void attach(const TensorPtr& out, std::vector<TensorPtr> parents,
                   std::function<void(Tensor&)> fn) {
    if (!track(parents)) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = zeros({m, n});
    const double* A = a->data.data();
    const double* B = b->data.data();
    double* C = out->data.data();
    for (int i = 0; i < m; ++i) {
        const double* Ai = A + static_cast<std::size_t>(i) * k;
        double* Ci = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = Ai[p];
            const double* Bp = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += av * Bp[j];
        }
    }
    detail::attach(out, {a, b}, [m, k, n](Tensor& o) {
        auto& a_ = *o.parents[0];
        auto& b_ = *o.parents[1];
        const double* G = o.grad.data();
        if (a_.requires_grad) {
            a_.ensure_grad();
            // dA = G * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0;
                    const double* Gi = G + static_cast<std::size_t>(i) * n;
                    const double* Bp = b_.data.data() + static_cast<std::size_t>(p) * n;
                    for (int j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                    a_.grad[static_cast<std::size_t>(i) * k + p] += s;
                }
        }
        if (b_.requires_grad) {
            b_.ensure_grad();
            // dB = A^T * G
            for (int p = 0; p < k; ++p) {
                double* dBp = b_.grad.data() + static_cast<std::size_t>(p) * n;
                for (int i = 0; i < m; ++i) {
                    const double av = a_.data[static_cast<std::size_t>(i) * k + p];
                    const double* Gi = G + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) dBp[j] += av * Gi[j];
                }
            }
        }
    });
    return out;
}

inline TensorPtr transpose(const TensorPtr& a) {
    if (a->shape.size() != 2) throw ShapeError("transpose: rank-2 required");
    const int m = a->shape[0], n = a->shape[1];
    auto out = zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<std::size_t>(j) * m + i] =
                a->data[static_cast<std::size_t>(i) * n + j];
    detail::attach(out, {a}, [m, n](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a_.grad[static_cast<std::size_t>(i) * n + j] +=
                    o.grad[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

inline void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    detail::attach(out, {a, b}, [](Tensor& o) {
        for (auto& p : o.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
        }
    });
    return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    detail::attach(out, {a, b}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        auto& b_ = *o.parents[1];
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a_.grad[i] += o.grad[i];
        }
        if (b_.requires_grad) {
            b_.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) b_.grad[i] -= o.grad[i];
        }
    });
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    detail::attach(out, {a, b}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        auto& b_ = *o.parents[1];
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a_.grad[i] += o.grad[i] * b_.data[i];
        }
        if (b_.requires_grad) {
            b_.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) b_.grad[i] += o.grad[i] * a_.data[i];
        }
    });
    return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * s;
    detail::attach(out, {a}, [s](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a_.grad[i] += o.grad[i] * s;
    });
    return out;
}

// matrix (m x n) plus row vector (n), broadcast over rows; the only
// broadcasting form supported.
inline TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    if (a->shape.size() != 2 || static_cast<int>(v->size()) != a->shape[1])
        throw ShapeError("add_rowvec: " + shape_str(a->shape) + " vs " + shape_str(v->shape));
    const int m = a->shape[0], n = a->shape[1];
    auto out = zeros(a->shape);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<std::size_t>(i) * n + j] =
                a->data[static_cast<std::size_t>(i) * n + j] + v->data[static_cast<std::size_t>(j)];
    detail::attach(out, {a, v}, [m, n](Tensor& o) {
        auto& a_ = *o.parents[0];
        auto& v_ = *o.parents[1];
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a_.grad[i] += o.grad[i];
        }
        if (v_.requires_grad) {
            v_.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    v_.grad[static_cast<std::size_t>(j)] +=
                        o.grad[static_cast<std::size_t>(i) * n + j];
        }
    });
    return out;
}

inline TensorPtr gelu(const TensorPtr& a) {
    check_finite(*a, "gelu");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        const double x = a->data[i];
        out->data[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        constexpr double inv_sqrt2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double x = a_.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a_.grad[i] += o.grad[i] * (cdf + x * pdf);
        }
    });
    return out;
}

inline TensorPtr sigmoid(const TensorPtr& a) {
    check_finite(*a, "sigmoid");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        const double x = a->data[i];
        out->data[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
    }
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double y = o.data[i];
            a_.grad[i] += o.grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

// softmax over the last axis, row by row
inline TensorPtr softmax(const TensorPtr& a) {
    check_finite(*a, "softmax");
    const int m = a->rows(), n = a->shape.empty() ? 1 : a->shape.back();
    const int rows_n = static_cast<int>(a->size()) / n;
    auto out = zeros(a->shape);
    for (int i = 0; i < rows_n; ++i) {
        const double* x = a->data.data() + static_cast<std::size_t>(i) * n;
        double* y = out->data.data() + static_cast<std::size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= z;
    }
    (void)m;
    detail::attach(out, {a}, [rows_n, n](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (int i = 0; i < rows_n; ++i) {
            const double* y = o.data.data() + static_cast<std::size_t>(i) * n;
            const double* g = o.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0;
            for (int j = 0; j < n; ++j) dot += y[j] * g[j];
            double* da = a_.grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) da[j] += y[j] * (g[j] - dot);
        }
    });
    return out;
}

// normalization over the last axis, epsilon 1e-5, no affine part
inline TensorPtr layer_norm(const TensorPtr& a) {
    check_finite(*a, "layer_norm");
    constexpr double eps = 1e-5;
    const int n = a->shape.empty() ? 1 : a->shape.back();
    const int rows_n = static_cast<int>(a->size()) / n;
    auto out = zeros(a->shape);
    std::vector<double> inv_std(static_cast<std::size_t>(rows_n));
    std::vector<double> means(static_cast<std::size_t>(rows_n));
    for (int i = 0; i < rows_n; ++i) {
        const double* x = a->data.data() + static_cast<std::size_t>(i) * n;
        double mu = 0;
        for (int j = 0; j < n; ++j) mu += x[j];
        mu /= n;
        double var = 0;
        for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        means[static_cast<std::size_t>(i)] = mu;
        inv_std[static_cast<std::size_t>(i)] = is;
        double* y = out->data.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) y[j] = (x[j] - mu) * is;
    }
    detail::attach(out, {a}, [rows_n, n, inv_std = std::move(inv_std)](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (int i = 0; i < rows_n; ++i) {
            const double* y = o.data.data() + static_cast<std::size_t>(i) * n;
            const double* g = o.grad.data() + static_cast<std::size_t>(i) * n;
            double* da = a_.grad.data() + static_cast<std::size_t>(i) * n;
            const double is = inv_std[static_cast<std::size_t>(i)];
            double gsum = 0, gysum = 0;
            for (int j = 0; j < n; ++j) {
                gsum += g[j];
                gysum += g[j] * y[j];
            }
            for (int j = 0; j < n; ++j)
                da[j] += is * (g[j] - gsum / n - y[j] * gysum / n);
        }
    });
    return out;
}

// y[i,j] = x[i,j] * gamma[j] + beta[j]
inline TensorPtr rowwise_affine(const TensorPtr& x, const TensorPtr& gamma,
                                const TensorPtr& beta) {
    if (x->shape.size() != 2 || static_cast<int>(gamma->size()) != x->shape[1] ||
        static_cast<int>(beta->size()) != x->shape[1])
        throw ShapeError("rowwise_affine: " + shape_str(x->shape));
    const int m = x->shape[0], n = x->shape[1];
    auto out = zeros(x->shape);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<std::size_t>(i) * n + j] =
                x->data[static_cast<std::size_t>(i) * n + j] * gamma->data[static_cast<std::size_t>(j)] +
                beta->data[static_cast<std::size_t>(j)];
    detail::attach(out, {x, gamma, beta}, [m, n](Tensor& o) {
        auto& x_ = *o.parents[0];
        auto& g_ = *o.parents[1];
        auto& b_ = *o.parents[2];
        if (x_.requires_grad) x_.ensure_grad();
        if (g_.requires_grad) g_.ensure_grad();
        if (b_.requires_grad) b_.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * n + j;
                const double go = o.grad[idx];
                if (x_.requires_grad) x_.grad[idx] += go * g_.data[static_cast<std::size_t>(j)];
                if (g_.requires_grad) g_.grad[static_cast<std::size_t>(j)] += go * x_.data[idx];
                if (b_.requires_grad) b_.grad[static_cast<std::size_t>(j)] += go;
            }
    });
    return out;
}

inline TensorPtr mean(const TensorPtr& a) {
    auto out = scalar(0.0);
    double s = 0;
    for (double v : a->data) s += v;
    out->data[0] = s / static_cast<double>(a->size());
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        const double g = o.grad[0] / static_cast<double>(a_.data.size());
        for (auto& v : a_.grad) v += g;
    });
    return out;
}

inline TensorPtr sum(const TensorPtr& a) {
    auto out = scalar(0.0);
    double s = 0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (auto& v : a_.grad) v += o.grad[0];
    });
    return out;
}

inline TensorPtr sum_sq(const TensorPtr& a) {
    auto out = scalar(0.0);
    double s = 0;
    for (double v : a->data) s += v * v;
    out->data[0] = s;
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (std::size_t i = 0; i < a_.grad.size(); ++i) a_.grad[i] += 2.0 * a_.data[i] * o.grad[0];
    });
    return out;
}

// sums over rows, producing a row vector (1 x n)
inline TensorPtr sum_rows(const TensorPtr& a) {
    if (a->shape.size() != 2) throw ShapeError("sum_rows: rank-2 required");
    const int m = a->shape[0], n = a->shape[1];
    auto out = zeros({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<std::size_t>(j)] += a->data[static_cast<std::size_t>(i) * n + j];
    detail::attach(out, {a}, [m, n](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a_.grad[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j)];
    });
    return out;
}

inline TensorPtr slice_cols(const TensorPtr& a, int c0, int c1) {
    if (a->shape.size() != 2 || c0 < 0 || c1 > a->shape[1] || c0 >= c1)
        throw ShapeError("slice_cols: bad range");
    const int m = a->shape[0], n = a->shape[1], w = c1 - c0;
    auto out = zeros({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out->data[static_cast<std::size_t>(i) * w + j] =
                a->data[static_cast<std::size_t>(i) * n + c0 + j];
    detail::attach(out, {a}, [m, n, w, c0](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                a_.grad[static_cast<std::size_t>(i) * n + c0 + j] +=
                    o.grad[static_cast<std::size_t>(i) * w + j];
    });
    return out;
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const int m = parts[0]->shape[0];
    int n = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != 2 || p->shape[0] != m) throw ShapeError("concat_cols: row mismatch");
        n += p->shape[1];
    }
    auto out = zeros({m, n});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out->data[static_cast<std::size_t>(i) * n + off + j] =
                    p->data[static_cast<std::size_t>(i) * w + j];
        off += w;
    }
    detail::attach(out, parts, [m, n](Tensor& o) {
        int off2 = 0;
        for (auto& p : o.parents) {
            const int w = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        p->grad[static_cast<std::size_t>(i) * w + j] +=
                            o.grad[static_cast<std::size_t>(i) * n + off2 + j];
            }
            off2 += w;
        }
    });
    return out;
}

// out.data[i] = x.data[idx[i]]; idx[i] == -1 reads zero (used for padding).
// Backward scatter-adds, so repeated indices accumulate.
inline TensorPtr gather(const TensorPtr& x, const std::vector<int>& idx,
                        std::vector<int> out_shape) {
    if (shape_numel(out_shape) != idx.size()) throw ShapeError("gather: index/shape mismatch");
    auto out = zeros(std::move(out_shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const int s = idx[i];
        if (s >= static_cast<int>(x->size())) throw ShapeError("gather: index out of range");
        out->data[i] = s < 0 ? 0.0 : x->data[static_cast<std::size_t>(s)];
    }
    detail::attach(out, {x}, [idx](Tensor& o) {
        auto& x_ = *o.parents[0];
        x_.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (idx[i] >= 0) x_.grad[static_cast<std::size_t>(idx[i])] += o.grad[i];
    });
    return out;
}

inline TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != a->size())
        throw ShapeError("reshape: numel mismatch " + shape_str(a->shape) + " -> " +
                         shape_str(new_shape));
    auto out = tensor(std::move(new_shape), a->data);
    detail::attach(out, {a}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        a_.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a_.grad[i] += o.grad[i];
    });
    return out;
}

// mean squared error over all entries
inline TensorPtr mse_mean(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mse_mean");
    auto out = scalar(0.0);
    double s = 0;
    for (std::size_t i = 0; i < a->size(); ++i) {
        const double d = a->data[i] - b->data[i];
        s += d * d;
    }
    out->data[0] = s / static_cast<double>(a->size());
    detail::attach(out, {a, b}, [](Tensor& o) {
        auto& a_ = *o.parents[0];
        auto& b_ = *o.parents[1];
        const double g = 2.0 * o.grad[0] / static_cast<double>(a_.data.size());
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < a_.grad.size(); ++i)
                a_.grad[i] += g * (a_.data[i] - b_.data[i]);
        }
        if (b_.requires_grad) {
            b_.ensure_grad();
            for (std::size_t i = 0; i < b_.grad.size(); ++i)
                b_.grad[i] -= g * (a_.data[i] - b_.data[i]);
        }
    });
    return out;
}

inline std::size_t& bce_clamp_count() {
    static std::size_t n = 0;
    return n;
}

// mean binary cross-entropy; probabilities clamped to [1e-7, 1-1e-7] with a
// counted warning (bce_clamp_count).
inline TensorPtr bce_mean(const TensorPtr& pred, const TensorPtr& target) {
    require_same_shape(pred, target, "bce_mean");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    auto out = scalar(0.0);
    double s = 0;
    std::vector<double> clamped(pred->size());
    for (std::size_t i = 0; i < pred->size(); ++i) {
        double p = pred->data[i];
        if (p < lo || p > hi) {
            ++bce_clamp_count();
            p = std::clamp(p, lo, hi);
        }
        clamped[i] = p;
        const double t = target->data[i];
        s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out->data[0] = s / static_cast<double>(pred->size());
    check_finite(*out, "bce_mean");
    detail::attach(out, {pred, target}, [clamped = std::move(clamped)](Tensor& o) {
        auto& p_ = *o.parents[0];
        auto& t_ = *o.parents[1];
        if (!p_.requires_grad) return;
        p_.ensure_grad();
        const double g = o.grad[0] / static_cast<double>(p_.data.size());
        for (std::size_t i = 0; i < p_.grad.size(); ++i) {
            const double p = clamped[i];
            const double t = t_.data[i];
            p_.grad[i] += g * (-t / p + (1.0 - t) / (1.0 - p));
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

inline void topo_collect(Tensor* t, std::unordered_set<Tensor*>& seen,
                         std::vector<Tensor*>& order) {
    // iterative DFS; graphs can be a few thousand nodes deep
    struct Frame {
        Tensor* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{t, 0}};
    seen.insert(t);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            Tensor* p = f.node->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
}

inline void backward(const TensorPtr& root) {
    if (!root->is_scalar()) throw ShapeError("backward: root must be scalar");
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> order;
    topo_collect(root.get(), seen, order);
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->backprop) {
            t->ensure_grad();
            t->backprop(*t);
        }
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient check
// ---------------------------------------------------------------------------

// max over coordinates of |analytic - central difference| / max(1, |analytic|)
inline double grad_check(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                         double step = 1e-5) {
    if (step < 1e-7 || step > 1e-3) throw std::invalid_argument("grad_check: step out of range");
    x->requires_grad = true;
    x->zero_grad();
    auto y = f(x);
    if (!y->is_scalar()) throw std::invalid_argument("grad_check: f must be scalar-valued");
    backward(y);
    std::vector<double> analytic = x->grad;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double saved = x->data[i];
        x->data[i] = saved + step;
        const double fp = f(x)->data[0];
        x->data[i] = saved - step;
        const double fm = f(x)->data[0];
        x->data[i] = saved;
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace jitter
