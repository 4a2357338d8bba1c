#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "veil/core/autodiff.hpp"

namespace veil::nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check(a->value.same_shape(b->value), "add: shape mismatch ", a->value.shape_str(), " vs ",
          b->value.shape_str());
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[k];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x *= static_cast<T>(c);
    return make_node<T>(std::move(out), {a}, [c](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            p->grad[i] += n.grad[i] * static_cast<T>(c);
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x += static_cast<T>(c);
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
    });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return mul_scalar(a, -1.0);
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x *= x;
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            p->grad[i] += T(2) * n.grad[i] * p->value[i];
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (const T x : a->value.vec()) s += x;
    return make_node<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const T g = n.grad[0];
        for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    check(a->value.numel() > 0, "mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    T s = 0;
    for (const T x : a->value.vec()) s += x;
    s = static_cast<T>(s * inv);
    return make_node<T>(Tensor<T>::scalar(s), {a}, [inv](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const T g = n.grad[0] * static_cast<T>(inv);
        for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = x > T(0) ? x : T(0);
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (p->value[i] > T(0)) p->grad[i] += n.grad[i];
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope = 0.2) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = x > T(0) ? x : static_cast<T>(slope) * x;
    return make_node<T>(std::move(out), {a}, [slope](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            p->grad[i] += p->value[i] > T(0) ? n.grad[i] : n.grad[i] * static_cast<T>(slope);
    });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = std::tanh(x);
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const T y = n.value[i];
            p->grad[i] += n.grad[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Var<T> sigmoid_op(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) {
        const T v = x;
        x = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const T y = n.value[i];
            p->grad[i] += n.grad[i] * y * (T(1) - y);
        }
    });
}

// Subgradient 0 outside [lo,hi], 1 inside (boundary counted as inside).
template <typename T>
Var<T> clamp_op(const Var<T>& a, double lo, double hi) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec())
        x = x < static_cast<T>(lo) ? static_cast<T>(lo)
                                   : (x > static_cast<T>(hi) ? static_cast<T>(hi) : x);
    return make_node<T>(std::move(out), {a}, [lo, hi](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const T v = p->value[i];
            if (v >= static_cast<T>(lo) && v <= static_cast<T>(hi)) p->grad[i] += n.grad[i];
        }
    });
}

// y[n,c,h,w] = scale[c] * x[n,c,h,w] + shift[c]; scale/shift are constants
// (used for value-range conversions and input normalization).
template <typename T>
Var<T> scale_shift_channels(const Var<T>& x, std::vector<double> scale,
                            std::vector<double> shift) {
    check(x->value.rank() == 4, "scale_shift_channels: expected NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1);
    const int HW = x->value.dim(2) * x->value.dim(3);
    check(static_cast<int>(scale.size()) == C && static_cast<int>(shift.size()) == C,
          "scale_shift_channels: per-channel parameter count mismatch");
    Tensor<T> out = x->value;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            const T a = static_cast<T>(scale[c]), b = static_cast<T>(shift[c]);
            for (int i = 0; i < HW; ++i) p[i] = a * p[i] + b;
        }
    return make_node<T>(std::move(out), {x}, [scale, C, HW](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const int N = p->value.dim(0);
        for (int in = 0; in < N; ++in)
            for (int c = 0; c < C; ++c) {
                const std::size_t off = (static_cast<std::size_t>(in) * C + c) * HW;
                const T a = static_cast<T>(scale[c]);
                for (int i = 0; i < HW; ++i) p->grad[off + i] += a * n.grad[off + i];
            }
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    check(a->value.rank() == 4 && b->value.rank() == 4, "concat: expected NCHW");
    const int N = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
    const int H = a->value.dim(2), W = a->value.dim(3);
    check(b->value.dim(0) == N && b->value.dim(2) == H && b->value.dim(3) == W,
          "concat: spatial/batch mismatch");
    Tensor<T> out({N, Ca + Cb, H, W});
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy_n(a->value.data() + n * Ca * hw, Ca * hw, out.data() + n * (Ca + Cb) * hw);
        std::copy_n(b->value.data() + n * Cb * hw, Cb * hw,
                    out.data() + n * (Ca + Cb) * hw + Ca * hw);
    }
    return make_node<T>(std::move(out), {a, b}, [Ca, Cb, hw](Node<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        const int N = n.value.dim(0);
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int in = 0; in < N; ++in) {
            const T* g = n.grad.data() + in * (Ca + Cb) * hw;
            if (pa->requires_grad) {
                T* ga = pa->grad.data() + in * Ca * hw;
                for (std::size_t i = 0; i < Ca * hw; ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                T* gb = pb->grad.data() + in * Cb * hw;
                for (std::size_t i = 0; i < Cb * hw; ++i) gb[i] += g[Ca * hw + i];
            }
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> new_shape) {
    Tensor<T> out = a->value.reshaped(std::move(new_shape));
    return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
    });
}

// X [m,k] * W [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& x, const Var<T>& w) {
    check(x->value.rank() == 2 && w->value.rank() == 2, "matmul: rank-2 operands required");
    const int m = x->value.dim(0), k = x->value.dim(1), n2 = w->value.dim(1);
    check(w->value.dim(0) == k, "matmul: inner dimension mismatch");
    Tensor<T> out({m, n2});
    ConstMatMap<T> X(x->value.data(), m, k), W(w->value.data(), k, n2);
    MatMap<T> O(out.data(), m, n2);
    O.noalias() = X * W;
    return make_node<T>(std::move(out), {x, w}, [m, k, n2](Node<T>& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        ConstMatMap<T> G(n.grad.data(), m, n2);
        ConstMatMap<T> X(px->value.data(), m, k), W(pw->value.data(), k, n2);
        if (px->requires_grad) {
            px->ensure_grad();
            MatMap<T> GX(px->grad.data(), m, k);
            GX.noalias() += G * W.transpose();
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            MatMap<T> GW(pw->grad.data(), k, n2);
            GW.noalias() += X.transpose() * G;
        }
    });
}

// X [m,n] + b [n] broadcast over rows
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    const int m = x->value.dim(0), n2 = x->value.dim(1);
    check(b->value.numel() == static_cast<std::size_t>(n2), "add_rowvec: bias size mismatch");
    Tensor<T> out = x->value;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n2; ++j) out[i * n2 + j] += b->value[j];
    return make_node<T>(std::move(out), {x, b}, [m, n2](Node<T>& n) {
        auto& px = n.parents[0];
        auto& pb = n.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) px->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n2; ++j) pb->grad[j] += n.grad[i * n2 + j];
        }
    });
}

// Numerically stable row-wise softmax (plain tensor helper).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const int m = logits.dim(0), c = logits.dim(1);
    Tensor<T> out = logits;
    for (int i = 0; i < m; ++i) {
        T* row = out.data() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (int j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (int j = 0; j < c; ++j) row[j] /= s;
    }
    return out;
}

// Mean cross entropy over the batch; labels are class indices.
template <typename T>
Var<T> softmax_cross_entropy_mean(const Var<T>& logits, const std::vector<int>& labels) {
    check(logits->value.rank() == 2, "cross_entropy: logits must be [N,C]");
    const int m = logits->value.dim(0), c = logits->value.dim(1);
    check(static_cast<int>(labels.size()) == m, "cross_entropy: label count mismatch");
    for (const int y : labels)
        check(y >= 0 && y < c, "cross_entropy: label ", y, " out of range [0,", c, ")");
    Tensor<T> probs = softmax_rows(logits->value);
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const T p = probs[static_cast<std::size_t>(i) * c + labels[i]];
        loss -= std::log(std::max(static_cast<double>(p), 1e-300));
    }
    loss /= m;
    return make_node<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                        [probs = std::move(probs), labels, m, c](Node<T>& n) {
                            auto& p = n.parents[0];
                            if (!p->requires_grad) return;
                            p->ensure_grad();
                            const T g = n.grad[0] / static_cast<T>(m);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < c; ++j) {
                                    T d = probs[static_cast<std::size_t>(i) * c + j];
                                    if (j == labels[i]) d -= T(1);
                                    p->grad[static_cast<std::size_t>(i) * c + j] += g * d;
                                }
                        });
}

// Mean binary cross entropy with logits against a constant target in {0,1}
// (or any value in [0,1]); stable softplus formulation.
template <typename T>
Var<T> bce_with_logits_mean(const Var<T>& logits, double target) {
    const std::size_t n = logits->value.numel();
    check(n > 0, "bce: empty batch");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(logits->value[i]);
        loss += std::max(x, 0.0) - target * x + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<double>(n);
    return make_node<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits}, [target, n](Node<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const T g = nd.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(p->value[i]);
            const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            p->grad[i] += g * static_cast<T>(s - target);
        }
    });
}

// mean((a-b)^2)
template <typename T>
Var<T> mse_mean(const Var<T>& a, const Var<T>& b) {
    return mean_all(square(sub(a, b)));
}

// mean((a-c)^2) against a scalar constant
template <typename T>
Var<T> mse_vs_const(const Var<T>& a, double c) {
    return mean_all(square(add_scalar(a, -c)));
}

} // namespace veil::nn
