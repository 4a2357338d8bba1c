#pragma once

#include <cmath>
#include <memory>

#include "veil/core/ops.hpp"

namespace veil::nn {

// Batch normalization over N,H,W per channel. In training mode the batch
// statistics are used and the running estimates (held by the layer) are
// updated in place; in eval mode the running estimates are used, which keeps
// per-image outputs independent of batch composition.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    const std::shared_ptr<Tensor<T>>& running_mean,
                    const std::shared_ptr<Tensor<T>>& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5) {
    check(x->value.rank() == 4, "batch_norm: expected NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    check(gamma->value.numel() == static_cast<std::size_t>(C) &&
              beta->value.numel() == static_cast<std::size_t>(C),
          "batch_norm: parameter size mismatch");
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    const std::size_t cnt = static_cast<std::size_t>(N) * HW;

    auto mean = std::make_shared<std::vector<T>>(C, T(0));
    auto inv_std = std::make_shared<std::vector<T>>(C, T(0));

    if (training) {
        check(cnt > 1, "batch_norm: training mode needs more than one value per channel");
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x->value.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(cnt);
            T v = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x->value.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const T d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(cnt);
            (*mean)[c] = m;
            (*inv_std)[c] = T(1) / std::sqrt(v + static_cast<T>(eps));
            const T unbiased = v * static_cast<T>(cnt) / static_cast<T>(cnt - 1);
            (*running_mean)[c] =
                static_cast<T>(1.0 - momentum) * (*running_mean)[c] + static_cast<T>(momentum) * m;
            (*running_var)[c] = static_cast<T>(1.0 - momentum) * (*running_var)[c] +
                                static_cast<T>(momentum) * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = (*running_mean)[c];
            (*inv_std)[c] = T(1) / std::sqrt((*running_var)[c] + static_cast<T>(eps));
        }
    }

    Tensor<T> out(x->value.shape());
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x->value.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            T* o = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            const T m = (*mean)[c], is = (*inv_std)[c];
            const T g = gamma->value[c], bt = beta->value[c];
            for (std::size_t i = 0; i < HW; ++i) o[i] = g * (p[i] - m) * is + bt;
        }

    auto bp = [N, C, HW, cnt, training, mean, inv_std](Node<T>& node) {
        auto& px = node.parents[0];
        auto& pg = node.parents[1];
        auto& pb = node.parents[2];
        const bool need_x = px->requires_grad;
        if (need_x) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();

        for (int c = 0; c < C; ++c) {
            const T m = (*mean)[c], is = (*inv_std)[c];
            const T gam = pg->value[c];
            // per-channel reductions
            T sum_g = 0, sum_g_xhat = 0;
            for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const T g = node.grad[off + i];
                    sum_g += g;
                    sum_g_xhat += g * (px->value[off + i] - m) * is;
                }
            }
            if (pg->requires_grad) pg->grad[c] += sum_g_xhat;
            if (pb->requires_grad) pb->grad[c] += sum_g;
            if (!need_x) continue;
            if (training) {
                const T inv_cnt = T(1) / static_cast<T>(cnt);
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        const T g = node.grad[off + i];
                        const T xhat = (px->value[off + i] - m) * is;
                        px->grad[off + i] +=
                            gam * is * (g - inv_cnt * sum_g - inv_cnt * xhat * sum_g_xhat);
                    }
                }
            } else {
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                        px->grad[off + i] += node.grad[off + i] * gam * is;
                }
            }
        }
    };
    return make_node<T>(std::move(out), {x, gamma, beta}, std::move(bp));
}

} // namespace veil::nn
