#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "veil/core/ops.hpp"

namespace veil::nn {

namespace detail {

// cols is row-major [Cin*kh*kw, Ho*Wo]
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* cols) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) *
                                    (static_cast<std::size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = T(0);
                        continue;
                    }
                    const T* src_row = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, T* x_grad) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) *
                                          (static_cast<std::size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* dst_row = x_grad + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst_row[ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// 2-D convolution, NCHW. w is [Cout, Cin, kh, kw]; bias may be null.
// im2col + GEMM; the weight-gradient reduction runs over fixed-size image
// chunks so results do not depend on the number of worker threads.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = 0) {
    check(x->value.rank() == 4, "conv2d: input must be NCHW, got ", x->value.shape_str());
    check(w->value.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw]");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    const int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    check(w->value.dim(1) == C, "conv2d: channel mismatch: input ", C, ", weight ",
          w->value.dim(1));
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    check(Ho > 0 && Wo > 0, "conv2d: kernel larger than padded input");
    if (b) check(b->value.numel() == static_cast<std::size_t>(Cout), "conv2d: bias size");

    const int K = C * kh * kw;
    const std::size_t M = static_cast<std::size_t>(Ho) * Wo;
    Tensor<T> out({N, Cout, Ho, Wo});

#pragma omp parallel
    {
        std::vector<T> cols(static_cast<std::size_t>(K) * M);
#pragma omp for schedule(static)
        for (int n = 0; n < N; ++n) {
            detail::im2col(x->value.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, kh,
                           kw, stride, pad, Ho, Wo, cols.data());
            ConstMatMap<T> Wm(w->value.data(), Cout, K);
            ConstMatMap<T> Cm(cols.data(), K, static_cast<int>(M));
            MatMap<T> Om(out.data() + static_cast<std::size_t>(n) * Cout * M, Cout,
                         static_cast<int>(M));
            Om.noalias() = Wm * Cm;
            if (b) {
                for (int co = 0; co < Cout; ++co) {
                    T* row = out.data() + (static_cast<std::size_t>(n) * Cout + co) * M;
                    const T bias = b->value[co];
                    for (std::size_t i = 0; i < M; ++i) row[i] += bias;
                }
            }
        }
    }

    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    auto bp = [N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, M, has_bias = (b != nullptr)](
                  Node<T>& node) {
        auto& px = node.parents[0];
        auto& pw = node.parents[1];
        Var<T> pb = has_bias ? node.parents[2] : nullptr;
        const bool need_x = px->requires_grad;
        const bool need_w = pw->requires_grad;
        const bool need_b = pb && pb->requires_grad;
        if (need_x) px->ensure_grad();
        if (need_w) pw->ensure_grad();
        if (need_b) pb->ensure_grad();

        constexpr int kChunk = 8;
        const int n_chunks = (N + kChunk - 1) / kChunk;
        std::vector<std::vector<T>> wg_chunks, bg_chunks;
        if (need_w) wg_chunks.assign(n_chunks, std::vector<T>(static_cast<std::size_t>(Cout) * K, T(0)));
        if (need_b) bg_chunks.assign(n_chunks, std::vector<T>(Cout, T(0)));

#pragma omp parallel
        {
            std::vector<T> cols(static_cast<std::size_t>(K) * M);
            std::vector<T> dcols(need_x ? static_cast<std::size_t>(K) * M : 0);
#pragma omp for schedule(static)
            for (int ch = 0; ch < n_chunks; ++ch) {
                for (int n = ch * kChunk; n < std::min(N, (ch + 1) * kChunk); ++n) {
                    ConstMatMap<T> G(node.grad.data() + static_cast<std::size_t>(n) * Cout * M,
                                     Cout, static_cast<int>(M));
                    if (need_w || need_x) {
                        if (need_w) {
                            detail::im2col(px->value.data() + static_cast<std::size_t>(n) * C * H * W,
                                           C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
                            MatMap<T> WG(wg_chunks[ch].data(), Cout, K);
                            ConstMatMap<T> Cm(cols.data(), K, static_cast<int>(M));
                            WG.noalias() += G * Cm.transpose();
                        }
                        if (need_x) {
                            ConstMatMap<T> Wm(pw->value.data(), Cout, K);
                            MatMap<T> DC(dcols.data(), K, static_cast<int>(M));
                            DC.noalias() = Wm.transpose() * G;
                            detail::col2im_add(dcols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                                               px->grad.data() +
                                                   static_cast<std::size_t>(n) * C * H * W);
                        }
                    }
                    if (need_b) {
                        for (int co = 0; co < Cout; ++co) {
                            const T* row =
                                node.grad.data() + (static_cast<std::size_t>(n) * Cout + co) * M;
                            T s = 0;
                            for (std::size_t i = 0; i < M; ++i) s += row[i];
                            bg_chunks[ch][co] += s;
                        }
                    }
                }
            }
        }
        if (need_w)
            for (int ch = 0; ch < n_chunks; ++ch)
                for (std::size_t i = 0; i < pw->grad.numel(); ++i) pw->grad[i] += wg_chunks[ch][i];
        if (need_b)
            for (int ch = 0; ch < n_chunks; ++ch)
                for (int co = 0; co < Cout; ++co) pb->grad[co] += bg_chunks[ch][co];
    };
    return make_node<T>(std::move(out), std::move(parents), std::move(bp));
}

// 2x2 max pooling, stride 2. Ties resolve to the first element scanned.
template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
    check(x->value.rank() == 4, "maxpool: expected NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    check(H % 2 == 0 && W % 2 == 0, "maxpool: odd spatial size ", x->value.shape_str());
    const int Ho = H / 2, Wo = W / 2;
    Tensor<T> out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    const std::size_t planes = static_cast<std::size_t>(N) * C;
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < planes; ++p) {
        const T* in = x->value.data() + p * H * W;
        T* o = out.data() + p * Ho * Wo;
        std::int32_t* am = argmax->data() + p * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                int best = (2 * oy) * W + 2 * ox;
                T bv = in[best];
                const int cand[3] = {(2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                                     (2 * oy + 1) * W + 2 * ox + 1};
                for (const int idx : cand)
                    if (in[idx] > bv) {
                        bv = in[idx];
                        best = idx;
                    }
                o[oy * Wo + ox] = bv;
                am[oy * Wo + ox] = best;
            }
    }
    return make_node<T>(std::move(out), {x}, [argmax, H, W, Ho, Wo, planes](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* g = n.grad.data() + pl * Ho * Wo;
            const std::int32_t* am = argmax->data() + pl * Ho * Wo;
            T* gx = p->grad.data() + pl * H * W;
            for (int i = 0; i < Ho * Wo; ++i) gx[am[i]] += g[i];
        }
    });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    check(x->value.rank() == 4, "upsample: expected NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Tensor<T> out({N, C, 2 * H, 2 * W});
    const std::size_t planes = static_cast<std::size_t>(N) * C;
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < planes; ++p) {
        const T* in = x->value.data() + p * H * W;
        T* o = out.data() + p * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const T v = in[y * W + xx];
                o[(2 * y) * 2 * W + 2 * xx] = v;
                o[(2 * y) * 2 * W + 2 * xx + 1] = v;
                o[(2 * y + 1) * 2 * W + 2 * xx] = v;
                o[(2 * y + 1) * 2 * W + 2 * xx + 1] = v;
            }
    }
    return make_node<T>(std::move(out), {x}, [H, W, planes](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* g = n.grad.data() + pl * 4 * H * W;
            T* gx = p->grad.data() + pl * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    gx[y * W + xx] += g[(2 * y) * 2 * W + 2 * xx] + g[(2 * y) * 2 * W + 2 * xx + 1] +
                                      g[(2 * y + 1) * 2 * W + 2 * xx] +
                                      g[(2 * y + 1) * 2 * W + 2 * xx + 1];
        }
    });
}

// Global average over H,W: [N,C,H,W] -> [N,C]
template <typename T>
Var<T> mean_hw(const Var<T>& x) {
    check(x->value.rank() == 4, "mean_hw: expected NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1);
    const std::size_t HW = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3);
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x->value.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            T s = 0;
            for (std::size_t i = 0; i < HW; ++i) s += p[i];
            out[static_cast<std::size_t>(n) * C + c] = s / static_cast<T>(HW);
        }
    return make_node<T>(std::move(out), {x}, [N, C, HW](Node<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int in = 0; in < N; ++in)
            for (int c = 0; c < C; ++c) {
                const T g = n.grad[static_cast<std::size_t>(in) * C + c] / static_cast<T>(HW);
                T* gp = p->grad.data() + (static_cast<std::size_t>(in) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) gp[i] += g;
            }
    });
}

} // namespace veil::nn
