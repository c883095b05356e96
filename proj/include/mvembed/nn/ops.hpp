#pragma once

// Differentiable layers. Convolutions are 5x5, stride 1, zero "same" padding
// of 2, computed as im2col + GEMM one sample at a time so every sample's
// result is independent of batch composition.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvembed/nn/tape.hpp"

namespace mvembed::nn {

inline constexpr std::size_t kKernel = 5;
inline constexpr std::size_t kPad = 2;

namespace kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
std::vector<T>& workspace() {
    thread_local std::vector<T> buf;
    return buf;
}

/// Patch matrix for output rows [y0, y1): entry (c*25 + ki*5 + kj, (y-y0)*W + x)
/// holds img[c, y+ki-2, x+kj-2], zero outside the image.
template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t y0, std::size_t y1, T* col) {
    const std::size_t cols = (y1 - y0) * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < kKernel; ++ki)
            for (std::size_t kj = 0; kj < kKernel; ++kj) {
                T* dst = col + ((c * kKernel + ki) * kKernel + kj) * cols;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(kPad);
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(kPad);
                const std::size_t x_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
                const std::size_t x_hi = static_cast<std::size_t>(
                    std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x_lo),
                                             std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W),
                                                                      static_cast<std::ptrdiff_t>(W) - dx)));
                for (std::size_t y = y0; y < y1; ++y) {
                    T* row = dst + (y - y0) * W;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(row, row + W, T{0});
                        continue;
                    }
                    const T* src = img + (c * H + static_cast<std::size_t>(iy)) * W;
                    std::fill(row, row + x_lo, T{0});
                    std::copy(src + (static_cast<std::ptrdiff_t>(x_lo) + dx), src + (static_cast<std::ptrdiff_t>(x_hi) + dx),
                              row + x_lo);
                    std::fill(row + x_hi, row + W, T{0});
                }
            }
}

/// Adjoint of im2col over the same row range: accumulates col into img.
template <class T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t y0, std::size_t y1, T* img) {
    const std::size_t cols = (y1 - y0) * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < kKernel; ++ki)
            for (std::size_t kj = 0; kj < kKernel; ++kj) {
                const T* srcc = col + ((c * kKernel + ki) * kKernel + kj) * cols;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(kPad);
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(kPad);
                const std::size_t x_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
                const std::size_t x_hi =
                    static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W),
                                                                      static_cast<std::ptrdiff_t>(W) - dx));
                for (std::size_t y = y0; y < y1; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const T* row = srcc + (y - y0) * W;
                    T* dst = img + (c * H + static_cast<std::size_t>(iy)) * W + dx;
                    for (std::size_t x = x_lo; x < x_hi; ++x) dst[x] += row[x];
                }
            }
}

struct ConvDims {
    std::size_t n, cin, cout, h, w;
};

/// Output rows per patch tile, sized so a tile stays cache resident.
inline std::size_t tile_rows(const ConvDims& d, std::size_t elem_size) {
    constexpr std::size_t budget = 512 * 1024;
    const std::size_t row_bytes = d.cin * kKernel * kKernel * d.w * elem_size;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(row_bytes, 1), 1, d.h);
}

// GEMMs run on column-major views: a row-major Cout x HW block is the
// column-major HW x Cout matrix, which keeps the long spatial axis as the
// GEMM's row dimension.
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using StridedCols = Eigen::Map<ColMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedCols = Eigen::Map<const ColMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
void conv_forward(const ConvDims& d, const T* x, const T* weight, const T* bias, T* y) {
    const std::size_t K = d.cin * kKernel * kKernel, HW = d.h * d.w;
    const std::size_t rows = tile_rows(d, sizeof(T));
    auto& col = workspace<T>();
    col.resize(K * rows * d.w);
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    Eigen::Map<const ColMat<T>> wt(weight, ei(K), ei(d.cout));  // W^T
    for (std::size_t s = 0; s < d.n; ++s) {
        const T* xs = x + s * d.cin * HW;
        T* ys = y + s * d.cout * HW;
        for (std::size_t y0 = 0; y0 < d.h; y0 += rows) {
            const std::size_t y1 = std::min(d.h, y0 + rows), m = (y1 - y0) * d.w;
            im2col(xs, d.cin, d.h, d.w, y0, y1, col.data());
            Eigen::Map<const ColMat<T>> patches(col.data(), ei(m), ei(K));
            StridedCols<T> out(ys + y0 * d.w, ei(m), ei(d.cout), Eigen::OuterStride<>(ei(HW)));
            out.noalias() = patches * wt;
        }
        for (std::size_t c = 0; c < d.cout; ++c) {
            T* r = ys + c * HW;
            for (std::size_t i = 0; i < HW; ++i) r[i] += bias[c];
        }
    }
}

/// dx may be null when the input needs no gradient. dw and db accumulate.
template <class T>
void conv_backward(const ConvDims& d, const T* x, const T* weight, const T* dy, T* dx, T* dw, T* db) {
    const std::size_t K = d.cin * kKernel * kKernel, HW = d.h * d.w;
    const std::size_t rows = tile_rows(d, sizeof(T));
    auto& col = workspace<T>();
    col.resize(K * rows * d.w);
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    Eigen::Map<const ColMat<T>> wt(weight, ei(K), ei(d.cout));
    Eigen::Map<ColMat<T>> dwt(dw, ei(K), ei(d.cout));
    for (std::size_t s = 0; s < d.n; ++s) {
        const T* xs = x + s * d.cin * HW;
        const T* dys = dy + s * d.cout * HW;
        for (std::size_t c = 0; c < d.cout; ++c) {
            const T* r = dys + c * HW;
            T acc = 0;
            for (std::size_t i = 0; i < HW; ++i) acc += r[i];
            db[c] += acc;
        }
        for (std::size_t y0 = 0; y0 < d.h; y0 += rows) {
            const std::size_t y1 = std::min(d.h, y0 + rows), m = (y1 - y0) * d.w;
            CStridedCols<T> g(dys + y0 * d.w, ei(m), ei(d.cout), Eigen::OuterStride<>(ei(HW)));
            im2col(xs, d.cin, d.h, d.w, y0, y1, col.data());
            Eigen::Map<ColMat<T>> patches(col.data(), ei(m), ei(K));
            dwt.noalias() += patches.transpose() * g;
            if (dx) {
                patches.noalias() = g * wt.transpose();
                col2im(col.data(), d.cin, d.h, d.w, y0, y1, dx + s * d.cin * HW);
            }
        }
    }
}

/// Maps A x B x 5 x 5 to B x A x 5 x 5 with the kernel rotated by 180 degrees.
/// Applying conv with the result is the adjoint of conv with the original.
template <class T>
std::vector<T> flip_transpose(const T* w, std::size_t a, std::size_t b) {
    constexpr std::size_t KK = kKernel * kKernel;
    std::vector<T> out(a * b * KK);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t k = 0; k < KK; ++k) out[(j * a + i) * KK + (KK - 1 - k)] = w[(i * b + j) * KK + k];
    return out;
}

} // namespace kernels

namespace detail {

/// `what` is only evaluated on failure.
template <class F>
void require(bool ok, F&& what) {
    if (!ok) throw ShapeError(what());
}

template <class T>
bool any_requires(const Tape<T>& t, std::initializer_list<Var> vs) {
    for (auto v : vs)
        if (t.requires_grad(v)) return true;
    return false;
}

} // namespace detail

/// x: N x Cin x H x W, w: Cout x Cin x 5 x 5, b: Cout.
template <class T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b) {
    const auto& xs = t.shape(x);
    const auto& ws = t.shape(w);
    detail::require(xs.size() == 4 && ws.size() == 4 && ws[2] == kKernel && ws[3] == kKernel, [&] { return std::string("conv2d expects N x C x H x W input and Cout x Cin x 5 x 5 weights"); });
    detail::require(xs[1] == ws[1], [&] { return std::string("conv2d channel mismatch: input " + to_string(xs) + " weights " + to_string(ws)); });
    detail::require(t.shape(b) == Shape{ws[0]}, [&] { return std::string("conv2d bias must have Cout entries"); });
    detail::require(xs[2] >= 1 && xs[3] >= 1, [&] { return std::string("conv2d spatial dims must be >= 1"); });
    const kernels::ConvDims d{xs[0], xs[1], ws[0], xs[2], xs[3]};
    auto y = Tensor<T>::uninitialized(Shape{d.n, d.cout, d.h, d.w});
    kernels::conv_forward(d, t.value(x).raw(), t.value(w).raw(), t.value(b).raw(), y.raw());
    return t.push(std::move(y), detail::any_requires(t, {x, w, b}), [x, w, b, d](Tape<T>& tp, Var self) {
        Tensor<T> dw_scratch(tp.shape(w)), db_scratch(tp.shape(b));
        T* dx = tp.requires_grad(x) ? tp.grad(x).raw() : nullptr;
        T* dw = tp.requires_grad(w) ? tp.grad(w).raw() : dw_scratch.raw();
        T* db = tp.requires_grad(b) ? tp.grad(b).raw() : db_scratch.raw();
        kernels::conv_backward(d, tp.value(x).raw(), tp.value(w).raw(), tp.grad(self).raw(), dx, dw, db);
    });
}

/// Transposed convolution. x: N x Cin x H x W, w: Cin x Cout x 5 x 5, b: Cout.
/// Without bias this is exactly the adjoint of conv2d with the same weights.
template <class T>
Var deconv2d(Tape<T>& t, Var x, Var w, Var b) {
    const auto& xs = t.shape(x);
    const auto& ws = t.shape(w);
    detail::require(xs.size() == 4 && ws.size() == 4 && ws[2] == kKernel && ws[3] == kKernel, [&] { return std::string("deconv2d expects N x C x H x W input and Cin x Cout x 5 x 5 weights"); });
    detail::require(xs[1] == ws[0], [&] { return std::string("deconv2d channel mismatch: input " + to_string(xs) + " weights " + to_string(ws)); });
    detail::require(t.shape(b) == Shape{ws[1]}, [&] { return std::string("deconv2d bias must have Cout entries"); });
    const kernels::ConvDims d{xs[0], ws[0], ws[1], xs[2], xs[3]};
    auto wt = std::make_shared<const std::vector<T>>(kernels::flip_transpose(t.value(w).raw(), ws[0], ws[1]));
    auto y = Tensor<T>::uninitialized(Shape{d.n, d.cout, d.h, d.w});
    kernels::conv_forward(d, t.value(x).raw(), wt->data(), t.value(b).raw(), y.raw());
    return t.push(std::move(y), detail::any_requires(t, {x, w, b}), [x, w, b, d, wt](Tape<T>& tp, Var self) {
        std::vector<T> dwt(wt->size(), T{0});
        Tensor<T> db_scratch(tp.shape(b));
        T* dx = tp.requires_grad(x) ? tp.grad(x).raw() : nullptr;
        T* db = tp.requires_grad(b) ? tp.grad(b).raw() : db_scratch.raw();
        kernels::conv_backward(d, tp.value(x).raw(), wt->data(), tp.grad(self).raw(), dx, dwt.data(), db);
        if (tp.requires_grad(w)) {
            // dwt is laid out Cout x Cin x 5 x 5 (flipped); map back.
            auto back = kernels::flip_transpose(dwt.data(), d.cout, d.cin);
            auto& dw = tp.grad(w);
            for (std::size_t i = 0; i < back.size(); ++i) dw[i] += back[i];
        }
    });
}

template <class T>
Var relu(Tape<T>& t, Var x) {
    const auto& xv = t.value(x);
    auto y = Tensor<T>::uninitialized(xv.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
    return t.push(std::move(y), t.requires_grad(x), [x](Tape<T>& tp, Var self) {
        const auto& xv = tp.value(x);
        const auto& g = tp.grad(self);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += xv[i] > T{0} ? g[i] : T{0};
    });
}

struct PoolIndices {
    std::shared_ptr<const std::vector<std::uint32_t>> argmax;  // flat input index per output element
};

template <class T>
struct PoolResult {
    Var out;
    PoolIndices indices;
};

/// 2x2 max pooling, stride 2. Ties resolve to the first element of the window
/// in row-major order.
template <class T>
PoolResult<T> maxpool2(Tape<T>& t, Var x) {
    const auto& xs = t.shape(x);
    detail::require(xs.size() == 4, [&] { return std::string("maxpool2 expects N x C x H x W"); });
    detail::require(xs[2] % 2 == 0 && xs[3] % 2 == 0, [&] { return std::string("maxpool2 needs even spatial dims, got " + to_string(xs)); });
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], Ho = H / 2, Wo = W / 2;
    const auto& xv = t.value(x);
    auto y = Tensor<T>::uninitialized(Shape{N, C, Ho, Wo});
    auto idx = std::make_shared<std::vector<std::uint32_t>>(y.size());
    for (std::size_t p = 0; p < N * C; ++p) {
        const std::size_t in_base = p * H * W, out_base = p * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = in_base + (2 * oy) * W + 2 * ox;
                const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
                for (auto c : cand)
                    if (xv[c] > xv[best]) best = c;
                y[out_base + oy * Wo + ox] = xv[best];
                (*idx)[out_base + oy * Wo + ox] = static_cast<std::uint32_t>(best);
            }
    }
    PoolIndices ind{idx};
    Var out = t.push(std::move(y), t.requires_grad(x), [x, idx](Tape<T>& tp, Var self) {
        const auto& g = tp.grad(self);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[(*idx)[i]] += g[i];
    });
    return {out, ind};
}

/// Nearest-neighbour x2 upsampling: each value fills its 2x2 block.
template <class T>
Var unpool2(Tape<T>& t, Var x) {
    const auto& xs = t.shape(x);
    detail::require(xs.size() == 4, [&] { return std::string("unpool2 expects N x C x H x W"); });
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], Wo = 2 * W;
    const auto& xv = t.value(x);
    auto y = Tensor<T>::uninitialized(Shape{N, C, 2 * H, Wo});
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t iy = 0; iy < H; ++iy)
            for (std::size_t ix = 0; ix < W; ++ix) {
                const T v = xv[(p * H + iy) * W + ix];
                T* o = y.raw() + (p * 2 * H + 2 * iy) * Wo + 2 * ix;
                o[0] = o[1] = o[Wo] = o[Wo + 1] = v;
            }
    return t.push(std::move(y), t.requires_grad(x), [x, N, C, H, W](Tape<T>& tp, Var self) {
        const auto& g = tp.grad(self);
        auto& dx = tp.grad(x);
        const std::size_t Wo = 2 * W;
        for (std::size_t p = 0; p < N * C; ++p)
            for (std::size_t iy = 0; iy < H; ++iy)
                for (std::size_t ix = 0; ix < W; ++ix) {
                    const T* o = g.raw() + (p * 2 * H + 2 * iy) * Wo + 2 * ix;
                    dx[(p * H + iy) * W + ix] += o[0] + o[1] + o[Wo] + o[Wo + 1];
                }
    });
}

template <class T>
Var reshape(Tape<T>& t, Var x, Shape s) {
    detail::require(numel(s) == t.value(x).size(), [&] { return std::string("reshape changes element count"); });
    return t.push(t.value(x).reshaped(std::move(s)), t.requires_grad(x), [x](Tape<T>& tp, Var self) {
        const auto& g = tp.grad(self);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

/// x: N x Din, w: Din x Dout, b: Dout. Rows are computed independently.
template <class T>
Var fully_connected(Tape<T>& t, Var x, Var w, Var b) {
    const auto& xs = t.shape(x);
    const auto& ws = t.shape(w);
    detail::require(xs.size() == 2 && ws.size() == 2, [&] { return std::string("fully_connected expects N x Din input and Din x Dout weights"); });
    detail::require(xs[1] == ws[0], [&] { return std::string("fully_connected shape mismatch: input " + to_string(xs) + " weights " +
                                        to_string(ws)); });
    detail::require(t.shape(b) == Shape{ws[1]}, [&] { return std::string("fully_connected bias must have Dout entries"); });
    const std::size_t N = xs[0], Din = ws[0], Dout = ws[1];
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    kernels::CMapMat<T> wm(t.value(w).raw(), ei(Din), ei(Dout));
    Eigen::Map<const Vec> bv(t.value(b).raw(), ei(Dout));
    auto y = Tensor<T>::uninitialized(Shape{N, Dout});
    for (std::size_t s = 0; s < N; ++s) {
        Eigen::Map<const Vec> xv(t.value(x).raw() + s * Din, ei(Din));
        Eigen::Map<Vec> yv(y.raw() + s * Dout, ei(Dout));
        yv.noalias() = wm.transpose() * xv;
        yv += bv;
    }
    return t.push(std::move(y), detail::any_requires(t, {x, w, b}),
                  [x, w, b, N, Din, Dout, ei](Tape<T>& tp, Var self) {
                      kernels::CMapMat<T> g(tp.grad(self).raw(), ei(N), ei(Dout));
                      if (tp.requires_grad(w)) {
                          kernels::CMapMat<T> xm(tp.value(x).raw(), ei(N), ei(Din));
                          kernels::MapMat<T> dw(tp.grad(w).raw(), ei(Din), ei(Dout));
                          dw.noalias() += xm.transpose() * g;
                      }
                      if (tp.requires_grad(b)) {
                          auto& db = tp.grad(b);
                          for (std::size_t s = 0; s < N; ++s)
                              for (std::size_t j = 0; j < Dout; ++j) db[j] += g(ei(s), ei(j));
                      }
                      if (tp.requires_grad(x)) {
                          kernels::CMapMat<T> wm(tp.value(w).raw(), ei(Din), ei(Dout));
                          kernels::MapMat<T> dx(tp.grad(x).raw(), ei(N), ei(Din));
                          dx.noalias() += g * wm.transpose();
                      }
                  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels) {
    const auto& ls = t.shape(logits);
    detail::require(ls.size() == 2 && ls[0] == labels.size(), [&] { return std::string("softmax_cross_entropy expects N x C logits and N labels"); });
    const std::size_t N = ls[0], C = ls[1];
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= C)
            throw Error("label " + std::to_string(l) + " out of range for " + std::to_string(C) + " classes");
    const auto& z = t.value(logits);
    auto probs = std::make_shared<std::vector<T>>(N * C);
    T loss = 0;
    for (std::size_t s = 0; s < N; ++s) {
        const T* row = z.raw() + s * C;
        const T m = *std::max_element(row, row + C);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
        const T lse = m + std::log(sum);
        for (std::size_t c = 0; c < C; ++c) (*probs)[s * C + c] = std::exp(row[c] - lse);
        loss += lse - row[labels[s]];
    }
    loss /= static_cast<T>(N);
    std::vector<int> lab(labels.begin(), labels.end());
    return t.push(Tensor<T>(Shape{1}, loss), t.requires_grad(logits),
                  [logits, probs, lab, N, C](Tape<T>& tp, Var self) {
                      const T g = tp.grad(self)[0] / static_cast<T>(N);
                      auto& dz = tp.grad(logits);
                      for (std::size_t s = 0; s < N; ++s)
                          for (std::size_t c = 0; c < C; ++c) {
                              const T onehot = static_cast<std::size_t>(lab[s]) == c ? T{1} : T{0};
                              dz[s * C + c] += g * ((*probs)[s * C + c] - onehot);
                          }
                  });
}

/// Mean over the batch of ||output - target||^2 divided by the per-sample
/// element count.
template <class T>
Var l2_reconstruction_loss(Tape<T>& t, Var output, const Tensor<T>& target) {
    const auto& o = t.value(output);
    detail::require(o.shape() == target.shape(), [&] { return std::string("reconstruction target shape " + to_string(target.shape()) +
                                                     " differs from output " + to_string(o.shape())); });
    detail::require(o.rank() >= 1 && o.dim(0) >= 1, [&] { return std::string("reconstruction loss needs a non-empty batch"); });
    const T scale = T{1} / static_cast<T>(o.size());
    T sum = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        const T d = o[i] - target[i];
        sum += d * d;
    }
    auto tgt = std::make_shared<const Tensor<T>>(target);
    return t.push(Tensor<T>(Shape{1}, sum * scale), t.requires_grad(output),
                  [output, tgt, scale](Tape<T>& tp, Var self) {
                      const T g = tp.grad(self)[0] * T{2} * scale;
                      const auto& o = tp.value(output);
                      auto& d = tp.grad(output);
                      for (std::size_t i = 0; i < o.size(); ++i) d[i] += g * (o[i] - (*tgt)[i]);
                  });
}

/// a + lambda * b for equally shaped inputs.
template <class T>
Var add_scaled(Tape<T>& t, Var a, Var b, T lambda) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    detail::require(av.shape() == bv.shape(), [&] { return std::string("add_scaled shape mismatch"); });
    Tensor<T> y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + lambda * bv[i];
    return t.push(std::move(y), detail::any_requires(t, {a, b}), [a, b, lambda](Tape<T>& tp, Var self) {
        const auto& g = tp.grad(self);
        if (tp.requires_grad(a)) {
            auto& da = tp.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            auto& db = tp.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += lambda * g[i];
        }
    });
}

} // namespace mvembed::nn
