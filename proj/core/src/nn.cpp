#include "vesselgan/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "vesselgan/errors.hpp"

namespace vgan::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;
using StrideRM = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using CStrideRM = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

// Cap on the scratch column-matrix size (in doubles); keeps the im2col
// buffers around 32 MB even for 512x512 layers.
constexpr std::int64_t kMaxColElems = std::int64_t(1) << 22;

// Gathers conv patches of src (C,H,W) for output rows [r0,r1) into col,
// a (C*K*K) x ((r1-r0)*Wo) row-major matrix. Out-of-bounds taps are zero.
void im2col(const double* src, int C, int H, int W, int K, int stride, int pad, int Wo,
            int r0, int r1, double* col) {
    const std::int64_t ncols = std::int64_t(r1 - r0) * Wo;
    for (int c = 0; c < C; ++c) {
        const double* plane = src + std::int64_t(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
            for (int kj = 0; kj < K; ++kj) {
                double* row = col + (std::int64_t(c) * K * K + ki * K + kj) * ncols;
                for (int r = r0; r < r1; ++r) {
                    const int y = r * stride - pad + ki;
                    double* out = row + std::int64_t(r - r0) * Wo;
                    if (y < 0 || y >= H) {
                        std::fill(out, out + Wo, 0.0);
                        continue;
                    }
                    const double* srow = plane + std::int64_t(y) * W;
                    for (int cc = 0; cc < Wo; ++cc) {
                        const int x = cc * stride - pad + kj;
                        out[cc] = (x >= 0 && x < W) ? srow[x] : 0.0;
                    }
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds col back into dst (C,H,W).
void col2im_add(const double* col, int C, int H, int W, int K, int stride, int pad, int Wo,
                int r0, int r1, double* dst) {
    const std::int64_t ncols = std::int64_t(r1 - r0) * Wo;
    for (int c = 0; c < C; ++c) {
        double* plane = dst + std::int64_t(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
            for (int kj = 0; kj < K; ++kj) {
                const double* row = col + (std::int64_t(c) * K * K + ki * K + kj) * ncols;
                for (int r = r0; r < r1; ++r) {
                    const int y = r * stride - pad + ki;
                    if (y < 0 || y >= H) continue;
                    const double* in = row + std::int64_t(r - r0) * Wo;
                    double* drow = plane + std::int64_t(y) * W;
                    for (int cc = 0; cc < Wo; ++cc) {
                        const int x = cc * stride - pad + kj;
                        if (x >= 0 && x < W) drow[x] += in[cc];
                    }
                }
            }
        }
    }
}

int chunk_rows(int rows_total, int row_elems) {
    const int rows = static_cast<int>(std::max<std::int64_t>(1, kMaxColElems / std::max(1, row_elems)));
    return std::min(rows_total, rows);
}

void check_4d(const Tensor& x, const char* what) {
    if (x.rank() != 4) throw ShapeMismatchError(std::string(what) + ": expected (N,C,H,W), got " + x.shape_str());
}

}  // namespace

namespace fn {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_4d(x, "conv2d input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    if (w.dim(1) != C) {
        throw ShapeMismatchError("conv2d: input channels " + std::to_string(C) + " vs kernel " +
                                 std::to_string(w.dim(1)));
    }
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    Tensor y({N, Co, Ho, Wo});

    const int ckk = C * K * K;
    const int rows_per_chunk = chunk_rows(Ho, ckk * Wo);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * Wo);
    CMapRM wm(w.data(), Co, ckk);

    for (int n = 0; n < N; ++n) {
        const double* xs = x.data() + std::int64_t(n) * C * H * W;
        double* ys = y.data() + std::int64_t(n) * Co * Ho * Wo;
        for (int r0 = 0; r0 < Ho; r0 += rows_per_chunk) {
            const int r1 = std::min(Ho, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * Wo;
            im2col(xs, C, H, W, K, stride, pad, Wo, r0, r1, col.data());
            CMapRM cm(col.data(), ckk, ncols);
            StrideRM ym(ys + std::int64_t(r0) * Wo, Co, ncols, Eigen::OuterStride<>(std::int64_t(Ho) * Wo));
            ym.noalias() = wm * cm;
        }
        if (!b.empty()) {
            for (int co = 0; co < Co; ++co) {
                double* plane = ys + std::int64_t(co) * Ho * Wo;
                const double bv = b[co];
                for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) plane[i] += bv;
            }
        }
    }
    return y;
}

Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, int in_h, int in_w, int stride, int pad) {
    const int N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const int C = w.dim(1), K = w.dim(2);
    Tensor gx({N, C, in_h, in_w});

    const int ckk = C * K * K;
    const int rows_per_chunk = chunk_rows(Ho, ckk * Wo);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * Wo);
    CMapRM wm(w.data(), Co, ckk);

    for (int n = 0; n < N; ++n) {
        const double* gys = gy.data() + std::int64_t(n) * Co * Ho * Wo;
        double* gxs = gx.data() + std::int64_t(n) * C * in_h * in_w;
        for (int r0 = 0; r0 < Ho; r0 += rows_per_chunk) {
            const int r1 = std::min(Ho, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * Wo;
            CStrideRM gym(gys + std::int64_t(r0) * Wo, Co, ncols, Eigen::OuterStride<>(std::int64_t(Ho) * Wo));
            MapRM cm(col.data(), ckk, ncols);
            cm.noalias() = wm.transpose() * gym;
            col2im_add(col.data(), C, in_h, in_w, K, stride, pad, Wo, r0, r1, gxs);
        }
    }
    return gx;
}

void conv2d_grad_params(const Tensor& gy, const Tensor& x, Tensor* gw, Tensor* gb, int stride, int pad) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const int K = gw->dim(2);

    const int ckk = C * K * K;
    const int rows_per_chunk = chunk_rows(Ho, ckk * Wo);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * Wo);
    MapRM gwm(gw->data(), Co, ckk);

    for (int n = 0; n < N; ++n) {
        const double* xs = x.data() + std::int64_t(n) * C * H * W;
        const double* gys = gy.data() + std::int64_t(n) * Co * Ho * Wo;
        for (int r0 = 0; r0 < Ho; r0 += rows_per_chunk) {
            const int r1 = std::min(Ho, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * Wo;
            im2col(xs, C, H, W, K, stride, pad, Wo, r0, r1, col.data());
            CMapRM cm(col.data(), ckk, ncols);
            CStrideRM gym(gys + std::int64_t(r0) * Wo, Co, ncols, Eigen::OuterStride<>(std::int64_t(Ho) * Wo));
            gwm.noalias() += gym * cm.transpose();
        }
        if (gb) {
            for (int co = 0; co < Co; ++co) {
                const double* plane = gys + std::int64_t(co) * Ho * Wo;
                double s = 0.0;
                for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) s += plane[i];
                (*gb)[co] += s;
            }
        }
    }
}

// Transposed conv: the output plays the role of a conv *input* with the same
// geometry, so forward scatters through col2im and the gradients use im2col.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_4d(x, "conv_transpose2d input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(1), K = w.dim(2);
    if (w.dim(0) != C) {
        throw ShapeMismatchError("conv_transpose2d: input channels " + std::to_string(C) +
                                 " vs kernel " + std::to_string(w.dim(0)));
    }
    const int Ho = (H - 1) * stride - 2 * pad + K;
    const int Wo = (W - 1) * stride - 2 * pad + K;
    Tensor y({N, Co, Ho, Wo});

    const int ckk = Co * K * K;
    const int rows_per_chunk = chunk_rows(H, ckk * W);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * W);
    CMapRM wm(w.data(), C, ckk);

    for (int n = 0; n < N; ++n) {
        const double* xs = x.data() + std::int64_t(n) * C * H * W;
        double* ys = y.data() + std::int64_t(n) * Co * Ho * Wo;
        for (int r0 = 0; r0 < H; r0 += rows_per_chunk) {
            const int r1 = std::min(H, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * W;
            CStrideRM xm(xs + std::int64_t(r0) * W, C, ncols, Eigen::OuterStride<>(std::int64_t(H) * W));
            MapRM cm(col.data(), ckk, ncols);
            cm.noalias() = wm.transpose() * xm;
            col2im_add(col.data(), Co, Ho, Wo, K, stride, pad, W, r0, r1, ys);
        }
        if (!b.empty()) {
            for (int co = 0; co < Co; ++co) {
                double* plane = ys + std::int64_t(co) * Ho * Wo;
                const double bv = b[co];
                for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) plane[i] += bv;
            }
        }
    }
    return y;
}

Tensor conv_transpose2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int pad) {
    const int N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const int C = w.dim(0), K = w.dim(2);
    const int H = (Ho + 2 * pad - K) / stride + 1;
    const int W = (Wo + 2 * pad - K) / stride + 1;
    Tensor gx({N, C, H, W});

    const int ckk = Co * K * K;
    const int rows_per_chunk = chunk_rows(H, ckk * W);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * W);
    CMapRM wm(w.data(), C, ckk);

    for (int n = 0; n < N; ++n) {
        const double* gys = gy.data() + std::int64_t(n) * Co * Ho * Wo;
        double* gxs = gx.data() + std::int64_t(n) * C * H * W;
        for (int r0 = 0; r0 < H; r0 += rows_per_chunk) {
            const int r1 = std::min(H, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * W;
            im2col(gys, Co, Ho, Wo, K, stride, pad, W, r0, r1, col.data());
            CMapRM cm(col.data(), ckk, ncols);
            StrideRM gxm(gxs + std::int64_t(r0) * W, C, ncols, Eigen::OuterStride<>(std::int64_t(H) * W));
            gxm.noalias() = wm * cm;
        }
    }
    return gx;
}

void conv_transpose2d_grad_params(const Tensor& gy, const Tensor& x, Tensor* gw, Tensor* gb,
                                  int stride, int pad) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const int K = gw->dim(2);

    const int ckk = Co * K * K;
    const int rows_per_chunk = chunk_rows(H, ckk * W);
    std::vector<double> col(std::size_t(ckk) * rows_per_chunk * W);
    MapRM gwm(gw->data(), C, ckk);

    for (int n = 0; n < N; ++n) {
        const double* xs = x.data() + std::int64_t(n) * C * H * W;
        const double* gys = gy.data() + std::int64_t(n) * Co * Ho * Wo;
        for (int r0 = 0; r0 < H; r0 += rows_per_chunk) {
            const int r1 = std::min(H, r0 + rows_per_chunk);
            const std::int64_t ncols = std::int64_t(r1 - r0) * W;
            im2col(gys, Co, Ho, Wo, K, stride, pad, W, r0, r1, col.data());
            CMapRM cm(col.data(), ckk, ncols);
            CStrideRM xm(xs + std::int64_t(r0) * W, C, ncols, Eigen::OuterStride<>(std::int64_t(H) * W));
            gwm.noalias() += xm * cm.transpose();
        }
        if (gb) {
            for (int co = 0; co < Co; ++co) {
                const double* plane = gys + std::int64_t(co) * Ho * Wo;
                double s = 0.0;
                for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) s += plane[i];
                (*gb)[co] += s;
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(0.0, y[i]);
    return y;
}

Tensor relu_grad(const Tensor& gy, const Tensor& x) {
    Tensor gx = gy;
    for (std::int64_t i = 0; i < gx.numel(); ++i) {
        if (x[i] <= 0.0) gx[i] = 0.0;
    }
    return gx;
}

Tensor maxpool2(const Tensor& x, Tensor* argmax) {
    check_4d(x, "maxpool2 input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) {
        if (argmax) *argmax = Tensor();
        return x;
    }
    const int Ho = H / 2, Wo = W / 2;
    Tensor y({N, C, Ho, Wo});
    if (argmax) *argmax = Tensor({N, C, Ho, Wo});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* plane = x.data() + (std::int64_t(n) * C + c) * H * W;
            for (int r = 0; r < Ho; ++r) {
                for (int cc = 0; cc < Wo; ++cc) {
                    int best = (2 * r) * W + 2 * cc;
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const int idx = (2 * r + di) * W + (2 * cc + dj);
                            if (plane[idx] > plane[best]) best = idx;
                        }
                    }
                    y.at(n, c, r, cc) = plane[best];
                    if (argmax) argmax->at(n, c, r, cc) = static_cast<double>(best);
                }
            }
        }
    }
    return y;
}

Tensor maxpool2_grad(const Tensor& gy, const Tensor& argmax, const std::vector<int>& in_shape) {
    if (argmax.empty()) return gy;  // pooling was a pass-through
    Tensor gx(in_shape);
    const int N = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const int H = in_shape[2], W = in_shape[3];
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            double* plane = gx.data() + (std::int64_t(n) * C + c) * H * W;
            for (int r = 0; r < Ho; ++r) {
                for (int cc = 0; cc < Wo; ++cc) {
                    plane[static_cast<int>(argmax.at(n, c, r, cc))] += gy.at(n, c, r, cc);
                }
            }
        }
    }
    return gx;
}

namespace {
struct LinTap {
    int i0, i1;
    double w1;  // weight of i1; i0 gets (1-w1)
};

std::vector<LinTap> linear_taps(int in, int out) {
    std::vector<LinTap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double pos = (o + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(in - 1, i0 + 1);
        taps[o] = {i0, i1, pos - i0};
    }
    return taps;
}
}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    check_4d(x, "bilinear_resize input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = linear_taps(H, out_h);
    const auto tx = linear_taps(W, out_w);
    Tensor y({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* plane = x.data() + (std::int64_t(n) * C + c) * H * W;
            for (int r = 0; r < out_h; ++r) {
                const auto& t0 = ty[r];
                for (int cc = 0; cc < out_w; ++cc) {
                    const auto& t1 = tx[cc];
                    const double a = plane[t0.i0 * W + t1.i0] * (1 - t1.w1) + plane[t0.i0 * W + t1.i1] * t1.w1;
                    const double b = plane[t0.i1 * W + t1.i0] * (1 - t1.w1) + plane[t0.i1 * W + t1.i1] * t1.w1;
                    y.at(n, c, r, cc) = a * (1 - t0.w1) + b * t0.w1;
                }
            }
        }
    }
    return y;
}

Tensor bilinear_resize_grad(const Tensor& gy, int in_h, int in_w) {
    const int N = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const auto ty = linear_taps(in_h, Ho);
    const auto tx = linear_taps(in_w, Wo);
    Tensor gx({N, C, in_h, in_w});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            double* plane = gx.data() + (std::int64_t(n) * C + c) * in_h * in_w;
            for (int r = 0; r < Ho; ++r) {
                const auto& t0 = ty[r];
                for (int cc = 0; cc < Wo; ++cc) {
                    const auto& t1 = tx[cc];
                    const double g = gy.at(n, c, r, cc);
                    plane[t0.i0 * in_w + t1.i0] += g * (1 - t0.w1) * (1 - t1.w1);
                    plane[t0.i0 * in_w + t1.i1] += g * (1 - t0.w1) * t1.w1;
                    plane[t0.i1 * in_w + t1.i0] += g * t0.w1 * (1 - t1.w1);
                    plane[t0.i1 * in_w + t1.i1] += g * t0.w1 * t1.w1;
                }
            }
        }
    }
    return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_4d(a, "concat_channels");
    check_4d(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeMismatchError("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    }
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor y({N, Ca + Cb, H, W});
    const std::int64_t plane = std::int64_t(H) * W;
    for (int n = 0; n < N; ++n) {
        std::memcpy(y.data() + std::int64_t(n) * (Ca + Cb) * plane,
                    a.data() + std::int64_t(n) * Ca * plane, sizeof(double) * Ca * plane);
        std::memcpy(y.data() + (std::int64_t(n) * (Ca + Cb) + Ca) * plane,
                    b.data() + std::int64_t(n) * Cb * plane, sizeof(double) * Cb * plane);
    }
    return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_first) {
    const int N = g.dim(0), C = g.dim(1), H = g.dim(2), W = g.dim(3);
    Tensor a({N, c_first, H, W});
    Tensor b({N, C - c_first, H, W});
    const std::int64_t plane = std::int64_t(H) * W;
    for (int n = 0; n < N; ++n) {
        std::memcpy(a.data() + std::int64_t(n) * c_first * plane,
                    g.data() + std::int64_t(n) * C * plane, sizeof(double) * c_first * plane);
        std::memcpy(b.data() + std::int64_t(n) * (C - c_first) * plane,
                    g.data() + (std::int64_t(n) * C + c_first) * plane,
                    sizeof(double) * (C - c_first) * plane);
    }
    return {std::move(a), std::move(b)};
}

}  // namespace fn

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> Layer::arrays() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (Param* p : params()) out.emplace_back(p->name, &p->value);
    return out;
}

Conv2d::Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad)
    : weight_(name + ".kernel", {out_c, in_c, k, k}),
      bias_(name + ".bias", {out_c}),
      stride_(stride),
      pad_(pad) {}

Tensor Conv2d::forward(const Tensor& x, bool) {
    input_ = x;
    return fn::conv2d(x, weight_.value, bias_.value, stride_, pad_);
}

Tensor Conv2d::backward(const Tensor& gy) {
    fn::conv2d_grad_params(gy, input_, &weight_.grad, &bias_.grad, stride_, pad_);
    return fn::conv2d_grad_input(gy, weight_.value, input_.dim(2), input_.dim(3), stride_, pad_);
}

ConvTranspose2d::ConvTranspose2d(std::string name, int in_c, int out_c, int k, int stride, int pad)
    : weight_(name + ".kernel", {in_c, out_c, k, k}),
      bias_(name + ".bias", {out_c}),
      stride_(stride),
      pad_(pad) {}

Tensor ConvTranspose2d::forward(const Tensor& x, bool) {
    input_ = x;
    return fn::conv_transpose2d(x, weight_.value, bias_.value, stride_, pad_);
}

Tensor ConvTranspose2d::backward(const Tensor& gy) {
    fn::conv_transpose2d_grad_params(gy, input_, &weight_.grad, &bias_.grad, stride_, pad_);
    return fn::conv_transpose2d_grad_input(gy, weight_.value, stride_, pad_);
}

BatchNorm2d::BatchNorm2d(std::string name, int channels, double eps, double momentum)
    : gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}),
      running_mean_({channels}),
      running_var_({channels}),
      name_(std::move(name)),
      eps_(eps),
      momentum_(momentum) {
    gamma_.value.fill(1.0);
    running_var_.fill(1.0);
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm2d::arrays() {
    return {{gamma_.name, &gamma_.value},
            {beta_.name, &beta_.value},
            {name_ + ".running_mean", &running_mean_},
            {name_ + ".running_var", &running_var_}};
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    check_4d(x, "batchnorm input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t plane = std::int64_t(H) * W;
    const double count = static_cast<double>(N) * plane;
    last_training_ = training;
    istd_.assign(C, 0.0);
    Tensor y({N, C, H, W});

    if (training) {
        xhat_ = Tensor({N, C, H, W});
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x.data() + (std::int64_t(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
            }
            mean /= count;
            double var = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x.data() + (std::int64_t(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    var += d * d;
                }
            }
            var /= count;
            const double istd = 1.0 / std::sqrt(var + eps_);
            istd_[c] = istd;
            running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
            running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var;
            const double g = gamma_.value[c], b = beta_.value[c];
            for (int n = 0; n < N; ++n) {
                const double* p = x.data() + (std::int64_t(n) * C + c) * plane;
                double* xh = xhat_.data() + (std::int64_t(n) * C + c) * plane;
                double* yp = y.data() + (std::int64_t(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - mean) * istd;
                    yp[i] = g * xh[i] + b;
                }
            }
        }
    } else {
        xhat_ = Tensor({N, C, H, W});
        for (int c = 0; c < C; ++c) {
            const double istd = 1.0 / std::sqrt(running_var_[c] + eps_);
            istd_[c] = istd;
            const double mean = running_mean_[c];
            const double g = gamma_.value[c], b = beta_.value[c];
            for (int n = 0; n < N; ++n) {
                const double* p = x.data() + (std::int64_t(n) * C + c) * plane;
                double* xh = xhat_.data() + (std::int64_t(n) * C + c) * plane;
                double* yp = y.data() + (std::int64_t(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - mean) * istd;
                    yp[i] = g * xh[i] + b;
                }
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
    const int N = gy.dim(0), C = gy.dim(1), H = gy.dim(2), W = gy.dim(3);
    const std::int64_t plane = std::int64_t(H) * W;
    const double count = static_cast<double>(N) * plane;
    Tensor gx({N, C, H, W});

    for (int c = 0; c < C; ++c) {
        const double g = gamma_.value[c];
        const double istd = istd_[c];
        double dbeta = 0.0, dgamma = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* gp = gy.data() + (std::int64_t(n) * C + c) * plane;
            const double* xh = xhat_.data() + (std::int64_t(n) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                dbeta += gp[i];
                dgamma += gp[i] * xh[i];
            }
        }
        gamma_.grad[c] += dgamma;
        beta_.grad[c] += dbeta;
        if (!last_training_) {
            // Running statistics are constants: the input grad is a plain scale.
            for (int n = 0; n < N; ++n) {
                const double* gp = gy.data() + (std::int64_t(n) * C + c) * plane;
                double* gxp = gx.data() + (std::int64_t(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) gxp[i] = gp[i] * g * istd;
            }
            continue;
        }
        const double mean_gy = dbeta / count;
        const double mean_gy_xhat = dgamma / count;
        for (int n = 0; n < N; ++n) {
            const double* gp = gy.data() + (std::int64_t(n) * C + c) * plane;
            const double* xh = xhat_.data() + (std::int64_t(n) * C + c) * plane;
            double* gxp = gx.data() + (std::int64_t(n) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                gxp[i] = g * istd * (gp[i] - mean_gy - xh[i] * mean_gy_xhat);
            }
        }
    }
    return gx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool) {
    input_ = x;
    Tensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (y[i] < 0.0) y[i] *= slope_;
    }
    return y;
}

Tensor LeakyReLU::backward(const Tensor& gy) {
    Tensor gx = gy;
    for (std::int64_t i = 0; i < gx.numel(); ++i) {
        if (input_[i] < 0.0) gx[i] *= slope_;
    }
    return gx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
    Tensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
    output_ = y;
    return y;
}

Tensor Tanh::backward(const Tensor& gy) {
    Tensor gx = gy;
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] *= 1.0 - output_[i] * output_[i];
    return gx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
    Tensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    output_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& gy) {
    Tensor gx = gy;
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] *= output_[i] * (1.0 - output_[i]);
    return gx;
}

Dense::Dense(std::string name, int in_f, int out_f)
    : weight_(name + ".kernel", {out_f, in_f}), bias_(name + ".bias", {out_f}) {}

Tensor Dense::forward(const Tensor& x, bool) {
    if (x.rank() != 2) throw ShapeMismatchError("dense input must be (N,F), got " + x.shape_str());
    input_ = x;
    const int N = x.dim(0), F = x.dim(1), O = weight_.value.dim(0);
    if (F != weight_.value.dim(1)) {
        throw ShapeMismatchError("dense: input features " + std::to_string(F) + " vs weight " +
                                 std::to_string(weight_.value.dim(1)));
    }
    Tensor y({N, O});
    CMapRM xm(x.data(), N, F);
    CMapRM wm(weight_.value.data(), O, F);
    MapRM ym(y.data(), N, O);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) y.at(n, o) += bias_.value[o];
    }
    return y;
}

Tensor Dense::backward(const Tensor& gy) {
    const int N = input_.dim(0), F = input_.dim(1), O = weight_.value.dim(0);
    CMapRM gym(gy.data(), N, O);
    CMapRM xm(input_.data(), N, F);
    CMapRM wm(weight_.value.data(), O, F);
    MapRM gwm(weight_.grad.data(), O, F);
    gwm.noalias() += gym.transpose() * xm;
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) bias_.grad[o] += gy.at(n, o);
    }
    Tensor gx({N, F});
    MapRM gxm(gx.data(), N, F);
    gxm.noalias() = gym * wm;
    return gx;
}

Tensor BilinearUpsample::forward(const Tensor& x, bool) {
    in_h_ = x.dim(2);
    in_w_ = x.dim(3);
    return fn::bilinear_resize(x, target_, target_);
}

Tensor BilinearUpsample::backward(const Tensor& gy) {
    return fn::bilinear_resize_grad(gy, in_h_, in_w_);
}

void init_params(const std::vector<Param*>& params, std::uint64_t seed, double stdev) {
    for (Param* p : params) {
        const bool is_weight = p->name.ends_with(".kernel");
        if (!is_weight) continue;  // biases zero, BN gamma/beta keep defaults
        RngStream rng(seed, p->name);
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            p->value[i] = rng.truncated_normal(stdev);
        }
    }
}

}  // namespace vgan::nn
