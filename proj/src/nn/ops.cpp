#include "skel3d/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "skel3d/core/error.hpp"

namespace skel3d::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

void require_rank(const Var& x, int rank, const char* op) {
  require(x.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

struct ConvGeometry {
  int channels, height, width, kernel, stride, padding, out_h, out_w;
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ox * stride - padding + kx is in range.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  const int off = kx - g.padding;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = (g.width - 1 - off) >= 0 ? (g.width - 1 - off) / g.stride + 1 : 0;
  lo = std::min(lo, g.out_w);
  hi = std::clamp(hi, lo, g.out_w);
  return {lo, hi};
}

// Column block for output rows [oy0, oy1): K rows of (oy1 - oy0) * out_w entries.
void im2col(const double* x, const ConvGeometry& g, int oy0, int oy1, double* cols) {
  const int pt = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * pt;
        const double* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
        const auto [lo, hi] = valid_columns(g, kx);
        const int off = kx - g.padding;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          double* dst = row + (oy - oy0) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width + off;
          std::fill(dst, dst + lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, 0.0);
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, int oy0, int oy1, double* dx) {
  const int pt = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * pt;
        double* plane = dx + static_cast<std::size_t>(c) * g.height * g.width;
        const auto [lo, hi] = valid_columns(g, kx);
        const int off = kx - g.padding;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width + off;
          const double* src = row + (oy - oy0) * g.out_w;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
}

// Output rows per column block, sized so one block stays cache resident.
int tile_rows(const ConvGeometry& g) {
  constexpr std::size_t kBlockDoubles = 32768;
  const std::size_t per_row = static_cast<std::size_t>(g.rows()) * g.out_w;
  return std::clamp(static_cast<int>(kBlockDoubles / std::max<std::size_t>(per_row, 1)), 1, g.out_h);
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = self.input_grad(k)) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& va = self.input(0);
    const Tensor& vb = self.input(1);
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * vb[i];
    }
    if (Tensor* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * va[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * s;
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  require(bias.shape() == Shape{N, C}, "add_channel_bias: bias must be [N, C], got " + shape_str(bias.shape()));
  Tensor out = x.value();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double b = bias.value()[static_cast<std::size_t>(n) * C + c];
      double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) p[i] += b;
    }
  return make_result(std::move(out), {x, bias}, [N, C, HW](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = self.input_grad(1)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const double* p = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * HW;
          double s = 0.0;
          for (int i = 0; i < HW; ++i) s += p[i];
          (*g)[static_cast<std::size_t>(n) * C + c] += s;
        }
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      const Tensor& in = self.input(0);
      for (std::size_t i = 0; i < g->numel(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-in[i]));
        (*g)[i] += self.grad[i] * sig * (1.0 + in[i] * (1.0 - sig));
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      const Tensor& in = self.input(0);
      for (std::size_t i = 0; i < g->numel(); ++i) {
        if (in[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int N = x.dim(0);
  const int Co = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, padding, 0, 0};
  require(weight.dim(1) == g.channels && weight.dim(3) == g.kernel,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;
  require(g.out_h > 0 && g.out_w > 0, "conv2d: empty output");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{Co}, "conv2d: bias must be [Co]");

  const int K = g.rows(), P = g.cols();
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(Co) * P;
  const bool pointwise = is_pointwise(g);
  const int rows_per_tile = tile_rows(g);
  Tensor out({N, Co, g.out_h, g.out_w});
  ConstMapMat W(weight.value().data(), Co, K);
  AlignedDoubles cols(pointwise ? 0 : static_cast<std::size_t>(K) * rows_per_tile * g.out_w);
  for (int n = 0; n < N; ++n) {
    const double* xn = x.value().data() + n * in_stride;
    MapMat On(out.data() + n * out_stride, Co, P);
    if (pointwise) {
      On.noalias() = W * ConstMapMat(xn, K, P);
    } else {
      for (int oy0 = 0; oy0 < g.out_h; oy0 += rows_per_tile) {
        const int oy1 = std::min(g.out_h, oy0 + rows_per_tile);
        const int pt = (oy1 - oy0) * g.out_w;
        im2col(xn, g, oy0, oy1, cols.data());
        On.middleCols(oy0 * g.out_w, pt).noalias() = W * ConstMapMat(cols.data(), K, pt);
      }
    }
    if (has_bias) On.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), Co);
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs),
                     [g, N, Co, K, P, in_stride, out_stride, has_bias, pointwise, rows_per_tile](Node& self) {
    const Tensor& xv = self.input(0);
    const Tensor& wv = self.input(1);
    Tensor* gx = self.input_grad(0);
    Tensor* gw = self.input_grad(1);
    Tensor* gb = has_bias ? self.input_grad(2) : nullptr;
    ConstMapMat W(wv.data(), Co, K);
    const std::size_t block = static_cast<std::size_t>(K) * rows_per_tile * g.out_w;
    AlignedDoubles cols(pointwise ? 0 : block);
    AlignedDoubles dcols(pointwise ? 0 : block);
    for (int n = 0; n < N; ++n) {
      ConstMapMat dOut(self.grad.data() + n * out_stride, Co, P);
      if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), Co) += dOut.rowwise().sum();
      const double* xn = xv.data() + n * in_stride;
      double* dxn = gx ? gx->data() + n * in_stride : nullptr;
      if (pointwise) {
        if (gw) MapMat(gw->data(), Co, K).noalias() += dOut * ConstMapMat(xn, K, P).transpose();
        if (gx) MapMat(dxn, K, P).noalias() += W.transpose() * dOut;
        continue;
      }
      for (int oy0 = 0; oy0 < g.out_h; oy0 += rows_per_tile) {
        const int oy1 = std::min(g.out_h, oy0 + rows_per_tile);
        const int pt = (oy1 - oy0) * g.out_w;
        const auto dTile = dOut.middleCols(oy0 * g.out_w, pt);
        if (gw) {
          im2col(xn, g, oy0, oy1, cols.data());
          MapMat(gw->data(), Co, K).noalias() += dTile * ConstMapMat(cols.data(), K, pt).transpose();
        }
        if (gx) {
          MapMat(dcols.data(), K, pt).noalias() = W.transpose() * dTile;
          col2im_add(dcols.data(), g, oy0, oy1, dxn);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const int O = weight.dim(0), I = weight.dim(1);
  const int rank = x.value().rank();
  require(rank == 2 || rank == 3, "linear: input must be rank 2 or 3, got " + shape_str(x.shape()));
  require(x.shape().back() == I, "linear: input features " + shape_str(x.shape()) + " vs weight " +
                                     shape_str(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{O}, "linear: bias must be [O]");
  // groups x rows: each group is one independent matrix product.
  const int groups = x.dim(0);
  const int rows = rank == 3 ? x.dim(1) : 1;
  Shape out_shape = x.shape();
  out_shape.back() = O;
  Tensor out(out_shape);
  ConstMapMat W(weight.value().data(), O, I);
  for (int gi = 0; gi < groups; ++gi) {
    ConstMapMat X(x.value().data() + static_cast<std::size_t>(gi) * rows * I, rows, I);
    MapMat Y(out.data() + static_cast<std::size_t>(gi) * rows * O, rows, O);
    Y.noalias() = X * W.transpose();
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), O);
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [groups, rows, I, O, has_bias](Node& self) {
    const Tensor& xv = self.input(0);
    ConstMapMat W(self.input(1).data(), O, I);
    Tensor* gx = self.input_grad(0);
    Tensor* gw = self.input_grad(1);
    Tensor* gb = has_bias ? self.input_grad(2) : nullptr;
    for (int gi = 0; gi < groups; ++gi) {
      ConstMapMat dY(self.grad.data() + static_cast<std::size_t>(gi) * rows * O, rows, O);
      if (gx) MapMat(gx->data() + static_cast<std::size_t>(gi) * rows * I, rows, I).noalias() += dY * W;
      if (gw) {
        ConstMapMat X(xv.data() + static_cast<std::size_t>(gi) * rows * I, rows, I);
        MapMat(gw->data(), O, I).noalias() += dY.transpose() * X;
      }
      if (gb) Eigen::Map<Eigen::RowVectorXd>(gb->data(), O) += dY.colwise().sum();
    }
  });
}

Var group_norm(const Var& x, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const int N = x.dim(0), C = x.dim(1);
  require(groups >= 1 && C % groups == 0,
          "group_norm: group count " + std::to_string(groups) + " does not divide " + std::to_string(C) + " channels");
  const std::size_t slab = static_cast<std::size_t>(C / groups) * x.dim(2) * x.dim(3);
  const std::size_t count = static_cast<std::size_t>(N) * groups;
  Tensor out(x.shape());
  std::vector<double> rstd(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double* p = x.value().data() + s * slab;
    double mean = 0.0;
    for (std::size_t i = 0; i < slab; ++i) mean += p[i];
    mean /= static_cast<double>(slab);
    double var = 0.0;
    for (std::size_t i = 0; i < slab; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(slab);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[s] = r;
    double* q = out.data() + s * slab;
    for (std::size_t i = 0; i < slab; ++i) q[i] = (p[i] - mean) * r;
  }
  return make_result(std::move(out), {x}, [slab, count, rstd = std::move(rstd)](Node& self) {
    Tensor* gx = self.input_grad(0);
    if (!gx) return;
    // dx = rstd * (dy - mean(dy) - xhat * mean(dy * xhat))
    for (std::size_t s = 0; s < count; ++s) {
      const double* dy = self.grad.data() + s * slab;
      const double* xh = self.value.data() + s * slab;
      double m_dy = 0.0, m_dyx = 0.0;
      for (std::size_t i = 0; i < slab; ++i) {
        m_dy += dy[i];
        m_dyx += dy[i] * xh[i];
      }
      m_dy /= static_cast<double>(slab);
      m_dyx /= static_cast<double>(slab);
      double* dx = gx->data() + s * slab;
      for (std::size_t i = 0; i < slab; ++i) dx[i] += rstd[s] * (dy[i] - m_dy - xh[i] * m_dyx);
    }
  });
}

Var modulate(const Var& x, const Var& gamma, const Var& beta) {
  require_same_shape(x, gamma, "modulate(gamma)");
  require_same_shape(x, beta, "modulate(beta)");
  Tensor out(x.shape());
  const double* px = x.value().data();
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = px[i] * (1.0 + pg[i]) + pb[i];
  return make_result(std::move(out), {x, gamma, beta}, [](Node& self) {
    const Tensor& vx = self.input(0);
    const Tensor& vg = self.input(1);
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * (1.0 + vg[i]);
    }
    if (Tensor* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * vx[i];
    }
    if (Tensor* g = self.input_grad(2)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  require(b.dim(0) == N && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t HW = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor out({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.value().data() + n * Ca * HW, Ca * HW, out.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.value().data() + n * Cb * HW, Cb * HW, out.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  return make_result(std::move(out), {a, b}, [N, Ca, Cb, HW](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Ca * HW; ++i) (*g)[n * Ca * HW + i] += self.grad[n * (Ca + Cb) * HW + i];
    }
    if (Tensor* g = self.input_grad(1)) {
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Cb * HW; ++i) (*g)[n * Cb * HW + i] += self.grad[(n * (Ca + Cb) + Ca) * HW + i];
    }
  });
}

Var slice_channels(const Var& x, int start, int count) {
  require_rank(x, 4, "slice_channels");
  const int N = x.dim(0), C = x.dim(1);
  require(start >= 0 && count >= 1 && start + count <= C, "slice_channels: range out of bounds");
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out({N, count, x.dim(2), x.dim(3)});
  for (int n = 0; n < N; ++n)
    std::copy_n(x.value().data() + (n * C + start) * HW, count * HW, out.data() + n * count * HW);
  return make_result(std::move(out), {x}, [N, C, start, count, HW](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < count * HW; ++i) (*g)[(n * C + start) * HW + i] += self.grad[n * count * HW + i];
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be positive");
  const int NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  Tensor out({x.dim(0), x.dim(1), Ho, Wo});
  for (int p = 0; p < NC; ++p)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx)
        out[(static_cast<std::size_t>(p) * Ho + y) * Wo + xx] =
            x.value()[(static_cast<std::size_t>(p) * H + y / factor) * W + xx / factor];
  return make_result(std::move(out), {x}, [NC, H, W, Ho, Wo, factor](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int p = 0; p < NC; ++p)
        for (int y = 0; y < Ho; ++y)
          for (int xx = 0; xx < Wo; ++xx)
            (*g)[(static_cast<std::size_t>(p) * H + y / factor) * W + xx / factor] +=
                self.grad[(static_cast<std::size_t>(p) * Ho + y) * Wo + xx];
    }
  });
}

Var avg_pool(const Var& x, int factor) {
  require_rank(x, 4, "avg_pool");
  const int NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  require(factor >= 1 && H % factor == 0 && W % factor == 0, "avg_pool: factor must divide the spatial size");
  const int Ho = H / factor, Wo = W / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor out({x.dim(0), x.dim(1), Ho, Wo});
  for (int p = 0; p < NC; ++p)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        out[(static_cast<std::size_t>(p) * Ho + y / factor) * Wo + xx / factor] +=
            x.value()[(static_cast<std::size_t>(p) * H + y) * W + xx] * inv;
  return make_result(std::move(out), {x}, [NC, H, W, Ho, Wo, factor, inv](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int p = 0; p < NC; ++p)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            (*g)[(static_cast<std::size_t>(p) * H + y) * W + xx] +=
                self.grad[(static_cast<std::size_t>(p) * Ho + y / factor) * Wo + xx / factor] * inv;
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({N, HW, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i)
        out[(static_cast<std::size_t>(n) * HW + i) * C + c] = x.value()[(static_cast<std::size_t>(n) * C + c) * HW + i];
  return make_result(std::move(out), {x}, [N, C, HW](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i)
            (*g)[(static_cast<std::size_t>(n) * C + c) * HW + i] += self.grad[(static_cast<std::size_t>(n) * HW + i) * C + c];
    }
  });
}

Var from_tokens(const Var& x, int height, int width) {
  require_rank(x, 3, "from_tokens");
  const int N = x.dim(0), HW = x.dim(1), C = x.dim(2);
  require(HW == height * width, "from_tokens: token count does not match spatial size");
  Tensor out({N, C, height, width});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i)
        out[(static_cast<std::size_t>(n) * C + c) * HW + i] = x.value()[(static_cast<std::size_t>(n) * HW + i) * C + c];
  return make_result(std::move(out), {x}, [N, C, HW](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i)
            (*g)[(static_cast<std::size_t>(n) * HW + i) * C + c] += self.grad[(static_cast<std::size_t>(n) * C + c) * HW + i];
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const int B = a.dim(0), M = a.dim(1), K = a.dim(2);
  const int N = transpose_b ? b.dim(1) : b.dim(2);
  require(b.dim(0) == B && (transpose_b ? b.dim(2) : b.dim(1)) == K,
          "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({B, M, N});
  const std::size_t sa = static_cast<std::size_t>(M) * K, sb = static_cast<std::size_t>(K) * N,
                    so = static_cast<std::size_t>(M) * N;
  for (int i = 0; i < B; ++i) {
    ConstMapMat A(a.value().data() + i * sa, M, K);
    MapMat O(out.data() + i * so, M, N);
    if (transpose_b) {
      O.noalias() = A * ConstMapMat(b.value().data() + i * sb, N, K).transpose();
    } else {
      O.noalias() = A * ConstMapMat(b.value().data() + i * sb, K, N);
    }
  }
  return make_result(std::move(out), {a, b}, [B, M, K, N, sa, sb, so, transpose_b](Node& self) {
    Tensor* ga = self.input_grad(0);
    Tensor* gb = self.input_grad(1);
    for (int i = 0; i < B; ++i) {
      ConstMapMat dO(self.grad.data() + i * so, M, N);
      ConstMapMat A(self.input(0).data() + i * sa, M, K);
      if (transpose_b) {
        ConstMapMat Bt(self.input(1).data() + i * sb, N, K);
        if (ga) MapMat(ga->data() + i * sa, M, K).noalias() += dO * Bt;
        if (gb) MapMat(gb->data() + i * sb, N, K).noalias() += dO.transpose() * A;
      } else {
        ConstMapMat Bm(self.input(1).data() + i * sb, K, N);
        if (ga) MapMat(ga->data() + i * sa, M, K).noalias() += dO * Bm.transpose();
        if (gb) MapMat(gb->data() + i * sb, K, N).noalias() += A.transpose() * dO;
      }
    }
  });
}

Var softmax(const Var& x) {
  require(x.value().rank() >= 1, "softmax: scalar input");
  const int L = x.shape().back();
  const std::size_t rows = x.value().numel() / static_cast<std::size_t>(L);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = x.value().data() + r * L;
    double* q = out.data() + r * L;
    const double m = *std::max_element(p, p + L);
    double s = 0.0;
    for (int i = 0; i < L; ++i) s += (q[i] = std::exp(p[i] - m));
    for (int i = 0; i < L; ++i) q[i] /= s;
  }
  return make_result(std::move(out), {x}, [rows, L](Node& self) {
    Tensor* g = self.input_grad(0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * L;
      const double* dy = self.grad.data() + r * L;
      double dot = 0.0;
      for (int i = 0; i < L; ++i) dot += dy[i] * y[i];
      double* dx = g->data() + r * L;
      for (int i = 0; i < L; ++i) dx[i] += y[i] * (dy[i] - dot);
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.value().numel();
  require(n > 0, "mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  Tensor out({1}, s / static_cast<double>(n));
  return make_result(std::move(out), {a, b}, [n](Node& self) {
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    const Tensor& va = self.input(0);
    const Tensor& vb = self.input(1);
    if (Tensor* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < n; ++i) (*g)[i] += k * (va[i] - vb[i]);
    }
    if (Tensor* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < n; ++i) (*g)[i] -= k * (va[i] - vb[i]);
    }
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().numel();
  require(n > 0, "mean: empty input");
  Tensor out({1}, x.value().sum() / static_cast<double>(n));
  return make_result(std::move(out), {x}, [n](Node& self) {
    if (Tensor* g = self.input_grad(0)) {
      const double k = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) (*g)[i] += k;
    }
  });
}

}  // namespace skel3d::nn
