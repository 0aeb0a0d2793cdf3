#include <Eigen/Core>
#include <string>

#include "vqtts/autograd.hpp"

namespace vqtts {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct ConvGeometry {
  std::size_t c_in, c_out, kernel, in_len, out_len, stride, pad, dilation;
};

// cols[(ci*K + k), t] = x[ci, t*stride + k*dilation - pad], zero outside the signal.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      double* row = cols + (ci * g.kernel + k) * g.out_len;
      const std::ptrdiff_t shift =
          static_cast<std::ptrdiff_t>(k * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
      for (std::size_t t = 0; t < g.out_len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * g.stride) + shift;
        row[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(g.in_len)) ? x[ci * g.in_len + src] : 0.0;
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const double* row = cols + (ci * g.kernel + k) * g.out_len;
      const std::ptrdiff_t shift =
          static_cast<std::ptrdiff_t>(k * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
      for (std::size_t t = 0; t < g.out_len; ++t) {
        const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t * g.stride) + shift;
        if (dst >= 0 && dst < static_cast<std::ptrdiff_t>(g.in_len)) x[ci * g.in_len + dst] += row[t];
      }
    }
  }
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t pad, std::size_t dilation) {
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (kernel == 0 || dilation == 0) throw ShapeError("conv1d: kernel and dilation must be positive");
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (length + 2 * pad < span) {
    throw ShapeError("conv1d: kernel span " + std::to_string(span) + " exceeds padded input length " +
                     std::to_string(length + 2 * pad));
  }
  return (length + 2 * pad - span) / stride + 1;
}

std::size_t conv_transpose1d_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv_transpose1d: stride must be positive");
  if (length == 0 || kernel == 0) throw ShapeError("conv_transpose1d: empty input or kernel");
  const std::size_t full = (length - 1) * stride + kernel;
  if (full <= 2 * pad) throw ShapeError("conv_transpose1d: padding removes the whole output");
  return full - 2 * pad;
}

Var conv1d(Var x, Var w, std::size_t stride, std::size_t pad, std::size_t dilation) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 3 || wv.dim(1) != xv.dim(0)) {
    throw ShapeError("conv1d: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  }
  ConvGeometry g{xv.dim(0), wv.dim(0), wv.dim(2), xv.dim(1), 0, stride, pad, dilation};
  g.out_len = conv1d_output_length(g.in_len, g.kernel, stride, pad, dilation);
  const std::size_t rows = g.c_in * g.kernel;
  std::vector<double> cols(rows * g.out_len);
  im2col(xv.ptr(), g, cols.data());
  Tensor out(Shape{g.c_out, g.out_len});
  MutMap(out.ptr(), g.c_out, g.out_len).noalias() =
      ConstMap(wv.ptr(), g.c_out, rows) * ConstMap(cols.data(), rows, g.out_len);
  return x.tape().record(
      "conv1d", std::move(out), {x, w}, [g, rows, cols = std::move(cols)](const BackwardContext& ctx) {
        ConstMap gy(ctx.out_grad().ptr(), g.c_out, g.out_len);
        if (Tensor* gw = ctx.input_grad(1)) {
          MutMap(gw->ptr(), g.c_out, rows).noalias() +=
              gy * ConstMap(cols.data(), rows, g.out_len).transpose();
        }
        if (Tensor* gx = ctx.input_grad(0)) {
          RowMat gcols = ConstMap(ctx.input(1).ptr(), g.c_out, rows).transpose() * gy;
          col2im_add(gcols.data(), g, gx->ptr());
        }
      });
}

Var conv_transpose1d(Var x, Var w, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 3 || wv.dim(0) != xv.dim(0)) {
    throw ShapeError("conv_transpose1d: input " + shape_str(xv.shape()) +
                     " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t c_in = xv.dim(0), in_len = xv.dim(1);
  const std::size_t c_out = wv.dim(1), kernel = wv.dim(2);
  const std::size_t out_len = conv_transpose1d_output_length(in_len, kernel, stride, pad);
  // Viewed from the output side this is the input-gradient of a conv1d with
  // geometry (c_out -> c_in, out_len -> in_len).
  const ConvGeometry g{c_out, c_in, kernel, out_len, in_len, stride, pad, 1};
  const std::size_t rows = c_out * kernel;
  RowMat cols = ConstMap(wv.ptr(), c_in, rows).transpose() * ConstMap(xv.ptr(), c_in, in_len);
  Tensor out(Shape{c_out, out_len});
  col2im_add(cols.data(), g, out.ptr());
  return x.tape().record(
      "conv_transpose1d", std::move(out), {x, w}, [g, rows](const BackwardContext& ctx) {
        std::vector<double> gcols(rows * g.out_len);
        im2col(ctx.out_grad().ptr(), g, gcols.data());
        ConstMap gc(gcols.data(), rows, g.out_len);
        if (Tensor* gx = ctx.input_grad(0)) {
          MutMap(gx->ptr(), g.c_out, g.out_len).noalias() +=
              ConstMap(ctx.input(1).ptr(), g.c_out, rows) * gc;
        }
        if (Tensor* gw = ctx.input_grad(1)) {
          MutMap(gw->ptr(), g.c_out, rows).noalias() +=
              ConstMap(ctx.input(0).ptr(), g.c_out, g.out_len) * gc.transpose();
        }
      });
}

Var avg_pool1d(Var x, std::size_t kernel) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || kernel == 0 || xv.dim(1) < kernel) {
    throw ShapeError("avg_pool1d: bad input " + shape_str(xv.shape()) + " for kernel " +
                     std::to_string(kernel));
  }
  const std::size_t ch = xv.dim(0), len = xv.dim(1), out_len = len / kernel;
  const double inv = 1.0 / static_cast<double>(kernel);
  Tensor out(Shape{ch, out_len});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel; ++k) acc += xv[c * len + t * kernel + k];
      out[c * out_len + t] = acc * inv;
    }
  }
  return x.tape().record("avg_pool1d", std::move(out), {x},
                         [ch, len, out_len, kernel, inv](const BackwardContext& ctx) {
                           Tensor* gx = ctx.input_grad(0);
                           if (!gx) return;
                           const Tensor& g = ctx.out_grad();
                           for (std::size_t c = 0; c < ch; ++c) {
                             for (std::size_t t = 0; t < out_len; ++t) {
                               for (std::size_t k = 0; k < kernel; ++k) {
                                 (*gx)[c * len + t * kernel + k] += g[c * out_len + t] * inv;
                               }
                             }
                           }
                         });
}

}  // namespace vqtts
