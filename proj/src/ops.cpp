#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vqtts/autograd.hpp"

namespace vqtts {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require(bool cond, const std::string& message) {
  if (!cond) throw ShapeError(message);
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

bool broadcast_scalar(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  require(b.size() == 1, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  return true;
}

template <class Fwd, class Bwd>
Var unary(const char* op, Var x, Fwd fwd, Bwd bwd) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return x.tape().record(op, std::move(out), {x}, [bwd](const BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    if (!gx) return;
    const Tensor& xin = ctx.input(0);
    const Tensor& y = ctx.output();
    const Tensor& gy = ctx.out_grad();
    for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += gy[i] * bwd(xin[i], y[i]);
  });
}

}  // namespace

// ---- elementwise binary ---------------------------------------------------

Var add(Var a, Var b) {
  const bool bc = broadcast_scalar(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bc ? bv[0] : bv[i];
  return a.tape().record("add", std::move(out), {a, b}, [bc](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bc ? 0 : i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  const bool bc = broadcast_scalar(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bc ? bv[0] : bv[i];
  return a.tape().record("sub", std::move(out), {a, b}, [bc](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bc ? 0 : i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const bool bc = broadcast_scalar(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bc ? bv[0] : bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [bc](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (bc ? bv[0] : bv[i]);
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bc ? 0 : i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  const bool bc = broadcast_scalar(a, b, "div");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bc ? bv[0] : bv[i];
  return a.tape().record("div", std::move(out), {a, b}, [bc](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& y = ctx.output();
    const Tensor& bv = ctx.input(1);
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / (bc ? bv[0] : bv[i]);
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = bc ? bv[0] : bv[i];
        (*gb)[bc ? 0 : i] -= g[i] * y[i] / d;
      }
    }
  });
}

Var scale(Var a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2, "matmul expects 2-D operands");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, "matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                              shape_str(bv.shape()));
  Tensor out(Shape{m, n});
  MutMap(out.ptr(), m, n).noalias() = ConstMap(av.ptr(), m, k) * ConstMap(bv.ptr(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](const BackwardContext& ctx) {
    ConstMap g(ctx.out_grad().ptr(), m, n);
    if (Tensor* ga = ctx.input_grad(0)) {
      MutMap(ga->ptr(), m, k).noalias() += g * ConstMap(ctx.input(1).ptr(), k, n).transpose();
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      MutMap(gb->ptr(), k, n).noalias() += ConstMap(ctx.input(0).ptr(), m, k).transpose() * g;
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require(av.rank() == 2, "transpose expects a 2-D operand");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out(Shape{c, r});
  MutMap(out.ptr(), c, r) = ConstMap(av.ptr(), r, c).transpose();
  return a.tape().record("transpose", std::move(out), {a}, [r, c](const BackwardContext& ctx) {
    if (Tensor* ga = ctx.input_grad(0)) {
      MutMap(ga->ptr(), r, c) += ConstMap(ctx.out_grad().ptr(), c, r).transpose();
    }
  });
}

Var add_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  const std::size_t c = last_dim(xv);
  require(bv.size() == c, "add_bias: bias of size " + std::to_string(bv.size()) + " for shape " +
                              shape_str(xv.shape()));
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return x.tape().record("add_bias", std::move(out), {x, b}, [c](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (Tensor* gx = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % c] += g[i];
    }
  });
}

Var mul_gain(Var x, Var gain) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const std::size_t c = last_dim(xv);
  require(gv.size() == c, "mul_gain: gain of size " + std::to_string(gv.size()) + " for shape " +
                              shape_str(xv.shape()));
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i % c];
  return x.tape().record("mul_gain", std::move(out), {x, gain}, [c](const BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (Tensor* gx = ctx.input_grad(0)) {
      const Tensor& gv = ctx.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gv[i % c];
    }
    if (Tensor* gg = ctx.input_grad(1)) {
      const Tensor& xv = ctx.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % c] += g[i] * xv[i];
    }
  });
}

Var add_channel_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && b.size() == xv.dim(0),
          "add_channel_bias: bias does not match channels of " + shape_str(xv.shape()));
  const std::size_t ch = xv.dim(0), len = xv.dim(1);
  Tensor out = xv;
  const Tensor& bv = b.value();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t t = 0; t < len; ++t) out[c * len + t] += bv[c];
  }
  return x.tape().record("add_channel_bias", std::move(out), {x, b},
                         [ch, len](const BackwardContext& ctx) {
                           const Tensor& g = ctx.out_grad();
                           if (Tensor* gx = ctx.input_grad(0)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                           }
                           if (Tensor* gb = ctx.input_grad(1)) {
                             for (std::size_t c = 0; c < ch; ++c) {
                               double acc = 0.0;
                               for (std::size_t t = 0; t < len; ++t) acc += g[c * len + t];
                               (*gb)[c] += acc;
                             }
                           }
                         });
}

// ---- pointwise nonlinearities --------------------------------------------

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(Var x) {
  return unary("sqrt", x,
               [](double v) {
                 if (v < 0.0) throw NumericError("sqrt of negative value");
                 return std::sqrt(v);
               },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var log_clamped(Var x, double floor) {
  return unary("log_clamped", x, [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double v, double) { return v < floor ? 0.0 : 1.0 / v; });
}

// ---- normalization --------------------------------------------------------

namespace {

Var softmax_impl(Var x, const std::vector<unsigned char>* keep) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  require(c > 0, "softmax over an empty axis");
  if (keep) require(keep->size() == xv.size(), "softmax: mask size does not match input");
  const std::size_t rows = xv.size() / c;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * c;
    double* o = out.ptr() + r * c;
    const unsigned char* k = keep ? keep->data() + r * c : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!k || k[j]) mx = std::max(mx, in[j]);
    }
    if (!std::isfinite(mx)) throw ShapeError("softmax: row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = (!k || k[j]) ? std::exp(in[j] - mx) : 0.0;
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return x.tape().record("softmax", std::move(out), {x}, [c, rows](const BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    if (!gx) return;
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.out_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        (*gx)[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
      }
    }
  });
}

}  // namespace

Var softmax(Var x) { return softmax_impl(x, nullptr); }

Var softmax(Var x, const std::vector<unsigned char>& keep) { return softmax_impl(x, &keep); }

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  require(c > 0, "log_softmax over an empty axis");
  const std::size_t rows = xv.size() / c;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * c;
    const double mx = *std::max_element(in, in + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  return x.tape().record("log_softmax", std::move(out), {x}, [c, rows](const BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    if (!gx) return;
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.out_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        (*gx)[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * total;
      }
    }
  });
}

Var layer_norm(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  require(c > 0, "layer_norm over an empty axis");
  const std::size_t rows = xv.size() / c;
  Tensor out(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (in[j] - mu) * inv_std[r];
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x},
      [c, rows, inv_std = std::move(inv_std)](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.out_grad();
        const double n = static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gy = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            mean_g += g[r * c + j];
            mean_gy += g[r * c + j] * y[r * c + j];
          }
          mean_g /= n;
          mean_gy /= n;
          for (std::size_t j = 0; j < c; ++j) {
            (*gx)[r * c + j] += inv_std[r] * (g[r * c + j] - mean_g - y[r * c + j] * mean_gy);
          }
        }
      });
}

// ---- indexing and reshaping ----------------------------------------------

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require(tv.rank() == 2, "embedding table must be 2-D");
  const std::size_t rows = tv.dim(0), d = tv.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out(Shape{idx.size(), d});
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= rows) {
      throw ShapeError("embedding: id " + std::to_string(idx[t]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.ptr() + idx[t] * d, d, out.ptr() + t * d);
  }
  return table.tape().record("embedding", std::move(out), {table},
                             [d, idx = std::move(idx)](const BackwardContext& ctx) {
                               Tensor* gt = ctx.input_grad(0);
                               if (!gt) return;
                               const Tensor& g = ctx.out_grad();
                               for (std::size_t t = 0; t < idx.size(); ++t) {
                                 for (std::size_t j = 0; j < d; ++j) {
                                   (*gt)[idx[t] * d + j] += g[t * d + j];
                                 }
                               }
                             });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("sum", Tensor::scalar(total), {x}, [](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grad(0)) {
      const double g = ctx.out_grad()[0];
      for (double& v : gx->data()) v += g;
    }
  });
}

Var mean(Var x) {
  const std::size_t n = x.size();
  require(n > 0, "mean of an empty tensor");
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("mean", Tensor::scalar(total / static_cast<double>(n)), {x},
                         [n](const BackwardContext& ctx) {
                           if (Tensor* gx = ctx.input_grad(0)) {
                             const double g = ctx.out_grad()[0] / static_cast<double>(n);
                             for (double& v : gx->data()) v += g;
                           }
                         });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      require(i == axis || s[i] == first[i], "concat: shapes " + shape_str(first) + " and " +
                                                 shape_str(s) + " differ off-axis");
    }
    widths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t block = widths[p] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(v.ptr() + o * block, block, out.ptr() + (o * os.axis + offset) * os.inner);
    }
    offset += widths[p];
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts, [os, widths = std::move(widths)](const BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          const std::size_t block = widths[p] * os.inner;
          if (Tensor* gp = ctx.input_grad(p)) {
            for (std::size_t o = 0; o < os.outer; ++o) {
              const double* src = g.ptr() + (o * os.axis + offset) * os.inner;
              double* dst = gp->ptr() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += widths[p];
        }
      });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& shape = x.shape();
  require(axis < shape.size(), "slice: axis out of range");
  require(begin <= end && end <= shape[axis], "slice: range [" + std::to_string(begin) + "," +
                                                   std::to_string(end) + ") outside " +
                                                   shape_str(shape));
  const AxisSplit s = split_at(shape, axis);
  Shape out_shape = shape;
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.ptr() + (o * s.axis + begin) * s.inner, block, out.ptr() + o * block);
  }
  return x.tape().record("slice", std::move(out), {x}, [s, begin, block](const BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    if (!gx) return;
    const Tensor& g = ctx.out_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx->ptr() + (o * s.axis + begin) * s.inner;
      const double* src = g.ptr() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grad(0)) {
      const Tensor& g = ctx.out_grad();
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var stop_gradient(Var x) {
  return x.tape().record("stop_gradient", x.value(), {x}, [](const BackwardContext&) {});
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = unit(rng) >= rate ? keep_scale : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record("dropout", std::move(out), {x},
                         [mask = std::move(mask)](const BackwardContext& ctx) {
                           if (Tensor* gx = ctx.input_grad(0)) {
                             const Tensor& g = ctx.out_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                           }
                         });
}

std::vector<unsigned char> causal_mask(std::size_t rows, std::size_t cols, std::size_t offset) {
  std::vector<unsigned char> keep(rows * cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols && j <= i + offset; ++j) keep[i * cols + j] = 1;
  }
  return keep;
}

}  // namespace vqtts
