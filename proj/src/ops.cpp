#include "xmodal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace xmodal {

using detail::TensorImpl;

namespace {

void accumulate(const Tensor& target, std::span<const double> values) {
  if (!target.requires_grad()) return;
  auto& g = target.impl()->grad_buffer();
  for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

// Geometry of a 3-spatial-dim convolution; 2D convolution uses depth 1.
struct ConvGeom {
  std::size_t batch, c_in, c_out;
  std::size_t d, h, w;
  std::size_t kd, kh, kw;
  std::size_t sd, sh, sw;
  std::size_t pd, ph, pw;
  std::size_t od, oh, ow;

  std::size_t in_plane() const { return d * h * w; }
  std::size_t out_plane() const { return od * oh * ow; }
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s,
                       std::size_t p, const char* op) {
  if (in + 2 * p < k) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " larger than padded extent " +
                     std::to_string(in + 2 * p));
  }
  return (in + 2 * p - k) / s + 1;
}

// Range [lo, hi) of output positions o for which o*s + k - p lies in [0, n).
std::pair<std::size_t, std::size_t> valid_range(std::size_t n, std::size_t out,
                                                std::size_t k, std::size_t s,
                                                std::size_t p) {
  std::size_t lo = 0;
  if (k < p) lo = (p - k + s - 1) / s;
  if (n + p < k + 1) return {0, 0};
  std::size_t hi = std::min(out, (n - 1 + p - k) / s + 1);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

void conv_forward(const ConvGeom& g, const double* x, const double* wt,
                  const double* bias, double* out) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oc = 0; oc < g.c_out; ++oc) {
      double* op = out + (b * g.c_out + oc) * g.out_plane();
      std::fill(op, op + g.out_plane(), bias[oc]);
      for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        const double* ip = x + (b * g.c_in + ic) * g.in_plane();
        const double* wp = wt + (oc * g.c_in + ic) * g.kd * g.kh * g.kw;
        for (std::size_t kz = 0; kz < g.kd; ++kz) {
          auto [z0, z1] = valid_range(g.d, g.od, kz, g.sd, g.pd);
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            auto [y0, y1] = valid_range(g.h, g.oh, ky, g.sh, g.ph);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              auto [x0, x1] = valid_range(g.w, g.ow, kx, g.sw, g.pw);
              const double wv = wp[(kz * g.kh + ky) * g.kw + kx];
              for (std::size_t oz = z0; oz < z1; ++oz) {
                const std::size_t iz = oz * g.sd + kz - g.pd;
                for (std::size_t oy = y0; oy < y1; ++oy) {
                  const std::size_t iy = oy * g.sh + ky - g.ph;
                  double* orow = op + (oz * g.oh + oy) * g.ow;
                  // Unsigned wrap-around in ibase cancels once ox*sw is added.
                  const std::size_t ibase = (iz * g.h + iy) * g.w + kx - g.pw;
                  for (std::size_t ox = x0; ox < x1; ++ox) {
                    orow[ox] += wv * ip[ibase + ox * g.sw];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// Any of gx, gw, gb may be null when that gradient is not needed.
void conv_backward(const ConvGeom& g, const double* x, const double* wt,
                   const double* gout, double* gx, double* gw, double* gb) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oc = 0; oc < g.c_out; ++oc) {
      const double* gp = gout + (b * g.c_out + oc) * g.out_plane();
      if (gb) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.out_plane(); ++i) s += gp[i];
        gb[oc] += s;
      }
      if (!gx && !gw) continue;
      for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        const std::size_t in_off = (b * g.c_in + ic) * g.in_plane();
        const std::size_t w_off = (oc * g.c_in + ic) * g.kd * g.kh * g.kw;
        for (std::size_t kz = 0; kz < g.kd; ++kz) {
          auto [z0, z1] = valid_range(g.d, g.od, kz, g.sd, g.pd);
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            auto [y0, y1] = valid_range(g.h, g.oh, ky, g.sh, g.ph);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              auto [x0, x1] = valid_range(g.w, g.ow, kx, g.sw, g.pw);
              const std::size_t widx = w_off + (kz * g.kh + ky) * g.kw + kx;
              const double wv = wt[widx];
              double wacc = 0.0;
              for (std::size_t oz = z0; oz < z1; ++oz) {
                const std::size_t iz = oz * g.sd + kz - g.pd;
                for (std::size_t oy = y0; oy < y1; ++oy) {
                  const std::size_t iy = oy * g.sh + ky - g.ph;
                  const double* grow = gp + (oz * g.oh + oy) * g.ow;
                  const std::size_t ibase =
                      in_off + (iz * g.h + iy) * g.w + kx - g.pw;
                  if (gw) {
                    for (std::size_t ox = x0; ox < x1; ++ox) {
                      wacc += grow[ox] * x[ibase + ox * g.sw];
                    }
                  }
                  if (gx) {
                    for (std::size_t ox = x0; ox < x1; ++ox) {
                      gx[ibase + ox * g.sw] += wv * grow[ox];
                    }
                  }
                }
              }
              if (gw) gw[widx] += wacc;
            }
          }
        }
      }
    }
  }
}

Tensor run_conv(const Tensor& input, const Tensor& weight, const Tensor& bias,
                const ConvGeom& g, Shape out_shape, const char* op) {
  std::vector<double> out(g.batch * g.c_out * g.out_plane());
  conv_forward(g, input.data().data(), weight.data().data(),
               bias.data().data(), out.data());
  return detail::make_result(
      std::move(out_shape), std::move(out), {input, weight, bias},
      [input, weight, bias, g](TensorImpl& self) {
        std::vector<double> gx, gw, gb;
        if (input.requires_grad()) gx.assign(input.numel(), 0.0);
        if (weight.requires_grad()) gw.assign(weight.numel(), 0.0);
        if (bias.requires_grad()) gb.assign(bias.numel(), 0.0);
        conv_backward(g, input.data().data(), weight.data().data(),
                      self.grad.data(), gx.empty() ? nullptr : gx.data(),
                      gw.empty() ? nullptr : gw.data(),
                      gb.empty() ? nullptr : gb.data());
        accumulate(input, gx);
        accumulate(weight, gw);
        accumulate(bias, gb);
      },
      op);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  const char* op = "conv2d";
  if (input.rank() != 3 && input.rank() != 4) {
    shape_fail(op, "input must be [C,H,W] or [B,C,H,W], got " +
                       shape_str(input.shape()));
  }
  if (weight.rank() != 4) {
    shape_fail(op, "weight must be [C_out,C_in,kh,kw], got " +
                       shape_str(weight.shape()));
  }
  const bool batched = input.rank() == 4;
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.batch = batched ? input.dim(0) : 1;
  g.c_in = input.dim(off);
  g.c_out = weight.dim(0);
  g.d = 1;
  g.h = input.dim(off + 1);
  g.w = input.dim(off + 2);
  g.kd = 1;
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  if (weight.dim(1) != g.c_in) {
    shape_fail(op, "weight expects " + std::to_string(weight.dim(1)) +
                       " input channels but input has " +
                       std::to_string(g.c_in));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) shape_fail(op, "kernel extents must be odd");
  if (stride < 1) shape_fail(op, "stride must be >= 1");
  if (bias.rank() != 1 || bias.dim(0) != g.c_out) {
    shape_fail(op, "bias must be [" + std::to_string(g.c_out) + "], got " +
                       shape_str(bias.shape()));
  }
  g.sd = 1;
  g.sh = g.sw = stride;
  g.pd = 0;
  g.ph = g.pw = padding;
  g.od = 1;
  g.oh = out_extent(g.h, g.kh, stride, padding, op);
  g.ow = out_extent(g.w, g.kw, stride, padding, op);
  Shape out_shape = batched ? Shape{g.batch, g.c_out, g.oh, g.ow}
                            : Shape{g.c_out, g.oh, g.ow};
  return run_conv(input, weight, bias, g, std::move(out_shape), op);
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Triple stride, Triple padding) {
  const char* op = "conv3d";
  if (input.rank() != 4 && input.rank() != 5) {
    shape_fail(op, "input must be [G,D,H,W] or [B,G,D,H,W], got " +
                       shape_str(input.shape()));
  }
  if (weight.rank() != 5) {
    shape_fail(op, "weight must be [G_out,G,kd,kh,kw], got " +
                       shape_str(weight.shape()));
  }
  const bool batched = input.rank() == 5;
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.batch = batched ? input.dim(0) : 1;
  g.c_in = input.dim(off);
  g.c_out = weight.dim(0);
  g.d = input.dim(off + 1);
  g.h = input.dim(off + 2);
  g.w = input.dim(off + 3);
  g.kd = weight.dim(2);
  g.kh = weight.dim(3);
  g.kw = weight.dim(4);
  if (weight.dim(1) != g.c_in) {
    shape_fail(op, "weight expects " + std::to_string(weight.dim(1)) +
                       " input groups but input has " + std::to_string(g.c_in));
  }
  if (g.kd % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0) {
    shape_fail(op, "kernel extents must be odd");
  }
  if (stride[0] < 1 || stride[1] < 1 || stride[2] < 1) {
    shape_fail(op, "strides must be >= 1");
  }
  if (bias.rank() != 1 || bias.dim(0) != g.c_out) {
    shape_fail(op, "bias must be [" + std::to_string(g.c_out) + "], got " +
                       shape_str(bias.shape()));
  }
  g.sd = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  g.pd = padding[0];
  g.ph = padding[1];
  g.pw = padding[2];
  g.od = out_extent(g.d, g.kd, g.sd, g.pd, op);
  g.oh = out_extent(g.h, g.kh, g.sh, g.ph, op);
  g.ow = out_extent(g.w, g.kw, g.sw, g.pw, op);
  Shape out_shape = batched ? Shape{g.batch, g.c_out, g.od, g.oh, g.ow}
                            : Shape{g.c_out, g.od, g.oh, g.ow};
  return run_conv(input, weight, bias, g, std::move(out_shape), op);
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [x](TensorImpl& self) {
        std::vector<double> gx(self.grad);
        auto xd = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (xd[i] <= 0.0) gx[i] = 0.0;
        }
        accumulate(x, gx);
      },
      "relu");
}

Tensor add(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    shape_fail("add", "shape mismatch " + shape_str(x.shape()) + " vs " +
                          shape_str(y.shape()));
  }
  std::vector<double> out(x.numel());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + yd[i];
  return detail::make_result(
      x.shape(), std::move(out), {x, y},
      [x, y](TensorImpl& self) {
        accumulate(x, self.grad);
        accumulate(y, self.grad);
      },
      "add");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [x, factor](TensorImpl& self) {
        std::vector<double> gx(self.grad);
        for (double& v : gx) v *= factor;
        accumulate(x, gx);
      },
      "scale");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result(
      {}, {s}, {x},
      [x](TensorImpl& self) {
        std::vector<double> gx(x.numel(), self.grad[0]);
        accumulate(x, gx);
      },
      "sum");
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  const char* op = "concat";
  if (xs.empty()) shape_fail(op, "no inputs");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) shape_fail(op, "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) shape_fail(op, "rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis && s[a] != first[a]) {
        shape_fail(op, "extent mismatch on axis " + std::to_string(a) + ": " +
                           shape_str(first) + " vs " + shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    offsets.push_back(offset);
    const std::size_t row = t.shape()[axis] * inner;
    auto d = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.begin() + o * row, row,
                  out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return detail::make_result(
      std::move(out_shape), std::move(out), inputs,
      [inputs, offsets, outer, inner, out_row, axis](TensorImpl& self) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const Tensor& t = inputs[k];
          if (!t.requires_grad()) continue;
          const std::size_t row = t.shape()[axis] * inner;
          std::vector<double> g(t.numel());
          for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(self.grad.begin() + o * out_row + offsets[k], row,
                        g.begin() + o * row);
          }
          accumulate(t, g);
        }
      },
      op);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail("slice", "axis out of range");
  if (begin >= end || end > s[axis]) {
    shape_fail("slice", "invalid range [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") on axis of extent " +
                            std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  std::vector<double> out(outer * out_row);
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + o * in_row + begin * inner, out_row,
                out.begin() + o * out_row);
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), {x},
      [x, outer, in_row, out_row, begin, inner](TensorImpl& self) {
        std::vector<double> g(x.numel(), 0.0);
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy_n(self.grad.begin() + o * out_row, out_row,
                      g.begin() + o * in_row + begin * inner);
        }
        accumulate(x, g);
      },
      "slice");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) shape_fail("gather_rows", "need at least one axis");
  const std::size_t n = x.dim(0);
  const std::size_t row = n == 0 ? 0 : x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  auto d = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(d.begin() + rows[r] * row, row, out.begin() + r * row);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_result(
      std::move(out_shape), std::move(out), {x},
      [x, idx, row](TensorImpl& self) {
        std::vector<double> g(x.numel(), 0.0);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t i = 0; i < row; ++i) g[idx[r] * row + i] += self.grad[r * row + i];
        }
        accumulate(x, g);
      },
      "gather_rows");
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " +
                              shape_str(new_shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(
      std::move(new_shape), std::move(out), {x},
      [x](TensorImpl& self) { accumulate(x, self.grad); }, "reshape");
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) shape_fail("global_avg_pool", "need at least 2 axes");
  const std::size_t plane = s[s.size() - 2] * s[s.size() - 1];
  if (plane == 0) shape_fail("global_avg_pool", "empty spatial extent");
  Shape out_shape(s.begin(), s.end() - 2);
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n, 0.0);
  auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += d[i * plane + j];
    out[i] = acc / static_cast<double>(plane);
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), {x},
      [x, plane, n](TensorImpl& self) {
        std::vector<double> g(x.numel());
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t i = 0; i < n; ++i) {
          std::fill_n(g.begin() + i * plane, plane, self.grad[i] * inv);
        }
        accumulate(x, g);
      },
      "global_avg_pool");
}

Tensor fully_connected(const Tensor& x, const Tensor& weight,
                       const Tensor& bias) {
  const char* op = "fully_connected";
  if (weight.rank() != 2) shape_fail(op, "weight must be [out,in]");
  const std::size_t n_out = weight.dim(0);
  const std::size_t n_in = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != n_out) shape_fail(op, "bias must be [out]");
  if (x.rank() != 1 && x.rank() != 2) shape_fail(op, "input must be [in] or [B,in]");
  const bool batched = x.rank() == 2;
  const std::size_t rows = batched ? x.dim(0) : 1;
  if (x.shape().back() != n_in) {
    shape_fail(op, "input features " + std::to_string(x.shape().back()) +
                       " != weight in-features " + std::to_string(n_in));
  }
  std::vector<double> out(rows * n_out);
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = bd[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += wd[o * n_in + i] * xd[r * n_in + i];
      out[r * n_out + o] = acc;
    }
  }
  Shape out_shape = batched ? Shape{rows, n_out} : Shape{n_out};
  return detail::make_result(
      std::move(out_shape), std::move(out), {x, weight, bias},
      [x, weight, bias, rows, n_in, n_out](TensorImpl& self) {
        const auto& g = self.grad;
        if (x.requires_grad()) {
          std::vector<double> gx(rows * n_in, 0.0);
          auto wd = weight.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < n_out; ++o)
              for (std::size_t i = 0; i < n_in; ++i)
                gx[r * n_in + i] += g[r * n_out + o] * wd[o * n_in + i];
          accumulate(x, gx);
        }
        if (weight.requires_grad()) {
          std::vector<double> gw(n_out * n_in, 0.0);
          auto xd = x.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < n_out; ++o)
              for (std::size_t i = 0; i < n_in; ++i)
                gw[o * n_in + i] += g[r * n_out + o] * xd[r * n_in + i];
          accumulate(weight, gw);
        }
        if (bias.requires_grad()) {
          std::vector<double> gb(n_out, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < n_out; ++o) gb[o] += g[r * n_out + o];
          accumulate(bias, gb);
        }
      },
      op);
}

Tensor l2_normalize(const Tensor& x, double eps) {
  if (!(eps > 0.0)) shape_fail("l2_normalize", "eps must be > 0");
  if (x.rank() < 1) shape_fail("l2_normalize", "need at least one axis");
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t i = 0; i < len; ++i) ss += xd[r * len + i] * xd[r * len + i];
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = xd[r * len + i] / norms[r];
  }
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [x, norms, rows, len](TensorImpl& self) {
        std::vector<double> gx(x.numel());
        auto xd = x.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double n = norms[r];
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += self.grad[r * len + i] * xd[r * len + i];
          const double n3 = n * n * n;
          for (std::size_t i = 0; i < len; ++i) {
            gx[r * len + i] = self.grad[r * len + i] / n - xd[r * len + i] * dot / n3;
          }
        }
        accumulate(x, gx);
      },
      "l2_normalize");
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> targets) {
  const char* op = "softmax_cross_entropy";
  if (logits.rank() != 1 && logits.rank() != 2) {
    shape_fail(op, "logits must be [N_id] or [B,N_id]");
  }
  const std::size_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t classes = logits.shape().back();
  if (targets.size() != rows) {
    shape_fail(op, std::to_string(targets.size()) + " targets for " +
                       std::to_string(rows) + " rows");
  }
  if (rows == 0) shape_fail(op, "empty batch");
  for (std::size_t t : targets) {
    if (t >= classes) {
      throw std::out_of_range(std::string(op) + ": target " +
                              std::to_string(t) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<double> probs(rows * classes);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = ld.data() + r * classes;
    const double zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = std::exp(z[c] - zmax - log_denom);
    }
    loss -= z[targets[r]] - zmax - log_denom;
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return detail::make_result(
      {}, {loss}, {logits},
      [logits, probs, tgt, rows, classes](TensorImpl& self) {
        std::vector<double> g(probs);
        for (std::size_t r = 0; r < rows; ++r) g[r * classes + tgt[r]] -= 1.0;
        const double s = self.grad[0] / static_cast<double>(rows);
        for (double& v : g) v *= s;
        accumulate(logits, g);
      },
      op);
}

Tensor pairwise_sq_distance(const Tensor& x) {
  if (x.rank() != 2) shape_fail("pairwise_sq_distance", "input must be [B,E]");
  const std::size_t n = x.dim(0);
  const std::size_t e = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < e; ++k) {
        const double diff = xd[i * e + k] - xd[j * e + k];
        acc += diff * diff;
      }
      out[i * n + j] = out[j * n + i] = 0.5 * acc;
    }
  }
  return detail::make_result(
      {n, n}, std::move(out), {x},
      [x, n, e](TensorImpl& self) {
        std::vector<double> gx(n * e, 0.0);
        auto xd = x.data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double g = self.grad[i * n + j] + self.grad[j * n + i];
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < e; ++k) {
              gx[i * e + k] += g * (xd[i * e + k] - xd[j * e + k]);
            }
          }
        }
        accumulate(x, gx);
      },
      "pairwise_sq_distance");
}

Tensor hinge_sum(const Tensor& distances, std::span<const HingeTriple> triples,
                 double margin) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
    shape_fail("hinge_sum", "distances must be square");
  }
  const std::size_t n = distances.dim(0);
  auto d = distances.data();
  double total = 0.0;
  std::vector<HingeTriple> active;
  for (const auto& t : triples) {
    if (t.anchor >= n || t.positive >= n || t.negative >= n) {
      throw std::out_of_range("hinge_sum: triple index outside batch");
    }
    const double v = margin + d[t.anchor * n + t.positive] -
                     d[t.anchor * n + t.negative];
    if (v > 0.0) {
      total += v;
      active.push_back(t);
    }
  }
  return detail::make_result(
      {}, {total}, {distances},
      [distances, active, n](TensorImpl& self) {
        std::vector<double> g(n * n, 0.0);
        const double s = self.grad[0];
        for (const auto& t : active) {
          g[t.anchor * n + t.positive] += s;
          g[t.anchor * n + t.negative] -= s;
        }
        accumulate(distances, g);
      },
      "hinge_sum");
}

}  // namespace xmodal
