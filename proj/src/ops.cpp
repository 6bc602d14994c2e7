// SPDX-License-Identifier: Apache-2.0
#include "timepro/ops.hpp"

#include <cmath>

namespace timepro {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_trailing(const Tensor& x, const Tensor& b, const char* op) {
  const Shape& xs = x.shape();
  const Shape& bs = b.shape();
  bool ok = bs.size() <= xs.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) {
    ok = bs[bs.size() - 1 - i] == xs[xs.size() - 1 - i];
  }
  if (!ok || b.numel() == 0) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(bs) + " onto " +
                     to_string(xs));
  }
}

// Applies a unary map with derivative; `fn` returns (value, derivative).
template <typename Fn>
Tensor unary(const Tensor& x, const char* op, Fn fn) {
  const Array& in = x.data();
  Array out(in.size());
  Array deriv(in.size());
  for (Index i = 0; i < in.size(); ++i) {
    const auto [v, d] = fn(in(i));
    out(i) = v;
    deriv(i) = d;
  }
  detail::Node* nx = x.node();
  return Tensor::make(x.shape(), std::move(out), op, {x},
                      [nx, deriv = std::move(deriv)](const Array& g) {
                        nx->accumulate_expr(g * deriv);
                      });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  detail::Node* nx = x.node();
  // Row-major storage is contiguous, so the value buffer is shared.
  return Tensor::make(std::move(shape), x.node()->value, "reshape", {x},
                      [nx](const Array& g) { nx->accumulate(g); });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  const Index rows = x.dim(-2);
  const Index cols = x.dim(-1);
  const Index batch = x.numel() / std::max<Index>(rows * cols, 1);
  Array out(x.numel());
  for (Index b = 0; b < batch; ++b) {
    ConstRowMap in(x.data().data() + b * rows * cols, rows, cols);
    RowMap o(out.data() + b * rows * cols, cols, rows);
    o = in.transpose();
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  detail::Node* nx = x.node();
  return Tensor::make(std::move(shape), std::move(out), "transpose_last2", {x},
                      [nx, batch, rows, cols](const Array& g) {
                        Array back(g.size());
                        for (Index b = 0; b < batch; ++b) {
                          ConstRowMap gi(g.data() + b * rows * cols, cols, rows);
                          RowMap o(back.data() + b * rows * cols, rows, cols);
                          o = gi.transpose();
                        }
                        nx->accumulate(back);
                      });
}

Tensor slice_last(const Tensor& x, Index begin, Index count) {
  const Index width = x.dim(-1);
  if (begin < 0 || count < 0 || begin + count > width) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside width " + std::to_string(width));
  }
  const Index rows = x.numel() / std::max<Index>(width, 1);
  ConstRowMap in(x.data().data(), rows, width);
  Array out(rows * count);
  RowMap(out.data(), rows, count) = in.middleCols(begin, count);
  Shape shape = x.shape();
  shape.back() = count;
  detail::Node* nx = x.node();
  return Tensor::make(std::move(shape), std::move(out), "slice_last", {x},
                      [nx, rows, width, begin, count](const Array& g) {
                        Array back = Array::Zero(rows * width);
                        RowMap(back.data(), rows, width).middleCols(begin, count) =
                            ConstRowMap(g.data(), rows, count);
                        nx->accumulate(back);
                      });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0) throw ShapeError("concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) throw ShapeError("concat_last: leading axes differ");
  }
  const Index wa = a.dim(-1);
  const Index wb = b.dim(-1);
  const Index rows = a.numel() / std::max<Index>(wa, 1);
  Array out(rows * (wa + wb));
  RowMap o(out.data(), rows, wa + wb);
  o.leftCols(wa) = ConstRowMap(a.data().data(), rows, wa);
  o.rightCols(wb) = ConstRowMap(b.data().data(), rows, wb);
  Shape shape = a.shape();
  shape.back() = wa + wb;
  detail::Node* na = a.node();
  detail::Node* nb = b.node();
  return Tensor::make(std::move(shape), std::move(out), "concat_last", {a, b},
                      [na, nb, rows, wa, wb](const Array& g) {
                        ConstRowMap gm(g.data(), rows, wa + wb);
                        if (na->requires_grad) {
                          Array ga(rows * wa);
                          RowMap(ga.data(), rows, wa) = gm.leftCols(wa);
                          na->accumulate(ga);
                        }
                        if (nb->requires_grad) {
                          Array gb(rows * wb);
                          RowMap(gb.data(), rows, wb) = gm.rightCols(wb);
                          nb->accumulate(gb);
                        }
                      });
}

Tensor expand_last(const Tensor& x, Index count) {
  if (x.rank() == 0 || x.dim(-1) != 1) throw ShapeError("expand_last needs a trailing axis of 1");
  const Index rows = x.numel();
  Array out(rows * count);
  RowMap(out.data(), rows, count) = x.data().matrix().replicate(1, count);
  Shape shape = x.shape();
  shape.back() = count;
  detail::Node* nx = x.node();
  return Tensor::make(std::move(shape), std::move(out), "expand_last", {x},
                      [nx, rows, count](const Array& g) {
                        nx->accumulate(ConstRowMap(g.data(), rows, count).rowwise().sum().array());
                      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  detail::Node* na = a.node();
  detail::Node* nb = b.node();
  return Tensor::make(a.shape(), a.data() + b.data(), "add", {a, b}, [na, nb](const Array& g) {
    if (na->requires_grad) na->accumulate(g);
    if (nb->requires_grad) nb->accumulate(g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  detail::Node* na = a.node();
  detail::Node* nb = b.node();
  return Tensor::make(a.shape(), a.data() - b.data(), "sub", {a, b}, [na, nb](const Array& g) {
    if (na->requires_grad) na->accumulate(g);
    if (nb->requires_grad) nb->accumulate_expr(-g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  detail::Node* na = a.node();
  detail::Node* nb = b.node();
  auto va = a.node()->value;
  auto vb = b.node()->value;
  return Tensor::make(a.shape(), a.data() * b.data(), "mul", {a, b},
                      [na, nb, va, vb](const Array& g) {
                        if (na->requires_grad) na->accumulate_expr(g * *vb);
                        if (nb->requires_grad) nb->accumulate_expr(g * *va);
                      });
}

Tensor scale(const Tensor& x, double factor) {
  detail::Node* nx = x.node();
  return Tensor::make(x.shape(), x.data() * factor, "scale", {x},
                      [nx, factor](const Array& g) { nx->accumulate_expr(g * factor); });
}

Tensor add_scalar(const Tensor& x, double value) {
  detail::Node* nx = x.node();
  return Tensor::make(x.shape(), x.data() + value, "add_scalar", {x},
                      [nx](const Array& g) { nx->accumulate(g); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) {
    const double e = std::exp(v);
    return std::pair{e, e};
  });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return std::pair{v * v, 2.0 * v}; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", [](double v) {
    const double s = stable_sigmoid(v);
    return std::pair{s, s * (1.0 - s)};
  });
}

Tensor silu(const Tensor& x) {
  return unary(x, "silu", [](double v) {
    const double s = stable_sigmoid(v);
    return std::pair{v * s, s * (1.0 + v * (1.0 - s))};
  });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", [](double v) {
    const double value = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    return std::pair{value, stable_sigmoid(v)};
  });
}

Tensor expm1_ratio(const Tensor& x) {
  return unary(x, "expm1_ratio", [](double v) {
    double value;
    double deriv;
    if (std::abs(v) < 1e-6) {
      value = 1.0 + v / 2.0 + v * v / 6.0;
    } else {
      value = std::expm1(v) / v;
    }
    if (std::abs(v) < 1e-3) {
      deriv = 0.5 + v / 3.0 + v * v / 8.0 + v * v * v / 30.0;
    } else {
      deriv = (v * std::exp(v) - std::expm1(v)) / (v * v);
    }
    return std::pair{value, deriv};
  });
}

Tensor add_bcast(const Tensor& x, const Tensor& b) {
  require_trailing(x, b, "add_bcast");
  const Index width = b.numel();
  const Index rows = x.numel() / width;
  Array out(x.numel());
  RowMap(out.data(), rows, width) =
      ConstRowMap(x.data().data(), rows, width).rowwise() + b.data().matrix().transpose();
  detail::Node* nx = x.node();
  detail::Node* nb = b.node();
  return Tensor::make(x.shape(), std::move(out), "add_bcast", {x, b},
                      [nx, nb, rows, width](const Array& g) {
                        if (nx->requires_grad) nx->accumulate(g);
                        if (nb->requires_grad) {
                          nb->accumulate(
                              ConstRowMap(g.data(), rows, width).colwise().sum().transpose().array());
                        }
                      });
}

Tensor mul_bcast(const Tensor& x, const Tensor& b) {
  require_trailing(x, b, "mul_bcast");
  const Index width = b.numel();
  const Index rows = x.numel() / width;
  Array out(x.numel());
  RowMap(out.data(), rows, width) = ConstRowMap(x.data().data(), rows, width).array().rowwise() *
                                    b.data().transpose();
  detail::Node* nx = x.node();
  detail::Node* nb = b.node();
  auto vx = x.node()->value;
  auto vb = b.node()->value;
  return Tensor::make(
      x.shape(), std::move(out), "mul_bcast", {x, b},
      [nx, nb, vx, vb, rows, width](const Array& g) {
        ConstRowMap gm(g.data(), rows, width);
        if (nx->requires_grad) {
          Array gx(rows * width);
          RowMap(gx.data(), rows, width) = gm.array().rowwise() * vb->transpose();
          nx->accumulate(gx);
        }
        if (nb->requires_grad) {
          ConstRowMap xm(vx->data(), rows, width);
          nb->accumulate((gm.array() * xm.array()).colwise().sum().transpose());
        }
      });
}

Tensor row_affine(const Tensor& x, const Array& row_scale, const Array& row_shift) {
  if (x.rank() == 0) throw ShapeError("row_affine needs rank >= 1");
  const Index width = x.dim(-1);
  const Index rows = x.numel() / std::max<Index>(width, 1);
  if (row_scale.size() != rows || row_shift.size() != rows) {
    throw ShapeError("row_affine: expected " + std::to_string(rows) + " row coefficients");
  }
  Array out(x.numel());
  RowMap o(out.data(), rows, width);
  o = ConstRowMap(x.data().data(), rows, width);
  o.array().colwise() *= row_scale;
  o.array().colwise() += row_shift;
  detail::Node* nx = x.node();
  return Tensor::make(x.shape(), std::move(out), "row_affine", {x},
                      [nx, rows, width, row_scale](const Array& g) {
                        Array gx(rows * width);
                        RowMap(gx.data(), rows, width) =
                            ConstRowMap(g.data(), rows, width).array().colwise() * row_scale;
                        nx->accumulate(gx);
                      });
}

Tensor sum(const Tensor& x) {
  detail::Node* nx = x.node();
  const Index n = x.numel();
  return Tensor::make({}, Array::Constant(1, x.data().sum()), "sum", {x},
                      [nx, n](const Array& g) { nx->accumulate_expr(Array::Constant(n, g(0))); });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("mean_last needs rank >= 1");
  const Index width = x.dim(-1);
  if (width == 0) throw ShapeError("mean_last over empty axis");
  const Index rows = x.numel() / width;
  Array out = ConstRowMap(x.data().data(), rows, width).rowwise().mean().array();
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  detail::Node* nx = x.node();
  return Tensor::make(std::move(shape), std::move(out), "mean_last", {x},
                      [nx, rows, width](const Array& g) {
                        Array gx(rows * width);
                        RowMap(gx.data(), rows, width) =
                            (g / static_cast<double>(width)).matrix().replicate(1, width);
                        nx->accumulate(gx);
                      });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse_loss");
  return mean(square(sub(prediction, target)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = a.dim(0);
  const Index k = a.dim(1);
  const Index n = b.dim(1);
  Array out(m * n);
  RowMap(out.data(), m, n).noalias() =
      ConstRowMap(a.data().data(), m, k) * ConstRowMap(b.data().data(), k, n);
  detail::Node* na = a.node();
  detail::Node* nb = b.node();
  auto va = a.node()->value;
  auto vb = b.node()->value;
  return Tensor::make({m, n}, std::move(out), "matmul", {a, b},
                      [na, nb, va, vb, m, k, n](const Array& g) {
                        ConstRowMap gm(g.data(), m, n);
                        if (na->requires_grad) {
                          Array ga(m * k);
                          RowMap(ga.data(), m, k).noalias() =
                              gm * ConstRowMap(vb->data(), k, n).transpose();
                          na->accumulate(ga);
                        }
                        if (nb->requires_grad) {
                          Array gb(k * n);
                          RowMap(gb.data(), k, n).noalias() =
                              ConstRowMap(va->data(), m, k).transpose() * gm;
                          nb->accumulate(gb);
                        }
                      });
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              Index padding) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("conv1d: input must be [C,T] or [B,C,T]");
  if (kernel.rank() != 3) throw ShapeError("conv1d: kernel must be [C_out, C, k]");
  if (padding < 0) throw ShapeError("conv1d: negative padding");
  const bool batched = x.rank() == 3;
  const Index batch = batched ? x.dim(0) : 1;
  const Index channels = x.dim(-2);
  const Index length = x.dim(-1);
  const Index out_channels = kernel.dim(0);
  const Index width = kernel.dim(2);
  if (kernel.dim(1) != channels) {
    throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, got " + std::to_string(channels));
  }
  if (width > length + 2 * padding) {
    throw ShapeError("conv1d: kernel of length " + std::to_string(width) +
                     " exceeds padded input of length " + std::to_string(length + 2 * padding));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_channels)) {
    throw ShapeError("conv1d: bias must have C_out entries");
  }
  const Index out_len = length + 2 * padding - width + 1;
  const Index patch = channels * width;

  // im2col: cols[c*k + j, t] = x[c, t + j - padding]
  auto cols = std::make_shared<Array>(Array::Zero(batch * patch * out_len));
  for (Index b = 0; b < batch; ++b) {
    const double* xb = x.data().data() + b * channels * length;
    double* cb = cols->data() + b * patch * out_len;
    for (Index c = 0; c < channels; ++c) {
      for (Index j = 0; j < width; ++j) {
        double* row = cb + (c * width + j) * out_len;
        for (Index t = 0; t < out_len; ++t) {
          const Index src = t + j - padding;
          if (src >= 0 && src < length) row[t] = xb[c * length + src];
        }
      }
    }
  }
  ConstRowMap kmat(kernel.data().data(), out_channels, patch);
  Array out(batch * out_channels * out_len);
  for (Index b = 0; b < batch; ++b) {
    RowMap ob(out.data() + b * out_channels * out_len, out_channels, out_len);
    ob.noalias() = kmat * ConstRowMap(cols->data() + b * patch * out_len, patch, out_len);
    if (bias) ob.colwise() += bias->data().matrix();
  }

  Shape shape = batched ? Shape{batch, out_channels, out_len} : Shape{out_channels, out_len};
  std::vector<Tensor> parents{x, kernel};
  if (bias) parents.push_back(*bias);
  detail::Node* nx = x.node();
  detail::Node* nk = kernel.node();
  detail::Node* nbias = bias ? bias->node() : nullptr;
  auto kval = kernel.node()->value;
  return Tensor::make(
      std::move(shape), std::move(out), "conv1d", std::move(parents),
      [=](const Array& g) {
        ConstRowMap km(kval->data(), out_channels, patch);
        Array gk = Array::Zero(out_channels * patch);
        Array gb = Array::Zero(out_channels);
        Array gx = nx->requires_grad ? Array::Zero(batch * channels * length) : Array();
        for (Index b = 0; b < batch; ++b) {
          ConstRowMap gbm(g.data() + b * out_channels * out_len, out_channels, out_len);
          ConstRowMap cb(cols->data() + b * patch * out_len, patch, out_len);
          if (nk->requires_grad) RowMap(gk.data(), out_channels, patch).noalias() += gbm * cb.transpose();
          if (nbias && nbias->requires_grad) gb += gbm.rowwise().sum().array();
          if (nx->requires_grad) {
            RowMatrix gcols = km.transpose() * gbm;
            double* gxb = gx.data() + b * channels * length;
            for (Index c = 0; c < channels; ++c) {
              for (Index j = 0; j < width; ++j) {
                for (Index t = 0; t < out_len; ++t) {
                  const Index src = t + j - padding;
                  if (src >= 0 && src < length) gxb[c * length + src] += gcols(c * width + j, t);
                }
              }
            }
          }
        }
        if (nx->requires_grad) nx->accumulate(gx);
        if (nk->requires_grad) nk->accumulate(gk);
        if (nbias && nbias->requires_grad) nbias->accumulate(gb);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm needs rank >= 1");
  const Index width = x.dim(-1);
  if (gain.numel() != width || offset.numel() != width) {
    throw ShapeError("layer_norm: gain/offset must match the last axis");
  }
  const Index rows = x.numel() / width;
  ConstRowMap xm(x.data().data(), rows, width);
  auto normalized = std::make_shared<Array>(rows * width);
  Array inv_std(rows);
  RowMap nm(normalized->data(), rows, width);
  for (Index r = 0; r < rows; ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    nm.row(r) = (xm.row(r).array() - mu) * inv_std(r);
  }
  Array out(rows * width);
  RowMap(out.data(), rows, width) =
      (nm.array().rowwise() * gain.data().transpose()).rowwise() + offset.data().transpose();
  detail::Node* nx = x.node();
  detail::Node* ng = gain.node();
  detail::Node* no = offset.node();
  auto gval = gain.node()->value;
  return Tensor::make(
      x.shape(), std::move(out), "layer_norm", {x, gain, offset},
      [=, inv_std = std::move(inv_std)](const Array& g) {
        ConstRowMap gm(g.data(), rows, width);
        ConstRowMap nmv(normalized->data(), rows, width);
        if (ng->requires_grad) ng->accumulate((gm.array() * nmv.array()).colwise().sum().transpose());
        if (no->requires_grad) no->accumulate(gm.colwise().sum().transpose().array());
        if (nx->requires_grad) {
          Array gx(rows * width);
          RowMap gxm(gx.data(), rows, width);
          for (Index r = 0; r < rows; ++r) {
            const Eigen::ArrayXd dn = gm.row(r).array().transpose() * *gval;
            const Eigen::ArrayXd nr = nmv.row(r).array().transpose();
            const double mean_dn = dn.mean();
            const double mean_dn_n = (dn * nr).mean();
            gxm.row(r) = (inv_std(r) * (dn - mean_dn - nr * mean_dn_n)).transpose();
          }
          nx->accumulate(gx);
        }
      });
}

Tensor linear_recurrence(const Tensor& decay, const Tensor& input, bool reverse) {
  require_same_shape(decay, input, "linear_recurrence");
  if (input.rank() != 3) throw ShapeError("linear_recurrence expects [outer, seq, feat]");
  const Index outer = input.dim(0);
  const Index seq = input.dim(1);
  const Index feat = input.dim(2);
  auto states = std::make_shared<Array>(input.numel());
  const double* a = decay.data().data();
  const double* u = input.data().data();
  double* h = states->data();
  auto step_of = [seq, reverse](Index i) { return reverse ? seq - 1 - i : i; };
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < seq; ++i) {
      const Index s = step_of(i);
      const Index at = (o * seq + s) * feat;
      if (i == 0) {
        for (Index f = 0; f < feat; ++f) h[at + f] = u[at + f];
      } else {
        const Index prev = (o * seq + step_of(i - 1)) * feat;
        for (Index f = 0; f < feat; ++f) h[at + f] = a[at + f] * h[prev + f] + u[at + f];
      }
    }
  }
  detail::Node* nd = decay.node();
  detail::Node* ni = input.node();
  auto dval = decay.node()->value;
  return Tensor::make(
      input.shape(), states, "linear_recurrence", {decay, input},
      [=](const Array& g) {
        Array gu(outer * seq * feat);
        Array ga = Array::Zero(outer * seq * feat);
        Eigen::ArrayXd carry(feat);
        const double* av = dval->data();
        const double* hv = states->data();
        for (Index o = 0; o < outer; ++o) {
          carry.setZero();
          for (Index i = seq - 1; i >= 0; --i) {
            const Index at = (o * seq + step_of(i)) * feat;
            for (Index f = 0; f < feat; ++f) {
              const double lambda = g(at + f) + carry(f);
              gu(at + f) = lambda;
              carry(f) = lambda * av[at + f];
            }
            if (i > 0) {
              const Index prev = (o * seq + step_of(i - 1)) * feat;
              for (Index f = 0; f < feat; ++f) ga(at + f) = gu(at + f) * hv[prev + f];
            }
          }
        }
        if (ni->requires_grad) ni->accumulate(gu);
        if (nd->requires_grad) nd->accumulate(ga);
      });
}

InterpPoint interp_point(double coord, Index length) {
  InterpPoint p;
  const double top = static_cast<double>(length - 1);
  p.clamped = coord < 0.0 || coord > top;
  const double c = std::clamp(coord, 0.0, top);
  if (length == 1) return p;
  Index lo = static_cast<Index>(std::floor(c));
  if (lo >= length - 1) lo = length - 2;
  p.lo = lo;
  p.hi = lo + 1;
  p.frac = c - static_cast<double>(lo);
  return p;
}

Tensor linear_interp1d(const Tensor& values, const Tensor& coord) {
  if (values.rank() != 1 || values.numel() == 0) {
    throw ShapeError("linear_interp1d needs non-empty values[T]");
  }
  if (coord.numel() != 1) throw ShapeError("linear_interp1d needs a scalar coordinate");
  const Index length = values.numel();
  const InterpPoint p = interp_point(coord.item(), length);
  const Array& v = values.data();
  const double out = v(p.lo) * (1.0 - p.frac) + v(p.hi) * p.frac;
  detail::Node* nv = values.node();
  detail::Node* nc = coord.node();
  const double slope = p.clamped || length == 1 ? 0.0 : v(p.hi) - v(p.lo);
  return Tensor::make({}, Array::Constant(1, out), "linear_interp1d", {values, coord},
                      [nv, nc, p, slope, length](const Array& g) {
                        if (nv->requires_grad) {
                          Array gv = Array::Zero(length);
                          gv(p.lo) += g(0) * (1.0 - p.frac);
                          gv(p.hi) += g(0) * p.frac;
                          nv->accumulate(gv);
                        }
                        if (nc->requires_grad) nc->accumulate(Array::Constant(1, g(0) * slope));
                      });
}

Tensor deformable_sample(const Tensor& values, const Tensor& offsets, std::span<const double> base,
                         bool residual) {
  if (values.rank() != 3 || offsets.rank() != 3) {
    throw ShapeError("deformable_sample expects values [R,P,C] and offsets [R,P,M]");
  }
  const Index rows = values.dim(0);
  const Index length = values.dim(1);
  const Index channels = values.dim(2);
  const Index samples = static_cast<Index>(base.size());
  if (offsets.dim(0) != rows || offsets.dim(1) != length || offsets.dim(2) != samples) {
    throw ShapeError("deformable_sample: offsets " + to_string(offsets.shape()) +
                     " do not match values " + to_string(values.shape()) + " with M=" +
                     std::to_string(samples));
  }
  if (length == 0) throw ShapeError("deformable_sample over empty axis");
  std::vector<InterpPoint> points(static_cast<std::size_t>(rows * length * samples));
  const double* off = offsets.data().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index p = 0; p < length; ++p) {
      for (Index m = 0; m < samples; ++m) {
        const Index at = (r * length + p) * samples + m;
        const double coord = static_cast<double>(p) + base[static_cast<std::size_t>(m)] + off[at];
        points[static_cast<std::size_t>(at)] = interp_point(coord, length);
      }
    }
  }
  const double* v = values.data().data();
  Array out(rows * length * channels * samples);
  for (Index r = 0; r < rows; ++r) {
    for (Index p = 0; p < length; ++p) {
      const double* self = v + (r * length + p) * channels;
      for (Index m = 0; m < samples; ++m) {
        const InterpPoint& pt = points[static_cast<std::size_t>((r * length + p) * samples + m)];
        const double* lo = v + (r * length + pt.lo) * channels;
        const double* hi = v + (r * length + pt.hi) * channels;
        double* o = out.data() + ((r * length + p) * channels) * samples + m;
        for (Index c = 0; c < channels; ++c) {
          double s = lo[c] * (1.0 - pt.frac) + hi[c] * pt.frac;
          if (residual) s += self[c];
          o[c * samples] = s;
        }
      }
    }
  }
  detail::Node* nv = values.node();
  detail::Node* no = offsets.node();
  auto vval = values.node()->value;
  return Tensor::make(
      {rows, length, channels, samples}, std::move(out), "deformable_sample", {values, offsets},
      [=, points = std::move(points)](const Array& g) {
        Array gv = nv->requires_grad ? Array::Zero(rows * length * channels) : Array();
        Array go = no->requires_grad ? Array::Zero(rows * length * samples) : Array();
        const double* vv = vval->data();
        for (Index r = 0; r < rows; ++r) {
          for (Index p = 0; p < length; ++p) {
            for (Index m = 0; m < samples; ++m) {
              const Index at = (r * length + p) * samples + m;
              const InterpPoint& pt = points[static_cast<std::size_t>(at)];
              const double* gr = g.data() + ((r * length + p) * channels) * samples + m;
              const Index lo = (r * length + pt.lo) * channels;
              const Index hi = (r * length + pt.hi) * channels;
              const Index self = (r * length + p) * channels;
              double slope_sum = 0.0;
              for (Index c = 0; c < channels; ++c) {
                const double gc = gr[c * samples];
                if (nv->requires_grad) {
                  gv(lo + c) += gc * (1.0 - pt.frac);
                  gv(hi + c) += gc * pt.frac;
                  if (residual) gv(self + c) += gc;
                }
                slope_sum += gc * (vv[hi + c] - vv[lo + c]);
              }
              if (no->requires_grad && !pt.clamped && length > 1) go(at) = slope_sum;
            }
          }
        }
        if (nv->requires_grad) nv->accumulate(gv);
        if (no->requires_grad) no->accumulate(go);
      });
}

}  // namespace timepro
