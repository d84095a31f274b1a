#include "tdsim/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "tdsim/errors.hpp"

namespace tdsim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void expect_rank(const Var& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(v.shape()));
  }
}

void expect_axis(const char* what, const char* axis, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": axis " + axis + " is " + std::to_string(got) +
                         ", expected " + std::to_string(want));
  }
}

void accumulate(const Var& v, const Tensor& g) {
  if (!v.requires_grad()) return;
  auto dst = grad_buffer(v).data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Unfolds one [C,H,W] image into a [C*k*k, H*W] patch matrix.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            double* cols) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            row[y * w + x] = (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 &&
                              sx < static_cast<long>(w))
                                 ? img[(ci * h + sy) * w + sx]
                                 : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            double* img) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            img[(ci * h + sy) * w + sx] += row[y * w + x];
          }
        }
      }
    }
  }
}

}  // namespace

Var linear(const Var& input, const Var& weight, const Var& bias) {
  expect_rank(input, 2, "linear input");
  expect_rank(weight, 2, "linear weight");
  expect_rank(bias, 1, "linear bias");
  const std::size_t n = input.shape()[0], in = input.shape()[1], out = weight.shape()[1];
  expect_axis("linear", "weight[0]", weight.shape()[0], in);
  expect_axis("linear", "bias[0]", bias.shape()[0], out);

  Tensor y({n, out});
  {
    CMapMat x(input.value().data().data(), n, in);
    CMapMat wm(weight.value().data().data(), in, out);
    MapMat ym(y.data().data(), n, out);
    ym.noalias() = x * wm;
    Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data().data(), out);
    ym.rowwise() += b;
  }
  return make_op("linear", std::move(y), {input, weight, bias},
                 [input, weight, bias, n, in, out](const Tensor& g) {
                   CMapMat gm(g.data().data(), n, out);
                   if (input.requires_grad()) {
                     MapMat gx(grad_buffer(input).data().data(), n, in);
                     CMapMat wm(weight.value().data().data(), in, out);
                     gx.noalias() += gm * wm.transpose();
                   }
                   if (weight.requires_grad()) {
                     MapMat gw(grad_buffer(weight).data().data(), in, out);
                     CMapMat x(input.value().data().data(), n, in);
                     gw.noalias() += x.transpose() * gm;
                   }
                   if (bias.requires_grad()) {
                     Eigen::Map<Eigen::RowVectorXd> gb(grad_buffer(bias).data().data(), out);
                     gb += gm.colwise().sum();
                   }
                 });
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias) {
  expect_rank(input, 4, "conv2d input");
  expect_rank(kernel, 4, "conv2d kernel");
  expect_rank(bias, 1, "conv2d bias");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  const std::size_t n = is[0], c = is[1], h = is[2], w = is[3];
  const std::size_t f = ks[0], k = ks[2];
  expect_axis("conv2d", "C (kernel[1])", ks[1], c);
  if (ks[3] != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square with odd size, got " + shape_str(ks));
  }
  expect_axis("conv2d", "bias[0]", bias.shape()[0], f);

  const std::size_t ckk = c * k * k, hw = h * w;
  auto cols = std::make_shared<std::vector<double>>(n * ckk * hw);
  Tensor y({n, f, h, w});
  CMapMat km(kernel.value().data().data(), f, ckk);
  Eigen::Map<const Eigen::VectorXd> b(bias.value().data().data(), f);
  for (std::size_t i = 0; i < n; ++i) {
    double* col = cols->data() + i * ckk * hw;
    im2col(input.value().data().data() + i * c * hw, c, h, w, k, col);
    MapMat ym(y.data().data() + i * f * hw, f, hw);
    ym.noalias() = km * CMapMat(col, ckk, hw);
    ym.colwise() += b;
  }
  return make_op(
      "conv2d", std::move(y), {input, kernel, bias},
      [input, kernel, bias, cols, n, c, h, w, f, k, ckk, hw](const Tensor& g) {
        CMapMat km(kernel.value().data().data(), f, ckk);
        RowMat dcol(ckk, hw);
        for (std::size_t i = 0; i < n; ++i) {
          CMapMat gm(g.data().data() + i * f * hw, f, hw);
          CMapMat col(cols->data() + i * ckk * hw, ckk, hw);
          if (kernel.requires_grad()) {
            MapMat gk(grad_buffer(kernel).data().data(), f, ckk);
            gk.noalias() += gm * col.transpose();
          }
          if (bias.requires_grad()) {
            Eigen::Map<Eigen::VectorXd> gb(grad_buffer(bias).data().data(), f);
            gb += gm.rowwise().sum();
          }
          if (input.requires_grad()) {
            dcol.noalias() = km.transpose() * gm;
            col2im(dcol.data(), c, h, w, k, grad_buffer(input).data().data() + i * c * hw);
          }
        }
      });
}

Var pool2d(const Var& input, PoolKind kind) {
  expect_rank(input, 4, "pool2d input");
  const auto& s = input.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  if (h % 2 != 0) throw DimensionError("pool2d: axis H is odd (" + std::to_string(h) + ")");
  if (w % 2 != 0) throw DimensionError("pool2d: axis W is odd (" + std::to_string(w) + ")");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == PoolKind::Max) argmax->resize(y.size());
  const auto x = input.value().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t yy = 0; yy < oh; ++yy) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        const std::size_t i00 = base + (2 * yy) * w + 2 * xx;
        const std::size_t idx[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
        if (kind == PoolKind::Max) {
          std::size_t best = idx[0];
          for (std::size_t j = 1; j < 4; ++j) {
            if (x[idx[j]] > x[best]) best = idx[j];
          }
          y[o] = x[best];
          (*argmax)[o] = best;
        } else {
          y[o] = 0.25 * (x[idx[0]] + x[idx[1]] + x[idx[2]] + x[idx[3]]);
        }
      }
    }
  }
  return make_op(kind == PoolKind::Max ? "max_pool2d" : "avg_pool2d", std::move(y), {input},
                 [input, argmax, kind, n, c, h, w, oh, ow](const Tensor& g) {
                   auto gx = grad_buffer(input).data();
                   if (kind == PoolKind::Max) {
                     for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                     return;
                   }
                   std::size_t o = 0;
                   for (std::size_t plane = 0; plane < n * c; ++plane) {
                     const std::size_t base = plane * h * w;
                     for (std::size_t yy = 0; yy < oh; ++yy) {
                       for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
                         const std::size_t i00 = base + (2 * yy) * w + 2 * xx;
                         const double q = 0.25 * g[o];
                         gx[i00] += q;
                         gx[i00 + 1] += q;
                         gx[i00 + w] += q;
                         gx[i00 + w + 1] += q;
                       }
                     }
                   }
                 });
}

Var global_avg_pool(const Var& input) {
  expect_rank(input, 4, "global_avg_pool input");
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], hw = s[2] * s[3];
  Tensor y({s[0], s[1]});
  const auto x = input.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    y[p] = acc / static_cast<double>(hw);
  }
  return make_op("global_avg_pool", std::move(y), {input}, [input, planes, hw](const Tensor& g) {
    auto gx = grad_buffer(input).data();
    for (std::size_t p = 0; p < planes; ++p) {
      const double q = g[p] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += q;
    }
  });
}

Var relu(const Var& input) {
  Tensor y = input.value();
  for (auto& v : y.data()) v = v < 0.0 ? 0.0 : v;  // NaN propagates
  return make_op("relu", std::move(y), {input}, [input](const Tensor& g) {
    auto gx = grad_buffer(input).data();
    const auto x = input.value().data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (x[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var sigmoid(const Var& input) {
  Tensor y = input.value();
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  auto out = std::make_shared<Tensor>(y);
  return make_op("sigmoid", std::move(y), {input}, [input, out](const Tensor& g) {
    auto gx = grad_buffer(input).data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = (*out)[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
}

Var softmax(const Var& logits) {
  expect_rank(logits, 2, "softmax input");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (k < 2) throw DimensionError("softmax: axis K must be >= 2, got " + std::to_string(k));
  const auto z = logits.value().data();
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
  }
  Tensor p({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * k;
    double* pr = p.data().data() + r * k;
    const double m = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      pr[j] = std::exp(zr[j] - m);
      total += pr[j];
    }
    for (std::size_t j = 0; j < k; ++j) pr[j] /= total;
  }
  auto saved = std::make_shared<Tensor>(p);
  return make_op("softmax", std::move(p), {logits}, [logits, saved, n, k](const Tensor& g) {
    auto gz = grad_buffer(logits).data();
    for (std::size_t r = 0; r < n; ++r) {
      const double* pr = saved->data().data() + r * k;
      const double* gr = g.data().data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gr[j] * pr[j];
      for (std::size_t j = 0; j < k; ++j) gz[r * k + j] += pr[j] * (gr[j] - dot);
    }
  });
}

Var cross_entropy(const Var& probs, const Tensor& target_onehot) {
  expect_rank(probs, 2, "cross_entropy probs");
  if (target_onehot.shape() != probs.shape()) {
    throw DimensionError("cross_entropy: target shape " + shape_str(target_onehot.shape()) +
                         " does not match probs " + shape_str(probs.shape()));
  }
  const std::size_t n = probs.shape()[0], k = probs.shape()[1];
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = target_onehot[r * k + j];
      if (t == 1.0) {
        ++ones;
      } else if (t != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) {
      throw ValidationError("cross_entropy: target row " + std::to_string(r) + " is not one-hot");
    }
  }
  const auto p = probs.value().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (target_onehot[i] != 0.0) {
      loss -= target_onehot[i] * std::log(std::clamp(p[i], kProbClamp, 1.0));
    }
  }
  loss /= static_cast<double>(n);
  auto target = std::make_shared<Tensor>(target_onehot);
  return make_op("cross_entropy", Tensor::scalar(loss), {probs},
                 [probs, target, n](const Tensor& g) {
                   auto gp = grad_buffer(probs).data();
                   const auto pv = probs.value().data();
                   const double scale = g[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < gp.size(); ++i) {
                     const double t = (*target)[i];
                     // Clamped region contributes no gradient.
                     if (t != 0.0 && pv[i] >= kProbClamp && pv[i] <= 1.0) {
                       gp[i] -= scale * t / pv[i];
                     }
                   }
                 });
}

Var binary_cross_entropy(const Var& d, const Tensor& target) {
  if (target.shape() != d.shape()) {
    throw DimensionError("binary_cross_entropy: target shape " + shape_str(target.shape()) +
                         " does not match input " + shape_str(d.shape()));
  }
  const auto dv = d.value().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < dv.size(); ++i) loss += binary_cross_entropy_value(dv[i], target[i]);
  const double count = static_cast<double>(dv.size());
  loss /= count;
  auto tgt = std::make_shared<Tensor>(target);
  return make_op("binary_cross_entropy", Tensor::scalar(loss), {d},
                 [d, tgt, count](const Tensor& g) {
                   auto gd = grad_buffer(d).data();
                   const auto dv = d.value().data();
                   for (std::size_t i = 0; i < gd.size(); ++i) {
                     const double x = dv[i];
                     if (x < kProbClamp || x > 1.0 - kProbClamp) continue;
                     const double t = (*tgt)[i];
                     gd[i] += g[0] / count * (-t / x + (1.0 - t) / (1.0 - x));
                   }
                 });
}

double cross_entropy_value(std::span<const double> probs, std::size_t target) {
  return -std::log(std::clamp(probs[target], kProbClamp, 1.0));
}

double binary_cross_entropy_value(double d, double target) {
  const double x = std::clamp(d, kProbClamp, 1.0 - kProbClamp);
  return -(target * std::log(x) + (1.0 - target) * std::log(1.0 - x));
}

Var reshape(const Var& input, Shape shape) {
  if (shape_numel(shape) != input.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_str(input.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor y = input.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(y), {input},
                 [input](const Tensor& g) { accumulate(input, g); });
}

namespace {

void expect_same(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  expect_same(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_op("add", std::move(y), {a, b}, [a, b](const Tensor& g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  expect_same(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_op("sub", std::move(y), {a, b}, [a, b](const Tensor& g) {
    accumulate(a, g);
    if (b.requires_grad()) {
      auto gb = grad_buffer(b).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  expect_same(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return make_op("mul", std::move(y), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) {
      auto ga = grad_buffer(a).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto gb = grad_buffer(b).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor y = a.value();
  for (auto& v : y.data()) v *= c;
  return make_op("scale", std::move(y), {a}, [a, c](const Tensor& g) {
    auto ga = grad_buffer(a).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor y = a.value();
  for (auto& v : y.data()) v += c;
  return make_op("add_scalar", std::move(y), {a}, [a](const Tensor& g) { accumulate(a, g); });
}

Var add_constant(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) {
    throw DimensionError("add_constant: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(c.shape()) + " differ");
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
  return make_op("add_constant", std::move(y), {a}, [a](const Tensor& g) { accumulate(a, g); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [a](const Tensor& g) {
    auto ga = grad_buffer(a).data();
    for (auto& v : ga) v += g[0];
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("mean", Tensor::scalar(s / count), {a}, [a, count](const Tensor& g) {
    auto ga = grad_buffer(a).data();
    for (auto& v : ga) v += g[0] / count;
  });
}

Var mix_rows(const Var& w, const Var& a, const Var& b) {
  expect_same(a, b, "mix_rows");
  expect_rank(a, 2, "mix_rows operand");
  const std::size_t n = a.shape()[0], k = a.shape()[1];
  if (w.value().size() != n) {
    throw DimensionError("mix_rows: weight holds " + std::to_string(w.value().size()) +
                         " values for " + std::to_string(n) + " rows");
  }
  Tensor y({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    const double wr = w.value()[r];
    for (std::size_t j = 0; j < k; ++j) {
      y[r * k + j] = wr * a.value()[r * k + j] + (1.0 - wr) * b.value()[r * k + j];
    }
  }
  return make_op("mix_rows", std::move(y), {w, a, b}, [w, a, b, n, k](const Tensor& g) {
    for (std::size_t r = 0; r < n; ++r) {
      const double wr = w.value()[r];
      double gw = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = r * k + j;
        gw += g[i] * (a.value()[i] - b.value()[i]);
        if (a.requires_grad()) grad_buffer(a)[i] += g[i] * wr;
        if (b.requires_grad()) grad_buffer(b)[i] += g[i] * (1.0 - wr);
      }
      if (w.requires_grad()) grad_buffer(w)[r] += gw;
    }
  });
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor t({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " outside [0," +
                            std::to_string(num_classes) + ")");
    }
    t[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

std::vector<int> argmax_rows(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("argmax_rows: expected rank 2, got " + shape_str(t.shape()));
  const std::size_t n = t.dim(0), k = t.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = t.data().data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace tdsim
