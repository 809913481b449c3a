#include "geomatch/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                          " vs " + shape_to_string(b.shape()));
  }
}

detail::Node& input(detail::Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Scalar> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = input(self, k);
      if (!in.requires_grad) continue;
      auto& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const Scalar sign[2] = {Scalar(1), Scalar(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = input(self, k);
      if (!in.requires_grad) continue;
      auto& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& x = input(self, 0);
    auto& y = input(self, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, Scalar factor) {
  std::vector<Scalar> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  }, "scale");
}

Tensor add_bias(const Tensor& in, const Tensor& bias) {
  if (in.rank() == 0 || bias.rank() != 1 || bias.dim(0) != in.shape().back()) {
    throw InvalidArgument("add_bias: bias " + shape_to_string(bias.shape()) +
                          " does not match trailing extent of " + shape_to_string(in.shape()));
  }
  const std::size_t width = bias.dim(0);
  std::vector<Scalar> out(in.values().begin(), in.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % width];
  return Tensor::from_op(in.shape(), std::move(out), {in, bias}, [width](detail::Node& self) {
    auto& x = input(self, 0);
    auto& b = input(self, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad) {
      auto& g = b.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % width] += self.grad[i];
    }
  }, "add_bias");
}

Tensor relu(const Tensor& in) {
  std::vector<Scalar> out(in.values().begin(), in.values().end());
  for (auto& v : out) v = v > Scalar(0) ? v : Scalar(0);
  return Tensor::from_op(in.shape(), std::move(out), {in}, [](detail::Node& self) {
    auto& x = input(self, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x.value[i] > Scalar(0)) g[i] += self.grad[i];
    }
  }, "relu");
}

Tensor reshape(const Tensor& in, Shape shape) {
  if (shape_numel(shape) != in.numel()) {
    throw InvalidArgument("reshape: cannot view " + shape_to_string(in.shape()) + " as " +
                          shape_to_string(shape));
  }
  std::vector<Scalar> out(in.values().begin(), in.values().end());
  return Tensor::from_op(std::move(shape), std::move(out), {in}, [](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "reshape");
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw InvalidArgument("concat_last: incompatible shapes " + shape_to_string(a.shape()) +
                          " and " + shape_to_string(b.shape()));
  }
  const std::size_t ca = a.shape().back();
  const std::size_t cb = b.shape().back();
  const std::size_t rows = a.numel() / ca;
  Shape shape = a.shape();
  shape.back() = ca + cb;
  std::vector<Scalar> out(rows * (ca + cb));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  return Tensor::from_op(std::move(shape), std::move(out), {a, b},
                         [ca, cb, rows](detail::Node& self) {
    auto& x = input(self, 0);
    auto& y = input(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* src = self.grad.data() + r * (ca + cb);
      if (x.requires_grad) {
        auto& g = x.grad_buffer();
        for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += src[c];
      }
      if (y.requires_grad) {
        auto& g = y.grad_buffer();
        for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += src[ca + c];
      }
    }
  }, "concat_last");
}

Tensor sum(const Tensor& in) {
  Scalar total = 0;
  for (auto v : in.values()) total += v;
  return Tensor::from_op({}, {total}, {in}, [](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0];
  }, "sum");
}

Tensor mean(const Tensor& in) {
  if (in.numel() == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(in), Scalar(1) / static_cast<Scalar>(in.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InvalidArgument("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                          shape_to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() =
      ConstMatrixMap(a.values().data(), m, k) * ConstMatrixMap(b.values().data(), k, n);
  return Tensor::from_op({a.dim(0), b.dim(1)}, std::move(out), {a, b},
                         [m, k, n](detail::Node& self) {
    auto& x = input(self, 0);
    auto& y = input(self, 1);
    ConstMatrixMap g(self.grad.data(), m, n);
    if (x.requires_grad) {
      MatrixMap(x.grad_buffer().data(), m, k).noalias() +=
          g * ConstMatrixMap(y.value.data(), k, n).transpose();
    }
    if (y.requires_grad) {
      MatrixMap(y.grad_buffer().data(), k, n).noalias() +=
          ConstMatrixMap(x.value.data(), m, k).transpose() * g;
    }
  }, "matmul");
}

Tensor linear(const Tensor& in, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2) throw InvalidArgument("linear: weights must be in x out");
  if (in.rank() == 1) {
    return reshape(linear(reshape(in, {1, in.dim(0)}), weights, bias), {weights.dim(1)});
  }
  if (in.rank() != 2 || in.dim(1) != weights.dim(0)) {
    throw InvalidArgument("linear: input " + shape_to_string(in.shape()) +
                          " incompatible with weights " + shape_to_string(weights.shape()));
  }
  return add_bias(matmul(in, weights), bias);
}

Tensor conv2d(const Tensor& in, const Tensor& kernel, int stride, int padding) {
  if (in.rank() == 3) {
    auto out = conv2d(reshape(in, {1, in.dim(0), in.dim(1), in.dim(2)}), kernel, stride, padding);
    return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  }
  if (in.rank() != 4) throw InvalidArgument("conv2d: input must be HxWxC or NxHxWxC");
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1)) {
    throw InvalidArgument("conv2d: kernel must be KxKxCinxCout, got " +
                          shape_to_string(kernel.shape()));
  }
  if (kernel.dim(2) != in.dim(3)) {
    throw InvalidArgument("conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                          " input channels, input has " + std::to_string(in.dim(3)));
  }
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: stride >= 1 and padding >= 0");
  const long n = static_cast<long>(in.dim(0));
  const long h = static_cast<long>(in.dim(1));
  const long w = static_cast<long>(in.dim(2));
  const long cin = static_cast<long>(in.dim(3));
  const long k = static_cast<long>(kernel.dim(0));
  const long cout = static_cast<long>(kernel.dim(3));
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw InvalidArgument("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                          shape_to_string(in.shape()));
  }
  const long oh = (h + 2 * padding - k) / stride + 1;
  const long ow = (w + 2 * padding - k) / stride + 1;
  const long rows = n * oh * ow;
  const long cols = k * k * cin;

  // Patch matrix: one row per output location, columns ordered (ky, kx, c)
  // to match the kernel's row-major layout.
  std::vector<Scalar> patches(static_cast<std::size_t>(rows * cols), Scalar(0));
  auto src = in.values();
  for (long b = 0; b < n; ++b) {
    for (long oy = 0; oy < oh; ++oy) {
      for (long ox = 0; ox < ow; ++ox) {
        Scalar* row = patches.data() + ((b * oh + oy) * ow + ox) * cols;
        for (long ky = 0; ky < k; ++ky) {
          const long iy = oy * stride + ky - padding;
          if (iy < 0 || iy >= h) continue;
          for (long kx = 0; kx < k; ++kx) {
            const long ix = ox * stride + kx - padding;
            if (ix < 0 || ix >= w) continue;
            std::copy_n(src.data() + ((b * h + iy) * w + ix) * cin, cin,
                        row + (ky * k + kx) * cin);
          }
        }
      }
    }
  }
  std::vector<Scalar> out(static_cast<std::size_t>(rows * cout));
  MatrixMap(out.data(), rows, cout).noalias() =
      MatrixMap(patches.data(), rows, cols) * ConstMatrixMap(kernel.values().data(), cols, cout);

  Shape shape{static_cast<std::size_t>(n), static_cast<std::size_t>(oh),
              static_cast<std::size_t>(ow), static_cast<std::size_t>(cout)};
  auto backward = [patches = std::move(patches), n, h, w, cin, k, cout, oh, ow, rows, cols, stride,
                   padding](detail::Node& self) {
    auto& x = input(self, 0);
    auto& kern = input(self, 1);
    ConstMatrixMap g(self.grad.data(), rows, cout);
    if (kern.requires_grad) {
      MatrixMap(kern.grad_buffer().data(), cols, cout).noalias() +=
          ConstMatrixMap(patches.data(), rows, cols).transpose() * g;
    }
    if (x.requires_grad) {
      RowMatrix dpatches = g * ConstMatrixMap(kern.value.data(), cols, cout).transpose();
      auto& gx = x.grad_buffer();
      for (long b = 0; b < n; ++b) {
        for (long oy = 0; oy < oh; ++oy) {
          for (long ox = 0; ox < ow; ++ox) {
            const Scalar* row = dpatches.data() + ((b * oh + oy) * ow + ox) * cols;
            for (long ky = 0; ky < k; ++ky) {
              const long iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              for (long kx = 0; kx < k; ++kx) {
                const long ix = ox * stride + kx - padding;
                if (ix < 0 || ix >= w) continue;
                Scalar* dst = gx.data() + ((b * h + iy) * w + ix) * cin;
                const Scalar* s = row + (ky * k + kx) * cin;
                for (long c = 0; c < cin; ++c) dst[c] += s[c];
              }
            }
          }
        }
      }
    }
  };
  return Tensor::from_op(std::move(shape), std::move(out), {in, kernel}, std::move(backward),
                         "conv2d");
}

RunningStats RunningStats::identity(std::size_t channels) {
  return {std::vector<Scalar>(channels, Scalar(0)), std::vector<Scalar>(channels, Scalar(1))};
}

Tensor batchnorm(const Tensor& in, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                 NormMode mode, Scalar epsilon, Scalar decay) {
  if (in.rank() < 1) throw InvalidArgument("batchnorm: input needs a channel axis");
  const std::size_t c = in.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw InvalidArgument("batchnorm: gamma/beta length must equal channel count " +
                          std::to_string(c));
  }
  if (stats.mean.size() != c || stats.var.size() != c) {
    throw InvalidArgument("batchnorm: running statistics have wrong channel count");
  }
  const std::size_t count = c == 0 ? 0 : in.numel() / c;
  if (count == 0 || in.dim(0) == 0) throw InvalidArgument("batchnorm: zero batch size");

  auto x = in.values();
  std::vector<Scalar> mu(c, Scalar(0));
  std::vector<Scalar> var(c, Scalar(0));
  if (mode == NormMode::kTrain) {
    for (std::size_t i = 0; i < x.size(); ++i) mu[i % c] += x[i];
    for (auto& m : mu) m /= static_cast<Scalar>(count);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Scalar d = x[i] - mu[i % c];
      var[i % c] += d * d;
    }
    for (auto& v : var) v /= static_cast<Scalar>(count);
    for (std::size_t j = 0; j < c; ++j) {
      stats.mean[j] = decay * stats.mean[j] + (Scalar(1) - decay) * mu[j];
      stats.var[j] = decay * stats.var[j] + (Scalar(1) - decay) * var[j];
    }
  } else {
    mu = stats.mean;
    var = stats.var;
  }
  std::vector<Scalar> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = Scalar(1) / std::sqrt(var[j] + epsilon);

  std::vector<Scalar> xhat(x.size());
  std::vector<Scalar> out(x.size());
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t j = i % c;
    xhat[i] = (x[i] - mu[j]) * inv_std[j];
    out[i] = gv[j] * xhat[i] + bv[j];
  }

  const bool train = mode == NormMode::kTrain;
  auto backward = [xhat = std::move(xhat), inv_std = std::move(inv_std), c, count,
                   train](detail::Node& self) {
    auto& xin = input(self, 0);
    auto& gam = input(self, 1);
    auto& bet = input(self, 2);
    const auto& g = self.grad;
    std::vector<Scalar> sum_g(c, Scalar(0));
    std::vector<Scalar> sum_gx(c, Scalar(0));
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g[i % c] += g[i];
      sum_gx[i % c] += g[i] * xhat[i];
    }
    if (gam.requires_grad) {
      auto& gg = gam.grad_buffer();
      for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
    }
    if (bet.requires_grad) {
      auto& gb = bet.grad_buffer();
      for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
    }
    if (xin.requires_grad) {
      auto& gx = xin.grad_buffer();
      const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = i % c;
        const Scalar coeff = gam.value[j] * inv_std[j];
        if (train) {
          gx[i] += coeff * (g[i] - sum_g[j] * inv_count - xhat[i] * sum_gx[j] * inv_count);
        } else {
          gx[i] += coeff * g[i];
        }
      }
    }
  };
  return Tensor::from_op(in.shape(), std::move(out), {in, gamma, beta}, std::move(backward),
                         "batchnorm");
}

Tensor l2_normalize(const Tensor& in, std::size_t axis, Scalar epsilon) {
  if (axis >= in.rank()) throw InvalidArgument("l2_normalize: axis out of range");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= in.dim(a);
  for (std::size_t a = axis + 1; a < in.rank(); ++a) inner *= in.dim(a);
  const std::size_t len = in.dim(axis);

  auto x = in.values();
  std::vector<Scalar> out(x.size(), Scalar(0));
  std::vector<Scalar> norms(outer * inner, Scalar(0));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      Scalar ss = 0;
      for (std::size_t t = 0; t < len; ++t) ss += x[base + t * inner] * x[base + t * inner];
      const Scalar norm = std::sqrt(ss);
      norms[o * inner + i] = norm;
      if (norm < epsilon) continue;
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] = x[base + t * inner] / norm;
    }
  }
  auto backward = [norms = std::move(norms), outer, inner, len, epsilon](detail::Node& self) {
    auto& gx = input(self, 0).grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const Scalar norm = norms[o * inner + i];
        if (norm < epsilon) continue;
        const std::size_t base = o * len * inner + i;
        Scalar dot = 0;
        for (std::size_t t = 0; t < len; ++t) dot += y[base + t * inner] * g[base + t * inner];
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t idx = base + t * inner;
          gx[idx] += (g[idx] - y[idx] * dot) / norm;
        }
      }
    }
  };
  return Tensor::from_op(in.shape(), std::move(out), {in}, std::move(backward), "l2_normalize");
}

void sgd_step(std::span<Scalar> param, std::span<const Scalar> grad, Scalar lr, Scalar momentum,
              std::span<Scalar> velocity, Scalar weight_decay) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size())) {
    throw InvalidArgument("sgd_step: parameter, gradient and velocity sizes differ");
  }
  if (!(lr >= Scalar(0))) throw InvalidArgument("sgd_step: learning rate must be non-negative");
  if (!(momentum >= Scalar(0) && momentum < Scalar(1))) {
    throw InvalidArgument("sgd_step: momentum must lie in [0, 1)");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Scalar g = (grad.empty() ? Scalar(0) : grad[i]) + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] - lr * g;
    param[i] += velocity[i];
  }
}

}  // namespace geomatch
