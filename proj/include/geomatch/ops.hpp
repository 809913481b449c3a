#pragma once

#include <span>
#include <vector>

#include "geomatch/tensor.hpp"

namespace geomatch {

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

// Adds a vector of length shape.back() to every row.
Tensor add_bias(const Tensor& input, const Tensor& bias);

Tensor relu(const Tensor& input);
Tensor reshape(const Tensor& input, Shape shape);

// Concatenates along the last axis; leading extents must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);

// (m x k) * (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);

// input: N x in (or a vector of length in); weights: in x out; bias: out.
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// Direct 2-D cross-correlation in NHWC layout.
///
/// input is N x H x W x Cin (a rank-3 H x W x Cin tensor is treated as a batch
/// of one and the result is returned at rank 3); kernel is K x K x Cin x Cout.
/// Output extent per spatial axis is (extent + 2 * padding - K) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int padding = 0);

enum class NormMode { kTrain, kEval };

struct RunningStats {
  std::vector<Scalar> mean;
  std::vector<Scalar> var;

  static RunningStats identity(std::size_t channels);
};

inline constexpr Scalar kBatchNormEpsilon = Scalar(1e-5);
inline constexpr Scalar kBatchNormDecay = Scalar(0.9);

/// Per-channel batch normalization over every axis except the last.
///
/// Train mode normalizes with the biased batch statistics and folds them into
/// `stats` as stats = decay * stats + (1 - decay) * batch. Eval mode uses
/// `stats` and leaves it untouched.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                 NormMode mode, Scalar epsilon = kBatchNormEpsilon,
                 Scalar decay = kBatchNormDecay);

/// Scales every slice along `axis` to unit L2 norm. Slices whose norm is below
/// `epsilon` become zero (and pass zero gradient).
Tensor l2_normalize(const Tensor& input, std::size_t axis, Scalar epsilon = Scalar(1e-8));

/// velocity <- momentum * velocity - lr * (grad + weight_decay * param);
/// param <- param + velocity.
void sgd_step(std::span<Scalar> param, std::span<const Scalar> grad, Scalar lr, Scalar momentum,
              std::span<Scalar> velocity, Scalar weight_decay = Scalar(0));

}  // namespace geomatch
