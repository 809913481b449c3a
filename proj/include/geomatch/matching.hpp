#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "geomatch/tensor.hpp"

namespace geomatch {

// Channel k of a correlation map refers to the image-A feature at row
// k % h, column k / h (column-major flattening; zero-based).
inline std::size_t flatten_position(std::size_t row, std::size_t col, std::size_t height) {
  return col * height + row;
}
inline std::pair<std::size_t, std::size_t> unflatten_position(std::size_t k, std::size_t height) {
  return {k % height, k / height};
}

/// c(i, j, k) = <f_B(i, j), f_A(k % h, k / h)> for feature maps of shape
/// h x w x d or N x h x w x d; the result is (N x) h x w x (h * w).
Tensor correlate(const Tensor& features_a, const Tensor& features_b);

/// ReLU followed by per-location L2 normalization over the channel axis;
/// locations without a positive score become zero.
Tensor normalize_correspondences(const Tensor& correlation, Scalar epsilon = Scalar(1e-8));

// f_B stacked over f_A along channels.
Tensor match_concat(const Tensor& features_a, const Tensor& features_b);
// f_B - f_A.
Tensor match_subtract(const Tensor& features_a, const Tensor& features_b);

enum class MatchingMode { kCorrelation, kCorrelationUnnormalized, kConcat, kSubtract };

std::string to_string(MatchingMode mode);
MatchingMode parse_matching_mode(const std::string& name);

// Dispatches to the layer selected by `mode`.
Tensor match_features(MatchingMode mode, const Tensor& features_a, const Tensor& features_b);
// Channel count of match_features' output for h x w x d feature maps.
std::size_t matching_channels(MatchingMode mode, std::size_t height, std::size_t width,
                              std::size_t depth);

}  // namespace geomatch
