#include "geomatch/matching.hpp"

#include <Eigen/Core>

#include "geomatch/errors.hpp"
#include "geomatch/ops.hpp"

namespace geomatch {

namespace {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_matching_maps(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() || (a.rank() != 3 && a.rank() != 4)) {
    throw InvalidArgument(std::string(op) + ": feature maps must share an (N x) h x w x d shape, got " +
                          shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  if (a.shape().back() < 1) throw InvalidArgument(std::string(op) + ": empty descriptors");
}

}  // namespace

Tensor correlate(const Tensor& features_a, const Tensor& features_b) {
  require_matching_maps(features_a, features_b, "correlate");
  if (features_a.rank() == 3) {
    const Shape s = features_a.shape();
    auto out = correlate(reshape(features_a, {1, s[0], s[1], s[2]}),
                         reshape(features_b, {1, s[0], s[1], s[2]}));
    return reshape(out, {s[0], s[1], s[0] * s[1]});
  }
  const long n = static_cast<long>(features_a.dim(0));
  const long h = static_cast<long>(features_a.dim(1));
  const long w = static_cast<long>(features_a.dim(2));
  const long d = static_cast<long>(features_a.dim(3));
  const long hw = h * w;

  // Image-A descriptors reordered so that row k is position (k % h, k / h).
  std::vector<Scalar> a_cm(static_cast<std::size_t>(n * hw * d));
  auto av = features_a.values();
  for (long b = 0; b < n; ++b) {
    for (long i = 0; i < h; ++i) {
      for (long j = 0; j < w; ++j) {
        std::copy_n(av.data() + ((b * h + i) * w + j) * d, d,
                    a_cm.data() + (b * hw + j * h + i) * d);
      }
    }
  }
  std::vector<Scalar> out(static_cast<std::size_t>(n * hw * hw));
  auto bv = features_b.values();
  for (long b = 0; b < n; ++b) {
    MatrixMap(out.data() + b * hw * hw, hw, hw).noalias() =
        ConstMatrixMap(bv.data() + b * hw * d, hw, d) *
        ConstMatrixMap(a_cm.data() + b * hw * d, hw, d).transpose();
  }
  auto backward = [a_cm = std::move(a_cm), n, h, w, d, hw](detail::Node& self) {
    auto& fa = *self.inputs[0];
    auto& fb = *self.inputs[1];
    for (long b = 0; b < n; ++b) {
      ConstMatrixMap g(self.grad.data() + b * hw * hw, hw, hw);
      if (fb.requires_grad) {
        MatrixMap(fb.grad_buffer().data() + b * hw * d, hw, d).noalias() +=
            g * ConstMatrixMap(a_cm.data() + b * hw * d, hw, d);
      }
      if (fa.requires_grad) {
        RowMatrix ga = g.transpose() * ConstMatrixMap(fb.value.data() + b * hw * d, hw, d);
        auto& dst = fa.grad_buffer();
        for (long i = 0; i < h; ++i) {
          for (long j = 0; j < w; ++j) {
            Scalar* out_row = dst.data() + ((b * h + i) * w + j) * d;
            const Scalar* src = ga.data() + (j * h + i) * d;
            for (long c = 0; c < d; ++c) out_row[c] += src[c];
          }
        }
      }
    }
  };
  return Tensor::from_op({static_cast<std::size_t>(n), static_cast<std::size_t>(h),
                          static_cast<std::size_t>(w), static_cast<std::size_t>(hw)},
                         std::move(out), {features_a, features_b}, std::move(backward),
                         "correlate");
}

Tensor normalize_correspondences(const Tensor& correlation, Scalar epsilon) {
  if (correlation.rank() < 1) throw InvalidArgument("normalize_correspondences: rank-0 input");
  return l2_normalize(relu(correlation), correlation.rank() - 1, epsilon);
}

Tensor match_concat(const Tensor& features_a, const Tensor& features_b) {
  require_matching_maps(features_a, features_b, "match_concat");
  return concat_last(features_b, features_a);
}

Tensor match_subtract(const Tensor& features_a, const Tensor& features_b) {
  require_matching_maps(features_a, features_b, "match_subtract");
  return sub(features_b, features_a);
}

std::string to_string(MatchingMode mode) {
  switch (mode) {
    case MatchingMode::kCorrelation: return "correlation";
    case MatchingMode::kCorrelationUnnormalized: return "correlation-unnormalized";
    case MatchingMode::kConcat: return "concat";
    case MatchingMode::kSubtract: return "subtract";
  }
  return "correlation";
}

MatchingMode parse_matching_mode(const std::string& name) {
  if (name == "correlation") return MatchingMode::kCorrelation;
  if (name == "correlation-unnormalized") return MatchingMode::kCorrelationUnnormalized;
  if (name == "concat") return MatchingMode::kConcat;
  if (name == "subtract") return MatchingMode::kSubtract;
  throw InvalidArgument("unknown matching mode '" + name + "'");
}

Tensor match_features(MatchingMode mode, const Tensor& features_a, const Tensor& features_b) {
  switch (mode) {
    case MatchingMode::kCorrelation:
      return normalize_correspondences(correlate(features_a, features_b));
    case MatchingMode::kCorrelationUnnormalized: return correlate(features_a, features_b);
    case MatchingMode::kConcat: return match_concat(features_a, features_b);
    case MatchingMode::kSubtract: return match_subtract(features_a, features_b);
  }
  throw InvalidArgument("match_features: bad mode");
}

std::size_t matching_channels(MatchingMode mode, std::size_t height, std::size_t width,
                              std::size_t depth) {
  switch (mode) {
    case MatchingMode::kCorrelation:
    case MatchingMode::kCorrelationUnnormalized: return height * width;
    case MatchingMode::kConcat: return 2 * depth;
    case MatchingMode::kSubtract: return depth;
  }
  return 0;
}

}  // namespace geomatch
