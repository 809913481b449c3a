#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geomatch/image.hpp"
#include "geomatch/matching.hpp"
#include "geomatch/ops.hpp"
#include "geomatch/tensor.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

struct ConvBlockSpec {
  int out_channels = 16;
  int kernel = 3;
  int stride = 2;
  int padding = 1;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// Siamese descriptor network: bias-free conv blocks (ReLU after all but the
/// last) followed by per-location L2 normalization.
struct FeatureExtractorConfig {
  int input_size = 64;
  int input_channels = 3;
  std::vector<ConvBlockSpec> blocks{{16, 3, 2, 1}, {32, 3, 2, 1}, {32, 3, 2, 1}};
  // Subtract each image's mean intensity before the first convolution.
  bool center_input = true;

  int descriptor_dim() const { return blocks.empty() ? input_channels : blocks.back().out_channels; }
  // Spatial extent of the descriptor grid; throws if the stack underflows.
  int output_size() const;

  friend bool operator==(const FeatureExtractorConfig&, const FeatureExtractorConfig&) = default;
};

/// Two unpadded stride-1 conv + batchnorm + ReLU blocks, then a fully
/// connected layer to P parameters.
struct RegressorConfig {
  int conv1_channels = 64;
  int conv1_kernel = 3;
  int conv2_channels = 32;
  int conv2_kernel = 3;

  // Spatial extents after each conv for an input map of `size`.
  std::pair<int, int> spatial_chain(int size) const;
  // Paper-scale default for 15x15 maps: 7x7 -> 128, 5x5 -> 64.
  static RegressorConfig full_scale() { return {128, 7, 64, 5}; }

  friend bool operator==(const RegressorConfig&, const RegressorConfig&) = default;
};

struct ModelConfig {
  TransformKind kind = TransformKind::kAffine;
  MatchingMode matching = MatchingMode::kCorrelation;
  FeatureExtractorConfig features;
  RegressorConfig regressor;
  bool freeze_features = false;

  // 64x64 input, stride 8 -> 8x8 descriptors.
  static ModelConfig desk(TransformKind kind);
  // 16x16 input, two stride-2 blocks -> 4x4x4 descriptors; used by gradient checks.
  static ModelConfig tiny(TransformKind kind);

  std::size_t param_count() const { return geomatch::param_count(kind); }

  // Line-oriented key=value text, stored inside checkpoints.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct InitOptions {
  // Zero the final layer so an untrained model predicts the identity.
  bool zero_head = true;
};

/// One geometry-estimation stage: shared feature extractor, matching layer
/// and regression head. The network outputs a residual that is added to the
/// identity transform's parameters.
class GeometryEstimator {
 public:
  GeometryEstimator(ModelConfig config, std::uint64_t seed, InitOptions init = {});

  const ModelConfig& config() const { return config_; }

  // N x H x W x C images -> N x h x w x d unit descriptors.
  Tensor extract_features(const Tensor& images) const;
  // N x h x w x C matching output -> N x P parameters.
  Tensor regress(const Tensor& matched, NormMode mode);
  // extract -> match -> regress. Both images go through the same weights.
  Tensor forward(const Tensor& images_a, const Tensor& images_b, NormMode mode);

  // Eval-mode, gradient-free estimate for a single pair.
  TransformParams estimate(const Image& image_a, const Image& image_b);

  // Every learnable tensor, in checkpoint order.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  // Excludes the feature extractor when it is frozen.
  std::vector<NamedTensor> trainable_parameters() const;

  // Batch-norm running statistics, keyed like the parameters.
  std::map<std::string, RunningStats>& running_stats() { return stats_; }
  const std::map<std::string, RunningStats>& running_stats() const { return stats_; }

  const Tensor& parameter(const std::string& name) const;
  // Weights of the first regressor convolution: k x k x C x c1.
  const Tensor& first_regressor_filter() const { return parameter("regressor.conv1.weight"); }

 private:
  Tensor prepare_images(const Tensor& images) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::map<std::string, RunningStats> stats_;
  std::vector<Scalar> identity_offset_;
};

/// Filter visualization for the first regressor layer. For each output
/// filter, every k x k spatial slice (a vector over h*w correspondence
/// channels) is unflattened onto the h x w image-A grid and reduced to its
/// peak (maximum value kept at the argmax, zero elsewhere); the peak maps are
/// averaged into one single-channel h x w image.
std::vector<Image> visualize_regressor_filters(const Tensor& conv1_weights, int map_height,
                                               int map_width);

// Min-max stretches a single-channel image to [0, 1] (constant -> zeros).
Image normalize_for_display(const Image& image);

}  // namespace geomatch
