#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geomatch/image.hpp"
#include "geomatch/network.hpp"
#include "geomatch/synthgen.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

struct ImageSize {
  int height = 0;
  int width = 0;
};

/// Fraction of predictions within alpha * max(h, w) pixels of their target
/// (inclusive). Throws UndefinedMetric on empty input.
Scalar pck(std::span<const Point> predicted, std::span<const Point> target, Scalar bbox_height,
           Scalar bbox_width, Scalar alpha = Scalar(0.1));

struct TransferResult {
  std::vector<Point> points;
  // False where the spline inversion did not converge.
  std::vector<bool> converged;
  std::size_t failures = 0;
};

/// Maps pixel keypoints of image A into image B. theta maps B coordinates to
/// A coordinates, so this runs the inverse transform.
TransferResult transfer_keypoints(const TransformParams& theta, std::span<const Point> keypoints_a,
                                  ImageSize size_a, ImageSize size_b);

struct MaskMetrics {
  Scalar lt_acc = 0;
  Scalar iou = 0;
};

/// Warps binary mask A into B's frame (nearest neighbour) and compares it with
/// mask B. Values above 0.5 are foreground.
MaskMetrics mask_transfer_metrics(const TransformParams& theta, const Image& mask_a,
                                  const Image& mask_b);

/// Bounds on plausible affine hypotheses: both singular values of the linear
/// part in [min_singular, max_singular], positive determinant and
/// |tx|, |ty| <= max_translation.
struct AffineRange {
  Scalar min_singular = 0;
  Scalar max_singular = 0;
  Scalar max_translation = 0;

  static AffineRange from_sampling(const SamplingRanges& ranges);
  bool admits(const AffineParams& theta) const;
};

struct RansacConfig {
  // Second-nearest-neighbour distance ratio.
  Scalar snn_ratio = Scalar(0.9);
  // Also keep mutual nearest neighbours that fail the ratio test.
  bool mutual_best = true;
  int iterations = 1000;
  // Inlier residual in normalized units.
  Scalar inlier_tol = Scalar(0.05);
  bool range_filter = true;
  AffineRange range = AffineRange::from_sampling(SamplingRanges{});
  std::uint64_t seed = 0;
};

/// Tentative match: theta should map `b` to `a`.
struct Correspondence {
  Point b;
  Point a;
};

struct RansacResult {
  AffineParams theta;
  std::vector<std::size_t> inliers;
  std::vector<Correspondence> matches;
  int hypotheses = 0;
  int rejected_by_range = 0;
};

/// Matches every B descriptor to its nearest A descriptor and keeps those
/// passing the ratio test (or mutual-best). Inputs are h x w x d grids;
/// positions are cell centers in normalized coordinates.
std::vector<Correspondence> tentative_matches(const Tensor& features_a, const Tensor& features_b,
                                              const RansacConfig& config);

/// Least-squares affine over the selected correspondences (all when empty).
AffineParams fit_affine(std::span<const Correspondence> matches,
                        std::span<const std::size_t> subset = {});

/// Three-point hypotheses, range filter, max-inlier selection and a
/// least-squares refit on the inliers. Throws EstimationError with fewer than
/// 3 matches or when no hypothesis survives.
RansacResult ransac_affine(std::span<const Correspondence> matches, const RansacConfig& config);
RansacResult ransac_affine(const Tensor& features_a, const Tensor& features_b,
                           const RansacConfig& config);

/// Per-location descriptor distance between B and A warped by theta,
/// bilinearly upsampled to B's size and min-max normalized to [0, 1]
/// (a constant map becomes all zeros).
Image difference_map(const Image& image_a, const Image& image_b, const TransformParams& theta,
                     const GeometryEstimator& features);

struct BBox {
  Scalar x = 0, y = 0, w = 0, h = 0;
};

struct EvalRecord {
  std::string pair_id;
  std::string image_a_path;
  std::string image_b_path;
  std::vector<Point> keypoints_a;
  std::vector<Point> keypoints_b;
  BBox bbox_b;
  std::string mask_a_path;
  std::string mask_b_path;
  std::string category;
  // Known ground truth (synthetic benchmarks); enables the oracle estimator.
  std::optional<TransformParams> theta_gt;
};

/// Line-delimited JSON, one record per line; paths relative to the file.
std::vector<EvalRecord> read_benchmark(const std::filesystem::path& path);
void write_benchmark(const std::filesystem::path& path, std::span<const EvalRecord> records);

/// A record with its images loaded (masks empty when absent).
struct EvalCase {
  EvalRecord record;
  Image image_a, image_b;
  Image mask_a, mask_b;
  // Set when the images could not be read; the case is reported as failed.
  std::string load_error;
};

/// Keypoints for a synthetic pair: a `grid` x `grid` lattice of B pixels and
/// their images under theta in A, keeping those that land inside A.
void synthetic_keypoints(const TransformParams& theta, ImageSize size, int grid,
                         std::vector<Point>& keypoints_a, std::vector<Point>& keypoints_b);

/// In-memory benchmark cases from generated pairs (bbox = whole image B).
std::vector<EvalCase> make_synthetic_cases(std::span<const TrainingPair> pairs, int grid = 6,
                                           const std::string& category = "synthetic");
/// Writes the cases' images beside `path` and the records to `path`.
void write_synthetic_benchmark(const std::filesystem::path& path, std::span<const EvalCase> cases);

using Estimator =
    std::function<TransformParams(const Image& image_a, const Image& image_b, const EvalRecord&)>;

Estimator identity_estimator(TransformKind kind);
// Returns the record's stored ground truth; fails records without one.
Estimator oracle_estimator();
// Affine stage(s) averaged, optionally refined by a spline stage.
Estimator learned_estimator(std::vector<GeometryEstimator*> affine_stages,
                            GeometryEstimator* tps_stage);
Estimator ransac_estimator(const GeometryEstimator& features, RansacConfig config);

struct PairResult {
  std::string pair_id;
  std::string category;
  bool ok = false;
  std::string error;
  Scalar pck = 0;
  std::size_t keypoints = 0;
  std::size_t correct = 0;
  std::size_t unconverged = 0;
  std::optional<MaskMetrics> mask;
};

struct BenchmarkReport {
  std::vector<PairResult> pairs;
  // Mean of per-pair PCK over successful pairs.
  Scalar mean_pck = 0;
  // Correct keypoints / all keypoints over successful pairs.
  Scalar pooled_pck = 0;
  std::optional<MaskMetrics> mean_mask;
  std::size_t failures = 0;

  // Header pair_id,category,pck,pck_pooled,lt_acc,iou,keypoints,correct,status;
  // one row per pair in input order, then an aggregate row.
  std::string to_csv() const;
};

/// Per-pair failures are recorded, not thrown. Throws InvalidArgument on an
/// empty record set.
BenchmarkReport evaluate_cases(std::span<const EvalCase> cases, const Estimator& estimator,
                               Scalar alpha = Scalar(0.1));
BenchmarkReport evaluate_benchmark(std::span<const EvalRecord> records,
                                   const std::filesystem::path& base_dir,
                                   const Estimator& estimator, Scalar alpha = Scalar(0.1));

}  // namespace geomatch
