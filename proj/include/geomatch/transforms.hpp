#pragma once

#include <array>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "geomatch/tensor.hpp"

namespace geomatch {

/// A location in normalized image coordinates: the image spans [-1, 1] on
/// both axes, with (0, 0) at its center.
struct Point {
  Scalar x = 0;
  Scalar y = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// (x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty). Serialized in exactly
/// this field order.
struct AffineParams {
  Scalar a11 = 1, a12 = 0, a21 = 0, a22 = 1, tx = 0, ty = 0;

  static AffineParams identity() { return {}; }
  static AffineParams translation(Scalar x, Scalar y) { return {1, 0, 0, 1, x, y}; }
  static AffineParams from_array(std::span<const Scalar> v);
  std::array<Scalar, 6> to_array() const { return {a11, a12, a21, a22, tx, ty}; }

  Point apply(Point p) const { return {a11 * p.x + a12 * p.y + tx, a21 * p.x + a22 * p.y + ty}; }
  Scalar determinant() const { return a11 * a22 - a12 * a21; }

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

/// Thin-plate spline over the fixed 3x3 control grid: the 9 x-coordinates of
/// the mapped control points followed by their 9 y-coordinates.
struct TpsParams {
  std::array<Scalar, 18> coords{};

  static TpsParams identity();
  static TpsParams from_points(std::span<const Point> targets);
  static TpsParams from_array(std::span<const Scalar> v);

  Point target(std::size_t i) const { return {coords[i], coords[9 + i]}; }

  friend bool operator==(const TpsParams&, const TpsParams&) = default;
};

using TransformParams = std::variant<AffineParams, TpsParams>;

enum class TransformKind { kAffine, kTps };

TransformKind kind_of(const TransformParams& theta);
std::size_t param_count(TransformKind kind);
std::string to_string(TransformKind kind);
TransformKind parse_transform_kind(const std::string& name);
TransformParams identity_transform(TransformKind kind);
std::vector<Scalar> to_vector(const TransformParams& theta);
TransformParams from_vector(TransformKind kind, std::span<const Scalar> values);

/// Source control points: the uniform 3x3 grid over [-1, 1]^2, row by row
/// (y = -1, 0, 1), x increasing within a row.
const std::array<Point, 9>& tps_control_points();

/// r^2 log r^2 with U(0) = 0, taking the squared radius.
Scalar tps_kernel(Scalar r2);

/// Coefficients of x' and y' as functions of the query point:
///   x' = ax[0] + ax[1] x + ax[2] y + sum_i wx[i] U(|p - c_i|^2)
struct TpsCoefficients {
  std::vector<Point> sources;
  std::vector<Scalar> wx, wy;
  std::array<Scalar, 3> ax{}, ay{};
  Scalar condition_number = 0;

  Point evaluate(Point p) const;
  // Row-major 2x2 Jacobian d(x', y') / d(x, y).
  std::array<Scalar, 4> jacobian(Point p) const;
};

/// Solves the interpolating spline (no regularization) for arbitrary control
/// points. Throws NumericError, quoting the condition number, when the system
/// is numerically singular (e.g. collinear sources).
TpsCoefficients solve_tps(std::span<const Point> sources, std::span<const Point> targets);
TpsCoefficients tps_solve(const TpsParams& theta);

/// Cardinal weights phi_j(p) of the fixed-grid spline: mapping p gives
/// sum_j phi_j(p) * target_j, so the spline is linear in its 18 parameters.
std::array<Scalar, 9> tps_cardinal_weights(Point p);

Point apply_transform(const TransformParams& theta, Point p);
std::vector<Point> apply_transform(const TransformParams& theta, std::span<const Point> points);

/// The 21 x 21 grid {-1 + 0.1 n : n = 0..20}^2 used by the grid loss.
const std::vector<Point>& loss_grid();

/// Mean squared distance between the loss grid mapped by both transforms.
Scalar grid_loss(const TransformParams& estimate, const TransformParams& truth);

/// As above; also writes dL/d(estimate parameters) into `gradient` (6 or 18).
Scalar grid_loss(const TransformParams& estimate, const TransformParams& truth,
                 std::span<Scalar> gradient);

/// Differentiable batch form: `estimates` is N x P, the result is the mean of
/// the N per-pair losses.
Tensor grid_loss(const Tensor& estimates, TransformKind kind,
                 std::span<const TransformParams> truths);

/// outer(inner(p)). Supports affine o affine and affine o TPS; the latter is
/// again a fixed-grid TPS (its control-point targets pushed through `outer`),
/// which is exact because the spline reproduces affine maps.
TransformParams compose(const TransformParams& outer, const TransformParams& inner);

struct InversePoint {
  Point point;
  bool converged = false;
  Scalar residual = 0;
};

/// Finds x with T(x) = p for every query. Affine maps use the closed-form
/// inverse (NumericError when |det| <= 1e-12); splines use Gauss-Newton seeded
/// from the nearest node of a dense grid, flagging points whose residual stays
/// above 1e-6.
std::vector<InversePoint> invert(const TransformParams& theta, std::span<const Point> points);

// Closed-form inverse; NumericError when |det| <= 1e-12.
AffineParams inverse(const AffineParams& theta);

}  // namespace geomatch
