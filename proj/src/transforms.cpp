#include "geomatch/transforms.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {

using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

constexpr Scalar kMaxCondition = Scalar(1e13);

// Inverse of the fixed-grid system matrix, restricted to its first 9 columns:
// [w; a] = kGridSolve * targets for either coordinate.
const MatrixX& grid_solve_matrix() {
  static const MatrixX m = [] {
    const auto& c = tps_control_points();
    MatrixX l = MatrixX::Zero(12, 12);
    for (int i = 0; i < 9; ++i) {
      for (int j = 0; j < 9; ++j) {
        const Scalar dx = c[i].x - c[j].x;
        const Scalar dy = c[i].y - c[j].y;
        l(i, j) = tps_kernel(dx * dx + dy * dy);
      }
      l(i, 9) = l(9, i) = 1;
      l(i, 10) = l(10, i) = c[i].x;
      l(i, 11) = l(11, i) = c[i].y;
    }
    MatrixX inv = l.fullPivLu().inverse();
    return MatrixX(inv.leftCols(9));
  }();
  return m;
}

Point affine_only(const TransformParams& theta, Point p) {
  return std::get<AffineParams>(theta).apply(p);
}

// d(mapped point)/d(params) at p. Affine and fixed-grid TPS are both linear in
// their parameters, so mapped = J * params exactly.
void accumulate_param_gradient(const TransformParams& estimate, Point p, Scalar gx, Scalar gy,
                               std::span<Scalar> grad) {
  if (std::holds_alternative<AffineParams>(estimate)) {
    grad[0] += gx * p.x;
    grad[1] += gx * p.y;
    grad[2] += gy * p.x;
    grad[3] += gy * p.y;
    grad[4] += gx;
    grad[5] += gy;
  } else {
    const auto phi = tps_cardinal_weights(p);
    for (int j = 0; j < 9; ++j) {
      grad[j] += gx * phi[j];
      grad[9 + j] += gy * phi[j];
    }
  }
}

const std::vector<std::array<Scalar, 9>>& loss_grid_weights() {
  static const std::vector<std::array<Scalar, 9>> w = [] {
    std::vector<std::array<Scalar, 9>> out;
    for (const auto& p : loss_grid()) out.push_back(tps_cardinal_weights(p));
    return out;
  }();
  return w;
}

// Transformed loss grid, using cached spline weights.
std::vector<Point> map_loss_grid(const TransformParams& theta) {
  const auto& grid = loss_grid();
  std::vector<Point> out(grid.size());
  if (const auto* a = std::get_if<AffineParams>(&theta)) {
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = a->apply(grid[i]);
  } else {
    const auto& t = std::get<TpsParams>(theta);
    const auto& weights = loss_grid_weights();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      Scalar x = 0, y = 0;
      for (int j = 0; j < 9; ++j) {
        x += weights[i][j] * t.coords[j];
        y += weights[i][j] * t.coords[9 + j];
      }
      out[i] = {x, y};
    }
  }
  return out;
}

}  // namespace

AffineParams AffineParams::from_array(std::span<const Scalar> v) {
  if (v.size() != 6) throw InvalidArgument("affine parameters need 6 values");
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

TpsParams TpsParams::identity() { return from_points(tps_control_points()); }

TpsParams TpsParams::from_points(std::span<const Point> targets) {
  if (targets.size() != 9) throw InvalidArgument("tps parameters need 9 target points");
  TpsParams t;
  for (std::size_t i = 0; i < 9; ++i) {
    t.coords[i] = targets[i].x;
    t.coords[9 + i] = targets[i].y;
  }
  return t;
}

TpsParams TpsParams::from_array(std::span<const Scalar> v) {
  if (v.size() != 18) throw InvalidArgument("tps parameters need 18 values");
  TpsParams t;
  std::copy(v.begin(), v.end(), t.coords.begin());
  return t;
}

TransformKind kind_of(const TransformParams& theta) {
  return std::holds_alternative<AffineParams>(theta) ? TransformKind::kAffine : TransformKind::kTps;
}

std::size_t param_count(TransformKind kind) { return kind == TransformKind::kAffine ? 6 : 18; }

std::string to_string(TransformKind kind) {
  return kind == TransformKind::kAffine ? "affine" : "tps";
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "affine") return TransformKind::kAffine;
  if (name == "tps") return TransformKind::kTps;
  throw InvalidArgument("unknown transform kind '" + name + "' (expected affine or tps)");
}

TransformParams identity_transform(TransformKind kind) {
  if (kind == TransformKind::kAffine) return AffineParams::identity();
  return TpsParams::identity();
}

std::vector<Scalar> to_vector(const TransformParams& theta) {
  if (const auto* a = std::get_if<AffineParams>(&theta)) {
    auto arr = a->to_array();
    return {arr.begin(), arr.end()};
  }
  const auto& c = std::get<TpsParams>(theta).coords;
  return {c.begin(), c.end()};
}

TransformParams from_vector(TransformKind kind, std::span<const Scalar> values) {
  if (kind == TransformKind::kAffine) return AffineParams::from_array(values);
  return TpsParams::from_array(values);
}

const std::array<Point, 9>& tps_control_points() {
  static const std::array<Point, 9> pts = [] {
    std::array<Point, 9> p{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p[r * 3 + c] = {Scalar(c - 1), Scalar(r - 1)};
    }
    return p;
  }();
  return pts;
}

Scalar tps_kernel(Scalar r2) { return r2 > Scalar(0) ? r2 * std::log(r2) : Scalar(0); }

Point TpsCoefficients::evaluate(Point p) const {
  Scalar x = ax[0] + ax[1] * p.x + ax[2] * p.y;
  Scalar y = ay[0] + ay[1] * p.x + ay[2] * p.y;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const Scalar dx = p.x - sources[i].x;
    const Scalar dy = p.y - sources[i].y;
    const Scalar u = tps_kernel(dx * dx + dy * dy);
    x += wx[i] * u;
    y += wy[i] * u;
  }
  return {x, y};
}

std::array<Scalar, 4> TpsCoefficients::jacobian(Point p) const {
  std::array<Scalar, 4> j{ax[1], ax[2], ay[1], ay[2]};
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const Scalar dx = p.x - sources[i].x;
    const Scalar dy = p.y - sources[i].y;
    const Scalar r2 = dx * dx + dy * dy;
    if (r2 <= Scalar(0)) continue;
    // dU/dp = 2 (p - c) (log r^2 + 1)
    const Scalar f = Scalar(2) * (std::log(r2) + Scalar(1));
    j[0] += wx[i] * f * dx;
    j[1] += wx[i] * f * dy;
    j[2] += wy[i] * f * dx;
    j[3] += wy[i] * f * dy;
  }
  return j;
}

TpsCoefficients solve_tps(std::span<const Point> sources, std::span<const Point> targets) {
  const auto n = static_cast<Eigen::Index>(sources.size());
  if (sources.size() != targets.size() || n < 3) {
    throw InvalidArgument("solve_tps: need matching source/target lists of at least 3 points");
  }
  MatrixX l = MatrixX::Zero(n + 3, n + 3);
  VectorX bx = VectorX::Zero(n + 3);
  VectorX by = VectorX::Zero(n + 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar dx = sources[i].x - sources[j].x;
      const Scalar dy = sources[i].y - sources[j].y;
      l(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    l(i, n) = l(n, i) = 1;
    l(i, n + 1) = l(n + 1, i) = sources[i].x;
    l(i, n + 2) = l(n + 2, i) = sources[i].y;
    bx(i) = targets[i].x;
    by(i) = targets[i].y;
  }
  Eigen::JacobiSVD<MatrixX> svd(l);
  const auto& sv = svd.singularValues();
  const Scalar smin = sv(sv.size() - 1);
  const Scalar cond = smin > Scalar(0) ? sv(0) / smin : std::numeric_limits<Scalar>::infinity();
  if (!(cond < kMaxCondition)) {
    std::ostringstream os;
    os << "solve_tps: singular spline system (condition number " << cond << ")";
    throw NumericError(os.str());
  }
  Eigen::PartialPivLU<MatrixX> lu(l);
  VectorX sx = lu.solve(bx);
  VectorX sy = lu.solve(by);

  TpsCoefficients out;
  out.sources.assign(sources.begin(), sources.end());
  out.wx.assign(sx.data(), sx.data() + n);
  out.wy.assign(sy.data(), sy.data() + n);
  for (int k = 0; k < 3; ++k) {
    out.ax[k] = sx(n + k);
    out.ay[k] = sy(n + k);
  }
  out.condition_number = cond;
  return out;
}

TpsCoefficients tps_solve(const TpsParams& theta) {
  std::array<Point, 9> targets{};
  for (std::size_t i = 0; i < 9; ++i) targets[i] = theta.target(i);
  return solve_tps(tps_control_points(), targets);
}

std::array<Scalar, 9> tps_cardinal_weights(Point p) {
  const auto& c = tps_control_points();
  const auto& m = grid_solve_matrix();
  Scalar basis[12];
  for (int i = 0; i < 9; ++i) {
    const Scalar dx = p.x - c[i].x;
    const Scalar dy = p.y - c[i].y;
    basis[i] = tps_kernel(dx * dx + dy * dy);
  }
  basis[9] = 1;
  basis[10] = p.x;
  basis[11] = p.y;
  std::array<Scalar, 9> w{};
  for (int j = 0; j < 9; ++j) {
    Scalar s = 0;
    for (int r = 0; r < 12; ++r) s += basis[r] * m(r, j);
    w[j] = s;
  }
  return w;
}

Point apply_transform(const TransformParams& theta, Point p) {
  if (std::holds_alternative<AffineParams>(theta)) return affine_only(theta, p);
  const auto& t = std::get<TpsParams>(theta);
  const auto w = tps_cardinal_weights(p);
  Point out;
  for (int j = 0; j < 9; ++j) {
    out.x += w[j] * t.coords[j];
    out.y += w[j] * t.coords[9 + j];
  }
  return out;
}

std::vector<Point> apply_transform(const TransformParams& theta, std::span<const Point> points) {
  std::vector<Point> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(apply_transform(theta, p));
  return out;
}

const std::vector<Point>& loss_grid() {
  static const std::vector<Point> grid = [] {
    std::vector<Point> g;
    g.reserve(441);
    for (int iy = 0; iy <= 20; ++iy) {
      for (int ix = 0; ix <= 20; ++ix) {
        g.push_back({Scalar(-1) + Scalar(0.1) * ix, Scalar(-1) + Scalar(0.1) * iy});
      }
    }
    return g;
  }();
  return grid;
}

namespace {

// Per-point displacement between the two mapped grids. Two affine maps are
// differenced in parameter space first, so equal linear parts cancel exactly.
std::vector<Point> grid_residuals(const TransformParams& estimate, const TransformParams& truth) {
  const auto* ea = std::get_if<AffineParams>(&estimate);
  const auto* ta = std::get_if<AffineParams>(&truth);
  if (ea && ta) {
    const AffineParams d{ea->a11 - ta->a11, ea->a12 - ta->a12, ea->a21 - ta->a21,
                         ea->a22 - ta->a22, ea->tx - ta->tx,   ea->ty - ta->ty};
    std::vector<Point> out;
    out.reserve(loss_grid().size());
    for (const Point& g : loss_grid()) out.push_back(d.apply(g));
    return out;
  }
  auto out = map_loss_grid(estimate);
  const auto b = map_loss_grid(truth);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {out[i].x - b[i].x, out[i].y - b[i].y};
  return out;
}

}  // namespace

Scalar grid_loss(const TransformParams& estimate, const TransformParams& truth) {
  const auto r = grid_residuals(estimate, truth);
  // Extended-precision sum: 441 equal terms average back to that term exactly.
  long double total = 0;
  for (const Point& d : r) total += d.x * d.x + d.y * d.y;
  return static_cast<Scalar>(total / static_cast<long double>(r.size()));
}

Scalar grid_loss(const TransformParams& estimate, const TransformParams& truth,
                 std::span<Scalar> gradient) {
  if (gradient.size() != param_count(kind_of(estimate))) {
    throw InvalidArgument("grid_loss: gradient buffer has wrong length");
  }
  std::fill(gradient.begin(), gradient.end(), Scalar(0));
  const auto& grid = loss_grid();
  const auto r = grid_residuals(estimate, truth);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(grid.size());
  long double total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total += r[i].x * r[i].x + r[i].y * r[i].y;
    accumulate_param_gradient(estimate, grid[i], Scalar(2) * r[i].x * inv_n,
                              Scalar(2) * r[i].y * inv_n, gradient);
  }
  return static_cast<Scalar>(total / static_cast<long double>(r.size()));
}

Tensor grid_loss(const Tensor& estimates, TransformKind kind,
                 std::span<const TransformParams> truths) {
  const std::size_t p = param_count(kind);
  if (estimates.rank() != 2 || estimates.dim(1) != p || estimates.dim(0) != truths.size() ||
      truths.empty()) {
    throw InvalidArgument("grid_loss: estimates " + shape_to_string(estimates.shape()) +
                          " do not match " + std::to_string(truths.size()) + " x " +
                          std::to_string(p));
  }
  const std::size_t n = truths.size();
  auto values = estimates.values();
  std::vector<Scalar> grad(n * p);
  Scalar total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    auto theta = from_vector(kind, values.subspan(b * p, p));
    total += grid_loss(theta, truths[b], std::span<Scalar>(grad).subspan(b * p, p));
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  for (auto& g : grad) g *= inv_n;
  return Tensor::from_op({}, {total * inv_n}, {estimates},
                         [grad = std::move(grad)](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
  }, "grid_loss");
}

TransformParams compose(const TransformParams& outer, const TransformParams& inner) {
  const auto* o = std::get_if<AffineParams>(&outer);
  if (o == nullptr) {
    throw InvalidArgument("compose: only an affine outer transform is supported");
  }
  if (const auto* i = std::get_if<AffineParams>(&inner)) {
    return AffineParams{o->a11 * i->a11 + o->a12 * i->a21, o->a11 * i->a12 + o->a12 * i->a22,
                        o->a21 * i->a11 + o->a22 * i->a21, o->a21 * i->a12 + o->a22 * i->a22,
                        o->a11 * i->tx + o->a12 * i->ty + o->tx,
                        o->a21 * i->tx + o->a22 * i->ty + o->ty};
  }
  const auto& t = std::get<TpsParams>(inner);
  std::array<Point, 9> targets{};
  for (std::size_t k = 0; k < 9; ++k) targets[k] = o->apply(t.target(k));
  return TpsParams::from_points(targets);
}

AffineParams inverse(const AffineParams& a) {
  const Scalar det = a.determinant();
  if (!(std::abs(det) > Scalar(1e-12))) {
    throw NumericError("invert: affine transform is singular (det " + std::to_string(det) + ")");
  }
  const Scalar i11 = a.a22 / det;
  const Scalar i12 = -a.a12 / det;
  const Scalar i21 = -a.a21 / det;
  const Scalar i22 = a.a11 / det;
  return {i11, i12, i21, i22, -(i11 * a.tx + i12 * a.ty), -(i21 * a.tx + i22 * a.ty)};
}

std::vector<InversePoint> invert(const TransformParams& theta, std::span<const Point> points) {
  std::vector<InversePoint> out;
  out.reserve(points.size());
  if (const auto* a = std::get_if<AffineParams>(&theta)) {
    const AffineParams inv = inverse(*a);
    for (const auto& p : points) out.push_back({inv.apply(p), true, 0});
    return out;
  }

  const auto coeffs = tps_solve(std::get<TpsParams>(theta));
  constexpr int kSeedSide = 81;
  constexpr Scalar kSeedExtent = 2;
  std::vector<Point> seeds;
  std::vector<Point> images;
  seeds.reserve(kSeedSide * kSeedSide);
  for (int iy = 0; iy < kSeedSide; ++iy) {
    for (int ix = 0; ix < kSeedSide; ++ix) {
      const Point s{-kSeedExtent + 2 * kSeedExtent * ix / (kSeedSide - 1),
                    -kSeedExtent + 2 * kSeedExtent * iy / (kSeedSide - 1)};
      seeds.push_back(s);
      images.push_back(coeffs.evaluate(s));
    }
  }
  auto residual_of = [&](Point x, Point target) {
    const Point m = coeffs.evaluate(x);
    return std::hypot(m.x - target.x, m.y - target.y);
  };

  for (const auto& target : points) {
    std::size_t best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    for (std::size_t s = 0; s < images.size(); ++s) {
      const Scalar d = std::hypot(images[s].x - target.x, images[s].y - target.y);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    Point x = seeds[best];
    Scalar res = best_d;
    for (int iter = 0; iter < 60 && res > Scalar(1e-13); ++iter) {
      const Point m = coeffs.evaluate(x);
      const Scalar rx = m.x - target.x;
      const Scalar ry = m.y - target.y;
      const auto j = coeffs.jacobian(x);
      const Scalar det = j[0] * j[3] - j[1] * j[2];
      if (std::abs(det) < Scalar(1e-14)) break;
      const Point step{(j[3] * rx - j[1] * ry) / det, (-j[2] * rx + j[0] * ry) / det};
      // Backtrack until the residual decreases.
      Scalar t = 1;
      Point next{x.x - step.x, x.y - step.y};
      Scalar next_res = residual_of(next, target);
      while (next_res > res && t > Scalar(1e-4)) {
        t *= Scalar(0.5);
        next = {x.x - t * step.x, x.y - t * step.y};
        next_res = residual_of(next, target);
      }
      if (next_res >= res) break;
      x = next;
      res = next_res;
    }
    out.push_back({x, res < Scalar(1e-6), res});
  }
  return out;
}

}  // namespace geomatch
