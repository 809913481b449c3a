#include "geomatch/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "geomatch/errors.hpp"
#include "geomatch/pipeline.hpp"
#include "geomatch/random.hpp"
#include "geomatch/resampler.hpp"
#include "json.hpp"

namespace geomatch {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;

bool foreground(Scalar v) { return v > Scalar(0.5); }

Json points_to_json(std::span<const Point> pts) {
  Json arr = Json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

std::vector<Point> points_from_json(const Json& arr) {
  std::vector<Point> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) throw InvalidArgument("keypoint must be an [x, y] pair");
    out.push_back({p[0].get<Scalar>(), p[1].get<Scalar>()});
  }
  return out;
}

// h x w x d descriptors (a leading batch axis of 1 is accepted).
struct Grid {
  std::size_t h = 0, w = 0, d = 0;
  std::span<const Scalar> v;
};

Grid as_grid(const Tensor& t, const char* name) {
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3), t.values()};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2), t.values()};
  throw InvalidArgument(std::string("tentative_matches: ") + name + " must be h x w x d, got " +
                        shape_to_string(t.shape()));
}

Point cell_center(std::size_t index, const Grid& g) {
  const auto row = static_cast<Scalar>(index / g.w);
  const auto col = static_cast<Scalar>(index % g.w);
  return pixel_to_normalized(col, row, static_cast<int>(g.w), static_cast<int>(g.h));
}

Scalar residual(const AffineParams& theta, const Correspondence& c) {
  const Point p = theta.apply(c.b);
  return std::hypot(p.x - c.a.x, p.y - c.a.y);
}

Image load_optional(const fs::path& base, const std::string& rel) {
  if (rel.empty()) return {};
  return read_png(base / rel);
}

// Single-channel view of a mask (first channel).
Image first_channel(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(y, x, 0) = img.at(y, x, 0);
  }
  return out;
}

}  // namespace

Scalar pck(std::span<const Point> predicted, std::span<const Point> target, Scalar bbox_height,
           Scalar bbox_width, Scalar alpha) {
  if (predicted.size() != target.size()) {
    throw InvalidArgument("pck: predicted and target lists differ in length");
  }
  if (predicted.empty()) throw UndefinedMetric("pck: no keypoints");
  const Scalar threshold = alpha * std::max(bbox_height, bbox_width);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const Scalar d = std::hypot(predicted[i].x - target[i].x, predicted[i].y - target[i].y);
    if (d <= threshold) ++correct;
  }
  return static_cast<Scalar>(correct) / static_cast<Scalar>(predicted.size());
}

TransferResult transfer_keypoints(const TransformParams& theta, std::span<const Point> keypoints_a,
                                  ImageSize size_a, ImageSize size_b) {
  std::vector<Point> normalized;
  normalized.reserve(keypoints_a.size());
  for (const auto& k : keypoints_a) {
    normalized.push_back(pixel_to_normalized(k.x, k.y, size_a.width, size_a.height));
  }
  const auto inv = invert(theta, normalized);
  TransferResult out;
  for (const auto& r : inv) {
    out.points.push_back(normalized_to_pixel(r.point, size_b.width, size_b.height));
    out.converged.push_back(r.converged);
    if (!r.converged) ++out.failures;
  }
  return out;
}

MaskMetrics mask_transfer_metrics(const TransformParams& theta, const Image& mask_a,
                                  const Image& mask_b) {
  if (mask_a.pixels.empty() || mask_b.pixels.empty()) throw InvalidArgument("mask is empty");
  const Image warped =
      warp(first_channel(mask_a), theta, mask_b.height, mask_b.width, Interpolation::kNearest);
  std::size_t agree = 0, inter = 0, uni = 0;
  for (int y = 0; y < mask_b.height; ++y) {
    for (int x = 0; x < mask_b.width; ++x) {
      const bool a = foreground(warped.at(y, x, 0));
      const bool b = foreground(mask_b.at(y, x, 0));
      agree += a == b;
      inter += a && b;
      uni += a || b;
    }
  }
  if (uni == 0) throw UndefinedMetric("mask transfer: both masks are empty");
  const auto total = static_cast<Scalar>(mask_b.height) * mask_b.width;
  return {static_cast<Scalar>(agree) / total, static_cast<Scalar>(inter) / static_cast<Scalar>(uni)};
}

AffineRange AffineRange::from_sampling(const SamplingRanges& r) {
  // Shear stretches the singular values by at most a factor (1 + shear).
  const Scalar slack = 1 + r.max_shear;
  return {1 / (r.max_scale * slack), r.max_scale * slack, 2 * r.max_translation};
}

bool AffineRange::admits(const AffineParams& t) const {
  if (!(t.determinant() > 0)) return false;
  if (std::abs(t.tx) > max_translation || std::abs(t.ty) > max_translation) return false;
  Eigen::Matrix<Scalar, 2, 2> m;
  m << t.a11, t.a12, t.a21, t.a22;
  const auto sv = Eigen::JacobiSVD<Eigen::Matrix<Scalar, 2, 2>>(m).singularValues();
  return sv(1) >= min_singular && sv(0) <= max_singular;
}

std::vector<Correspondence> tentative_matches(const Tensor& features_a, const Tensor& features_b,
                                              const RansacConfig& config) {
  const Grid a = as_grid(features_a, "features_a");
  const Grid b = as_grid(features_b, "features_b");
  if (a.d != b.d) throw InvalidArgument("tentative_matches: descriptor sizes differ");
  const std::size_t na = a.h * a.w;
  const std::size_t nb = b.h * b.w;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Mat> fa(a.v.data(), static_cast<Eigen::Index>(na), static_cast<Eigen::Index>(a.d));
  const Eigen::Map<const Mat> fb(b.v.data(), static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(b.d));
  // Squared distances: |b|^2 + |a|^2 - 2 b.a
  Mat d2 = (-2 * fb * fa.transpose()).eval();
  d2.colwise() += fb.rowwise().squaredNorm();
  d2.rowwise() += fa.rowwise().squaredNorm().transpose();
  d2 = d2.cwiseMax(0);

  std::vector<std::size_t> best_a(nb), best_b(na);
  for (std::size_t j = 0; j < na; ++j) {
    Eigen::Index arg;
    d2.col(static_cast<Eigen::Index>(j)).minCoeff(&arg);
    best_b[j] = static_cast<std::size_t>(arg);
  }
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < nb; ++i) {
    Scalar first = std::numeric_limits<Scalar>::infinity();
    Scalar second = first;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < na; ++j) {
      const Scalar v = d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (v < first) {
        second = first;
        first = v;
        arg = j;
      } else if (v < second) {
        second = v;
      }
    }
    best_a[i] = arg;
    const bool ratio_ok = std::sqrt(first) < config.snn_ratio * std::sqrt(second);
    const bool mutual = config.mutual_best && best_b[arg] == i;
    if (ratio_ok || mutual) out.push_back({cell_center(i, b), cell_center(arg, a)});
  }
  return out;
}

AffineParams fit_affine(std::span<const Correspondence> matches, std::span<const std::size_t> subset) {
  std::vector<std::size_t> idx(subset.begin(), subset.end());
  if (idx.empty()) {
    for (std::size_t i = 0; i < matches.size(); ++i) idx.push_back(i);
  }
  if (idx.size() < 3) throw EstimationError("affine fit needs at least 3 correspondences");
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> x(n, 3);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 2> y(n, 2);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& c = matches[idx[static_cast<std::size_t>(r)]];
    x.row(r) << c.b.x, c.b.y, 1;
    y.row(r) << c.a.x, c.a.y;
  }
  const Eigen::ColPivHouseholderQR<Eigen::Matrix<Scalar, Eigen::Dynamic, 3>> qr(x);
  if (qr.rank() < 3) throw EstimationError("affine fit: correspondences are collinear");
  const Eigen::Matrix<Scalar, 3, 2> s = qr.solve(y);
  return {s(0, 0), s(1, 0), s(0, 1), s(1, 1), s(2, 0), s(2, 1)};
}

RansacResult ransac_affine(std::span<const Correspondence> matches, const RansacConfig& config) {
  if (matches.size() < 3) {
    throw EstimationError("ransac: " + std::to_string(matches.size()) +
                          " tentative matches, need at least 3");
  }
  Rng rng(config.seed);
  RansacResult result;
  result.matches.assign(matches.begin(), matches.end());
  std::vector<std::size_t> best;
  std::vector<std::size_t> current;
  for (int it = 0; it < config.iterations; ++it) {
    std::size_t s[3];
    s[0] = rng.index(matches.size());
    do s[1] = rng.index(matches.size()); while (s[1] == s[0]);
    do s[2] = rng.index(matches.size()); while (s[2] == s[0] || s[2] == s[1]);
    const Point& p0 = matches[s[0]].b;
    const Point& p1 = matches[s[1]].b;
    const Point& p2 = matches[s[2]].b;
    const Scalar area = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    if (std::abs(area) < Scalar(1e-9)) continue;
    const AffineParams h = fit_affine(matches, s);
    ++result.hypotheses;
    if (config.range_filter && !config.range.admits(h)) {
      ++result.rejected_by_range;
      continue;
    }
    current.clear();
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (residual(h, matches[i]) <= config.inlier_tol) current.push_back(i);
    }
    if (current.size() > best.size()) best = current;
  }
  if (best.size() < 3) throw EstimationError("ransac: no hypothesis gathered 3 inliers");
  result.theta = fit_affine(matches, best);
  result.inliers = std::move(best);
  return result;
}

RansacResult ransac_affine(const Tensor& features_a, const Tensor& features_b,
                           const RansacConfig& config) {
  const auto matches = tentative_matches(features_a, features_b, config);
  return ransac_affine(matches, config);
}

Image difference_map(const Image& image_a, const Image& image_b, const TransformParams& theta,
                     const GeometryEstimator& features) {
  NoGradGuard guard;
  const int n = features.config().features.input_size;
  const Image warped = warp(image_a, theta, image_b.height, image_b.width);
  const Tensor fa = features.extract_features(to_tensor(resize(warped, n, n)));
  const Tensor fb = features.extract_features(to_tensor(resize(image_b, n, n)));
  const auto h = static_cast<int>(fa.dim(1));
  const auto w = static_cast<int>(fa.dim(2));
  const std::size_t d = fa.dim(3);
  Image cells(h, w, 1);
  const auto va = fa.values();
  const auto vb = fb.values();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * w + x) * d;
      Scalar s = 0;
      for (std::size_t k = 0; k < d; ++k) s += (va[base + k] - vb[base + k]) * (va[base + k] - vb[base + k]);
      cells.at(y, x, 0) = std::sqrt(s);
    }
  }
  return normalize_for_display(resize(cells, image_b.height, image_b.width));
}

std::vector<EvalRecord> read_benchmark(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open benchmark " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = Json::parse(line);
      EvalRecord r;
      r.pair_id = j.contains("pair_id") && j["pair_id"].is_number()
                      ? std::to_string(j["pair_id"].get<std::uint64_t>())
                      : j.value("pair_id", std::to_string(out.size()));
      r.image_a_path = j.at("image_A").get<std::string>();
      r.image_b_path = j.at("image_B").get<std::string>();
      r.keypoints_a = points_from_json(j.value("keypoints_A", Json::array()));
      r.keypoints_b = points_from_json(j.value("keypoints_B", Json::array()));
      if (r.keypoints_a.size() != r.keypoints_b.size()) {
        throw InvalidArgument("keypoints_A and keypoints_B differ in length");
      }
      const auto bbox = j.at("bbox_B").get<std::vector<Scalar>>();
      if (bbox.size() != 4) throw InvalidArgument("bbox_B must be [x, y, w, h]");
      r.bbox_b = {bbox[0], bbox[1], bbox[2], bbox[3]};
      r.mask_a_path = j.value("mask_A", "");
      r.mask_b_path = j.value("mask_B", "");
      r.category = j.value("category", "");
      if (j.contains("theta_gt")) {
        const auto& t = j["theta_gt"];
        r.theta_gt = from_vector(parse_transform_kind(t.at("kind").get<std::string>()),
                                 t.at("theta").get<std::vector<Scalar>>());
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw IoError("benchmark " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_benchmark(const fs::path& path, std::span<const EvalRecord> records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write benchmark " + path.string());
  for (const auto& r : records) {
    Json j;
    j["pair_id"] = r.pair_id;
    j["image_A"] = r.image_a_path;
    j["image_B"] = r.image_b_path;
    j["keypoints_A"] = points_to_json(r.keypoints_a);
    j["keypoints_B"] = points_to_json(r.keypoints_b);
    j["bbox_B"] = {r.bbox_b.x, r.bbox_b.y, r.bbox_b.w, r.bbox_b.h};
    if (!r.mask_a_path.empty()) j["mask_A"] = r.mask_a_path;
    if (!r.mask_b_path.empty()) j["mask_B"] = r.mask_b_path;
    j["category"] = r.category;
    if (r.theta_gt) {
      j["theta_gt"] = {{"kind", to_string(kind_of(*r.theta_gt))}, {"theta", to_vector(*r.theta_gt)}};
    }
    out << j.dump() << '\n';
  }
}

void synthetic_keypoints(const TransformParams& theta, ImageSize size, int grid,
                         std::vector<Point>& keypoints_a, std::vector<Point>& keypoints_b) {
  if (grid < 1) throw InvalidArgument("keypoint grid must be >= 1");
  keypoints_a.clear();
  keypoints_b.clear();
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      // Lattice over the central 80% of B.
      const Scalar fx = grid == 1 ? Scalar(0.5) : Scalar(0.1) + Scalar(0.8) * c / (grid - 1);
      const Scalar fy = grid == 1 ? Scalar(0.5) : Scalar(0.1) + Scalar(0.8) * r / (grid - 1);
      const Point kb{fx * (size.width - 1), fy * (size.height - 1)};
      const Point na = apply_transform(theta, pixel_to_normalized(kb.x, kb.y, size.width, size.height));
      const Point ka = normalized_to_pixel(na, size.width, size.height);
      if (ka.x < 0 || ka.y < 0 || ka.x > size.width - 1 || ka.y > size.height - 1) continue;
      keypoints_a.push_back(ka);
      keypoints_b.push_back(kb);
    }
  }
}

std::vector<EvalCase> make_synthetic_cases(std::span<const TrainingPair> pairs, int grid,
                                           const std::string& category) {
  std::vector<EvalCase> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    EvalCase c;
    c.image_a = p.image_a;
    c.image_b = p.image_b;
    auto& r = c.record;
    r.pair_id = std::to_string(i);
    r.category = category;
    r.bbox_b = {0, 0, static_cast<Scalar>(p.image_b.width), static_cast<Scalar>(p.image_b.height)};
    r.theta_gt = p.theta_gt;
    synthetic_keypoints(p.theta_gt, {p.image_b.height, p.image_b.width}, grid, r.keypoints_a,
                        r.keypoints_b);
    out.push_back(std::move(c));
  }
  return out;
}

void write_synthetic_benchmark(const fs::path& path, std::span<const EvalCase> cases) {
  const fs::path dir = path.parent_path();
  fs::create_directories(dir / "images");
  std::vector<EvalRecord> records;
  for (const auto& c : cases) {
    EvalRecord r = c.record;
    r.image_a_path = "images/" + r.pair_id + "_A.png";
    r.image_b_path = "images/" + r.pair_id + "_B.png";
    write_png(dir / r.image_a_path, c.image_a);
    write_png(dir / r.image_b_path, c.image_b);
    records.push_back(std::move(r));
  }
  write_benchmark(path, records);
}

Estimator identity_estimator(TransformKind kind) {
  return [kind](const Image&, const Image&, const EvalRecord&) { return identity_transform(kind); };
}

Estimator oracle_estimator() {
  return [](const Image&, const Image&, const EvalRecord& r) -> TransformParams {
    if (!r.theta_gt) throw InvalidArgument("record " + r.pair_id + " has no ground-truth transform");
    return *r.theta_gt;
  };
}

Estimator learned_estimator(std::vector<GeometryEstimator*> affine_stages,
                            GeometryEstimator* tps_stage) {
  if (affine_stages.empty()) throw InvalidArgument("learned estimator needs an affine stage");
  return [affine_stages, tps_stage](const Image& a, const Image& b,
                                    const EvalRecord&) -> TransformParams {
    if (tps_stage != nullptr) return estimate_two_stage(affine_stages, *tps_stage, a, b).composed;
    return estimate_affine(affine_stages, a, b);
  };
}

Estimator ransac_estimator(const GeometryEstimator& features, RansacConfig config) {
  return [&features, config](const Image& a, const Image& b, const EvalRecord&) -> TransformParams {
    NoGradGuard guard;
    const int n = features.config().features.input_size;
    const Tensor fa = features.extract_features(to_tensor(resize(a, n, n)));
    const Tensor fb = features.extract_features(to_tensor(resize(b, n, n)));
    return ransac_affine(fa, fb, config).theta;
  };
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  auto opt = [&](bool has, Scalar v) {
    if (has) os << v;
  };
  os << "pair_id,category,pck,pck_pooled,lt_acc,iou,keypoints,correct,status\n";
  std::size_t total_kp = 0, total_correct = 0;
  for (const auto& p : pairs) {
    os << p.pair_id << ',' << p.category << ',';
    opt(p.ok && p.keypoints > 0, p.pck);
    os << ',';
    opt(p.ok && p.keypoints > 0, p.pck);
    os << ',';
    opt(p.ok && p.mask.has_value(), p.mask ? p.mask->lt_acc : 0);
    os << ',';
    opt(p.ok && p.mask.has_value(), p.mask ? p.mask->iou : 0);
    os << ',' << p.keypoints << ',' << p.correct << ',';
    if (p.ok) {
      os << "ok";
    } else {
      std::string e = p.error;
      std::replace(e.begin(), e.end(), ',', ';');
      std::replace(e.begin(), e.end(), '\n', ' ');
      os << "error: " << e;
    }
    os << '\n';
    if (p.ok) {
      total_kp += p.keypoints;
      total_correct += p.correct;
    }
  }
  os << "aggregate,," << mean_pck << ',' << pooled_pck << ',';
  opt(mean_mask.has_value(), mean_mask ? mean_mask->lt_acc : 0);
  os << ',';
  opt(mean_mask.has_value(), mean_mask ? mean_mask->iou : 0);
  os << ',' << total_kp << ',' << total_correct << ",failures=" << failures << '\n';
  return os.str();
}

BenchmarkReport evaluate_cases(std::span<const EvalCase> cases, const Estimator& estimator,
                               Scalar alpha) {
  if (cases.empty()) throw InvalidArgument("evaluate_benchmark: no records");
  BenchmarkReport report;
  Scalar pck_sum = 0;
  std::size_t pck_pairs = 0, kp_total = 0, kp_correct = 0, mask_pairs = 0;
  MaskMetrics mask_sum;
  for (const auto& c : cases) {
    PairResult res;
    res.pair_id = c.record.pair_id;
    res.category = c.record.category;
    try {
      if (!c.load_error.empty()) throw IoError(c.load_error);
      const auto& r = c.record;
      const bool has_masks = !c.mask_a.pixels.empty() && !c.mask_b.pixels.empty();
      if (r.keypoints_a.empty() && !has_masks) throw UndefinedMetric("record has no keypoints or masks");
      const TransformParams theta = estimator(c.image_a, c.image_b, r);
      if (!r.keypoints_a.empty()) {
        const auto t = transfer_keypoints(theta, r.keypoints_a, {c.image_a.height, c.image_a.width},
                                          {c.image_b.height, c.image_b.width});
        res.pck = pck(t.points, r.keypoints_b, r.bbox_b.h, r.bbox_b.w, alpha);
        res.keypoints = r.keypoints_a.size();
        res.correct = static_cast<std::size_t>(std::llround(res.pck * static_cast<Scalar>(res.keypoints)));
        res.unconverged = t.failures;
      }
      if (has_masks) res.mask = mask_transfer_metrics(theta, c.mask_a, c.mask_b);
      res.ok = true;
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    if (res.ok) {
      if (res.keypoints > 0) {
        pck_sum += res.pck;
        ++pck_pairs;
        kp_total += res.keypoints;
        kp_correct += res.correct;
      }
      if (res.mask) {
        mask_sum.lt_acc += res.mask->lt_acc;
        mask_sum.iou += res.mask->iou;
        ++mask_pairs;
      }
    } else {
      ++report.failures;
    }
    report.pairs.push_back(std::move(res));
  }
  const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
  report.mean_pck = pck_pairs ? pck_sum / static_cast<Scalar>(pck_pairs) : nan;
  report.pooled_pck = kp_total ? static_cast<Scalar>(kp_correct) / static_cast<Scalar>(kp_total) : nan;
  if (mask_pairs) {
    report.mean_mask = MaskMetrics{mask_sum.lt_acc / static_cast<Scalar>(mask_pairs),
                                   mask_sum.iou / static_cast<Scalar>(mask_pairs)};
  }
  return report;
}

BenchmarkReport evaluate_benchmark(std::span<const EvalRecord> records, const fs::path& base_dir,
                                   const Estimator& estimator, Scalar alpha) {
  if (records.empty()) throw InvalidArgument("evaluate_benchmark: no records");
  std::vector<EvalCase> cases;
  cases.reserve(records.size());
  for (const auto& record : records) {
    EvalCase c;
    c.record = record;
    try {
      c.image_a = read_png(base_dir / record.image_a_path);
      c.image_b = read_png(base_dir / record.image_b_path);
      c.mask_a = load_optional(base_dir, record.mask_a_path);
      c.mask_b = load_optional(base_dir, record.mask_b_path);
    } catch (const std::exception& e) {
      c.load_error = e.what();
    }
    cases.push_back(std::move(c));
  }
  return evaluate_cases(cases, estimator, alpha);
}

}  // namespace geomatch
