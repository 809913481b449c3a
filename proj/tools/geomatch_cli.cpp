// geomatch: command-line front end. Every subcommand writes files and prints
// a one-line JSON summary on stdout; failures print one JSON object on stderr.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geomatch/checkpoint.hpp"
#include "geomatch/errors.hpp"
#include "geomatch/evaluation.hpp"
#include "geomatch/pipeline.hpp"
#include "geomatch/resampler.hpp"
#include "geomatch/synthgen.hpp"
#include "geomatch/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using geomatch::Scalar;
using Json = nlohmann::ordered_json;

namespace {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_level() {
  const char* env = std::getenv("GEOMATCH_LOG_LEVEL");
  if (env == nullptr) return LogLevel::kInfo;
  const std::string v = env;
  if (v == "error") return LogLevel::kError;
  if (v == "warn") return LogLevel::kWarn;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[geomatch] " << msg << '\n';
}

void emit(const Json& j) { std::cout << j.dump() << std::endl; }

std::string format_theta(const geomatch::TransformParams& theta) {
  std::ostringstream os;
  os << geomatch::to_string(geomatch::kind_of(theta));
  char buf[40];
  for (Scalar v : geomatch::to_vector(theta)) {
    std::snprintf(buf, sizeof buf, " %.17g", static_cast<double>(v));
    os << buf;
  }
  return os.str();
}

// "<kind> v1 v2 ..." on one line.
void write_theta(const fs::path& path, const geomatch::TransformParams& theta) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw geomatch::IoError("cannot write " + path.string());
  out << format_theta(theta) << '\n';
}

geomatch::TransformParams read_theta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw geomatch::IoError("cannot open theta file " + path.string());
  std::string kind;
  in >> kind;
  std::vector<Scalar> values;
  double v;
  while (in >> v) values.push_back(static_cast<Scalar>(v));
  const auto k = geomatch::parse_transform_kind(kind);
  if (values.size() != geomatch::param_count(k)) {
    throw geomatch::IoError("theta file " + path.string() + ": expected " +
                            std::to_string(geomatch::param_count(k)) + " values");
  }
  return geomatch::from_vector(k, values);
}

Json theta_json(const geomatch::TransformParams& theta) {
  return {{"kind", geomatch::to_string(geomatch::kind_of(theta))}, {"theta", geomatch::to_vector(theta)}};
}

struct RansacFlags {
  double snn_ratio = 0.9;
  int iterations = 1000;
  double inlier_tol = 0.05;
  bool no_range_filter = false;
  bool no_mutual = false;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--snn-ratio", snn_ratio, "Second-nearest-neighbour distance ratio");
    app->add_option("--iterations", iterations, "RANSAC hypotheses")->check(CLI::PositiveNumber);
    app->add_option("--inlier-tol", inlier_tol, "Inlier residual (normalized units)");
    app->add_flag("--no-range-filter", no_range_filter, "Accept hypotheses of any scale/shear");
    app->add_flag("--no-mutual", no_mutual, "Drop mutual-best matches that fail the ratio test");
    app->add_option("--ransac-seed", seed, "RANSAC sampling seed");
  }

  geomatch::RansacConfig config() const {
    geomatch::RansacConfig c;
    c.snn_ratio = snn_ratio;
    c.iterations = iterations;
    c.inlier_tol = inlier_tol;
    c.range_filter = !no_range_filter;
    c.mutual_best = !no_mutual;
    c.seed = seed;
    return c;
  }
};

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string sources;
  std::size_t procedural = 0;
  int source_size = 96;
  std::string out = "data";
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::string kind = "affine";
  std::uint64_t seed = 0;
  int crop_size = 64;
  int max_retries = 200;
  double max_scale = 2;
  double max_rotation = 0.5235987755982988;
  double max_shear = 0.2;
  double max_translation = 0.25;
  double tps_jitter = 0.25;
  bool benchmark = false;
  int keypoint_grid = 6;
};

void run_gen_data(const GenDataArgs& a) {
  fs::path source_dir = a.sources;
  const fs::path out = a.out;
  if (a.procedural > 0) {
    source_dir = out / "sources";
    geomatch::write_procedural_sources(source_dir, a.procedural, a.seed, a.source_size);
    log_info("wrote " + std::to_string(a.procedural) + " procedural sources to " + source_dir.string());
  }
  geomatch::SamplingRanges ranges{a.max_scale, a.max_rotation, a.max_shear, a.max_translation,
                                  a.tps_jitter};
  geomatch::SynthConfig config{a.crop_size, a.max_retries};
  const auto manifest = geomatch::generate_dataset(source_dir, a.n_train, a.n_val,
                                                   geomatch::parse_transform_kind(a.kind), ranges,
                                                   out, a.seed, config);
  Json summary{{"command", "gen-data"},
               {"manifest", manifest.path.string()},
               {"train", manifest.split("train").size()},
               {"val", manifest.split("val").size()}};
  if (a.benchmark) {
    std::vector<geomatch::EvalRecord> records;
    for (const auto& r : manifest.split("val")) {
      const auto pair = geomatch::load_pair(manifest, r);
      geomatch::EvalRecord e;
      e.pair_id = std::to_string(r.pair_id);
      e.image_a_path = r.image_a_path;
      e.image_b_path = r.image_b_path;
      e.category = "synthetic";
      e.bbox_b = {0, 0, static_cast<Scalar>(pair.image_b.width), static_cast<Scalar>(pair.image_b.height)};
      e.theta_gt = pair.theta_gt;
      geomatch::synthetic_keypoints(pair.theta_gt, {pair.image_b.height, pair.image_b.width},
                                    a.keypoint_grid, e.keypoints_a, e.keypoints_b);
      records.push_back(std::move(e));
    }
    const fs::path bench = out / "benchmark.jsonl";
    geomatch::write_benchmark(bench, records);
    summary["benchmark"] = bench.string();
  }
  emit(summary);
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest;
  std::string stage = "affine";
  std::string out = "model.ckpt";
  std::string resume;
  std::string prewarp_affine;
  std::string matching = "correlation";
  bool freeze_features = false;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0;
  std::size_t batch = 16;
  int epochs = 10;
  int patience = 3;
  std::uint64_t seed = 0;
  std::string report;
};

void run_train(const TrainArgs& a) {
  geomatch::StageTrainingOptions o;
  o.model = geomatch::ModelConfig::desk(geomatch::parse_transform_kind(a.stage));
  o.model.matching = geomatch::parse_matching_mode(a.matching);
  o.model.freeze_features = a.freeze_features;
  o.hyper.lr = a.lr;
  o.hyper.momentum = a.momentum;
  o.hyper.weight_decay = a.weight_decay;
  o.hyper.batch = a.batch;
  o.hyper.epochs = a.epochs;
  o.hyper.patience = a.patience;
  o.hyper.seed = a.seed;
  o.resume_from = a.resume;
  o.prewarp_affine = a.prewarp_affine;
  o.on_epoch = [](const geomatch::EpochRow& r) {
    std::ostringstream os;
    os << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " ("
       << r.wall_seconds << " s)";
    log_info(os.str());
  };
  const auto report = geomatch::train_stage(a.manifest, o, a.out);
  if (!a.report.empty()) {
    std::ofstream csv(a.report);
    if (!csv) throw geomatch::IoError("cannot write " + a.report);
    csv << report.to_csv();
  }
  emit({{"command", "train"},
        {"checkpoint", a.out},
        {"epochs", report.epochs.size()},
        {"initial_val_loss", report.initial_val_loss},
        {"best_epoch", report.best_epoch},
        {"best_val_loss", report.best_val_loss},
        {"early_stopped", report.early_stopped}});
}

// ------------------------------------------------------------------- align

struct AlignArgs {
  std::string image_a, image_b;
  std::string affine;
  std::string ensemble;
  std::string tps;
  bool affine_only = false;
  std::string out_dir = "aligned";
};

void run_align(const AlignArgs& a) {
  const auto img_a = geomatch::read_png(a.image_a);
  const auto img_b = geomatch::read_png(a.image_b);
  auto affine = geomatch::load_model(a.affine);
  std::optional<geomatch::GeometryEstimator> second;
  std::vector<geomatch::GeometryEstimator*> stages{&affine};
  if (!a.ensemble.empty()) {
    second.emplace(geomatch::load_model(a.ensemble));
    stages.push_back(&*second);
  }
  const fs::path out = a.out_dir;
  fs::create_directories(out);
  Json summary{{"command", "align"}};
  if (a.affine_only) {
    const auto theta = geomatch::estimate_affine(stages, img_a, img_b);
    write_theta(out / "theta.txt", theta);
    geomatch::write_png(out / "warped.png", geomatch::warp(img_a, theta, img_b.height, img_b.width));
    summary["theta"] = theta_json(theta);
  } else {
    if (a.tps.empty()) throw CLI::ValidationError("--tps", "required unless --affine-only is given");
    auto tps = geomatch::load_model(a.tps);
    const auto r = geomatch::estimate_two_stage(stages, tps, img_a, img_b);
    write_theta(out / "theta_affine.txt", r.affine);
    write_theta(out / "theta.txt", r.composed);
    geomatch::write_png(out / "warped_affine.png", geomatch::warp(img_a, r.affine, img_b.height, img_b.width));
    geomatch::write_png(out / "warped.png", geomatch::warp(img_a, r.composed, img_b.height, img_b.width));
    summary["theta_affine"] = theta_json(r.affine);
    summary["theta"] = theta_json(r.composed);
  }
  summary["out_dir"] = out.string();
  emit(summary);
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string benchmark;
  std::string estimator = "learned";
  std::string affine, ensemble, tps, features;
  std::string kind = "affine";
  double alpha = 0.1;
  std::string report;
  RansacFlags ransac;
};

Json report_json(const geomatch::BenchmarkReport& r) {
  Json j{{"pairs", r.pairs.size()},
         {"mean_pck", r.mean_pck},
         {"pooled_pck", r.pooled_pck},
         {"failures", r.failures}};
  if (r.mean_mask) {
    j["lt_acc"] = r.mean_mask->lt_acc;
    j["iou"] = r.mean_mask->iou;
  }
  return j;
}

void write_report(const std::string& path, const geomatch::BenchmarkReport& r) {
  if (path.empty()) return;
  std::ofstream csv(path);
  if (!csv) throw geomatch::IoError("cannot write " + path);
  csv << r.to_csv();
}

void run_eval(const EvalArgs& a) {
  const auto records = geomatch::read_benchmark(a.benchmark);
  const fs::path base = fs::path(a.benchmark).parent_path();
  std::optional<geomatch::GeometryEstimator> affine, second, tps, features;
  geomatch::Estimator estimator;
  if (a.estimator == "identity") {
    estimator = geomatch::identity_estimator(geomatch::parse_transform_kind(a.kind));
  } else if (a.estimator == "gt-oracle") {
    estimator = geomatch::oracle_estimator();
  } else if (a.estimator == "learned") {
    if (a.affine.empty()) throw CLI::ValidationError("--affine", "required for the learned estimator");
    affine.emplace(geomatch::load_model(a.affine));
    std::vector<geomatch::GeometryEstimator*> stages{&*affine};
    if (!a.ensemble.empty()) {
      second.emplace(geomatch::load_model(a.ensemble));
      stages.push_back(&*second);
    }
    if (!a.tps.empty()) tps.emplace(geomatch::load_model(a.tps));
    estimator = geomatch::learned_estimator(stages, tps ? &*tps : nullptr);
  } else {
    const std::string path = a.features.empty() ? a.affine : a.features;
    if (path.empty()) throw CLI::ValidationError("--features", "required for the ransac estimator");
    features.emplace(geomatch::load_model(path));
    estimator = geomatch::ransac_estimator(*features, a.ransac.config());
  }
  const auto report = geomatch::evaluate_benchmark(records, base, estimator, a.alpha);
  write_report(a.report, report);
  Json j{{"command", "eval"}, {"estimator", a.estimator}};
  j.update(report_json(report));
  emit(j);
}

// ---------------------------------------------------------------- baseline

struct BaselineArgs {
  std::string image_a, image_b;
  std::string benchmark;
  std::string features;
  std::string out;
  std::string report;
  double alpha = 0.1;
  RansacFlags ransac;
};

void run_baseline(const BaselineArgs& a) {
  const auto model = geomatch::load_model(a.features);
  const auto estimator = geomatch::ransac_estimator(model, a.ransac.config());
  if (!a.benchmark.empty()) {
    const auto records = geomatch::read_benchmark(a.benchmark);
    const auto report = geomatch::evaluate_benchmark(records, fs::path(a.benchmark).parent_path(),
                                                     estimator, a.alpha);
    write_report(a.report, report);
    Json j{{"command", "baseline"}};
    j.update(report_json(report));
    emit(j);
    return;
  }
  if (a.image_a.empty() || a.image_b.empty()) {
    throw CLI::ValidationError("--image-a/--image-b", "give an image pair or --benchmark");
  }
  const auto img_a = geomatch::read_png(a.image_a);
  const auto img_b = geomatch::read_png(a.image_b);
  const auto theta = estimator(img_a, img_b, {});
  if (!a.out.empty()) write_theta(a.out, theta);
  emit({{"command", "baseline"}, {"theta", theta_json(theta)}});
}

// ------------------------------------------------------------- viz-filters

struct VizArgs {
  std::string checkpoint;
  std::string out_dir = "filters";
  int scale = 16;
};

void run_viz_filters(const VizArgs& a) {
  const auto model = geomatch::load_model(a.checkpoint);
  if (model.config().matching == geomatch::MatchingMode::kConcat ||
      model.config().matching == geomatch::MatchingMode::kSubtract) {
    throw geomatch::InvalidArgument("filter visualization needs a correlation-based model");
  }
  const int n = model.config().features.output_size();
  const auto images = geomatch::visualize_regressor_filters(model.first_regressor_filter(), n, n);
  const fs::path out = a.out_dir;
  fs::create_directories(out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto shown = geomatch::normalize_for_display(images[i]);
    const auto big = geomatch::warp(shown, geomatch::AffineParams::identity(), n * a.scale, n * a.scale,
                                    geomatch::Interpolation::kNearest);
    char name[32];
    std::snprintf(name, sizeof name, "filter_%03zu.png", i);
    geomatch::write_png(out / name, big);
  }
  emit({{"command", "viz-filters"}, {"filters", images.size()}, {"out_dir", out.string()}});
}

// ---------------------------------------------------------------- diff-map

struct DiffArgs {
  std::string image_a, image_b;
  std::string features;
  std::string theta;
  std::string affine, tps;
  std::string out = "diff.png";
};

void run_diff_map(const DiffArgs& a) {
  const auto img_a = geomatch::read_png(a.image_a);
  const auto img_b = geomatch::read_png(a.image_b);
  const std::string feature_path = a.features.empty() ? a.affine : a.features;
  if (feature_path.empty()) throw CLI::ValidationError("--features", "a feature checkpoint is required");
  const auto features = geomatch::load_model(feature_path);
  geomatch::TransformParams theta = geomatch::AffineParams::identity();
  if (!a.theta.empty()) {
    theta = read_theta(a.theta);
  } else if (!a.affine.empty()) {
    auto affine = geomatch::load_model(a.affine);
    if (!a.tps.empty()) {
      auto tps = geomatch::load_model(a.tps);
      theta = geomatch::estimate_two_stage(affine, tps, img_a, img_b).composed;
    } else {
      geomatch::GeometryEstimator* stages[] = {&affine};
      theta = geomatch::estimate_affine(stages, img_a, img_b);
    }
  }
  const auto heat = geomatch::difference_map(img_a, img_b, theta, features);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  geomatch::write_png(a.out, heat);
  emit({{"command", "diff-map"}, {"out", a.out}, {"theta", theta_json(theta)}});
}

int fail(const char* kind, const std::string& type, const std::string& message, int code) {
  Json j{{"error", kind}, {"type", type}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric matching toolkit: synthetic data, training, alignment and evaluation"};
  app.name("geomatch");
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file ([section] key=value); flags override it");
  app.option_defaults()->always_capture_default();

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic training pairs and a manifest");
  gen_cmd->add_option("--sources", gen.sources, "Directory of source images (PNG)");
  gen_cmd->add_option("--procedural-sources", gen.procedural,
                      "Render this many procedural source images instead of reading --sources");
  gen_cmd->add_option("--source-size", gen.source_size, "Side of procedural sources (pixels)");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--n-train", gen.n_train, "Training pairs");
  gen_cmd->add_option("--n-val", gen.n_val, "Validation pairs");
  gen_cmd->add_option("--kind", gen.kind, "Transform kind")->check(CLI::IsMember({"affine", "tps"}));
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--crop-size", gen.crop_size, "Side of the generated images (pixels)")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-retries", gen.max_retries, "Rejected draws before giving up");
  gen_cmd->add_option("--max-scale", gen.max_scale, "Scale drawn log-uniformly in [1/s, s]");
  gen_cmd->add_option("--max-rotation", gen.max_rotation, "Rotation bound (radians)");
  gen_cmd->add_option("--max-shear", gen.max_shear, "Shear bound");
  gen_cmd->add_option("--max-translation", gen.max_translation, "Translation bound (normalized)");
  gen_cmd->add_option("--tps-jitter", gen.tps_jitter, "Control-point jitter bound (normalized)");
  gen_cmd->add_flag("--benchmark", gen.benchmark,
                    "Also write benchmark.jsonl with synthetic keypoints for the val split");
  gen_cmd->add_option("--keypoint-grid", gen.keypoint_grid, "Keypoint lattice side for --benchmark");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one estimation stage");
  train_cmd->add_option("--manifest", train.manifest, "Manifest written by gen-data")->required();
  train_cmd->add_option("--stage", train.stage, "Stage to train")->check(CLI::IsMember({"affine", "tps"}));
  train_cmd->add_option("--out", train.out, "Checkpoint path (best weights go to <out>.best)");
  train_cmd->add_option("--resume", train.resume, "Resume from this checkpoint");
  train_cmd->add_option("--prewarp-affine", train.prewarp_affine,
                        "tps stage: pre-align image A with this affine checkpoint");
  train_cmd->add_option("--matching", train.matching, "Matching layer")
      ->check(CLI::IsMember({"correlation", "correlation-unnormalized", "concat", "subtract"}));
  train_cmd->add_flag("--freeze-features", train.freeze_features, "Keep the feature extractor fixed");
  train_cmd->add_option("--lr", train.lr, "Learning rate");
  train_cmd->add_option("--momentum", train.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", train.weight_decay, "L2 weight decay");
  train_cmd->add_option("--batch", train.batch, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", train.epochs, "Total epochs");
  train_cmd->add_option("--patience", train.patience, "Early-stopping patience (epochs)");
  train_cmd->add_option("--seed", train.seed, "Initialization and shuffling seed");
  train_cmd->add_option("--report", train.report, "Write per-epoch losses as CSV");

  AlignArgs align;
  auto* align_cmd = app.add_subcommand("align", "Estimate and apply the transform between two images");
  align_cmd->add_option("--image-a", align.image_a, "Source image A (PNG)")->required();
  align_cmd->add_option("--image-b", align.image_b, "Target image B (PNG)")->required();
  align_cmd->add_option("--affine", align.affine, "Affine-stage checkpoint")->required();
  align_cmd->add_option("--ensemble", align.ensemble, "Second affine checkpoint to average with");
  align_cmd->add_option("--tps", align.tps, "Spline-stage checkpoint");
  align_cmd->add_flag("--affine-only", align.affine_only, "Skip the spline refinement");
  align_cmd->add_option("--out-dir", align.out_dir, "Output directory");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Keypoint-transfer evaluation on a benchmark file");
  eval_cmd->add_option("--benchmark", eval.benchmark, "Benchmark records (JSON lines)")->required();
  eval_cmd->add_option("--estimator", eval.estimator, "Transform estimator")
      ->check(CLI::IsMember({"learned", "ransac", "identity", "gt-oracle"}));
  eval_cmd->add_option("--affine", eval.affine, "Affine-stage checkpoint");
  eval_cmd->add_option("--ensemble", eval.ensemble, "Second affine checkpoint to average with");
  eval_cmd->add_option("--tps", eval.tps, "Spline-stage checkpoint");
  eval_cmd->add_option("--features", eval.features, "Feature checkpoint for ransac (default --affine)");
  eval_cmd->add_option("--kind", eval.kind, "Transform kind of the identity estimator")
      ->check(CLI::IsMember({"affine", "tps"}));
  eval_cmd->add_option("--alpha", eval.alpha, "PCK threshold as a fraction of the bbox size");
  eval_cmd->add_option("--report", eval.report, "Write the per-pair CSV report here");
  eval.ransac.add(eval_cmd);

  BaselineArgs base;
  auto* base_cmd = app.add_subcommand("baseline", "RANSAC affine baseline on learned descriptors");
  base_cmd->add_option("--features", base.features, "Checkpoint providing the feature extractor")
      ->required();
  base_cmd->add_option("--image-a", base.image_a, "Source image A (PNG)");
  base_cmd->add_option("--image-b", base.image_b, "Target image B (PNG)");
  base_cmd->add_option("--benchmark", base.benchmark, "Evaluate on a benchmark instead of one pair");
  base_cmd->add_option("--out", base.out, "Write the estimated transform here");
  base_cmd->add_option("--report", base.report, "Write the per-pair CSV report here");
  base_cmd->add_option("--alpha", base.alpha, "PCK threshold as a fraction of the bbox size");
  base.ransac.add(base_cmd);

  VizArgs viz;
  auto* viz_cmd = app.add_subcommand("viz-filters", "Render first regressor layer filters as images");
  viz_cmd->add_option("--checkpoint", viz.checkpoint, "Model checkpoint")->required();
  viz_cmd->add_option("--out-dir", viz.out_dir, "Output directory");
  viz_cmd->add_option("--scale", viz.scale, "Nearest-neighbour upscaling factor")->check(CLI::PositiveNumber);

  DiffArgs diff;
  auto* diff_cmd = app.add_subcommand("diff-map", "Descriptor-space difference heat map");
  diff_cmd->add_option("--image-a", diff.image_a, "Source image A (PNG)")->required();
  diff_cmd->add_option("--image-b", diff.image_b, "Target image B (PNG)")->required();
  diff_cmd->add_option("--features", diff.features, "Feature checkpoint (default --affine)");
  diff_cmd->add_option("--theta", diff.theta, "Transform file; overrides estimation");
  diff_cmd->add_option("--affine", diff.affine, "Affine-stage checkpoint used to estimate theta");
  diff_cmd->add_option("--tps", diff.tps, "Spline-stage checkpoint used to refine theta");
  diff_cmd->add_option("--out", diff.out, "Output PNG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.get_name(), e.what(), 1);
  }

  try {
    if (*gen_cmd) {
      if (gen.sources.empty() && gen.procedural == 0) {
        throw CLI::ValidationError("--sources", "give --sources or --procedural-sources");
      }
      run_gen_data(gen);
    } else if (*train_cmd) {
      run_train(train);
    } else if (*align_cmd) {
      run_align(align);
    } else if (*eval_cmd) {
      run_eval(eval);
    } else if (*base_cmd) {
      run_baseline(base);
    } else if (*viz_cmd) {
      run_viz_filters(viz);
    } else if (*diff_cmd) {
      run_diff_map(diff);
    }
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.get_name(), e.what(), 1);
  } catch (const geomatch::IoError& e) {
    return fail("runtime", "IoError", e.what(), 2);
  } catch (const geomatch::InvalidArgument& e) {
    return fail("runtime", "InvalidArgument", e.what(), 2);
  } catch (const geomatch::NumericError& e) {
    return fail("runtime", "NumericError", e.what(), 2);
  } catch (const geomatch::EstimationError& e) {
    return fail("runtime", "EstimationError", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", "Error", e.what(), 2);
  }
  return 0;
}
