#include "geomatch/trainer.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>

#include "geomatch/errors.hpp"
#include "geomatch/pipeline.hpp"
#include "geomatch/resampler.hpp"

namespace geomatch {

namespace {

constexpr const char* kVelocityPrefix = "optimizer.velocity/";

struct Batch {
  Tensor images_a;
  Tensor images_b;
  std::vector<TransformParams> truths;
};

Batch assemble(std::span<const TrainingPair* const> pairs) {
  std::vector<const Image*> a, b;
  Batch out;
  for (const auto* p : pairs) {
    a.push_back(&p->image_a);
    b.push_back(&p->image_b);
    out.truths.push_back(p->theta_gt);
  }
  out.images_a = to_batch(a);
  out.images_b = to_batch(b);
  return out;
}

std::string hex(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double parse_double(const std::map<std::string, std::string>& state, const std::string& key) {
  auto it = state.find(key);
  if (it == state.end()) throw InvalidArgument("checkpoint state is missing '" + key + "'");
  return std::strtod(it->second.c_str(), nullptr);
}

TpsParams as_tps(const TransformParams& theta) {
  if (const auto* t = std::get_if<TpsParams>(&theta)) return *t;
  const auto& a = std::get<AffineParams>(theta);
  std::array<Point, 9> targets{};
  const auto& c = tps_control_points();
  for (std::size_t i = 0; i < 9; ++i) targets[i] = a.apply(c[i]);
  return TpsParams::from_points(targets);
}

}  // namespace

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_loss,val_loss,wall_seconds\n";
  os << "0,," << initial_val_loss << ",0\n";
  for (const auto& r : epochs) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.wall_seconds << '\n';
  }
  return os.str();
}

Trainer::Trainer(GeometryEstimator& model, TrainHyper hyper)
    : model_(model), hyper_(hyper), trainable_(model.trainable_parameters()) {
  if (hyper_.batch == 0) throw InvalidArgument("batch size must be positive");
  if (!(hyper_.lr >= 0)) throw InvalidArgument("learning rate must be non-negative");
  if (!(hyper_.momentum >= 0 && hyper_.momentum < 1)) {
    throw InvalidArgument("momentum must lie in [0, 1)");
  }
  for (const auto& p : trainable_) velocity_.emplace_back(p.tensor.numel(), Scalar(0));
}

std::vector<std::size_t> Trainer::batch_order(std::size_t n, int epoch) const {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(hyper_.seed, static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates with the library's own unbiased index draw.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

double Trainer::step(std::span<const TrainingPair* const> batch) {
  if (batch.empty()) throw InvalidArgument("step: empty batch");
  const Batch b = assemble(batch);
  for (auto& p : trainable_) p.tensor.zero_grad();
  const Tensor est = model_.forward(b.images_a, b.images_b, NormMode::kTrain);
  const Tensor loss = grid_loss(est, model_.config().kind, b.truths);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  loss.backward();
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    auto& t = trainable_[i].tensor;
    const auto g = t.grad();
    if (g.empty()) continue;
    sgd_step(t.mutable_values(), g, hyper_.lr, hyper_.momentum, velocity_[i], hyper_.weight_decay);
  }
  return value;
}

double Trainer::train_mode_loss(std::span<const TrainingPair* const> batch) {
  NoGradGuard guard;
  const Batch b = assemble(batch);
  // Train-mode batchnorm updates running stats; keep them untouched.
  const auto saved = model_.running_stats();
  const Tensor est = model_.forward(b.images_a, b.images_b, NormMode::kTrain);
  model_.running_stats() = saved;
  return grid_loss(est, model_.config().kind, b.truths).item();
}

double Trainer::evaluate(std::span<const TrainingPair> pairs) {
  if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard guard;
  double total = 0;
  const std::size_t chunk = std::max<std::size_t>(hyper_.batch, 32);
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t end = std::min(pairs.size(), start + chunk);
    std::vector<const TrainingPair*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&pairs[i]);
    const Batch b = assemble(ptrs);
    const Tensor est = model_.forward(b.images_a, b.images_b, NormMode::kEval);
    total += grid_loss(est, model_.config().kind, b.truths).item() * static_cast<double>(end - start);
  }
  return total / static_cast<double>(pairs.size());
}

TrainReport Trainer::fit(std::span<const TrainingPair> train, std::span<const TrainingPair> val,
                         const std::filesystem::path& out_checkpoint) {
  using Clock = std::chrono::steady_clock;
  const std::size_t n_batches = train.size() / hyper_.batch;
  if (n_batches == 0 && completed_epochs_ < hyper_.epochs && !stopped_) {
    throw InvalidArgument("training set (" + std::to_string(train.size()) +
                          " pairs) is smaller than one batch of " + std::to_string(hyper_.batch));
  }
  TrainReport report;
  report.initial_val_loss = evaluate(val);
  if (has_best_) {
    report.best_val_loss = best_val_;
    report.best_epoch = completed_epochs_ - since_best_;
  }

  std::filesystem::path best_path = out_checkpoint;
  best_path += ".best";

  while (completed_epochs_ < hyper_.epochs && !stopped_) {
    const int epoch = completed_epochs_;
    const auto t0 = Clock::now();
    const auto order = batch_order(train.size(), epoch);
    auto pointers = [&](std::size_t k) {
      std::vector<const TrainingPair*> ptrs;
      for (std::size_t i = 0; i < hyper_.batch; ++i) ptrs.push_back(&train[order[k * hyper_.batch + i]]);
      return ptrs;
    };

    double sum = 0;
    // Assemble batch k+1 on a worker while batch k trains.
    std::future<Batch> next = std::async(std::launch::async, [&] { return assemble(pointers(0)); });
    for (std::size_t k = 0; k < n_batches; ++k) {
      Batch b = next.get();
      if (k + 1 < n_batches) {
        next = std::async(std::launch::async, [&, k] { return assemble(pointers(k + 1)); });
      }
      for (auto& p : trainable_) p.tensor.zero_grad();
      const Tensor est = model_.forward(b.images_a, b.images_b, NormMode::kTrain);
      const Tensor loss = grid_loss(est, model_.config().kind, b.truths);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        if (next.valid()) next.wait();
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(k));
      }
      loss.backward();
      for (std::size_t i = 0; i < trainable_.size(); ++i) {
        auto& t = trainable_[i].tensor;
        const auto g = t.grad();
        if (g.empty()) continue;
        sgd_step(t.mutable_values(), g, hyper_.lr, hyper_.momentum, velocity_[i], hyper_.weight_decay);
      }
      report.batch_losses.push_back(value);
      sum += value;
    }

    EpochRow row;
    row.epoch = epoch + 1;
    row.train_loss = sum / static_cast<double>(n_batches);
    row.val_loss = evaluate(val);
    completed_epochs_ = epoch + 1;

    // Without validation data every epoch counts as the best so far.
    const bool improved = !has_best_ || std::isnan(row.val_loss) || row.val_loss < best_val_;
    if (improved) {
      best_val_ = row.val_loss;
      has_best_ = true;
      since_best_ = 0;
      report.best_epoch = row.epoch;
      report.best_val_loss = row.val_loss;
      if (!out_checkpoint.empty()) save_checkpoint(best_path, checkpoint());
    } else if (++since_best_ >= hyper_.patience) {
      stopped_ = true;
      report.early_stopped = true;
    }
    row.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    report.epochs.push_back(row);
    if (!out_checkpoint.empty()) save_checkpoint(out_checkpoint, checkpoint());
    if (on_epoch_) on_epoch_(row);
  }
  if (report.epochs.empty() && !out_checkpoint.empty()) save_checkpoint(out_checkpoint, checkpoint());
  report.best_val_loss = has_best_ ? best_val_ : report.initial_val_loss;
  return report;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = snapshot_model(model_);
  c.state["epoch"] = std::to_string(completed_epochs_);
  c.state["best_val"] = hex(best_val_);
  c.state["has_best"] = has_best_ ? "1" : "0";
  c.state["since_best"] = std::to_string(since_best_);
  c.state["stopped"] = stopped_ ? "1" : "0";
  c.state["seed"] = std::to_string(hyper_.seed);
  c.state["lr"] = hex(hyper_.lr);
  c.state["momentum"] = hex(hyper_.momentum);
  c.state["batch"] = std::to_string(hyper_.batch);
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    c.tensors.push_back({kVelocityPrefix + trainable_[i].name,
                         Tensor(trainable_[i].tensor.shape(), velocity_[i])});
  }
  return c;
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (!(ckpt.config == model_.config())) {
    throw InvalidArgument("checkpoint config does not match the model being trained");
  }
  restore_model(model_, ckpt);
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    const Tensor* v = ckpt.find(kVelocityPrefix + trainable_[i].name);
    if (v == nullptr) {
      std::fill(velocity_[i].begin(), velocity_[i].end(), Scalar(0));
      continue;
    }
    if (v->numel() != velocity_[i].size()) {
      throw InvalidArgument("velocity shape mismatch for " + trainable_[i].name);
    }
    std::copy(v->values().begin(), v->values().end(), velocity_[i].begin());
  }
  completed_epochs_ = static_cast<int>(parse_double(ckpt.state, "epoch"));
  best_val_ = parse_double(ckpt.state, "best_val");
  has_best_ = parse_double(ckpt.state, "has_best") != 0;
  since_best_ = static_cast<int>(parse_double(ckpt.state, "since_best"));
  stopped_ = parse_double(ckpt.state, "stopped") != 0;
}

std::vector<TrainingPair> prewarp_for_refinement(std::span<const TrainingPair> pairs,
                                                 GeometryEstimator& affine_stage) {
  std::vector<TrainingPair> out;
  out.reserve(pairs.size());
  GeometryEstimator* stages[] = {&affine_stage};
  for (const auto& p : pairs) {
    const AffineParams aff = estimate_affine(stages, p.image_a, p.image_b);
    TrainingPair q = p;
    q.image_a = warp(p.image_a, aff, p.image_a.height, p.image_a.width);
    // A'(x) = A(aff(x)) and B(x) = A(gt(x)), so B(x) = A'(aff^-1(gt(x))).
    q.theta_gt = as_tps(compose(inverse(aff), p.theta_gt));
    out.push_back(std::move(q));
  }
  return out;
}

TrainReport train_stage(const std::filesystem::path& manifest_path,
                        const StageTrainingOptions& options,
                        const std::filesystem::path& out_checkpoint) {
  const Manifest manifest = read_manifest(manifest_path);
  std::vector<TrainingPair> train, val;
  for (const auto& r : manifest.records) {
    const bool prewarp = !options.prewarp_affine.empty();
    if (!prewarp && r.kind != options.model.kind) {
      throw InvalidArgument("manifest pair " + std::to_string(r.pair_id) + " is " + to_string(r.kind) +
                            " but the model regresses " + to_string(options.model.kind));
    }
    if (r.split == "train") {
      train.push_back(load_pair(manifest, r));
    } else if (r.split == "val") {
      val.push_back(load_pair(manifest, r));
    }
  }
  if (!options.prewarp_affine.empty()) {
    if (options.model.kind != TransformKind::kTps) {
      throw InvalidArgument("pre-warping is only meaningful for the tps stage");
    }
    GeometryEstimator affine = load_model(options.prewarp_affine);
    train = prewarp_for_refinement(train, affine);
    val = prewarp_for_refinement(val, affine);
  }

  if (!options.resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume_from);
    GeometryEstimator model(ckpt.config, options.hyper.seed);
    Trainer trainer(model, options.hyper);
    trainer.on_epoch(options.on_epoch);
    trainer.resume(ckpt);
    return trainer.fit(train, val, out_checkpoint);
  }
  GeometryEstimator model(options.model, options.hyper.seed);
  Trainer trainer(model, options.hyper);
  trainer.on_epoch(options.on_epoch);
  return trainer.fit(train, val, out_checkpoint);
}

}  // namespace geomatch
