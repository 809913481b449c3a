#include "geomatch/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "geomatch/errors.hpp"
#include "geomatch/resampler.hpp"
#include "json.hpp"

namespace geomatch {

namespace fs = std::filesystem;

namespace {

Point to_padded(const TransformParams& theta, Point p) {
  const Point q = apply_transform(theta, p);
  return {q.x / 2, q.y / 2};
}

std::string pair_stem(std::uint64_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id;
  return os.str();
}

}  // namespace

AffineParams AffineSample::to_params() const {
  const Scalar c = std::cos(rotation);
  const Scalar s = std::sin(rotation);
  // scale * [[c, -s], [s, c]] * [[1, shear], [0, 1]]
  return {scale * c, scale * (c * shear - s), scale * s, scale * (s * shear + c), tx, ty};
}

AffineSample sample_affine(const SamplingRanges& r, Rng& rng) {
  AffineSample s;
  const Scalar log_max = std::log(std::max(r.max_scale, Scalar(1)));
  s.scale = std::exp(rng.uniform(-log_max, log_max));
  s.rotation = rng.uniform(-r.max_rotation, r.max_rotation);
  s.shear = rng.uniform(-r.max_shear, r.max_shear);
  s.tx = rng.uniform(-r.max_translation, r.max_translation);
  s.ty = rng.uniform(-r.max_translation, r.max_translation);
  return s;
}

TpsParams sample_tps(const SamplingRanges& r, Rng& rng) {
  TpsParams t = TpsParams::identity();
  for (auto& c : t.coords) c += rng.uniform(-r.tps_jitter, r.tps_jitter);
  return t;
}

Image padded_context(const Image& source, int crop_size) {
  if (source.height < crop_size || source.width < crop_size) {
    throw InvalidArgument("synthgen: source " + std::to_string(source.width) + "x" +
                          std::to_string(source.height) + " smaller than crop " +
                          std::to_string(crop_size));
  }
  return pad_symmetric(center_crop(source, crop_size, crop_size), crop_size / 2, crop_size / 2);
}

Image render_warped_view(const Image& padded, const TransformParams& theta, int crop_size) {
  return warp_by(padded, [&theta](Point p) { return to_padded(theta, p); }, crop_size, crop_size);
}

bool stays_inside_padding(const TransformParams& theta, int crop_size) {
  const int padded = 2 * (crop_size / 2) + crop_size;
  const Scalar hi = static_cast<Scalar>(padded - 1);
  for (int v = 0; v < crop_size; ++v) {
    for (int u = 0; u < crop_size; ++u) {
      const Point px = normalized_to_pixel(
          to_padded(theta, pixel_to_normalized(u, v, crop_size, crop_size)), padded, padded);
      if (!(px.x >= 0 && px.y >= 0 && px.x <= hi && px.y <= hi)) return false;
    }
  }
  return true;
}

TrainingPair generate_pair(const Image& source, TransformKind kind, const SamplingRanges& ranges,
                           std::uint64_t seed, const SynthConfig& config, std::string source_id) {
  const Image padded = padded_context(source, config.crop_size);
  Rng rng(seed);
  TransformParams theta = identity_transform(kind);
  bool accepted = false;
  for (int attempt = 0; attempt < std::max(config.max_retries, 1); ++attempt) {
    if (kind == TransformKind::kAffine) {
      theta = sample_affine(ranges, rng).to_params();
    } else {
      theta = sample_tps(ranges, rng);
    }
    if (stays_inside_padding(theta, config.crop_size)) {
      accepted = true;
      break;
    }
  }
  if (!accepted) {
    throw GenerationError("synthgen: no admissible transform after " +
                              std::to_string(config.max_retries) + " draws",
                          theta);
  }
  TrainingPair pair;
  pair.image_a = center_crop(padded, config.crop_size, config.crop_size);
  pair.image_b = render_warped_view(padded, theta, config.crop_size);
  pair.theta_gt = theta;
  pair.source_id = std::move(source_id);
  pair.seed = seed;
  return pair;
}

std::vector<TrainingPair> generate_pairs(std::span<const Image> sources, std::size_t count,
                                         TransformKind kind, const SamplingRanges& ranges,
                                         std::uint64_t seed, const SynthConfig& config,
                                         std::uint64_t first_id) {
  if (sources.empty() && count > 0) throw InvalidArgument("generate_pairs: no source images");
  std::vector<TrainingPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t sub_seed = derive_seed(seed, first_id + i);
    Rng pick(sub_seed);
    const std::size_t s = pick.index(sources.size());
    pairs.push_back(generate_pair(sources[s], kind, ranges, derive_seed(sub_seed, 1), config,
                                  std::to_string(s)));
  }
  return pairs;
}

std::vector<ManifestRecord> Manifest::split(const std::string& name) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(r);
  }
  return out;
}

Manifest generate_dataset(const fs::path& source_dir, std::size_t n_train, std::size_t n_val,
                          TransformKind kind, const SamplingRanges& ranges, const fs::path& out_dir,
                          std::uint64_t seed, const SynthConfig& config) {
  if (!fs::is_directory(source_dir)) throw IoError("source directory not found: " + source_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(source_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidArgument("generate_dataset: no PNG sources in " + source_dir.string());

  // Seeded shuffle, then a disjoint train / validation split of the sources.
  Rng shuffle(derive_seed(seed, ~std::uint64_t(0)));
  for (std::size_t i = files.size(); i > 1; --i) std::swap(files[i - 1], files[shuffle.index(i)]);
  std::size_t n_val_sources = 0;
  if (n_val > 0) {
    if (n_train > 0 && files.size() < 2) {
      throw InvalidArgument("generate_dataset: disjoint splits need at least two sources");
    }
    const double frac = static_cast<double>(n_val) / static_cast<double>(n_train + n_val);
    n_val_sources = static_cast<std::size_t>(std::llround(frac * static_cast<double>(files.size())));
    n_val_sources = std::clamp<std::size_t>(n_val_sources, 1,
                                            n_train > 0 ? files.size() - 1 : files.size());
  }
  const std::vector<fs::path> train_files(files.begin(), files.end() - static_cast<long>(n_val_sources));
  const std::vector<fs::path> val_files(files.end() - static_cast<long>(n_val_sources), files.end());

  fs::create_directories(out_dir);
  std::map<fs::path, Image> cache;
  auto load = [&cache](const fs::path& p) -> const Image& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, read_png(p)).first;
    return it->second;
  };

  Manifest manifest;
  manifest.path = out_dir / "manifest.jsonl";
  auto emit = [&](const std::vector<fs::path>& pool, std::size_t count, std::uint64_t first_id,
                  const std::string& split) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t id = first_id + i;
      const std::uint64_t sub_seed = derive_seed(seed, id);
      Rng pick(sub_seed);
      const fs::path& src = pool[pick.index(pool.size())];
      auto pair = generate_pair(load(src), kind, ranges, derive_seed(sub_seed, 1), config,
                                src.filename().string());
      ManifestRecord rec;
      rec.pair_id = id;
      rec.split = split;
      rec.image_a_path = split + "/" + pair_stem(id) + "_A.png";
      rec.image_b_path = split + "/" + pair_stem(id) + "_B.png";
      rec.kind = kind;
      rec.theta = to_vector(pair.theta_gt);
      rec.sub_seed = sub_seed;
      rec.source_id = pair.source_id;
      write_png(out_dir / rec.image_a_path, pair.image_a);
      write_png(out_dir / rec.image_b_path, pair.image_b);
      manifest.records.push_back(std::move(rec));
    }
  };
  emit(train_files, n_train, 0, "train");
  emit(val_files, n_val, n_train, "val");
  write_manifest(manifest.path, manifest.records);
  return manifest;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["pair_id"] = r.pair_id;
    j["split"] = r.split;
    j["image_A_path"] = r.image_a_path;
    j["image_B_path"] = r.image_b_path;
    j["kind"] = to_string(r.kind);
    j["theta"] = r.theta;
    j["sub_seed"] = r.sub_seed;
    j["source_id"] = r.source_id;
    out << j.dump() << '\n';
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.pair_id = j.at("pair_id").get<std::uint64_t>();
      r.split = j.value("split", "train");
      r.image_a_path = j.at("image_A_path").get<std::string>();
      r.image_b_path = j.at("image_B_path").get<std::string>();
      r.kind = parse_transform_kind(j.at("kind").get<std::string>());
      r.theta = j.at("theta").get<std::vector<Scalar>>();
      r.sub_seed = j.value("sub_seed", std::uint64_t(0));
      r.source_id = j.value("source_id", "");
      if (r.theta.size() != param_count(r.kind)) throw InvalidArgument("theta length");
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw IoError("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

TrainingPair load_pair(const Manifest& manifest, const ManifestRecord& record) {
  const fs::path base = manifest.path.parent_path();
  TrainingPair p;
  p.image_a = read_png(base / record.image_a_path);
  p.image_b = read_png(base / record.image_b_path);
  p.theta_gt = record.transform();
  p.source_id = record.source_id;
  p.seed = record.sub_seed;
  return p;
}

Image render_procedural_source(std::uint64_t seed, int size) {
  Rng rng(seed);
  Image img(size, size, 3);
  auto color = [&rng] {
    return std::array<Scalar, 3>{rng.uniform(), rng.uniform(), rng.uniform()};
  };
  // Two-color linear gradient with a faint plaid.
  const auto c0 = color();
  const auto c1 = color();
  const Scalar ang = rng.uniform(0, 2 * std::numbers::pi_v<Scalar>);
  const Scalar fx = rng.uniform(2, 6);
  const Scalar fy = rng.uniform(2, 6);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point p = pixel_to_normalized(x, y, size, size);
      const Scalar t = Scalar(0.5) + Scalar(0.35) * (std::cos(ang) * p.x + std::sin(ang) * p.y);
      const Scalar plaid = Scalar(0.08) * std::sin(fx * p.x * 3) * std::cos(fy * p.y * 3);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1 - t) * c0[c] + t * c1[c] + plaid;
    }
  }
  const int shapes = 8 + static_cast<int>(rng.index(9));
  for (int s = 0; s < shapes; ++s) {
    const int type = static_cast<int>(rng.index(3));
    const Point center{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Scalar rx = rng.uniform(Scalar(0.08), Scalar(0.45));
    const Scalar ry = rng.uniform(Scalar(0.08), Scalar(0.45));
    const Scalar rot = rng.uniform(0, std::numbers::pi_v<Scalar>);
    const auto fill = color();
    const auto stripe = color();
    const bool striped = rng.uniform() < 0.4;
    const Scalar period = rng.uniform(Scalar(0.06), Scalar(0.2));
    const Scalar cr = std::cos(rot);
    const Scalar sr = std::sin(rot);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const Point p = pixel_to_normalized(x, y, size, size);
        const Scalar dx = p.x - center.x;
        const Scalar dy = p.y - center.y;
        const Scalar lx = (cr * dx + sr * dy) / rx;
        const Scalar ly = (-sr * dx + cr * dy) / ry;
        bool inside = false;
        if (type == 0) {
          inside = lx * lx + ly * ly <= 1;
        } else if (type == 1) {
          inside = std::abs(lx) <= 1 && std::abs(ly) <= 1;
        } else {
          inside = ly >= -1 && ly <= 1 && std::abs(lx) <= (1 - ly) / 2;
        }
        if (!inside) continue;
        const bool band = striped && std::fmod(std::abs(lx * rx) / period, Scalar(2)) < 1;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = band ? stripe[c] : fill[c];
      }
    }
  }
  for (auto& v : img.pixels) v = std::clamp(v, Scalar(0), Scalar(1));
  return img;
}

void write_procedural_sources(const fs::path& dir, std::size_t count, std::uint64_t seed,
                              int size) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    write_png(dir / ("source_" + pair_stem(i) + ".png"),
              render_procedural_source(derive_seed(seed, i), size));
  }
}

}  // namespace geomatch
