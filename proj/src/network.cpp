#include "geomatch/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "geomatch/errors.hpp"
#include "geomatch/random.hpp"
#include "geomatch/resampler.hpp"

namespace geomatch {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::vector<Scalar> v(shape_numel(shape));
  const Scalar stddev = std::sqrt(Scalar(2) / static_cast<Scalar>(fan_in));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

int to_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("model config: bad integer '" + s + "' for " + key);
  }
}

}  // namespace

int FeatureExtractorConfig::output_size() const {
  int size = input_size;
  for (const auto& b : blocks) {
    if (b.kernel < 1 || b.stride < 1 || b.padding < 0 || b.kernel > size + 2 * b.padding) {
      throw InvalidArgument("feature extractor: block underflows at extent " + std::to_string(size));
    }
    size = (size + 2 * b.padding - b.kernel) / b.stride + 1;
  }
  return size;
}

std::pair<int, int> RegressorConfig::spatial_chain(int size) const {
  const int s1 = size - conv1_kernel + 1;
  const int s2 = s1 - conv2_kernel + 1;
  if (s1 < 1 || s2 < 1) {
    throw InvalidArgument("regressor: a " + std::to_string(size) + "x" + std::to_string(size) +
                          " map is too small for unpadded kernels " +
                          std::to_string(conv1_kernel) + " and " + std::to_string(conv2_kernel));
  }
  return {s1, s2};
}

ModelConfig ModelConfig::desk(TransformKind kind) {
  ModelConfig c;
  c.kind = kind;
  return c;
}

ModelConfig ModelConfig::tiny(TransformKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.features.input_size = 16;
  c.features.blocks = {{8, 3, 2, 1}, {4, 3, 2, 1}};
  c.regressor = {8, 2, 8, 2};
  return c;
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "kind=" << to_string(kind) << '\n';
  os << "matching=" << to_string(matching) << '\n';
  os << "features.input_size=" << features.input_size << '\n';
  os << "features.input_channels=" << features.input_channels << '\n';
  os << "features.blocks=";
  for (std::size_t i = 0; i < features.blocks.size(); ++i) {
    const auto& b = features.blocks[i];
    os << (i ? "," : "") << b.out_channels << ':' << b.kernel << ':' << b.stride << ':'
       << b.padding;
  }
  os << '\n';
  os << "features.center_input=" << (features.center_input ? 1 : 0) << '\n';
  os << "regressor.conv1=" << regressor.conv1_channels << ':' << regressor.conv1_kernel << '\n';
  os << "regressor.conv2=" << regressor.conv2_channels << ':' << regressor.conv2_kernel << '\n';
  os << "freeze_features=" << (freeze_features ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "kind") {
      c.kind = parse_transform_kind(value);
    } else if (key == "matching") {
      c.matching = parse_matching_mode(value);
    } else if (key == "features.input_size") {
      c.features.input_size = to_int(value, key);
    } else if (key == "features.input_channels") {
      c.features.input_channels = to_int(value, key);
    } else if (key == "features.blocks") {
      c.features.blocks.clear();
      for (const auto& spec : split(value, ',')) {
        const auto f = split(spec, ':');
        if (f.size() != 4) throw InvalidArgument("model config: bad block spec '" + spec + "'");
        c.features.blocks.push_back(
            {to_int(f[0], key), to_int(f[1], key), to_int(f[2], key), to_int(f[3], key)});
      }
    } else if (key == "features.center_input") {
      c.features.center_input = to_int(value, key) != 0;
    } else if (key == "regressor.conv1" || key == "regressor.conv2") {
      const auto f = split(value, ':');
      if (f.size() != 2) throw InvalidArgument("model config: bad conv spec '" + value + "'");
      auto& ch = key == "regressor.conv1" ? c.regressor.conv1_channels : c.regressor.conv2_channels;
      auto& k = key == "regressor.conv1" ? c.regressor.conv1_kernel : c.regressor.conv2_kernel;
      ch = to_int(f[0], key);
      k = to_int(f[1], key);
    } else if (key == "freeze_features") {
      c.freeze_features = to_int(value, key) != 0;
    } else {
      throw InvalidArgument("model config: unknown key '" + key + "'");
    }
  }
  return c;
}

GeometryEstimator::GeometryEstimator(ModelConfig config, std::uint64_t seed, InitOptions init)
    : config_(std::move(config)) {
  Rng rng(seed);
  const auto& fc = config_.features;
  std::size_t cin = static_cast<std::size_t>(fc.input_channels);
  for (std::size_t i = 0; i < fc.blocks.size(); ++i) {
    const auto& b = fc.blocks[i];
    const auto k = static_cast<std::size_t>(b.kernel);
    const auto cout = static_cast<std::size_t>(b.out_channels);
    params_.push_back({"features.conv" + std::to_string(i + 1) + ".weight",
                       he_normal({k, k, cin, cout}, k * k * cin, rng)});
    cin = cout;
  }

  const int map = fc.output_size();
  const auto& rc = config_.regressor;
  const auto [s1, s2] = rc.spatial_chain(map);
  const std::size_t match_c = matching_channels(config_.matching, static_cast<std::size_t>(map),
                                                static_cast<std::size_t>(map),
                                                static_cast<std::size_t>(fc.descriptor_dim()));
  const auto k1 = static_cast<std::size_t>(rc.conv1_kernel);
  const auto k2 = static_cast<std::size_t>(rc.conv2_kernel);
  const auto c1 = static_cast<std::size_t>(rc.conv1_channels);
  const auto c2 = static_cast<std::size_t>(rc.conv2_channels);
  params_.push_back({"regressor.conv1.weight", he_normal({k1, k1, match_c, c1}, k1 * k1 * match_c, rng)});
  params_.push_back({"regressor.bn1.gamma", Tensor::full({c1}, 1, true)});
  params_.push_back({"regressor.bn1.beta", Tensor::zeros({c1}, true)});
  params_.push_back({"regressor.conv2.weight", he_normal({k2, k2, c1, c2}, k2 * k2 * c1, rng)});
  params_.push_back({"regressor.bn2.gamma", Tensor::full({c2}, 1, true)});
  params_.push_back({"regressor.bn2.beta", Tensor::zeros({c2}, true)});
  const std::size_t fc_in = static_cast<std::size_t>(s2) * static_cast<std::size_t>(s2) * c2;
  const std::size_t p = config_.param_count();
  if (init.zero_head) {
    params_.push_back({"regressor.fc.weight", Tensor::zeros({fc_in, p}, true)});
    params_.push_back({"regressor.fc.bias", Tensor::zeros({p}, true)});
  } else {
    // Small random head, used where every weight must carry gradient.
    auto w = he_normal({fc_in, p}, fc_in, rng);
    for (auto& v : w.mutable_values()) v *= Scalar(0.1);
    std::vector<Scalar> bias(p);
    for (auto& v : bias) v = Scalar(0.01) * rng.normal();
    params_.push_back({"regressor.fc.weight", w});
    params_.push_back({"regressor.fc.bias", Tensor({p}, std::move(bias), true)});
  }
  stats_["regressor.bn1"] = RunningStats::identity(c1);
  stats_["regressor.bn2"] = RunningStats::identity(c2);
  identity_offset_ = to_vector(identity_transform(config_.kind));

  for (auto& np : params_) {
    if (config_.freeze_features && np.name.rfind("features.", 0) == 0) {
      np.tensor.set_requires_grad(false);
    }
  }
}

std::vector<NamedTensor> GeometryEstimator::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (const auto& np : params_) {
    if (np.tensor.requires_grad()) out.push_back(np);
  }
  return out;
}

const Tensor& GeometryEstimator::parameter(const std::string& name) const {
  for (const auto& np : params_) {
    if (np.name == name) return np.tensor;
  }
  throw InvalidArgument("no parameter named " + name);
}

Tensor GeometryEstimator::prepare_images(const Tensor& images) const {
  const auto& fc = config_.features;
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(fc.input_size) ||
      images.dim(2) != static_cast<std::size_t>(fc.input_size) ||
      images.dim(3) != static_cast<std::size_t>(fc.input_channels)) {
    throw InvalidArgument("extract_features: expected N x " + std::to_string(fc.input_size) +
                          " x " + std::to_string(fc.input_size) + " x " +
                          std::to_string(fc.input_channels) + " images, got " +
                          shape_to_string(images.shape()));
  }
  if (!fc.center_input) return images;
  // x - mean(x) per image, built from differentiable ops.
  const std::size_t n = images.dim(0);
  const std::size_t per_image = images.numel() / n;
  const Tensor flat = reshape(images, {n, per_image});
  const Tensor avg = matmul(flat, Tensor::full({per_image, 1}, Scalar(1) / static_cast<Scalar>(per_image)));
  const Tensor spread = matmul(avg, Tensor::full({1, per_image}, Scalar(1)));
  return reshape(sub(flat, spread), images.shape());
}

Tensor GeometryEstimator::extract_features(const Tensor& images) const {
  Tensor x = prepare_images(images);
  const auto& blocks = config_.features.blocks;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = conv2d(x, params_[i].tensor, blocks[i].stride, blocks[i].padding);
    if (i + 1 < blocks.size()) x = relu(x);
  }
  return l2_normalize(x, 3);
}

Tensor GeometryEstimator::regress(const Tensor& matched, NormMode mode) {
  if (matched.rank() != 4) throw InvalidArgument("regress: expected N x h x w x C input");
  const auto& rc = config_.regressor;
  if (matched.dim(1) != matched.dim(2)) throw InvalidArgument("regress: square maps only");
  rc.spatial_chain(static_cast<int>(matched.dim(1)));
  const auto& conv1 = parameter("regressor.conv1.weight");
  if (matched.dim(3) != conv1.dim(2)) {
    throw InvalidArgument("regress: input has " + std::to_string(matched.dim(3)) +
                          " channels, regressor expects " + std::to_string(conv1.dim(2)));
  }
  Tensor x = conv2d(matched, conv1, 1, 0);
  x = relu(batchnorm(x, parameter("regressor.bn1.gamma"), parameter("regressor.bn1.beta"),
                     stats_.at("regressor.bn1"), mode));
  x = conv2d(x, parameter("regressor.conv2.weight"), 1, 0);
  x = relu(batchnorm(x, parameter("regressor.bn2.gamma"), parameter("regressor.bn2.beta"),
                     stats_.at("regressor.bn2"), mode));
  const std::size_t n = x.dim(0);
  x = reshape(x, {n, x.numel() / n});
  x = linear(x, parameter("regressor.fc.weight"), parameter("regressor.fc.bias"));
  return add_bias(x, Tensor({identity_offset_.size()}, identity_offset_));
}

Tensor GeometryEstimator::forward(const Tensor& images_a, const Tensor& images_b, NormMode mode) {
  if (images_a.shape() != images_b.shape()) {
    throw InvalidArgument("forward: image batches differ in shape");
  }
  const Tensor fa = extract_features(images_a);
  const Tensor fb = extract_features(images_b);
  return regress(match_features(config_.matching, fa, fb), mode);
}

TransformParams GeometryEstimator::estimate(const Image& image_a, const Image& image_b) {
  NoGradGuard guard;
  // Parameters live in normalized coordinates, so any input resolution works.
  const int n = config_.features.input_size;
  auto out = forward(to_tensor(resize(image_a, n, n)), to_tensor(resize(image_b, n, n)),
                     NormMode::kEval);
  return from_vector(config_.kind, out.values());
}

std::vector<Image> visualize_regressor_filters(const Tensor& w, int map_height, int map_width) {
  if (w.rank() != 4 || w.dim(0) != w.dim(1) ||
      w.dim(2) != static_cast<std::size_t>(map_height) * static_cast<std::size_t>(map_width)) {
    throw InvalidArgument("visualize_regressor_filters: expected k x k x (h*w) x c weights, got " +
                          shape_to_string(w.shape()));
  }
  const std::size_t k = w.dim(0);
  const std::size_t hw = w.dim(2);
  const std::size_t cout = w.dim(3);
  const auto h = static_cast<std::size_t>(map_height);
  auto v = w.values();
  std::vector<Image> out;
  for (std::size_t f = 0; f < cout; ++f) {
    Image img(map_height, map_width, 1);
    for (std::size_t s = 0; s < k * k; ++s) {
      std::size_t best = 0;
      Scalar best_v = v[(s * hw) * cout + f];
      for (std::size_t ch = 1; ch < hw; ++ch) {
        const Scalar val = v[(s * hw + ch) * cout + f];
        if (val > best_v) {
          best_v = val;
          best = ch;
        }
      }
      const auto [row, col] = unflatten_position(best, h);
      img.at(static_cast<int>(row), static_cast<int>(col), 0) += best_v;
    }
    for (auto& p : img.pixels) p /= static_cast<Scalar>(k * k);
    out.push_back(std::move(img));
  }
  return out;
}

Image normalize_for_display(const Image& image) {
  Image out = image;
  if (out.pixels.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
  const Scalar mn = *lo;
  const Scalar range = *hi - mn;
  for (auto& p : out.pixels) p = range > Scalar(0) ? (p - mn) / range : Scalar(0);
  return out;
}

}  // namespace geomatch
