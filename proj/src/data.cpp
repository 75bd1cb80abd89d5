#include "prood/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "json.hpp"
#include "prood/checkpoint.hpp"
#include "prood/error.hpp"
#include "prood/parallel.hpp"
#include "prood/rng.hpp"

namespace prood {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_sample_shape(const Shape& s) {
  if (s.size() != 3 || shape_size(s) == 0) {
    throw ConfigError("sample shape must be C x H x W with positive dims, got " + shape_str(s));
  }
}

Dataset empty_dataset(std::string name, Split split, std::size_t n, const Shape& sample_shape) {
  Dataset ds;
  ds.name = std::move(name);
  ds.split = split;
  ds.images = Tensor({n, sample_shape[0], sample_shape[1], sample_shape[2]});
  return ds;
}

// Fills image i of ds from an independent stream so the result does not
// depend on generation order or thread count.
template <typename Fn>
void generate(Dataset& ds, std::uint64_t seed, Fn&& fn) {
  const std::size_t per = shape_size(ds.sample_shape());
  parallel_for(ds.size(), [&](std::size_t i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    fn(i, rng, ds.images.data() + i * per);
  });
}

std::size_t mirror(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

std::uint32_t read_be32(const std::string& bytes, std::size_t pos) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + 3]));
}

void need(const std::string& bytes, std::size_t end, const std::filesystem::path& path) {
  if (bytes.size() < end) {
    throw FormatError(path.string() + ": truncated at byte offset " +
                      std::to_string(bytes.size()) + ", expected at least " +
                      std::to_string(end) + " bytes");
  }
}

}  // namespace

Tensor Dataset::sample(std::size_t i) const {
  if (i >= size()) throw ShapeError("sample index " + std::to_string(i) + " out of range");
  const std::size_t per = shape_size(sample_shape());
  const float* p = images.data() + i * per;
  return Tensor(sample_shape(), std::vector<float>(p, p + per));
}

Tensor64 Dataset::sample64(std::size_t i) const { return sample(i).cast<double>(); }

void Dataset::validate() const {
  if (images.rank() != 4) throw FormatError(name + ": images must be N x C x H x W");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i] >= 0.0f && images[i] <= 1.0f)) {
      throw FormatError(name + ": pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
  if (!labels.empty()) {
    if (labels.size() != size()) throw FormatError(name + ": label count mismatch");
    for (int y : labels) {
      if (y < 0 || (num_classes > 0 && static_cast<std::size_t>(y) >= num_classes)) {
        throw FormatError(name + ": label " + std::to_string(y) + " out of range");
      }
    }
  }
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) throw ShapeError("gaussian_blur expects C x H x W");
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& v : kernel) v /= total;

  std::vector<double> tmp(image.size());
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = image.data() + ch * h * w;
    double* mid = tmp.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * src[y * w + mirror(static_cast<long>(x) + k, w)];
        }
        mid[y * w + x] = acc;
      }
    }
    float* dst = out.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * mid[mirror(static_cast<long>(y) + k, h) * w + x];
        }
        dst[y * w + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Dataset smooth_noise(std::size_t n, const Shape& sample_shape, std::uint64_t seed) {
  if (n == 0) throw ConfigError("smooth_noise needs n >= 1");
  check_sample_shape(sample_shape);
  Dataset ds = empty_dataset("smooth_noise", Split::test, n, sample_shape);
  const std::size_t per = shape_size(sample_shape);
  generate(ds, seed, [&](std::size_t, Rng& rng, float* dst) {
    Tensor raw(sample_shape);
    for (auto& v : raw) v = static_cast<float>(uniform01(rng));
    const Tensor blurred = gaussian_blur(raw, uniform(rng, 1.0, 2.5));
    const auto [mn, mx] = std::minmax_element(blurred.begin(), blurred.end());
    const float lo = *mn, range = *mx - *mn;
    for (std::size_t j = 0; j < per; ++j) {
      dst[j] = range > 0.0f ? std::clamp((blurred[j] - lo) / range, 0.0f, 1.0f) : 0.0f;
    }
  });
  return ds;
}

Dataset uniform_noise(std::size_t n, const Shape& sample_shape, std::uint64_t seed) {
  check_sample_shape(sample_shape);
  Dataset ds = empty_dataset("uniform_noise", Split::test, n, sample_shape);
  const std::size_t per = shape_size(sample_shape);
  generate(ds, seed, [&](std::size_t, Rng& rng, float* dst) {
    for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<float>(uniform01(rng));
  });
  return ds;
}

SyntheticBands synthetic_bands() { return {0.04, 0.16, 0.30, 0.45}; }

void SyntheticBands::class_slot(std::size_t k, std::size_t num_classes, double& lo,
                                double& hi) const {
  const double width = (in_high - in_low) / static_cast<double>(num_classes);
  lo = in_low + width * (static_cast<double>(k) + 0.2);
  hi = in_low + width * (static_cast<double>(k) + 0.8);
}

namespace {

void in_sample(const SyntheticSpec& spec, std::size_t label, Rng& rng, float* dst) {
  const auto bands = synthetic_bands();
  double flo, fhi;
  bands.class_slot(label, spec.num_classes, flo, fhi);
  const double freq = uniform(rng, flo, fhi);
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const double anchor = kTwoPi * static_cast<double>(label) / static_cast<double>(spec.num_classes);
  const double angle = anchor + uniform(rng, -0.25, 0.25);
  const double radius = 0.25 * std::min(h, w) * uniform(rng, 0.85, 1.15);
  const double cy = 0.5 * (h - 1) + radius * std::sin(angle);
  const double cx = 0.5 * (w - 1) + radius * std::cos(angle);
  const double envelope = uniform(rng, 0.12, 0.18) * std::min(h, w);
  const double bump = uniform(rng, 0.2, 0.3);
  const double amplitude = uniform(rng, 0.15, 0.25);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    const double tint = spec.channels == 1 ? 1.0 : uniform(rng, 0.8, 1.0);
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * envelope * envelope));
        const double carrier = std::cos(kTwoPi * freq * (dx * ct + dy * st) + phase);
        const double v =
            0.5 + tint * env * (bump + amplitude * carrier) + spec.noise * standard_normal(rng);
        dst[(ch * spec.height + y) * spec.width + x] = clamp01(v);
      }
    }
  }
}

void out_sample(const SyntheticSpec& spec, Rng& rng, float* dst) {
  const auto bands = synthetic_bands();
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  if (uniform01(rng) < 0.5) {
    const double freq = uniform(rng, bands.out_low, bands.out_high);
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double phase = uniform(rng, 0.0, kTwoPi);
    const double amplitude = uniform(rng, 0.2, 0.5);
    const double mean = uniform(rng, 0.3, 0.7);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double t = static_cast<double>(x) * ct + static_cast<double>(y) * st;
          const double v = mean + amplitude * std::cos(kTwoPi * freq * t + phase) +
                           spec.noise * standard_normal(rng);
          dst[(ch * spec.height + y) * spec.width + x] = clamp01(v);
        }
      }
    }
    return;
  }
  // Flat shape on a flat background with a contrast of at least 0.3.
  const double background = uniform01(rng);
  double foreground = uniform01(rng);
  while (std::abs(foreground - background) < 0.3) foreground = uniform01(rng);
  const bool disk = uniform01(rng) < 0.5;
  const double cy = uniform(rng, 0.25 * h, 0.75 * h), cx = uniform(rng, 0.25 * w, 0.75 * w);
  const double ry = uniform(rng, 0.15, 0.35) * h, rx = uniform(rng, 0.15, 0.35) * w;
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        const double v = (inside ? foreground : background) + spec.noise * standard_normal(rng);
        dst[(ch * spec.height + y) * spec.width + x] = clamp01(v);
      }
    }
  }
}

Dataset in_dataset(const SyntheticSpec& spec, std::string name, Split split, std::size_t n,
                   std::uint64_t seed) {
  Dataset ds = empty_dataset(std::move(name), split, n, {spec.channels, spec.height, spec.width});
  ds.num_classes = spec.num_classes;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % spec.num_classes);
  generate(ds, seed, [&](std::size_t i, Rng& rng, float* dst) {
    in_sample(spec, static_cast<std::size_t>(ds.labels[i]), rng, dst);
  });
  return ds;
}

Dataset out_dataset(const SyntheticSpec& spec, std::string name, Split split, std::size_t n,
                    std::uint64_t seed) {
  Dataset ds = empty_dataset(std::move(name), split, n, {spec.channels, spec.height, spec.width});
  generate(ds, seed, [&](std::size_t, Rng& rng, float* dst) { out_sample(spec, rng, dst); });
  return ds;
}

}  // namespace

SyntheticTask synthetic_task(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (spec.channels == 0 || spec.height < 4 || spec.width < 4) {
    throw ConfigError("synthetic images must have >= 1 channel and be at least 4 x 4");
  }
  if (spec.n_train == 0 || spec.n_test == 0 || spec.n_out_train == 0 || spec.n_out_test == 0) {
    throw ConfigError("synthetic task sizes must be positive");
  }
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic noise must be nonnegative");
  const auto bands = synthetic_bands();
  if (!(bands.in_high < bands.out_low)) throw ConfigError("in/out frequency bands overlap");

  SyntheticTask task;
  task.in_train = in_dataset(spec, "in_train", Split::train, spec.n_train,
                             derive_seed(seed, "in_train"));
  task.in_test = in_dataset(spec, "in_test", Split::test, spec.n_test, derive_seed(seed, "in_test"));
  task.out_train = out_dataset(spec, "out_train", Split::train, spec.n_out_train,
                               derive_seed(seed, "out_train"));
  if (spec.n_out_holdout > 0) {
    task.out_holdout = out_dataset(spec, "out_holdout", Split::train, spec.n_out_holdout,
                                   derive_seed(seed, "out_holdout"));
  }
  task.out_test = out_dataset(spec, "synthetic_out", Split::test, spec.n_out_test,
                              derive_seed(seed, "out_test"));
  return task;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path) {
  const std::string bytes = read_file_bytes(images_path);
  need(bytes, 16, images_path);
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000803u) {
    throw FormatError(images_path.string() + ": bad image magic at byte offset 0");
  }
  const std::size_t n = read_be32(bytes, 4), rows = read_be32(bytes, 8), cols = read_be32(bytes, 12);
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(images_path.string() + ": zero dimension in header at byte offset 4");
  }
  const std::size_t per = rows * cols;
  need(bytes, 16 + n * per, images_path);
  if (bytes.size() != 16 + n * per) {
    throw FormatError(images_path.string() + ": trailing data at byte offset " +
                      std::to_string(16 + n * per));
  }
  Dataset ds = empty_dataset(images_path.filename().string(), Split::train, n, {1, rows, cols});
  for (std::size_t i = 0; i < n * per; ++i) {
    ds.images[i] = static_cast<float>(static_cast<unsigned char>(bytes[16 + i])) / 255.0f;
  }
  if (labels_path) {
    const std::string lb = read_file_bytes(*labels_path);
    need(lb, 8, *labels_path);
    if (read_be32(lb, 0) != 0x00000801u) {
      throw FormatError(labels_path->string() + ": bad label magic at byte offset 0");
    }
    const std::size_t m = read_be32(lb, 4);
    if (m != n) {
      throw FormatError(labels_path->string() + ": label count " + std::to_string(m) +
                        " at byte offset 4 does not match image count " + std::to_string(n));
    }
    need(lb, 8 + m, *labels_path);
    ds.labels.resize(m);
    int max_label = 0;
    for (std::size_t i = 0; i < m; ++i) {
      ds.labels[i] = static_cast<unsigned char>(lb[8 + i]);
      max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  }
  return ds;
}

Dataset fixed_subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw ConfigError("subset of " + std::to_string(n) + " requested from " + ds.name + " with " +
                      std::to_string(ds.size()) + " samples");
  }
  if (n == 0) throw ConfigError("subset size must be positive");
  const auto perm = permutation(ds.size(), seed);
  Dataset out = empty_dataset(ds.name, ds.split, n, ds.sample_shape());
  out.num_classes = ds.num_classes;
  const std::size_t per = shape_size(ds.sample_shape());
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.images.data() + i * per, ds.images.data() + perm[i] * per, per * sizeof(float));
    if (ds.labelled()) out.labels.push_back(ds.labels[perm[i]]);
  }
  return out;
}

void write_cache(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"name", ds.name},
                         {"split", ds.split == Split::train ? "train" : "test"},
                         {"shape", ds.images.shape()},
                         {"count", ds.size()},
                         {"dtype", "f32"},
                         {"num_classes", ds.num_classes},
                         {"has_labels", ds.labelled()}};
  write_file_bytes(dir / "meta.json", meta.dump(2) + "\n");
  std::string img;
  img.reserve(ds.images.size() * 4);
  for (float v : ds.images) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) img.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
  write_file_bytes(dir / "images.f32", img);
  if (ds.labelled()) {
    std::string lb;
    for (int y : ds.labels) {
      if (y < 0 || y > 255) throw FormatError("label " + std::to_string(y) + " does not fit u8");
      lb.push_back(static_cast<char>(y));
    }
    write_file_bytes(dir / "labels.u8", lb);
  }
}

Dataset read_cache(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file_bytes(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  Dataset ds;
  try {
    const auto shape = meta.at("shape").get<Shape>();
    if (shape.size() != 4 || meta.at("count").get<std::size_t>() != shape[0] ||
        meta.at("dtype").get<std::string>() != "f32") {
      throw FormatError((dir / "meta.json").string() + ": inconsistent shape/count/dtype");
    }
    ds = empty_dataset(meta.at("name").get<std::string>(),
                       meta.at("split").get<std::string>() == "train" ? Split::train : Split::test,
                       shape[0], {shape[1], shape[2], shape[3]});
    ds.num_classes = meta.value("num_classes", std::size_t{0});
    const std::string img = read_file_bytes(dir / "images.f32");
    if (img.size() != 4 * ds.images.size()) {
      throw FormatError((dir / "images.f32").string() + ": expected " +
                        std::to_string(4 * ds.images.size()) + " bytes, found " +
                        std::to_string(img.size()));
    }
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(img[4 * i + b])) << (8 * b);
      }
      std::memcpy(&ds.images[i], &bits, 4);
    }
    if (meta.value("has_labels", false)) {
      const std::string lb = read_file_bytes(dir / "labels.u8");
      if (lb.size() != ds.size()) {
        throw FormatError((dir / "labels.u8").string() + ": label count mismatch");
      }
      for (char c : lb) ds.labels.push_back(static_cast<unsigned char>(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace prood
