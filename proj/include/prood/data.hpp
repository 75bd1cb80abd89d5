#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prood/tensor.hpp"

namespace prood {

enum class Split { train, test };

/// N x C x H x W images in [0,1], optionally labelled in [0, num_classes).
struct Dataset {
  std::string name;
  Split split = Split::train;
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.dim(0); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  bool labelled() const { return !labels.empty(); }
  /// Copy of image i as a C x H x W tensor.
  Tensor sample(std::size_t i) const;
  Tensor64 sample64(std::size_t i) const;
  /// Throws FormatError if a pixel leaves [0,1] or a label is out of range.
  void validate() const;
};

Dataset smooth_noise(std::size_t n, const Shape& sample_shape, std::uint64_t seed);
Dataset uniform_noise(std::size_t n, const Shape& sample_shape, std::uint64_t seed);

/// Separable Gaussian blur of each channel of a C x H x W image, kernel
/// truncated at 4 sigma, mirror padding without edge repetition.
Tensor gaussian_blur(const Tensor& image, double sigma);

/// Desk-scale substitute task. In-distribution class k is a Gabor-like blob whose
/// carrier frequency lies in a class-specific slot of the low band and whose
/// centre sits near a class-specific point on a circle. The out-distribution
/// mixes full-image gratings from a disjoint high band with flat geometric shapes.
struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n_train = 2000;
  std::size_t n_test = 600;
  std::size_t n_out_train = 2000;
  std::size_t n_out_holdout = 1000;
  std::size_t n_out_test = 600;
  double noise = 0.03;
};

/// Generator frequency ranges in cycles per pixel, exposed so disjointness can be checked.
struct SyntheticBands {
  double in_low, in_high;
  double out_low, out_high;
  /// Class k draws its carrier frequency from [lo, hi], a slot of the in-band.
  void class_slot(std::size_t k, std::size_t num_classes, double& lo, double& hi) const;
};
SyntheticBands synthetic_bands();

struct SyntheticTask {
  Dataset in_train, in_test, out_train, out_holdout, out_test;
};

SyntheticTask synthetic_task(const SyntheticSpec& spec, std::uint64_t seed);

/// MNIST-style IDX files (magic 0x00000803 images, 0x00000801 labels), pixels / 255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt);

/// The first n entries of a seeded permutation of ds.
Dataset fixed_subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Raw cache: dir/meta.json, dir/images.f32 (little-endian), dir/labels.u8.
void write_cache(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_cache(const std::filesystem::path& dir);

}  // namespace prood
