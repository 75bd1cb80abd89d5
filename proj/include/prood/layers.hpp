#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "prood/rng.hpp"
#include "prood/tensor.hpp"

namespace prood {

/// y = W x + b on a rank-1 input. weight is out x in.
template <typename T>
struct FullyConnected {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// Direct 2-D convolution on a C x H x W input. kernel is out x in x kh x kw.
template <typename T>
struct Conv2d {
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ReLU {};

struct LeakyReLU {
  double slope = 0.01;
};

/// Non-overlapping average pooling with a square window.
struct AvgPool {
  std::size_t window = 2;
};

struct Flatten {};

/// Output layer whose weights are -exp(h), with the magnitude floored at the smallest
/// normal value so they stay strictly negative for any h.
/// Only h and bias are parameters; the weights are materialized on demand.
template <typename T>
struct NegExpHead {
  BasicTensor<T> h;
  BasicTensor<T> bias;

  BasicTensor<T> weight() const;
};

template <typename T>
using Layer = std::variant<FullyConnected<T>, Conv2d<T>, ReLU, LeakyReLU, AvgPool, Flatten,
                           NegExpHead<T>>;

template <typename T>
std::string layer_kind(const Layer<T>& layer);

/// Shape produced by `layer` on an input of shape `in`; throws ShapeError.
template <typename T>
Shape output_shape(const Layer<T>& layer, const Shape& in);

template <typename T>
bool is_affine(const Layer<T>& layer) {
  return std::holds_alternative<FullyConnected<T>>(layer) ||
         std::holds_alternative<Conv2d<T>>(layer) || std::holds_alternative<NegExpHead<T>>(layer);
}

template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;
  /// Validates that consecutive shapes compose and that the last layer is a
  /// FullyConnected or NegExpHead logit layer.
  BasicNetwork(Shape input_shape, std::vector<Layer<T>> layers);

  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  /// shapes()[i] is the input shape of layer i; shapes().back() is the logit shape.
  const std::vector<Shape>& shapes() const { return shapes_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
  /// Mutable access for parameter edits; callers must keep tensor shapes.
  Layer<T>& layer(std::size_t i) { return layers_.at(i); }

  /// Parameters in layer order: (weight, bias), (kernel, bias), (h, bias).
  std::vector<BasicTensor<T>*> parameters();
  std::vector<const BasicTensor<T>*> parameters() const;
  /// True for each parameter that belongs to a NegExpHead, aligned with parameters().
  std::vector<bool> head_mask() const;
  std::size_t parameter_count() const;
  bool has_negexp_head() const;

  template <typename U>
  BasicNetwork<U> cast() const;

 private:
  std::vector<Shape> shapes_;
  std::vector<Layer<T>> layers_;
};

using Network = BasicNetwork<float>;
using Network64 = BasicNetwork<double>;

template <typename U, typename T>
Layer<U> cast_layer(const Layer<T>& layer) {
  return std::visit(
      [](const auto& l) -> Layer<U> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, FullyConnected<T>>) {
          return FullyConnected<U>{l.weight.template cast<U>(), l.bias.template cast<U>()};
        } else if constexpr (std::is_same_v<L, Conv2d<T>>) {
          return Conv2d<U>{l.kernel.template cast<U>(), l.bias.template cast<U>(), l.stride,
                           l.padding};
        } else if constexpr (std::is_same_v<L, NegExpHead<T>>) {
          return NegExpHead<U>{l.h.template cast<U>(), l.bias.template cast<U>()};
        } else {
          return l;
        }
      },
      layer);
}

template <typename T>
template <typename U>
BasicNetwork<U> BasicNetwork<T>::cast() const {
  std::vector<Layer<U>> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(cast_layer<U>(l));
  return BasicNetwork<U>(input_shape(), std::move(out));
}

// Zero-initialized layer constructors.
template <typename T>
FullyConnected<T> make_fc(std::size_t in, std::size_t out);
template <typename T>
Conv2d<T> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                    std::size_t stride = 1, std::size_t padding = 0);
template <typename T>
NegExpHead<T> make_negexp_head(std::size_t in, std::size_t out = 1);

/// He-normal weights (std sqrt(2/fan_in)), zero biases, NegExpHead h = -log(fan_in)
/// so its weights start at -1/fan_in, and the head bias set to `head_bias`.
template <typename T>
void init_parameters(BasicNetwork<T>& net, Rng& rng, T head_bias = T{0});

/// Named architectures. Discriminators end in a scalar NegExpHead.
/// "desk": two strided convolutions and one hidden FC layer, for 16x16 inputs.
/// "cifar": the 5-layer 32x32x3 discriminator with 128/256/256 channels.
/// "mlp": Flatten, FC(64), ReLU, FC head.
/// "conv": two conv+avgpool blocks and a hidden FC layer.
Network make_discriminator(const std::string& arch, const Shape& input_shape);
Network make_classifier(const std::string& arch, const Shape& input_shape,
                        std::size_t num_classes);

extern template class BasicNetwork<float>;
extern template class BasicNetwork<double>;

}  // namespace prood
