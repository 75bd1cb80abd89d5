#include "prood/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prood/error.hpp"

namespace prood {

template <typename T>
BasicTensor<T> NegExpHead<T>::weight() const {
  BasicTensor<T> w(h.shape());
  // exp underflows to zero below about -745 (double) or -103 (float).
  for (std::size_t i = 0; i < h.size(); ++i) {
    w[i] = -std::max(std::exp(h[i]), std::numeric_limits<T>::min());
  }
  return w;
}

template <typename T>
std::string layer_kind(const Layer<T>& layer) {
  struct Visitor {
    std::string operator()(const FullyConnected<T>&) const { return "fc"; }
    std::string operator()(const Conv2d<T>&) const { return "conv2d"; }
    std::string operator()(const ReLU&) const { return "relu"; }
    std::string operator()(const LeakyReLU&) const { return "leaky_relu"; }
    std::string operator()(const AvgPool&) const { return "avgpool"; }
    std::string operator()(const Flatten&) const { return "flatten"; }
    std::string operator()(const NegExpHead<T>&) const { return "negexp_head"; }
  };
  return std::visit(Visitor{}, layer);
}

namespace {

template <typename T>
Shape dense_output(const BasicTensor<T>& weight, const BasicTensor<T>& bias, const Shape& in,
                   const char* name) {
  if (weight.rank() != 2) throw ShapeError(std::string(name) + " weight must be 2-D");
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError(std::string(name) + " bias length must equal output dim");
  }
  if (in.size() != 1 || in[0] != weight.dim(1)) {
    throw ShapeError(std::string(name) + " expects input [" + std::to_string(weight.dim(1)) +
                     "], got " + shape_str(in));
  }
  return {weight.dim(0)};
}

}  // namespace

template <typename T>
Shape output_shape(const Layer<T>& layer, const Shape& in) {
  struct Visitor {
    const Shape& in;
    Shape operator()(const FullyConnected<T>& l) const {
      return dense_output(l.weight, l.bias, in, "fc");
    }
    Shape operator()(const NegExpHead<T>& l) const {
      return dense_output(l.h, l.bias, in, "negexp_head");
    }
    Shape operator()(const Conv2d<T>& l) const {
      if (l.kernel.rank() != 4) throw ShapeError("conv2d kernel must be 4-D");
      if (l.bias.rank() != 1 || l.bias.dim(0) != l.kernel.dim(0)) {
        throw ShapeError("conv2d bias length must equal output channels");
      }
      if (l.stride == 0) throw ShapeError("conv2d stride must be positive");
      if (in.size() != 3 || in[0] != l.kernel.dim(1)) {
        throw ShapeError("conv2d expects input with " + std::to_string(l.kernel.dim(1)) +
                         " channels, got " + shape_str(in));
      }
      const std::size_t kh = l.kernel.dim(2), kw = l.kernel.dim(3);
      if (in[1] + 2 * l.padding < kh || in[2] + 2 * l.padding < kw) {
        throw ShapeError("conv2d kernel larger than padded input " + shape_str(in));
      }
      return {l.kernel.dim(0), (in[1] + 2 * l.padding - kh) / l.stride + 1,
              (in[2] + 2 * l.padding - kw) / l.stride + 1};
    }
    Shape operator()(const ReLU&) const { return in; }
    Shape operator()(const LeakyReLU& l) const {
      if (!(l.slope > 0.0 && l.slope < 1.0)) throw ShapeError("leaky_relu slope must be in (0,1)");
      return in;
    }
    Shape operator()(const AvgPool& l) const {
      if (l.window == 0) throw ShapeError("avgpool window must be positive");
      if (in.size() != 3 || in[1] % l.window != 0 || in[2] % l.window != 0) {
        throw ShapeError("avgpool window " + std::to_string(l.window) +
                         " must divide the spatial dims of " + shape_str(in));
      }
      return {in[0], in[1] / l.window, in[2] / l.window};
    }
    Shape operator()(const Flatten&) const { return {shape_size(in)}; }
  };
  return std::visit(Visitor{in}, layer);
}

template <typename T>
BasicNetwork<T>::BasicNetwork(Shape input_shape, std::vector<Layer<T>> layers)
    : layers_(std::move(layers)) {
  if (input_shape.empty()) throw ShapeError("network input shape is empty");
  if (layers_.empty()) throw ShapeError("network has no layers");
  shapes_.push_back(std::move(input_shape));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(prood::output_shape(layers_[i], shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  const auto& last = layers_.back();
  if (!std::holds_alternative<FullyConnected<T>>(last) &&
      !std::holds_alternative<NegExpHead<T>>(last)) {
    throw ShapeError("final layer must be a fully connected logit layer");
  }
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (std::holds_alternative<NegExpHead<T>>(layers_[i])) {
      throw ShapeError("negexp_head is only allowed as the final layer");
    }
  }
}

template <typename T>
std::vector<BasicTensor<T>*> BasicNetwork<T>::parameters() {
  std::vector<BasicTensor<T>*> out;
  for (auto& layer : layers_) {
    if (auto* fc = std::get_if<FullyConnected<T>>(&layer)) {
      out.push_back(&fc->weight);
      out.push_back(&fc->bias);
    } else if (auto* conv = std::get_if<Conv2d<T>>(&layer)) {
      out.push_back(&conv->kernel);
      out.push_back(&conv->bias);
    } else if (auto* head = std::get_if<NegExpHead<T>>(&layer)) {
      out.push_back(&head->h);
      out.push_back(&head->bias);
    }
  }
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicNetwork<T>::parameters() const {
  auto mut = const_cast<BasicNetwork*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<bool> BasicNetwork<T>::head_mask() const {
  std::vector<bool> mask;
  for (const auto& layer : layers_) {
    if (!is_affine(layer)) continue;
    const bool head = std::holds_alternative<NegExpHead<T>>(layer);
    mask.push_back(head);
    mask.push_back(head);
  }
  return mask;
}

template <typename T>
std::size_t BasicNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
bool BasicNetwork<T>::has_negexp_head() const {
  return !layers_.empty() && std::holds_alternative<NegExpHead<T>>(layers_.back());
}

template <typename T>
FullyConnected<T> make_fc(std::size_t in, std::size_t out) {
  return {BasicTensor<T>({out, in}), BasicTensor<T>({out})};
}

template <typename T>
Conv2d<T> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                    std::size_t stride, std::size_t padding) {
  return {BasicTensor<T>({out_ch, in_ch, kernel, kernel}), BasicTensor<T>({out_ch}), stride,
          padding};
}

template <typename T>
NegExpHead<T> make_negexp_head(std::size_t in, std::size_t out) {
  return {BasicTensor<T>({out, in}), BasicTensor<T>({out})};
}

template <typename T>
void init_parameters(BasicNetwork<T>& net, Rng& rng, T head_bias) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto& layer = net.layer(i);
    auto he = [&rng](BasicTensor<T>& w, std::size_t fan_in) {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : w) v = static_cast<T>(std_dev * standard_normal(rng));
    };
    if (auto* fc = std::get_if<FullyConnected<T>>(&layer)) {
      he(fc->weight, fc->weight.dim(1));
      fc->bias.fill(T{0});
    } else if (auto* conv = std::get_if<Conv2d<T>>(&layer)) {
      he(conv->kernel, conv->kernel.dim(1) * conv->kernel.dim(2) * conv->kernel.dim(3));
      conv->bias.fill(T{0});
    } else if (auto* head = std::get_if<NegExpHead<T>>(&layer)) {
      head->h.fill(static_cast<T>(-std::log(static_cast<double>(head->h.dim(1)))));
      head->bias.fill(head_bias);
    }
  }
}

Network make_discriminator(const std::string& arch, const Shape& in) {
  if (in.size() != 3) throw ConfigError("discriminator input must be C x H x W");
  const std::size_t c = in[0];
  // spatial size after a 3x3, stride-2, padding-1 convolution
  auto half = [](std::size_t n) { return (n - 1) / 2 + 1; };
  std::vector<Layer<float>> layers;
  if (arch == "desk") {
    // 16x16 -> 8x8 -> 4x4
    layers = {make_conv<float>(c, 8, 3, 2, 1),
              ReLU{},
              make_conv<float>(8, 16, 3, 2, 1),
              ReLU{},
              Flatten{},
              make_fc<float>(16 * half(half(in[1])) * half(half(in[2])), 32),
              ReLU{},
              make_negexp_head<float>(32)};
  } else if (arch == "cifar") {
    layers = {make_conv<float>(c, 128, 3, 1, 1),
              ReLU{},
              make_conv<float>(128, 256, 3, 2, 1),
              ReLU{},
              make_conv<float>(256, 256, 3, 1, 1),
              ReLU{},
              AvgPool{2},
              Flatten{},
              make_fc<float>(256 * (half(in[1]) / 2) * (half(in[2]) / 2), 128),
              ReLU{},
              make_negexp_head<float>(128)};
  } else if (arch == "mlp") {
    layers = {Flatten{}, make_fc<float>(shape_size(in), 64), ReLU{}, make_negexp_head<float>(64)};
  } else {
    throw ConfigError("unknown discriminator architecture '" + arch + "'");
  }
  return Network(in, std::move(layers));
}

Network make_classifier(const std::string& arch, const Shape& in, std::size_t num_classes) {
  if (in.size() != 3) throw ConfigError("classifier input must be C x H x W");
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
  std::vector<Layer<float>> layers;
  if (arch == "mlp") {
    layers = {Flatten{}, make_fc<float>(shape_size(in), 64), ReLU{},
              make_fc<float>(64, num_classes)};
  } else if (arch == "conv") {
    layers = {make_conv<float>(in[0], 8, 3, 1, 1),
              ReLU{},
              AvgPool{2},
              make_conv<float>(8, 16, 3, 1, 1),
              ReLU{},
              AvgPool{2},
              Flatten{},
              make_fc<float>(16 * (in[1] / 4) * (in[2] / 4), 32),
              ReLU{},
              make_fc<float>(32, num_classes)};
  } else {
    throw ConfigError("unknown classifier architecture '" + arch + "'");
  }
  return Network(in, std::move(layers));
}

template struct NegExpHead<float>;
template struct NegExpHead<double>;
template class BasicNetwork<float>;
template class BasicNetwork<double>;
template std::string layer_kind(const Layer<float>&);
template std::string layer_kind(const Layer<double>&);
template Shape output_shape(const Layer<float>&, const Shape&);
template Shape output_shape(const Layer<double>&, const Shape&);
template FullyConnected<float> make_fc(std::size_t, std::size_t);
template FullyConnected<double> make_fc(std::size_t, std::size_t);
template Conv2d<float> make_conv(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t);
template Conv2d<double> make_conv(std::size_t, std::size_t, std::size_t, std::size_t,
                                  std::size_t);
template NegExpHead<float> make_negexp_head(std::size_t, std::size_t);
template NegExpHead<double> make_negexp_head(std::size_t, std::size_t);
template void init_parameters(BasicNetwork<float>&, Rng&, float);
template void init_parameters(BasicNetwork<double>&, Rng&, double);

}  // namespace prood
