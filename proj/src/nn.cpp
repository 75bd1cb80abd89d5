#include "prood/nn.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "prood/error.hpp"

namespace prood {

namespace {

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& w, const BasicTensor<T>& b,
                             const BasicTensor<T>& x) {
  BasicTensor<T> y = b;
  kernels::dense_apply(w, x.data(), y.data());
  return y;
}

template <typename T>
BasicTensor<T> conv_forward(const Conv2d<T>& l, const BasicTensor<T>& x) {
  const auto g = kernels::conv_geometry(l.kernel.shape(), x.shape(), l.stride, l.padding);
  BasicTensor<T> y({g.out_ch, g.out_h, g.out_w});
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    std::fill(y.data() + o * plane, y.data() + (o + 1) * plane, l.bias[o]);
  }
  kernels::conv_apply(l.kernel, g, x.data(), y.data());
  return y;
}

}  // namespace

template <typename T>
BasicTensor<T> forward_layer(const Layer<T>& layer, const BasicTensor<T>& x) {
  struct Visitor {
    const BasicTensor<T>& x;
    BasicTensor<T> operator()(const FullyConnected<T>& l) const {
      return dense_forward(l.weight, l.bias, x);
    }
    BasicTensor<T> operator()(const NegExpHead<T>& l) const {
      return dense_forward(l.weight(), l.bias, x);
    }
    BasicTensor<T> operator()(const Conv2d<T>& l) const { return conv_forward(l, x); }
    BasicTensor<T> operator()(const ReLU&) const {
      BasicTensor<T> y = x;
      for (auto& v : y) v = v > T{0} ? v : T{0};
      return y;
    }
    BasicTensor<T> operator()(const LeakyReLU& l) const {
      BasicTensor<T> y = x;
      const T s = static_cast<T>(l.slope);
      for (auto& v : y) v = v > T{0} ? v : s * v;
      return y;
    }
    BasicTensor<T> operator()(const AvgPool& l) const { return kernels::avgpool_forward(l.window, x); }
    BasicTensor<T> operator()(const Flatten&) const {
      BasicTensor<T> y = x;
      y.reshape({x.size()});
      return y;
    }
  };
  return std::visit(Visitor{x}, layer);
}

template <typename T>
Activations<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& x) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  }
  Activations<T> acts;
  acts.reserve(net.num_layers() + 1);
  acts.push_back(x);
  for (const auto& layer : net.layers()) acts.push_back(forward_layer(layer, acts.back()));
  return acts;
}

template <typename T>
BasicTensor<T> logits(const BasicNetwork<T>& net, const BasicTensor<T>& x) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(net.input_shape()));
  }
  BasicTensor<T> cur = x;
  for (const auto& layer : net.layers()) cur = forward_layer(layer, cur);
  return cur;
}

template <typename T>
ParamGrads<T> zero_grads(const BasicNetwork<T>& net) {
  ParamGrads<T> g;
  for (const auto* p : net.parameters()) g.emplace_back(p->shape());
  return g;
}

template <typename T>
BasicTensor<T> backward_into(const BasicNetwork<T>& net, const Activations<T>& acts,
                             const BasicTensor<T>& logit_grad,
                             std::type_identity_t<ParamGrads<T>>* grads) {
  const std::size_t n = net.num_layers();
  if (acts.size() != n + 1) throw ShapeError("activation list does not match network depth");
  for (std::size_t i = 0; i <= n; ++i) {
    if (acts[i].shape() != net.shapes()[i]) {
      throw ShapeError("activation " + std::to_string(i) + " has shape " +
                       shape_str(acts[i].shape()) + ", expected " + shape_str(net.shapes()[i]));
    }
  }
  if (logit_grad.shape() != net.output_shape()) throw ShapeError("logit gradient shape mismatch");
  if (grads != nullptr && grads->size() != 2 * static_cast<std::size_t>(std::count_if(
                                                   net.layers().begin(), net.layers().end(),
                                                   [](const auto& l) { return is_affine(l); }))) {
    throw ShapeError("gradient list does not match network parameters");
  }

  // Index of the first parameter of each layer.
  std::vector<std::size_t> param_index(n, 0);
  for (std::size_t i = 0, k = 0; i < n; ++i) {
    param_index[i] = k;
    if (is_affine(net.layer(i))) k += 2;
  }

  BasicTensor<T> gy = logit_grad;
  for (std::size_t li = n; li-- > 0;) {
    const auto& layer = net.layer(li);
    const auto& x = acts[li];
    BasicTensor<T> gx(x.shape());
    if (const auto* fc = std::get_if<FullyConnected<T>>(&layer)) {
      kernels::dense_apply_t(fc->weight, gy.data(), gx.data());
      if (grads) {
        kernels::dense_weight_grad(gy.data(), x.data(), (*grads)[param_index[li]]);
        axpy(T{1}, gy, (*grads)[param_index[li] + 1]);
      }
    } else if (const auto* head = std::get_if<NegExpHead<T>>(&layer)) {
      const BasicTensor<T> w = head->weight();
      kernels::dense_apply_t(w, gy.data(), gx.data());
      if (grads) {
        // dW/dh = -exp(h) = W
        BasicTensor<T> gw(w.shape());
        kernels::dense_weight_grad(gy.data(), x.data(), gw);
        auto& gh = (*grads)[param_index[li]];
        for (std::size_t i = 0; i < gw.size(); ++i) gh[i] += gw[i] * w[i];
        axpy(T{1}, gy, (*grads)[param_index[li] + 1]);
      }
    } else if (const auto* conv = std::get_if<Conv2d<T>>(&layer)) {
      const auto g = kernels::conv_geometry(conv->kernel.shape(), x.shape(), conv->stride,
                                            conv->padding);
      kernels::conv_apply_t(conv->kernel, g, gy.data(), gx.data());
      if (grads) {
        kernels::conv_weight_grad(g, gy.data(), x.data(), (*grads)[param_index[li]]);
        auto& gb = (*grads)[param_index[li] + 1];
        const std::size_t plane = g.out_h * g.out_w;
        for (std::size_t o = 0; o < g.out_ch; ++o) {
          T acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += gy[o * plane + p];
          gb[o] += acc;
        }
      }
    } else if (std::holds_alternative<ReLU>(layer)) {
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? gy[i] : T{0};
    } else if (const auto* leaky = std::get_if<LeakyReLU>(&layer)) {
      const T s = static_cast<T>(leaky->slope);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? gy[i] : s * gy[i];
    } else if (const auto* pool = std::get_if<AvgPool>(&layer)) {
      kernels::avgpool_backward(pool->window, x.shape(), gy, gx);
    } else {  // Flatten
      gx = gy;
      gx.reshape(x.shape());
    }
    gy = std::move(gx);
  }
  return gy;
}

template <typename T>
Backprop<T> backward(const BasicNetwork<T>& net, const Activations<T>& acts,
                     const BasicTensor<T>& logit_grad) {
  Backprop<T> out{zero_grads(net), {}};
  out.input = backward_into(net, acts, logit_grad, &out.params);
  return out;
}

template <typename T>
Softmax<T> softmax_conf(const BasicTensor<T>& logits) {
  const std::size_t k = logits.size();
  if (k < 2) throw ShapeError("softmax needs at least two logits");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < k; ++i) {
    if (logits[i] > logits[arg]) arg = i;
  }
  const T m = logits[arg];
  BasicTensor<T> p(logits.shape());
  T sum = 0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return {std::move(p), T{1} / sum, arg};
}

template <typename T>
T sigmoid(T t) {
  if (t >= T{0}) return T{1} / (T{1} + std::exp(-t));
  const T e = std::exp(t);
  return e / (T{1} + e);
}

template <typename T>
T softplus(T t) {
  return std::max(t, T{0}) + std::log1p(std::exp(-std::abs(t)));
}

#define PROOD_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> forward_layer(const Layer<T>&, const BasicTensor<T>&);             \
  template Activations<T> forward(const BasicNetwork<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> logits(const BasicNetwork<T>&, const BasicTensor<T>&);             \
  template ParamGrads<T> zero_grads(const BasicNetwork<T>&);                                 \
  template BasicTensor<T> backward_into(const BasicNetwork<T>&, const Activations<T>&,       \
                                        const BasicTensor<T>&, ParamGrads<T>*);              \
  template Backprop<T> backward(const BasicNetwork<T>&, const Activations<T>&,               \
                                const BasicTensor<T>&);                                      \
  template Softmax<T> softmax_conf(const BasicTensor<T>&);                                   \
  template T sigmoid(T);                                                                     \
  template T softplus(T);

PROOD_INSTANTIATE(float)
PROOD_INSTANTIATE(double)

}  // namespace prood
