#include "prood/ibp.hpp"

#include <algorithm>

#include "kernels.hpp"
#include "prood/error.hpp"

namespace prood {

namespace {

template <typename T>
struct SplitWeights {
  BasicTensor<T> pos, neg;
};

template <typename T>
SplitWeights<T> split(const BasicTensor<T>& w) {
  SplitWeights<T> s{BasicTensor<T>(w.shape()), BasicTensor<T>(w.shape())};
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > T{0}) {
      s.pos[i] = w[i];
    } else {
      s.neg[i] = w[i];
    }
  }
  return s;
}

template <typename T>
BasicIntervalTensor<T> dense_interval(const BasicTensor<T>& w, const BasicTensor<T>& b,
                                      const BasicIntervalTensor<T>& iv) {
  const auto s = split(w);
  BasicIntervalTensor<T> out{b, b};
  kernels::dense_apply(s.pos, iv.upper.data(), out.upper.data());
  kernels::dense_apply(s.neg, iv.lower.data(), out.upper.data());
  kernels::dense_apply(s.pos, iv.lower.data(), out.lower.data());
  kernels::dense_apply(s.neg, iv.upper.data(), out.lower.data());
  return out;
}

template <typename T>
BasicIntervalTensor<T> conv_interval(const Conv2d<T>& l, const BasicIntervalTensor<T>& iv) {
  const auto g = kernels::conv_geometry(l.kernel.shape(), iv.shape(), l.stride, l.padding);
  const auto s = split(l.kernel);
  BasicTensor<T> base({g.out_ch, g.out_h, g.out_w});
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    std::fill(base.data() + o * plane, base.data() + (o + 1) * plane, l.bias[o]);
  }
  BasicIntervalTensor<T> out{base, base};
  kernels::conv_apply(s.pos, g, iv.upper.data(), out.upper.data());
  kernels::conv_apply(s.neg, g, iv.lower.data(), out.upper.data());
  kernels::conv_apply(s.pos, g, iv.lower.data(), out.lower.data());
  kernels::conv_apply(s.neg, g, iv.upper.data(), out.lower.data());
  return out;
}

// Weight gradient of an interval affine map: the positive part sees
// (upper <- u, lower <- l) and the negative part (upper <- l, lower <- u).
template <typename T>
void mask_split_grad(const BasicTensor<T>& w, const BasicTensor<T>& gpos,
                     const BasicTensor<T>& gneg, BasicTensor<T>& gw) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > T{0}) {
      gw[i] += gpos[i];
    } else if (w[i] < T{0}) {
      gw[i] += gneg[i];
    }
  }
}

}  // namespace

template <typename T>
BasicIntervalTensor<T> input_interval(const BasicTensor<T>& z, const ThreatModel& tm) {
  if (!(tm.epsilon >= 0.0)) throw ConfigError("threat model epsilon must be nonnegative");
  const T lo = static_cast<T>(tm.domain_low), hi = static_cast<T>(tm.domain_high);
  const T eps = static_cast<T>(tm.epsilon);
  BasicIntervalTensor<T> iv{z, z};
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(z[i] >= lo && z[i] <= hi)) {
      throw ConfigError("input component " + std::to_string(i) + " = " + std::to_string(z[i]) +
                        " lies outside the domain [" + std::to_string(tm.domain_low) + ", " +
                        std::to_string(tm.domain_high) + "]");
    }
    iv.lower[i] = std::max(z[i] - eps, lo);
    iv.upper[i] = std::min(z[i] + eps, hi);
  }
  return iv;
}

template <typename T>
BasicIntervalTensor<T> propagate_layer(const BasicIntervalTensor<T>& iv, const Layer<T>& layer) {
  if (iv.lower.shape() != iv.upper.shape()) throw ShapeError("interval bounds differ in shape");
  output_shape(layer, iv.shape());
  if (const auto* fc = std::get_if<FullyConnected<T>>(&layer)) {
    return dense_interval(fc->weight, fc->bias, iv);
  }
  if (const auto* head = std::get_if<NegExpHead<T>>(&layer)) {
    return dense_interval(head->weight(), head->bias, iv);
  }
  if (const auto* conv = std::get_if<Conv2d<T>>(&layer)) return conv_interval(*conv, iv);
  return {forward_layer(layer, iv.lower), forward_layer(layer, iv.upper)};
}

template <typename T>
IntervalTrace<T> propagate(const BasicNetwork<T>& net, const BasicIntervalTensor<T>& input) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("interval shape " + shape_str(input.shape()) +
                     " does not match network input " + shape_str(net.input_shape()));
  }
  IntervalTrace<T> trace;
  trace.reserve(net.num_layers() + 1);
  trace.push_back(input);
  for (const auto& layer : net.layers()) trace.push_back(propagate_layer(trace.back(), layer));
  return trace;
}

template <typename T>
BasicIntervalTensor<T> logit_bounds(const BasicNetwork<T>& net,
                                    const BasicIntervalTensor<T>& input) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("interval shape " + shape_str(input.shape()) +
                     " does not match network input " + shape_str(net.input_shape()));
  }
  BasicIntervalTensor<T> cur = input;
  for (const auto& layer : net.layers()) cur = propagate_layer(cur, layer);
  return cur;
}

template <typename T>
T upper_logit(const BasicNetwork<T>& g, const BasicTensor<T>& z, const ThreatModel& tm) {
  if (!g.has_negexp_head() || g.output_shape() != Shape{1}) {
    throw ShapeError("upper_logit needs a scalar network ending in a NegExpHead");
  }
  return logit_bounds(g, input_interval(z, tm)).upper[0];
}

template <typename T>
BasicIntervalTensor<T> interval_backward(const BasicNetwork<T>& net, const IntervalTrace<T>& trace,
                                         const BasicTensor<T>& grad_lower,
                                         const BasicTensor<T>& grad_upper, ParamGrads<T>* grads) {
  const std::size_t n = net.num_layers();
  if (trace.size() != n + 1) throw ShapeError("interval trace does not match network depth");
  for (std::size_t i = 0; i <= n; ++i) {
    if (trace[i].shape() != net.shapes()[i]) {
      throw ShapeError("interval trace entry " + std::to_string(i) + " has shape " +
                       shape_str(trace[i].shape()) + ", expected " + shape_str(net.shapes()[i]));
    }
  }
  if (grad_lower.shape() != net.output_shape() || grad_upper.shape() != net.output_shape()) {
    throw ShapeError("bound gradient shape mismatch");
  }
  if (grads != nullptr && grads->size() != net.parameters().size()) {
    throw ShapeError("gradient list does not match network parameters");
  }

  std::vector<std::size_t> param_index(n, 0);
  for (std::size_t i = 0, k = 0; i < n; ++i) {
    param_index[i] = k;
    if (is_affine(net.layer(i))) k += 2;
  }

  BasicTensor<T> gl = grad_lower, gu = grad_upper;
  for (std::size_t li = n; li-- > 0;) {
    const auto& layer = net.layer(li);
    const auto& x = trace[li];
    BasicTensor<T> gl_in(x.shape()), gu_in(x.shape());

    auto dense_back = [&](const BasicTensor<T>& w, BasicTensor<T>* gw) {
      const auto s = split(w);
      kernels::dense_apply_t(s.pos, gu.data(), gu_in.data());
      kernels::dense_apply_t(s.neg, gl.data(), gu_in.data());
      kernels::dense_apply_t(s.pos, gl.data(), gl_in.data());
      kernels::dense_apply_t(s.neg, gu.data(), gl_in.data());
      if (gw) {
        BasicTensor<T> gpos(w.shape()), gneg(w.shape());
        kernels::dense_weight_grad(gu.data(), x.upper.data(), gpos);
        kernels::dense_weight_grad(gl.data(), x.lower.data(), gpos);
        kernels::dense_weight_grad(gu.data(), x.lower.data(), gneg);
        kernels::dense_weight_grad(gl.data(), x.upper.data(), gneg);
        mask_split_grad(w, gpos, gneg, *gw);
      }
    };

    if (const auto* fc = std::get_if<FullyConnected<T>>(&layer)) {
      dense_back(fc->weight, grads ? &(*grads)[param_index[li]] : nullptr);
      if (grads) {
        axpy(T{1}, gu, (*grads)[param_index[li] + 1]);
        axpy(T{1}, gl, (*grads)[param_index[li] + 1]);
      }
    } else if (const auto* head = std::get_if<NegExpHead<T>>(&layer)) {
      const BasicTensor<T> w = head->weight();
      BasicTensor<T> gw(w.shape());
      dense_back(w, grads ? &gw : nullptr);
      if (grads) {
        auto& gh = (*grads)[param_index[li]];
        for (std::size_t i = 0; i < gw.size(); ++i) gh[i] += gw[i] * w[i];
        axpy(T{1}, gu, (*grads)[param_index[li] + 1]);
        axpy(T{1}, gl, (*grads)[param_index[li] + 1]);
      }
    } else if (const auto* conv = std::get_if<Conv2d<T>>(&layer)) {
      const auto g = kernels::conv_geometry(conv->kernel.shape(), x.shape(), conv->stride,
                                            conv->padding);
      const auto s = split(conv->kernel);
      kernels::conv_apply_t(s.pos, g, gu.data(), gu_in.data());
      kernels::conv_apply_t(s.neg, g, gl.data(), gu_in.data());
      kernels::conv_apply_t(s.pos, g, gl.data(), gl_in.data());
      kernels::conv_apply_t(s.neg, g, gu.data(), gl_in.data());
      if (grads) {
        BasicTensor<T> gpos(conv->kernel.shape()), gneg(conv->kernel.shape());
        kernels::conv_weight_grad(g, gu.data(), x.upper.data(), gpos);
        kernels::conv_weight_grad(g, gl.data(), x.lower.data(), gpos);
        kernels::conv_weight_grad(g, gu.data(), x.lower.data(), gneg);
        kernels::conv_weight_grad(g, gl.data(), x.upper.data(), gneg);
        mask_split_grad(conv->kernel, gpos, gneg, (*grads)[param_index[li]]);
        auto& gb = (*grads)[param_index[li] + 1];
        const std::size_t plane = g.out_h * g.out_w;
        for (std::size_t o = 0; o < g.out_ch; ++o) {
          T acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += gu[o * plane + p] + gl[o * plane + p];
          gb[o] += acc;
        }
      }
    } else if (std::holds_alternative<ReLU>(layer)) {
      for (std::size_t i = 0; i < x.lower.size(); ++i) {
        gl_in[i] = x.lower[i] > T{0} ? gl[i] : T{0};
        gu_in[i] = x.upper[i] > T{0} ? gu[i] : T{0};
      }
    } else if (const auto* leaky = std::get_if<LeakyReLU>(&layer)) {
      const T s = static_cast<T>(leaky->slope);
      for (std::size_t i = 0; i < x.lower.size(); ++i) {
        gl_in[i] = x.lower[i] > T{0} ? gl[i] : s * gl[i];
        gu_in[i] = x.upper[i] > T{0} ? gu[i] : s * gu[i];
      }
    } else if (const auto* pool = std::get_if<AvgPool>(&layer)) {
      kernels::avgpool_backward(pool->window, x.shape(), gl, gl_in);
      kernels::avgpool_backward(pool->window, x.shape(), gu, gu_in);
    } else {
      gl_in = gl;
      gl_in.reshape(x.shape());
      gu_in = gu;
      gu_in.reshape(x.shape());
    }
    gl = std::move(gl_in);
    gu = std::move(gu_in);
  }
  return {std::move(gl), std::move(gu)};
}

#define PROOD_INSTANTIATE(T)                                                                    \
  template BasicIntervalTensor<T> input_interval(const BasicTensor<T>&, const ThreatModel&);   \
  template BasicIntervalTensor<T> propagate_layer(const BasicIntervalTensor<T>&,               \
                                                  const Layer<T>&);                            \
  template IntervalTrace<T> propagate(const BasicNetwork<T>&, const BasicIntervalTensor<T>&);  \
  template BasicIntervalTensor<T> logit_bounds(const BasicNetwork<T>&,                         \
                                               const BasicIntervalTensor<T>&);                 \
  template T upper_logit(const BasicNetwork<T>&, const BasicTensor<T>&, const ThreatModel&);   \
  template BasicIntervalTensor<T> interval_backward(const BasicNetwork<T>&,                    \
                                                    const IntervalTrace<T>&,                   \
                                                    const BasicTensor<T>&,                     \
                                                    const BasicTensor<T>&, ParamGrads<T>*);

PROOD_INSTANTIATE(float)
PROOD_INSTANTIATE(double)

}  // namespace prood
