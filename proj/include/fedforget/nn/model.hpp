#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/core/tensor.hpp"
#include "fedforget/nn/arch.hpp"
#include "fedforget/nn/layers.hpp"
#include "fedforget/nn/params.hpp"

namespace ff {

// Activations recorded by a forward pass, consumed by backward().
template <typename T>
struct Trace {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<int> labels;
  std::vector<Tensor<T>> label_outputs;
};

template <typename T>
using TapGrads = std::map<std::string, Tensor<T>>;

// Executes an ArchSpec. Stateless apart from the ArchSpec and inferred shapes;
// parameters are always passed in.
template <typename T>
class Network {
 public:
  explicit Network(ArchSpec arch) : arch_(std::move(arch)) {
    FF_EXPECT(arch_.executable, ContractError,
              "architecture '" + arch_.id + "' is descriptive only and cannot be executed");
    if (arch_.conditional()) {
      Shape s{1};
      for (auto& l : arch_.label_branch) label_shapes_.push_back(s = infer(l, s, {}));
    }
    Shape s = arch_.input;
    for (auto& l : arch_.layers)
      shapes_.push_back(s = infer(l, s, label_shapes_.empty() ? Shape{} : label_shapes_.back()));
    FF_EXPECT(ff::numel(shapes_.back()) == arch_.output_dim, ContractError,
              "architecture '" + arch_.id + "' output size does not match output_dim");
    for (auto& t : arch_.tap_layers) layer_index(t);
  }

  const ArchSpec& arch() const { return arch_; }

  Shape layer_shape(const std::string& name) const { return shapes_.at(layer_index(name)); }

  // Uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
  // weights and biases; N(0,1) for embedding tables.
  ParamVector<T> init(std::uint64_t seed) const {
    ParamVector<T> p(arch_.id);
    auto rng = make_rng(seed, {0x1417});
    auto add_layer = [&](const LayerSpec& l) {
      if (!l.has_params()) return;
      Shape ws, bs;
      double fan_in = 1;
      switch (l.kind) {
        case LayerKind::conv2d:
          ws = {l.out, l.in * l.kernel * l.kernel};
          bs = {l.out};
          fan_in = double(l.in * l.kernel * l.kernel);
          break;
        case LayerKind::conv_transpose2d:
          ws = {l.in, l.out * l.kernel * l.kernel};
          bs = {l.out};
          fan_in = double(l.in * l.kernel * l.kernel) / double(l.stride * l.stride);
          break;
        case LayerKind::linear:
          ws = {l.out, l.in};
          bs = {l.out};
          fan_in = double(l.in);
          break;
        case LayerKind::embedding: {
          Tensor<T> w({l.in, l.out});
          std::normal_distribution<double> nd(0.0, 1.0);
          for (auto& v : w.data) v = T(nd(rng));
          p.add(l.name + ".weight", std::move(w));
          return;
        }
        default: return;
      }
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> ud(-bound, bound);
      Tensor<T> w(ws), b(bs);
      for (auto& v : w.data) v = T(ud(rng));
      for (auto& v : b.data) v = T(ud(rng));
      p.add(l.name + ".weight", std::move(w));
      p.add(l.name + ".bias", std::move(b));
    };
    for (auto& l : arch_.label_branch) add_layer(l);
    for (auto& l : arch_.layers) add_layer(l);
    return p;
  }

  // x: [B, input...]; labels required (and only used) for conditional archs.
  Tensor<T> forward(const ParamVector<T>& p, const Tensor<T>& x,
                    std::span<const int> labels = {}, Trace<T>* trace = nullptr) const {
    check_params(p);
    check_input(x);
    const std::size_t B = x.dim(0);
    Trace<T> local;
    Trace<T>& tr = trace ? *trace : local;
    tr = Trace<T>{};
    tr.input = x;
    if (arch_.conditional()) {
      FF_EXPECT(labels.size() == B, ContractError, "conditional network needs one label per sample");
      for (int y : labels)
        FF_EXPECT(y >= 0 && std::size_t(y) < arch_.class_count, ContractError,
                  "class label outside [0, C)");
      tr.labels.assign(labels.begin(), labels.end());
      Tensor<T> h;
      for (std::size_t i = 0; i < arch_.label_branch.size(); ++i) {
        std::vector<std::uint32_t> unused;
        h = apply(p, arch_.label_branch[i], label_shapes_[i], i == 0 ? Shape{1} : label_shapes_[i - 1],
                  h, B, tr.labels, nullptr, unused);
        tr.label_outputs.push_back(h);
      }
    }
    tr.outputs.reserve(arch_.layers.size());
    tr.argmax.resize(arch_.layers.size());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      const Tensor<T>& in = i == 0 ? tr.input : tr.outputs[i - 1];
      const Shape& in_shape = i == 0 ? arch_.input : shapes_[i - 1];
      tr.outputs.push_back(apply(p, arch_.layers[i], shapes_[i], in_shape, in, B, tr.labels,
                                 arch_.conditional() ? &tr.label_outputs.back() : nullptr,
                                 tr.argmax[i]));
    }
    return tr.outputs.back();
  }

  const Tensor<T>& tap(const Trace<T>& tr, const std::string& name) const {
    return tr.outputs.at(layer_index(name));
  }

  // Back-propagates grad_out (shaped like the network output). Parameter
  // gradients are accumulated into *grads when non-null; tap_grads adds
  // extra gradient at the named layer outputs. Returns d/d input when
  // need_input_grad is set.
  Tensor<T> backward(const ParamVector<T>& p, const Trace<T>& tr, const Tensor<T>& grad_out,
                     ParamVector<T>* grads, const TapGrads<T>* tap_grads = nullptr,
                     bool need_input_grad = false) const {
    FF_EXPECT(tr.outputs.size() == arch_.layers.size(), ContractError, "backward without trace");
    FF_EXPECT(grad_out.shape == tr.outputs.back().shape, ContractError,
              "output gradient shape mismatch");
    if (grads) p.require_same_layout(*grads, "backward");
    const std::size_t B = tr.input.dim(0);
    Tensor<T> g = grad_out;
    Tensor<T> label_grad;
    for (std::size_t ii = arch_.layers.size(); ii-- > 0;) {
      const auto& l = arch_.layers[ii];
      if (tap_grads) {
        auto it = tap_grads->find(l.name);
        if (it != tap_grads->end()) {
          FF_EXPECT(it->second.shape == g.shape, ContractError, "tap gradient shape mismatch");
          for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += it->second.data[k];
        }
      }
      if (ii == 0 && !need_input_grad && !(l.kind == LayerKind::concat_label)) {
        step_back(p, l, shapes_[ii], arch_.input, tr.input, tr.outputs[ii], tr.argmax[ii], g,
                  B, tr.labels, grads, nullptr, false);
        g = Tensor<T>();
        break;
      }
      const Tensor<T>& in = ii == 0 ? tr.input : tr.outputs[ii - 1];
      const Shape& in_shape = ii == 0 ? arch_.input : shapes_[ii - 1];
      g = step_back(p, l, shapes_[ii], in_shape, in, tr.outputs[ii], tr.argmax[ii], g, B,
                    tr.labels, grads, &label_grad, true);
    }
    if (arch_.conditional() && !label_grad.data.empty()) {
      Tensor<T> lg = std::move(label_grad);
      for (std::size_t ii = arch_.label_branch.size(); ii-- > 0;) {
        const auto& l = arch_.label_branch[ii];
        const Tensor<T> empty;
        const Tensor<T>& in = ii == 0 ? empty : tr.label_outputs[ii - 1];
        const Shape in_shape = ii == 0 ? Shape{1} : label_shapes_[ii - 1];
        std::vector<std::uint32_t> unused;
        lg = step_back(p, l, label_shapes_[ii], in_shape, in, tr.label_outputs[ii], unused, lg, B,
                       tr.labels, grads, nullptr, ii != 0);
      }
    }
    return g;
  }

 private:
  std::size_t layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < arch_.layers.size(); ++i)
      if (arch_.layers[i].name == name) return i;
    throw ContractError("unknown layer '" + name + "' in " + arch_.id);
  }

  void check_params(const ParamVector<T>& p) const {
    FF_EXPECT(p.arch_id() == arch_.id, ContractError,
              "parameters belong to '" + p.arch_id() + "', network is '" + arch_.id + "'");
  }

  void check_input(const Tensor<T>& x) const {
    FF_EXPECT(x.rank() == arch_.input.size() + 1, ContractError,
              "input rank mismatch for " + arch_.id + ": got " + shape_str(x.shape));
    for (std::size_t i = 0; i < arch_.input.size(); ++i)
      FF_EXPECT(x.shape[i + 1] == arch_.input[i], ContractError,
                "input shape " + shape_str(x.shape) + " does not match " + arch_.id +
                    " input " + shape_str(arch_.input));
  }

  static Shape infer(const LayerSpec& l, const Shape& in, const Shape& label_plane) {
    auto need = [&](bool ok, const char* what) {
      FF_EXPECT(ok, ContractError, "layer '" + l.name + "': " + what + " (input " + shape_str(in) + ")");
    };
    switch (l.kind) {
      case LayerKind::conv2d: {
        need(in.size() == 3 && in[0] == l.in, "conv input channels");
        auto g = kernels::ConvGeom::make(in[0], in[1], in[2], l.kernel, l.stride, l.padding);
        return {l.out, g.out_h, g.out_w};
      }
      case LayerKind::conv_transpose2d:
        need(in.size() == 3 && in[0] == l.in, "deconv input channels");
        return {l.out, (in[1] - 1) * l.stride + l.kernel - 2 * l.padding,
                (in[2] - 1) * l.stride + l.kernel - 2 * l.padding};
      case LayerKind::linear:
        need(in.size() == 1 && in[0] == l.in, "linear input features");
        return {l.out};
      case LayerKind::max_pool2:
      case LayerKind::avg_pool2:
        need(in.size() == 3, "pooling needs CHW");
        return {in[0], in[1] / 2, in[2] / 2};
      case LayerKind::flatten: return {ff::numel(in)};
      case LayerKind::reshape:
        need(ff::numel(l.reshape_to) == ff::numel(in), "reshape size");
        return l.reshape_to;
      case LayerKind::embedding: return {l.out};
      case LayerKind::concat_label:
        need(in.size() == 3 && label_plane.size() == 3 && label_plane[1] == in[1] &&
                 label_plane[2] == in[2],
             "label plane must match spatial size");
        return {in[0] + label_plane[0], in[1], in[2]};
      case LayerKind::residual_block:
        throw ContractError("layer '" + l.name + "': residual blocks are not executable");
      default: return in;
    }
  }

  Tensor<T> apply(const ParamVector<T>& p, const LayerSpec& l, const Shape& out_shape,
                  const Shape& in_shape, const Tensor<T>& x, std::size_t B,
                  const std::vector<int>& labels, const Tensor<T>* label_plane,
                  std::vector<std::uint32_t>& arg) const {
    Shape full{B};
    full.insert(full.end(), out_shape.begin(), out_shape.end());
    Tensor<T> y(full);
    switch (l.kind) {
      case LayerKind::conv2d: {
        auto g = kernels::ConvGeom::make(in_shape[0], in_shape[1], in_shape[2], l.kernel, l.stride, l.padding);
        kernels::conv_forward(x.ptr(), B, g, p.at(l.name + ".weight").ptr(),
                              p.at(l.name + ".bias").ptr(), l.out, y.ptr(), scratch_);
        break;
      }
      case LayerKind::conv_transpose2d: {
        auto g = kernels::ConvGeom::make(l.out, out_shape[1], out_shape[2], l.kernel, l.stride, l.padding);
        kernels::deconv_forward(x.ptr(), B, l.in, g, p.at(l.name + ".weight").ptr(),
                                p.at(l.name + ".bias").ptr(), y.ptr(), scratch_);
        break;
      }
      case LayerKind::linear:
        kernels::linear_forward(x.ptr(), B, l.in, l.out, p.at(l.name + ".weight").ptr(),
                                p.at(l.name + ".bias").ptr(), y.ptr());
        break;
      case LayerKind::max_pool2:
        arg.resize(y.numel());
        kernels::max_pool2_forward(x.ptr(), B * in_shape[0], in_shape[1], in_shape[2], y.ptr(), arg.data());
        break;
      case LayerKind::avg_pool2:
        kernels::avg_pool2_forward(x.ptr(), B * in_shape[0], in_shape[1], in_shape[2], y.ptr());
        break;
      case LayerKind::relu:
        for (std::size_t k = 0; k < y.numel(); ++k) y.data[k] = x.data[k] > T(0) ? x.data[k] : T(0);
        break;
      case LayerKind::leaky_relu:
        for (std::size_t k = 0; k < y.numel(); ++k)
          y.data[k] = x.data[k] > T(0) ? x.data[k] : T(l.slope) * x.data[k];
        break;
      case LayerKind::sigmoid:
        for (std::size_t k = 0; k < y.numel(); ++k) y.data[k] = T(1) / (T(1) + std::exp(-x.data[k]));
        break;
      case LayerKind::tanh:
        for (std::size_t k = 0; k < y.numel(); ++k) y.data[k] = std::tanh(x.data[k]);
        break;
      case LayerKind::flatten:
      case LayerKind::reshape:
        y.data = x.data;
        break;
      case LayerKind::embedding: {
        const auto& w = p.at(l.name + ".weight");
        for (std::size_t n = 0; n < B; ++n)
          std::copy_n(w.ptr() + std::size_t(labels[n]) * l.out, l.out, y.ptr() + n * l.out);
        break;
      }
      case LayerKind::concat_label: {
        const std::size_t a = x.stride0(), b = label_plane->stride0();
        for (std::size_t n = 0; n < B; ++n) {
          std::copy_n(x.ptr() + n * a, a, y.ptr() + n * (a + b));
          std::copy_n(label_plane->ptr() + n * b, b, y.ptr() + n * (a + b) + a);
        }
        break;
      }
      case LayerKind::residual_block:
        throw ContractError("residual blocks are not executable");
    }
    return y;
  }

  Tensor<T> step_back(const ParamVector<T>& p, const LayerSpec& l, const Shape& out_shape,
                      const Shape& in_shape, const Tensor<T>& x, const Tensor<T>& y,
                      const std::vector<std::uint32_t>& arg, const Tensor<T>& dy, std::size_t B,
                      const std::vector<int>& labels, ParamVector<T>* grads, Tensor<T>* label_grad,
                      bool want_dx) const {
    Tensor<T> dx;
    if (want_dx && l.kind != LayerKind::embedding) dx = Tensor<T>(x.shape);
    auto dw = [&](const char* suffix) -> T* {
      return grads ? grads->at(l.name + suffix).ptr() : nullptr;
    };
    switch (l.kind) {
      case LayerKind::conv2d: {
        auto g = kernels::ConvGeom::make(in_shape[0], in_shape[1], in_shape[2], l.kernel, l.stride, l.padding);
        kernels::conv_backward(x.ptr(), B, g, p.at(l.name + ".weight").ptr(), l.out, dy.ptr(),
                               dw(".weight"), dw(".bias"), want_dx ? dx.ptr() : nullptr, scratch_);
        break;
      }
      case LayerKind::conv_transpose2d: {
        auto g = kernels::ConvGeom::make(l.out, out_shape[1], out_shape[2], l.kernel, l.stride, l.padding);
        kernels::deconv_backward(x.ptr(), B, l.in, g, p.at(l.name + ".weight").ptr(), dy.ptr(),
                                 dw(".weight"), dw(".bias"), want_dx ? dx.ptr() : nullptr, scratch_);
        break;
      }
      case LayerKind::linear:
        kernels::linear_backward(x.ptr(), B, l.in, l.out, p.at(l.name + ".weight").ptr(), dy.ptr(),
                                 dw(".weight"), dw(".bias"), want_dx ? dx.ptr() : nullptr);
        break;
      case LayerKind::max_pool2:
        if (want_dx)
          for (std::size_t k = 0; k < dy.numel(); ++k) dx.data[arg[k]] += dy.data[k];
        break;
      case LayerKind::avg_pool2:
        if (want_dx) kernels::avg_pool2_backward(dy.ptr(), B * in_shape[0], in_shape[1], in_shape[2], dx.ptr());
        break;
      case LayerKind::relu:
        if (want_dx)
          for (std::size_t k = 0; k < dy.numel(); ++k) dx.data[k] = x.data[k] > T(0) ? dy.data[k] : T(0);
        break;
      case LayerKind::leaky_relu:
        if (want_dx)
          for (std::size_t k = 0; k < dy.numel(); ++k)
            dx.data[k] = x.data[k] > T(0) ? dy.data[k] : T(l.slope) * dy.data[k];
        break;
      case LayerKind::sigmoid:
        if (want_dx)
          for (std::size_t k = 0; k < dy.numel(); ++k) dx.data[k] = dy.data[k] * y.data[k] * (T(1) - y.data[k]);
        break;
      case LayerKind::tanh:
        if (want_dx)
          for (std::size_t k = 0; k < dy.numel(); ++k) dx.data[k] = dy.data[k] * (T(1) - y.data[k] * y.data[k]);
        break;
      case LayerKind::flatten:
      case LayerKind::reshape:
        if (want_dx) dx.data = dy.data;
        break;
      case LayerKind::embedding:
        if (grads) {
          T* w = dw(".weight");
          for (std::size_t n = 0; n < B; ++n)
            for (std::size_t k = 0; k < l.out; ++k) w[std::size_t(labels[n]) * l.out + k] += dy.data[n * l.out + k];
        }
        break;
      case LayerKind::concat_label: {
        const std::size_t a = x.stride0(), b = dy.stride0() - a;
        Shape ls{B};
        Shape plane = out_shape;
        plane[0] -= in_shape[0];
        ls.insert(ls.end(), plane.begin(), plane.end());
        *label_grad = Tensor<T>(ls);
        for (std::size_t n = 0; n < B; ++n) {
          std::copy_n(dy.ptr() + n * (a + b), a, dx.ptr() + n * a);
          std::copy_n(dy.ptr() + n * (a + b) + a, b, label_grad->ptr() + n * b);
        }
        break;
      }
      case LayerKind::residual_block:
        throw ContractError("residual blocks are not executable");
    }
    return dx;
  }

  ArchSpec arch_;
  std::vector<Shape> shapes_;
  std::vector<Shape> label_shapes_;
  mutable std::vector<T> scratch_;
};

}  // namespace ff
