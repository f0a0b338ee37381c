#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/tensor.hpp"

namespace ff {

enum class LayerKind {
  conv2d,
  conv_transpose2d,
  linear,
  max_pool2,
  avg_pool2,
  relu,
  leaky_relu,
  sigmoid,
  tanh,
  flatten,
  reshape,
  embedding,
  concat_label,    // appends the label branch output along the channel axis
  residual_block,  // descriptive only; not executable
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::linear: return "linear";
    case LayerKind::max_pool2: return "max_pool2";
    case LayerKind::avg_pool2: return "avg_pool2";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::tanh: return "tanh";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
    case LayerKind::embedding: return "embedding";
    case LayerKind::concat_label: return "concat_label";
    case LayerKind::residual_block: return "residual_block";
  }
  return "?";
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // channels / features / embedding rows
  std::size_t out = 0;  // filters / features / embedding width
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  float slope = 0.2f;   // leaky_relu
  Shape reshape_to;     // per-sample shape for reshape

  bool has_params() const {
    return kind == LayerKind::conv2d || kind == LayerKind::conv_transpose2d ||
           kind == LayerKind::linear || kind == LayerKind::embedding;
  }
};

enum class ArchRole { classifier, generator, discriminator };

// Architecture description. For conditional generators the per-sample input
// is the noise vector and `label_branch` maps a class index to the planes
// that `concat_label` splices into the main chain.
struct ArchSpec {
  std::string id;
  ArchRole role = ArchRole::classifier;
  Shape input;  // per-sample
  std::size_t output_dim = 0;
  std::size_t class_count = 0;
  std::vector<LayerSpec> layers;
  std::vector<LayerSpec> label_branch;
  std::vector<std::string> tap_layers;
  bool executable = true;

  bool conditional() const { return !label_branch.empty(); }
  std::string default_tap() const { return tap_layers.empty() ? "" : tap_layers.back(); }
};

namespace layers {
inline LayerSpec make(std::string n, LayerKind kind, std::size_t in = 0, std::size_t out = 0,
                      std::size_t k = 0, std::size_t stride = 1, std::size_t pad = 0) {
  LayerSpec s;
  s.name = std::move(n);
  s.kind = kind;
  s.in = in;
  s.out = out;
  s.kernel = k;
  s.stride = stride;
  s.padding = pad;
  return s;
}
inline LayerSpec conv(std::string n, std::size_t in, std::size_t out, std::size_t k,
                      std::size_t stride = 1, std::size_t pad = 0) {
  return make(std::move(n), LayerKind::conv2d, in, out, k, stride, pad);
}
inline LayerSpec deconv(std::string n, std::size_t in, std::size_t out, std::size_t k,
                        std::size_t stride, std::size_t pad) {
  return make(std::move(n), LayerKind::conv_transpose2d, in, out, k, stride, pad);
}
inline LayerSpec linear(std::string n, std::size_t in, std::size_t out) {
  return make(std::move(n), LayerKind::linear, in, out);
}
inline LayerSpec simple(std::string n, LayerKind k) { return make(std::move(n), k); }
inline LayerSpec leaky(std::string n, float slope = 0.2f) {
  auto s = make(std::move(n), LayerKind::leaky_relu);
  s.slope = slope;
  return s;
}
inline LayerSpec reshape(std::string n, Shape to) {
  auto s = make(std::move(n), LayerKind::reshape);
  s.reshape_to = std::move(to);
  return s;
}
inline LayerSpec embedding(std::string n, std::size_t rows, std::size_t width) {
  return make(std::move(n), LayerKind::embedding, rows, width);
}
inline LayerSpec residual(std::string n, std::size_t in, std::size_t out, std::size_t stride) {
  return make(std::move(n), LayerKind::residual_block, in, out, 3, stride, 1);
}
}  // namespace layers

namespace archs {

using namespace layers;

// 2 conv + 2 max-pool + 2 fully connected.
inline ArchSpec lenet5_mnist() {
  ArchSpec a;
  a.id = "lenet5_mnist";
  a.input = {1, 28, 28};
  a.output_dim = a.class_count = 10;
  a.layers = {conv("conv1", 1, 6, 5),       simple("conv1_act", LayerKind::relu),
              simple("pool1", LayerKind::max_pool2),
              conv("conv2", 6, 16, 5),      simple("conv2_act", LayerKind::relu),
              simple("pool2", LayerKind::max_pool2),
              simple("flatten", LayerKind::flatten),
              linear("fc1", 256, 120),      simple("fc1_act", LayerKind::relu),
              linear("fc2", 120, 10)};
  a.tap_layers = {"conv1_act", "conv2_act"};
  return a;
}

// 1 conv + 1 max-pool + 2 fully connected, 64x64 faces, 40 identities.
inline ArchSpec lenet5_att() {
  ArchSpec a;
  a.id = "lenet5_att";
  a.input = {1, 64, 64};
  a.output_dim = a.class_count = 40;
  a.layers = {conv("conv1", 1, 16, 5),      simple("conv1_act", LayerKind::relu),
              simple("pool1", LayerKind::max_pool2),
              simple("flatten", LayerKind::flatten),
              linear("fc1", 16 * 30 * 30, 128), simple("fc1_act", LayerKind::relu),
              linear("fc2", 128, 40)};
  a.tap_layers = {"conv1_act"};
  return a;
}

// Desk-scale classifier for the 8x8 synthetic fixture.
inline ArchSpec synthetic_cnn() {
  ArchSpec a;
  a.id = "synthetic_cnn";
  a.input = {1, 8, 8};
  a.output_dim = a.class_count = 2;
  a.layers = {conv("conv1", 1, 4, 3),       simple("conv1_act", LayerKind::relu),
              simple("pool1", LayerKind::max_pool2),
              simple("flatten", LayerKind::flatten),
              linear("fc1", 36, 16),        simple("fc1_act", LayerKind::relu),
              linear("fc2", 16, 2)};
  a.tap_layers = {"conv1_act"};
  return a;
}

// Conditional generator: label -> 50-d embedding -> 49 -> ReLU -> 1x7x7 plane,
// noise(100) -> 6272 -> LeakyReLU -> 128x7x7; concatenated and upsampled
// 7 -> 14 -> 28 by two 128-filter transposed convolutions, then a 3x3
// single-channel convolution and a sigmoid.
inline ArchSpec mnist_generator() {
  ArchSpec a;
  a.id = "mnist_generator";
  a.role = ArchRole::generator;
  a.input = {100};
  a.output_dim = 28 * 28;
  a.class_count = 10;
  a.label_branch = {embedding("label_embed", 10, 50), linear("label_fc", 50, 49),
                    simple("label_act", LayerKind::relu), reshape("label_plane", {1, 7, 7})};
  a.layers = {linear("noise_fc", 100, 128 * 7 * 7), leaky("noise_act"),
              reshape("noise_plane", {128, 7, 7}),
              simple("concat", LayerKind::concat_label),
              deconv("up1", 129, 128, 4, 2, 1), leaky("up1_act"),
              deconv("up2", 128, 128, 4, 2, 1), leaky("up2_act"),
              conv("out_conv", 128, 1, 3, 1, 1), simple("out_act", LayerKind::sigmoid)};
  return a;
}

inline ArchSpec mnist_discriminator() {
  ArchSpec a;
  a.id = "mnist_discriminator";
  a.role = ArchRole::discriminator;
  a.input = {1, 28, 28};
  a.output_dim = 1;
  a.layers = {conv("conv1", 1, 32, 5, 1, 2),  leaky("conv1_act"),
              simple("pool1", LayerKind::avg_pool2),
              conv("conv2", 32, 64, 5, 1, 2), leaky("conv2_act"),
              simple("pool2", LayerKind::avg_pool2),
              simple("flatten", LayerKind::flatten),
              linear("fc1", 3136, 1024),      leaky("fc1_act"),
              linear("fc2", 1024, 1),         simple("out_act", LayerKind::sigmoid)};
  return a;
}

// Scaled-down analogue of the MNIST pair for the synthetic fixture.
inline ArchSpec synthetic_generator() {
  ArchSpec a;
  a.id = "synthetic_generator";
  a.role = ArchRole::generator;
  a.input = {16};
  a.output_dim = 64;
  a.class_count = 2;
  a.label_branch = {embedding("label_embed", 2, 8), linear("label_fc", 8, 16),
                    simple("label_act", LayerKind::relu), reshape("label_plane", {1, 4, 4})};
  a.layers = {linear("noise_fc", 16, 8 * 4 * 4), leaky("noise_act"),
              reshape("noise_plane", {8, 4, 4}),
              simple("concat", LayerKind::concat_label),
              deconv("up1", 9, 16, 4, 2, 1), leaky("up1_act"),
              conv("out_conv", 16, 1, 3, 1, 1), simple("out_act", LayerKind::sigmoid)};
  return a;
}

inline ArchSpec synthetic_discriminator() {
  ArchSpec a;
  a.id = "synthetic_discriminator";
  a.role = ArchRole::discriminator;
  a.input = {1, 8, 8};
  a.output_dim = 1;
  a.layers = {conv("conv1", 1, 8, 3, 1, 1), leaky("conv1_act"),
              simple("pool1", LayerKind::avg_pool2),
              simple("flatten", LayerKind::flatten),
              linear("fc1", 128, 32),       leaky("fc1_act"),
              linear("fc2", 32, 1),         simple("out_act", LayerKind::sigmoid)};
  return a;
}

// CIFAR ResNets, described but not executable by this library.
inline ArchSpec resnet_cifar(std::size_t depth, std::size_t classes) {
  ArchSpec a;
  a.id = "resnet" + std::to_string(depth);
  a.input = {3, 32, 32};
  a.output_dim = a.class_count = classes;
  a.executable = false;
  const std::size_t n = (depth - 2) / 6;
  a.layers.push_back(conv("stem", 3, 16, 3, 1, 1));
  std::size_t width = 16;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t out = 16u << stage;
    for (std::size_t b = 0; b < n; ++b) {
      a.layers.push_back(residual("stage" + std::to_string(stage + 1) + "_block" +
                                      std::to_string(b + 1),
                                  width, out, (stage > 0 && b == 0) ? 2 : 1));
      width = out;
    }
  }
  a.layers.push_back(linear("fc", 64, classes));
  return a;
}

}  // namespace archs

inline const std::map<std::string, ArchSpec>& arch_registry() {
  static const std::map<std::string, ArchSpec> reg = [] {
    std::map<std::string, ArchSpec> m;
    for (auto a : {archs::lenet5_mnist(), archs::lenet5_att(), archs::synthetic_cnn(),
                   archs::mnist_generator(), archs::mnist_discriminator(),
                   archs::synthetic_generator(), archs::synthetic_discriminator(),
                   archs::resnet_cifar(32, 10), archs::resnet_cifar(56, 100)})
      m.emplace(a.id, a);
    return m;
  }();
  return reg;
}

inline const ArchSpec& find_arch(const std::string& id) {
  auto it = arch_registry().find(id);
  FF_EXPECT(it != arch_registry().end(), ConfigError, "unknown architecture '" + id + "'");
  return it->second;
}

}  // namespace ff
