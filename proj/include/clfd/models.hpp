#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clfd/autodiff.hpp"
#include "clfd/kernels.hpp"
#include "clfd/optim.hpp"
#include "clfd/rng.hpp"
#include "clfd/tensor.hpp"

namespace clfd::models {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kEmbeddingDim = 32;
inline constexpr std::size_t kProjectionDim = 64;

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in row-major order so a
// given rng state yields bit-identical tensors.
template <class S>
Tensor<S> uniform_fanin(Rng& rng, const Shape& shape, std::size_t fan_in) {
  check(fan_in > 0, ErrorCategory::internal, "uniform_fanin: fan_in must be > 0");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<S> t(shape);
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

// ---- DeskCNN encoder f: [B,3,64,64] -> [B,32] ----
// conv1 3->16, conv2 16->32, conv3 32->64 (all 3x3, stride 2, pad 1), each
// followed by relu; global average pool; linear 64->32.

template <class S>
void add_desk_cnn_params(ParameterSet<S>& ps, Rng& rng,
                         const std::string& prefix = "encoder.") {
  const std::size_t k = 3;
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    ps.add(prefix + name + ".w",
           uniform_fanin<S>(rng, Shape{cout, cin, k, k}, cin * k * k));
    ps.add(prefix + name + ".b", Tensor<S>::zeros(Shape{cout}));
  };
  conv("conv1", kImageChannels, 16);
  conv("conv2", 16, 32);
  conv("conv3", 32, 64);
  ps.add(prefix + "fc.w", uniform_fanin<S>(rng, Shape{kEmbeddingDim, 64}, 64));
  ps.add(prefix + "fc.b", Tensor<S>::zeros(Shape{kEmbeddingDim}));
}

// ---- Projection head g: [B,32] -> [B,64] ----
// linear 32->32 + relu; linear 32->64.

template <class S>
void add_projection_head_params(ParameterSet<S>& ps, Rng& rng,
                                const std::string& prefix = "head.") {
  ps.add(prefix + "fc1.w",
         uniform_fanin<S>(rng, Shape{kEmbeddingDim, kEmbeddingDim}, kEmbeddingDim));
  ps.add(prefix + "fc1.b", Tensor<S>::zeros(Shape{kEmbeddingDim}));
  ps.add(prefix + "fc2.w",
         uniform_fanin<S>(rng, Shape{kProjectionDim, kEmbeddingDim}, kEmbeddingDim));
  ps.add(prefix + "fc2.b", Tensor<S>::zeros(Shape{kProjectionDim}));
}

// Full contrastive model (encoder + head) from the "init" sub-stream of seed.
template <class S>
ParameterSet<S> init_model_params(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "init");
  ParameterSet<S> ps;
  add_desk_cnn_params(ps, rng);
  add_projection_head_params(ps, rng);
  return ps;
}

// Binds every parameter as a graph input, in parameter-set order.
template <class S>
std::vector<NodeId> bind_params(Graph<S>& g, const ParameterSet<S>& ps,
                                bool requires_grad = true) {
  std::vector<NodeId> ids;
  ids.reserve(ps.size());
  for (const auto& it : ps) ids.push_back(g.input(it.value, requires_grad));
  return ids;
}

template <class S>
NodeId param_node(const ParameterSet<S>& ps, const std::vector<NodeId>& ids,
                  const std::string& name) {
  check(ids.size() == ps.size(), ErrorCategory::internal,
        "param_node: id list does not match parameter set");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name == name) return ids[i];
  fail(ErrorCategory::internal, "param_node: no parameter named '", name, "'");
}

template <class S>
void check_image_batch(const Tensor<S>& images) {
  check(images.rank() == 4 && images.shape[1] == kImageChannels &&
            images.shape[2] == kImageSize && images.shape[3] == kImageSize,
        ErrorCategory::data, "encode: expected images [B,3,64,64], got ",
        shape_str(images.shape));
}

template <class S>
NodeId desk_cnn_forward(Graph<S>& g, const ParameterSet<S>& ps,
                        const std::vector<NodeId>& ids, NodeId images,
                        const std::string& prefix = "encoder.") {
  check_image_batch(g.value(images));
  auto p = [&](const std::string& n) { return param_node(ps, ids, prefix + n); };
  NodeId h = images;
  for (const char* layer : {"conv1", "conv2", "conv3"}) {
    h = g.conv2d(h, p(std::string(layer) + ".w"), p(std::string(layer) + ".b"),
                 /*stride=*/2, /*padding=*/1);
    h = g.relu(h);
  }
  h = g.global_avg_pool(h);
  return g.linear(h, p("fc.w"), p("fc.b"));
}

template <class S>
NodeId projection_head_forward(Graph<S>& g, const ParameterSet<S>& ps,
                               const std::vector<NodeId>& ids, NodeId h,
                               const std::string& prefix = "head.") {
  auto p = [&](const std::string& n) { return param_node(ps, ids, prefix + n); };
  NodeId z = g.linear(h, p("fc1.w"), p("fc1.b"));
  z = g.relu(z);
  return g.linear(z, p("fc2.w"), p("fc2.b"));
}

// ---- no-grad forward paths (evaluation) ----

template <class S>
Tensor<S> desk_cnn_encode(const ParameterSet<S>& ps, const Tensor<S>& images,
                          const std::string& prefix = "encoder.") {
  check_image_batch(images);
  std::vector<S> col;
  Tensor<S> h = images;
  for (const char* layer : {"conv1", "conv2", "conv3"}) {
    const auto& w = ps.at(prefix + std::string(layer) + ".w");
    const auto& b = ps.at(prefix + std::string(layer) + ".b");
    const auto dims = kernels::conv2d_dims(h.shape, w.shape, b.shape, 2, 1);
    h = kernels::conv2d_forward(h, w, b, dims, col);
    h = kernels::relu_forward(h);
  }
  h = kernels::global_avg_pool_forward(h);
  return kernels::linear_forward(h, ps.at(prefix + "fc.w"), ps.at(prefix + "fc.b"));
}

template <class S>
Tensor<S> projection_head_project(const ParameterSet<S>& ps, const Tensor<S>& h,
                                  const std::string& prefix = "head.") {
  Tensor<S> z =
      kernels::linear_forward(h, ps.at(prefix + "fc1.w"), ps.at(prefix + "fc1.b"));
  z = kernels::relu_forward(z);
  return kernels::linear_forward(z, ps.at(prefix + "fc2.w"), ps.at(prefix + "fc2.b"));
}

// ---- generic MLP (stage probe, RL actor/critic) ----

enum class Activation { none, relu, tanh };

struct MlpSpec {
  std::vector<std::size_t> sizes;  // layer widths, e.g. {32, 64, 2}
  Activation hidden = Activation::relu;
  Activation output = Activation::none;
};

template <class S>
void add_mlp_params(ParameterSet<S>& ps, Rng& rng, const MlpSpec& spec,
                    const std::string& prefix) {
  check(spec.sizes.size() >= 2, ErrorCategory::internal,
        "mlp: need at least input and output widths");
  for (std::size_t l = 0; l + 1 < spec.sizes.size(); ++l) {
    const std::size_t in = spec.sizes[l], out = spec.sizes[l + 1];
    const std::string base = prefix + "fc" + std::to_string(l + 1);
    ps.add(base + ".w", uniform_fanin<S>(rng, Shape{out, in}, in));
    ps.add(base + ".b", Tensor<S>::zeros(Shape{out}));
  }
}

template <class S>
NodeId mlp_forward(Graph<S>& g, const ParameterSet<S>& ps,
                   const std::vector<NodeId>& ids, const MlpSpec& spec,
                   NodeId x, const std::string& prefix) {
  NodeId h = x;
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + "fc" + std::to_string(l + 1);
    h = g.linear(h, param_node(ps, ids, base + ".w"),
                 param_node(ps, ids, base + ".b"));
    const Activation act = (l + 1 < layers) ? spec.hidden : spec.output;
    if (act == Activation::relu) h = g.relu(h);
    else if (act == Activation::tanh) h = g.tanh_(h);
  }
  return h;
}

template <class S>
Tensor<S> mlp_apply(const ParameterSet<S>& ps, const MlpSpec& spec,
                    const Tensor<S>& x, const std::string& prefix) {
  Tensor<S> h = x;
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + "fc" + std::to_string(l + 1);
    h = kernels::linear_forward(h, ps.at(base + ".w"), ps.at(base + ".b"));
    const Activation act = (l + 1 < layers) ? spec.hidden : spec.output;
    if (act == Activation::relu) h = kernels::relu_forward(h);
    else if (act == Activation::tanh) h = kernels::tanh_forward(h);
  }
  return h;
}

}  // namespace clfd::models
