#include <cmath>

#include "domprompt/nn.hpp"
#include "domprompt/ops.hpp"
#include "domprompt/rng.hpp"

namespace domprompt {

ParamStore::ParamStore(std::uint64_t seed, Precision precision)
    : seed_(seed), precision_(precision) {}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  t.set_requires_grad(true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  return uniform_range(name, std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor ParamStore::uniform_range(const std::string& name, Shape shape, double bound) {
  Rng rng(mix_seed(seed_, fnv1a(name)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(name, Tensor::from_values(std::move(shape), v, precision_));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, precision_));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::numel(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
  }
  return n;
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in,
                      std::size_t out) {
  return {store.uniform(name + ".weight", {in, out}, in), store.constant(name + ".bias", {out}, 0.0)};
}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t dim) {
  return {store.constant(name + ".gamma", {dim}, 1.0), store.constant(name + ".beta", {dim}, 0.0)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

AttentionParams AttentionParams::create(ParamStore& store, const std::string& name,
                                        std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("attention: dim " + std::to_string(dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  p.norm = LayerNorm::create(store, name + ".norm", dim);
  p.q = Linear::create(store, name + ".q", dim, dim);
  p.k = Linear::create(store, name + ".k", dim, dim);
  p.v = Linear::create(store, name + ".v", dim, dim);
  p.o = Linear::create(store, name + ".o", dim, dim);
  return p;
}

FeedForwardParams FeedForwardParams::create(ParamStore& store, const std::string& name,
                                            std::size_t dim, std::size_t hidden_mult) {
  if (hidden_mult == 0) throw std::invalid_argument("feedforward: hidden_mult must be >= 1");
  return {LayerNorm::create(store, name + ".norm", dim),
          Linear::create(store, name + ".up", dim, dim * hidden_mult),
          Linear::create(store, name + ".down", dim * hidden_mult, dim)};
}

ConvStageParams ConvStageParams::create(ParamStore& store, const std::string& name,
                                        std::size_t in, std::size_t out, bool prompt_channel) {
  ConvStageParams p;
  p.in_channels = in;
  p.out_channels = out;
  p.conv1_w = store.uniform(name + ".conv1.weight", {out, in, 3, 3}, in * 9);
  p.conv1_b = store.constant(name + ".conv1.bias", {out}, 0.0);
  p.conv2_w = store.uniform(name + ".conv2.weight", {out, out, 3, 3}, out * 9);
  p.conv2_b = store.constant(name + ".conv2.bias", {out}, 0.0);
  p.skip_w = store.uniform(name + ".skip.weight", {out, in, 1, 1}, in);
  p.skip_b = store.constant(name + ".skip.bias", {out}, 0.0);
  if (prompt_channel) {
    p.conv1_prompt_w = store.uniform(name + ".conv1.prompt_weight", {out, 1, 3, 3}, in * 9);
    p.skip_prompt_w = store.uniform(name + ".skip.prompt_weight", {out, 1, 1, 1}, in);
  }
  return p;
}

}  // namespace domprompt
