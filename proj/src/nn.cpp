#include "pcdepth/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcdepth::nn {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Var ParamStore::create(const std::string& name, ag::Shape shape, std::vector<double> init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::logic_error("duplicate parameter name: " + name);
  }
  for (auto& v : init) v = round_f32(v);
  Var var = Var::parameter(std::move(shape), std::move(init));
  entries_.push_back({name, var});
  return var;
}

Var ParamStore::uniform(const std::string& name, ag::Shape shape, double bound, Rng& rng) {
  std::vector<double> init(ag::numel(shape));
  for (auto& v : init) v = rng.uniform(-bound, bound);
  return create(name, std::move(shape), std::move(init));
}

Var ParamStore::filled(const std::string& name, ag::Shape shape, double value) {
  const auto n = ag::numel(shape);
  return create(name, std::move(shape), std::vector<double>(n, value));
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

void ParamStore::round_to_float32() {
  for (auto& e : entries_) {
    for (auto& v : e.var.mutable_value()) v = round_f32(v);
  }
}

int default_groups(int channels) {
  int groups = std::max(1, channels / 8);
  while (channels % groups != 0) --groups;
  return groups;
}

Var Linear::operator()(const Var& x) const { return ag::add_row_bias(ag::matmul(x, weight), bias); }

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.uniform(name + ".weight", {in, out}, bound, rng);
  l.bias = store.uniform(name + ".bias", {out}, bound, rng);
  return l;
}

Conv2d make_conv(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
                 Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  Conv2d c;
  c.weight = store.uniform(name + ".weight", {out, in, kernel, kernel}, bound, rng);
  c.bias = store.uniform(name + ".bias", {out}, bound, rng);
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

GroupNorm make_group_norm(ParamStore& store, const std::string& name, int channels) {
  GroupNorm g;
  g.gamma = store.filled(name + ".gamma", {channels}, 1.0);
  g.beta = store.filled(name + ".beta", {channels}, 0.0);
  g.groups = default_groups(channels);
  return g;
}

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int dim) {
  LayerNorm l;
  l.gamma = store.filled(name + ".gamma", {dim}, 1.0);
  l.beta = store.filled(name + ".beta", {dim}, 0.0);
  return l;
}

Mlp make_mlp(ParamStore& store, const std::string& name, int in, int hidden, int out, Rng& rng) {
  Mlp m;
  m.fc1 = make_linear(store, name + ".fc1", in, hidden, rng);
  m.fc2 = make_linear(store, name + ".fc2", hidden, out, rng);
  return m;
}

}  // namespace pcdepth::nn
