#pragma once

#include "pcdepth/autograd.hpp"
#include "pcdepth/rng.hpp"

#include <string>
#include <vector>

namespace pcdepth::nn {

using ag::Var;

// Named, ordered parameter registry. Values are kept float32-representable so
// that checkpoints (float32 on disk) reload bit-exactly.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
  };

  Var create(const std::string& name, ag::Shape shape, std::vector<double> init);
  Var uniform(const std::string& name, ag::Shape shape, double bound, Rng& rng);
  Var filled(const std::string& name, ag::Shape shape, double value);

  const std::vector<Entry>& entries() const { return entries_; }
  Var find(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();
  // Rounds every value to the nearest float32.
  void round_to_float32();

 private:
  std::vector<Entry> entries_;
};

double round_f32(double v);

// Groups for GroupNorm: at most 8 channels per group.
int default_groups(int channels);

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out]

  Var operator()(const Var& x) const;
};

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng);

struct Conv2d {
  Var weight;  // [out, in, k, k]
  Var bias;
  int stride = 1;
  int pad = 0;

  Var operator()(const Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

Conv2d make_conv(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
                 Rng& rng);

struct GroupNorm {
  Var gamma, beta;
  int groups = 1;

  Var operator()(const Var& x) const { return ag::group_norm(x, groups, gamma, beta); }
};

GroupNorm make_group_norm(ParamStore& store, const std::string& name, int channels);

struct LayerNorm {
  Var gamma, beta;

  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta); }
};

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int dim);

// Two-layer GELU perceptron on row vectors.
struct Mlp {
  Linear fc1, fc2;

  Var operator()(const Var& x) const { return fc2(ag::gelu(fc1(x))); }
};

Mlp make_mlp(ParamStore& store, const std::string& name, int in, int hidden, int out, Rng& rng);

}  // namespace pcdepth::nn
