#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. Images are [C, H, W], token sets are [N, C].

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcdepth::ag {

using Real = double;
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<Real> value);
  static Var constant(Shape shape, Real fill);
  static Var parameter(Shape shape, std::vector<Real> value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<Real>& value() const { return node_->value; }
  std::vector<Real>& mutable_value() { return node_->value; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient buffer; zero-filled if nothing has been accumulated yet.
  const std::vector<Real>& grad() const;
  void zero_grad();

  // Seeds d(this)/d(this) = 1 (must be a scalar) and propagates to every
  // ancestor that requires gradients.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise ---------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var add_scalar(const Var& a, Real s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
// 1 - a
Var one_minus(const Var& a);

// ---- reductions ----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);

// ---- shape ---------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);                  // [m, n] -> [n, m]
Var concat(const std::vector<Var>& parts);    // along dim 0
Var slice_cols(const Var& a, int start, int count);
Var concat_cols(const std::vector<Var>& parts);
Var expand_cols(const Var& a, int cols);      // [m, 1] -> [m, cols]
Var image_to_rows(const Var& a);              // [C, H, W] -> [H*W, C]
Var rows_to_image(const Var& a, int h, int w);  // [H*W, C] -> [C, H, W]

// ---- linear algebra ------------------------------------------------------
Var matmul(const Var& a, const Var& b);       // [m, k] x [k, n]
Var matmul_nt(const Var& a, const Var& b);    // [m, k] x [n, k]^T
Var add_row_bias(const Var& a, const Var& bias);  // [m, n] + [n]
Var softmax_rows(const Var& a);
Var softmax_cols(const Var& a);
Var normalize_rows(const Var& a);             // each row divided by its sum
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, Real eps = 1e-5);

// ---- image ops -----------------------------------------------------------
// x: [Cin, H, W], w: [Cout, Cin, k, k], b: [Cout] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, Real eps = 1e-5);
Var pixel_unshuffle(const Var& x, int factor);
Var pixel_shuffle(const Var& x, int factor);
// Bilinear, half-pixel centres, edge clamped.
Var upsample_bilinear(const Var& x, int factor);
// coarse: [D, h, w]; mask: [9 * f * f, h, w] logits, softmaxed over the 9
// neighbours of each fine position. Borders replicate the edge value.
Var convex_upsample(const Var& coarse, const Var& mask, int factor);

// Softmaxed convex-upsampling weights laid out as [9, f*f, h, w]. Exposed for
// inspection; convex_upsample computes the same values internally.
std::vector<Real> convex_upsample_weights(std::span<const Real> mask, int h, int w, int factor);

// Custom scalar op: value and gradient supplied by the caller.
Var custom_scalar(const Var& input, Real value, std::vector<Real> grad_wrt_input);

}  // namespace pcdepth::ag
