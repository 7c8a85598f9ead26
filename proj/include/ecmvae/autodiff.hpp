#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecmvae/tensor.hpp"

namespace ecmvae {

// Raised when a non-finite value shows up in a computation (or a contract
// like "loss must be scalar" is broken at runtime).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Handle to a tape node. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Eager reverse-mode tape. Each op computes its value immediately and
// records a closure that scatters the output gradient into its inputs.
// Tapes are single-threaded and short-lived (one per loss evaluation).
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Var input(Tensor value);  // constant leaf, no gradient tracked
  Var param(Tensor value);  // differentiable leaf

  const Tensor& val(Var v) const { return nodes_[size_t(v.id)].value; }
  double scalar(Var v) const;
  // gradient of the last backward() w.r.t. node v; zeros if v was not reached
  Tensor grad_of(Var v) const;
  bool requires_grad(Var v) const { return nodes_[size_t(v.id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  // elementwise (same shape)
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  // scalar broadcast
  Var add_scalar(Var a, double s);
  Var mul_scalar(Var a, double s);
  // unary elementwise
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var leaky_relu(Var a, double slope);
  Var clamp(Var a, double lo, double hi);

  Var matmul(Var a, Var b);     // (m,k) x (k,n) -> (m,n)
  Var transpose(Var a);         // 2-d
  Var add_rowwise(Var x, Var b);  // (n,m) + (m,) broadcast over rows

  Var sum(Var a);   // -> shape (1)
  Var mean(Var a);  // -> shape (1)

  Var concat(const std::vector<Var>& parts, int axis);
  Var slice(Var a, int axis, int64_t start, int64_t len);
  Var reshape(Var a, std::vector<int64_t> shape);

  Var tile_hw(Var a, int h, int w);  // (n,c) -> (n,c,h,w), value repeated
  Var upsample2x(Var a);             // nearest neighbour, (n,c,h,w) -> (n,c,2h,2w)
  Var avg_pool(Var a, int k);        // (n,c,h,w) -> (n,c,h/k,w/k)
  Var conv2d(Var x, Var w, Var b, int stride, int pad);  // x:(n,ci,h,w) w:(co,ci,kh,kw) b:(co)

  // Runs reverse sweep from a scalar loss; gradients retrievable via grad_of.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Tape&, const Tensor&)> back;  // may be empty for leaves
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> back,
           const char* op);
  Tensor& grad_buf(int id);  // zero-initialized on first touch
  void check_owned(Var v, const char* op) const;

  template <class Fwd, class Bwd>
  Var unary_ew(Var a, const char* op, Fwd f, Bwd dfdx);

  std::vector<Node> nodes_;
  bool check_finite_;
};

}  // namespace ecmvae
