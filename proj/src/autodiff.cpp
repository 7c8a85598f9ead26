#include "ecmvae/autodiff.hpp"

#include <cmath>
#include <cstring>

namespace ecmvae {

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> back,
               const char* op) {
  if (check_finite_ && !value.all_finite())
    throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, int(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[size_t(id)];
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape != this || v.id < 0 || v.id >= int(nodes_.size()))
    throw std::invalid_argument(std::string(op) + ": Var does not belong to this tape");
}

double Tape::scalar(Var v) const {
  const Tensor& t = val(v);
  if (t.numel() != 1) throw NumericalError("expected scalar, got shape " + shape_str(t.shape));
  return t.data[0];
}

Tensor Tape::grad_of(Var v) const {
  const Node& n = nodes_[size_t(v.id)];
  if (n.grad.defined()) return n.grad;
  return Tensor(n.value.shape, 0.0);
}

Var Tape::input(Tensor value) { return push(std::move(value), false, nullptr, "input"); }

Var Tape::param(Tensor value) { return push(std::move(value), true, nullptr, "param"); }

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "add");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
  int ia = a.id, ib = b.id;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [ia, ib](Tape& t, const Tensor& g) {
                if (t.nodes_[size_t(ia)].requires_grad) t.grad_buf(ia).add_scaled(g, 1.0);
                if (t.nodes_[size_t(ib)].requires_grad) t.grad_buf(ib).add_scaled(g, 1.0);
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "sub");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] - tb[i];
  int ia = a.id, ib = b.id;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [ia, ib](Tape& t, const Tensor& g) {
                if (t.nodes_[size_t(ia)].requires_grad) t.grad_buf(ia).add_scaled(g, 1.0);
                if (t.nodes_[size_t(ib)].requires_grad) t.grad_buf(ib).add_scaled(g, -1.0);
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "mul");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
  int ia = a.id, ib = b.id;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [ia, ib](Tape& t, const Tensor& g) {
                const Tensor& va = t.nodes_[size_t(ia)].value;
                const Tensor& vb = t.nodes_[size_t(ib)].value;
                if (t.nodes_[size_t(ia)].requires_grad) {
                  Tensor& ga = t.grad_buf(ia);
                  for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
                }
                if (t.nodes_[size_t(ib)].requires_grad) {
                  Tensor& gb = t.grad_buf(ib);
                  for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
                }
              },
              "mul");
}

Var Tape::div(Var a, Var b) {
  check_owned(a, "div");
  check_owned(b, "div");
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "div");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] / tb[i];
  int ia = a.id, ib = b.id;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [ia, ib](Tape& t, const Tensor& g) {
                const Tensor& va = t.nodes_[size_t(ia)].value;
                const Tensor& vb = t.nodes_[size_t(ib)].value;
                if (t.nodes_[size_t(ia)].requires_grad) {
                  Tensor& ga = t.grad_buf(ia);
                  for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb[i];
                }
                if (t.nodes_[size_t(ib)].requires_grad) {
                  Tensor& gb = t.grad_buf(ib);
                  for (int64_t i = 0; i < g.numel(); ++i)
                    gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
              },
              "div");
}

Var Tape::add_scalar(Var a, double s) {
  check_owned(a, "add_scalar");
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + s;
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia](Tape& t, const Tensor& g) {
                if (t.nodes_[size_t(ia)].requires_grad) t.grad_buf(ia).add_scaled(g, 1.0);
              },
              "add_scalar");
}

Var Tape::mul_scalar(Var a, double s) {
  check_owned(a, "mul_scalar");
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * s;
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, s](Tape& t, const Tensor& g) {
                if (t.nodes_[size_t(ia)].requires_grad) t.grad_buf(ia).add_scaled(g, s);
              },
              "mul_scalar");
}

template <class Fwd, class Bwd>
Var Tape::unary_ew(Var a, const char* op, Fwd f, Bwd dfdx) {
  check_owned(a, op);
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = f(ta[i]);
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, dfdx](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                const Tensor& x = t.nodes_[size_t(ia)].value;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * dfdx(x[i]);
              },
              op);
}

Var Tape::exp(Var a) {
  return unary_ew(a, "exp", [](double x) { return std::exp(x); },
                  [](double x) { return std::exp(x); });
}

Var Tape::log(Var a) {
  return unary_ew(a, "log", [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Var Tape::tanh(Var a) {
  return unary_ew(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double x) {
                    double t = std::tanh(x);
                    return 1.0 - t * t;
                  });
}

static double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Var Tape::sigmoid(Var a) {
  return unary_ew(a, "sigmoid", sigmoid_scalar, [](double x) {
    double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

// stable softplus: max(x,0) + log1p(exp(-|x|))
Var Tape::softplus(Var a) {
  return unary_ew(a, "softplus",
                  [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                  sigmoid_scalar);
}

Var Tape::square(Var a) {
  return unary_ew(a, "square", [](double x) { return x * x; },
                  [](double x) { return 2.0 * x; });
}

Var Tape::leaky_relu(Var a, double slope) {
  return unary_ew(a, "leaky_relu", [slope](double x) { return x >= 0 ? x : slope * x; },
                  [slope](double x) { return x >= 0 ? 1.0 : slope; });
}

Var Tape::clamp(Var a, double lo, double hi) {
  return unary_ew(a, "clamp",
                  [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                  [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ------------------------------------------------------------------- matrix

Var Tape::matmul(Var a, Var b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[0])
    throw std::invalid_argument("matmul: bad shapes " + shape_str(ta.shape) + " x " +
                                shape_str(tb.shape));
  const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = &ta.data[size_t(i * k)];
    double* orow = &out.data[size_t(i * n)];
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = &tb.data[size_t(p * n)];
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  int ia = a.id, ib = b.id;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [ia, ib, m, k, n](Tape& t, const Tensor& g) {
                const Tensor& va = t.nodes_[size_t(ia)].value;
                const Tensor& vb = t.nodes_[size_t(ib)].value;
                if (t.nodes_[size_t(ia)].requires_grad) {
                  // dA = g . B^T
                  Tensor& ga = t.grad_buf(ia);
                  for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                      const double gv = g.data[size_t(i * n + j)];
                      if (gv == 0.0) continue;
                      double* garow = &ga.data[size_t(i * k)];
                      for (int64_t p = 0; p < k; ++p) garow[p] += gv * vb.data[size_t(p * n + j)];
                    }
                }
                if (t.nodes_[size_t(ib)].requires_grad) {
                  // dB = A^T . g
                  Tensor& gb = t.grad_buf(ib);
                  for (int64_t i = 0; i < m; ++i) {
                    const double* arow = &va.data[size_t(i * k)];
                    const double* grow = &g.data[size_t(i * n)];
                    for (int64_t p = 0; p < k; ++p) {
                      const double av = arow[p];
                      if (av == 0.0) continue;
                      double* gbrow = &gb.data[size_t(p * n)];
                      for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                  }
                }
              },
              "matmul");
}

Var Tape::transpose(Var a) {
  check_owned(a, "transpose");
  const Tensor& ta = val(a);
  if (ta.ndim() != 2) throw std::invalid_argument("transpose: need 2-d tensor");
  const int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.data[size_t(j * m + i)] = ta.data[size_t(i * n + j)];
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, m, n](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < m; ++i)
                  for (int64_t j = 0; j < n; ++j) ga.data[size_t(i * n + j)] += g.data[size_t(j * m + i)];
              },
              "transpose");
}

Var Tape::add_rowwise(Var x, Var b) {
  check_owned(x, "add_rowwise");
  check_owned(b, "add_rowwise");
  const Tensor& tx = val(x);
  const Tensor& tb = val(b);
  if (tx.ndim() != 2 || tb.ndim() != 1 || tx.shape[1] != tb.shape[0])
    throw std::invalid_argument("add_rowwise: bad shapes " + shape_str(tx.shape) + " + " +
                                shape_str(tb.shape));
  const int64_t n = tx.shape[0], m = tx.shape[1];
  Tensor out(tx.shape);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out.data[size_t(i * m + j)] = tx.data[size_t(i * m + j)] + tb[j];
  int ix = x.id, ib = b.id;
  return push(std::move(out), requires_grad(x) || requires_grad(b),
              [ix, ib, n, m](Tape& t, const Tensor& g) {
                if (t.nodes_[size_t(ix)].requires_grad) t.grad_buf(ix).add_scaled(g, 1.0);
                if (t.nodes_[size_t(ib)].requires_grad) {
                  Tensor& gb = t.grad_buf(ib);
                  for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) gb[j] += g.data[size_t(i * m + j)];
                }
              },
              "add_rowwise");
}

// --------------------------------------------------------------- reductions

// Neumaier-compensated sum; keeps the finite-difference noise floor of the
// big pixel reductions near one ulp
static double compensated_sum(const std::vector<double>& xs) {
  double s = 0.0, c = 0.0;
  for (double x : xs) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

Var Tape::sum(Var a) {
  check_owned(a, "sum");
  const Tensor& ta = val(a);
  double acc = compensated_sum(ta.data);
  int ia = a.id;
  return push(Tensor::scalar(acc), requires_grad(a),
              [ia](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (auto& v : ga.data) v += g.data[0];
              },
              "sum");
}

Var Tape::mean(Var a) {
  check_owned(a, "mean");
  const Tensor& ta = val(a);
  double acc = compensated_sum(ta.data);
  const double inv = 1.0 / double(ta.numel());
  int ia = a.id;
  return push(Tensor::scalar(acc * inv), requires_grad(a),
              [ia, inv](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (auto& v : ga.data) v += g.data[0] * inv;
              },
              "mean");
}

// ------------------------------------------------------------ shape/layout

// helper: sizes for concat/slice along an axis: outer blocks, axis extent, inner stride
static void axis_extents(const std::vector<int64_t>& shape, int axis, int64_t& outer,
                         int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[size_t(i)];
  for (size_t i = size_t(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

Var Tape::concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) check_owned(p, "concat");
  const Tensor& t0 = val(parts[0]);
  if (axis < 0 || axis >= t0.ndim()) throw std::invalid_argument("concat: bad axis");
  std::vector<int64_t> oshape = t0.shape;
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    const Tensor& tp = val(p);
    if (tp.ndim() != t0.ndim()) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < t0.ndim(); ++d)
      if (d != axis && tp.shape[size_t(d)] != t0.shape[size_t(d)])
        throw std::invalid_argument("concat: shape mismatch on non-concat axis");
    total_axis += tp.shape[size_t(axis)];
  }
  oshape[size_t(axis)] = total_axis;
  int64_t outer, inner;
  axis_extents(oshape, axis, outer, inner);
  Tensor out(oshape);
  std::vector<int> ids;
  std::vector<int64_t> extents;
  bool rg = false;
  for (const auto& p : parts) {
    ids.push_back(p.id);
    extents.push_back(val(p).shape[size_t(axis)]);
    rg = rg || requires_grad(p);
  }
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& tp = val(parts[pi]);
    const int64_t e = extents[pi];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(&out.data[size_t((o * total_axis + off) * inner)],
                  &tp.data[size_t(o * e * inner)], size_t(e * inner) * sizeof(double));
    off += e;
  }
  return push(std::move(out), rg,
              [ids, extents, outer, inner, total_axis](Tape& t, const Tensor& g) {
                int64_t off = 0;
                for (size_t pi = 0; pi < ids.size(); ++pi) {
                  const int64_t e = extents[pi];
                  if (t.nodes_[size_t(ids[pi])].requires_grad) {
                    Tensor& gp = t.grad_buf(ids[pi]);
                    for (int64_t o = 0; o < outer; ++o) {
                      const double* src = &g.data[size_t((o * total_axis + off) * inner)];
                      double* dst = &gp.data[size_t(o * e * inner)];
                      for (int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                    }
                  }
                  off += e;
                }
              },
              "concat");
}

Var Tape::slice(Var a, int axis, int64_t start, int64_t len) {
  check_owned(a, "slice");
  const Tensor& ta = val(a);
  if (axis < 0 || axis >= ta.ndim()) throw std::invalid_argument("slice: bad axis");
  const int64_t extent = ta.shape[size_t(axis)];
  if (start < 0 || len <= 0 || start + len > extent)
    throw std::invalid_argument("slice: out of range");
  std::vector<int64_t> oshape = ta.shape;
  oshape[size_t(axis)] = len;
  int64_t outer, inner;
  axis_extents(ta.shape, axis, outer, inner);
  Tensor out(oshape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(&out.data[size_t(o * len * inner)],
                &ta.data[size_t((o * extent + start) * inner)], size_t(len * inner) * sizeof(double));
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, outer, inner, extent, start, len](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t o = 0; o < outer; ++o) {
                  const double* src = &g.data[size_t(o * len * inner)];
                  double* dst = &ga.data[size_t((o * extent + start) * inner)];
                  for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
              },
              "slice");
}

Var Tape::reshape(Var a, std::vector<int64_t> shape) {
  check_owned(a, "reshape");
  const Tensor& ta = val(a);
  if (shape_numel(shape) != ta.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(ta.shape) + " -> " +
                                shape_str(shape));
  Tensor out = ta;
  out.shape = std::move(shape);
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                t.grad_buf(ia).add_scaled(g, 1.0);
              },
              "reshape");
}

Var Tape::tile_hw(Var a, int h, int w) {
  check_owned(a, "tile_hw");
  const Tensor& ta = val(a);
  if (ta.ndim() != 2 || h < 1 || w < 1) throw std::invalid_argument("tile_hw: need (n,c) input");
  const int64_t n = ta.shape[0], c = ta.shape[1], hw = int64_t(h) * w;
  Tensor out({n, c, h, w});
  for (int64_t i = 0; i < n * c; ++i) {
    double* dst = &out.data[size_t(i * hw)];
    const double v = ta[i];
    for (int64_t j = 0; j < hw; ++j) dst[j] = v;
  }
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, n, c, hw](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < n * c; ++i) {
                  const double* src = &g.data[size_t(i * hw)];
                  double acc = 0.0;
                  for (int64_t j = 0; j < hw; ++j) acc += src[j];
                  ga[i] += acc;
                }
              },
              "tile_hw");
}

Var Tape::upsample2x(Var a) {
  check_owned(a, "upsample2x");
  const Tensor& ta = val(a);
  if (ta.ndim() != 4) throw std::invalid_argument("upsample2x: need (n,c,h,w)");
  const int64_t n = ta.shape[0], c = ta.shape[1], h = ta.shape[2], w = ta.shape[3];
  Tensor out({n, c, 2 * h, 2 * w});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = &ta.data[size_t(nc * h * w)];
    double* dst = &out.data[size_t(nc * 4 * h * w)];
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const double v = src[i * w + j];
        double* d = &dst[(2 * i) * (2 * w) + 2 * j];
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, n, c, h, w](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t nc = 0; nc < n * c; ++nc) {
                  double* dst = &ga.data[size_t(nc * h * w)];
                  const double* src = &g.data[size_t(nc * 4 * h * w)];
                  for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j)
                      dst[i * w + j] += src[(2 * i) * (2 * w) + 2 * j] +
                                        src[(2 * i) * (2 * w) + 2 * j + 1] +
                                        src[(2 * i + 1) * (2 * w) + 2 * j] +
                                        src[(2 * i + 1) * (2 * w) + 2 * j + 1];
                }
              },
              "upsample2x");
}

Var Tape::avg_pool(Var a, int k) {
  check_owned(a, "avg_pool");
  const Tensor& ta = val(a);
  if (ta.ndim() != 4 || k < 1 || ta.shape[2] % k || ta.shape[3] % k)
    throw std::invalid_argument("avg_pool: need (n,c,h,w) with h,w divisible by k");
  const int64_t n = ta.shape[0], c = ta.shape[1], h = ta.shape[2], w = ta.shape[3];
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / double(k * k);
  Tensor out({n, c, oh, ow});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = &ta.data[size_t(nc * h * w)];
    double* dst = &out.data[size_t(nc * oh * ow)];
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int64_t di = 0; di < k; ++di)
          for (int64_t dj = 0; dj < k; ++dj) acc += src[(i * k + di) * w + (j * k + dj)];
        dst[i * ow + j] = acc * inv;
      }
  }
  int ia = a.id;
  return push(std::move(out), requires_grad(a),
              [ia, n, c, h, w, oh, ow, k, inv](Tape& t, const Tensor& g) {
                if (!t.nodes_[size_t(ia)].requires_grad) return;
                Tensor& ga = t.grad_buf(ia);
                for (int64_t nc = 0; nc < n * c; ++nc) {
                  double* dst = &ga.data[size_t(nc * h * w)];
                  const double* src = &g.data[size_t(nc * oh * ow)];
                  for (int64_t i = 0; i < oh; ++i)
                    for (int64_t j = 0; j < ow; ++j) {
                      const double gv = src[i * ow + j] * inv;
                      for (int64_t di = 0; di < k; ++di)
                        for (int64_t dj = 0; dj < k; ++dj)
                          dst[(i * k + di) * w + (j * k + dj)] += gv;
                    }
                }
              },
              "avg_pool");
}

// -------------------------------------------------------------------- conv

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
  check_owned(x, "conv2d");
  check_owned(w, "conv2d");
  check_owned(b, "conv2d");
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  if (tx.ndim() != 4 || tw.ndim() != 4 || tb.ndim() != 1)
    throw std::invalid_argument("conv2d: need x(n,ci,h,w) w(co,ci,kh,kw) b(co)");
  const int64_t n = tx.shape[0], ci = tx.shape[1], h = tx.shape[2], ww = tx.shape[3];
  const int64_t co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
  if (tw.shape[1] != ci || tb.shape[0] != co)
    throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (ww + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: empty output");

  Tensor out({n, co, oh, ow});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t oc = 0; oc < co; ++oc) {
      double* optr = &out.data[size_t(((in * co + oc) * oh) * ow)];
      const double bias = tb[oc];
      for (int64_t i = 0; i < oh * ow; ++i) optr[i] = bias;
      for (int64_t ic = 0; ic < ci; ++ic) {
        const double* xptr = &tx.data[size_t(((in * ci + ic) * h) * ww)];
        const double* wptr = &tw.data[size_t(((oc * ci + ic) * kh) * kw)];
        for (int64_t i = 0; i < oh; ++i) {
          const int64_t ih0 = i * stride - pad;
          for (int64_t r = 0; r < kh; ++r) {
            const int64_t ih = ih0 + r;
            if (ih < 0 || ih >= h) continue;
            const double* xrow = &xptr[ih * ww];
            const double* wrow = &wptr[r * kw];
            double* orow = &optr[i * ow];
            for (int64_t j = 0; j < ow; ++j) {
              const int64_t iw0 = j * stride - pad;
              double acc = 0.0;
              for (int64_t c2 = 0; c2 < kw; ++c2) {
                const int64_t iw = iw0 + c2;
                if (iw < 0 || iw >= ww) continue;
                acc += wrow[c2] * xrow[iw];
              }
              orow[j] += acc;
            }
          }
        }
      }
    }
  }

  int ix = x.id, iw_ = w.id, ib = b.id;
  return push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b),
              [ix, iw_, ib, n, ci, h, ww, co, kh, kw, stride, pad, oh, ow](Tape& t,
                                                                           const Tensor& g) {
                const Tensor& vx = t.nodes_[size_t(ix)].value;
                const Tensor& vw = t.nodes_[size_t(iw_)].value;
                const bool need_x = t.nodes_[size_t(ix)].requires_grad;
                const bool need_w = t.nodes_[size_t(iw_)].requires_grad;
                const bool need_b = t.nodes_[size_t(ib)].requires_grad;
                if (need_b) {
                  Tensor& gb = t.grad_buf(ib);
                  for (int64_t in = 0; in < n; ++in)
                    for (int64_t oc = 0; oc < co; ++oc) {
                      const double* gptr = &g.data[size_t(((in * co + oc) * oh) * ow)];
                      double acc = 0.0;
                      for (int64_t i = 0; i < oh * ow; ++i) acc += gptr[i];
                      gb[oc] += acc;
                    }
                }
                if (!need_x && !need_w) return;
                Tensor* gx = need_x ? &t.grad_buf(ix) : nullptr;
                Tensor* gw = need_w ? &t.grad_buf(iw_) : nullptr;
                for (int64_t in = 0; in < n; ++in) {
                  for (int64_t oc = 0; oc < co; ++oc) {
                    const double* gptr = &g.data[size_t(((in * co + oc) * oh) * ow)];
                    for (int64_t ic = 0; ic < ci; ++ic) {
                      const double* xptr = &vx.data[size_t(((in * ci + ic) * h) * ww)];
                      const double* wptr = &vw.data[size_t(((oc * ci + ic) * kh) * kw)];
                      double* gxptr = need_x ? &gx->data[size_t(((in * ci + ic) * h) * ww)] : nullptr;
                      double* gwptr = need_w ? &gw->data[size_t(((oc * ci + ic) * kh) * kw)] : nullptr;
                      for (int64_t i = 0; i < oh; ++i) {
                        const int64_t ih0 = i * stride - pad;
                        for (int64_t r = 0; r < kh; ++r) {
                          const int64_t ih = ih0 + r;
                          if (ih < 0 || ih >= h) continue;
                          const double* xrow = &xptr[ih * ww];
                          double* gxrow = need_x ? &gxptr[ih * ww] : nullptr;
                          const double* grow = &gptr[i * ow];
                          for (int64_t j = 0; j < ow; ++j) {
                            const double gv = grow[j];
                            if (gv == 0.0) continue;
                            const int64_t iw0 = j * stride - pad;
                            for (int64_t c2 = 0; c2 < kw; ++c2) {
                              const int64_t iw = iw0 + c2;
                              if (iw < 0 || iw >= ww) continue;
                              if (need_w) gwptr[r * kw + c2] += gv * xrow[iw];
                              if (need_x) gxrow[iw] += gv * wptr[r * kw + c2];
                            }
                          }
                        }
                      }
                    }
                  }
                }
              },
              "conv2d");
}

// ----------------------------------------------------------------- backward

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  const Tensor& lt = val(loss);
  if (lt.numel() != 1)
    throw NumericalError("backward: loss must be scalar, got shape " + shape_str(lt.shape));
  for (auto& n : nodes_) n.grad = Tensor();  // clear previous sweep
  grad_buf(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (!n.grad.defined() || !n.back || !n.requires_grad) continue;
    n.back(*this, n.grad);
  }
}

}  // namespace ecmvae
