#include "sfdm/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sfdm/error.hpp"

namespace sfdm::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  nodes_.push_back(Node{p.value, {}, p.trainable, {}, p.trainable ? &p : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw Error("autodiff: mixing vars from different tapes");
    needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& root) {
  Node& r = nodes_.at(root.id_);
  if (r.value.size() != 1) throw ShapeMismatch("backward root must be a scalar, got " + shape_str(r.value.shape()));
  if (!r.requires_grad) return;
  accumulate(root, Tensor(r.value.shape(), 1.0));
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void check_same(const Var& a, const Var& b, const char* what) { require_same_shape(a.value(), b.value(), what); }

void check_rank(const Var& a, std::size_t r, const char* what) {
  if (a.value().rank() != r) {
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                        shape_str(a.shape()));
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g * -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * b.value()[i];
      gb[i] = g[i] * a.value()[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var div(const Var& a, const Var& b) {
  check_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double bv = b.value()[i];
      ga[i] = g[i] / bv;
      gb[i] = -g[i] * a.value()[i] / (bv * bv);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var add_scalar(const Var& a, double s) {
  return a.tape().record(map(a.value(), [s](double x) { return x + s; }), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); });
}

Var square(const Var& a) {
  return a.tape().record(map(a.value(), [](double x) { return x * x; }), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * a.value()[i] * g[i];
    t.accumulate(a, ga);
  });
}

Var tanh(const Var& a) {
  Tensor out = map(a.value(), [](double x) { return std::tanh(x); });
  Tensor y = out;
  return a.tape().record(std::move(out), {a}, [a, y](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
    t.accumulate(a, ga);
  });
}

Var relu(const Var& a) {
  return a.tape().record(map(a.value(), [](double x) { return x > 0 ? x : 0.0; }), {a},
                         [a](Tape& t, const Tensor& g) {
                           Tensor ga(g.shape());
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a.value()[i] > 0 ? g[i] : 0.0;
                           t.accumulate(a, ga);
                         });
}

Var softplus(const Var& a) {
  auto f = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  return a.tape().record(map(a.value(), f), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * sigmoid(a.value()[i]);
    t.accumulate(a, ga);
  });
}

Var pow_scalar(const Var& a, double p) {
  return a.tape().record(map(a.value(), [p](double x) { return x > 0 ? std::pow(x, p) : 0.0; }), {a},
                         [a, p](Tape& t, const Tensor& g) {
                           Tensor ga(g.shape());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double x = a.value()[i];
                             ga[i] = x > 0 ? g[i] * p * std::pow(x, p - 1.0) : 0.0;
                           }
                           t.accumulate(a, ga);
                         });
}

Var sum(const Var& a) {
  return a.tape().record(Tensor({1}, a.value().sum()), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, Tensor(a.shape(), g[0])); });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeMismatch("mean of empty tensor");
  return a.tape().record(Tensor({1}, a.value().sum() / n), {a},
                         [a, n](Tape& t, const Tensor& g) { t.accumulate(a, Tensor(a.shape(), g[0] / n)); });
}

namespace {

Var reduce_per_sample(const Var& a, double divisor_scale) {
  if (a.value().rank() < 1) throw ShapeMismatch("per-sample reduction needs a leading axis");
  const std::size_t n = a.dim(0);
  const std::size_t inner = n ? a.value().size() / n : 0;
  const double div = divisor_scale > 0 ? static_cast<double>(inner) : 1.0;
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < inner; ++j) s += a.value()[i * inner + j];
    out[i] = s / div;
  }
  return a.tape().record(std::move(out), {a}, [a, n, inner, div](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < inner; ++j) ga[i * inner + j] = g[i] / div;
    t.accumulate(a, ga);
  });
}

}  // namespace

Var sum_per_sample(const Var& a) { return reduce_per_sample(a, 0.0); }
Var mean_per_sample(const Var& a) { return reduce_per_sample(a, 1.0); }

Var mean_spatial(const Var& a) {
  check_rank(a, 4, "mean_spatial");
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += a.value()[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return a.tape().record(std::move(out), {a}, [a, n, c, hw](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t j = 0; j < hw; ++j) ga[i * hw + j] = g[i] / static_cast<double>(hw);
    t.accumulate(a, ga);
  });
}

Var reshape(const Var& a, Shape shape) {
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g.reshaped(a.shape())); });
}

Var narrow(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + len > s[axis]) {
    throw ShapeMismatch("narrow [" + std::to_string(start) + ", " + std::to_string(start + len) + ") on axis " +
                        std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = len;
  Tensor out(os);
  const std::size_t full = s[axis];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t j = 0; j < inner; ++j)
        out[(o * len + k) * inner + j] = a.value()[(o * full + start + k) * inner + j];
  return a.tape().record(std::move(out), {a}, [a, outer, inner, len, full, start](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t j = 0; j < inner; ++j)
          ga[(o * full + start + k) * inner + j] = g[(o * len + k) * inner + j];
    t.accumulate(a, ga);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2)) {
    throw ShapeMismatch("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t n = sa[0];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t ca = sa[1] * inner, cb = sb[1] * inner;
  Shape os = sa;
  os[1] = sa[1] + sb[1];
  Tensor out(os);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().vec().begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                out.vec().begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
    std::copy_n(b.value().vec().begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                out.vec().begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, n, ca, cb](Tape& t, const Tensor& g) {
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] = g[i * (ca + cb) + j];
      for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] = g[i * (ca + cb) + ca + j];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

namespace {

// c[M, N] = a[M, K] * b[K, N]
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

Tensor transposed(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  gemm(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga({m, k});
      const Tensor bt = transposed(b.value());
      gemm(g.data().data(), bt.data().data(), ga.data().data(), m, n, k);
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb({k, n});
      const Tensor at = transposed(a.value());
      gemm(at.data().data(), g.data().data(), gb.data().data(), k, m, n);
      t.accumulate(b, gb);
    }
  });
}

Var transpose(const Var& a) {
  check_rank(a, 2, "transpose");
  return a.tape().record(transposed(a.value()), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, transposed(g)); });
}

Var add_rowvec(const Var& a, const Var& b) {
  check_rank(a, 2, "add_rowvec");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (b.value().size() != n) throw ShapeMismatch("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.value()[j];
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    Tensor gb(b.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    t.accumulate(b, gb);
  });
}

Var matmul_fixed(const Var& x, std::shared_ptr<const Tensor> weight) {
  check_rank(x, 2, "matmul_fixed");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight->dim(0);
  if (weight->rank() != 2 || weight->dim(1) != in) {
    throw ShapeMismatch("matmul_fixed: " + shape_str(x.shape()) + " with weight " + shape_str(weight->shape()));
  }
  Tensor out({n, out_dim});
  const double* w = weight->data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.value().data().data() + i * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w + o * in;
      double s = 0;
      for (std::size_t j = 0; j < in; ++j) s += wr[j] * xr[j];
      out[i * out_dim + o] = s;
    }
  }
  return x.tape().record(std::move(out), {x}, [x, weight, n, in, out_dim](Tape& t, const Tensor& g) {
    Tensor gx({n, in});
    gemm(g.data().data(), weight->data().data(), gx.data().data(), n, out_dim, in);
    t.accumulate(x, gx);
  });
}

Var rowwise_dot(const Var& a, const Var& b) {
  check_same(a, b, "rowwise_dot");
  check_rank(a, 2, "rowwise_dot");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += a.value()[i * d + j] * b.value()[i * d + j];
    out[i] = s;
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, n, d](Tape& t, const Tensor& g) {
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        ga[i * d + j] = g[i] * b.value()[i * d + j];
        gb[i * d + j] = g[i] * a.value()[i * d + j];
      }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  check_rank(a, 2, "l2_normalize_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out(a.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += a.value()[i * d + j] * a.value()[i * d + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.value()[i * d + j] / norms[i];
  }
  Tensor y = out;
  return a.tape().record(std::move(out), {a}, [a, y, norms, n, d](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < n; ++i) {
      double yg = 0;
      for (std::size_t j = 0; j < d; ++j) yg += y[i * d + j] * g[i * d + j];
      for (std::size_t j = 0; j < d; ++j) ga[i * d + j] = (g[i * d + j] - y[i * d + j] * yg) / norms[i];
    }
    t.accumulate(a, ga);
  });
}

Var conv2d(const Var& x, const Var& weight, const Var* bias, std::size_t stride, std::size_t pad) {
  check_rank(x, 4, "conv2d input");
  check_rank(weight, 4, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw) throw ShapeMismatch("conv2d: kernel larger than input");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  if (bias != nullptr && bias->value().size() != o) throw ShapeMismatch("conv2d: bias size");

  Tensor out({n, o, ho, wo});
  const double* xv = x.value().data().data();
  const double* wv = weight.value().data().data();
  double* ov = out.data().data();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* orow = ov + (b * o + oc) * ho * wo;
      if (bias != nullptr) std::fill(orow, orow + ho * wo, bias->value()[oc]);
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* xin = xv + (b * c + ic) * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki)
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const double wk = wv[((oc * c + ic) * kh + ki) * kw + kj];
            for (std::size_t oi = 0; oi < ho; ++oi) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) - ipad;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t oj = 0; oj < wo; ++oj) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) - ipad;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                orow[oi * wo + oj] += wk * xin[ii * static_cast<std::ptrdiff_t>(w) + jj];
              }
            }
          }
      }
    }

  Var bias_var = bias != nullptr ? *bias : Var{};
  auto fn = [x, weight, bias_var, n, c, h, w, o, kh, kw, ho, wo, stride, ipad](Tape& t, const Tensor& g) {
    const bool need_x = t.requires_grad(x);
    const bool need_w = t.requires_grad(weight);
    Tensor gx(need_x ? x.shape() : Shape{0});
    Tensor gw(need_w ? weight.shape() : Shape{0});
    const double* xv = x.value().data().data();
    const double* wv = weight.value().data().data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oc = 0; oc < o; ++oc) {
        const double* grow = g.data().data() + (b * o + oc) * ho * wo;
        for (std::size_t ic = 0; ic < c; ++ic) {
          const std::size_t xoff = (b * c + ic) * h * w;
          for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const std::size_t widx = ((oc * c + ic) * kh + ki) * kw + kj;
              const double wk = wv[widx];
              double acc = 0;
              for (std::size_t oi = 0; oi < ho; ++oi) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) - ipad;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t oj = 0; oj < wo; ++oj) {
                  const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) - ipad;
                  if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t xi = xoff + static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj);
                  const double gv = grow[oi * wo + oj];
                  if (need_x) gx[xi] += wk * gv;
                  acc += xv[xi] * gv;
                }
              }
              if (need_w) gw[widx] += acc;
            }
        }
      }
    if (need_x) t.accumulate(x, gx);
    if (need_w) t.accumulate(weight, gw);
    if (bias_var.valid() && t.requires_grad(bias_var)) {
      Tensor gb(bias_var.shape());
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oc = 0; oc < o; ++oc)
          for (std::size_t k = 0; k < ho * wo; ++k) gb[oc] += g[(b * o + oc) * ho * wo + k];
      t.accumulate(bias_var, gb);
    }
  };
  if (bias != nullptr) return x.tape().record(std::move(out), {x, weight, *bias}, std::move(fn));
  return x.tape().record(std::move(out), {x, weight}, std::move(fn));
}

Var depthwise_conv_valid(const Var& x, std::shared_ptr<const Tensor> kernel) {
  check_rank(x, 4, "depthwise_conv_valid");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t k = kernel->dim(0);
  if (kernel->rank() != 2 || kernel->dim(1) != k || h < k || w < k) {
    throw ShapeMismatch("depthwise_conv_valid: kernel " + shape_str(kernel->shape()) + " on " + shape_str(x.shape()));
  }
  const std::size_t ho = h - k + 1, wo = w - k + 1;
  Tensor out({n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double s = 0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) s += (*kernel)[a * k + b] * x.value()[(p * h + i + a) * w + j + b];
        out[(p * ho + i) * wo + j] = s;
      }
  return x.tape().record(std::move(out), {x}, [x, kernel, n, c, h, w, k, ho, wo](Tape& t, const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          const double gv = g[(p * ho + i) * wo + j];
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) gx[(p * h + i + a) * w + j + b] += (*kernel)[a * k + b] * gv;
        }
    t.accumulate(x, gx);
  });
}

Var avg_pool2(const Var& x) {
  check_rank(x, 4, "avg_pool2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeMismatch("avg_pool2 on " + shape_str(x.shape()));
  Tensor out({n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const double* base = x.value().data().data() + (p * h + 2 * i) * w + 2 * j;
        out[(p * ho + i) * wo + j] = 0.25 * (base[0] + base[1] + base[w] + base[w + 1]);
      }
  return x.tape().record(std::move(out), {x}, [x, n, c, h, w, ho, wo](Tape& t, const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          const double gv = 0.25 * g[(p * ho + i) * wo + j];
          const std::size_t b = (p * h + 2 * i) * w + 2 * j;
          gx[b] += gv;
          gx[b + 1] += gv;
          gx[b + w] += gv;
          gx[b + w + 1] += gv;
        }
    t.accumulate(x, gx);
  });
}

Var normalize_channels(const Var& x, double eps) {
  check_rank(x, 4, "normalize_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  std::vector<double> r(n * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t s = 0; s < hw; ++s) {
      double acc = eps;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = x.value()[(b * c + ch) * hw + s];
        acc += v * v;
      }
      r[b * hw + s] = std::sqrt(acc);
      for (std::size_t ch = 0; ch < c; ++ch) out[(b * c + ch) * hw + s] = x.value()[(b * c + ch) * hw + s] / r[b * hw + s];
    }
  return x.tape().record(std::move(out), {x}, [x, r, n, c, hw](Tape& t, const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < hw; ++s) {
        const double rr = r[b * hw + s];
        double xg = 0;
        for (std::size_t ch = 0; ch < c; ++ch) xg += x.value()[(b * c + ch) * hw + s] * g[(b * c + ch) * hw + s];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = (b * c + ch) * hw + s;
          gx[i] = g[i] / rr - x.value()[i] * xg / (rr * rr * rr);
        }
      }
    t.accumulate(x, gx);
  });
}

Var prelu(const Var& x, const Var& alpha) {
  check_rank(x, 4, "prelu");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (alpha.value().size() != c) throw ShapeMismatch("prelu: alpha size");
  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t s = 0; s < hw; ++s) {
        const std::size_t i = (b * c + ch) * hw + s;
        const double v = x.value()[i];
        out[i] = v > 0 ? v : alpha.value()[ch] * v;
      }
  return x.tape().record(std::move(out), {x, alpha}, [x, alpha, n, c, hw](Tape& t, const Tensor& g) {
    Tensor gx(x.shape()), ga(alpha.shape());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t s = 0; s < hw; ++s) {
          const std::size_t i = (b * c + ch) * hw + s;
          const double v = x.value()[i];
          if (v > 0) {
            gx[i] = g[i];
          } else {
            gx[i] = alpha.value()[ch] * g[i];
            ga[ch] += v * g[i];
          }
        }
    t.accumulate(x, gx);
    t.accumulate(alpha, ga);
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormBuffers& buffers, bool training,
               double momentum, double eps) {
  check_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t m = n * hw;
  if (gamma.value().size() != c || beta.value().size() != c) throw ShapeMismatch("batch_norm: affine size");
  std::vector<double> mean(c), invstd(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0, s2 = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < hw; ++k) {
          const double v = x.value()[(b * c + ch) * hw + k];
          s += v;
        }
      const double mu = s / static_cast<double>(m);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = x.value()[(b * c + ch) * hw + k] - mu;
          s2 += d * d;
        }
      const double var = s2 / static_cast<double>(m);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? s2 / static_cast<double>(m - 1) : var;
      buffers.running_mean->value[ch] = (1 - momentum) * buffers.running_mean->value[ch] + momentum * mu;
      buffers.running_var->value[ch] = (1 - momentum) * buffers.running_var->value[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = buffers.running_mean->value[ch];
      invstd[ch] = 1.0 / std::sqrt(buffers.running_var->value[ch] + eps);
    }
  }
  Tensor xhat(x.shape()), out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) {
        const std::size_t i = (b * c + ch) * hw + k;
        xhat[i] = (x.value()[i] - mean[ch]) * invstd[ch];
        out[i] = gamma.value()[ch] * xhat[i] + beta.value()[ch];
      }
  return x.tape().record(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, invstd, n, c, hw, m, training](Tape& t, const Tensor& g) {
        Tensor gx(x.shape()), gg(gamma.shape()), gb(beta.shape());
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < hw; ++k) {
              const std::size_t i = (b * c + ch) * hw + k;
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          gg[ch] = sum_gx;
          gb[ch] = sum_g;
          const double gam = gamma.value()[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < hw; ++k) {
              const std::size_t i = (b * c + ch) * hw + k;
              if (training) {
                const double md = static_cast<double>(m);
                gx[i] = gam * invstd[ch] * (g[i] - sum_g / md - xhat[i] * sum_gx / md);
              } else {
                gx[i] = gam * invstd[ch] * g[i];
              }
            }
        }
        t.accumulate(x, gx);
        t.accumulate(gamma, gg);
        t.accumulate(beta, gb);
      });
}

}  // namespace sfdm::ad
