#include "semcsi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

#include "semcsi/error.hpp"

namespace semcsi::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
  if (shape_size(shape_) != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape_->value(*this); }

// ---- Tape ------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in constant " + shape_str(value.shape()));
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in variable " + shape_str(value.shape()));
  nodes_.push_back(Node{"variable", std::move(value), {}, {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (!value.all_finite())
    throw NumericError(std::string("non-finite output from op '") + op + "' " + shape_str(value.shape()));
  bool rg = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("op input recorded out of order");
    rg = rg || nodes_[id].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), std::move(inputs), rg ? std::move(backward) : BackwardFn{}, rg, {}});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  if (!nodes_[id].requires_grad) return;
  auto& buf = grad_buffer(id);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (nodes_.at(loss.id()).value.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(nodes_[loss.id()].value.shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    Tensor g(n.value.shape(), n.grad);
    n.backward(*this, n.value, g);
  }
}

// ---- elementwise -----------------------------------------------------------

namespace {

enum class Bcast { kSame, kSuffix, kScalar };

Bcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::kSame;
  if (shape_size(b) == 1) return Bcast::kScalar;
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size())))
    return Bcast::kSuffix;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Sums a full-size gradient back down to the right operand's shape.
std::vector<double> reduce_to(std::span<const double> g, std::size_t nb) {
  std::vector<double> out(nb, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) out[i % nb] += g[i];
  return out;
}

template <class F>
Tensor binary_forward(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const std::size_t nb = b.size();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % nb]);
  return out;
}

template <class F, class D>
Var unary(const char* name, Var a, F f, D df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape()->record(name, std::move(out), {ia}, [ia, df](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = t.value(Var(&t, ia));
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  broadcast_kind(a.shape(), b.shape(), "add");
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x + y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(ia, g.data());
    if (t.requires_grad(ib)) t.accumulate(ib, reduce_to(g.data(), t.value(Var(&t, ib)).size()));
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  broadcast_kind(a.shape(), b.shape(), "sub");
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x - y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(ia, g.data());
    if (t.requires_grad(ib)) {
      auto r = reduce_to(g.data(), t.value(Var(&t, ib)).size());
      for (auto& v : r) v = -v;
      t.accumulate(ib, r);
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  broadcast_kind(a.shape(), b.shape(), "mul");
  Tensor out = binary_forward(a.value(), b.value(), [](double x, double y) { return x * y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = t.value(Var(&t, ia));
    const Tensor& y = t.value(Var(&t, ib));
    const std::size_t nb = y.size();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i % nb];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double) { return c; });
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Var gelu(Var a) { return unary("gelu", a, gelu_value, gelu_derivative); }

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var rsqrt(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw NumericError("rsqrt of non-positive value");
  return unary(
      "rsqrt", a, [](double x) { return 1.0 / std::sqrt(x); },
      [](double x) { return -0.5 / (x * std::sqrt(x)); });
}

// ---- matmul ----------------------------------------------------------------

namespace {

// out[m×n] += a[m×k] · b, with b either [k×n] or (transposed) [n×k]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n,
              bool trans_b) {
  if (!trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* o = out + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* br = b + p * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ar = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* br = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
        out[i * n + j] += s;
      }
    }
  }
}

// out[k×n] += aᵀ · g with a [m×k], g [m×n]
void gemm_at_acc(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

// out[n×k] += gᵀ · a with g [m×n], a [m×k]
void gemm_gt_a_acc(const double* g, const double* a, double* out, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double gv = g[i * n + j];
      if (gv == 0.0) continue;
      double* o = out + j * k;
      for (std::size_t p = 0; p < k; ++p) o[p] += gv * ar[p];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  check_same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t bk = transpose_b ? sb.back() : sb[sb.size() - 2];
  const std::size_t n = transpose_b ? sb[sb.size() - 2] : sb.back();
  if (bk != k)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(sa) + " x " + shape_str(sb) +
                         (transpose_b ? "^T" : ""));
  const bool shared = sb.size() == 2;
  if (!shared && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
    throw DimensionError("matmul: batch dimensions disagree, " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t batch = shape_size(sa) / (m * k);

  Shape so(sa.begin(), sa.end() - 1);
  so.push_back(n);
  Tensor out(so);
  {
    const double* pa = a.value().data().data();
    const double* pb = b.value().data().data();
    double* po = out.data().data();
    if (shared) {
      // Collapse batch into rows for a single larger product.
      gemm_acc(pa, pb, po, batch * m, k, n, transpose_b);
    } else {
      for (std::size_t s = 0; s < batch; ++s) gemm_acc(pa + s * m * k, pb + s * k * n, po + s * m * n, m, k, n, transpose_b);
    }
  }

  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(
      "matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n, batch, shared, transpose_b](Tape& t, const Tensor&, const Tensor& g) {
        const double* pa = t.value(Var(&t, ia)).data().data();
        const double* pb = t.value(Var(&t, ib)).data().data();
        const double* pg = g.data().data();
        const std::size_t rows = shared ? batch * m : m;
        const std::size_t reps = shared ? 1 : batch;
        if (t.requires_grad(ia)) {
          double* ga = t.grad_buffer(ia).data();
          // d a = g · bᵀ   (or g · b when b was used transposed)
          for (std::size_t s = 0; s < reps; ++s) {
            const double* bs = pb + (shared ? 0 : s * k * n);
            gemm_acc(pg + s * rows * n, bs, ga + s * rows * k, rows, n, k, !transpose_b);
          }
        }
        if (t.requires_grad(ib)) {
          double* gb = t.grad_buffer(ib).data();
          for (std::size_t s = 0; s < reps; ++s) {
            double* gbs = gb + (shared ? 0 : s * k * n);
            if (!transpose_b)
              gemm_at_acc(pa + s * rows * k, pg + s * rows * n, gbs, rows, k, n);  // aᵀ · g
            else
              gemm_gt_a_acc(pg + s * rows * n, pa + s * rows * k, gbs, rows, n, k);  // gᵀ · a
          }
        }
      });
}

// ---- softmax / layernorm ---------------------------------------------------

Var softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t kdim = x.shape().back();
  const std::size_t rows = x.size() / kdim;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * kdim;
    double* yr = out.data().data() + r * kdim;
    const double mx = *std::max_element(xr, xr + kdim);
    double z = 0.0;
    for (std::size_t j = 0; j < kdim; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < kdim; ++j) yr[j] /= z;
  }
  const auto ia = a.id();
  return a.tape()->record("softmax", std::move(out), {ia}, [ia, kdim, rows](Tape& t, const Tensor& y, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * kdim;
      double dot = 0.0;
      for (std::size_t j = 0; j < kdim; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < kdim; ++j) ga[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

Var layernorm(Var a, Var gain, Var bias, double eps) {
  check_same_tape(a, gain);
  check_same_tape(a, bias);
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  const Tensor& x = a.value();
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layernorm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const std::size_t rows = x.size() / d;
  // normalized rows and per-row inverse std are kept for backward
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(x.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const auto ia = a.id(), ig = gain.id(), ib = bias.id();
  return a.tape()->record(
      "layernorm", std::move(out), {ia, ig, ib}, [=](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& gv = t.value(Var(&t, ig));
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          std::vector<double> dg(d, 0.0), db(d, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += g[r * d + j] * (*xhat)[r * d + j];
              db[j] += g[r * d + j];
            }
          t.accumulate(ig, dg);
          t.accumulate(ib, db);
        }
        if (t.requires_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * (*xhat)[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              ga[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
            }
          }
        }
      });
}

// ---- shape ops -------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id();
  return a.tape()->record("reshape", std::move(out), {ia},
                          [ia](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(ia, g.data()); });
}

Var permute(Var a, const std::vector<std::size_t>& perm) {
  const Shape& si = a.shape();
  const std::size_t r = si.size();
  if (perm.size() != r) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape so(r);
  for (std::size_t i = 0; i < r; ++i) so[i] = si[perm[i]];
  // input strides, reordered to output axis order
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * si[i + 1];
  std::vector<std::size_t> gather(shape_size(si));
  {
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < gather.size(); ++flat) {
      std::size_t src = 0;
      for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[perm[i]];
      gather[flat] = src;
      for (std::size_t i = r; i-- > 0;) {
        if (++idx[i] < so[i]) break;
        idx[i] = 0;
      }
    }
  }
  const Tensor& x = a.value();
  Tensor out(so);
  for (std::size_t i = 0; i < gather.size(); ++i) out[i] = x[gather[i]];
  const auto ia = a.id();
  return a.tape()->record("permute", std::move(out), {ia},
                          [ia, gather = std::move(gather)](Tape& t, const Tensor&, const Tensor& g) {
                            auto& ga = t.grad_buffer(ia);
                            for (std::size_t i = 0; i < gather.size(); ++i) ga[gather[i]] += g[i];
                          });
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id();
  return a.tape()->record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor&, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (auto& v : ga) v += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var straight_through(Var soft, const Tensor& hard) {
  if (hard.shape() != soft.shape())
    throw DimensionError("straight_through: shapes differ " + shape_str(soft.shape()) + " vs " +
                         shape_str(hard.shape()));
  const auto is = soft.id();
  return soft.tape()->record("straight_through", hard, {is},
                             [is](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(is, g.data()); });
}

}  // namespace semcsi::ad
