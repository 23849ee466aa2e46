#include "zsslu/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "zsslu/rng.hpp"

namespace zsslu {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int64_t axis_stride(const Shape& shape, int axis) {
  int64_t s = 1;
  for (size_t i = axis + 1; i < shape.size(); ++i) s *= shape[i];
  return s;
}

void check_axis(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw std::out_of_range(std::string(op) + ": axis " + std::to_string(axis) +
                            " out of range for shape " + format_shape(shape));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + format_shape(a.shape) +
                                " vs " + format_shape(b.shape));
  }
}

Tape* pick_tape(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->node >= 0 && t->tape && t->tape != tape) {
      throw std::logic_error("op: input tensor belongs to a different tape");
    }
  }
  return tape;
}

// Registers the output node if any input is tracked. Returns true when the
// node was recorded (so callers only build closures that will be used).
bool track(Tape* tape, std::initializer_list<const Tensor*> inputs, Tensor& out,
           std::vector<int>& input_ids) {
  if (!tape) return false;
  bool any = false;
  input_ids.clear();
  for (const Tensor* t : inputs) {
    int id = tape->tracked_id(*t);
    input_ids.push_back(id);
    any = any || id >= 0;
  }
  if (!any) return false;
  out.tape = tape;
  return true;
}

}  // namespace

std::string format_shape(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(std::make_shared<std::vector<double>>(shape_numel(shape), fill)) {
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative extent in " + format_shape(shape));
  }
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_numel(shape) != static_cast<int64_t>(data->size())) {
    throw std::invalid_argument("Tensor: " + std::to_string(data->size()) +
                                " values do not fill shape " + format_shape(shape));
  }
}

Tensor Tensor::randn(Shape s, double stddev, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& x : *t.data) x = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor " + format_shape(shape) + " is not scalar");
  }
  return (*data)[0];
}

int Tape::tracked_id(const Tensor& t) {
  if (t.node >= 0) return t.node;
  if (!t.requires_grad) return -1;
  auto it = leaf_ids_.find(t.data.get());
  if (it != leaf_ids_.end()) return it->second;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, t.numel(), nullptr, {}});
  leaf_ids_.emplace(t.data.get(), id);
  return id;
}

int Tape::record(std::vector<int> inputs, int64_t out_numel, BackwardFn fn) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(inputs), out_numel, std::move(fn), {}});
  return id;
}

std::vector<double>& Tape::grad_buffer(int node_id) {
  Node& n = nodes_[static_cast<size_t>(node_id)];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + format_shape(loss.shape));
  }
  if (loss.node < 0 || loss.tape != this) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.node)[0] = 1.0;
  for (int i = loss.node; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  int id = t.node;
  if (id < 0) {
    auto it = leaf_ids_.find(t.data.get());
    if (it != leaf_ids_.end()) id = it->second;
  }
  if (id >= 0) {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    if (!g.empty()) return g;
  }
  return std::vector<double>(static_cast<size_t>(t.numel()), 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + format_shape(a.shape) + " and " +
                                format_shape(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  MMap(out.data->data(), m, n).noalias() =
      CMap(a.data->data(), m, k) * CMap(b.data->data(), k, n);

  std::vector<int> ids;
  if (track(pick_tape(tape, {&a, &b}), {&a, &b}, out, ids)) {
    auto ad = a.data, bd = b.data;
    out.node = tape->record(ids, out.numel(), [ids, ad, bd, m, k, n](Tape& t, const std::vector<double>& g) {
      CMap gm(g.data(), m, n);
      if (ids[0] >= 0) {
        MMap(t.grad_buffer(ids[0]).data(), m, k).noalias() += gm * CMap(bd->data(), k, n).transpose();
      }
      if (ids[1] >= 0) {
        MMap(t.grad_buffer(ids[1]).data(), k, n).noalias() += CMap(ad->data(), m, k).transpose() * gm;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a, Tape* tape) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected 2-D tensor, got " + format_shape(a.shape));
  }
  const int m = a.shape[0], n = a.shape[1];
  Tensor out({n, m});
  MMap(out.data->data(), n, m) = CMap(a.data->data(), m, n).transpose();

  std::vector<int> ids;
  if (track(pick_tape(tape, {&a}), {&a}, out, ids)) {
    out.node = tape->record(ids, out.numel(), [ids, m, n](Tape& t, const std::vector<double>& g) {
      if (ids[0] >= 0) {
        MMap(t.grad_buffer(ids[0]).data(), m, n) += CMap(g.data(), n, m).transpose();
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, Tape* tape, const char* name, Fwd fwd,
                          Bwd bwd) {
  check_same_shape(a, b, name);
  Tensor out(a.shape);
  const size_t n = a.data->size();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*a.data)[i], (*b.data)[i]);

  std::vector<int> ids;
  if (track(pick_tape(tape, {&a, &b}), {&a, &b}, out, ids)) {
    auto ad = a.data, bd = b.data;
    out.node = tape->record(ids, out.numel(), [ids, ad, bd, bwd](Tape& t, const std::vector<double>& g) {
      bwd(t, ids, *ad, *bd, g);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "add", [](double x, double y) { return x + y; },
      [](Tape& t, const std::vector<int>& ids, const std::vector<double>&,
         const std::vector<double>&, const std::vector<double>& g) {
        for (int s = 0; s < 2; ++s) {
          if (ids[s] < 0) continue;
          auto& gb = t.grad_buffer(ids[s]);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "sub", [](double x, double y) { return x - y; },
      [](Tape& t, const std::vector<int>& ids, const std::vector<double>&,
         const std::vector<double>&, const std::vector<double>& g) {
        if (ids[0] >= 0) {
          auto& ga = t.grad_buffer(ids[0]);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (ids[1] >= 0) {
          auto& gb = t.grad_buffer(ids[1]);
          for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "mul", [](double x, double y) { return x * y; },
      [](Tape& t, const std::vector<int>& ids, const std::vector<double>& av,
         const std::vector<double>& bv, const std::vector<double>& g) {
        if (ids[0] >= 0) {
          auto& ga = t.grad_buffer(ids[0]);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (ids[1] >= 0) {
          auto& gb = t.grad_buffer(ids[1]);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      });
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data->size(); ++i) (*out.data)[i] = (*a.data)[i] * c;
  std::vector<int> ids;
  if (track(pick_tape(tape, {&a}), {&a}, out, ids)) {
    out.node = tape->record(ids, out.numel(), [ids, c](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& ga = t.grad_buffer(ids[0]);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape.back() != bias.shape[0]) {
    throw std::invalid_argument("add_bias: bias " + format_shape(bias.shape) +
                                " does not match last axis of " + format_shape(x.shape));
  }
  const int d = bias.shape[0];
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < d; ++j) (*out.data)[r * d + j] = (*x.data)[r * d + j] + (*bias.data)[j];
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x, &bias}), {&x, &bias}, out, ids)) {
    out.node = tape->record(ids, out.numel(), [ids, rows, d](Tape& t, const std::vector<double>& g) {
      if (ids[0] >= 0) {
        auto& gx = t.grad_buffer(ids[0]);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (ids[1] >= 0) {
        auto& gb = t.grad_buffer(ids[1]);
        for (int64_t r = 0; r < rows; ++r) {
          for (int j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis, Tape* tape) {
  check_axis(x.shape, axis, "softmax");
  const int64_t extent = x.shape[axis];
  const int64_t stride = axis_stride(x.shape, axis);
  const int64_t outer = x.numel() / (extent * stride);
  Tensor out(x.shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t s = 0; s < stride; ++s) {
      const int64_t base = o * extent * stride + s;
      double mx = kNegInf;
      for (int64_t i = 0; i < extent; ++i) mx = std::max(mx, (*x.data)[base + i * stride]);
      if (!std::isfinite(mx)) {
        throw std::domain_error("softmax: no finite entry along axis " + std::to_string(axis));
      }
      double z = 0.0;
      for (int64_t i = 0; i < extent; ++i) {
        double e = std::exp((*x.data)[base + i * stride] - mx);
        (*out.data)[base + i * stride] = e;
        z += e;
      }
      for (int64_t i = 0; i < extent; ++i) (*out.data)[base + i * stride] /= z;
    }
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x}), {&x}, out, ids)) {
    auto yd = out.data;
    out.node = tape->record(ids, out.numel(),
                            [ids, yd, extent, stride, outer](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gx = t.grad_buffer(ids[0]);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t s = 0; s < stride; ++s) {
          const int64_t base = o * extent * stride + s;
          double dot = 0.0;
          for (int64_t i = 0; i < extent; ++i) dot += g[base + i * stride] * (*yd)[base + i * stride];
          for (int64_t i = 0; i < extent; ++i) {
            gx[base + i * stride] += (*yd)[base + i * stride] * (g[base + i * stride] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, Tape* tape) {
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 || gain.shape[0] != x.shape.back() ||
      bias.shape[0] != x.shape.back()) {
    throw std::invalid_argument("layer_norm: gain " + format_shape(gain.shape) + " / bias " +
                                format_shape(bias.shape) + " do not match last axis of " +
                                format_shape(x.shape));
  }
  const int d = x.shape.back();
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape);
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data->data() + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      double xh = (xr[j] - mean) * is;
      xhat[static_cast<size_t>(r * d + j)] = xh;
      (*out.data)[r * d + j] = (*gain.data)[j] * xh + (*bias.data)[j];
    }
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x, &gain, &bias}), {&x, &gain, &bias}, out, ids)) {
    auto gd = gain.data;
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    out.node = tape->record(ids, out.numel(),
                            [ids, gd, xh, is, rows, d](Tape& t, const std::vector<double>& g) {
      for (int64_t r = 0; r < rows; ++r) {
        const double* xhr = xh->data() + r * d;
        const double* gr = g.data() + r * d;
        if (ids[1] >= 0) {
          auto& gg = t.grad_buffer(ids[1]);
          for (int j = 0; j < d; ++j) gg[j] += gr[j] * xhr[j];
        }
        if (ids[2] >= 0) {
          auto& gb = t.grad_buffer(ids[2]);
          for (int j = 0; j < d; ++j) gb[j] += gr[j];
        }
        if (ids[0] >= 0) {
          auto& gx = t.grad_buffer(ids[0]);
          double mean_gy = 0.0, mean_gyxh = 0.0;
          for (int j = 0; j < d; ++j) {
            double gy = gr[j] * (*gd)[j];
            mean_gy += gy;
            mean_gyxh += gy * xhr[j];
          }
          mean_gy /= d;
          mean_gyxh /= d;
          const double s = (*is)[static_cast<size_t>(r)];
          for (int j = 0; j < d; ++j) {
            double gy = gr[j] * (*gd)[j];
            gx[r * d + j] += (gy - mean_gy - xhr[j] * mean_gyxh) * s;
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data->size(); ++i) {
    double v = (*x.data)[i];
    (*out.data)[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x}), {&x}, out, ids)) {
    auto xd = x.data;
    out.node = tape->record(ids, out.numel(), [ids, xd](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gx = t.grad_buffer(ids[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        double v = (*xd)[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
  const Shape& ref = parts[0].shape;
  check_axis(ref, axis, "concat");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int>(ref.size())) {
      throw std::invalid_argument("concat: rank mismatch " + format_shape(p.shape) + " vs " +
                                  format_shape(ref));
    }
    for (int a = 0; a < p.rank(); ++a) {
      if (a != axis && p.shape[a] != ref[a]) {
        throw std::invalid_argument("concat: extent mismatch off axis " + std::to_string(axis) +
                                    ": " + format_shape(p.shape) + " vs " + format_shape(ref));
      }
    }
    out_shape[axis] += p.shape[axis];
  }
  Tensor out(out_shape);
  const int64_t inner = axis_stride(out_shape, axis);
  const int64_t outer = out.numel() / (inner * out_shape[axis]);
  int64_t col_off = 0;
  for (const Tensor& p : parts) {
    const int64_t pe = p.shape[axis];
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = p.data->data() + o * pe * inner;
      double* dst = out.data->data() + (o * out_shape[axis] + col_off) * inner;
      std::copy(src, src + pe * inner, dst);
    }
    col_off += pe;
  }

  if (tape) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    bool any = false;
    std::vector<int> ids;
    for (const Tensor* p : ptrs) {
      if (p->node >= 0 && p->tape && p->tape != tape) {
        throw std::logic_error("concat: input tensor belongs to a different tape");
      }
      int id = tape->tracked_id(*p);
      ids.push_back(id);
      any = any || id >= 0;
    }
    if (any) {
      std::vector<int64_t> extents;
      for (const Tensor& p : parts) extents.push_back(p.shape[axis]);
      const int64_t total = out_shape[axis];
      out.tape = tape;
      out.node = tape->record(ids, out.numel(),
                              [ids, extents, inner, outer, total](Tape& t, const std::vector<double>& g) {
        int64_t off = 0;
        for (size_t pi = 0; pi < ids.size(); ++pi) {
          const int64_t pe = extents[pi];
          if (ids[pi] >= 0) {
            auto& gp = t.grad_buffer(ids[pi]);
            for (int64_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * total + off) * inner;
              double* dst = gp.data() + o * pe * inner;
              for (int64_t i = 0; i < pe * inner; ++i) dst[i] += src[i];
            }
          }
          off += pe;
        }
      });
    }
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int end, Tape* tape) {
  check_axis(x.shape, axis, "slice");
  if (start < 0 || end < start || end > x.shape[axis]) {
    throw std::out_of_range("slice: range [" + std::to_string(start) + ", " + std::to_string(end) +
                            ") invalid for axis " + std::to_string(axis) + " of " +
                            format_shape(x.shape));
  }
  Shape out_shape = x.shape;
  out_shape[axis] = end - start;
  Tensor out(out_shape);
  const int64_t inner = axis_stride(x.shape, axis);
  const int64_t total = x.shape[axis];
  const int64_t kept = end - start;
  const int64_t outer = x.numel() / (inner * total);
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = x.data->data() + (o * total + start) * inner;
    double* dst = out.data->data() + o * kept * inner;
    std::copy(src, src + kept * inner, dst);
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x}), {&x}, out, ids)) {
    out.node = tape->record(ids, out.numel(),
                            [ids, inner, total, kept, outer, start](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gx = t.grad_buffer(ids[0]);
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * kept * inner;
        double* dst = gx.data() + (o * total + start) * inner;
        for (int64_t i = 0; i < kept * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids_in, Tape* tape) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be 2-D, got " +
                                format_shape(table.shape));
  }
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids_in) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside table of " + std::to_string(v) + " rows");
    }
  }
  const int n = static_cast<int>(ids_in.size());
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    const double* src = table.data->data() + static_cast<int64_t>(ids_in[i]) * d;
    std::copy(src, src + d, out.data->data() + static_cast<int64_t>(i) * d);
  }
  std::vector<int> node_ids;
  if (track(pick_tape(tape, {&table}), {&table}, out, node_ids)) {
    auto rows = ids_in;
    out.node = tape->record(node_ids, out.numel(),
                            [node_ids, rows, d](Tape& t, const std::vector<double>& g) {
      if (node_ids[0] < 0) return;
      auto& gt = t.grad_buffer(node_ids[0]);
      for (size_t i = 0; i < rows.size(); ++i) {
        double* dst = gt.data() + static_cast<int64_t>(rows[i]) * d;
        const double* src = g.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask, Tape* tape) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy_logits: logits must be 2-D, got " +
                                format_shape(logits.shape));
  }
  const int n = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n) {
    throw std::invalid_argument("cross_entropy_logits: expected " + std::to_string(n) +
                                " targets and mask entries");
  }
  int64_t active = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++active;
    if (targets[i] < 0 || targets[i] >= v) {
      throw std::out_of_range("cross_entropy_logits: target " + std::to_string(targets[i]) +
                              " outside vocabulary of " + std::to_string(v));
    }
  }
  if (active == 0) {
    throw std::domain_error("cross_entropy_logits: all positions masked, loss undefined");
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double* row = logits.data->data() + static_cast<int64_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[targets[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(active));

  std::vector<int> ids;
  if (track(pick_tape(tape, {&logits}), {&logits}, out, ids)) {
    auto ld = logits.data;
    auto tg = targets;
    auto mk = mask;
    out.node = tape->record(ids, 1, [ids, ld, tg, mk, n, v, active](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gl = t.grad_buffer(ids[0]);
      const double go = g[0] / static_cast<double>(active);
      for (int i = 0; i < n; ++i) {
        if (!mk[i]) continue;
        const double* row = ld->data() + static_cast<int64_t>(i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        double* dst = gl.data() + static_cast<int64_t>(i) * v;
        for (int j = 0; j < v; ++j) dst[j] += go * std::exp(row[j] - mx) / z;
        dst[tg[i]] -= go;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
  double s = 0.0;
  for (double v : *x.data) s += v;
  Tensor out = Tensor::scalar(s);
  std::vector<int> ids;
  if (track(pick_tape(tape, {&x}), {&x}, out, ids)) {
    const int64_t n = x.numel();
    out.node = tape->record(ids, 1, [ids, n](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gx = t.grad_buffer(ids[0]);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
    });
  }
  return out;
}

Tensor apply_mask(const Tensor& scores, const BoolMat& mask, Tape* tape) {
  if (scores.rank() != 2 || scores.shape[0] != mask.rows || scores.shape[1] != mask.cols) {
    throw std::invalid_argument("apply_mask: scores " + format_shape(scores.shape) +
                                " vs mask [" + std::to_string(mask.rows) + "x" +
                                std::to_string(mask.cols) + "]");
  }
  for (int r = 0; r < mask.rows; ++r) {
    bool any = false;
    for (int c = 0; c < mask.cols; ++c) any = any || mask.at(r, c);
    if (!any) {
      throw std::domain_error("apply_mask: query row " + std::to_string(r) +
                              " is fully masked; attention undefined");
    }
  }
  Tensor out(scores.shape);
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      out.at(r, c) = mask.at(r, c) ? scores.at(r, c) : kNegInf;
    }
  }
  std::vector<int> ids;
  if (track(pick_tape(tape, {&scores}), {&scores}, out, ids)) {
    auto bits = mask.v;
    out.node = tape->record(ids, out.numel(), [ids, bits](Tape& t, const std::vector<double>& g) {
      if (ids[0] < 0) return;
      auto& gs = t.grad_buffer(ids[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        if (bits[i]) gs[i] += g[i];
      }
    });
  }
  return out;
}

}  // namespace zsslu
