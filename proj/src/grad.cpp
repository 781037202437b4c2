#include "pep/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pep/core.hpp"
#include "pep/kernels.hpp"

namespace pep::grad {

std::size_t numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape dims, bool requires_grad) : Tensor(dims, std::vector<double>(numel(dims), 0.0), requires_grad) {}

Tensor::Tensor(Shape dims, std::vector<double> data, bool requires_grad)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (dims_.size() > 3) throw Error("tensor rank above 3: " + to_string(dims_));
  if (data_.size() != numel(dims_)) {
    throw Error("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                to_string(dims_));
  }
  set_requires_grad(requires_grad);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.dims().back(); }

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id < nodes_.size(), "variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::leaf(Tensor& t) {
  Node n;
  n.op = Op::Leaf;
  n.value = Tensor(t.dims(), std::vector<double>(t.data().begin(), t.data().end()));
  n.leaf = &t;
  n.needs_grad = t.requires_grad();
  return push(std::move(n));
}

Var Tape::constant(Tensor t) {
  Node n;
  n.op = Op::Constant;
  t.set_requires_grad(false);
  n.value = std::move(t);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b, bool trans_b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.rank() == 2 || av.rank() == 3, "matmul: lhs must be rank 2 or 3, got " + to_string(av.dims()));
  require(bv.rank() == 2 || (bv.rank() == 3 && av.rank() == 3),
          "matmul: rhs must be rank 2, or rank 3 with a rank-3 lhs");
  const std::size_t k = av.dims().back();
  const std::size_t m = av.dims()[av.rank() - 2];
  const std::size_t batch = av.rank() == 3 ? av.dim(0) : 1;
  const std::size_t bk = bv.dims()[bv.rank() - (trans_b ? 1 : 2)];
  const std::size_t n = bv.dims()[bv.rank() - (trans_b ? 2 : 1)];
  require(bk == k, "matmul: inner dims differ: " + to_string(av.dims()) + " x " + to_string(bv.dims()) +
                       (trans_b ? "^T" : ""));
  if (bv.rank() == 3) require(bv.dim(0) == batch, "matmul: batch dims differ");

  Shape out_dims = av.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor out(out_dims);
  if (bv.rank() == 2) {
    kernels::omp::matmul(av.data().data(), bv.data().data(), out.data().data(), batch * m, k, n, trans_b, {});
  } else {
    kernels::BatchShape s{batch, m * k, k * n, m * n};
    kernels::omp::matmul(av.data().data(), bv.data().data(), out.data().data(), m, k, n, trans_b, s);
  }
  Node nd;
  nd.op = Op::MatMul;
  nd.inputs = {a.id, b.id};
  nd.flag = trans_b;
  nd.needs_grad = node(a).needs_grad || node(b).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(bv.rank() <= av.rank() &&
              std::equal(bv.dims().begin(), bv.dims().end(), av.dims().end() - static_cast<std::ptrdiff_t>(bv.rank())),
          "add: " + to_string(bv.dims()) + " does not broadcast to " + to_string(av.dims()));
  Tensor out = av;
  out.set_requires_grad(false);
  const std::size_t inner = bv.size();
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i % inner];
  Node nd;
  nd.op = Op::Add;
  nd.inputs = {a.id, b.id};
  nd.needs_grad = node(a).needs_grad || node(b).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.dims() == bv.dims(), "mul: shapes differ: " + to_string(av.dims()) + " vs " + to_string(bv.dims()));
  Tensor out(av.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Node nd;
  nd.op = Op::Mul;
  nd.inputs = {a.id, b.id};
  nd.needs_grad = node(a).needs_grad || node(b).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::scale(Var a, double s) {
  const Tensor& av = node(a).value;
  Tensor out(av.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Node nd;
  nd.op = Op::Scale;
  nd.inputs = {a.id};
  nd.scalar = s;
  nd.needs_grad = node(a).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::sum(Var a) {
  const Tensor& av = node(a).value;
  double s = 0.0;
  for (double x : av.data()) s += x;
  Node nd;
  nd.op = Op::Sum;
  nd.inputs = {a.id};
  nd.needs_grad = node(a).needs_grad;
  nd.value = Tensor(Shape{}, std::vector<double>{s});
  return push(std::move(nd));
}

Var Tape::concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat: no inputs");
  const Tensor& first = node(parts[0]).value;
  require(first.rank() >= 1, "concat: scalar input");
  Shape lead(first.dims().begin(), first.dims().end() - 1);
  const std::size_t rows = numel(lead);
  std::size_t total = 0;
  Node nd;
  nd.op = Op::Concat;
  for (Var p : parts) {
    const Tensor& t = node(p).value;
    require(t.rank() == first.rank() && std::equal(lead.begin(), lead.end(), t.dims().begin()),
            "concat: leading dims differ: " + to_string(first.dims()) + " vs " + to_string(t.dims()));
    total += t.dims().back();
    nd.inputs.push_back(p.id);
    nd.needs_grad = nd.needs_grad || node(p).needs_grad;
  }
  Shape out_dims = lead;
  out_dims.push_back(total);
  Tensor out(out_dims);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = node(p).value;
    const std::size_t w = t.dims().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::reshape(Var a, Shape dims) {
  const Tensor& av = node(a).value;
  require(numel(dims) == av.size(), "reshape: " + to_string(av.dims()) + " -> " + to_string(dims));
  Node nd;
  nd.op = Op::Reshape;
  nd.inputs = {a.id};
  nd.needs_grad = node(a).needs_grad;
  nd.value = Tensor(std::move(dims), std::vector<double>(av.data().begin(), av.data().end()));
  return push(std::move(nd));
}

Var Tape::gather_row(Var table, std::vector<std::uint32_t> rows) {
  const Tensor& tv = node(table).value;
  require(tv.rank() == 2, "gather_row: table must be rank 2");
  const std::size_t f = tv.dim(1);
  Tensor out(Shape{rows.size(), f});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < tv.dim(0), "gather_row: row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * f), f,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * f));
  }
  Node nd;
  nd.op = Op::GatherRow;
  nd.inputs = {table.id};
  nd.index = std::move(rows);
  nd.needs_grad = node(table).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::group_mean(Var a, std::size_t group) {
  const Tensor& av = node(a).value;
  require(av.rank() == 2 && group > 0 && av.dim(0) % group == 0, "group_mean: bad shape");
  const std::size_t n = av.dim(0) / group;
  const std::size_t f = av.dim(1);
  Tensor out(Shape{n, f});
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < group; ++g) {
      for (std::size_t j = 0; j < f; ++j) out[i * f + j] += av[(i * group + g) * f + j];
    }
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] *= inv;
  }
  Node nd;
  nd.op = Op::GroupMean;
  nd.inputs = {a.id};
  nd.index = {static_cast<std::uint32_t>(group)};
  nd.needs_grad = node(a).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::relu(Var a) {
  const Tensor& av = node(a).value;
  Tensor out(av.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  Node nd;
  nd.op = Op::Relu;
  nd.inputs = {a.id};
  nd.needs_grad = node(a).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::row_softmax(Var a) {
  const Tensor& av = node(a).value;
  require(av.rank() >= 1, "row_softmax: scalar input");
  const std::size_t cols = last_dim(av);
  Tensor out(av.dims());
  kernels::omp::row_softmax(av.data().data(), out.data().data(), av.size() / cols, cols);
  Node nd;
  nd.op = Op::RowSoftmax;
  nd.inputs = {a.id};
  nd.needs_grad = node(a).needs_grad;
  nd.value = std::move(out);
  return push(std::move(nd));
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = node(logits).value;
  require(lv.rank() == 2, "cross_entropy: logits must be N x C");
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  require(targets.size() == n, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                   std::to_string(n) + " rows");
  require(n > 0, "cross_entropy: no rows");
  for (int t : targets) {
    require(t >= 0 && static_cast<std::size_t>(t) < c, "cross_entropy: target " + std::to_string(t) + " out of range");
  }
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += std::log(z) - (row[targets[i]] - mx);
  }
  Node nd;
  nd.op = Op::CrossEntropy;
  nd.inputs = {logits.id};
  nd.targets.assign(targets.begin(), targets.end());
  nd.saved = std::move(probs);
  nd.needs_grad = node(logits).needs_grad;
  nd.value = Tensor(Shape{}, std::vector<double>{loss / static_cast<double>(n)});
  return push(std::move(nd));
}

void Tape::backward(Var loss) {
  require(loss.id < nodes_.size(), "backward: variable does not belong to this tape");
  require(nodes_[loss.id].value.size() == 1,
          "backward: loss must be scalar, got " + to_string(nodes_[loss.id].value.dims()));
  for (auto& n : nodes_) n.grad.clear();
  Node& root = nodes_[loss.id];
  if (!root.needs_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    backprop(n);
  }
}

void Tape::backprop(const Node& n) {
  auto grad_of = [this](std::size_t id) -> std::vector<double>* {
    Node& in = nodes_[id];
    if (!in.needs_grad) return nullptr;
    if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
    return &in.grad;
  };
  const auto& dy = n.grad;

  switch (n.op) {
    case Op::Leaf: {
      auto g = n.leaf->grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      break;
    }
    case Op::Constant:
      break;
    case Op::MatMul: {
      const Tensor& av = nodes_[n.inputs[0]].value;
      const Tensor& bv = nodes_[n.inputs[1]].value;
      const bool trans_b = n.flag;
      const std::size_t k = av.dims().back();
      const std::size_t m = av.dims()[av.rank() - 2];
      const std::size_t batch = av.rank() == 3 ? av.dim(0) : 1;
      const std::size_t nn = n.value.dims().back();
      const bool broadcast = bv.rank() == 2;
      if (auto* da = grad_of(n.inputs[0])) {
        std::vector<double> tmp(av.size());
        // dA = dY * op(B)^T
        if (broadcast) {
          kernels::omp::matmul(dy.data(), bv.data().data(), tmp.data(), batch * m, nn, k, !trans_b, {});
        } else {
          kernels::BatchShape s{batch, m * nn, k * nn, m * k};
          kernels::omp::matmul(dy.data(), bv.data().data(), tmp.data(), m, nn, k, !trans_b, s);
        }
        for (std::size_t i = 0; i < tmp.size(); ++i) (*da)[i] += tmp[i];
      }
      if (auto* db = grad_of(n.inputs[1])) {
        const double* lhs = trans_b ? dy.data() : av.data().data();
        const double* rhs = trans_b ? av.data().data() : dy.data();
        const std::size_t lw = trans_b ? nn : k;
        const std::size_t rw = trans_b ? k : nn;
        if (broadcast) {
          kernels::omp::matmul_tn_acc(lhs, rhs, db->data(), batch * m, lw, rw, {});
        } else {
          kernels::BatchShape s{batch, m * lw, m * rw, lw * rw};
          kernels::omp::matmul_tn_acc(lhs, rhs, db->data(), m, lw, rw, s);
        }
      }
      break;
    }
    case Op::Add: {
      if (auto* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
      }
      if (auto* db = grad_of(n.inputs[1])) {
        const std::size_t inner = db->size();
        for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i % inner] += dy[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor& av = nodes_[n.inputs[0]].value;
      const Tensor& bv = nodes_[n.inputs[1]].value;
      if (auto* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
      }
      if (auto* db = grad_of(n.inputs[1])) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
      }
      break;
    }
    case Op::Scale: {
      if (auto* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * n.scalar;
      }
      break;
    }
    case Op::Sum: {
      if (auto* da = grad_of(n.inputs[0])) {
        for (auto& g : *da) g += dy[0];
      }
      break;
    }
    case Op::Concat: {
      const std::size_t total = n.value.dims().back();
      const std::size_t rows = n.value.size() / total;
      std::size_t offset = 0;
      for (std::size_t id : n.inputs) {
        const std::size_t w = nodes_[id].value.dims().back();
        if (auto* dp = grad_of(id)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) (*dp)[r * w + j] += dy[r * total + offset + j];
          }
        }
        offset += w;
      }
      break;
    }
    case Op::Reshape: {
      if (auto* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
      }
      break;
    }
    case Op::GatherRow: {
      if (auto* dt = grad_of(n.inputs[0])) {
        const std::size_t f = n.value.dim(1);
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          for (std::size_t j = 0; j < f; ++j) (*dt)[n.index[r] * f + j] += dy[r * f + j];
        }
      }
      break;
    }
    case Op::GroupMean: {
      if (auto* da = grad_of(n.inputs[0])) {
        const std::size_t group = n.index[0];
        const std::size_t f = n.value.dim(1);
        const std::size_t rows = n.value.dim(0);
        const double inv = 1.0 / static_cast<double>(group);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t g = 0; g < group; ++g) {
            for (std::size_t j = 0; j < f; ++j) (*da)[(i * group + g) * f + j] += dy[i * f + j] * inv;
          }
        }
      }
      break;
    }
    case Op::Relu: {
      if (auto* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (n.value[i] > 0.0) (*da)[i] += dy[i];
        }
      }
      break;
    }
    case Op::RowSoftmax: {
      if (auto* da = grad_of(n.inputs[0])) {
        const std::size_t cols = last_dim(n.value);
        const std::size_t rows = n.value.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data().data() + r * cols;
          const double* g = dy.data() + r * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < cols; ++j) (*da)[r * cols + j] += y[j] * (g[j] - dot);
        }
      }
      break;
    }
    case Op::CrossEntropy: {
      if (auto* da = grad_of(n.inputs[0])) {
        const std::size_t rows = n.targets.size();
        const std::size_t c = n.saved.size() / rows;
        const double s = dy[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<int>(j) == n.targets[i] ? 1.0 : 0.0;
            (*da)[i * c + j] += s * (n.saved[i * c + j] - onehot);
          }
        }
      }
      break;
    }
  }
}

void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& cfg) {
  for (const Tensor* p : params) {
    for (double g : p->grad()) {
      if (!std::isfinite(g)) throw Error("non-finite gradient encountered; aborting update");
    }
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("optimizer state does not match parameter list");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw Error("optimizer state shape mismatch");
    auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

GradCheckReport finite_difference_check(std::span<const NamedTensor> tensors,
                                        const std::function<double()>& loss, double eps,
                                        double threshold) {
  GradCheckReport report;
  report.threshold = threshold;
  for (const auto& nt : tensors) {
    Tensor& t = *nt.tensor;
    TensorCheck tc{nt.name, t.size(), 0.0, 0};
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = loss();
      t[i] = saved - eps;
      const double down = loss();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = t.grad()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      tc.max_rel_err = std::max(tc.max_rel_err, rel);
      if (rel > threshold) ++tc.flagged;
    }
    report.max_rel_err = std::max(report.max_rel_err, tc.max_rel_err);
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace pep::grad
