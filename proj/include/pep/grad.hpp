#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors of
// rank <= 3, plus the Adam optimizer.
//
// Values are computed eagerly as operations are recorded on a Tape. Leaves
// bind to caller-owned Tensors; backward() accumulates into the `grad` of
// every leaf Tensor that requires it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pep::grad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& dims);
std::string to_string(const Shape& dims);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, bool requires_grad = false);
  Tensor(Shape dims, std::vector<double> data, bool requires_grad = false);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad();

  bool operator==(const Tensor& other) const {
    return dims_ == other.dims_ && data_ == other.data_;
  }

 private:
  Shape dims_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class Op {
  Leaf,
  Constant,
  MatMul,
  Add,
  Mul,
  Scale,
  Sum,
  Concat,
  Reshape,
  GatherRow,
  GroupMean,
  Relu,
  RowSoftmax,
  CrossEntropy,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Binds a caller-owned tensor; it must outlive backward().
  Var leaf(Tensor& t);
  Var constant(Tensor t);

  // a (.., m, k) times b. b is rank 2 (k x n, broadcast over a's batch) or,
  // when a is rank 3, a same-batch rank-3 tensor. trans_b uses b as n x k.
  Var matmul(Var a, Var b, bool trans_b = false);
  // Elementwise sum; b may match a's trailing dims and broadcast over the rest.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sum(Var a);
  // Concatenates along the last axis; all leading dims must agree.
  Var concat(std::span<const Var> parts);
  Var reshape(Var a, Shape dims);
  // Rows of a rank-2 table selected by index.
  Var gather_row(Var table, std::vector<std::uint32_t> rows);
  // Mean over consecutive groups of `group` rows of a rank-2 tensor.
  Var group_mean(Var a, std::size_t group);
  Var relu(Var a);
  // Softmax over the last axis.
  Var row_softmax(Var a);
  // Mean over rows of -log softmax(logits)[target]; logits is N x C.
  Var cross_entropy(Var logits, std::span<const int> targets);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Propagates d(loss)/d(.) through the recorded graph. loss must be scalar.
  void backward(Var loss);

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* leaf = nullptr;
    bool flag = false;
    double scalar = 0.0;
    std::vector<std::uint32_t> index;
    std::vector<int> targets;
    std::vector<double> saved;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void backprop(const Node& n);

  std::vector<Node> nodes_;
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long t = 0;
};

// One bias-corrected Adam update of every tensor, using its accumulated grad.
// Throws pep::Error on a non-finite gradient without touching any parameter.
void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& cfg);

struct TensorCheck {
  std::string name;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
  std::size_t flagged = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_err = 0.0;
  double threshold = 1e-4;
  bool passed() const { return max_rel_err <= threshold; }
};

struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
};

// Compares the analytic gradients already accumulated in each tensor's grad
// with central differences of `loss`, one coordinate at a time.
// rel_err = |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_difference_check(std::span<const NamedTensor> tensors,
                                        const std::function<double()>& loss, double eps = 1e-3,
                                        double threshold = 1e-4);

}  // namespace pep::grad
