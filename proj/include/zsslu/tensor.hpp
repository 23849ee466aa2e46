#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace zsslu {

using Shape = std::vector<int>;

std::string format_shape(const Shape& shape);
int64_t shape_numel(const Shape& shape);

class Tape;

// Dense row-major tensor of 64-bit floats. Data is shared between copies and
// never mutated by ops; every op allocates a fresh output. `node` ties a
// tensor produced by an op to its tape; persistent parameters instead set
// `requires_grad` and are registered as leaves on first use.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  int node = -1;
  bool requires_grad = false;

  Tensor() : data(std::make_shared<std::vector<double>>()) {}
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(Shape s, double stddev, class Rng& rng);

  int64_t numel() const { return static_cast<int64_t>(data->size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int axis) const { return shape[static_cast<size_t>(axis)]; }

  double& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
  // 2-D accessors; row-major.
  double& at(int r, int c) { return (*data)[static_cast<size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return (*data)[static_cast<size_t>(r) * shape[1] + c]; }

  double item() const;
  bool on_tape() const { return node >= 0; }
};

// Boolean attention mask, rows = queries, cols = keys; true = may attend.
struct BoolMat {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  BoolMat() = default;
  BoolMat(int r, int c, bool fill) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill ? 1 : 0) {}
  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  bool at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c] != 0; }
  static BoolMat all_true(int r, int c) { return BoolMat(r, c, true); }
};

// Reverse-mode tape. Nodes are appended in forward order (so inputs always
// precede consumers) and the backward sweep walks them once, in reverse.
// A tape lives for one forward+backward pass; independent tapes may run in
// parallel threads. Parameters stay const during forward: their leaf node ids
// live in a tape-local map keyed by data pointer.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  // Node id for a tensor already tracked on this tape, creating a leaf entry
  // for requires_grad tensors on first sight. Returns -1 for untracked input.
  int tracked_id(const Tensor& t);

  // Records an op node; out_numel sizes the node's gradient buffer.
  int record(std::vector<int> inputs, int64_t out_numel, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  // Idempotent: gradients are cleared and recomputed on every call.
  void backward(const Tensor& loss);

  // Gradient of any tensor touched by the last backward; zeros if the tensor
  // never influenced the loss.
  std::vector<double> grad(const Tensor& t) const;

  std::vector<double>& grad_buffer(int node_id);
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> inputs;
    int64_t numel;
    BackwardFn backward;  // null for leaves
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_ids_;
};

// --- Primitive ops. Each records a tape node when `tape` is non-null and any
// --- input is tracked; otherwise it is a plain computation.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose(const Tensor& a, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);
// x: [... x d], bias: [d]; broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);
Tensor softmax(const Tensor& x, int axis, Tape* tape = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5,
                  Tape* tape = nullptr);
Tensor gelu(const Tensor& x, Tape* tape = nullptr);
Tensor concat(const std::vector<Tensor>& parts, int axis, Tape* tape = nullptr);
// Copying slice of [start, end) along `axis`.
Tensor slice(const Tensor& x, int axis, int start, int end, Tape* tape = nullptr);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Tape* tape = nullptr);
// Mean negative log-likelihood over unmasked rows of [n x V] logits.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);
// scores: [q x k]; masked-out entries become -inf. Throws if a query row is
// fully masked (softmax would otherwise produce NaN).
Tensor apply_mask(const Tensor& scores, const BoolMat& mask, Tape* tape = nullptr);

}  // namespace zsslu
