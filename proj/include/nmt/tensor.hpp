#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nmt {

// Value-semantics handle onto a shared buffer. Copying a Tensor aliases the
// underlying storage; ops allocate new storage for their outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  int dim(int axis) const;  // negative axis counts from the end
  long numel() const;

  // Handle semantics: a const Tensor still exposes its shared buffers
  // mutably, like a pointer would.
  std::vector<float>& value() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // Lazily allocated, zero-filled gradient buffer of the same shape.
  std::vector<float>& grad() const;
  bool has_grad() const;
  void zero_grad() const;

  float item() const;  // scalar tensors only

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  struct Data {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

// Records one backward closure per op in execution order; backward() replays
// them in reverse, which visits the graph in reverse topological order.
class Tape {
 public:
  Tape() = default;
  // grad_enabled=false skips closure recording entirely (inference mode).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D, or batched 3-D
  Tensor add(const Tensor& a, const Tensor& b);     // same shape
  Tensor mul(const Tensor& a, const Tensor& b);     // same shape, elementwise
  Tensor scale(const Tensor& a, float factor);
  Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias over last dim
  Tensor transpose(const Tensor& a);                     // swap last two dims
  Tensor permute(const Tensor& a, const std::vector<int>& axes);
  Tensor reshape(const Tensor& a, std::vector<int> shape);
  Tensor concat(const std::vector<Tensor>& parts, int axis);
  Tensor slice(const Tensor& a, int axis, int start, int length);
  Tensor relu(const Tensor& a);
  Tensor softmax(const Tensor& a, int axis);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    float eps);
  // Identity (the same handle) when train is false or p == 0.
  Tensor dropout(const Tensor& a, float p, bool train, std::uint64_t seed);
  // Rows of `table` gathered by id; output shape (len(ids), d).
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
  // Mean token-level negative log-likelihood over non-pad targets.
  // logits (N, V), targets length N. Scalar output.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                       int pad_index, float label_smoothing = 0.0f);
  Tensor sum(const Tensor& a);  // scalar output

  // Seeds d(loss)/d(loss) = 1 and replays the tape backwards, accumulating
  // into .grad() of every tracked tensor. Throws NonScalarLoss.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  void record(const Tensor& out, std::function<void()> fn);
  std::vector<std::function<void()>> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace nmt
