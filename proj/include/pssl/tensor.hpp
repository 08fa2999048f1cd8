#pragma once

// Dense-tensor compute layer with reverse-mode differentiation. Only the
// kernels the encoders and losses need; rank 0..2 shapes, f64 storage,
// single-threaded and deterministic. Every op traps non-finite outputs.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pssl/common.hpp"

namespace pssl {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use, same length as value
    bool requires_grad = false;  // leaf flag: accumulate gradient here
    bool needs_grad = false;     // this or some ancestor requires grad
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // pushes node.grad into parents

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->size(); }
    std::int64_t rows() const;
    std::int64_t cols() const;

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values_mut() { return node_->value; }
    const std::vector<double>& grad() const;
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) {
        node_->requires_grad = b;
        node_->needs_grad = b;
    }
    void zero_grad() {
        node_->grad.assign(node_->value.size(), 0.0);
    }

    std::shared_ptr<TensorNode> node() const { return node_; }
    TensorNode* raw() const { return node_.get(); }

private:
    std::shared_ptr<TensorNode> node_;
};

// Kernels. Matrices are row-major {rows, cols}; vectors {n}; scalars {}.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);              // same shape
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise, same shape
Tensor add_rowvec(const Tensor& m, const Tensor& v);       // {r,c} + {c}
Tensor mul_rowvec(const Tensor& m, const Tensor& v);       // {r,c} * {c}
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);                          // log(1 + e^x), stable
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::int64_t row0, std::int64_t nrows);
Tensor slice_cols(const Tensor& a, std::int64_t col0, std::int64_t ncols);
Tensor sum_axis0(const Tensor& a);   // {r,c} -> {c}
Tensor mean_axis0(const Tensor& a);  // {r,c} -> {c}
Tensor sum_all(const Tensor& a);     // -> scalar
Tensor mean_all(const Tensor& a);    // -> scalar
Tensor reshape(const Tensor& a, Shape shape);  // same element count
Tensor stack_scalars(const std::vector<Tensor>& scalars);  // -> {n}
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

// Reverse-mode pass from a scalar loss. Accumulates into the .grad of every
// reachable node whose subtree requires grad; repeated calls keep adding.
void backward(const Tensor& loss);

// Embedding-lookup gradients never touch this row (it stays a zero vector).
inline constexpr std::int32_t kPadRow = 0;

}  // namespace pssl
