#pragma once

#include <span>
#include <vector>

#include "homotion/tensor/tensor.hpp"

// Differentiable operations. Each records its adjoint on the active tape when
// any input requires gradients; otherwise it is a plain computation.
namespace homotion::tensor {

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);  // subgradient 0 at 0
Tensor sigmoid(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// [.., m, k] x [.., k, n] -> [.., m, n]; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
// Inserts a new axis of length `count` at `axis`, repeating the input.
Tensor broadcast(const Tensor& a, std::size_t axis, std::size_t count);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdim = false);
Tensor mean_pool(const Tensor& a);
Tensor mean_pool(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdim = false);

// Euclidean norm over the last axis, which is removed. Zero vectors get a
// zero gradient.
Tensor l2norm(const Tensor& a);

// x: [C_in, ..., T, V], w: [C_out, C_in, G], b: [C_out]. 1-D convolution
// along T per node V with (G-1)/2 zero frames of padding on each end.
Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& b);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

// Per-channel normalization of x: [C, ...]. Training mode normalizes with
// batch statistics and updates `state`; evaluation uses the frozen running
// statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum = 0.1, double eps = 1e-5);

// Exponential map from rotation vectors [.., 3] to matrices [.., 3, 3].
Tensor rodrigues(const Tensor& r);

}  // namespace homotion::tensor
