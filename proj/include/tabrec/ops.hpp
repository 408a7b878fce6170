#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tabrec/tensor.hpp"

// Differentiable primitives. Every op records a backward closure on the
// thread's active tape when at least one input requires a gradient; with no
// active tape ops run forward-only.
namespace tabrec::ops {

inline constexpr double kLayerNormEps = 1e-5;

/// a[m x k] . b[k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise sum/product of equally shaped tensors.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., n] + bias[n], broadcast over leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// x[c, ...] + v[c], broadcast over trailing axes.
template <typename T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& v);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Numerically stable softmax along `axis` (max-subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Per-row normalization over the last axis, then gain * x_hat + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = kLayerNormEps);

/// Per-channel normalization of x[c, ...] over trailing axes with channel affine.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                        double eps = kLayerNormEps);

/// Cross-correlation of x[c_in, h, w] with kernels[c_out, c_in, kh, kw].
/// `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

/// Mean over trailing axes of x[c, ...] -> [c].
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x);

/// Unfolds a feature grid x[k, h, w] column by column (left to right, each
/// column top to bottom) into a sequence [w*h, k].
template <typename T>
Tensor<T> grid_to_sequence(const Tensor<T>& x);

/// Rows of table[v, d] selected by ids -> [ids.size(), d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

/// Rows of x[t, d] selected by index -> [index.size(), d].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);

/// Each row of x[n, d] repeated `times` consecutively -> [n*times, d].
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Restricts which keys each query may see.
/// block == 0: every query sees every key (causal then needs equal lengths).
/// block  > 0: queries and keys are cut into consecutive blocks of `block`
///             rows and a query only sees keys of its own block.
/// causal: within the visible range, query i sees keys 0..i only.
struct AttentionMask {
  std::size_t block = 0;
  bool causal = false;
};

/// Scaled dot-product attention over `heads` column groups of q[tq, d],
/// k[tk, d], v[tk, d]. Returns [tq, d].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    AttentionMask mask);

/// Mean negative log-likelihood of targets under softmax(logits[t, v]) over
/// positions whose target differs from ignore_id. Zero (with zero gradient)
/// when every position is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id);

/// Mean |pred - target| over elements with mask != 0 (an empty mask selects
/// everything). Zero when nothing is selected. Subgradient at 0 is 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target,
                  std::span<const std::uint8_t> mask = {});

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// sum_i weights[i] * terms[i] over scalar tensors, accumulated in double.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights);

}  // namespace tabrec::ops
