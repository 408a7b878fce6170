#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tabrec/ops.hpp"
#include "tabrec/rng.hpp"
#include "tabrec/tensor.hpp"

namespace tabrec {

enum class Init { kNormal, kZeros, kOnes };

inline constexpr double kInitStd = 0.02;

/// Named trainable tensors in registration order.
template <typename T>
class ParameterList {
 public:
  Tensor<T> add(std::string name, Shape shape, Init init, Rng& rng);

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  /// Total number of scalar parameters.
  std::size_t count() const;
  const Tensor<T>* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear make(ParameterList<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNorm make(ParameterList<T>& params, const std::string& name, std::size_t width, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gain, bias); }
};

template <typename T>
struct KeyValue {
  Tensor<T> key;
  Tensor<T> value;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParameterList<T>& params, const std::string& name, std::size_t d_model,
                                 std::size_t heads, Rng& rng);
  KeyValue<T> project(const Tensor<T>& source) const { return {key(source), value(source)}; }
  Tensor<T> operator()(const Tensor<T>& x, const KeyValue<T>& kv, ops::AttentionMask mask) const {
    return output(ops::attention(query(x), kv.key, kv.value, heads, mask));
  }
};

/// Transformer decoder layer: masked self-attention, cross-attention over the
/// encoder memory, position-wise feed-forward; each sub-layer is followed by a
/// residual add and layer norm.
template <typename T>
struct IdenticalLayer {
  MultiHeadAttention<T> self_attention, cross_attention;
  Linear<T> ff_in, ff_out;
  LayerNorm<T> norm_self, norm_cross, norm_ff;

  static IdenticalLayer make(ParameterList<T>& params, const std::string& name, std::size_t d_model,
                             std::size_t ff_size, std::size_t heads, Rng& rng);
  static std::size_t parameter_count(std::size_t d_model, std::size_t ff_size);

  KeyValue<T> project_memory(const Tensor<T>& memory) const { return cross_attention.project(memory); }
  Tensor<T> forward(const Tensor<T>& x, const KeyValue<T>& memory_kv, ops::AttentionMask self_mask) const;
};

/// conv -> instance norm (-> relu).
template <typename T>
struct ConvNorm {
  Tensor<T> kernels, bias, gain, shift;
  std::size_t stride = 1;
  std::size_t padding = 1;

  static ConvNorm make(ParameterList<T>& params, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t stride, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, bool activate) const;
};

/// Simplified global-context block: global average pool, two-layer
/// bottleneck, result added to every position of its channel.
template <typename T>
struct GlobalContext {
  Linear<T> squeeze, expand;

  static GlobalContext make(ParameterList<T>& params, const std::string& name, std::size_t channels,
                            std::size_t hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Strided conv block followed by one residual block and an optional
/// global-context block.
template <typename T>
struct BackboneStage {
  ConvNorm<T> down, res_a, res_b;
  std::optional<GlobalContext<T>> context;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Row-major [length, d] sinusoidal position table.
std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d);

}  // namespace tabrec
