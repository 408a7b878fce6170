#include "tabrec/layers.hpp"

#include <cmath>

namespace tabrec {

template <typename T>
Tensor<T> ParameterList<T>::add(std::string name, Shape shape, Init init, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n, T(0));
  if (init == Init::kOnes) {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init == Init::kNormal) {
    for (auto& v : values) v = static_cast<T>(rng.truncated_normal(kInitStd));
  }
  Tensor<T> t(std::move(shape), std::move(values), true);
  entries_.emplace_back(std::move(name), t);
  return t;
}

template <typename T>
std::vector<Tensor<T>> ParameterList<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

template <typename T>
std::size_t ParameterList<T>::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
const Tensor<T>* ParameterList<T>::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

template <typename T>
void ParameterList<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
Linear<T> Linear<T>::make(ParameterList<T>& params, const std::string& name, std::size_t in, std::size_t out,
                          Rng& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", {in, out}, Init::kNormal, rng);
  l.bias = params.add(name + ".bias", {out}, Init::kZeros, rng);
  return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParameterList<T>& params, const std::string& name, std::size_t width, Rng& rng) {
  LayerNorm n;
  n.gain = params.add(name + ".gain", {width}, Init::kOnes, rng);
  n.bias = params.add(name + ".bias", {width}, Init::kZeros, rng);
  return n;
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::make(ParameterList<T>& params, const std::string& name,
                                                  std::size_t d_model, std::size_t heads, Rng& rng) {
  MultiHeadAttention a;
  a.query = Linear<T>::make(params, name + ".query", d_model, d_model, rng);
  a.key = Linear<T>::make(params, name + ".key", d_model, d_model, rng);
  a.value = Linear<T>::make(params, name + ".value", d_model, d_model, rng);
  a.output = Linear<T>::make(params, name + ".output", d_model, d_model, rng);
  a.heads = heads;
  return a;
}

template <typename T>
IdenticalLayer<T> IdenticalLayer<T>::make(ParameterList<T>& params, const std::string& name, std::size_t d_model,
                                          std::size_t ff_size, std::size_t heads, Rng& rng) {
  IdenticalLayer l;
  l.self_attention = MultiHeadAttention<T>::make(params, name + ".self", d_model, heads, rng);
  l.cross_attention = MultiHeadAttention<T>::make(params, name + ".cross", d_model, heads, rng);
  l.ff_in = Linear<T>::make(params, name + ".ff_in", d_model, ff_size, rng);
  l.ff_out = Linear<T>::make(params, name + ".ff_out", ff_size, d_model, rng);
  l.norm_self = LayerNorm<T>::make(params, name + ".norm_self", d_model, rng);
  l.norm_cross = LayerNorm<T>::make(params, name + ".norm_cross", d_model, rng);
  l.norm_ff = LayerNorm<T>::make(params, name + ".norm_ff", d_model, rng);
  return l;
}

template <typename T>
std::size_t IdenticalLayer<T>::parameter_count(std::size_t d, std::size_t ff) {
  // two attentions of four d x d projections with bias, FFN, three norms
  return 8 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 6 * d;
}

template <typename T>
Tensor<T> IdenticalLayer<T>::forward(const Tensor<T>& x, const KeyValue<T>& memory_kv,
                                     ops::AttentionMask self_mask) const {
  const Tensor<T> h1 = norm_self(ops::add(x, self_attention(x, self_attention.project(x), self_mask)));
  const Tensor<T> h2 = norm_cross(ops::add(h1, cross_attention(h1, memory_kv, {})));
  return norm_ff(ops::add(h2, ff_out(ops::relu(ff_in(h2)))));
}

template <typename T>
ConvNorm<T> ConvNorm<T>::make(ParameterList<T>& params, const std::string& name, std::size_t in, std::size_t out,
                              std::size_t stride, Rng& rng) {
  ConvNorm c;
  c.kernels = params.add(name + ".kernels", {out, in, 3, 3}, Init::kNormal, rng);
  c.bias = params.add(name + ".bias", {out}, Init::kZeros, rng);
  c.gain = params.add(name + ".norm.gain", {out}, Init::kOnes, rng);
  c.shift = params.add(name + ".norm.bias", {out}, Init::kZeros, rng);
  c.stride = stride;
  c.padding = 1;
  return c;
}

template <typename T>
Tensor<T> ConvNorm<T>::operator()(const Tensor<T>& x, bool activate) const {
  Tensor<T> y = ops::instance_norm(ops::conv2d(x, kernels, bias, stride, padding), gain, shift);
  return activate ? ops::relu(y) : y;
}

template <typename T>
GlobalContext<T> GlobalContext<T>::make(ParameterList<T>& params, const std::string& name, std::size_t channels,
                                        std::size_t hidden, Rng& rng) {
  GlobalContext g;
  g.squeeze = Linear<T>::make(params, name + ".squeeze", channels, hidden, rng);
  g.expand = Linear<T>::make(params, name + ".expand", hidden, channels, rng);
  return g;
}

template <typename T>
Tensor<T> GlobalContext<T>::operator()(const Tensor<T>& x) const {
  const std::size_t c = x.dim(0);
  const Tensor<T> pooled = ops::reshape(ops::spatial_mean(x), {1, c});
  const Tensor<T> ctx = expand(ops::relu(squeeze(pooled)));
  return ops::add_channel(x, ops::reshape(ctx, {c}));
}

template <typename T>
Tensor<T> BackboneStage<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> y = down(x, true);
  const Tensor<T> r = res_b(res_a(y, true), false);
  Tensor<T> out = ops::relu(ops::add(y, r));
  return context ? (*context)(out) : out;
}

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<double> pe(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

template class ParameterList<float>;
template class ParameterList<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct IdenticalLayer<float>;
template struct IdenticalLayer<double>;
template struct ConvNorm<float>;
template struct ConvNorm<double>;
template struct GlobalContext<float>;
template struct GlobalContext<double>;
template struct BackboneStage<float>;
template struct BackboneStage<double>;

}  // namespace tabrec
