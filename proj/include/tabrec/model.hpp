#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tabrec/batch.hpp"
#include "tabrec/image_io.hpp"
#include "tabrec/layers.hpp"
#include "tabrec/optim.hpp"
#include "tabrec/tensor.hpp"

namespace tabrec {

struct BackboneConfig {
  std::vector<int> channels{16, 32, 64};
  std::vector<int> strides{2, 2, 2};
  bool global_context = true;
  int context_ratio = 4;  // bottleneck width = max(1, channels / ratio)

  int total_stride() const;
};

struct OptimConfig {
  double learning_rate = 1e-3;
  int decay_epoch = 12;  // epochs at the base rate before multiplying by decay_factor
  double decay_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  StepSchedule schedule() const { return {learning_rate, decay_epoch, decay_factor}; }
  AdamConfig adam() const { return {beta1, beta2, eps}; }
};

/// Architecture and training hyperparameters.
///
/// Sequence limits count the framed sequence, SOS and EOS included: a table
/// with n structure tokens needs n + 2 <= max_struct_len, a cell with m
/// characters needs m + 2 <= max_cell_len.
struct ModelConfig {
  int image_height = 160;
  int image_width = 160;
  int image_channels = 1;
  int d_model = 64;
  int ff_size = 256;
  int n_heads = 4;
  int n_shared_layers = 2;
  int max_struct_len = 128;
  int max_cell_len = 16;
  int max_span = 10;
  int struct_vocab_size = 32;
  int content_vocab_size = 99;
  BackboneConfig backbone;
  double lambda_struct = 1.0;
  double lambda_content = 1.0;
  double lambda_bbox = 1.0;
  OptimConfig optim;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  int grid_height() const { return image_height / backbone.total_stride(); }
  int grid_width() const { return image_width / backbone.total_stride(); }

  /// 160x160 gray input, d_model 64, three stride-2 stages (20x20 grid).
  static ModelConfig desk();
  /// Published geometry: 480x480x3, d_model 512, FFN 2048, 8 heads, 60x60 grid.
  static ModelConfig full_scale();
  /// 16x16 input with d_model 16 and 2 heads, for exhaustive gradient checks.
  static ModelConfig tiny();

  bool operator==(const ModelConfig&) const = default;
};

bool operator==(const BackboneConfig& a, const BackboneConfig& b);
bool operator==(const OptimConfig& a, const OptimConfig& b);

/// Closed-form parameter count. With d = d_model, f = ff_size, Vs/Vc the
/// vocabulary sizes, c_i the stage widths (c_{-1} = image channels), and
/// r_i = max(1, c_i / context_ratio):
///
///   layer(d, f) = 8(d^2 + d) + 2df + f + 7d
///   stage_i     = 9 c_{i-1} c_i + 3 c_i          (strided conv + norm)
///               + 2 (9 c_i^2 + 3 c_i)            (residual pair)
///               + [gc] (2 c_i r_i + r_i + c_i)
///   total       = sum_i stage_i + (c_last d + d)  (1x1 projection)
///               + (N + 3) layer(d, f)
///               + Vs d + Vc d                     (embeddings)
///               + (d Vs + Vs) + (d Vc + Vc) + (4d + 4)
std::size_t parameter_count(const ModelConfig& config);

/// Flattened, position-encoded feature grid plus each decoder layer's
/// cross-attention keys/values over it.
template <typename T>
struct EncoderMemory {
  Tensor<T> features;  // [grid_h * grid_w, d_model]
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<KeyValue<T>> cross_kv;  // shared layers..., structure, bbox, content

  std::size_t length() const { return features.dim(0); }
};

struct LossWeights {
  double structure = 1.0;
  double content = 1.0;
  double bbox = 1.0;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> structure;
  Tensor<T> content;
  Tensor<T> bbox;
};

struct LossValues {
  double total = 0;
  double structure = 0;
  double content = 0;
  double bbox = 0;
};

template <typename T>
LossValues values_of(const LossBreakdown<T>& b) {
  return {static_cast<double>(b.total.item()), static_cast<double>(b.structure.item()),
          static_cast<double>(b.content.item()), static_cast<double>(b.bbox.item())};
}

/// The multi-task table recognizer: shared CNN encoder, shared decoder, and
/// structure / cell-bbox / cell-content heads.
template <typename T>
class TableModel {
 public:
  TableModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterList<T>& parameters() { return params_; }
  const ParameterList<T>& parameters() const { return params_; }

  /// Image (config size, values in [0,1]) -> memory of grid_h * grid_w rows.
  EncoderMemory<T> encode(const Image& image) const;

  /// Right-shifted structure ids [T] -> hidden states [T, d_model].
  Tensor<T> shared_decode(const EncoderMemory<T>& memory, std::span<const int> ids) const;

  /// Hidden states [T, d_model] -> structure logits [T, struct_vocab_size].
  Tensor<T> structure_head(const Tensor<T>& hidden, const EncoderMemory<T>& memory) const;

  /// Trigger hidden states [n, d_model] -> boxes [n, 4] in (0, 1), each cell
  /// an independent length-1 query.
  Tensor<T> bbox_head(const Tensor<T>& cell_hidden, const EncoderMemory<T>& memory) const;

  /// Trigger hidden states [n, d_model] and right-shifted character ids
  /// [n * length] -> character logits [n * length, content_vocab_size].
  Tensor<T> content_decode(const EncoderMemory<T>& memory, const Tensor<T>& cell_hidden, std::span<const int> ids,
                           std::size_t length) const;

  LossWeights loss_weights() const { return {config_.lambda_struct, config_.lambda_content, config_.lambda_bbox}; }

 private:
  std::size_t content_layer_index() const { return static_cast<std::size_t>(config_.n_shared_layers) + 2; }

  ModelConfig config_;
  ParameterList<T> params_;
  std::vector<BackboneStage<T>> stages_;
  Tensor<T> proj_kernels_, proj_bias_;
  Tensor<T> struct_embedding_, char_embedding_;
  std::vector<IdenticalLayer<T>> shared_layers_;
  IdenticalLayer<T> structure_layer_, bbox_layer_, content_layer_;
  Linear<T> structure_out_, bbox_out_, content_out_;
  std::vector<T> memory_pe_, struct_pe_, cell_pe_;
};

/// Weighted multi-task objective for one sample:
///   L = l_s * CE(structure) + l_c * CE(content) + l_b * L1(bbox, masked).
/// bbox_preds/bbox_targets are [n, 4] (undefined when n == 0) and bbox_mask
/// has n entries. Throws ShapeError on misaligned supervision.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& struct_logits, std::span<const int> struct_targets,
                            const Tensor<T>& bbox_preds, const Tensor<T>& bbox_targets,
                            std::span<const std::uint8_t> bbox_mask, const Tensor<T>& content_logits,
                            std::span<const int> content_targets, const LossWeights& weights);

/// Teacher-forced loss of a batch: per-part mean over samples, then weighted sum.
template <typename T>
LossBreakdown<T> batch_loss(const TableModel<T>& model, const Batch& batch, const LossWeights& weights);

/// Forward all three tasks, one backward pass, one optimizer step.
template <typename T>
LossValues train_step(TableModel<T>& model, Adam<T>& optimizer, const Batch& batch, double lr);

}  // namespace tabrec
