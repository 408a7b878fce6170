#include "tabrec/model.hpp"

#include <cmath>

#include "tabrec/errors.hpp"
#include "tabrec/vocab.hpp"

namespace tabrec {

int BackboneConfig::total_stride() const {
  int s = 1;
  for (int v : strides) s *= v;
  return s;
}

bool operator==(const BackboneConfig& a, const BackboneConfig& b) {
  return a.channels == b.channels && a.strides == b.strides && a.global_context == b.global_context &&
         a.context_ratio == b.context_ratio;
}

bool operator==(const OptimConfig& a, const OptimConfig& b) {
  return a.learning_rate == b.learning_rate && a.decay_epoch == b.decay_epoch && a.decay_factor == b.decay_factor &&
         a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(image_height > 0 && image_width > 0, "image extents must be positive");
  require(image_channels == 1 || image_channels == 3, "image_channels must be 1 or 3");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(ff_size > 0, "ff_size must be positive");
  require(n_shared_layers >= 1, "n_shared_layers must be at least 1");
  require(max_struct_len >= 2 && max_cell_len >= 2, "max lengths must leave room for SOS/EOS (>= 2)");
  require(max_span >= 2, "max_span must be at least 2");
  require(struct_vocab_size > Vocab::kNumSpecial && content_vocab_size > Vocab::kNumSpecial,
          "vocabulary sizes must exceed the special tokens");
  require(!backbone.channels.empty() && backbone.channels.size() == backbone.strides.size(),
          "backbone channels and strides must be non-empty and of equal length");
  for (std::size_t i = 0; i < backbone.channels.size(); ++i) {
    require(backbone.channels[i] > 0 && backbone.strides[i] >= 1, "backbone widths and strides must be positive");
  }
  require(backbone.context_ratio >= 1, "context_ratio must be positive");
  const int s = backbone.total_stride();
  require(image_height % s == 0 && image_width % s == 0, "total backbone stride " + std::to_string(s) +
                                                             " must divide the image extents");
  require(lambda_struct >= 0 && lambda_content >= 0 && lambda_bbox >= 0, "loss weights must be non-negative");
  require(optim.learning_rate >= 0 && optim.decay_factor >= 0, "learning rate settings must be non-negative");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.image_height = 480;
  c.image_width = 480;
  c.image_channels = 3;
  c.d_model = 512;
  c.ff_size = 2048;
  c.n_heads = 8;
  c.n_shared_layers = 2;
  c.max_struct_len = 500;
  c.max_cell_len = 150;
  c.backbone.channels = {128, 256, 512};
  c.backbone.strides = {2, 2, 2};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 16;
  c.image_channels = 1;
  c.d_model = 16;
  c.ff_size = 32;
  c.n_heads = 2;
  c.n_shared_layers = 2;
  c.max_struct_len = 16;
  c.max_cell_len = 8;
  c.struct_vocab_size = 32;
  c.content_vocab_size = 24;
  c.backbone.channels = {4, 8};
  c.backbone.strides = {2, 2};
  return c;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.ff_size);
  const std::size_t vs = static_cast<std::size_t>(c.struct_vocab_size);
  const std::size_t vc = static_cast<std::size_t>(c.content_vocab_size);
  std::size_t total = 0;
  std::size_t prev = static_cast<std::size_t>(c.image_channels);
  for (int width : c.backbone.channels) {
    const std::size_t ci = static_cast<std::size_t>(width);
    total += 9 * prev * ci + 3 * ci;
    total += 2 * (9 * ci * ci + 3 * ci);
    if (c.backbone.global_context) {
      const std::size_t r = std::max<std::size_t>(1, ci / static_cast<std::size_t>(c.backbone.context_ratio));
      total += 2 * ci * r + r + ci;
    }
    prev = ci;
  }
  total += prev * d + d;
  const std::size_t layer = 8 * (d * d + d) + 2 * d * f + f + 7 * d;
  total += (static_cast<std::size_t>(c.n_shared_layers) + 3) * layer;
  total += vs * d + vc * d;
  total += (d * vs + vs) + (d * vc + vc) + (4 * d + 4);
  return total;
}

namespace {

template <typename T>
std::vector<T> to_scalar(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

// Rows [0, length) of a position table of width d, tiled `repeats` times.
template <typename T>
Tensor<T> position_rows(const std::vector<T>& table, std::size_t d, std::size_t length, std::size_t repeats = 1) {
  std::vector<T> out;
  out.reserve(length * repeats * d);
  for (std::size_t r = 0; r < repeats; ++r) {
    out.insert(out.end(), table.begin(), table.begin() + static_cast<std::ptrdiff_t>(length * d));
  }
  return Tensor<T>({length * repeats, d}, std::move(out));
}

}  // namespace

template <typename T>
TableModel<T>::TableModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t ff = static_cast<std::size_t>(config_.ff_size);
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);

  std::size_t prev = static_cast<std::size_t>(config_.image_channels);
  const auto& bb = config_.backbone;
  for (std::size_t i = 0; i < bb.channels.size(); ++i) {
    const std::size_t ci = static_cast<std::size_t>(bb.channels[i]);
    const std::string name = "encoder.stage" + std::to_string(i);
    BackboneStage<T> stage;
    stage.down = ConvNorm<T>::make(params_, name + ".down", prev, ci, static_cast<std::size_t>(bb.strides[i]), rng);
    stage.res_a = ConvNorm<T>::make(params_, name + ".res_a", ci, ci, 1, rng);
    stage.res_b = ConvNorm<T>::make(params_, name + ".res_b", ci, ci, 1, rng);
    if (bb.global_context) {
      const std::size_t hidden = std::max<std::size_t>(1, ci / static_cast<std::size_t>(bb.context_ratio));
      stage.context = GlobalContext<T>::make(params_, name + ".context", ci, hidden, rng);
    }
    stages_.push_back(std::move(stage));
    prev = ci;
  }
  proj_kernels_ = params_.add("encoder.proj.kernels", {d, prev, 1, 1}, Init::kNormal, rng);
  proj_bias_ = params_.add("encoder.proj.bias", {d}, Init::kZeros, rng);

  struct_embedding_ =
      params_.add("decoder.struct_embedding", {static_cast<std::size_t>(config_.struct_vocab_size), d}, Init::kNormal, rng);
  for (int i = 0; i < config_.n_shared_layers; ++i) {
    shared_layers_.push_back(IdenticalLayer<T>::make(params_, "decoder.shared" + std::to_string(i), d, ff, heads, rng));
  }
  structure_layer_ = IdenticalLayer<T>::make(params_, "structure.layer", d, ff, heads, rng);
  structure_out_ = Linear<T>::make(params_, "structure.out", d, static_cast<std::size_t>(config_.struct_vocab_size), rng);
  bbox_layer_ = IdenticalLayer<T>::make(params_, "bbox.layer", d, ff, heads, rng);
  bbox_out_ = Linear<T>::make(params_, "bbox.out", d, 4, rng);
  char_embedding_ =
      params_.add("content.char_embedding", {static_cast<std::size_t>(config_.content_vocab_size), d}, Init::kNormal, rng);
  content_layer_ = IdenticalLayer<T>::make(params_, "content.layer", d, ff, heads, rng);
  content_out_ = Linear<T>::make(params_, "content.out", d, static_cast<std::size_t>(config_.content_vocab_size), rng);

  const std::size_t grid = static_cast<std::size_t>(config_.grid_height()) * static_cast<std::size_t>(config_.grid_width());
  memory_pe_ = to_scalar<T>(sinusoidal_positions(grid, d));
  struct_pe_ = to_scalar<T>(sinusoidal_positions(static_cast<std::size_t>(config_.max_struct_len), d));
  cell_pe_ = to_scalar<T>(sinusoidal_positions(static_cast<std::size_t>(config_.max_cell_len), d));
}

template <typename T>
EncoderMemory<T> TableModel<T>::encode(const Image& image) const {
  if (image.height != config_.image_height || image.width != config_.image_width ||
      image.channels != config_.image_channels) {
    throw ShapeError("encode: image " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                     std::to_string(image.channels) + " does not match configured " +
                     std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width) + "x" +
                     std::to_string(config_.image_channels));
  }
  const std::size_t h = static_cast<std::size_t>(image.height), w = static_cast<std::size_t>(image.width);
  const std::size_t c = static_cast<std::size_t>(image.channels);
  std::vector<T> chw(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = image.pixels[(y * w + x) * c + ch];
        if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("encode: pixel values must lie in [0, 1]");
        chw[(ch * h + y) * w + x] = static_cast<T>(v);
      }
    }
  }
  Tensor<T> x({c, h, w}, std::move(chw));
  for (const auto& stage : stages_) x = stage(x);
  x = ops::conv2d(x, proj_kernels_, proj_bias_, 1, 0);

  EncoderMemory<T> mem;
  mem.grid_h = x.dim(1);
  mem.grid_w = x.dim(2);
  const Tensor<T> seq = ops::grid_to_sequence(x);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  mem.features = ops::add(seq, position_rows(memory_pe_, d, seq.dim(0)));
  for (const auto& layer : shared_layers_) mem.cross_kv.push_back(layer.project_memory(mem.features));
  mem.cross_kv.push_back(structure_layer_.project_memory(mem.features));
  mem.cross_kv.push_back(bbox_layer_.project_memory(mem.features));
  mem.cross_kv.push_back(content_layer_.project_memory(mem.features));
  return mem;
}

template <typename T>
Tensor<T> TableModel<T>::shared_decode(const EncoderMemory<T>& memory, std::span<const int> ids) const {
  if (ids.empty() || ids.size() > static_cast<std::size_t>(config_.max_struct_len)) {
    throw ShapeError("shared_decode: sequence length " + std::to_string(ids.size()) + " outside [1, " +
                     std::to_string(config_.max_struct_len) + "]");
  }
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  Tensor<T> x = ops::scale(ops::embedding(struct_embedding_, ids), std::sqrt(static_cast<double>(d)));
  x = ops::add(x, position_rows(struct_pe_, d, ids.size()));
  for (std::size_t i = 0; i < shared_layers_.size(); ++i) {
    x = shared_layers_[i].forward(x, memory.cross_kv[i], {0, true});
  }
  return x;
}

template <typename T>
Tensor<T> TableModel<T>::structure_head(const Tensor<T>& hidden, const EncoderMemory<T>& memory) const {
  const Tensor<T> h = structure_layer_.forward(hidden, memory.cross_kv[shared_layers_.size()], {0, true});
  return structure_out_(h);
}

template <typename T>
Tensor<T> TableModel<T>::bbox_head(const Tensor<T>& cell_hidden, const EncoderMemory<T>& memory) const {
  const Tensor<T> h = bbox_layer_.forward(cell_hidden, memory.cross_kv[shared_layers_.size() + 1], {1, true});
  return ops::sigmoid(bbox_out_(h));
}

template <typename T>
Tensor<T> TableModel<T>::content_decode(const EncoderMemory<T>& memory, const Tensor<T>& cell_hidden,
                                        std::span<const int> ids, std::size_t length) const {
  if (length == 0 || length > static_cast<std::size_t>(config_.max_cell_len)) {
    throw ShapeError("content_decode: length " + std::to_string(length) + " outside [1, " +
                     std::to_string(config_.max_cell_len) + "]");
  }
  const std::size_t n = cell_hidden.dim(0);
  if (ids.size() != n * length) {
    throw ShapeError("content_decode: " + std::to_string(ids.size()) + " ids for " + std::to_string(n) +
                     " cells of length " + std::to_string(length));
  }
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  Tensor<T> x = ops::scale(ops::embedding(char_embedding_, ids), std::sqrt(static_cast<double>(d)));
  x = ops::add(x, position_rows(cell_pe_, d, length, n));
  x = ops::add(x, ops::repeat_rows(cell_hidden, length));
  const Tensor<T> h = content_layer_.forward(x, memory.cross_kv[content_layer_index()], {length, true});
  return content_out_(h);
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& struct_logits, std::span<const int> struct_targets,
                            const Tensor<T>& bbox_preds, const Tensor<T>& bbox_targets,
                            std::span<const std::uint8_t> bbox_mask, const Tensor<T>& content_logits,
                            std::span<const int> content_targets, const LossWeights& weights) {
  LossBreakdown<T> out;
  out.structure = ops::cross_entropy(struct_logits, struct_targets, Vocab::kPad);
  if (bbox_preds.defined()) {
    if (!bbox_targets.defined() || bbox_preds.shape() != bbox_targets.shape() || bbox_preds.dim(1) != 4 ||
        bbox_mask.size() != bbox_preds.dim(0)) {
      throw ShapeError("total_loss: bbox predictions " + shape_str(bbox_preds.shape()) + " misaligned with " +
                       std::to_string(bbox_mask.size()) + " supervised cells");
    }
    std::vector<std::uint8_t> elementwise;
    elementwise.reserve(bbox_mask.size() * 4);
    for (std::uint8_t m : bbox_mask) elementwise.insert(elementwise.end(), 4, m);
    out.bbox = ops::l1_loss(bbox_preds, bbox_targets, elementwise);
  } else {
    if (!bbox_mask.empty()) throw ShapeError("total_loss: bbox mask given without predictions");
    out.bbox = Tensor<T>::scalar(T(0));
  }
  if (content_logits.defined()) {
    out.content = ops::cross_entropy(content_logits, content_targets, Vocab::kPad);
  } else {
    if (!content_targets.empty()) throw ShapeError("total_loss: content targets given without logits");
    out.content = Tensor<T>::scalar(T(0));
  }
  const std::vector<Tensor<T>> parts{out.structure, out.content, out.bbox};
  const std::vector<double> w{weights.structure, weights.content, weights.bbox};
  out.total = ops::weighted_sum<T>(parts, w);
  return out;
}

template <typename T>
LossBreakdown<T> batch_loss(const TableModel<T>& model, const Batch& batch, const LossWeights& weights) {
  const std::size_t b = batch.size();
  if (b == 0) throw ShapeError("batch_loss: empty batch");
  const std::size_t t = batch.seq_len, l = batch.cell_len;
  if (batch.struct_in.size() != b * t || batch.struct_out.size() != b * t) throw ShapeError("batch_loss: structure size");
  const std::size_t ncells = batch.cells.size();
  if (batch.cell_in.size() != ncells * l || batch.cell_out.size() != ncells * l || batch.bbox.size() != ncells * 4 ||
      batch.bbox_mask.size() != ncells) {
    throw ShapeError("batch_loss: cell supervision is misaligned");
  }
  std::vector<Tensor<T>> s_parts, c_parts, b_parts;
  std::size_t cell = 0;
  for (std::size_t s = 0; s < b; ++s) {
    const EncoderMemory<T> mem = model.encode(*batch.images[s]);
    const std::span<const int> in(batch.struct_in.data() + s * t, t);
    const std::span<const int> out(batch.struct_out.data() + s * t, t);
    const Tensor<T> hidden = model.shared_decode(mem, in);
    const Tensor<T> logits = model.structure_head(hidden, mem);

    const std::size_t first = cell;
    while (cell < ncells && batch.cells[cell].sample == s) ++cell;
    const std::size_t n = cell - first;
    Tensor<T> boxes, box_targets, char_logits;
    std::span<const std::uint8_t> mask;
    std::span<const int> char_targets;
    if (n > 0) {
      std::vector<std::size_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = batch.cells[first + i].position;
      const Tensor<T> cell_hidden = ops::gather_rows(hidden, std::span<const std::size_t>(rows));
      boxes = model.bbox_head(cell_hidden, mem);
      box_targets = Tensor<T>({n, 4}, std::vector<T>(batch.bbox.begin() + static_cast<std::ptrdiff_t>(first * 4),
                                                      batch.bbox.begin() + static_cast<std::ptrdiff_t>(cell * 4)));
      mask = std::span<const std::uint8_t>(batch.bbox_mask.data() + first, n);
      char_logits = model.content_decode(mem, cell_hidden, std::span<const int>(batch.cell_in.data() + first * l, n * l), l);
      char_targets = std::span<const int>(batch.cell_out.data() + first * l, n * l);
    }
    const LossBreakdown<T> part = total_loss(logits, out, boxes, box_targets, mask, char_logits, char_targets, weights);
    s_parts.push_back(part.structure);
    c_parts.push_back(part.content);
    b_parts.push_back(part.bbox);
  }
  if (cell != ncells) throw ShapeError("batch_loss: cells are not ordered by sample");
  const std::vector<double> mean(b, 1.0 / static_cast<double>(b));
  LossBreakdown<T> result;
  result.structure = ops::weighted_sum<T>(s_parts, mean);
  result.content = ops::weighted_sum<T>(c_parts, mean);
  result.bbox = ops::weighted_sum<T>(b_parts, mean);
  const std::vector<Tensor<T>> parts{result.structure, result.content, result.bbox};
  const std::vector<double> w{weights.structure, weights.content, weights.bbox};
  result.total = ops::weighted_sum<T>(parts, w);
  return result;
}

template <typename T>
LossValues train_step(TableModel<T>& model, Adam<T>& optimizer, const Batch& batch, double lr) {
  model.parameters().zero_grad();
  Tape<T> tape;
  LossValues values;
  {
    TapeScope<T> scope(tape);
    const LossBreakdown<T> loss = batch_loss(model, batch, model.loss_weights());
    values = values_of(loss);
    tape.backward(loss.total);
  }
  optimizer.step(lr);
  return values;
}

template class TableModel<float>;
template class TableModel<double>;

#define TABREC_INSTANTIATE_MODEL(T)                                                                                \
  template LossBreakdown<T> total_loss(const Tensor<T>&, std::span<const int>, const Tensor<T>&, const Tensor<T>&, \
                                       std::span<const std::uint8_t>, const Tensor<T>&, std::span<const int>,      \
                                       const LossWeights&);                                                        \
  template LossBreakdown<T> batch_loss(const TableModel<T>&, const Batch&, const LossWeights&);                    \
  template LossValues train_step(TableModel<T>&, Adam<T>&, const Batch&, double);

TABREC_INSTANTIATE_MODEL(float)
TABREC_INSTANTIATE_MODEL(double)

}  // namespace tabrec
