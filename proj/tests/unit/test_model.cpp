#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles/param_gradcheck.hpp"
#include "support.hpp"
#include "tabrec/checkpoint.hpp"
#include "tabrec/config.hpp"
#include "tabrec/errors.hpp"
#include "tabrec/model.hpp"
#include "tabrec/ops.hpp"

using namespace tabrec;
using testing::OwnedBatch;

namespace {

template <typename T>
bool same(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

template <typename T>
bool same_rows(const Tensor<T>& a, const Tensor<T>& b, std::size_t first, std::size_t last) {
  const std::size_t w = a.dim(1);
  return std::equal(a.data().begin() + static_cast<std::ptrdiff_t>(first * w),
                    a.data().begin() + static_cast<std::ptrdiff_t>(last * w),
                    b.data().begin() + static_cast<std::ptrdiff_t>(first * w));
}

Tensor<double> random_rows(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor<double>({n, d}, std::move(v));
}

std::vector<int> random_ids(Rng& rng, std::size_t n, int vocab) {
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.uniform_int(1, vocab - 1));
  return ids;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

ModelConfig random_config(Rng& rng) {
  ModelConfig c;
  c.n_heads = static_cast<int>(rng.uniform_int(1, 3));
  c.d_model = c.n_heads * static_cast<int>(rng.uniform_int(2, 6));
  c.ff_size = static_cast<int>(rng.uniform_int(4, 24));
  c.n_shared_layers = static_cast<int>(rng.uniform_int(1, 3));
  c.image_channels = rng.bernoulli(0.5) ? 1 : 3;
  c.backbone.channels.clear();
  c.backbone.strides.clear();
  const auto stages = rng.uniform_int(1, 3);
  for (std::int64_t i = 0; i < stages; ++i) {
    c.backbone.channels.push_back(static_cast<int>(rng.uniform_int(2, 6)));
    c.backbone.strides.push_back(static_cast<int>(rng.uniform_int(1, 2)));
  }
  c.backbone.global_context = rng.bernoulli(0.5);
  c.backbone.context_ratio = static_cast<int>(rng.uniform_int(1, 4));
  const int stride = c.backbone.total_stride();
  c.image_height = stride * static_cast<int>(rng.uniform_int(2, 5));
  c.image_width = stride * static_cast<int>(rng.uniform_int(2, 5));
  c.max_struct_len = static_cast<int>(rng.uniform_int(4, 20));
  c.max_cell_len = static_cast<int>(rng.uniform_int(3, 8));
  c.struct_vocab_size = static_cast<int>(rng.uniform_int(8, 40));
  c.content_vocab_size = static_cast<int>(rng.uniform_int(6, 40));
  return c;
}

}  // namespace

TEST_CASE("encoder memory geometry") {
  SUBCASE("64x64 input with stride 8 gives an 8x8 grid") {
    ModelConfig c = ModelConfig::desk();
    c.image_height = c.image_width = 64;
    const TableModel<float> model(c, 1);
    Rng rng(1);
    const auto mem = model.encode(testing::random_image(rng, c));
    CHECK(mem.grid_h == 8);
    CHECK(mem.grid_w == 8);
    CHECK(mem.features.shape() == Shape{64, static_cast<std::size_t>(c.d_model)});
    CHECK(mem.cross_kv.size() == static_cast<std::size_t>(c.n_shared_layers) + 3);
  }
  SUBCASE("published geometry is a 60x60 grid of width 512") {
    const ModelConfig c = ModelConfig::full_scale();
    CHECK(c.grid_height() * c.grid_width() == 3600);
    CHECK(c.d_model == 512);
    const TableModel<float> model(c, 1);
    CHECK(model.parameters().count() == parameter_count(c));
  }
  SUBCASE("mismatched images are rejected") {
    const TableModel<float> model(ModelConfig::tiny(), 1);
    CHECK_THROWS_AS(model.encode(Image(16, 16, 3)), ShapeError);
    CHECK_THROWS_AS(model.encode(Image(32, 16, 1)), ShapeError);
    CHECK_THROWS_AS(model.encode(Image(16, 16, 1, 1.5f)), ShapeError);
  }
}

TEST_CASE("shape contract and parameter count over random configs") {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    const ModelConfig c = random_config(rng);
    REQUIRE_NOTHROW(c.validate());
    const TableModel<double> model(c, static_cast<std::uint64_t>(trial));
    CHECK(model.parameters().count() == parameter_count(c));
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto mem = model.encode(testing::random_image(rng, c));
    CHECK(mem.length() == static_cast<std::size_t>(c.grid_height() * c.grid_width()));
    CHECK(mem.features.dim(1) == d);

    const auto t = static_cast<std::size_t>(rng.uniform_int(1, c.max_struct_len));
    const auto hidden = model.shared_decode(mem, random_ids(rng, t, c.struct_vocab_size));
    CHECK(hidden.shape() == Shape{t, d});
    CHECK(model.structure_head(hidden, mem).shape() == Shape{t, static_cast<std::size_t>(c.struct_vocab_size)});

    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto l = static_cast<std::size_t>(rng.uniform_int(1, c.max_cell_len));
    const auto cells = random_rows(rng, n, d);
    CHECK(model.bbox_head(cells, mem).shape() == Shape{n, 4});
    CHECK(model.content_decode(mem, cells, random_ids(rng, n * l, c.content_vocab_size), l).shape() ==
          Shape{n * l, static_cast<std::size_t>(c.content_vocab_size)});

    CHECK_THROWS_AS(model.shared_decode(mem, random_ids(rng, static_cast<std::size_t>(c.max_struct_len) + 1, 4)),
                    ShapeError);
    const auto over = static_cast<std::size_t>(c.max_cell_len) + 1;
    CHECK_THROWS_AS(model.content_decode(mem, cells, random_ids(rng, n * over, 4), over), ShapeError);
  }
}

TEST_CASE("config invariants are enforced") {
  ModelConfig c = ModelConfig::tiny();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.image_height = 18;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.max_struct_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.max_cell_len = 1;
  CHECK_THROWS_AS(TableModel<float>(c, 0), ConfigError);
}

TEST_CASE("construction and encoding are deterministic") {
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> a(c, 5), b(c, 5), other(c, 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().entries().size(); ++i) {
    CHECK(same(a.parameters().entries()[i].second, b.parameters().entries()[i].second));
    differs |= !same(a.parameters().entries()[i].second, other.parameters().entries()[i].second);
  }
  CHECK(differs);
  Rng rng(5);
  const Image img = testing::random_image(rng, c);
  CHECK(same(a.encode(img).features, a.encode(Image(img)).features));
  CHECK(same(a.encode(img).features, b.encode(img).features));
}

TEST_CASE("decoders are causal") {
  const ModelConfig c = testing::tiny_full_vocab();
  const TableModel<double> model(c, 7);
  Rng rng(7);
  const auto mem = model.encode(testing::random_image(rng, c));
  for (int trial = 0; trial < 20; ++trial) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(2, c.max_struct_len));
    auto ids = random_ids(rng, len, c.struct_vocab_size);
    const auto cut = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(len) - 2));
    auto changed = ids;
    for (std::size_t i = cut + 1; i < len; ++i) changed[i] = static_cast<int>(rng.uniform_int(1, c.struct_vocab_size - 1));
    changed[len - 1] = changed[len - 1] == 5 ? 6 : 5;
    const auto h0 = model.shared_decode(mem, ids), h1 = model.shared_decode(mem, changed);
    CHECK(same_rows(h0, h1, 0, cut + 1));
    CHECK_FALSE(same(h0, h1));
    const auto s0 = model.structure_head(h0, mem), s1 = model.structure_head(h1, mem);
    CHECK(same_rows(s0, s1, 0, cut + 1));

    const std::size_t n = 3, l = static_cast<std::size_t>(c.max_cell_len);
    const auto cells = random_rows(rng, n, static_cast<std::size_t>(c.d_model));
    auto chars = random_ids(rng, n * l, c.content_vocab_size);
    const auto cell = static_cast<std::size_t>(rng.uniform_int(0, 2));
    const auto ccut = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(l) - 2));
    auto chars2 = chars;
    for (std::size_t i = ccut + 1; i < l; ++i) chars2[cell * l + i] = static_cast<int>(rng.uniform_int(1, c.content_vocab_size - 1));
    const auto c0 = model.content_decode(mem, cells, chars, l), c1 = model.content_decode(mem, cells, chars2, l);
    CHECK(same_rows(c0, c1, 0, cell * l + ccut + 1));
    CHECK(same_rows(c0, c1, (cell + 1) * l, n * l));
  }
}

TEST_CASE("structure softmax rows sum to one") {
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> model(c, 8);
  Rng rng(8);
  const auto mem = model.encode(testing::random_image(rng, c));
  const auto logits = model.structure_head(model.shared_decode(mem, random_ids(rng, 12, c.struct_vocab_size)), mem);
  const auto p = ops::softmax(logits, 1);
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double s = 0;
    for (std::size_t k = 0; k < p.dim(1); ++k) s += p.data()[r * p.dim(1) + k];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("untrained cross-entropy is near ln V") {
  const ModelConfig c = testing::tiny_full_vocab();
  Rng rng(9);
  const OwnedBatch ob = testing::random_batch(rng, c, 6, 12, 5);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TableModel<double> model(c, seed);
    NoGradScope<double> no_grad;
    const LossValues v = values_of(batch_loss(model, ob.batch, model.loss_weights()));
    CHECK(v.structure == doctest::Approx(std::log(32.0)).epsilon(0.1));
    CHECK(v.content == doctest::Approx(std::log(99.0)).epsilon(0.1));
  }
}

TEST_CASE("bbox head range and per-cell independence") {
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> model(c, 10);
  Rng rng(10);
  const auto mem = model.encode(testing::random_image(rng, c));
  const std::size_t n = 6, d = static_cast<std::size_t>(c.d_model);
  const auto cells = random_rows(rng, n, d, 5.0);
  const auto boxes = model.bbox_head(cells, mem);
  for (double v : boxes.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  const auto permuted = model.bbox_head(ops::gather_rows(cells, std::span<const std::size_t>(perm)), mem);
  // Row placement inside the matrix products may change the last bit.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 4; ++k) CHECK(permuted.data()[i * 4 + k] == doctest::Approx(boxes.data()[perm[i] * 4 + k]).epsilon(1e-12));
  }
  auto alone = model.bbox_head(ops::gather_rows(cells, std::span<const std::size_t>(perm.data(), 1)), mem);
  for (std::size_t k = 0; k < 4; ++k) CHECK(alone.data()[k] == doctest::Approx(boxes.data()[perm[0] * 4 + k]).epsilon(1e-12));
}

TEST_CASE("content decoder is conditioned on the cell state") {
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> model(c, 11);
  Rng rng(11);
  const auto mem = model.encode(testing::random_image(rng, c));
  const std::size_t l = 4, d = static_cast<std::size_t>(c.d_model);
  for (int trial = 0; trial < 10; ++trial) {
    auto chars = random_ids(rng, l, c.content_vocab_size);
    chars.insert(chars.end(), chars.begin(), chars.end());
    const auto logits = model.content_decode(mem, random_rows(rng, 2, d), chars, l);
    const auto w = logits.dim(1);
    double diff = 0;
    for (std::size_t i = 0; i < l * w; ++i) diff = std::max(diff, std::abs(logits.data()[i] - logits.data()[l * w + i]));
    CHECK(diff > 1e-6);
  }
}

TEST_CASE("total_loss weighting is linear") {
  const ModelConfig c = ModelConfig::tiny();
  TableModel<double> model(c, 12);
  Rng rng(12);
  const OwnedBatch ob = testing::random_batch(rng, c, 3);

  LossValues v;
  oracle::model_gradients(model, ob.batch, {1, 1, 1}, &v);
  CHECK(v.total == v.structure + v.content + v.bbox);

  LossValues doubled;
  oracle::model_gradients(model, ob.batch, {1, 1, 2}, &doubled);
  CHECK(rel(doubled.total - v.total, v.bbox) <= 1e-12);

  const auto only_structure = oracle::model_gradients(model, ob.batch, {1, 0, 0});
  model.parameters().zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(batch_loss(model, ob.batch, {1, 1, 1}).structure);
  }
  const double floor = oracle::error_floor(only_structure);
  const auto& entries = model.parameters().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& t = entries[k].second;
    const std::vector<double> g = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                               : std::vector<double>(t.numel(), 0.0);
    CHECK_MESSAGE(oracle::scaled_error(g, only_structure[k], floor) <= 1e-12, entries[k].first);
  }
}

TEST_CASE("total_loss rejects misaligned supervision") {
  const auto logits = Tensor<double>::zeros({3, 5});
  const std::vector<int> targets{1, 2, 0};
  const auto boxes = Tensor<double>::zeros({2, 4});
  const std::vector<std::uint8_t> mask{1};
  CHECK_THROWS_AS(total_loss<double>(logits, targets, boxes, boxes, mask, Tensor<double>(), {}, {}), ShapeError);
  const std::vector<std::uint8_t> mask2{1, 1};
  CHECK_THROWS_AS(total_loss<double>(logits, targets, boxes, Tensor<double>::zeros({2, 3}), mask2, Tensor<double>(), {}, {}),
                  ShapeError);
  CHECK_THROWS_AS(total_loss<double>(logits, targets, Tensor<double>(), Tensor<double>(), {}, Tensor<double>(), targets, {}),
                  ShapeError);

  Rng rng(13);
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> model(c, 13);
  OwnedBatch ob = testing::random_batch(rng, c, 2);
  ob.batch.cell_in.pop_back();
  CHECK_THROWS_AS(batch_loss(model, ob.batch, {}), ShapeError);
}

TEST_CASE("padded batch loss is the mean of per-sample losses") {
  const ModelConfig c = ModelConfig::tiny();
  const TableModel<double> model(c, 14);
  Rng rng(14);
  std::vector<std::shared_ptr<Image>> images;
  std::vector<testing::SampleTokens> samples;
  for (int i = 0; i < 4; ++i) {
    images.push_back(std::make_shared<Image>(testing::random_image(rng, c)));
    samples.push_back(testing::random_tokens(rng, c, static_cast<std::size_t>(3 + 3 * i), static_cast<std::size_t>(1 + i)));
  }
  NoGradScope<double> no_grad;
  const LossValues all = values_of(batch_loss(model, testing::assemble(images, samples).batch, {}));
  LossValues mean;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LossValues v = values_of(batch_loss(model, testing::assemble({images[i]}, {samples[i]}).batch, {}));
    mean.structure += v.structure / 4;
    mean.content += v.content / 4;
    mean.bbox += v.bbox / 4;
    mean.total += v.total / 4;
  }
  CHECK(rel(all.structure, mean.structure) <= 1e-6);
  CHECK(rel(all.content, mean.content) <= 1e-6);
  CHECK(rel(all.bbox, mean.bbox) <= 1e-6);
  CHECK(rel(all.total, mean.total) <= 1e-6);
}

TEST_CASE("inputs at padded positions have no effect") {
  const ModelConfig c = ModelConfig::tiny();
  TableModel<double> model(c, 15);
  Rng rng(15);
  std::vector<std::shared_ptr<Image>> images{std::make_shared<Image>(testing::random_image(rng, c)),
                                             std::make_shared<Image>(testing::random_image(rng, c))};
  const std::vector<testing::SampleTokens> samples{testing::random_tokens(rng, c, 4, 2),
                                                   testing::random_tokens(rng, c, 6, 3)};
  const OwnedBatch base = testing::assemble(images, samples, 14, 7);
  OwnedBatch noisy = base;
  for (std::size_t i = 0; i < noisy.batch.struct_out.size(); ++i) {
    if (noisy.batch.struct_out[i] == Vocab::kPad) noisy.batch.struct_in[i] = static_cast<int>(rng.uniform_int(4, 31));
  }
  for (std::size_t i = 0; i < noisy.batch.cell_out.size(); ++i) {
    if (noisy.batch.cell_out[i] == Vocab::kPad) noisy.batch.cell_in[i] = static_cast<int>(rng.uniform_int(4, 23));
  }
  REQUIRE(noisy.batch.struct_in != base.batch.struct_in);
  LossValues a, b;
  const auto ga = oracle::model_gradients(model, base.batch, {}, &a);
  const auto gb = oracle::model_gradients(model, noisy.batch, {}, &b);
  CHECK(a.total == b.total);
  const double floor = oracle::error_floor(ga);
  for (std::size_t k = 0; k < ga.size(); ++k) CHECK(oracle::scaled_error(ga[k], gb[k], floor) <= 1e-12);
}

TEST_CASE("shared parameters receive the sum of the three task gradients") {
  const ModelConfig c = ModelConfig::tiny();
  TableModel<double> model(c, 16);
  Rng rng(16);
  const OwnedBatch ob = testing::random_batch(rng, c, 2);
  const auto all = oracle::model_gradients(model, ob.batch, {1, 1, 1});
  const auto s = oracle::model_gradients(model, ob.batch, {1, 0, 0});
  const auto t = oracle::model_gradients(model, ob.batch, {0, 1, 0});
  const auto b = oracle::model_gradients(model, ob.batch, {0, 0, 1});
  const double floor = oracle::error_floor(all);
  const auto& entries = model.parameters().entries();
  int shared = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& name = entries[k].first;
    if (name.rfind("encoder.", 0) != 0 && name.rfind("decoder.", 0) != 0) continue;
    ++shared;
    std::vector<double> sum(all[k].size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = s[k][i] + t[k][i] + b[k][i];
    CHECK_MESSAGE(oracle::scaled_error(all[k], sum, floor) <= 1e-5, name);
  }
  CHECK(shared > 10);
}

TEST_CASE("finite differences agree on selected parameters") {
  const ModelConfig c = ModelConfig::tiny();
  TableModel<double> model(c, 17);
  Rng rng(17);
  const OwnedBatch ob = testing::random_batch(rng, c, 2, 6, 3);
  const auto errors = oracle::check_parameter_gradients(
      model, ob.batch, {}, {"decoder.struct_embedding", "content.char_embedding", "bbox.out.weight", "encoder.proj.bias"});
  CHECK(errors.size() == 4);
  for (const auto& e : errors) CHECK_MESSAGE(e.error <= 1e-4, e.name << " " << e.error);
}

TEST_CASE("one optimizer step reduces the sample loss") {
  const ModelConfig c = ModelConfig::tiny();
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TableModel<double> model(c, seed);
    Adam<double> adam(model.parameters().tensors());
    Rng rng(100 + seed);
    const OwnedBatch ob = testing::random_batch(rng, c, 1);
    const double before = train_step(model, adam, ob.batch, 1e-3).total;
    NoGradScope<double> no_grad;
    const double after = batch_loss(model, ob.batch, model.loss_weights()).total.item();
    improved += after < before;
  }
  CHECK(improved >= 18);
}

TEST_CASE("bbox loss falls when overfitting one sample") {
  const ModelConfig c = ModelConfig::tiny();
  TableModel<double> model(c, 18);
  Adam<double> adam(model.parameters().tensors());
  Rng rng(18);
  testing::SampleTokens tokens = testing::random_tokens(rng, c, 10, 3);
  for (auto& chars : tokens.cell_chars) chars.push_back(5);
  const OwnedBatch ob = testing::assemble({std::make_shared<Image>(testing::random_image(rng, c))}, {tokens});
  std::vector<double> trace;
  for (int step = 0; step < 100; ++step) trace.push_back(train_step(model, adam, ob.batch, 1e-3).bbox);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += trace[static_cast<std::size_t>(i)];
    last += trace[trace.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last < 0.5 * first);
  int falls = 0;
  for (std::size_t i = 10; i < trace.size(); i += 10) falls += trace[i] < trace[i - 10];
  CHECK(falls >= 7);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  testing::TempDir dir("ckpt");
  const ModelConfig c = ModelConfig::tiny();
  TableModel<float> model(c, 19);
  Adam<float> adam(model.parameters().tensors());
  Rng rng(19);
  OwnedBatch ob = testing::random_batch(rng, c, 2);
  train_step(model, adam, ob.batch, 1e-3);
  save_checkpoint(dir / "a.ckpt", model, &adam, {1, 19, 1});
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  REQUIRE(loaded.optimizer);
  CHECK(loaded.state.step == 1);
  CHECK(loaded.state.seed == 19);
  CHECK(loaded.state.epoch == 1);
  CHECK(loaded.model->config() == c);
  CHECK(loaded.optimizer->step_count() == 1);
  for (std::size_t i = 0; i < model.parameters().entries().size(); ++i) {
    CHECK(loaded.model->parameters().entries()[i].first == model.parameters().entries()[i].first);
    CHECK(same(loaded.model->parameters().entries()[i].second, model.parameters().entries()[i].second));
  }
  save_checkpoint(dir / "b.ckpt", *loaded.model, loaded.optimizer.get(), loaded.state);
  CHECK(testing::slurp(dir / "a.ckpt") == testing::slurp(dir / "b.ckpt"));

  save_checkpoint(dir / "plain.ckpt", model, nullptr, {});
  CHECK_FALSE(load_checkpoint(dir / "plain.ckpt").optimizer);

  const std::string bytes = testing::slurp(dir / "a.ckpt");
  testing::spit(dir / "short.ckpt", bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  testing::spit(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
}

TEST_CASE("config JSON round trip and strictness") {
  for (const ModelConfig& c : {ModelConfig::desk(), ModelConfig::full_scale(), ModelConfig::tiny()}) {
    CHECK(model_config_from_json(to_json(c)) == c);
  }
  RunConfig run;
  run.training.epochs = 7;
  run.eval.iou_threshold = 0.75;
  run.data.train = "somewhere";
  const RunConfig back = run_config_from_json(to_json(run));
  CHECK(back.training.epochs == 7);
  CHECK(back.eval.iou_threshold == 0.75);
  CHECK(back.data.train == "somewhere");
  CHECK(back.model == run.model);

  CHECK(run_config_from_json(nlohmann::json::object()).model == ModelConfig::desk());
  CHECK_THROWS_AS(run_config_from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"d_modle", 8}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"training", {{"epochs", "ten"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"n_heads", 5}}}}), ConfigError);
}
