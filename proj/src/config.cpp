#include "tabrec/config.hpp"

#include <fstream>
#include <set>

#include "tabrec/errors.hpp"

namespace tabrec {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys that were never asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(name_ + ": unknown key \"" + key + "\"");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return json{
      {"image_height", c.image_height},
      {"image_width", c.image_width},
      {"image_channels", c.image_channels},
      {"d_model", c.d_model},
      {"ff_size", c.ff_size},
      {"n_heads", c.n_heads},
      {"n_shared_layers", c.n_shared_layers},
      {"max_struct_len", c.max_struct_len},
      {"max_cell_len", c.max_cell_len},
      {"max_span", c.max_span},
      {"struct_vocab_size", c.struct_vocab_size},
      {"content_vocab_size", c.content_vocab_size},
      {"backbone",
       {{"channels", c.backbone.channels},
        {"strides", c.backbone.strides},
        {"global_context", c.backbone.global_context},
        {"context_ratio", c.backbone.context_ratio}}},
      {"lambda_struct", c.lambda_struct},
      {"lambda_content", c.lambda_content},
      {"lambda_bbox", c.lambda_bbox},
      {"optim",
       {{"learning_rate", c.optim.learning_rate},
        {"decay_epoch", c.optim.decay_epoch},
        {"decay_factor", c.optim.decay_factor},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps}}},
  };
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  ModelConfig c = base;
  Section s(j, "model");
  s.read("image_height", c.image_height);
  s.read("image_width", c.image_width);
  s.read("image_channels", c.image_channels);
  s.read("d_model", c.d_model);
  s.read("ff_size", c.ff_size);
  s.read("n_heads", c.n_heads);
  s.read("n_shared_layers", c.n_shared_layers);
  s.read("max_struct_len", c.max_struct_len);
  s.read("max_cell_len", c.max_cell_len);
  s.read("max_span", c.max_span);
  s.read("struct_vocab_size", c.struct_vocab_size);
  s.read("content_vocab_size", c.content_vocab_size);
  s.read("lambda_struct", c.lambda_struct);
  s.read("lambda_content", c.lambda_content);
  s.read("lambda_bbox", c.lambda_bbox);
  if (const json* b = s.child("backbone")) {
    Section bs(*b, "model.backbone");
    bs.read("channels", c.backbone.channels);
    bs.read("strides", c.backbone.strides);
    bs.read("global_context", c.backbone.global_context);
    bs.read("context_ratio", c.backbone.context_ratio);
    bs.finish();
  }
  if (const json* o = s.child("optim")) {
    Section os(*o, "model.optim");
    os.read("learning_rate", c.optim.learning_rate);
    os.read("decay_epoch", c.optim.decay_epoch);
    os.read("decay_factor", c.optim.decay_factor);
    os.read("beta1", c.optim.beta1);
    os.read("beta2", c.optim.beta2);
    os.read("eps", c.optim.eps);
    os.finish();
  }
  s.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (data.profile != "desk" && data.profile != "paper-geometry") {
    throw ConfigError("data.profile must be \"desk\" or \"paper-geometry\", got \"" + data.profile + "\"");
  }
  if (training.epochs < 0) throw ConfigError("training.epochs must be non-negative");
  if (training.batch_size < 1) throw ConfigError("training.batch_size must be at least 1");
  if (training.checkpoint_every < 1) throw ConfigError("training.checkpoint_every must be at least 1");
  if (training.validate_every < 0 || training.validation_limit < 0) {
    throw ConfigError("training.validate_every and training.validation_limit must be non-negative");
  }
  for (const auto& m : eval.metrics) {
    if (m != "teds" && m != "teds-struct" && m != "map") throw ConfigError("eval.metrics: unknown metric \"" + m + "\"");
  }
  if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) throw ConfigError("eval.iou_threshold must be in (0, 1]");
}

json to_json(const RunConfig& c) {
  return json{
      {"model", to_json(c.model)},
      {"data", {{"train", c.data.train}, {"validation", c.data.validation}, {"profile", c.data.profile}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"seed", c.training.seed},
        {"checkpoint_every", c.training.checkpoint_every},
        {"validate_every", c.training.validate_every},
        {"validation_limit", c.training.validation_limit},
        {"shuffle", c.training.shuffle}}},
      {"eval", {{"metrics", c.eval.metrics}, {"iou_threshold", c.eval.iou_threshold}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section s(j, "config");
  if (const json* m = s.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const json* d = s.child("data")) {
    Section ds(*d, "data");
    ds.read("train", c.data.train);
    ds.read("validation", c.data.validation);
    ds.read("profile", c.data.profile);
    ds.finish();
  }
  if (const json* t = s.child("training")) {
    Section ts(*t, "training");
    ts.read("epochs", c.training.epochs);
    ts.read("batch_size", c.training.batch_size);
    ts.read("seed", c.training.seed);
    ts.read("checkpoint_every", c.training.checkpoint_every);
    ts.read("validate_every", c.training.validate_every);
    ts.read("validation_limit", c.training.validation_limit);
    ts.read("shuffle", c.training.shuffle);
    ts.finish();
  }
  if (const json* e = s.child("eval")) {
    Section es(*e, "eval");
    es.read("metrics", c.eval.metrics);
    es.read("iou_threshold", c.eval.iou_threshold);
    es.finish();
  }
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tabrec
