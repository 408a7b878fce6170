#include "tabrec/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "tabrec/checkpoint.hpp"
#include "tabrec/config.hpp"
#include "tabrec/data.hpp"
#include "tabrec/decoding.hpp"
#include "tabrec/errors.hpp"
#include "tabrec/eval.hpp"

namespace tabrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path s = p;
  s += suffix;
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// Resizes images that do not match the model input; annotations keep the
// original extents so bbox normalization stays in source pixels.
void conform_samples(std::vector<Sample>& samples, const ModelConfig& m) {
  for (auto& s : samples) {
    if (s.image.height != m.image_height || s.image.width != m.image_width || s.image.channels != m.image_channels) {
      s.image = conform(s.image, m.image_height, m.image_width, m.image_channels);
    }
  }
}

std::vector<Sample> load_samples(const fs::path& path, const ModelConfig& m, std::ostream& err) {
  LoadReport report;
  std::vector<Sample> samples = load_dataset(path, &report);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  if (report.skipped) err << "warning: skipped " << report.skipped << " malformed records in " << path << '\n';
  conform_samples(samples, m);
  return samples;
}

// Runs recognition on a sample whose image may have been resized, and maps
// boxes back to the annotation's pixel frame.
TableResult infer_sample(const TableModel<float>& model, const Sample& s) {
  TableResult r = recognize_table(model, s.image);
  r.filename = s.annotation.filename;
  const double sx = s.annotation.width > 0 ? static_cast<double>(s.annotation.width) / s.image.width : 1.0;
  const double sy = s.annotation.height > 0 ? static_cast<double>(s.annotation.height) / s.image.height : 1.0;
  if (sx != 1.0 || sy != 1.0) {
    for (auto& c : r.cells) c.bbox = {c.bbox[0] * sx, c.bbox[1] * sy, c.bbox[2] * sx, c.bbox[3] * sy};
  }
  return r;
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string profile = "desk";
  std::string split = "train";
  std::string config;
};

int gen_data(const GenArgs& a, std::ostream& out) {
  std::string profile = a.profile;
  if (!a.config.empty()) {
    const RunConfig rc = load_run_config(a.config);
    profile = rc.data.profile;
  }
  GenConfig g;
  if (profile == "desk") {
    g = GenConfig::desk();
  } else if (profile == "paper-geometry") {
    g = GenConfig::full_scale();
  } else {
    throw ConfigError("unknown profile \"" + profile + "\" (expected desk or paper-geometry)");
  }
  std::vector<Sample> samples;
  samples.reserve(a.count);
  for (std::size_t i = 0; i < a.count; ++i) {
    samples.push_back(generate_sample(a.seed, i, g));
    samples.back().annotation.split = a.split;
  }
  const fs::path dir(a.out);
  write_dataset(samples, dir);
  const json resolved{{"command", "gen-data"},
                      {"count", a.count},
                      {"seed", a.seed},
                      {"profile", profile},
                      {"split", a.split},
                      {"generator",
                       {{"image_height", g.image_height},
                        {"image_width", g.image_width},
                        {"channels", g.channels},
                        {"rows", {g.min_rows, g.max_rows}},
                        {"cols", {g.min_cols, g.max_cols}},
                        {"span_prob", g.span_prob},
                        {"empty_prob", g.empty_prob},
                        {"header_prob", g.header_prob},
                        {"horizontal_rule_prob", g.horizontal_rule_prob},
                        {"max_span", g.max_span},
                        {"glyph_scale", g.glyph_scale},
                        {"margin", g.margin},
                        {"cell_padding", g.cell_padding},
                        {"max_text_len", g.max_text_len}}}};
  write_text(dir / "gen_config.json", resolved.dump(2) + "\n");
  out << json{{"written", a.count}, {"dir", dir.string()}}.dump() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string val;
};

struct Validation {
  EvalReport report;
  std::vector<TableResult> results;
};

Validation validate(const TableModel<float>& model, const std::vector<Sample>& samples, const RunConfig& rc) {
  Validation v;
  std::size_t n = samples.size();
  if (rc.training.validation_limit > 0) n = std::min(n, static_cast<std::size_t>(rc.training.validation_limit));
  std::vector<TableAnnotation> gts;
  for (std::size_t i = 0; i < n; ++i) {
    v.results.push_back(infer_sample(model, samples[i]));
    gts.push_back(samples[i].annotation);
  }
  v.report = evaluate(v.results, gts, rc.eval.metrics, rc.eval.iou_threshold);
  return v;
}

int train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_run_config(a.config);
  if (!a.data.empty()) rc.data.train = a.data;
  if (!a.val.empty()) rc.data.validation = a.val;
  if (rc.data.train.empty()) throw ConfigError("no training data: pass --data or set data.train");
  rc.validate();

  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  write_text(sibling(ckpt, ".config.json"), to_json(rc).dump(2) + "\n");

  std::vector<Sample> train_set = load_samples(rc.data.train, rc.model, err);
  std::vector<Sample> val_set;
  if (!rc.data.validation.empty()) val_set = load_samples(rc.data.validation, rc.model, err);
  if (train_set.empty()) throw FormatError("training set " + rc.data.train + " has no usable samples");

  const std::uint64_t seed = rc.training.seed;
  TableModel<float> model(rc.model, seed);
  Adam<float> adam(model.parameters().tensors(), rc.model.optim.adam());
  const StepSchedule schedule = rc.model.optim.schedule();
  const LossWeights weights = model.loss_weights();

  std::ofstream log(sibling(ckpt, ".log.jsonl"), std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log next to " + ckpt.string());

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t step = 0;
  double best = -1.0;
  json last_validation;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < rc.training.epochs; ++epoch) {
    if (rc.training.shuffle) {
      Rng rng(mix_seed(seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }
    std::vector<const Sample*> ordered;
    for (std::size_t i : order) ordered.push_back(&train_set[i]);
    BatchReport br;
    const std::vector<Batch> batches =
        batchify(ordered, static_cast<std::size_t>(rc.training.batch_size), rc.model, &br);
    if (epoch == 0) {
      for (const auto& w : br.warnings) err << "warning: " << w << '\n';
    }
    if (batches.empty()) throw FormatError("no training sample fits the model limits");
    const double lr = schedule.at(epoch);
    double epoch_loss = 0;
    for (const Batch& b : batches) {
      const LossValues v = train_step(model, adam, b, lr);
      ++step;
      epoch_loss += v.total;
      log << json{{"step", step},
                  {"epoch", epoch},
                  {"lr", lr},
                  {"loss", v.total},
                  {"loss_struct", v.structure},
                  {"loss_content", v.content},
                  {"loss_bbox", v.bbox},
                  {"lambda", {weights.structure, weights.content, weights.bbox}}}
                 .dump()
          << '\n';
      if (!std::isfinite(v.total)) throw std::runtime_error("training diverged at step " + std::to_string(step));
    }
    log.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << "epoch " << epoch + 1 << "/" << rc.training.epochs << " loss " << epoch_loss / batches.size() << " lr "
        << lr << " elapsed " << static_cast<long>(secs) << "s\n";

    const TrainingState state{step, seed, epoch + 1};
    const bool last = epoch + 1 == rc.training.epochs;
    if ((epoch + 1) % rc.training.checkpoint_every == 0 || last) save_checkpoint(ckpt, model, &adam, state);
    const int every = rc.training.validate_every;
    if (!val_set.empty() && every > 0 && ((epoch + 1) % every == 0 || last)) {
      const Validation v = validate(model, val_set, rc);
      json rep = to_json(v.report);
      rep.erase("samples");
      last_validation = json{{"epoch", epoch + 1}, {"step", step}, {"validation", rep}};
      log << last_validation.dump() << '\n';
      log.flush();
      err << "  validation teds " << v.report.teds << " teds-struct " << v.report.teds_struct;
      if (v.report.map) err << " map " << *v.report.map;
      err << '\n';
      if (v.report.teds_struct > best) {
        best = v.report.teds_struct;
        save_checkpoint(sibling(ckpt, ".best"), model, &adam, state);
      }
    }
  }
  if (rc.training.epochs == 0) save_checkpoint(ckpt, model, &adam, TrainingState{0, seed, 0});
  out << json{{"checkpoint", ckpt.string()}, {"steps", step}, {"final_validation", last_validation}}.dump() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string ckpt;
  std::string image;
  std::string data;
  std::string out;
  std::string overlay;
};

int infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const TableModel<float>& model = *ck.model;
  const ModelConfig& m = model.config();
  std::vector<Sample> samples;
  if (!a.image.empty()) {
    Sample s;
    const Image raw = read_png(a.image);
    s.annotation.filename = fs::path(a.image).filename().string();
    s.annotation.height = raw.height;
    s.annotation.width = raw.width;
    s.annotation.channels = raw.channels;
    s.image = raw;
    samples.push_back(std::move(s));
    conform_samples(samples, m);
  } else {
    samples = load_samples(a.data, m, err);
  }

  std::ofstream file;
  if (!a.out.empty()) {
    const fs::path p(a.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    file.open(p, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + a.out);
    write_text(sibling(p, ".config.json"),
               json{{"command", "infer"}, {"checkpoint", a.ckpt}, {"model", to_json(m)}}.dump(2) + "\n");
  }
  std::ostream& sink = a.out.empty() ? out : file;
  const bool overlay_dir = a.image.empty();
  if (!a.overlay.empty() && overlay_dir) fs::create_directories(a.overlay);
  for (const auto& s : samples) {
    const TableResult r = infer_sample(model, s);
    sink << to_json(r).dump() << '\n';
    if (!a.overlay.empty()) {
      Image base = a.image.empty() ? read_png(fs::path(a.data).has_extension()
                                                  ? fs::path(a.data).parent_path() / s.annotation.split / s.annotation.filename
                                                  : fs::path(a.data) / s.annotation.split / s.annotation.filename)
                                   : read_png(a.image);
      const fs::path target = overlay_dir ? fs::path(a.overlay) / s.annotation.filename : fs::path(a.overlay);
      write_png(target, draw_overlay(base, r));
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::vector<std::string> metrics;
  std::optional<double> iou;
  std::string out;
  std::string config;
};

std::vector<TableResult> load_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open predictions " + path.string());
  std::vector<TableResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(table_result_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(path.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

int eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  EvalConfig ec;
  if (!a.config.empty()) ec = load_run_config(a.config).eval;
  if (!a.metrics.empty()) ec.metrics = a.metrics;
  if (a.iou) ec.iou_threshold = *a.iou;
  RunConfig check;
  check.eval = ec;
  check.validate();

  const auto preds = load_predictions(a.pred);
  LoadReport report;
  const auto gts = load_annotations(a.gt, &report);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  const EvalReport r = evaluate(preds, gts, ec.metrics, ec.iou_threshold);
  const std::string text = to_json(r).dump();
  if (!a.out.empty()) {
    write_text(a.out, text + "\n");
    write_text(sibling(fs::path(a.out), ".config.json"),
               json{{"command", "eval"},
                    {"pred", a.pred},
                    {"gt", a.gt},
                    {"metrics", ec.metrics},
                    {"iou_threshold", ec.iou_threshold}}
                       .dump(2) +
                   "\n");
  }
  out << text << '\n';
  return kOk;
}

void report_error(std::ostream& err, int code, const char* kind, const std::string& message) {
  err << json{{"error", message}, {"kind", kind}, {"exit", code}}.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Table recognition: synthetic data, training, inference and evaluation", "tabrec"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of tables")->required();
  g->add_option("--seed", gen.seed, "Generator seed")->required();
  g->add_option("--profile", gen.profile, "desk or paper-geometry");
  g->add_option("--split", gen.split, "Split name recorded in annotations");
  g->add_option("--config", gen.config, "Run config (uses data.profile)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Run config JSON")->required();
  t->add_option("--data", tr.data, "Training dataset (directory or JSONL)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--val", tr.val, "Validation dataset");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Recognize tables");
  i->add_option("--ckpt", in.ckpt, "Checkpoint")->required();
  auto* img = i->add_option("--image", in.image, "PNG image");
  auto* dat = i->add_option("--data", in.data, "Dataset directory or JSONL");
  img->excludes(dat);
  i->add_option("--out", in.out, "Write JSONL results here instead of stdout");
  i->add_option("--overlay", in.overlay, "Overlay PNG (or directory with --data)");

  EvalArgs ev;
  double iou = 0.5;
  auto* e = app.add_subcommand("eval", "Score predictions");
  e->add_option("--pred", ev.pred, "Predictions JSONL")->required();
  e->add_option("--gt", ev.gt, "Ground truth (directory or JSONL)")->required();
  e->add_option("--metric", ev.metrics, "teds, teds-struct or map (repeatable)");
  auto* iou_opt = e->add_option("--iou", iou, "IoU threshold for map");
  e->add_option("--out", ev.out, "Also write the report here");
  e->add_option("--config", ev.config, "Run config (uses the eval section)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    report_error(err, kUsage, "usage", ex.what());
    return kUsage;
  }

  try {
    if (g->parsed()) return gen_data(gen, out);
    if (t->parsed()) return train(tr, out, err);
    if (i->parsed()) {
      if (in.image.empty() == in.data.empty()) {
        report_error(err, kUsage, "usage", "infer needs exactly one of --image or --data");
        return kUsage;
      }
      return infer(in, out, err);
    }
    if (e->parsed()) {
      if (iou_opt->count()) ev.iou = iou;
      return eval(ev, out, err);
    }
  } catch (const ConfigError& ex) {
    report_error(err, kUsage, "config", ex.what());
    return kUsage;
  } catch (const FormatError& ex) {
    report_error(err, kDataFormat, "format", ex.what());
    return kDataFormat;
  } catch (const std::exception& ex) {
    report_error(err, kRuntime, "runtime", ex.what());
    return kRuntime;
  }
  report_error(err, kUsage, "usage", "no subcommand");
  return kUsage;
}

}  // namespace tabrec::cli
