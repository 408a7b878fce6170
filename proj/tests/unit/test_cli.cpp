#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "tabrec/cli.hpp"
#include "tabrec/data.hpp"
#include "tabrec/decoding.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tabrec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = tabrec::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty() && line[0] == '{') last = line;
  return json::parse(last);
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(testing::slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

void check_error(const Run& r, int code, const std::string& kind) {
  CHECK(r.code == code);
  const json e = last_json_line(r.err);
  CHECK(e.at("exit") == code);
  CHECK(e.at("kind") == kind);
  CHECK_FALSE(e.at("error").get<std::string>().empty());
}

// Small model on a 64x64 rescaled view of the desk data.
json small_config(int epochs) {
  return {{"model",
           {{"image_height", 64},
            {"image_width", 64},
            {"d_model", 32},
            {"ff_size", 64},
            {"backbone", {{"channels", {8, 16}}, {"strides", {2, 2}}}}}},
          {"training", {{"epochs", epochs}, {"batch_size", 4}, {"seed", 3}}}};
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli({"--help"}).code == 0);
  check_error(cli({}), 1, "usage");
  check_error(cli({"frobnicate"}), 1, "usage");
  check_error(cli({"train", "--out", "x.ckpt"}), 1, "usage");
  check_error(cli({"gen-data", "--out", "d", "--count", "many", "--seed", "1"}), 1, "usage");
}

TEST_CASE("gen-data is reproducible") {
  testing::TempDir dir("cli_gen");
  const Run a = cli({"gen-data", "--out", (dir / "a").string(), "--count", "5", "--seed", "11"});
  const Run b = cli({"gen-data", "--out", (dir / "b").string(), "--count", "5", "--seed", "11"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(last_json_line(a.out).at("written") == 5);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "gen_config.json") continue;
    const fs::path twin = dir / "b" / fs::relative(e.path(), dir / "a");
    CHECK(testing::slurp(e.path()) == testing::slurp(twin));
    ++files;
  }
  CHECK(files == 6);
  CHECK(fs::exists(dir / "a" / "gen_config.json"));

  const Run c = cli({"gen-data", "--out", (dir / "c").string(), "--count", "5", "--seed", "12"});
  CHECK(testing::slurp(dir / "a" / "annotations.jsonl") != testing::slurp(dir / "c" / "annotations.jsonl"));
  check_error(cli({"gen-data", "--out", (dir / "d").string(), "--count", "1", "--seed", "1", "--profile", "huge"}), 1,
              "config");
}

TEST_CASE("eval scores ground truth as perfect predictions") {
  testing::TempDir dir("cli_eval");
  REQUIRE(cli({"gen-data", "--out", (dir / "d").string(), "--count", "4", "--seed", "5"}).code == 0);
  std::string preds;
  for (const auto& a : tabrec::load_annotations(dir / "d")) {
    tabrec::TableResult r;
    r.filename = a.filename;
    r.html = a.html();
    for (const auto& c : a.cells) {
      std::string text;
      for (const auto& t : c.tokens) text += t;
      r.cells.push_back({text, c.bbox.value_or(tabrec::BBox{0, 0, 0, 0}), 0.9});
    }
    preds += tabrec::to_json(r).dump() + "\n";
  }
  testing::spit(dir / "pred.jsonl", preds);
  const Run r = cli({"eval", "--pred", (dir / "pred.jsonl").string(), "--gt", (dir / "d").string(), "--out",
                     (dir / "report.json").string()});
  REQUIRE(r.code == 0);
  const json rep = last_json_line(r.out);
  CHECK(rep.at("teds") == 1.0);
  CHECK(rep.at("teds_struct") == 1.0);
  CHECK(rep.at("map") == 1.0);
  CHECK(json::parse(testing::slurp(dir / "report.json")) == rep);
  CHECK(fs::exists(dir / "report.json.config.json"));

  const json only = last_json_line(
      cli({"eval", "--pred", (dir / "pred.jsonl").string(), "--gt", (dir / "d").string(), "--metric", "teds-struct"})
          .out);
  CHECK(only.at("teds_struct") == 1.0);

  testing::spit(dir / "bad.jsonl", "{\"filename\": 3}\n");
  check_error(cli({"eval", "--pred", (dir / "bad.jsonl").string(), "--gt", (dir / "d").string()}), 2, "format");
  check_error(cli({"eval", "--pred", (dir / "pred.jsonl").string(), "--gt", (dir / "d").string(), "--iou", "2"}), 1,
              "config");
  check_error(cli({"eval", "--pred", (dir / "pred.jsonl").string(), "--gt", (dir / "d").string(), "--metric", "bleu"}),
              1, "config");
}

TEST_CASE("config and runtime errors map to their exit codes") {
  testing::TempDir dir("cli_err");
  testing::spit(dir / "unknown.json", R"({"training": {"epochs": 1, "learning_rate": 0.1}})");
  check_error(cli({"train", "--config", (dir / "unknown.json").string(), "--data", "x", "--out", (dir / "m").string()}), 1,
              "config");
  testing::spit(dir / "broken.json", "{");
  check_error(cli({"train", "--config", (dir / "broken.json").string(), "--data", "x", "--out", (dir / "m").string()}), 1,
              "config");
  check_error(cli({"train", "--config", (dir / "absent.json").string(), "--out", (dir / "m").string()}), 1, "config");

  testing::spit(dir / "junk.ckpt", "junk");
  testing::spit(dir / "x.png", "not a png");
  check_error(cli({"infer", "--ckpt", (dir / "junk.ckpt").string(), "--image", (dir / "x.png").string()}), 2, "format");
  check_error(cli({"infer", "--ckpt", (dir / "junk.ckpt").string()}), 1, "usage");

  testing::spit(dir / "blocker", "a file where a directory is needed");
  check_error(cli({"gen-data", "--out", (dir / "blocker" / "sub").string(), "--count", "1", "--seed", "1"}), 3,
              "runtime");
}

TEST_CASE("train, infer and eval agree end to end") {
  testing::TempDir dir("cli_train");
  REQUIRE(cli({"gen-data", "--out", (dir / "train").string(), "--count", "6", "--seed", "1"}).code == 0);
  REQUIRE(cli({"gen-data", "--out", (dir / "val").string(), "--count", "3", "--seed", "2", "--split", "val"}).code == 0);
  testing::spit(dir / "cfg.json", small_config(2).dump());

  const fs::path ckpt = dir / "run" / "m.ckpt";
  const Run t = cli({"train", "--config", (dir / "cfg.json").string(), "--data", (dir / "train").string(), "--val",
                     (dir / "val").string(), "--out", ckpt.string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const json summary = last_json_line(t.out);
  CHECK(summary.at("steps") == 4);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "run" / "m.ckpt.config.json"));
  CHECK(fs::exists(dir / "run" / "m.ckpt.best"));

  std::size_t steps = 0, validations = 0;
  for (const json& line : jsonl(dir / "run" / "m.ckpt.log.jsonl")) {
    if (line.contains("validation")) {
      ++validations;
      continue;
    }
    ++steps;
    CHECK(line.at("step") == steps);
    const double parts = line.at("loss_struct").get<double>() + line.at("loss_content").get<double>() +
                         line.at("loss_bbox").get<double>();
    CHECK(std::abs(line.at("loss").get<double>() - parts) <= 1e-6);
    CHECK(line.at("lambda") == json::array({1.0, 1.0, 1.0}));
  }
  CHECK(steps == 4);
  CHECK(validations == 2);

  const fs::path pred = dir / "pred.jsonl";
  const Run inf = cli({"infer", "--ckpt", ckpt.string(), "--data", (dir / "val").string(), "--out", pred.string(),
                       "--overlay", (dir / "overlays").string()});
  REQUIRE_MESSAGE(inf.code == 0, inf.err);
  CHECK(jsonl(pred).size() == 3);
  CHECK(fs::exists(dir / "pred.jsonl.config.json"));
  CHECK(fs::exists(dir / "overlays" / "synth_000000.png"));

  const Run ev = cli({"eval", "--pred", pred.string(), "--gt", (dir / "val").string()});
  REQUIRE(ev.code == 0);
  const json rep = last_json_line(ev.out);
  const json& final_val = summary.at("final_validation").at("validation");
  CHECK(rep.at("teds") == final_val.at("teds"));
  CHECK(rep.at("teds_struct") == final_val.at("teds_struct"));
  CHECK(rep.at("map") == final_val.at("map"));

  const Run single = cli({"infer", "--ckpt", ckpt.string(), "--image",
                          (dir / "val" / "val" / "synth_000001.png").string(), "--overlay",
                          (dir / "one.png").string()});
  REQUIRE(single.code == 0);
  CHECK(last_json_line(single.out) == jsonl(pred)[1]);
  CHECK(fs::exists(dir / "one.png"));
}
