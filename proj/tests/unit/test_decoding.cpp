#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "tabrec/data.hpp"
#include "tabrec/decoding.hpp"
#include "tabrec/errors.hpp"
#include "tabrec/html_tree.hpp"
#include "tabrec/vocab.hpp"

using namespace tabrec;
using Tokens = std::vector<std::string>;

namespace {

void nudge_bias(TableModel<float>& model, const std::string& name, int id, float value) {
  Tensor<float> bias = *model.parameters().find(name);
  bias.mutable_data()[static_cast<std::size_t>(id)] = value;
}

// Random output biases make an untrained model emit varied, often malformed streams.
void scramble_heads(TableModel<float>& model, Rng& rng, double spread) {
  for (const char* name : {"structure.out.bias", "content.out.bias"}) {
    Tensor<float> bias = *model.parameters().find(name);
    for (auto& v : bias.mutable_data()) v = static_cast<float>(spread * rng.normal());
  }
}

void check_result_invariants(const TableModel<float>& model, const Image& image, const TableResult& r) {
  const auto& c = model.config();
  REQUIRE(r.emitted_tokens.size() == r.token_probabilities.size());
  CHECK(r.emitted_tokens.size() <= static_cast<std::size_t>(c.max_struct_len - 1));
  const std::size_t triggers = count_cell_triggers(r.emitted_tokens);
  CHECK(count_cell_triggers(r.structure_tokens) == triggers);
  CHECK(r.cells.size() == triggers);
  std::vector<double> trigger_probs;
  for (std::size_t i = 0; i < r.emitted_tokens.size(); ++i) {
    if (StructVocab::is_cell_trigger(r.emitted_tokens[i])) trigger_probs.push_back(r.token_probabilities[i]);
  }
  std::vector<std::string> contents;
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& cell = r.cells[i];
    CHECK(cell.bbox[0] >= 0.0);
    CHECK(cell.bbox[1] >= 0.0);
    CHECK(cell.bbox[0] <= cell.bbox[2]);
    CHECK(cell.bbox[1] <= cell.bbox[3]);
    CHECK(cell.bbox[2] <= image.width);
    CHECK(cell.bbox[3] <= image.height);
    CHECK(cell.confidence == trigger_probs[i]);
    CHECK(cell.confidence > 0.0);
    CHECK(cell.confidence <= 1.0);
    CHECK(cell.content.size() <= static_cast<std::size_t>(c.max_cell_len - 1));
    contents.push_back(cell.content);
  }
  const TableTree tree = parse_table_tree(r.html);
  std::size_t tds = 0;
  for (const auto& n : tree.nodes) tds += n.tag == "td";
  CHECK(tds == triggers);
  CHECK(tokenize_structure(r.html) == r.structure_tokens);
  CHECK(extract_cell_contents(r.html) == contents);
  if (r.repairs == 0) CHECK(r.structure_tokens == r.emitted_tokens);
}

}  // namespace

TEST_CASE("repair_structure examples") {
  SUBCASE("well-formed streams pass through") {
    const Tokens ok{"<thead>", "<tr>", "<td></td>", "</tr>", "</thead>", "<tbody>", "<tr>",
                    "<td", " colspan=\"2\"", ">", "</td>", "</tr>", "</tbody>"};
    const auto r = repair_structure(ok);
    CHECK(r.tokens == ok);
    CHECK(r.repairs == 0);
    CHECK(repair_structure({}).tokens.empty());
  }
  SUBCASE("orphan span attribute is dropped") {
    const auto r = repair_structure({"<tr>", " colspan=\"2\"", "<td></td>", "</tr>"});
    CHECK(r.tokens == Tokens{"<tr>", "<td></td>", "</tr>"});
    CHECK(r.repairs == 1);
  }
  SUBCASE("unfinished spanning cell is closed") {
    const auto r = repair_structure({"<tr>", "<td", " rowspan=\"2\""});
    CHECK(r.tokens == Tokens{"<tr>", "<td", " rowspan=\"2\"", ">", "</td>", "</tr>"});
    CHECK(r.repairs == 3);
  }
  SUBCASE("a cell outside a row gets one") {
    const auto r = repair_structure({"<td></td>"});
    CHECK(r.tokens == Tokens{"<tr>", "<td></td>", "</tr>"});
    CHECK(r.repairs == 2);
  }
  SUBCASE("sections and rows are balanced") {
    const auto r = repair_structure({"<tbody>", "<tr>", "<td></td>", "</thead>", "</tr>", "</tr>"});
    CHECK(r.tokens == Tokens{"<tbody>", "<tr>", "<td></td>", "</tr>", "</tbody>"});
    CHECK(r.repairs == 3);
  }
  SUBCASE("an attribute-less opening becomes a plain cell") {
    const auto r = repair_structure({"<tr>", "<td", ">", "</td>", "</tr>"});
    CHECK(r.tokens == Tokens{"<tr>", "<td></td>", "</tr>"});
    CHECK(r.repairs > 0);
  }
  SUBCASE("duplicate span attributes and special tokens are dropped") {
    const auto r = repair_structure({"<tr>", "<td", " colspan=\"2\"", " colspan=\"3\"", ">", "</td>", "<eos>", "</tr>"});
    CHECK(r.tokens == Tokens{"<tr>", "<td", " colspan=\"2\"", ">", "</td>", "</tr>"});
    CHECK(r.repairs == 2);
  }
}

TEST_CASE("repair_structure conserves triggers on random streams") {
  const StructVocab v;
  Rng rng(21);
  for (int trial = 0; trial < 3000; ++trial) {
    Tokens in;
    const auto n = rng.uniform_int(0, 40);
    for (std::int64_t i = 0; i < n; ++i) {
      in.push_back(v.token(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))));
    }
    const auto r = repair_structure(in);
    CHECK(count_cell_triggers(r.tokens) == count_cell_triggers(in));
    const std::string html = detokenize_structure(r.tokens);
    CHECK(tokenize_structure(html) == r.tokens);
    Tokens contents(count_cell_triggers(r.tokens), "x");
    CHECK_NOTHROW(parse_table_tree(assemble_html(r.tokens, contents)));
    const auto again = repair_structure(r.tokens);
    CHECK(again.tokens == r.tokens);
    CHECK(again.repairs == 0);
    if (r.repairs == 0) CHECK(r.tokens == in);
  }
  const GenConfig g = GenConfig::desk();
  for (std::size_t i = 0; i < 200; ++i) {
    Rng spec_rng(mix_seed(22, i));
    const Tokens tokens = sample_table_spec(spec_rng, g).structure_tokens();
    CHECK(repair_structure(tokens).repairs == 0);
  }
}

TEST_CASE("zero triggers give zero cells") {
  const ModelConfig c = testing::tiny_full_vocab();
  const TableModel<float> model(c, 1);
  Rng rng(1);
  const auto mem = model.encode(testing::random_image(rng, c));
  CHECK(decode_cells(model, mem, {}).empty());

  TableModel<float> stops(c, 2);
  nudge_bias(stops, "structure.out.bias", Vocab::kEos, 100.0f);
  const Image img = testing::random_image(rng, c);
  const TableResult r = recognize_table(stops, img);
  CHECK(r.emitted_tokens.empty());
  CHECK(r.cells.empty());
  CHECK_FALSE(r.truncated);
  CHECK(r.html == "<table></table>");
}

TEST_CASE("decoding stops at the length caps") {
  const ModelConfig c = testing::tiny_full_vocab();
  TableModel<float> model(c, 3);
  const StructVocab sv;
  nudge_bias(model, "structure.out.bias", Vocab::kEos, -100.0f);
  nudge_bias(model, "structure.out.bias", sv.id("<td></td>"), 100.0f);
  nudge_bias(model, "content.out.bias", Vocab::kEos, -100.0f);
  Rng rng(3);
  const Image img = testing::random_image(rng, c);
  const auto mem = model.encode(img);
  const auto st = decode_structure(model, mem);
  CHECK(st.truncated);
  CHECK(st.ids.size() == static_cast<std::size_t>(c.max_struct_len - 1));
  CHECK(st.hidden.size() == st.ids.size());
  const auto cells = decode_cells(model, mem, st.hidden);
  REQUIRE(cells.size() == st.ids.size());
  for (const auto& cell : cells) {
    CHECK(cell.truncated);
    CHECK(tokenize_content(cell.content, ContentVocab()).size() == static_cast<std::size_t>(c.max_cell_len - 1));
  }
  const TableResult r = recognize_table(model, img);
  CHECK(r.truncated);
  check_result_invariants(model, img, r);
}

TEST_CASE("decoding is deterministic and greedy-only") {
  const ModelConfig c = testing::tiny_full_vocab();
  TableModel<float> a(c, 4), b(c, 4);
  Rng rng(4), rng_a(40), rng_b(40);
  scramble_heads(a, rng_a, 2.0);
  scramble_heads(b, rng_b, 2.0);
  const Image img = testing::random_image(rng, c);
  const TableResult first = recognize_table(a, img);
  CHECK(to_json(recognize_table(a, img)) == to_json(first));
  CHECK(to_json(recognize_table(b, img)) == to_json(first));
  CHECK_THROWS_AS(recognize_table(a, img, {2}), std::invalid_argument);
  CHECK_THROWS_AS(decode_structure(a, a.encode(img), {0}), std::invalid_argument);
}

TEST_CASE("recognized tables satisfy the result invariants") {
  const ModelConfig c = testing::tiny_full_vocab();
  Rng rng(5);
  int repaired = 0, with_cells = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    TableModel<float> model(c, seed);
    scramble_heads(model, rng, seed % 3 == 0 ? 0.0 : 3.0);
    for (int i = 0; i < 8; ++i) {
      const Image img = testing::random_image(rng, c);
      const TableResult r = recognize_table(model, img);
      check_result_invariants(model, img, r);
      repaired += r.repairs > 0;
      with_cells += !r.cells.empty();
    }
  }
  CHECK(repaired > 0);
  CHECK(with_cells > 0);
}

TEST_CASE("result JSON round trip") {
  const ModelConfig c = testing::tiny_full_vocab();
  TableModel<float> model(c, 6);
  Rng rng(6);
  scramble_heads(model, rng, 3.0);
  TableResult r = recognize_table(model, testing::random_image(rng, c));
  r.filename = "t.png";
  const auto j = to_json(r);
  CHECK(to_json(table_result_from_json(j)) == j);
  CHECK(to_json(table_result_from_json(nlohmann::json::parse(j.dump()))) == j);
  auto broken = j;
  broken.erase("html");
  CHECK_THROWS_AS(table_result_from_json(broken), FormatError);
  CHECK_THROWS_AS(table_result_from_json(nlohmann::json::array()), FormatError);
}

TEST_CASE("a model overfit to one table reproduces it") {
  const ModelConfig c = testing::tiny_full_vocab();
  const StructVocab sv;
  const ContentVocab cv;
  const Tokens structure{"<tr>", "<td></td>", "<td", " colspan=\"2\"", ">", "</td>", "</tr>",
                         "<tr>", "<td></td>", "<td></td>", "<td></td>", "</tr>"};
  const Tokens contents{"12", "ab", "", "7", "x"};
  testing::SampleTokens tokens;
  tokens.structure = encode(structure, sv);
  for (const auto& text : contents) {
    tokens.cell_chars.push_back(encode(tokenize_content(text, cv), cv));
    tokens.boxes.push_back({0.1f, 0.2f, 0.4f, 0.3f});
  }
  Rng rng(7);
  const auto image = std::make_shared<Image>(testing::random_image(rng, c));
  const testing::OwnedBatch ob = testing::assemble({image}, {tokens});

  TableModel<float> model(c, 7);
  Adam<float> adam(model.parameters().tensors());
  for (int step = 0; step < 300; ++step) train_step(model, adam, ob.batch, 3e-3);
  const TableResult r = recognize_table(model, *image);
  CHECK(r.emitted_tokens == structure);
  CHECK(r.repairs == 0);
  CHECK(r.html == "<table>" + assemble_html(structure, contents) + "</table>");
  REQUIRE(r.cells.size() == contents.size());
  for (std::size_t i = 0; i < contents.size(); ++i) {
    if (contents[i].empty()) continue;
    CHECK(std::abs(r.cells[i].bbox[0] - 0.1 * c.image_width) < 1.0);
    CHECK(std::abs(r.cells[i].bbox[3] - 0.3 * c.image_height) < 1.0);
  }
}

TEST_CASE("overlay outlines every cell") {
  Image img(20, 30, 1, 1.0f);
  TableResult r;
  r.cells.push_back({"a", {2, 3, 10, 8}, 0.5});
  const Image out = draw_overlay(img, r);
  CHECK(out.channels == 3);
  CHECK(out.at(3, 2, 1) == 0.0f);
  CHECK(out.at(7, 9, 0) == 1.0f);
  CHECK(out.at(7, 9, 1) == 0.0f);
  CHECK(out.at(5, 5, 1) == 1.0f);
  CHECK(out.at(0, 0, 1) == 1.0f);
}
