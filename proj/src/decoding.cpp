#include "tabrec/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tabrec/errors.hpp"

namespace tabrec {

using nlohmann::json;

namespace {

void check_options(const DecodeOptions& options) {
  if (options.beam_width != 1) {
    throw std::invalid_argument("beam width " + std::to_string(options.beam_width) +
                                " requested; only greedy decoding (1) is available");
  }
}

// Greedy pick over one logits row. Returns (id, softmax probability of id).
template <typename T>
std::pair<int, double> pick(std::span<const T> row) {
  double mx = -INFINITY;
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0;
  for (T v : row) z += std::exp(static_cast<double>(v) - mx);
  int best = -1;
  for (int i = 0; i < static_cast<int>(row.size()); ++i) {
    if (i == Vocab::kPad || i == Vocab::kSos || i == Vocab::kUnk) continue;
    if (best < 0 || row[static_cast<std::size_t>(i)] > row[static_cast<std::size_t>(best)]) best = i;
  }
  const double p = std::exp(static_cast<double>(row[static_cast<std::size_t>(best)]) - mx) / z;
  return {best, p};
}

}  // namespace

template <typename T>
StructureDecode<T> decode_structure(const TableModel<T>& model, const EncoderMemory<T>& memory,
                                    const DecodeOptions& options) {
  check_options(options);
  NoGradScope<T> no_grad;
  const auto& cfg = model.config();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t vocab = static_cast<std::size_t>(cfg.struct_vocab_size);
  StructureDecode<T> out;
  std::vector<int> input{Vocab::kSos};
  const int steps = cfg.max_struct_len - 1;
  for (int s = 0; s < steps; ++s) {
    const Tensor<T> hidden = model.shared_decode(memory, input);
    const Tensor<T> logits = model.structure_head(hidden, memory);
    const std::size_t last = input.size() - 1;
    const auto [id, p] = pick<T>(logits.data().subspan(last * vocab, vocab));
    if (id == Vocab::kEos) return out;
    const auto h = hidden.data().subspan(last * d, d);
    out.ids.push_back(id);
    out.probabilities.push_back(p);
    out.hidden.emplace_back(h.begin(), h.end());
    input.push_back(id);
  }
  out.truncated = true;
  return out;
}

template <typename T>
std::vector<CellPrediction> decode_cells(const TableModel<T>& model, const EncoderMemory<T>& memory,
                                         const std::vector<std::vector<T>>& trigger_hidden) {
  const std::size_t n = trigger_hidden.size();
  std::vector<CellPrediction> cells(n);
  if (n == 0) return cells;
  NoGradScope<T> no_grad;
  const auto& cfg = model.config();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t vocab = static_cast<std::size_t>(cfg.content_vocab_size);
  std::vector<T> flat;
  flat.reserve(n * d);
  for (const auto& h : trigger_hidden) {
    if (h.size() != d) throw ShapeError("decode_cells: hidden state width " + std::to_string(h.size()));
    flat.insert(flat.end(), h.begin(), h.end());
  }
  const Tensor<T> hidden({n, d}, std::move(flat));

  const Tensor<T> boxes = model.bbox_head(hidden, memory);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = boxes.data().subspan(i * 4, 4);
    cells[i].bbox = {std::min<double>(b[0], b[2]), std::min<double>(b[1], b[3]), std::max<double>(b[0], b[2]),
                     std::max<double>(b[1], b[3])};
  }

  const ContentVocab content_vocab;
  std::vector<std::vector<int>> seqs(n, std::vector<int>{Vocab::kSos});
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;
  const std::size_t steps = static_cast<std::size_t>(cfg.max_cell_len - 1);
  for (std::size_t s = 0; s < steps && !active.empty(); ++s) {
    const std::size_t len = s + 1;
    std::vector<int> ids;
    ids.reserve(active.size() * len);
    for (std::size_t c : active) ids.insert(ids.end(), seqs[c].begin(), seqs[c].end());
    const Tensor<T> logits =
        model.content_decode(memory, ops::gather_rows(hidden, std::span<const std::size_t>(active)), ids, len);
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t row = a * len + s;
      const int id = pick<T>(logits.data().subspan(row * vocab, vocab)).first;
      const std::size_t c = active[a];
      if (id == Vocab::kEos) continue;
      seqs[c].push_back(id);
      if (id < static_cast<int>(content_vocab.size())) cells[c].content += content_vocab.token(id);
      still.push_back(c);
    }
    active = std::move(still);
  }
  for (std::size_t c : active) cells[c].truncated = true;
  return cells;
}

RepairResult repair_structure(const std::vector<std::string>& tokens) {
  enum class Cell { kNone, kOpening, kBody };
  RepairResult r;
  auto& out = r.tokens;
  Cell cell = Cell::kNone;
  std::size_t cell_start = 0;
  bool has_row_span = false, has_col_span = false;
  bool in_row = false;
  std::string section;  // "thead", "tbody" or empty

  auto finish_cell = [&] {
    if (cell == Cell::kNone) return;
    if (!has_row_span && !has_col_span) {
      // `<td` `>` `</td>` without attributes is the plain cell token
      out.resize(cell_start);
      out.push_back("<td></td>");
      ++r.repairs;
      cell = Cell::kNone;
      return;
    }
    if (cell == Cell::kOpening) {
      out.push_back(">");
      ++r.repairs;
    }
    out.push_back("</td>");
    cell = Cell::kNone;
  };
  auto close_row = [&] {
    if (cell != Cell::kNone) {
      finish_cell();
      ++r.repairs;
    }
    if (in_row) {
      out.push_back("</tr>");
      ++r.repairs;
      in_row = false;
    }
  };
  auto close_section = [&] {
    close_row();
    if (!section.empty()) {
      out.push_back("</" + section + ">");
      ++r.repairs;
      section.clear();
    }
  };

  for (const auto& t : tokens) {
    if (cell == Cell::kOpening) {
      if (StructVocab::is_span_attribute(t)) {
        bool& seen = t.starts_with(" rowspan") ? has_row_span : has_col_span;
        if (seen) {
          ++r.repairs;
        } else {
          seen = true;
          out.push_back(t);
        }
        continue;
      }
      if (t == ">") {
        out.push_back(t);
        cell = Cell::kBody;
        continue;
      }
    } else if (cell == Cell::kBody && t == "</td>") {
      if (!has_row_span && !has_col_span) {
        finish_cell();
      } else {
        out.push_back(t);
        cell = Cell::kNone;
      }
      continue;
    }
    if (cell != Cell::kNone) {
      finish_cell();
      ++r.repairs;
    }

    if (t == "<td></td>" || t == "<td") {
      if (!in_row) {
        out.push_back("<tr>");
        ++r.repairs;
        in_row = true;
      }
      if (t == "<td") {
        cell = Cell::kOpening;
        cell_start = out.size();
        has_row_span = has_col_span = false;
      }
      out.push_back(t);
    } else if (t == "<tr>") {
      close_row();
      out.push_back(t);
      in_row = true;
    } else if (t == "</tr>") {
      if (in_row) {
        out.push_back(t);
        in_row = false;
      } else {
        ++r.repairs;
      }
    } else if (t == "<thead>" || t == "<tbody>") {
      close_section();
      out.push_back(t);
      section = t.substr(1, t.size() - 2);
    } else if (t == "</thead>" || t == "</tbody>") {
      if (!section.empty() && t == "</" + section + ">") {
        close_row();
        out.push_back(t);
        section.clear();
      } else {
        ++r.repairs;
      }
    } else {
      // span attribute, `>` or `</td>` outside a cell, or a special token
      ++r.repairs;
    }
  }
  close_section();
  return r;
}

template <typename T>
TableResult recognize_table(const TableModel<T>& model, const Image& image, const DecodeOptions& options) {
  check_options(options);
  NoGradScope<T> no_grad;
  const auto& cfg = model.config();
  const EncoderMemory<T> memory = model.encode(image);
  const StructureDecode<T> st = decode_structure(model, memory, options);

  const StructVocab vocab(cfg.max_span);
  TableResult result;
  result.truncated = st.truncated;
  result.token_probabilities = st.probabilities;
  std::vector<std::vector<T>> trigger_hidden;
  std::vector<double> confidence;
  for (std::size_t i = 0; i < st.ids.size(); ++i) {
    const int id = st.ids[i];
    result.emitted_tokens.push_back(id < static_cast<int>(vocab.size()) ? vocab.token(id) : vocab.token(Vocab::kUnk));
    if (StructVocab::is_cell_trigger(result.emitted_tokens.back())) {
      trigger_hidden.push_back(st.hidden[i]);
      confidence.push_back(st.probabilities[i]);
    }
  }
  RepairResult repaired = repair_structure(result.emitted_tokens);
  result.structure_tokens = std::move(repaired.tokens);
  result.repairs = repaired.repairs;

  const std::vector<CellPrediction> cells = decode_cells(model, memory, trigger_hidden);
  std::vector<std::string> contents;
  const double w = image.width, h = image.height;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellResult c;
    c.content = cells[i].content;
    const auto& b = cells[i].bbox;
    c.bbox = {std::clamp(b[0] * w, 0.0, w), std::clamp(b[1] * h, 0.0, h), std::clamp(b[2] * w, 0.0, w),
              std::clamp(b[3] * h, 0.0, h)};
    c.confidence = confidence[i];
    contents.push_back(c.content);
    result.cells.push_back(std::move(c));
  }
  result.html = "<table>" + assemble_html(result.structure_tokens, contents) + "</table>";
  return result;
}

json to_json(const TableResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"content", c.content}, {"bbox", c.bbox}, {"confidence", c.confidence}});
  }
  return json{
      {"filename", r.filename},
      {"html", r.html},
      {"structure_tokens", r.structure_tokens},
      {"emitted_tokens", r.emitted_tokens},
      {"token_probabilities", r.token_probabilities},
      {"cells", cells},
      {"truncated", r.truncated},
      {"repairs", r.repairs},
  };
}

TableResult table_result_from_json(const json& j) {
  TableResult r;
  try {
    r.filename = j.at("filename").get<std::string>();
    r.html = j.at("html").get<std::string>();
    r.structure_tokens = j.value("structure_tokens", std::vector<std::string>{});
    r.emitted_tokens = j.value("emitted_tokens", std::vector<std::string>{});
    r.token_probabilities = j.value("token_probabilities", std::vector<double>{});
    r.truncated = j.value("truncated", false);
    r.repairs = j.value("repairs", 0);
    for (const auto& c : j.at("cells")) {
      CellResult cell;
      cell.content = c.value("content", std::string{});
      cell.bbox = c.at("bbox").get<std::array<double, 4>>();
      cell.confidence = c.at("confidence").get<double>();
      r.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("prediction record: ") + e.what());
  }
  return r;
}

Image draw_overlay(const Image& image, const TableResult& result) {
  Image out = convert_channels(image, 3);
  auto plot = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= out.width || y >= out.height) return;
    out.at(y, x, 0) = 1.0f;
    out.at(y, x, 1) = 0.0f;
    out.at(y, x, 2) = 0.0f;
  };
  for (const auto& c : result.cells) {
    const int x0 = static_cast<int>(std::floor(c.bbox[0])), y0 = static_cast<int>(std::floor(c.bbox[1]));
    const int x1 = static_cast<int>(std::ceil(c.bbox[2])) - 1, y1 = static_cast<int>(std::ceil(c.bbox[3])) - 1;
    for (int x = x0; x <= x1; ++x) {
      plot(x, y0);
      plot(x, y1);
    }
    for (int y = y0; y <= y1; ++y) {
      plot(x0, y);
      plot(x1, y);
    }
  }
  return out;
}

#define TABREC_INSTANTIATE_DECODING(T)                                                                            \
  template StructureDecode<T> decode_structure(const TableModel<T>&, const EncoderMemory<T>&,                     \
                                               const DecodeOptions&);                                             \
  template std::vector<CellPrediction> decode_cells(const TableModel<T>&, const EncoderMemory<T>&,                \
                                                    const std::vector<std::vector<T>>&);                          \
  template TableResult recognize_table(const TableModel<T>&, const Image&, const DecodeOptions&);

TABREC_INSTANTIATE_DECODING(float)
TABREC_INSTANTIATE_DECODING(double)

}  // namespace tabrec
