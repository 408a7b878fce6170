#include "tabrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tabrec/errors.hpp"
#include "tabrec/font.hpp"
#include "tabrec/vocab.hpp"

namespace tabrec {

using nlohmann::json;

// ---------------------------------------------------------------- annotation

void TableAnnotation::validate() const {
  const std::size_t triggers = count_cell_triggers(structure_tokens);
  if (triggers != cells.size()) {
    throw FormatError("annotation " + filename + ": " + std::to_string(triggers) + " cell tokens but " +
                      std::to_string(cells.size()) + " cells");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const std::string where = "annotation " + filename + " cell " + std::to_string(i);
    if (c.tokens.empty() && c.bbox) throw FormatError(where + ": empty cell has a bbox");
    if (!c.tokens.empty() && !c.bbox) throw FormatError(where + ": non-empty cell has no bbox");
    if (!c.bbox) continue;
    const auto& b = *c.bbox;
    if (!(0 <= b[0] && b[0] <= b[2] && 0 <= b[1] && b[1] <= b[3])) throw FormatError(where + ": malformed bbox");
    if (width > 0 && height > 0 && (b[2] > width || b[3] > height)) throw FormatError(where + ": bbox outside image");
  }
}

std::string TableAnnotation::html() const {
  std::vector<std::string> contents;
  contents.reserve(cells.size());
  for (const auto& c : cells) {
    std::string s;
    for (const auto& t : c.tokens) s += t;
    contents.push_back(std::move(s));
  }
  return "<table>" + assemble_html(structure_tokens, contents) + "</table>";
}

bool TableAnnotation::is_complex() const {
  return std::any_of(structure_tokens.begin(), structure_tokens.end(),
                     [](const std::string& t) { return StructVocab::is_span_attribute(t); });
}

// ---------------------------------------------------------------- generator

void GenConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("generator config: ") + what);
  };
  require(image_height > 0 && image_width > 0, "image extents must be positive");
  require(channels == 1 || channels == 3, "channels must be 1 or 3");
  require(1 <= min_rows && min_rows <= max_rows, "row bounds");
  require(1 <= min_cols && min_cols <= max_cols, "column bounds");
  require(span_prob >= 0 && span_prob <= 1 && empty_prob >= 0 && empty_prob <= 1, "probabilities must be in [0, 1]");
  require(header_prob >= 0 && header_prob <= 1 && horizontal_rule_prob >= 0 && horizontal_rule_prob <= 1,
          "probabilities must be in [0, 1]");
  require(max_span >= 2, "max_span must be at least 2");
  require(glyph_scale >= 1 && margin >= 0 && cell_padding >= 0 && max_text_len >= 1 && span_attempts >= 1,
          "glyph and spacing parameters");
  const int min_w = (image_width - 2 * margin) / max_cols;
  const int min_h = (image_height - 2 * margin) / max_rows;
  require(min_w >= 3 && min_h >= 3, "grid does not fit the image");
}

GenConfig GenConfig::desk() { return GenConfig{}; }

GenConfig GenConfig::full_scale() {
  GenConfig g;
  g.image_height = 480;
  g.image_width = 480;
  g.channels = 3;
  g.max_rows = 12;
  g.max_cols = 8;
  g.margin = 8;
  g.max_text_len = 12;
  return g;
}

void TableSpec::check_tiling(int max_span) const {
  std::vector<int> owner(static_cast<std::size_t>(rows * cols), -1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (c.rowspan < 1 || c.colspan < 1 || c.rowspan > max_span || c.colspan > max_span) {
      throw std::logic_error("cell span outside [1, max_span]");
    }
    if (c.row < 0 || c.col < 0 || c.row + c.rowspan > rows || c.col + c.colspan > cols) {
      throw std::logic_error("cell extends beyond the grid");
    }
    if (c.row < header_rows && c.row + c.rowspan > header_rows) throw std::logic_error("span crosses the header");
    for (int r = c.row; r < c.row + c.rowspan; ++r) {
      for (int k = c.col; k < c.col + c.colspan; ++k) {
        int& o = owner[static_cast<std::size_t>(r * cols + k)];
        if (o >= 0) throw std::logic_error("overlapping cells");
        o = static_cast<int>(i);
      }
    }
  }
  if (std::find(owner.begin(), owner.end(), -1) != owner.end()) throw std::logic_error("grid has uncovered slots");
}

std::vector<std::string> TableSpec::structure_tokens() const {
  std::vector<std::string> out;
  auto emit_rows = [&](int from, int to) {
    for (int r = from; r < to; ++r) {
      out.emplace_back("<tr>");
      for (const auto& c : cells) {
        if (c.row != r) continue;
        if (c.rowspan == 1 && c.colspan == 1) {
          out.emplace_back("<td></td>");
          continue;
        }
        out.emplace_back("<td");
        if (c.rowspan > 1) out.push_back(StructVocab::rowspan_token(c.rowspan));
        if (c.colspan > 1) out.push_back(StructVocab::colspan_token(c.colspan));
        out.emplace_back(">");
        out.emplace_back("</td>");
      }
      out.emplace_back("</tr>");
    }
  };
  if (header_rows > 0) {
    out.emplace_back("<thead>");
    emit_rows(0, header_rows);
    out.emplace_back("</thead>");
  }
  out.emplace_back("<tbody>");
  emit_rows(header_rows, rows);
  out.emplace_back("</tbody>");
  return out;
}

namespace {

std::string digits(Rng& rng, int n, bool leading_nonzero) {
  std::string s;
  for (int i = 0; i < n; ++i) {
    const int lo = (i == 0 && leading_nonzero && n > 1) ? 1 : 0;
    s.push_back(static_cast<char>('0' + rng.uniform_int(lo, 9)));
  }
  return s;
}

std::string word(Rng& rng, int n, bool capital) {
  std::string s;
  for (int i = 0; i < n; ++i) {
    const char base = (i == 0 && capital) ? 'A' : 'a';
    s.push_back(static_cast<char>(base + rng.uniform_int(0, 25)));
  }
  return s;
}

// Every draw is sequenced through a named local so the result does not depend
// on argument evaluation order.
std::string sample_text(Rng& rng) {
  auto count = [&](int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); };
  switch (rng.uniform_int(0, 8)) {
    case 0:
      return digits(rng, count(1, 4), true);
    case 1: {
      std::string s = digits(rng, count(1, 3), true) + ".";
      return s + digits(rng, count(1, 2), false);
    }
    case 2:
      return digits(rng, count(1, 2), true) + "%";
    case 3: {
      std::string s = "-" + digits(rng, count(1, 2), true) + ".";
      return s + digits(rng, 1, false);
    }
    case 4:
      return "(" + digits(rng, count(1, 3), true) + ")";
    case 5: {
      std::string s(1, static_cast<char>('1' + rng.uniform_int(0, 8)));
      return s + "," + digits(rng, 3, false);
    }
    case 6:
    case 7: {
      const int n = count(2, 7);
      return word(rng, n, rng.bernoulli(0.7));
    }
    default: {
      std::string s = word(rng, count(1, 3), true) + " ";
      return s + word(rng, count(1, 3), false);
    }
  }
}

std::string fit_text(std::string text, std::size_t capacity) {
  if (text.size() > capacity) text.resize(capacity);
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

// Integer rule positions: n + 1 lines spanning [start, start + extent - 1].
std::vector<int> rule_positions(int start, int extent, int n) {
  std::vector<int> p(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) p[static_cast<std::size_t>(i)] = start + i * (extent - 1) / n;
  return p;
}

}  // namespace

TableSpec sample_table_spec(Rng& rng, const GenConfig& config) {
  config.validate();
  TableSpec spec;
  spec.rows = static_cast<int>(rng.uniform_int(config.min_rows, config.max_rows));
  spec.cols = static_cast<int>(rng.uniform_int(config.min_cols, config.max_cols));
  spec.header_rows = (spec.rows >= 2 && rng.bernoulli(config.header_prob)) ? 1 : 0;
  spec.rules = rng.bernoulli(config.horizontal_rule_prob) ? RuleStyle::kHorizontal : RuleStyle::kFull;
  spec.centered = rng.bernoulli(0.5);

  std::vector<char> taken(static_cast<std::size_t>(spec.rows * spec.cols), 0);
  auto is_free = [&](int r0, int c0, int rs, int cs) {
    for (int r = r0; r < r0 + rs; ++r) {
      for (int c = c0; c < c0 + cs; ++c) {
        if (taken[static_cast<std::size_t>(r * spec.cols + c)]) return false;
      }
    }
    return true;
  };
  for (int r = 0; r < spec.rows; ++r) {
    const int row_limit = r < spec.header_rows ? spec.header_rows : spec.rows;
    for (int c = 0; c < spec.cols; ++c) {
      if (taken[static_cast<std::size_t>(r * spec.cols + c)]) continue;
      CellSpec cell{r, c, 1, 1, ""};
      if (rng.bernoulli(config.span_prob)) {
        const int max_rs = std::min(config.max_span, row_limit - r);
        const int max_cs = std::min(config.max_span, spec.cols - c);
        for (int attempt = 0; attempt < config.span_attempts; ++attempt) {
          const auto kind = rng.uniform_int(0, 2);  // 0 rows, 1 columns, 2 both
          const bool span_rows = kind != 1, span_cols = kind != 0;
          if ((span_rows && max_rs < 2) || (span_cols && max_cs < 2)) continue;
          const int rs = span_rows ? static_cast<int>(rng.uniform_int(2, max_rs)) : 1;
          const int cs = span_cols ? static_cast<int>(rng.uniform_int(2, max_cs)) : 1;
          if (is_free(r, c, rs, cs)) {
            cell.rowspan = rs;
            cell.colspan = cs;
            break;
          }
        }
      }
      for (int rr = r; rr < r + cell.rowspan; ++rr) {
        for (int cc = c; cc < c + cell.colspan; ++cc) taken[static_cast<std::size_t>(rr * spec.cols + cc)] = 1;
      }
      if (!rng.bernoulli(config.empty_prob)) cell.text = fit_text(sample_text(rng), static_cast<std::size_t>(config.max_text_len));
      spec.cells.push_back(std::move(cell));
    }
  }
  return spec;
}

Sample render(const TableSpec& spec, const GenConfig& config) {
  config.validate();
  spec.check_tiling(config.max_span);
  const int s = config.glyph_scale;
  Sample sample;
  Image& img = sample.image;
  img = Image(config.image_height, config.image_width, config.channels, 1.0f);
  auto ink = [&](int y, int x) {
    if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
    for (int ch = 0; ch < img.channels; ++ch) img.at(y, x, ch) = 0.0f;
  };
  const auto xs = rule_positions(config.margin, config.image_width - 2 * config.margin, spec.cols);
  const auto ys = rule_positions(config.margin, config.image_height - 2 * config.margin, spec.rows);

  TableAnnotation& ann = sample.annotation;
  ann.height = config.image_height;
  ann.width = config.image_width;
  ann.channels = config.channels;
  ann.structure_tokens = spec.structure_tokens();

  for (const auto& c : spec.cells) {
    const int left = xs[static_cast<std::size_t>(c.col)], right = xs[static_cast<std::size_t>(c.col + c.colspan)];
    const int top = ys[static_cast<std::size_t>(c.row)], bottom = ys[static_cast<std::size_t>(c.row + c.rowspan)];
    for (int x = left; x <= right; ++x) {
      ink(top, x);
      ink(bottom, x);
    }
    if (spec.rules == RuleStyle::kFull) {
      for (int y = top; y <= bottom; ++y) {
        ink(y, left);
        ink(y, right);
      }
    }

    const int inner_w = right - left - 1, inner_h = bottom - top - 1;
    const int avail_w = inner_w - 2 * config.cell_padding;
    std::size_t capacity = 0;
    if (inner_h - 2 * config.cell_padding >= kGlyphHeight * s && avail_w >= kGlyphWidth * s) {
      capacity = static_cast<std::size_t>((avail_w + s) / (kGlyphAdvance * s));
    }
    const std::string text = fit_text(c.text, capacity);
    CellAnnotation cell;
    for (char ch : text) cell.tokens.emplace_back(1, ch);
    if (!text.empty()) {
      const int tw = (kGlyphAdvance * static_cast<int>(text.size()) - 1) * s;
      const int th = kGlyphHeight * s;
      const int x0 = spec.centered ? left + 1 + (inner_w - tw) / 2 : left + 1 + config.cell_padding;
      const int y0 = top + 1 + (inner_h - th) / 2;
      for (std::size_t i = 0; i < text.size(); ++i) {
        const Glyph& g = glyph(text[i]);
        const int gx = x0 + static_cast<int>(i) * kGlyphAdvance * s;
        for (int gy = 0; gy < kGlyphHeight; ++gy) {
          for (int bx = 0; bx < kGlyphWidth; ++bx) {
            if (!(g[static_cast<std::size_t>(gy)] >> (kGlyphWidth - 1 - bx) & 1)) continue;
            for (int dy = 0; dy < s; ++dy) {
              for (int dx = 0; dx < s; ++dx) ink(y0 + gy * s + dy, gx + bx * s + dx);
            }
          }
        }
      }
      cell.bbox = BBox{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + tw),
                       static_cast<double>(y0 + th)};
    }
    ann.cells.push_back(std::move(cell));
  }
  ann.validate();
  return sample;
}

Sample generate_sample(std::uint64_t seed, std::size_t index, const GenConfig& config) {
  const std::uint64_t sub = mix_seed(seed, index);
  Rng rng(sub);
  TableSpec spec = sample_table_spec(rng, config);
  spec.seed = sub;
  Sample sample = render(spec, config);
  char name[32];
  std::snprintf(name, sizeof name, "synth_%06zu.png", index);
  sample.annotation.filename = name;
  return sample;
}

// ---------------------------------------------------------------- files

json to_json(const TableAnnotation& a) {
  json cells = json::array();
  for (const auto& c : a.cells) {
    json cell{{"tokens", c.tokens}};
    if (c.bbox) {
      json box = json::array();
      for (double v : *c.bbox) {
        if (v == std::floor(v) && std::abs(v) < 1e15) {
          box.push_back(static_cast<std::int64_t>(v));
        } else {
          box.push_back(v);
        }
      }
      cell["bbox"] = box;
    }
    cells.push_back(std::move(cell));
  }
  return json{{"filename", a.filename},
              {"split", a.split},
              {"html", {{"structure", {{"tokens", a.structure_tokens}}}, {"cells", cells}}}};
}

TableAnnotation annotation_from_json(const json& j) {
  TableAnnotation a;
  try {
    a.filename = j.at("filename").get<std::string>();
    a.split = j.value("split", std::string("train"));
    const json& html = j.at("html");
    a.structure_tokens = html.at("structure").at("tokens").get<std::vector<std::string>>();
    for (const auto& c : html.at("cells")) {
      CellAnnotation cell;
      cell.tokens = c.at("tokens").get<std::vector<std::string>>();
      if (c.contains("bbox")) {
        const auto v = c.at("bbox").get<std::vector<double>>();
        if (v.size() != 4) throw FormatError("bbox must have 4 numbers");
        cell.bbox = BBox{v[0], v[1], v[2], v[3]};
      }
      a.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotation record: ") + e.what());
  }
  if (a.filename.empty() || a.filename.find("..") != std::string::npos) {
    throw FormatError("annotation record: invalid filename '" + a.filename + "'");
  }
  return a;
}

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "annotations.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "annotations.jsonl").string());
  for (const auto& s : samples) {
    s.annotation.validate();
    const auto img_dir = dir / s.annotation.split;
    std::filesystem::create_directories(img_dir);
    write_png(img_dir / s.annotation.filename, s.image);
    out << to_json(s.annotation).dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + (dir / "annotations.jsonl").string());
}

namespace {

struct Source {
  std::filesystem::path jsonl;
  std::filesystem::path root;
};

Source resolve(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return {path / "annotations.jsonl", path};
  return {path, path.parent_path()};
}

template <typename F>
void read_lines(const std::filesystem::path& jsonl, LoadReport* report, F&& on_record) {
  std::ifstream in(jsonl, std::ios::binary);
  if (!in) throw FormatError("cannot open annotations " + jsonl.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TableAnnotation a = annotation_from_json(j);
      on_record(std::move(a));
      if (report) ++report->loaded;
    } catch (const std::exception& e) {
      if (!report) continue;
      ++report->skipped;
      report->warnings.push_back(jsonl.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<TableAnnotation> load_annotations(const std::filesystem::path& path, LoadReport* report) {
  const Source src = resolve(path);
  std::vector<TableAnnotation> out;
  read_lines(src.jsonl, report, [&](TableAnnotation a) {
    const std::size_t triggers = count_cell_triggers(a.structure_tokens);
    if (triggers != a.cells.size()) {
      throw FormatError(std::to_string(triggers) + " cell tokens but " + std::to_string(a.cells.size()) + " cells");
    }
    out.push_back(std::move(a));
  });
  return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path, LoadReport* report) {
  const Source src = resolve(path);
  std::vector<Sample> out;
  read_lines(src.jsonl, report, [&](TableAnnotation a) {
    Sample s;
    s.image = read_png(src.root / a.split / a.filename);
    a.height = s.image.height;
    a.width = s.image.width;
    a.channels = s.image.channels;
    a.validate();
    s.annotation = std::move(a);
    out.push_back(std::move(s));
  });
  return out;
}

// ---------------------------------------------------------------- batching

std::vector<Batch> batchify(const std::vector<const Sample*>& samples, std::size_t batch_size,
                            const ModelConfig& config, BatchReport* report) {
  if (batch_size == 0) throw std::invalid_argument("batchify: batch size must be positive");
  const StructVocab svocab(config.max_span);
  const ContentVocab cvocab;
  struct Encoded {
    const Sample* sample;
    std::vector<int> structure;
    std::vector<std::vector<int>> cells;
  };
  std::vector<Encoded> kept;
  auto skip = [&](const Sample& s, const std::string& why) {
    if (!report) return;
    ++report->skipped;
    report->warnings.push_back(s.annotation.filename + ": " + why);
  };
  for (const Sample* sp : samples) {
    const Sample& s = *sp;
    if (s.image.height != config.image_height || s.image.width != config.image_width ||
        s.image.channels != config.image_channels) {
      skip(s, "image does not match the model input size");
      continue;
    }
    Encoded e{sp, encode(s.annotation.structure_tokens, svocab), {}};
    if (static_cast<int>(e.structure.size()) + 2 > config.max_struct_len) {
      skip(s, std::to_string(e.structure.size()) + " structure tokens exceed max_struct_len");
      continue;
    }
    if (count_cell_triggers(s.annotation.structure_tokens) != s.annotation.cells.size()) {
      skip(s, "cell count does not match structure");
      continue;
    }
    bool ok = true;
    for (const auto& c : s.annotation.cells) {
      e.cells.push_back(encode(c.tokens, cvocab));
      for (int& id : e.cells.back()) {
        if (id >= config.content_vocab_size) id = Vocab::kUnk;
      }
      if (static_cast<int>(c.tokens.size()) + 2 > config.max_cell_len) ok = false;
    }
    if (!ok) {
      skip(s, "cell content exceeds max_cell_len");
      continue;
    }
    for (int& id : e.structure) {
      if (id >= config.struct_vocab_size) id = Vocab::kUnk;
    }
    kept.push_back(std::move(e));
  }

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < kept.size(); start += batch_size) {
    const std::size_t end = std::min(kept.size(), start + batch_size);
    Batch b;
    std::size_t t = 0, l = 1;
    for (std::size_t i = start; i < end; ++i) {
      t = std::max(t, kept[i].structure.size() + 1);
      for (const auto& c : kept[i].cells) l = std::max(l, c.size() + 1);
    }
    b.seq_len = t;
    b.cell_len = l;
    for (std::size_t i = start; i < end; ++i) {
      const Encoded& e = kept[i];
      const auto& ann = e.sample->annotation;
      b.images.push_back(&e.sample->image);
      const std::size_t n = e.structure.size();
      std::vector<int> in(t, Vocab::kPad), out(t, Vocab::kPad);
      in[0] = Vocab::kSos;
      for (std::size_t k = 0; k < n; ++k) {
        in[k + 1] = e.structure[k];
        out[k] = e.structure[k];
      }
      out[n] = Vocab::kEos;
      b.struct_in.insert(b.struct_in.end(), in.begin(), in.end());
      b.struct_out.insert(b.struct_out.end(), out.begin(), out.end());

      const double w = ann.width > 0 ? ann.width : e.sample->image.width;
      const double h = ann.height > 0 ? ann.height : e.sample->image.height;
      std::size_t cell = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!StructVocab::is_cell_trigger(ann.structure_tokens[k])) continue;
        b.cells.push_back({i - start, k});
        const auto& chars = e.cells[cell];
        std::vector<int> cin(l, Vocab::kPad), cout(l, Vocab::kPad);
        cin[0] = Vocab::kSos;
        for (std::size_t j = 0; j < chars.size(); ++j) {
          cin[j + 1] = chars[j];
          cout[j] = chars[j];
        }
        cout[chars.size()] = Vocab::kEos;
        b.cell_in.insert(b.cell_in.end(), cin.begin(), cin.end());
        b.cell_out.insert(b.cell_out.end(), cout.begin(), cout.end());
        const auto& box = ann.cells[cell].bbox;
        if (box) {
          b.bbox.insert(b.bbox.end(), {static_cast<float>((*box)[0] / w), static_cast<float>((*box)[1] / h),
                                       static_cast<float>((*box)[2] / w), static_cast<float>((*box)[3] / h)});
          b.bbox_mask.push_back(1);
        } else {
          b.bbox.insert(b.bbox.end(), 4, 0.0f);
          b.bbox_mask.push_back(0);
        }
        ++cell;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> batchify(const std::vector<Sample>& samples, std::size_t batch_size, const ModelConfig& config,
                            BatchReport* report) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return batchify(ptrs, batch_size, config, report);
}

}  // namespace tabrec
