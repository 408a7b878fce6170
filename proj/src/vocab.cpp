#include "tabrec/vocab.hpp"

#include <array>
#include <cctype>

#include "tabrec/errors.hpp"

namespace tabrec {

Vocab::Vocab() {
  for (const char* s : {"<pad>", "<sos>", "<eos>", "<unk>"}) add(s);
}

void Vocab::add(std::string token) {
  const int id = static_cast<int>(tokens_.size());
  auto [it, inserted] = index_.emplace(token, id);
  if (!inserted) throw std::logic_error("duplicate vocabulary token: " + token);
  tokens_.push_back(std::move(token));
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

StructVocab::StructVocab(int max_span) : max_span_(max_span) {
  if (max_span < 2) throw std::invalid_argument("max_span must be at least 2");
  for (const char* s : {"<thead>", "</thead>", "<tbody>", "</tbody>", "<tr>", "</tr>", "<td></td>", "<td", ">", "</td>"}) {
    add(s);
  }
  for (int k = 2; k <= max_span; ++k) add(rowspan_token(k));
  for (int k = 2; k <= max_span; ++k) add(colspan_token(k));
}

bool StructVocab::is_cell_trigger(std::string_view token) { return token == "<td></td>" || token == "<td"; }

bool StructVocab::is_cell_trigger(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < size() && is_cell_trigger(token(id));
}

bool StructVocab::is_span_attribute(std::string_view token) {
  return token.starts_with(" rowspan=\"") || token.starts_with(" colspan=\"");
}

ContentVocab::ContentVocab() {
  for (char c = 0x20; c <= 0x7E; ++c) add(std::string(1, c));
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string excerpt(std::string_view html, std::size_t pos) {
  std::size_t end = html.find('>', pos);
  end = end == std::string_view::npos ? std::min(html.size(), pos + 24) : end + 1;
  return std::string(html.substr(pos, end - pos));
}

[[noreturn]] void reject(std::string_view html, std::size_t pos, const std::string& why) {
  throw FormatError(why + " at offset " + std::to_string(pos) + ": '" + excerpt(html, pos) + "'");
}

}  // namespace

std::vector<std::string> tokenize_structure(std::string_view html, int max_span) {
  static constexpr std::array<std::string_view, 6> kPlainTags = {"<thead>", "</thead>", "<tbody>",
                                                                  "</tbody>", "<tr>", "</tr>"};
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  const std::size_t n = html.size();
  while (pos < n) {
    if (is_space(html[pos])) {
      ++pos;
      continue;
    }
    if (html[pos] != '<') reject(html, pos, "text outside a cell");
    std::string_view rest = html.substr(pos);
    if (rest.starts_with("<table>")) {
      pos += 7;
      continue;
    }
    if (rest.starts_with("</table>")) {
      pos += 8;
      continue;
    }
    bool matched = false;
    for (std::string_view tag : kPlainTags) {
      if (rest.starts_with(tag)) {
        tokens.emplace_back(tag);
        pos += tag.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (!rest.starts_with("<td") || (rest.size() > 3 && rest[3] != '>' && !is_space(rest[3]))) {
      reject(html, pos, "unsupported tag");
    }
    const std::size_t open = pos;
    pos += 3;
    std::vector<std::string> attrs;
    bool have_row = false, have_col = false;
    while (true) {
      while (pos < n && is_space(html[pos])) ++pos;
      if (pos >= n) reject(html, open, "unterminated cell tag");
      if (html[pos] == '>') {
        ++pos;
        break;
      }
      std::string_view a = html.substr(pos);
      bool row;
      if (a.starts_with("rowspan=\"")) {
        row = true;
      } else if (a.starts_with("colspan=\"")) {
        row = false;
      } else {
        reject(html, open, "unsupported cell attribute");
      }
      pos += 9;
      std::size_t digits_start = pos;
      while (pos < n && std::isdigit(static_cast<unsigned char>(html[pos]))) ++pos;
      if (pos == digits_start || pos >= n || html[pos] != '"' || pos - digits_start > 6) {
        reject(html, open, "malformed span value");
      }
      const int k = std::stoi(std::string(html.substr(digits_start, pos - digits_start)));
      ++pos;
      if ((row && have_row) || (!row && have_col)) reject(html, open, "duplicate span attribute");
      (row ? have_row : have_col) = true;
      if (k < 1 || k > max_span) reject(html, open, "span value " + std::to_string(k) + " outside [1, " + std::to_string(max_span) + "]");
      if (k == 1) continue;  // same as no attribute
      attrs.push_back(row ? StructVocab::rowspan_token(k) : StructVocab::colspan_token(k));
    }
    const std::size_t close = html.find("</td>", pos);
    if (close == std::string_view::npos) reject(html, open, "cell without </td>");
    if (html.substr(pos, close - pos).find("<td") != std::string_view::npos) reject(html, open, "nested cell");
    pos = close + 5;
    if (attrs.empty()) {
      tokens.emplace_back("<td></td>");
    } else {
      tokens.emplace_back("<td");
      for (auto& a : attrs) tokens.push_back(std::move(a));
      tokens.emplace_back(">");
      tokens.emplace_back("</td>");
    }
  }
  return tokens;
}

std::string detokenize_structure(const std::vector<std::string>& tokens, int max_span) {
  const StructVocab vocab(max_span);
  std::string out;
  bool in_open = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    const auto id = vocab.find(t);
    if (!id || vocab.is_special(*id)) throw FormatError("token " + std::to_string(i) + " not a structure token: '" + t + "'");
    if (StructVocab::is_span_attribute(t) || t == ">") {
      if (!in_open) throw FormatError("token " + std::to_string(i) + " '" + t + "' outside a <td opening");
      if (t == ">") in_open = false;
    } else if (in_open) {
      throw FormatError("token " + std::to_string(i) + " '" + t + "' inside an unclosed <td opening");
    } else if (t == "<td") {
      in_open = true;
    }
    out += t;
  }
  if (in_open) throw FormatError("token stream ends inside a <td opening");
  return out;
}

std::string escape_cell_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_cell_text(std::string_view text) {
  static constexpr std::array<std::pair<std::string_view, char>, 5> kRefs{
      {{"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&#39;", '\''}}};
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    bool replaced = false;
    if (text[i] == '&') {
      for (const auto& [ref, ch] : kRefs) {
        if (text.substr(i).starts_with(ref)) {
          out += ch;
          i += ref.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

std::vector<std::string> extract_cell_contents(std::string_view html) {
  std::vector<std::string> contents;
  std::size_t pos = 0;
  while ((pos = html.find("<td", pos)) != std::string_view::npos) {
    const std::size_t gt = html.find('>', pos);
    if (gt == std::string_view::npos) break;
    const std::size_t close = html.find("</td>", gt);
    if (close == std::string_view::npos) break;
    contents.push_back(unescape_cell_text(html.substr(gt + 1, close - gt - 1)));
    pos = close + 5;
  }
  return contents;
}

std::size_t count_cell_triggers(const std::vector<std::string>& tokens) {
  std::size_t n = 0;
  for (const auto& t : tokens) n += StructVocab::is_cell_trigger(t) ? 1 : 0;
  return n;
}

std::vector<std::string> tokenize_content(std::string_view text, const ContentVocab& vocab) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    std::string ch(text.substr(i, len));
    tokens.push_back(vocab.find(ch) ? ch : vocab.token(Vocab::kUnk));
    i += len;
  }
  return tokens;
}

std::string detokenize_content(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (t == "<pad>" || t == "<sos>" || t == "<eos>") continue;
    out += t == "<unk>" ? "\xEF\xBF\xBD" : t;
  }
  return out;
}

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(vocab.token(id));
  return tokens;
}

std::string assemble_html(const std::vector<std::string>& structure_tokens,
                          const std::vector<std::string>& cell_contents) {
  const std::size_t cells = count_cell_triggers(structure_tokens);
  if (cells != cell_contents.size()) {
    throw FormatError("structure has " + std::to_string(cells) + " cells but " + std::to_string(cell_contents.size()) +
                      " contents were given");
  }
  std::string out;
  std::size_t next = 0;
  std::size_t pending = 0;
  bool in_open = false;
  for (const auto& t : structure_tokens) {
    if (t == "<td></td>") {
      out += "<td>";
      out += escape_cell_text(cell_contents[next++]);
      out += "</td>";
    } else if (t == "<td") {
      pending = next++;
      in_open = true;
      out += t;
    } else if (t == ">" && in_open) {
      out += '>';
      out += escape_cell_text(cell_contents[pending]);
      in_open = false;
    } else {
      out += t;
    }
  }
  return out;
}

}  // namespace tabrec
