#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tabrec {

/// Token inventory with a fixed bijection between strings and ids. Ids 0..3
/// are the special tokens shared by every vocabulary.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view token) const;
  /// Id of `token`, or kUnk when absent.
  int id(std::string_view token) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 protected:
  Vocab();
  void add(std::string token);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Structure tokens: table-section/row tags, the single-token plain cell
/// `<td></td>`, the split spanning-cell tokens `<td`, span attributes and `>`,
/// and `</td>`.
class StructVocab : public Vocab {
 public:
  static constexpr int kDefaultMaxSpan = 10;

  explicit StructVocab(int max_span = kDefaultMaxSpan);

  int max_span() const { return max_span_; }
  bool is_cell_trigger(int id) const;
  static bool is_cell_trigger(std::string_view token);
  static bool is_span_attribute(std::string_view token);

  static std::string rowspan_token(int k) { return " rowspan=\"" + std::to_string(k) + "\""; }
  static std::string colspan_token(int k) { return " colspan=\"" + std::to_string(k) + "\""; }

 private:
  int max_span_;
};

/// Character tokens: special tokens followed by printable ASCII (0x20-0x7E).
class ContentVocab : public Vocab {
 public:
  ContentVocab();
};

/// Splits table HTML into structure tokens. Cell contents are skipped, and a
/// surrounding <table>...</table> wrapper is accepted and dropped. Throws
/// FormatError naming the offending substring for unsupported tags or span
/// values above max_span.
std::vector<std::string> tokenize_structure(std::string_view html, int max_span = StructVocab::kDefaultMaxSpan);

/// Concatenates structure tokens. Throws FormatError for tokens outside the
/// vocabulary or span attributes / `>` not inside a `<td ... >` opening.
std::string detokenize_structure(const std::vector<std::string>& tokens, int max_span = StructVocab::kDefaultMaxSpan);

/// `&`, `<` and `>` as character references, so any cell text survives HTML.
std::string escape_cell_text(std::string_view text);
/// Inverse of escape_cell_text; also decodes &quot; and &#39;. Unknown
/// references are kept verbatim.
std::string unescape_cell_text(std::string_view text);

/// Cell texts in document order (one entry per <td>), unescaped.
std::vector<std::string> extract_cell_contents(std::string_view html);

std::size_t count_cell_triggers(const std::vector<std::string>& tokens);

/// One token per UTF-8 code point; characters outside the vocabulary become
/// the UNK token.
std::vector<std::string> tokenize_content(std::string_view text, const ContentVocab& vocab);
/// Joins character tokens; PAD/SOS/EOS are dropped and UNK becomes U+FFFD.
std::string detokenize_content(const std::vector<std::string>& tokens);

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocab& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocab& vocab);

/// Inserts the i-th content, escaped, into the i-th cell of the structure. Throws
/// FormatError when the number of contents differs from the number of cells.
std::string assemble_html(const std::vector<std::string>& structure_tokens,
                          const std::vector<std::string>& cell_contents);

}  // namespace tabrec
