#include "tabrec/html_tree.hpp"

#include <cctype>

#include "tabrec/errors.hpp"
#include "tabrec/vocab.hpp"

namespace tabrec {
namespace {

TreeNode node_of(std::string tag) {
  TreeNode n;
  n.tag = std::move(tag);
  return n;
}


class Parser {
 public:
  explicit Parser(std::string_view html) : html_(html) {}

  TableTree parse() {
    skip_space();
    const bool wrapped = html_.substr(pos_).starts_with("<table");
    if (wrapped) {
      const Tag t = read_tag();
      if (t.closing || t.name != "table") fail(t.offset, "expected <table>");
    }
    tree_.nodes.push_back(node_of("table"));
    parse_children(0, wrapped ? "table" : "");
    skip_space();
    if (pos_ != html_.size()) fail(pos_, "trailing content after table");
    return std::move(tree_);
  }

 private:
  struct Tag {
    std::string name;
    bool closing = false;
    int colspan = 1;
    int rowspan = 1;
    std::size_t offset = 0;
  };

  [[noreturn]] void fail(std::size_t at, const std::string& why) const {
    throw FormatError("html: " + why + " at offset " + std::to_string(at));
  }

  void skip_space() {
    while (pos_ < html_.size() && std::isspace(static_cast<unsigned char>(html_[pos_]))) ++pos_;
  }

  static bool known(const std::string& name) {
    return name == "table" || name == "thead" || name == "tbody" || name == "tr" || name == "td";
  }

  Tag read_tag() {
    Tag tag;
    tag.offset = pos_;
    if (pos_ >= html_.size() || html_[pos_] != '<') fail(pos_, "expected a tag");
    ++pos_;
    if (pos_ < html_.size() && html_[pos_] == '/') {
      tag.closing = true;
      ++pos_;
    }
    while (pos_ < html_.size() && std::isalpha(static_cast<unsigned char>(html_[pos_]))) {
      tag.name += static_cast<char>(std::tolower(static_cast<unsigned char>(html_[pos_])));
      ++pos_;
    }
    if (!known(tag.name)) fail(tag.offset, "unsupported tag '" + tag.name + "'");
    while (true) {
      skip_space();
      if (pos_ >= html_.size()) fail(tag.offset, "unterminated tag");
      if (html_[pos_] == '>') {
        ++pos_;
        break;
      }
      if (tag.closing) fail(pos_, "attribute on closing tag");
      std::string attr;
      while (pos_ < html_.size() && (std::isalnum(static_cast<unsigned char>(html_[pos_])) || html_[pos_] == '-')) {
        attr += static_cast<char>(std::tolower(static_cast<unsigned char>(html_[pos_])));
        ++pos_;
      }
      if (attr.empty() || pos_ >= html_.size() || html_[pos_] != '=') fail(pos_, "malformed attribute");
      ++pos_;
      std::string value;
      if (pos_ < html_.size() && (html_[pos_] == '"' || html_[pos_] == '\'')) {
        const char quote = html_[pos_++];
        const std::size_t end = html_.find(quote, pos_);
        if (end == std::string_view::npos) fail(pos_, "unterminated attribute value");
        value = std::string(html_.substr(pos_, end - pos_));
        pos_ = end + 1;
      } else {
        while (pos_ < html_.size() && !std::isspace(static_cast<unsigned char>(html_[pos_])) && html_[pos_] != '>') {
          value += html_[pos_++];
        }
      }
      if (attr == "colspan" || attr == "rowspan") {
        int k = 0;
        try {
          k = std::stoi(value);
        } catch (const std::exception&) {
          fail(tag.offset, "non-numeric " + attr);
        }
        if (k < 1) fail(tag.offset, attr + " must be positive");
        (attr == "colspan" ? tag.colspan : tag.rowspan) = k;
      }
    }
    return tag;
  }

  // Parses children of `parent` until the closing tag `until` (or end of
  // input when `until` is empty).
  void parse_children(std::size_t parent, const std::string& until) {
    while (true) {
      skip_space();
      if (pos_ >= html_.size()) {
        if (until.empty()) return;
        fail(pos_, "missing </" + until + ">");
      }
      const Tag tag = read_tag();
      if (tag.closing) {
        if (tag.name != until) fail(tag.offset, "unexpected </" + tag.name + ">");
        return;
      }
      if (tag.name == "table") fail(tag.offset, "nested table");
      const std::size_t id = tree_.nodes.size();
      tree_.nodes.push_back(node_of(tag.name));
      tree_.nodes[parent].children.push_back(id);
      if (tag.name == "td") {
        tree_.nodes[id].colspan = tag.colspan;
        tree_.nodes[id].rowspan = tag.rowspan;
        const std::size_t close = html_.find("</td>", pos_);
        if (close == std::string_view::npos) fail(tag.offset, "missing </td>");
        const std::string_view content = html_.substr(pos_, close - pos_);
        if (content.find("<td") != std::string_view::npos || content.find("<tr") != std::string_view::npos) {
          fail(tag.offset, "missing </td>");
        }
        tree_.nodes[id].content = unescape_cell_text(content);
        pos_ = close + 5;
      } else {
        parse_children(id, tag.name);
      }
    }
  }

  std::string_view html_;
  std::size_t pos_ = 0;
  TableTree tree_;
};

}  // namespace

TableTree parse_table_tree(std::string_view html) { return Parser(html).parse(); }

TableTree strip_contents(const TableTree& tree) {
  TableTree out = tree;
  for (auto& n : out.nodes) n.content.clear();
  return out;
}

bool operator==(const TreeNode& a, const TreeNode& b) {
  return a.tag == b.tag && a.colspan == b.colspan && a.rowspan == b.rowspan && a.content == b.content &&
         a.children == b.children;
}

bool operator==(const TableTree& a, const TableTree& b) { return a.nodes == b.nodes; }

}  // namespace tabrec
