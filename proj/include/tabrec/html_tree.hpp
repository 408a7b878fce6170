#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tabrec {

struct TreeNode {
  std::string tag;
  int colspan = 1;  // span and content are meaningful on td nodes only
  int rowspan = 1;
  std::string content;
  std::vector<std::size_t> children;
};

/// Ordered labeled tree of a table. nodes[0] is the `table` root and nodes are
/// stored in preorder.
struct TableTree {
  std::vector<TreeNode> nodes;

  std::size_t size() const { return nodes.size(); }
  const TreeNode& root() const { return nodes.front(); }
};

/// Parses table HTML over the closed tag set table/thead/tbody/tr/td. A
/// fragment without an outer <table> is wrapped in one. td contents keep
/// inline markup and have &amp;, &lt;, &gt;, &quot; and &#39; decoded. Throws FormatError with the byte offset
/// on unbalanced or unsupported tags.
TableTree parse_table_tree(std::string_view html);

/// Copy of the tree with every td content blanked.
TableTree strip_contents(const TableTree& tree);

bool operator==(const TreeNode& a, const TreeNode& b);
bool operator==(const TableTree& a, const TableTree& b);

}  // namespace tabrec
