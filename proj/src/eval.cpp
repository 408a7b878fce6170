#include "tabrec/eval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "tabrec/errors.hpp"

namespace tabrec {

using nlohmann::json;

double normalized_edit_distance(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 0.0;
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return static_cast<double>(row[b.size()]) / static_cast<double>(std::max(a.size(), b.size()));
}

TreeCost teds_cost() {
  return {[](const TreeNode& a, const TreeNode& b) {
    if (a.tag != b.tag) return 1.0;
    if (a.tag != "td") return 0.0;
    if (a.colspan != b.colspan || a.rowspan != b.rowspan) return 1.0;
    return normalized_edit_distance(a.content, b.content);
  }};
}

TreeCost label_cost() {
  return {[](const TreeNode& a, const TreeNode& b) { return a.tag == b.tag ? 0.0 : 1.0; }};
}

namespace {

// Postorder view: node k (1-based) is `order[k]` in the preorder array and
// its leftmost leaf descendant is leftmost[k].
struct Postorder {
  std::vector<std::size_t> order{0};
  std::vector<std::size_t> leftmost{0};
  std::vector<std::size_t> keyroots;

  explicit Postorder(const TableTree& t) {
    if (t.nodes.empty()) return;
    visit(t, 0);
    const std::size_t n = order.size() - 1;
    std::vector<bool> seen(n + 1, false);
    for (std::size_t k = n; k >= 1; --k) {
      if (!seen[leftmost[k]]) {
        keyroots.push_back(k);
        seen[leftmost[k]] = true;
      }
    }
    std::reverse(keyroots.begin(), keyroots.end());
  }

  std::size_t visit(const TableTree& t, std::size_t id) {
    std::size_t first = 0;
    for (std::size_t c : t.nodes[id].children) {
      const std::size_t l = visit(t, c);
      if (first == 0) first = l;
    }
    order.push_back(id);
    const std::size_t self = order.size() - 1;
    leftmost.push_back(first == 0 ? self : first);
    return leftmost.back();
  }
};

}  // namespace

double tree_edit_distance(const TableTree& a, const TableTree& b, const TreeCost& cost) {
  const Postorder pa(a), pb(b);
  const std::size_t n = pa.order.size() - 1, m = pb.order.size() - 1;
  if (n == 0) return static_cast<double>(m);
  if (m == 0) return static_cast<double>(n);
  std::vector<double> td((n + 1) * (m + 1), 0.0);
  auto tree = [&](std::size_t i, std::size_t j) -> double& { return td[i * (m + 1) + j]; };
  std::vector<double> fd;
  for (std::size_t i : pa.keyroots) {
    for (std::size_t j : pb.keyroots) {
      const std::size_t li = pa.leftmost[i], lj = pb.leftmost[j];
      const std::size_t rows = i - li + 2, cols = j - lj + 2;
      fd.assign(rows * cols, 0.0);
      auto f = [&](std::size_t x, std::size_t y) -> double& { return fd[x * cols + y]; };
      for (std::size_t x = 1; x < rows; ++x) f(x, 0) = f(x - 1, 0) + 1.0;
      for (std::size_t y = 1; y < cols; ++y) f(0, y) = f(0, y - 1) + 1.0;
      for (std::size_t x = 1; x < rows; ++x) {
        const std::size_t di = li + x - 1;
        for (std::size_t y = 1; y < cols; ++y) {
          const std::size_t dj = lj + y - 1;
          const double edit = std::min(f(x - 1, y) + 1.0, f(x, y - 1) + 1.0);
          if (pa.leftmost[di] == li && pb.leftmost[dj] == lj) {
            const double sub = f(x - 1, y - 1) + cost.rename(a.nodes[pa.order[di]], b.nodes[pb.order[dj]]);
            f(x, y) = std::min(edit, sub);
            tree(di, dj) = f(x, y);
          } else {
            const double sub = f(pa.leftmost[di] - li, pb.leftmost[dj] - lj) + tree(di, dj);
            f(x, y) = std::min(edit, sub);
          }
        }
      }
    }
  }
  return tree(n, m);
}

double teds(const TableTree& a, const TableTree& b) {
  const std::size_t denom = std::max(a.size(), b.size());
  if (denom == 0) return 1.0;
  // Wide-versus-deep trees can cost more than the larger tree has nodes.
  return std::max(0.0, 1.0 - tree_edit_distance(a, b, teds_cost()) / static_cast<double>(denom));
}

namespace {

std::optional<TableTree> try_parse(std::string_view html) {
  try {
    return parse_table_tree(html);
  } catch (const FormatError&) {
    return std::nullopt;
  }
}

}  // namespace

double teds(std::string_view pred_html, std::string_view gt_html) {
  const TableTree gt = parse_table_tree(gt_html);
  const auto pred = try_parse(pred_html);
  return pred ? teds(*pred, gt) : 0.0;
}

double teds_struct(std::string_view pred_html, std::string_view gt_html) {
  const TableTree gt = strip_contents(parse_table_tree(gt_html));
  const auto pred = try_parse(pred_html);
  return pred ? teds(strip_contents(*pred), gt) : 0.0;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  const double ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::optional<double> average_precision(const std::vector<std::vector<ScoredBox>>& predictions,
                                        const std::vector<std::vector<BBox>>& ground_truth, double iou_threshold) {
  if (predictions.size() != ground_truth.size()) {
    throw std::invalid_argument("average_precision: " + std::to_string(predictions.size()) + " prediction lists for " +
                                std::to_string(ground_truth.size()) + " images");
  }
  std::size_t total_gt = 0;
  for (const auto& g : ground_truth) total_gt += g.size();
  if (total_gt == 0) return std::nullopt;

  struct Det {
    std::size_t image, index;
    double confidence;
  };
  std::vector<Det> dets;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (std::size_t k = 0; k < predictions[i].size(); ++k) dets.push_back({i, k, predictions[i][k].confidence});
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Det& x, const Det& y) { return x.confidence > y.confidence; });

  std::vector<std::vector<bool>> claimed(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) claimed[i].assign(ground_truth[i].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const Det& d : dets) {
    const BBox& box = predictions[d.image][d.index].box;
    double best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < ground_truth[d.image].size(); ++k) {
      const double o = iou(box, ground_truth[d.image][k]);
      if (o > best) {
        best = o;
        best_k = k;
      }
    }
    if (best >= iou_threshold && !claimed[d.image][best_k]) {
      claimed[d.image][best_k] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

EvalReport evaluate(const std::vector<TableResult>& predictions, const std::vector<TableAnnotation>& ground_truth,
                    const std::vector<std::string>& metrics, double iou_threshold) {
  auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
  EvalReport report;
  report.metrics = metrics;
  report.iou_threshold = iou_threshold;
  std::unordered_map<std::string, const TableResult*> by_name;
  for (const auto& p : predictions) by_name.emplace(p.filename, &p);

  std::vector<std::vector<ScoredBox>> det_boxes;
  std::vector<std::vector<BBox>> gt_boxes;
  std::size_t matched = 0;
  double sum_simple = 0, sum_complex = 0, sum_s_simple = 0, sum_s_complex = 0;
  for (const auto& gt : ground_truth) {
    SampleScore s;
    s.filename = gt.filename;
    s.complex = gt.is_complex();
    const auto it = by_name.find(gt.filename);
    const TableResult* pred = it == by_name.end() ? nullptr : it->second;
    s.predicted = pred != nullptr;
    if (pred) ++matched;
    const TableTree gt_tree = parse_table_tree(gt.html());
    std::optional<TableTree> pred_tree;
    if (pred) pred_tree = try_parse(pred->html);
    s.parsed = pred_tree.has_value();
    if (!pred) ++report.missing;
    if (pred && !pred_tree) ++report.unparseable;
    if (pred_tree) {
      if (wants("teds")) s.teds = teds(*pred_tree, gt_tree);
      if (wants("teds-struct")) s.teds_struct = teds(strip_contents(*pred_tree), strip_contents(gt_tree));
    }
    (s.complex ? sum_complex : sum_simple) += s.teds;
    (s.complex ? sum_s_complex : sum_s_simple) += s.teds_struct;
    (s.complex ? report.complex : report.simple) += 1;
    report.teds += s.teds;
    report.teds_struct += s.teds_struct;

    std::vector<BBox> g;
    for (const auto& c : gt.cells) {
      if (c.bbox) g.push_back(*c.bbox);
    }
    gt_boxes.push_back(std::move(g));
    std::vector<ScoredBox> d;
    if (pred) {
      for (const auto& c : pred->cells) {
        if (!c.content.empty()) d.push_back({c.bbox, c.confidence});
      }
    }
    det_boxes.push_back(std::move(d));
    report.samples.push_back(std::move(s));
  }
  report.unmatched_predictions = predictions.size() - std::min(predictions.size(), matched);
  const double n = static_cast<double>(ground_truth.size());
  if (n > 0) {
    report.teds /= n;
    report.teds_struct /= n;
  }
  if (report.simple) {
    report.teds_simple = sum_simple / static_cast<double>(report.simple);
    report.teds_struct_simple = sum_s_simple / static_cast<double>(report.simple);
  }
  if (report.complex) {
    report.teds_complex = sum_complex / static_cast<double>(report.complex);
    report.teds_struct_complex = sum_s_complex / static_cast<double>(report.complex);
  }
  if (wants("map")) report.map = average_precision(det_boxes, gt_boxes, iou_threshold);
  return report;
}

json to_json(const EvalReport& r) {
  auto want = [&](const char* m) { return std::find(r.metrics.begin(), r.metrics.end(), m) != r.metrics.end(); };
  json samples = json::array();
  for (const auto& s : r.samples) {
    json j{{"filename", s.filename}, {"complex", s.complex}, {"predicted", s.predicted}, {"parsed", s.parsed}};
    if (want("teds")) j["teds"] = s.teds;
    if (want("teds-struct")) j["teds_struct"] = s.teds_struct;
    samples.push_back(std::move(j));
  }
  json out{{"count", r.samples.size()},
           {"missing", r.missing},
           {"unparseable", r.unparseable},
           {"unmatched_predictions", r.unmatched_predictions},
           {"samples", samples},
           {"simple_count", r.simple},
           {"complex_count", r.complex}};
  if (want("teds")) {
    out["teds"] = r.teds;
    out["teds_simple"] = r.teds_simple;
    out["teds_complex"] = r.teds_complex;
  }
  if (want("teds-struct")) {
    out["teds_struct"] = r.teds_struct;
    out["teds_struct_simple"] = r.teds_struct_simple;
    out["teds_struct_complex"] = r.teds_struct_complex;
  }
  if (want("map")) {
    out["map"] = r.map ? json(*r.map) : json(nullptr);
    out["iou_threshold"] = r.iou_threshold;
  }
  return out;
}

}  // namespace tabrec
