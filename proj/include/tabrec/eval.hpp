#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tabrec/data.hpp"
#include "tabrec/decoding.hpp"
#include "tabrec/html_tree.hpp"

namespace tabrec {

/// Edit costs between nodes of two trees. Insert and delete cost 1.
struct TreeCost {
  std::function<double(const TreeNode&, const TreeNode&)> rename;
};

/// Table-similarity substitution: 1 when tags differ or td spans differ,
/// otherwise the normalized character edit distance of td contents (0 for
/// other matching nodes).
TreeCost teds_cost();
/// 1 when tags differ, else 0.
TreeCost label_cost();

/// Levenshtein distance over bytes divided by the longer length (0 when both are empty).
double normalized_edit_distance(std::string_view a, std::string_view b);

/// Ordered tree edit distance (Zhang-Shasha dynamic program).
double tree_edit_distance(const TableTree& a, const TableTree& b, const TreeCost& cost = teds_cost());

/// 1 - TED / max(|a|, |b|) with all nodes counted, floored at 0.
double teds(const TableTree& a, const TableTree& b);
/// Score of predicted against ground-truth HTML; 0 when the prediction does
/// not parse. Throws FormatError when the ground truth does not parse.
double teds(std::string_view pred_html, std::string_view gt_html);
double teds_struct(std::string_view pred_html, std::string_view gt_html);

double iou(const BBox& a, const BBox& b);

struct ScoredBox {
  BBox box;
  double confidence = 0;
};

/// Single-class VOC average precision: detections of all images ranked by
/// confidence (ties by image, then input order), each matched to the
/// highest-IoU ground truth of its image if that one is unclaimed and
/// IoU >= threshold, area under the all-point interpolated PR curve.
/// nullopt when there is no ground-truth box at all.
std::optional<double> average_precision(const std::vector<std::vector<ScoredBox>>& predictions,
                                        const std::vector<std::vector<BBox>>& ground_truth,
                                        double iou_threshold = 0.5);

struct SampleScore {
  std::string filename;
  bool complex = false;
  bool predicted = false;  // a prediction with this filename existed
  bool parsed = false;     // the prediction parsed
  double teds = 0;
  double teds_struct = 0;
};

struct EvalReport {
  std::vector<SampleScore> samples;
  std::size_t missing = 0;
  std::size_t unparseable = 0;
  std::size_t unmatched_predictions = 0;  // predictions whose filename is not in the ground truth
  double teds = 0;  // means over all ground-truth samples
  double teds_struct = 0;
  double teds_simple = 0, teds_complex = 0;
  double teds_struct_simple = 0, teds_struct_complex = 0;
  std::size_t simple = 0, complex = 0;
  std::optional<double> map;
  double iou_threshold = 0.5;
  std::vector<std::string> metrics;
};

/// Scores predictions against ground truth keyed by filename. Detections are
/// the predicted cells with non-empty content.
EvalReport evaluate(const std::vector<TableResult>& predictions, const std::vector<TableAnnotation>& ground_truth,
                    const std::vector<std::string>& metrics = {"teds", "teds-struct", "map"},
                    double iou_threshold = 0.5);

nlohmann::json to_json(const EvalReport& report);

}  // namespace tabrec
