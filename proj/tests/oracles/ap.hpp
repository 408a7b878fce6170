#pragma once

// Average precision written out the long way: rank, mark each detection,
// then for every distinct recall level take the best precision achieved at
// that recall or beyond and sum precision times the recall increment.

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

namespace oracle {

struct Det {
  std::size_t image;
  std::array<double, 4> box;
  double score;
  std::size_t order;  // input position, tie-breaker
};

inline double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double w = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double h = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = w * h;
  const double u = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return u > 0 ? inter / u : 0.0;
}

inline double average_precision(std::vector<Det> dets, const std::vector<std::vector<std::array<double, 4>>>& gts,
                                double threshold) {
  std::size_t total = 0;
  for (const auto& g : gts) total += g.size();
  std::sort(dets.begin(), dets.end(), [](const Det& x, const Det& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.image != y.image) return x.image < y.image;
    return x.order < y.order;
  });
  std::vector<std::vector<bool>> claimed(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) claimed[i].assign(gts[i].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < dets.size(); ++r) {
    const Det& d = dets[r];
    double best = -1;
    std::size_t arg = 0;
    for (std::size_t g = 0; g < gts[d.image].size(); ++g) {
      const double v = box_iou(d.box, gts[d.image][g]);
      if (v > best) {
        best = v;
        arg = g;
      }
    }
    if (best >= threshold && !claimed[d.image][arg]) {
      claimed[d.image][arg] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t r = 0; r < recall.size(); ++r) {
    if (recall[r] <= prev_recall) continue;
    double best = 0;
    for (std::size_t s = r; s < precision.size(); ++s) best = std::max(best, precision[s]);
    ap += (recall[r] - prev_recall) * best;
    prev_recall = recall[r];
  }
  return ap;
}

}  // namespace oracle
