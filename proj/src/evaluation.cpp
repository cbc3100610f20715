#include "stage/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "stage/errors.hpp"

namespace stage {

double iou(const BoxGeometry& a, const BoxGeometry& b) {
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = a.w() * a.h() + b.w() * b.h() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::optional<double> average_precision(std::vector<ScoredBox> dets,
                                        const std::vector<GroupedBox>& gts, double iou_thresh) {
  if (gts.empty()) {
    if (dets.empty()) return std::nullopt;
    return 0.0;
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });

  std::vector<char> gt_used(gts.size(), 0);
  int n = int(dets.size());
  std::vector<char> tp(std::size_t(n), 0);
  for (int k = 0; k < n; ++k) {
    const ScoredBox& det = dets[std::size_t(k)];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_used[gi] || gts[gi].group != det.group) continue;
      double v = iou(det.box, gts[gi].box);
      if (v > best_iou) {
        best_iou = v;
        best = int(gi);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh) {
      tp[std::size_t(k)] = 1;
      gt_used[std::size_t(best)] = 1;
    }
  }

  // precision at each rank, then its running suffix maximum (the envelope);
  // AP accumulates the envelope at every true positive over the GT count
  std::vector<double> env(std::size_t(n), 0.0);
  int tp_cum = 0;
  for (int k = 0; k < n; ++k) {
    if (tp[std::size_t(k)]) ++tp_cum;
    env[std::size_t(k)] = double(tp_cum) / double(k + 1);
  }
  for (int k = n - 2; k >= 0; --k)
    env[std::size_t(k)] = std::max(env[std::size_t(k)], env[std::size_t(k + 1)]);
  double ap = 0.0;
  for (int k = 0; k < n; ++k)
    if (tp[std::size_t(k)]) ap += env[std::size_t(k)];
  return ap / double(gts.size());
}

double EvalReport::class_ap(int class_id) const {
  for (const ClassEntry& e : classes)
    if (e.class_id == class_id) return e.ap;
  throw std::out_of_range("eval report: class " + std::to_string(class_id) + " not present");
}

std::string EvalReport::to_csv() const {
  std::string out = "class_id,class_name,n_gt,AP\n";
  char buf[160];
  for (const ClassEntry& e : classes) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%.9g\n", e.class_id, e.name.c_str(), e.n_gt,
                  e.defined ? e.ap : 0.0);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mAP,,%d,%.9g\n", n_eligible, mean_ap);
  out += buf;
  return out;
}

EvalReport frame_map(const std::vector<FramePrediction>& preds,
                     const std::vector<FrameGroundTruth>& gts, double iou_thresh,
                     int min_class_examples, int n_classes,
                     const std::map<int, std::string>* groups) {
  if (gts.empty()) throw FormatError("frame_map: empty ground truth");
  if (n_classes < 1) throw std::invalid_argument("frame_map: n_classes must be >= 1");

  std::map<std::pair<std::string, int>, int> frame_ids;
  auto frame_of = [&](const std::string& video, int t) {
    auto [it, _] = frame_ids.try_emplace({video, t}, int(frame_ids.size()));
    return it->second;
  };

  EvalReport report;
  report.classes.resize(std::size_t(n_classes));
  std::map<std::string, std::pair<double, int>> group_acc;
  double ap_sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<GroupedBox> class_gts;
    for (const FrameGroundTruth& gt : gts)
      for (int lab : gt.labels)
        if (lab == c) class_gts.push_back({gt.box, frame_of(gt.video_id, gt.timestamp)});
    std::vector<ScoredBox> class_dets;
    for (const FramePrediction& p : preds) {
      if (int(p.scores.size()) != n_classes)
        throw ShapeError("frame_map: prediction carries " + std::to_string(p.scores.size()) +
                         " scores for " + std::to_string(n_classes) + " classes");
      class_dets.push_back({p.box, p.scores[std::size_t(c)], frame_of(p.video_id, p.timestamp)});
    }
    auto ap = average_precision(std::move(class_dets), class_gts, iou_thresh);

    EvalReport::ClassEntry& e = report.classes[std::size_t(c)];
    e.class_id = c;
    e.name = "class_" + std::to_string(c);
    e.n_gt = int(class_gts.size());
    e.n_det = int(preds.size());
    e.defined = ap.has_value();
    e.ap = ap.value_or(0.0);
    e.eligible = e.n_gt >= std::max(1, min_class_examples);
    if (e.eligible) {
      ap_sum += e.ap;
      ++report.n_eligible;
      if (groups) {
        auto it = groups->find(c);
        if (it != groups->end()) {
          auto& acc = group_acc[it->second];
          acc.first += e.ap;
          acc.second += 1;
        }
      }
    }
  }
  report.mean_ap = report.n_eligible > 0 ? ap_sum / report.n_eligible : 0.0;
  for (auto& [name, acc] : group_acc)
    report.group_means[name] = acc.second > 0 ? acc.first / acc.second : 0.0;
  return report;
}

}  // namespace stage
