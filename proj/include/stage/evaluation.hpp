#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stage/data.hpp"

namespace stage {

/// Intersection area over union area of two axis-aligned boxes.
double iou(const BoxGeometry& a, const BoxGeometry& b);

/// One detection for a single class; `group` identifies the keyframe so
/// matching never crosses frames while scores are ranked globally.
struct ScoredBox {
  BoxGeometry box;
  double score = 0.0;
  int group = 0;
};

struct GroupedBox {
  BoxGeometry box;
  int group = 0;
};

/// Greedy matching in descending score order: a detection is a true positive
/// when its best-IoU unmatched ground truth in the same group reaches the
/// threshold. AP is the area under the precision-recall step curve.
/// No ground truth: returns 0 when detections exist, nothing when the
/// instance is empty (the class is excluded).
std::optional<double> average_precision(std::vector<ScoredBox> dets,
                                        const std::vector<GroupedBox>& gts, double iou_thresh);

struct FramePrediction {
  std::string video_id;
  int timestamp = 0;
  BoxGeometry box;
  std::vector<double> scores;  // one per class
};

struct FrameGroundTruth {
  std::string video_id;
  int timestamp = 0;
  BoxGeometry box;
  std::vector<int> labels;
};

struct EvalReport {
  struct ClassEntry {
    int class_id = 0;
    std::string name;
    int n_gt = 0;
    int n_det = 0;
    double ap = 0.0;
    bool defined = false;   // false when the class has neither GT nor detections
    bool eligible = false;  // counted in the mean
  };
  std::vector<ClassEntry> classes;
  double mean_ap = 0.0;  // arithmetic mean over eligible classes
  int n_eligible = 0;
  std::map<std::string, double> group_means;

  double class_ap(int class_id) const;
  std::string to_csv() const;  // class_id,class_name,n_gt,AP rows + summary line
};

/// Keyframe-level mean average precision: detections are pooled per class
/// across keyframes, matched within their keyframe. Classes take part in the
/// mean when their ground-truth count reaches min_class_examples (and is at
/// least 1). `groups` optionally maps class ids to group names for per-group
/// means.
EvalReport frame_map(const std::vector<FramePrediction>& preds,
                     const std::vector<FrameGroundTruth>& gts, double iou_thresh,
                     int min_class_examples, int n_classes,
                     const std::map<int, std::string>* groups = nullptr);

}  // namespace stage
