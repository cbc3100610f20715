#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stage/data.hpp"
#include "stage/evaluation.hpp"
#include "stage/model.hpp"

namespace stage {

/// Contiguous range of clips of one video inside a Dataset.
struct Window {
  int first_clip = 0;
  int n_clips = 0;
};

/// Sliding windows per video with the given stride; a shorter tail forms a
/// smaller window, windows never span videos. Windows whose clips contain no
/// entities are skipped with a warning.
std::vector<Window> make_windows(const Dataset& data, int window_clips, int stride,
                                 std::vector<std::string>* warnings = nullptr);

/// Each predicted box inherits the labels of its maximum-IoU ground-truth box
/// when that IoU reaches the threshold; otherwise it gets the empty set.
std::vector<std::vector<int>> assign_labels(const std::vector<BoxGeometry>& pred_boxes,
                                            const std::vector<BoxGeometry>& gt_boxes,
                                            const std::vector<std::vector<int>>& gt_labels,
                                            double iou_thresh);

/// Relabel every actor in `data` from a separate ground-truth dataset: labels
/// come from the labeled actors of the matching (video, timestamp) record via
/// assign_labels; keyframes without ground truth become background.
void apply_ground_truth_labels(Dataset& data, const Dataset& gt, double iou_thresh);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix> m, v;  // mirror the parameter blocks, declaration order

  static AdamState init(const ParameterSet& params);
};

struct TrainState {
  ParameterSet params;
  AdamState adam;
  double lr = 1e-3;
};

/// Standard Adam update with bias correction. Gradients arrive as named
/// blocks in declaration order; a non-finite gradient aborts naming its
/// block.
void adam_step(TrainState& state,
               const std::vector<std::pair<std::string, const Matrix*>>& grads);

struct EvalOptions {
  double iou_thresh = 0.5;
  int min_class_examples = 0;
  double score_thresh = 0.0;
  const std::map<int, std::string>* groups = nullptr;
};

/// Inference over non-overlapping windows; actor scores become per-class
/// detections, labeled actors become ground truth.
EvalReport evaluate_dataset(const StageConfig& c, const ParameterSet& params, const Dataset& data,
                            const EvalOptions& opts);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_map = 0.0;
  double lr = 0.0;  // after this epoch's plateau adjustment
};

std::string history_csv(const std::vector<EpochStats>& history);

struct FitResult {
  ParameterSet best_params;
  int best_epoch = 0;
  double best_val_map = 0.0;
  std::vector<EpochStats> history;
  bool diverged = false;
};

/// Windowed minibatch training: shuffled windows, block-diagonal minibatch
/// assembly, Adam steps, validation mAP per epoch, learning-rate decay by 10
/// on plateau, early stopping, best-validation parameters returned. Inputs
/// reach the model exactly as stored in the dataset; there is no augmentation.
FitResult fit(const StageConfig& c, const Dataset& train, const Dataset& val,
              std::ostream* log = nullptr);

}  // namespace stage
