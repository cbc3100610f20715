#pragma once

#include <span>
#include <utility>
#include <vector>

#include "stage/data.hpp"
#include "stage/matrix.hpp"

namespace stage {

/// Which interaction blocks stay enabled in the attention mask. The diagonal
/// (self edge) is always retained.
struct InteractionToggles {
  bool actor_actor = true;
  bool actor_object = true;
  bool object_actor = true;
  bool object_object = true;
};

/// A[i,j] = exp(-dist(center_i, center_j)); symmetric with unit diagonal.
Matrix proximity_adjacency(const std::vector<BoxGeometry>& boxes);

/// A[i,j] = 1 / ||f_i - f_j||_2 for i != j, capped at kFeatureDistanceCap;
/// the diagonal is set to the cap.
inline constexpr double kFeatureDistanceCap = 1e6;
Matrix feature_distance_adjacency(const Matrix& features);

/// Block adjacency over consecutive clips: blocks within the direct temporal
/// receptive field are filled with box proximity, all other blocks are exactly
/// zero. tmask carries the nonzero block pattern.
struct TemporalAdjacency {
  Matrix adjacency;
  Matrix tmask;
  std::vector<int> clip_offsets;  // size n_clips + 1
};
TemporalAdjacency multi_clip_adjacency(std::span<const ClipRecord> clips, int rf_direct);

Matrix interaction_mask(const std::vector<EntityKind>& kinds, const InteractionToggles& toggles);

/// Everything one forward/backward needs for a window of consecutive clips:
/// assembled inputs, adjacency, temporal and interaction masks, plus the
/// bookkeeping that routes actor rows to labels and evaluation keys.
struct WindowGraph {
  std::vector<int> clip_offsets;           // size n_clips + 1
  std::vector<EntityKind> kinds;           // per node row
  Matrix actor_inputs;                     // A x (actor_raw + 4), geometry appended
  Matrix object_inputs;                    // O x (object_raw + 4)
  std::vector<int> actor_rows;             // node row of each actor input row
  std::vector<int> object_rows;
  Matrix adjacency;                        // zero wherever tmask is zero
  Matrix tmask;
  Matrix imask;
  Matrix attn_mask;                        // tmask AND imask
  std::vector<std::vector<int>> actor_labels;        // per actor input row
  std::vector<double> actor_scores;
  std::vector<BoxGeometry> actor_boxes;
  std::vector<std::pair<std::string, int>> actor_keys;  // (video_id, timestamp)

  int n_nodes() const { return int(kinds.size()); }
  int n_clips() const { return int(clip_offsets.size()) - 1; }
};

/// Block-diagonal union of several windows; cross-window masks stay zero so
/// the merged forward equals the windows processed independently.
WindowGraph merge_window_graphs(const std::vector<const WindowGraph*>& graphs);

}  // namespace stage
