#pragma once

#include <string>
#include <vector>

namespace stage {

enum class EntityKind { Actor, Object };

/// Axis-aligned box; dataset files carry coordinates normalized to [0,1].
struct BoxGeometry {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double xc() const { return 0.5 * (x1 + x2); }
  double yc() const { return 0.5 * (y1 + y2); }
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
};

/// One detected actor or object: geometry, detector score, the raw feature
/// vector from the upstream backbone, and (actors only) ground-truth labels.
struct EntityDetection {
  EntityKind kind = EntityKind::Actor;
  BoxGeometry box;
  double score = 1.0;
  std::vector<double> feature;
  std::vector<int> labels;
};

/// All detections attached to one keyframe of one video.
struct ClipRecord {
  std::string video_id;
  int timestamp = 0;  // seconds
  std::vector<EntityDetection> entities;
};

/// Clip records grouped by video and sorted by timestamp within each video.
using Dataset = std::vector<ClipRecord>;

}  // namespace stage
