#include "stage/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "stage/errors.hpp"

namespace stage {

Matrix proximity_adjacency(const std::vector<BoxGeometry>& boxes) {
  if (boxes.empty()) throw std::invalid_argument("proximity_adjacency: no entities");
  int n = int(boxes.size());
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    a.at(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      double dx = boxes[std::size_t(i)].xc() - boxes[std::size_t(j)].xc();
      double dy = boxes[std::size_t(i)].yc() - boxes[std::size_t(j)].yc();
      double v = std::exp(-std::sqrt(dx * dx + dy * dy));
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  }
  return a;
}

Matrix feature_distance_adjacency(const Matrix& features) {
  int n = features.rows;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    a.at(i, i) = kFeatureDistanceCap;
    for (int j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < features.cols; ++k) {
        double d = features.at(i, k) - features.at(j, k);
        acc += d * d;
      }
      double dist = std::sqrt(acc);
      double v = dist > 0.0 ? std::min(1.0 / dist, kFeatureDistanceCap) : kFeatureDistanceCap;
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  }
  return a;
}

TemporalAdjacency multi_clip_adjacency(std::span<const ClipRecord> clips, int rf_direct) {
  if (clips.empty()) throw std::invalid_argument("multi_clip_adjacency: no clips");
  if (rf_direct < 1 || rf_direct % 2 == 0)
    throw std::invalid_argument("multi_clip_adjacency: rf_direct must be odd and >= 1, got " +
                                std::to_string(rf_direct));
  for (std::size_t t = 1; t < clips.size(); ++t) {
    if (clips[t].timestamp != clips[t - 1].timestamp + 1)
      throw FormatError("multi_clip_adjacency: gap between t=" +
                        std::to_string(clips[t - 1].timestamp) + " and t=" +
                        std::to_string(clips[t].timestamp) + " in video " + clips[t].video_id);
  }

  TemporalAdjacency out;
  out.clip_offsets.push_back(0);
  std::vector<BoxGeometry> boxes;
  std::vector<int> clip_of;
  for (const ClipRecord& clip : clips) {
    for (const EntityDetection& e : clip.entities) {
      boxes.push_back(e.box);
      clip_of.push_back(int(out.clip_offsets.size()) - 1);
    }
    out.clip_offsets.push_back(int(boxes.size()));
  }

  int n = int(boxes.size());
  int half = (rf_direct - 1) / 2;
  out.adjacency = Matrix(n, n);
  out.tmask = Matrix(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (std::abs(clip_of[std::size_t(i)] - clip_of[std::size_t(j)]) > half) continue;
      out.tmask.at(i, j) = 1.0;
      if (i == j) {
        out.adjacency.at(i, j) = 1.0;
      } else {
        double dx = boxes[std::size_t(i)].xc() - boxes[std::size_t(j)].xc();
        double dy = boxes[std::size_t(i)].yc() - boxes[std::size_t(j)].yc();
        out.adjacency.at(i, j) = std::exp(-std::sqrt(dx * dx + dy * dy));
      }
    }
  }
  return out;
}

Matrix interaction_mask(const std::vector<EntityKind>& kinds, const InteractionToggles& toggles) {
  int n = int(kinds.size());
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        m.at(i, j) = 1.0;
        continue;
      }
      bool ia = kinds[std::size_t(i)] == EntityKind::Actor;
      bool ja = kinds[std::size_t(j)] == EntityKind::Actor;
      bool on = ia ? (ja ? toggles.actor_actor : toggles.actor_object)
                   : (ja ? toggles.object_actor : toggles.object_object);
      m.at(i, j) = on ? 1.0 : 0.0;
    }
  }
  return m;
}

WindowGraph merge_window_graphs(const std::vector<const WindowGraph*>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("merge_window_graphs: no windows");
  WindowGraph out;
  int n = 0;
  int a_rows = 0, o_rows = 0;
  int a_cols = 0, o_cols = 0;
  for (const WindowGraph* g : graphs) {
    n += g->n_nodes();
    a_rows += g->actor_inputs.rows;
    o_rows += g->object_inputs.rows;
    if (g->actor_inputs.rows > 0) a_cols = g->actor_inputs.cols;
    if (g->object_inputs.rows > 0) o_cols = g->object_inputs.cols;
  }
  for (const WindowGraph* g : graphs) {
    if (g->actor_inputs.rows > 0 && g->actor_inputs.cols != a_cols)
      throw ShapeError("merge_window_graphs: actor widths " + std::to_string(a_cols) + " vs " +
                       std::to_string(g->actor_inputs.cols));
    if (g->object_inputs.rows > 0 && g->object_inputs.cols != o_cols)
      throw ShapeError("merge_window_graphs: object widths " + std::to_string(o_cols) + " vs " +
                       std::to_string(g->object_inputs.cols));
  }

  out.clip_offsets.push_back(0);
  out.actor_inputs = Matrix(a_rows, a_cols);
  out.object_inputs = Matrix(o_rows, o_cols);
  out.adjacency = Matrix(n, n);
  out.tmask = Matrix(n, n);
  out.imask = Matrix(n, n);
  out.attn_mask = Matrix(n, n);

  int node_off = 0, a_off = 0, o_off = 0;
  for (const WindowGraph* g : graphs) {
    int gn = g->n_nodes();
    for (std::size_t c = 1; c < g->clip_offsets.size(); ++c)
      out.clip_offsets.push_back(node_off + g->clip_offsets[c]);
    out.kinds.insert(out.kinds.end(), g->kinds.begin(), g->kinds.end());
    for (int i = 0; i < gn; ++i)
      for (int j = 0; j < gn; ++j) {
        out.adjacency.at(node_off + i, node_off + j) = g->adjacency.at(i, j);
        out.tmask.at(node_off + i, node_off + j) = g->tmask.at(i, j);
        out.imask.at(node_off + i, node_off + j) = g->imask.at(i, j);
        out.attn_mask.at(node_off + i, node_off + j) = g->attn_mask.at(i, j);
      }
    for (int r = 0; r < g->actor_inputs.rows; ++r)
      for (int c = 0; c < a_cols; ++c) out.actor_inputs.at(a_off + r, c) = g->actor_inputs.at(r, c);
    for (int r = 0; r < g->object_inputs.rows; ++r)
      for (int c = 0; c < o_cols; ++c)
        out.object_inputs.at(o_off + r, c) = g->object_inputs.at(r, c);
    for (int r : g->actor_rows) out.actor_rows.push_back(node_off + r);
    for (int r : g->object_rows) out.object_rows.push_back(node_off + r);
    out.actor_labels.insert(out.actor_labels.end(), g->actor_labels.begin(),
                            g->actor_labels.end());
    out.actor_scores.insert(out.actor_scores.end(), g->actor_scores.begin(),
                            g->actor_scores.end());
    out.actor_boxes.insert(out.actor_boxes.end(), g->actor_boxes.begin(), g->actor_boxes.end());
    out.actor_keys.insert(out.actor_keys.end(), g->actor_keys.begin(), g->actor_keys.end());
    node_off += gn;
    a_off += g->actor_inputs.rows;
    o_off += g->object_inputs.rows;
  }
  return out;
}

}  // namespace stage
