#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stage/attention.hpp"
#include "stage/data.hpp"
#include "stage/graph.hpp"
#include "stage/matrix.hpp"
#include "stage/rng.hpp"
#include "stage/tape.hpp"

namespace stage {

enum class LossMode { MultiLabelSigmoid, SingleLabelSoftmax };
enum class AdjacencyKind { BoxProximity, FeatureDistance };

struct StageConfig {
  int n_heads = 4;
  int n_layers = 2;
  int actor_feat_width = 1024;   // raw feature width per kind; 4 geometry
  int object_feat_width = 2048;  // values are appended before anything else
  int n_classes = 80;
  int window_clips = 3;  // consecutive clips assembled into one graph
  int rf_direct = 3;     // clips directly connected per layer, odd
  double dropout_keep = 0.5;
  double leaky_slope = 0.2;
  double ln_eps = 1e-5;
  LossMode loss_mode = LossMode::MultiLabelSigmoid;

  // ablation toggles
  bool proximity_on = true;      // off: adjacency values replaced by 1 on the mask
  bool temporal_on = true;       // off: no edges across clips
  bool actor_actor_on = true;
  bool object_object_on = true;
  AttentionKind attention = AttentionKind::Graph;
  AdjacencyKind adjacency = AdjacencyKind::BoxProximity;

  // training
  double lr = 6.25e-5;
  int batch_windows = 6;  // windows per optimizer step
  int window_stride = 0;  // 0 means window_clips (non-overlapping)
  int max_epochs = 40;
  int decay_patience = 10;
  int stop_patience = 15;
  double label_iou_thresh = 0.5;
  double eval_score_thresh = 0.0;
  int min_class_examples = 0;
  std::uint64_t seed = 1;

  /// Common feature width: the smaller raw width plus the 4 geometry values.
  /// The other kind is projected down to this.
  int d_f() const { return std::min(actor_feat_width, object_feat_width) + 4; }
  int d_h() const { return d_f() / n_heads; }
  /// Actors are projected only when their extended width is strictly larger;
  /// on a tie the objects are projected.
  bool project_actors() const { return actor_feat_width > object_feat_width; }
  int projected_width() const {
    return (project_actors() ? actor_feat_width : object_feat_width) + 4;
  }
  int stride() const { return window_stride > 0 ? window_stride : window_clips; }

  void validate() const;
};

StageConfig preset_config(const std::string& name);  // stage-i3d, stage-r101, stage-slowfast

std::string config_to_json(const StageConfig& c);
StageConfig config_from_json(const std::string& text);

/// One graph-attention head's learnable blocks.
struct HeadParams {
  Matrix w, b;            // d_f x d_h, 1 x d_h
  Matrix attn_a, attn_b;  // 2*d_h x 1, 1 x 1
  Matrix wq, bq, wk, bk, wv, bv;  // transformer variant
};

struct LayerParams {
  std::vector<HeadParams> heads;
  Matrix w_out, b_out;      // n_h*d_h x d_f, 1 x d_f
  Matrix ln_gain, ln_bias;  // 1 x d_f
};

/// Every learnable block, iterated in a fixed declaration order: input
/// projection, then per layer (per head, then the output map and layer norm),
/// then the classifier. That order defines checkpoints, the optimizer state
/// layout, and gradient flattening.
struct ParameterSet {
  AttentionKind attention = AttentionKind::Graph;
  Matrix input_proj_w, input_proj_b;
  std::vector<LayerParams> layers;
  Matrix classifier_w, classifier_b;

  static ParameterSet init(const StageConfig& c, Rng& rng);

  void for_each_block(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_block(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  std::int64_t n_coords() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& theta);
};

/// Tape ids of every block, in the same declaration order.
struct ParamIds {
  ValueId proj_w = -1, proj_b = -1;
  std::vector<LayerParamIds> layers;
  ValueId cls_w = -1, cls_b = -1;
};

ParamIds insert_params(Tape& t, const ParameterSet& p);
/// (name, gradient) per block, declaration order; valid after backward().
std::vector<std::pair<std::string, const Matrix*>> collect_grads(const Tape& t,
                                                                 const ParamIds& ids);

/// Build the window graph from clip records: geometry-extended features per
/// kind, adjacency per the config's toggles, temporal and interaction masks,
/// and the actor bookkeeping.
WindowGraph assemble_window(std::span<const ClipRecord> clips, const StageConfig& c);

struct WindowForward {
  ValueId features = -1;  // N x d_f after the attention stack
  ValueId logits = -1;    // A x n_classes, actor rows only
  std::vector<std::vector<ValueId>> attn_weights;
};

WindowForward stage_window_forward(Tape& t, const WindowGraph& g, const ParamIds& ids,
                                   const StageConfig& c, bool training, Rng& rng);

/// Classification loss over the actor rows; 0 when there are none.
ValueId stage_loss(Tape& t, ValueId logits, const std::vector<std::vector<int>>& actor_labels,
                   const StageConfig& c);

std::int64_t count_params(const StageConfig& c);

/// Analytic multiply-accumulate counts of the dominant dense terms for one
/// clip with the given entity counts; elementwise work is not counted.
struct FlopBreakdown {
  std::int64_t projection = 0;
  std::int64_t head_proj = 0;
  std::int64_t attn_scores = 0;
  std::int64_t weighted_sum = 0;
  std::int64_t out_proj = 0;
  std::int64_t classifier = 0;
  std::int64_t total() const {
    return projection + head_proj + attn_scores + weighted_sum + out_proj + classifier;
  }
};
FlopBreakdown count_flops_breakdown(const StageConfig& c, int n_actors, int n_objects);
std::int64_t count_flops(const StageConfig& c, int n_actors, int n_objects);

/// Versioned binary container: magic, config echo as JSON, then every block
/// in declaration order as raw little-endian doubles. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const StageConfig& c, const ParameterSet& p);
struct Checkpoint {
  StageConfig config;
  ParameterSet params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stage
