#pragma once

#include <vector>

#include "stage/matrix.hpp"
#include "stage/rng.hpp"
#include "stage/tape.hpp"

namespace stage {

enum class AttentionKind { Graph, Transformer };

/// Tape ids of one head's parameters. Graph heads use {w, b, attn_a, attn_b};
/// the transformer variant uses the three {wq, wk, wv} projections instead.
struct HeadParamIds {
  ValueId w = -1, b = -1;          // d_f x d_h feature projection
  ValueId attn_a = -1, attn_b = -1;  // 2*d_h x 1 pair scorer + scalar bias
  ValueId wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1;
};

struct LayerParamIds {
  std::vector<HeadParamIds> heads;
  ValueId w_out = -1, b_out = -1;  // n_h*d_h x d_f
  ValueId ln_gain = -1, ln_bias = -1;
};

struct AttentionOptions {
  AttentionKind kind = AttentionKind::Graph;
  double leaky_slope = 0.2;
  double dropout_keep = 0.5;
  bool training = false;
  double ln_eps = 1e-5;
};

struct HeadResult {
  ValueId out = -1;      // N x d_h
  ValueId weights = -1;  // N x N attention weights after the masked softmax
};

/// One graph-attention head: project features, score every pair, condition
/// the scores on the adjacency, normalize with a masked row softmax, and
/// aggregate: out_i = dropout(elu(sum_j W_ij * h_j)).
HeadResult head_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                        const HeadParamIds& p, const AttentionOptions& o, Rng& rng);

/// Scaled dot-product head used by the transformer ablation: logits QK^T/
/// sqrt(d_k), masked row softmax, returns weights * V. No adjacency term.
ValueId transformer_attention(Tape& t, ValueId x, const HeadParamIds& p, const Matrix& mask,
                              ValueId* weights_out = nullptr);

struct LayerResult {
  ValueId out = -1;  // N x d_f
  std::vector<ValueId> head_weights;
};

/// Heads in parallel, concatenated, mixed by a linear map, then residual
/// connection and layer normalization.
LayerResult layer_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                          const LayerParamIds& p, const AttentionOptions& o, Rng& rng);

struct StageResult {
  ValueId out = -1;
  std::vector<std::vector<ValueId>> weights;  // [layer][head]
};

/// Sequential layers sharing the same adjacency and mask.
StageResult stage_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                          const std::vector<LayerParamIds>& layers, const AttentionOptions& o,
                          Rng& rng);

/// Number of clips that can influence one clip's output: rf_direct direct
/// neighbors per layer, each extra layer extends the span by rf_direct - 1.
int receptive_field(int n_layers, int rf_direct);

}  // namespace stage
