#include "stage/attention.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stage {

HeadResult head_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                        const HeadParamIds& p, const AttentionOptions& o, Rng& rng) {
  ValueId summed;
  ValueId weights;
  if (o.kind == AttentionKind::Transformer) {
    summed = transformer_attention(t, x, p, mask, &weights);
  } else {
    ValueId h = t.linear(x, p.w, p.b);
    int d_h = t.value(h).cols;
    std::vector<int> self_half(static_cast<std::size_t>(d_h));
    std::vector<int> peer_half(static_cast<std::size_t>(d_h));
    std::iota(self_half.begin(), self_half.end(), 0);
    std::iota(peer_half.begin(), peer_half.end(), d_h);
    ValueId s_self = t.matmul(h, t.select_rows(p.attn_a, self_half));  // N x 1
    ValueId s_peer = t.matmul(h, t.select_rows(p.attn_a, peer_half));
    ValueId scores =
        t.leaky_relu(t.add_scalar(t.outer_sum(s_self, s_peer), p.attn_b), o.leaky_slope);
    ValueId conditioned = t.hadamard_const(scores, adjacency);
    weights = t.row_softmax(conditioned, mask);
    summed = t.matmul(weights, h);
  }
  ValueId out = t.dropout(t.elu(summed), o.dropout_keep, o.training, rng);
  return {out, weights};
}

ValueId transformer_attention(Tape& t, ValueId x, const HeadParamIds& p, const Matrix& mask,
                              ValueId* weights_out) {
  ValueId q = t.linear(x, p.wq, p.bq);
  ValueId k = t.linear(x, p.wk, p.bk);
  ValueId v = t.linear(x, p.wv, p.bv);
  int d_k = t.value(q).cols;
  ValueId logits = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(double(d_k)));
  ValueId weights = t.row_softmax(logits, mask);
  if (weights_out) *weights_out = weights;
  return t.matmul(weights, v);
}

LayerResult layer_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                          const LayerParamIds& p, const AttentionOptions& o, Rng& rng) {
  if (p.heads.empty()) throw std::invalid_argument("layer_forward: at least one head");
  LayerResult r;
  std::vector<ValueId> outs;
  for (const HeadParamIds& head : p.heads) {
    HeadResult hr = head_forward(t, x, adjacency, mask, head, o, rng);
    outs.push_back(hr.out);
    r.head_weights.push_back(hr.weights);
  }
  ValueId cat = outs.size() == 1 ? outs[0] : t.concat_cols(outs);
  ValueId mixed = t.linear(cat, p.w_out, p.b_out);
  r.out = t.layer_norm(t.add(x, mixed), p.ln_gain, p.ln_bias, o.ln_eps);
  return r;
}

StageResult stage_forward(Tape& t, ValueId x, const Matrix& adjacency, const Matrix& mask,
                          const std::vector<LayerParamIds>& layers, const AttentionOptions& o,
                          Rng& rng) {
  if (layers.empty()) throw std::invalid_argument("stage_forward: at least one layer");
  StageResult r;
  r.out = x;
  for (const LayerParamIds& lp : layers) {
    LayerResult lr = layer_forward(t, r.out, adjacency, mask, lp, o, rng);
    r.out = lr.out;
    r.weights.push_back(std::move(lr.head_weights));
  }
  return r;
}

int receptive_field(int n_layers, int rf_direct) {
  if (n_layers < 1) throw std::invalid_argument("receptive_field: n_layers must be >= 1");
  if (rf_direct < 1 || rf_direct % 2 == 0)
    throw std::invalid_argument("receptive_field: rf_direct must be odd and >= 1");
  return rf_direct + (rf_direct - 1) * (n_layers - 1);
}

}  // namespace stage
