#pragma once

#include <functional>
#include <vector>

#include "stage/matrix.hpp"
#include "stage/rng.hpp"

namespace stage {

using ValueId = int;

/// One recorded primitive application: the forward value plus a closure that
/// routes the node's output gradient back to its inputs.
struct TapeNode {
  Matrix value;
  Matrix grad;
  std::function<void(class Tape&, ValueId)> backward;
};

/// Append-only record of forward primitives. Ops only reference earlier
/// nodes, so one reverse walk over the record is a complete backward pass.
/// Leaves that never feed the loss keep an exactly-zero gradient.
class Tape {
 public:
  ValueId leaf(Matrix value);

  const Matrix& value(ValueId id) const;
  /// Gradient of the loss w.r.t. this node; valid after backward().
  const Matrix& grad(ValueId id) const;
  int size() const { return int(nodes_.size()); }

  /// Seeds d(loss)/d(loss) = 1 and replays the record once, in reverse.
  /// The loss node must be 1x1; calling on an empty tape is an error.
  void backward(ValueId loss);

  ValueId matmul(ValueId a, ValueId b);
  ValueId matmul_nt(ValueId a, ValueId b);          // a * b^T
  ValueId add(ValueId a, ValueId b);
  ValueId add_row_vector(ValueId x, ValueId v);     // v: 1 x C, broadcast over rows
  ValueId add_scalar(ValueId x, ValueId s);         // s: 1 x 1, broadcast
  ValueId linear(ValueId x, ValueId w, ValueId b);  // x*w + row bias
  ValueId hadamard_const(ValueId x, Matrix factor);
  ValueId scale(ValueId x, double factor);
  ValueId leaky_relu(ValueId x, double slope);      // slope in (0,1)
  ValueId elu(ValueId x);
  /// Row-wise softmax over the entries where mask != 0. Masked entries get
  /// weight exactly 0 and are excluded from the normalization. A row with no
  /// unmasked entry is an error naming the row.
  ValueId row_softmax(ValueId x, Matrix mask);
  ValueId layer_norm(ValueId x, ValueId gain, ValueId bias, double eps);
  /// Inverted dropout: keeps entries with probability `keep` and scales them
  /// by 1/keep while training; identity otherwise (and when keep == 1).
  ValueId dropout(ValueId x, double keep, bool training, Rng& rng);
  ValueId concat_cols(const std::vector<ValueId>& xs);
  ValueId select_rows(ValueId x, std::vector<int> idx);
  ValueId scatter_rows(ValueId x, std::vector<int> dst, int out_rows);
  ValueId outer_sum(ValueId col, ValueId row);      // n x 1 ⊕ m x 1 -> n x m
  ValueId sum_all(ValueId x);                       // 1 x 1
  /// Mean over all entries of the elementwise sigmoid cross-entropy against
  /// {0,1} targets; 0 for an empty logits matrix.
  ValueId sigmoid_ce_mean(ValueId logits, Matrix targets);
  /// Mean over rows of softmax cross-entropy against integer labels.
  ValueId softmax_ce_mean(ValueId logits, std::vector<int> labels);

 private:
  ValueId push(Matrix value, std::function<void(Tape&, ValueId)> bw);
  Matrix& grad_mut(ValueId id) { return nodes_[std::size_t(id)].grad; }
  const Matrix& val(ValueId id) const { return nodes_[std::size_t(id)].value; }
  void check_id(ValueId id) const;

  std::vector<TapeNode> nodes_;
  bool differentiated_ = false;
};

}  // namespace stage
