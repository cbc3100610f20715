#include "stage/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "stage/errors.hpp"

namespace stage {

ValueId Tape::push(Matrix value, std::function<void(Tape&, ValueId)> bw) {
  nodes_.push_back(TapeNode{std::move(value), Matrix(), std::move(bw)});
  return int(nodes_.size()) - 1;
}

void Tape::check_id(ValueId id) const {
  if (id < 0 || id >= int(nodes_.size()))
    throw std::out_of_range("tape: node id " + std::to_string(id) + " out of range");
}

ValueId Tape::leaf(Matrix value) { return push(std::move(value), nullptr); }

const Matrix& Tape::value(ValueId id) const {
  check_id(id);
  return nodes_[std::size_t(id)].value;
}

const Matrix& Tape::grad(ValueId id) const {
  check_id(id);
  if (!differentiated_) throw std::logic_error("tape: gradients requested before backward");
  return nodes_[std::size_t(id)].grad;
}

void Tape::backward(ValueId loss) {
  if (nodes_.empty()) throw std::logic_error("tape: backward on empty tape");
  if (differentiated_) throw std::logic_error("tape: backward already run");
  check_id(loss);
  const Matrix& lv = val(loss);
  if (lv.rows != 1 || lv.cols != 1)
    throw ShapeError("tape: loss node must be 1x1, got " + lv.shape_str());
  for (auto& n : nodes_) n.grad = Matrix(n.value.rows, n.value.cols);
  nodes_[std::size_t(loss)].grad.at(0, 0) = 1.0;
  for (ValueId i = loss; i >= 0; --i) {
    auto& bw = nodes_[std::size_t(i)].backward;
    if (bw) bw(*this, i);
  }
  differentiated_ = true;
}

ValueId Tape::matmul(ValueId a, ValueId b) {
  check_id(a);
  check_id(b);
  Matrix out = stage::matmul(val(a), val(b));
  return push(std::move(out), [a, b](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    axpy(t.grad_mut(a), stage::matmul_nt(g, t.val(b)));
    axpy(t.grad_mut(b), stage::matmul_tn(t.val(a), g));
  });
}

ValueId Tape::matmul_nt(ValueId a, ValueId b) {
  check_id(a);
  check_id(b);
  Matrix out = stage::matmul_nt(val(a), val(b));
  return push(std::move(out), [a, b](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    axpy(t.grad_mut(a), stage::matmul(g, t.val(b)));
    axpy(t.grad_mut(b), stage::matmul_tn(g, t.val(a)));
  });
}

ValueId Tape::add(ValueId a, ValueId b) {
  check_id(a);
  check_id(b);
  Matrix out = stage::add(val(a), val(b));
  return push(std::move(out), [a, b](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    axpy(t.grad_mut(a), g);
    axpy(t.grad_mut(b), g);
  });
}

ValueId Tape::add_row_vector(ValueId x, ValueId v) {
  check_id(x);
  check_id(v);
  const Matrix& xm = val(x);
  const Matrix& vm = val(v);
  if (vm.rows != 1 || vm.cols != xm.cols)
    throw ShapeError("add_row_vector: " + xm.shape_str() + " vs " + vm.shape_str());
  Matrix out = xm;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += vm.at(0, j);
  return push(std::move(out), [x, v](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    axpy(t.grad_mut(x), g);
    Matrix& gv = t.grad_mut(v);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) gv.at(0, j) += g.at(i, j);
  });
}

ValueId Tape::add_scalar(ValueId x, ValueId s) {
  check_id(x);
  check_id(s);
  const Matrix& sm = val(s);
  if (sm.rows != 1 || sm.cols != 1)
    throw ShapeError("add_scalar: scalar operand must be 1x1, got " + sm.shape_str());
  Matrix out = val(x);
  double c = sm.at(0, 0);
  for (double& v : out.data) v += c;
  return push(std::move(out), [x, s](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    axpy(t.grad_mut(x), g);
    double acc = 0.0;
    for (double v : g.data) acc += v;
    t.grad_mut(s).at(0, 0) += acc;
  });
}

ValueId Tape::linear(ValueId x, ValueId w, ValueId b) {
  return add_row_vector(matmul(x, w), b);
}

ValueId Tape::hadamard_const(ValueId x, Matrix factor) {
  check_id(x);
  Matrix out = hadamard(val(x), factor);
  return push(std::move(out), [x, factor = std::move(factor)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * factor.data[i];
  });
}

ValueId Tape::scale(ValueId x, double factor) {
  check_id(x);
  Matrix out = val(x);
  for (double& v : out.data) v *= factor;
  return push(std::move(out), [x, factor](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += factor * g.data[i];
  });
}

ValueId Tape::leaky_relu(ValueId x, double slope) {
  check_id(x);
  if (!(slope > 0.0 && slope < 1.0))
    throw std::invalid_argument("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
  const Matrix& xm = val(x);
  Matrix out(xm.rows, xm.cols);
  for (std::size_t i = 0; i < xm.data.size(); ++i) {
    double v = xm.data[i];
    out.data[i] = v > 0.0 ? v : slope * v;
  }
  return push(std::move(out), [x, slope](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    const Matrix& xm = t.val(x);
    Matrix& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      gx.data[i] += (xm.data[i] > 0.0 ? 1.0 : slope) * g.data[i];
  });
}

ValueId Tape::elu(ValueId x) {
  check_id(x);
  const Matrix& xm = val(x);
  Matrix out(xm.rows, xm.cols);
  for (std::size_t i = 0; i < xm.data.size(); ++i) {
    double v = xm.data[i];
    out.data[i] = v > 0.0 ? v : std::expm1(v);
  }
  return push(std::move(out), [x](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    const Matrix& xm = t.val(x);
    const Matrix& om = t.val(self);
    Matrix& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      gx.data[i] += (xm.data[i] > 0.0 ? 1.0 : om.data[i] + 1.0) * g.data[i];
  });
}

ValueId Tape::row_softmax(ValueId x, Matrix mask) {
  check_id(x);
  const Matrix& xm = val(x);
  if (!xm.same_shape(mask))
    throw ShapeError("row_softmax: " + xm.shape_str() + " vs mask " + mask.shape_str());
  Matrix out(xm.rows, xm.cols);
  for (int i = 0; i < xm.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    int n_open = 0;
    for (int j = 0; j < xm.cols; ++j) {
      if (mask.at(i, j) != 0.0) {
        ++n_open;
        mx = std::max(mx, xm.at(i, j));
      }
    }
    if (n_open == 0)
      throw std::domain_error("row_softmax: row " + std::to_string(i) + " is fully masked");
    double denom = 0.0;
    for (int j = 0; j < xm.cols; ++j)
      if (mask.at(i, j) != 0.0) denom += std::exp(xm.at(i, j) - mx);
    for (int j = 0; j < xm.cols; ++j)
      out.at(i, j) = mask.at(i, j) != 0.0 ? std::exp(xm.at(i, j) - mx) / denom : 0.0;
  }
  return push(std::move(out), [x, mask = std::move(mask)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    const Matrix& w = t.val(self);
    Matrix& gx = t.grad_mut(x);
    for (int i = 0; i < g.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < g.cols; ++j) s += g.at(i, j) * w.at(i, j);
      for (int j = 0; j < g.cols; ++j)
        if (mask.at(i, j) != 0.0) gx.at(i, j) += w.at(i, j) * (g.at(i, j) - s);
    }
  });
}

ValueId Tape::layer_norm(ValueId x, ValueId gain, ValueId bias, double eps) {
  check_id(x);
  check_id(gain);
  check_id(bias);
  const Matrix& xm = val(x);
  const Matrix& gm = val(gain);
  const Matrix& bm = val(bias);
  if (xm.cols < 2) throw ShapeError("layer_norm: needs at least 2 columns, got " + xm.shape_str());
  if (gm.rows != 1 || gm.cols != xm.cols || bm.rows != 1 || bm.cols != xm.cols)
    throw ShapeError("layer_norm: " + xm.shape_str() + " vs gain " + gm.shape_str() + " / bias " +
                     bm.shape_str());
  int d = xm.cols;
  Matrix xhat(xm.rows, d);
  std::vector<double> inv_std(std::size_t(xm.rows));
  Matrix out(xm.rows, d);
  for (int i = 0; i < xm.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xm.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = xm.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[std::size_t(i)] = inv;
    for (int j = 0; j < d; ++j) {
      double h = (xm.at(i, j) - mean) * inv;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gm.at(0, j) + bm.at(0, j);
    }
  }
  return push(std::move(out), [x, gain, bias, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    const Matrix& gm = t.val(gain);
    Matrix& gx = t.grad_mut(x);
    Matrix& gg = t.grad_mut(gain);
    Matrix& gb = t.grad_mut(bias);
    int d = g.cols;
    for (int i = 0; i < g.rows; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < d; ++j) {
        double h = gm.at(0, j) * g.at(i, j);
        m1 += h;
        m2 += h * xhat.at(i, j);
      }
      m1 /= d;
      m2 /= d;
      double inv = inv_std[std::size_t(i)];
      for (int j = 0; j < d; ++j) {
        double h = gm.at(0, j) * g.at(i, j);
        gx.at(i, j) += inv * (h - m1 - xhat.at(i, j) * m2);
        gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
        gb.at(0, j) += g.at(i, j);
      }
    }
  });
}

ValueId Tape::dropout(ValueId x, double keep, bool training, Rng& rng) {
  check_id(x);
  if (!(keep > 0.0 && keep <= 1.0))
    throw std::invalid_argument("dropout: keep must be in (0,1], got " + std::to_string(keep));
  if (!training || keep == 1.0) return x;
  const Matrix& xm = val(x);
  Matrix scale_mask(xm.rows, xm.cols);
  Matrix out(xm.rows, xm.cols);
  double inv = 1.0 / keep;
  for (std::size_t i = 0; i < xm.data.size(); ++i) {
    double m = rng.uniform01() < keep ? inv : 0.0;
    scale_mask.data[i] = m;
    out.data[i] = xm.data[i] * m;
  }
  return push(std::move(out), [x, scale_mask = std::move(scale_mask)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * scale_mask.data[i];
  });
}

ValueId Tape::concat_cols(const std::vector<ValueId>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int rows = val(xs[0]).rows;
  int cols = 0;
  for (ValueId id : xs) {
    check_id(id);
    if (val(id).rows != rows)
      throw ShapeError("concat_cols: " + val(xs[0]).shape_str() + " vs " + val(id).shape_str());
    cols += val(id).cols;
  }
  Matrix out(rows, cols);
  int off = 0;
  for (ValueId id : xs) {
    const Matrix& m = val(id);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < m.cols; ++j) out.at(i, off + j) = m.at(i, j);
    off += m.cols;
  }
  return push(std::move(out), [xs](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    int off = 0;
    for (ValueId id : xs) {
      Matrix& gx = t.grad_mut(id);
      for (int i = 0; i < gx.rows; ++i)
        for (int j = 0; j < gx.cols; ++j) gx.at(i, j) += g.at(i, off + j);
      off += gx.cols;
    }
  });
}

ValueId Tape::select_rows(ValueId x, std::vector<int> idx) {
  check_id(x);
  const Matrix& xm = val(x);
  for (int r : idx)
    if (r < 0 || r >= xm.rows)
      throw std::out_of_range("select_rows: row " + std::to_string(r) + " out of " +
                              xm.shape_str());
  Matrix out(int(idx.size()), xm.cols);
  for (int k = 0; k < out.rows; ++k)
    for (int j = 0; j < xm.cols; ++j) out.at(k, j) = xm.at(idx[std::size_t(k)], j);
  return push(std::move(out), [x, idx = std::move(idx)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gx = t.grad_mut(x);
    for (int k = 0; k < g.rows; ++k)
      for (int j = 0; j < g.cols; ++j) gx.at(idx[std::size_t(k)], j) += g.at(k, j);
  });
}

ValueId Tape::scatter_rows(ValueId x, std::vector<int> dst, int out_rows) {
  check_id(x);
  const Matrix& xm = val(x);
  if (int(dst.size()) != xm.rows)
    throw ShapeError("scatter_rows: " + std::to_string(dst.size()) + " targets for " +
                     xm.shape_str());
  std::vector<char> seen(std::size_t(out_rows), 0);
  for (int r : dst) {
    if (r < 0 || r >= out_rows)
      throw std::out_of_range("scatter_rows: row " + std::to_string(r) + " out of " +
                              std::to_string(out_rows));
    if (seen[std::size_t(r)]++)
      throw std::invalid_argument("scatter_rows: duplicate target row " + std::to_string(r));
  }
  Matrix out(out_rows, xm.cols);
  for (int k = 0; k < xm.rows; ++k)
    for (int j = 0; j < xm.cols; ++j) out.at(dst[std::size_t(k)], j) = xm.at(k, j);
  return push(std::move(out), [x, dst = std::move(dst)](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gx = t.grad_mut(x);
    for (int k = 0; k < gx.rows; ++k)
      for (int j = 0; j < gx.cols; ++j) gx.at(k, j) += g.at(dst[std::size_t(k)], j);
  });
}

ValueId Tape::outer_sum(ValueId col, ValueId row) {
  check_id(col);
  check_id(row);
  const Matrix& cm = val(col);
  const Matrix& rm = val(row);
  if (cm.cols != 1 || rm.cols != 1)
    throw ShapeError("outer_sum: wants column vectors, got " + cm.shape_str() + " and " +
                     rm.shape_str());
  Matrix out(cm.rows, rm.rows);
  for (int i = 0; i < cm.rows; ++i)
    for (int j = 0; j < rm.rows; ++j) out.at(i, j) = cm.at(i, 0) + rm.at(j, 0);
  return push(std::move(out), [col, row](Tape& t, ValueId self) {
    const Matrix& g = t.nodes_[std::size_t(self)].grad;
    Matrix& gc = t.grad_mut(col);
    Matrix& gr = t.grad_mut(row);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        gc.at(i, 0) += g.at(i, j);
        gr.at(j, 0) += g.at(i, j);
      }
  });
}

ValueId Tape::sum_all(ValueId x) {
  check_id(x);
  double acc = 0.0;
  for (double v : val(x).data) acc += v;
  Matrix out(1, 1);
  out.at(0, 0) = acc;
  return push(std::move(out), [x](Tape& t, ValueId self) {
    double g = t.nodes_[std::size_t(self)].grad.at(0, 0);
    Matrix& gx = t.grad_mut(x);
    for (double& v : gx.data) v += g;
  });
}

ValueId Tape::sigmoid_ce_mean(ValueId logits, Matrix targets) {
  check_id(logits);
  const Matrix& lm = val(logits);
  if (!lm.same_shape(targets))
    throw ShapeError("sigmoid_ce_mean: " + lm.shape_str() + " vs targets " + targets.shape_str());
  Matrix out(1, 1);
  std::size_t n = lm.data.size();
  if (n > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double x = lm.data[i];
      double y = targets.data[i];
      acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    out.at(0, 0) = acc / double(n);
  }
  return push(std::move(out), [logits, targets = std::move(targets), n](Tape& t, ValueId self) {
    if (n == 0) return;
    double g = t.nodes_[std::size_t(self)].grad.at(0, 0);
    const Matrix& lm = t.val(logits);
    Matrix& gl = t.grad_mut(logits);
    double inv = g / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 1.0 / (1.0 + std::exp(-lm.data[i]));
      gl.data[i] += inv * (s - targets.data[i]);
    }
  });
}

ValueId Tape::softmax_ce_mean(ValueId logits, std::vector<int> labels) {
  check_id(logits);
  const Matrix& lm = val(logits);
  if (int(labels.size()) != lm.rows)
    throw ShapeError("softmax_ce_mean: " + std::to_string(labels.size()) + " labels for " +
                     lm.shape_str());
  for (int lab : labels)
    if (lab < 0 || lab >= lm.cols)
      throw std::out_of_range("softmax_ce_mean: label " + std::to_string(lab) +
                              " out of range for " + std::to_string(lm.cols) + " classes");
  Matrix out(1, 1);
  if (lm.rows > 0) {
    double acc = 0.0;
    for (int i = 0; i < lm.rows; ++i) {
      double mx = lm.at(i, 0);
      for (int j = 1; j < lm.cols; ++j) mx = std::max(mx, lm.at(i, j));
      double denom = 0.0;
      for (int j = 0; j < lm.cols; ++j) denom += std::exp(lm.at(i, j) - mx);
      acc += std::log(denom) + mx - lm.at(i, labels[std::size_t(i)]);
    }
    out.at(0, 0) = acc / double(lm.rows);
  }
  return push(std::move(out), [logits, labels = std::move(labels)](Tape& t, ValueId self) {
    const Matrix& lm = t.val(logits);
    if (lm.rows == 0) return;
    double g = t.nodes_[std::size_t(self)].grad.at(0, 0);
    Matrix& gl = t.grad_mut(logits);
    double inv = g / double(lm.rows);
    for (int i = 0; i < lm.rows; ++i) {
      double mx = lm.at(i, 0);
      for (int j = 1; j < lm.cols; ++j) mx = std::max(mx, lm.at(i, j));
      double denom = 0.0;
      for (int j = 0; j < lm.cols; ++j) denom += std::exp(lm.at(i, j) - mx);
      for (int j = 0; j < lm.cols; ++j) {
        double p = std::exp(lm.at(i, j) - mx) / denom;
        gl.at(i, j) += inv * (p - (j == labels[std::size_t(i)] ? 1.0 : 0.0));
      }
    }
  });
}

}  // namespace stage
