#include "stage/training.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

#include "stage/errors.hpp"

namespace stage {

std::vector<Window> make_windows(const Dataset& data, int window_clips, int stride,
                                 std::vector<std::string>* warnings) {
  if (window_clips < 1) throw std::invalid_argument("make_windows: window_clips must be >= 1");
  if (stride < 1) throw std::invalid_argument("make_windows: stride must be >= 1");
  std::vector<Window> out;
  std::size_t i = 0;
  while (i < data.size()) {
    std::size_t j = i;
    while (j < data.size() && data[j].video_id == data[i].video_id) ++j;
    int n = int(j - i);
    for (int start = 0; start < n; start += stride) {
      Window w;
      w.first_clip = int(i) + start;
      w.n_clips = std::min(window_clips, n - start);
      int entities = 0;
      for (int k = 0; k < w.n_clips; ++k)
        entities += int(data[std::size_t(w.first_clip + k)].entities.size());
      if (entities == 0) {
        if (warnings)
          warnings->push_back("window at video " + data[i].video_id + " t=" +
                              std::to_string(data[std::size_t(w.first_clip)].timestamp) +
                              " has no entities; skipped");
        continue;
      }
      out.push_back(w);
    }
    i = j;
  }
  return out;
}

std::vector<std::vector<int>> assign_labels(const std::vector<BoxGeometry>& pred_boxes,
                                            const std::vector<BoxGeometry>& gt_boxes,
                                            const std::vector<std::vector<int>>& gt_labels,
                                            double iou_thresh) {
  if (gt_boxes.size() != gt_labels.size())
    throw ShapeError("assign_labels: " + std::to_string(gt_boxes.size()) + " boxes vs " +
                     std::to_string(gt_labels.size()) + " label sets");
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0))
    throw std::invalid_argument("assign_labels: iou_thresh must be in (0,1)");
  std::vector<std::vector<int>> out(pred_boxes.size());
  for (std::size_t p = 0; p < pred_boxes.size(); ++p) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      double v = iou(pred_boxes[p], gt_boxes[g]);
      if (v > best_iou) {
        best_iou = v;
        best = int(g);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh) out[p] = gt_labels[std::size_t(best)];
  }
  return out;
}

void apply_ground_truth_labels(Dataset& data, const Dataset& gt, double iou_thresh) {
  std::map<std::pair<std::string, int>, const ClipRecord*> gt_by_key;
  for (const ClipRecord& clip : gt) gt_by_key[{clip.video_id, clip.timestamp}] = &clip;
  for (ClipRecord& clip : data) {
    std::vector<BoxGeometry> pred_boxes;
    for (const EntityDetection& e : clip.entities)
      if (e.kind == EntityKind::Actor) pred_boxes.push_back(e.box);
    if (pred_boxes.empty()) continue;

    std::vector<BoxGeometry> gt_boxes;
    std::vector<std::vector<int>> gt_labels;
    auto it = gt_by_key.find({clip.video_id, clip.timestamp});
    if (it != gt_by_key.end()) {
      for (const EntityDetection& e : it->second->entities)
        if (e.kind == EntityKind::Actor && !e.labels.empty()) {
          gt_boxes.push_back(e.box);
          gt_labels.push_back(e.labels);
        }
    }
    std::vector<std::vector<int>> assigned =
        assign_labels(pred_boxes, gt_boxes, gt_labels, iou_thresh);
    std::size_t a = 0;
    for (EntityDetection& e : clip.entities)
      if (e.kind == EntityKind::Actor) e.labels = assigned[a++];
  }
}

AdamState AdamState::init(const ParameterSet& params) {
  AdamState s;
  params.for_each_block([&](const std::string&, const Matrix& m) {
    s.m.emplace_back(m.rows, m.cols);
    s.v.emplace_back(m.rows, m.cols);
  });
  return s;
}

void adam_step(TrainState& state,
               const std::vector<std::pair<std::string, const Matrix*>>& grads) {
  AdamState& a = state.adam;
  ++a.step;
  double bc1 = 1.0 - std::pow(a.beta1, double(a.step));
  double bc2 = 1.0 - std::pow(a.beta2, double(a.step));
  std::size_t block = 0;
  state.params.for_each_block([&](const std::string& name, Matrix& theta) {
    if (block >= grads.size() || grads[block].first != name)
      throw std::logic_error("adam_step: gradient block order mismatch at '" + name + "'");
    const Matrix& g = *grads[block].second;
    if (!g.same_shape(theta))
      throw ShapeError("adam_step: block '" + name + "' gradient " + g.shape_str() +
                       " vs parameter " + theta.shape_str());
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient in block '" + name + "'");
    Matrix& m = a.m[block];
    Matrix& v = a.v[block];
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      double gi = g.data[i];
      m.data[i] = a.beta1 * m.data[i] + (1.0 - a.beta1) * gi;
      v.data[i] = a.beta2 * v.data[i] + (1.0 - a.beta2) * gi * gi;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      theta.data[i] -= state.lr * mhat / (std::sqrt(vhat) + a.eps);
    }
    ++block;
  });
  if (block != grads.size())
    throw std::logic_error("adam_step: " + std::to_string(grads.size()) + " gradient blocks for " +
                           std::to_string(block) + " parameter blocks");
}

EvalReport evaluate_dataset(const StageConfig& c, const ParameterSet& params, const Dataset& data,
                            const EvalOptions& opts) {
  std::vector<Window> windows = make_windows(data, c.window_clips, c.stride());
  std::vector<FramePrediction> preds;
  Rng unused(0);  // inference applies no dropout
  for (const Window& w : windows) {
    WindowGraph g = assemble_window({data.data() + w.first_clip, std::size_t(w.n_clips)}, c);
    Tape t;
    ParamIds ids = insert_params(t, params);
    WindowForward fw = stage_window_forward(t, g, ids, c, /*training=*/false, unused);
    const Matrix& logits = t.value(fw.logits);
    for (int r = 0; r < logits.rows; ++r) {
      if (g.actor_scores[std::size_t(r)] < opts.score_thresh) continue;
      FramePrediction p;
      p.video_id = g.actor_keys[std::size_t(r)].first;
      p.timestamp = g.actor_keys[std::size_t(r)].second;
      p.box = g.actor_boxes[std::size_t(r)];
      p.scores.resize(std::size_t(logits.cols));
      if (c.loss_mode == LossMode::MultiLabelSigmoid) {
        for (int j = 0; j < logits.cols; ++j)
          p.scores[std::size_t(j)] = 1.0 / (1.0 + std::exp(-logits.at(r, j)));
      } else {
        double mx = logits.at(r, 0);
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits.at(r, j));
        double denom = 0.0;
        for (int j = 0; j < logits.cols; ++j) denom += std::exp(logits.at(r, j) - mx);
        for (int j = 0; j < logits.cols; ++j)
          p.scores[std::size_t(j)] = std::exp(logits.at(r, j) - mx) / denom;
      }
      preds.push_back(std::move(p));
    }
  }

  std::vector<FrameGroundTruth> gts;
  for (const ClipRecord& clip : data)
    for (const EntityDetection& e : clip.entities)
      if (e.kind == EntityKind::Actor && !e.labels.empty())
        gts.push_back({clip.video_id, clip.timestamp, e.box, e.labels});

  return frame_map(preds, gts, opts.iou_thresh, opts.min_class_examples, c.n_classes,
                   opts.groups);
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,val_map,lr\n";
  char buf[128];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_map, e.lr);
    out += buf;
  }
  return out;
}

FitResult fit(const StageConfig& c, const Dataset& train, const Dataset& val, std::ostream* log) {
  c.validate();
  if (train.empty() || val.empty()) throw FormatError("fit: both splits must be non-empty");
  bool any_labeled = false;
  for (const ClipRecord& clip : val)
    for (const EntityDetection& e : clip.entities)
      if (e.kind == EntityKind::Actor && !e.labels.empty()) any_labeled = true;
  if (!any_labeled) throw FormatError("fit: validation split has no labeled actors");

  Rng rng(c.seed);
  TrainState state;
  state.params = ParameterSet::init(c, rng);
  state.adam = AdamState::init(state.params);
  state.lr = c.lr;

  std::vector<std::string> warnings;
  std::vector<Window> windows = make_windows(train, c.window_clips, c.stride(), &warnings);
  if (log)
    for (const std::string& w : warnings) *log << "warning: " << w << "\n";
  if (windows.empty()) throw FormatError("fit: no usable training windows");

  std::vector<WindowGraph> graphs;
  graphs.reserve(windows.size());
  for (const Window& w : windows)
    graphs.push_back(assemble_window({train.data() + w.first_clip, std::size_t(w.n_clips)}, c));

  EvalOptions eval_opts;
  eval_opts.iou_thresh = 0.5;
  eval_opts.min_class_examples = c.min_class_examples;
  eval_opts.score_thresh = c.eval_score_thresh;

  FitResult result;
  result.best_val_map = -1.0;
  int since_improve_decay = 0;
  int since_improve_stop = 0;

  std::vector<int> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 1; epoch <= c.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(c.batch_windows)) {
      std::vector<const WindowGraph*> batch;
      for (std::size_t k = start;
           k < std::min(order.size(), start + std::size_t(c.batch_windows)); ++k)
        batch.push_back(&graphs[std::size_t(order[k])]);
      WindowGraph merged = merge_window_graphs(batch);

      Tape t;
      ParamIds ids = insert_params(t, state.params);
      WindowForward fw = stage_window_forward(t, merged, ids, c, /*training=*/true, rng);
      ValueId loss = stage_loss(t, fw.logits, merged.actor_labels, c);
      double lv = t.value(loss).at(0, 0);
      if (!std::isfinite(lv)) {
        if (log) *log << "divergence: non-finite loss at epoch " << epoch << "\n";
        result.diverged = true;
        if (result.best_val_map < 0.0) {
          result.best_params = state.params;
          result.best_epoch = 0;
          result.best_val_map = 0.0;
        }
        return result;
      }
      t.backward(loss);
      adam_step(state, collect_grads(t, ids));
      loss_sum += lv;
      ++n_batches;
    }
    double train_loss = n_batches > 0 ? loss_sum / n_batches : 0.0;

    EvalReport rep = evaluate_dataset(c, state.params, val, eval_opts);
    double val_map = rep.mean_ap;
    if (val_map > result.best_val_map) {
      result.best_val_map = val_map;
      result.best_params = state.params;
      result.best_epoch = epoch;
      since_improve_decay = 0;
      since_improve_stop = 0;
    } else {
      ++since_improve_decay;
      ++since_improve_stop;
    }
    bool stop = since_improve_stop >= c.stop_patience;
    if (!stop && since_improve_decay >= c.decay_patience) {
      state.lr *= 0.1;
      since_improve_decay = 0;
    }
    result.history.push_back({epoch, train_loss, val_map, state.lr});
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d  train_loss %.6f  val_map %.4f  lr %.3g\n", epoch,
                    train_loss, val_map, state.lr);
      *log << buf;
    }
    if (stop) break;
  }
  return result;
}

}  // namespace stage
