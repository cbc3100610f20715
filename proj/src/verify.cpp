#include "stage/verify.hpp"

#include <algorithm>
#include <cmath>

#include "stage/gradcheck.hpp"
#include "stage/tape.hpp"

namespace stage {

namespace {

BoxGeometry random_box(Rng& rng) {
  double w = rng.uniform(0.05, 0.25);
  double h = rng.uniform(0.05, 0.25);
  double x1 = rng.uniform(0.0, 1.0 - w);
  double y1 = rng.uniform(0.0, 1.0 - h);
  return {x1, y1, x1 + w, y1 + h};
}

}  // namespace

GradCheckCase random_gradcheck_case(Rng& rng) {
  GradCheckCase cc;
  StageConfig& c = cc.config;
  c.n_heads = rng.uniform_int(1, 2);
  c.n_layers = rng.uniform_int(1, 2);
  c.actor_feat_width = rng.uniform_int(3, 14);
  c.object_feat_width = rng.uniform_int(3, 28);
  c.n_classes = rng.uniform_int(2, 5);
  c.window_clips = rng.uniform_int(1, 3);
  c.rf_direct = 3;
  c.dropout_keep = 1.0;  // randomness excluded from the check
  c.loss_mode =
      rng.uniform01() < 0.5 ? LossMode::MultiLabelSigmoid : LossMode::SingleLabelSoftmax;
  c.proximity_on = rng.uniform01() < 0.8;
  c.temporal_on = rng.uniform01() < 0.8;
  c.actor_actor_on = rng.uniform01() < 0.8;
  c.object_object_on = rng.uniform01() < 0.8;
  c.attention = rng.uniform01() < 0.25 ? AttentionKind::Transformer : AttentionKind::Graph;
  c.adjacency =
      rng.uniform01() < 0.25 ? AdjacencyKind::FeatureDistance : AdjacencyKind::BoxProximity;

  int n_actors_total = 0;
  for (int t = 0; t < c.window_clips; ++t) {
    ClipRecord clip;
    clip.video_id = "gradcheck";
    clip.timestamp = t;
    int n_entities = rng.uniform_int(1, 4);
    for (int e = 0; e < n_entities; ++e) {
      EntityDetection det;
      bool actor = rng.uniform01() < 0.5;
      // the last clip guarantees at least one actor so the loss is never empty
      if (t == c.window_clips - 1 && e == n_entities - 1 && n_actors_total == 0) actor = true;
      det.kind = actor ? EntityKind::Actor : EntityKind::Object;
      det.box = random_box(rng);
      det.score = 1.0;
      int width = actor ? c.actor_feat_width : c.object_feat_width;
      det.feature.resize(std::size_t(width));
      for (double& v : det.feature) v = rng.uniform(-1.0, 1.0);
      if (actor) {
        ++n_actors_total;
        if (c.loss_mode == LossMode::SingleLabelSoftmax) {
          det.labels = {rng.uniform_int(0, c.n_classes - 1)};
        } else {
          for (int cls = 0; cls < c.n_classes; ++cls)
            if (rng.uniform01() < 0.4) det.labels.push_back(cls);
        }
      }
      clip.entities.push_back(std::move(det));
    }
    cc.clips.push_back(std::move(clip));
  }
  return cc;
}

GradCheckResult gradcheck_case(const GradCheckCase& cc, std::uint64_t init_seed) {
  const StageConfig& c = cc.config;
  Rng init_rng(init_seed);
  ParameterSet params = ParameterSet::init(c, init_rng);
  WindowGraph g = assemble_window({cc.clips.data(), cc.clips.size()}, c);

  auto loss_value_and_grads = [&](const ParameterSet& p, std::vector<double>* flat_grads) {
    Tape t;
    ParamIds ids = insert_params(t, p);
    Rng unused(0);
    WindowForward fw = stage_window_forward(t, g, ids, c, /*training=*/true, unused);
    ValueId loss = stage_loss(t, fw.logits, g.actor_labels, c);
    double lv = t.value(loss).at(0, 0);
    if (flat_grads) {
      t.backward(loss);
      flat_grads->clear();
      for (const auto& [name, grad] : collect_grads(t, ids))
        flat_grads->insert(flat_grads->end(), grad->data.begin(), grad->data.end());
    }
    return lv;
  };

  std::vector<double> analytic;
  loss_value_and_grads(params, &analytic);

  ParameterSet scratch = params;
  auto f = [&](const std::vector<double>& theta) {
    scratch.unflatten(theta);
    return loss_value_and_grads(scratch, nullptr);
  };
  std::vector<double> numeric = finite_diff_grad(f, params.flatten(), 1e-5);

  GradCheckResult r;
  r.n_params = params.n_coords();
  r.n_cases = 1;
  r.max_rel_err = max_relative_error(analytic, numeric);
  return r;
}

GradCheckResult run_gradcheck(std::uint64_t seed, int n_cases) {
  GradCheckResult worst;
  worst.n_cases = n_cases;
  Rng rng(seed);
  for (int i = 0; i < n_cases; ++i) {
    GradCheckCase cc = random_gradcheck_case(rng);
    GradCheckResult r = gradcheck_case(cc, seed + std::uint64_t(i) * 7919 + 1);
    worst.n_params += r.n_params;
    if (r.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = r.max_rel_err;
      worst.worst_case = "case " + std::to_string(i);
    }
  }
  return worst;
}

}  // namespace stage
