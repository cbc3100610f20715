#include "stage/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "stage/errors.hpp"

namespace stage {

void StageConfig::validate() const {
  if (n_heads < 1) throw std::invalid_argument("config: n_heads must be >= 1");
  if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
  if (actor_feat_width < 1 || object_feat_width < 1)
    throw std::invalid_argument("config: feature widths must be >= 1");
  if (d_f() < n_heads) throw std::invalid_argument("config: d_f must be >= n_heads");
  if (n_classes < 1) throw std::invalid_argument("config: n_classes must be >= 1");
  if (window_clips < 1) throw std::invalid_argument("config: window_clips must be >= 1");
  if (rf_direct < 1 || rf_direct % 2 == 0)
    throw std::invalid_argument("config: rf_direct must be odd and >= 1");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
    throw std::invalid_argument("config: dropout_keep must be in (0,1]");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("config: leaky_slope must be in (0,1)");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (batch_windows < 1) throw std::invalid_argument("config: batch_windows must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (decay_patience < 1 || stop_patience < 1)
    throw std::invalid_argument("config: patiences must be >= 1");
  if (!(label_iou_thresh > 0.0 && label_iou_thresh < 1.0))
    throw std::invalid_argument("config: label_iou_thresh must be in (0,1)");
}

StageConfig preset_config(const std::string& name) {
  StageConfig c;
  if (name == "stage-i3d") {
    c.n_heads = 4;
    c.n_layers = 2;
    c.actor_feat_width = 1024;
    c.object_feat_width = 2048;
    c.lr = 6.25e-5;
  } else if (name == "stage-r101") {
    c.n_heads = 2;
    c.n_layers = 2;
    c.actor_feat_width = 2048;
    c.object_feat_width = 2048;
    c.lr = 1e-5;
  } else if (name == "stage-slowfast") {
    c.n_heads = 2;
    c.n_layers = 2;
    c.actor_feat_width = 2304;
    c.object_feat_width = 2048;
    c.lr = 1e-5;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return c;
}

namespace {

const char* loss_mode_name(LossMode m) {
  return m == LossMode::MultiLabelSigmoid ? "multi-label-sigmoid" : "single-label-softmax";
}
const char* attention_name(AttentionKind k) {
  return k == AttentionKind::Graph ? "graph" : "transformer";
}
const char* adjacency_name(AdjacencyKind k) {
  return k == AdjacencyKind::BoxProximity ? "box-proximity" : "feature-distance";
}

}  // namespace

std::string config_to_json(const StageConfig& c) {
  nlohmann::ordered_json j;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["actor_feat_width"] = c.actor_feat_width;
  j["object_feat_width"] = c.object_feat_width;
  j["n_classes"] = c.n_classes;
  j["window_clips"] = c.window_clips;
  j["rf_direct"] = c.rf_direct;
  j["dropout_keep"] = c.dropout_keep;
  j["leaky_slope"] = c.leaky_slope;
  j["ln_eps"] = c.ln_eps;
  j["loss_mode"] = loss_mode_name(c.loss_mode);
  j["proximity_on"] = c.proximity_on;
  j["temporal_on"] = c.temporal_on;
  j["actor_actor_on"] = c.actor_actor_on;
  j["object_object_on"] = c.object_object_on;
  j["attention"] = attention_name(c.attention);
  j["adjacency"] = adjacency_name(c.adjacency);
  j["lr"] = c.lr;
  j["batch_windows"] = c.batch_windows;
  j["window_stride"] = c.window_stride;
  j["max_epochs"] = c.max_epochs;
  j["decay_patience"] = c.decay_patience;
  j["stop_patience"] = c.stop_patience;
  j["label_iou_thresh"] = c.label_iou_thresh;
  j["eval_score_thresh"] = c.eval_score_thresh;
  j["min_class_examples"] = c.min_class_examples;
  j["seed"] = c.seed;
  return j.dump();
}

StageConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: invalid json: ") + e.what());
  }
  StageConfig c;
  try {
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.actor_feat_width = j.at("actor_feat_width").get<int>();
    c.object_feat_width = j.at("object_feat_width").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.window_clips = j.at("window_clips").get<int>();
    c.rf_direct = j.at("rf_direct").get<int>();
    c.dropout_keep = j.at("dropout_keep").get<double>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.ln_eps = j.at("ln_eps").get<double>();
    std::string loss = j.at("loss_mode").get<std::string>();
    if (loss == "multi-label-sigmoid")
      c.loss_mode = LossMode::MultiLabelSigmoid;
    else if (loss == "single-label-softmax")
      c.loss_mode = LossMode::SingleLabelSoftmax;
    else
      throw FormatError("config: unknown loss_mode '" + loss + "'");
    c.proximity_on = j.at("proximity_on").get<bool>();
    c.temporal_on = j.at("temporal_on").get<bool>();
    c.actor_actor_on = j.at("actor_actor_on").get<bool>();
    c.object_object_on = j.at("object_object_on").get<bool>();
    std::string att = j.at("attention").get<std::string>();
    if (att == "graph")
      c.attention = AttentionKind::Graph;
    else if (att == "transformer")
      c.attention = AttentionKind::Transformer;
    else
      throw FormatError("config: unknown attention '" + att + "'");
    std::string adj = j.at("adjacency").get<std::string>();
    if (adj == "box-proximity")
      c.adjacency = AdjacencyKind::BoxProximity;
    else if (adj == "feature-distance")
      c.adjacency = AdjacencyKind::FeatureDistance;
    else
      throw FormatError("config: unknown adjacency '" + adj + "'");
    c.lr = j.at("lr").get<double>();
    c.batch_windows = j.at("batch_windows").get<int>();
    c.window_stride = j.at("window_stride").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.decay_patience = j.at("decay_patience").get<int>();
    c.stop_patience = j.at("stop_patience").get<int>();
    c.label_iou_thresh = j.at("label_iou_thresh").get<double>();
    c.eval_score_thresh = j.at("eval_score_thresh").get<double>();
    c.min_class_examples = j.at("min_class_examples").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: missing or mistyped field: ") + e.what());
  }
  return c;
}

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  double bound = std::sqrt(6.0 / double(rows + cols));
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

ParameterSet ParameterSet::init(const StageConfig& c, Rng& rng) {
  c.validate();
  ParameterSet p;
  p.attention = c.attention;
  int d_f = c.d_f();
  int d_h = c.d_h();
  p.input_proj_w = glorot(c.projected_width(), d_f, rng);
  p.input_proj_b = Matrix(1, d_f);
  p.layers.resize(std::size_t(c.n_layers));
  for (LayerParams& layer : p.layers) {
    layer.heads.resize(std::size_t(c.n_heads));
    for (HeadParams& head : layer.heads) {
      if (c.attention == AttentionKind::Graph) {
        head.w = glorot(d_f, d_h, rng);
        head.b = Matrix(1, d_h);
        head.attn_a = glorot(2 * d_h, 1, rng);
        head.attn_b = Matrix(1, 1);
      } else {
        head.wq = glorot(d_f, d_h, rng);
        head.bq = Matrix(1, d_h);
        head.wk = glorot(d_f, d_h, rng);
        head.bk = Matrix(1, d_h);
        head.wv = glorot(d_f, d_h, rng);
        head.bv = Matrix(1, d_h);
      }
    }
    layer.w_out = glorot(c.n_heads * d_h, d_f, rng);
    layer.b_out = Matrix(1, d_f);
    layer.ln_gain = Matrix::filled(1, d_f, 1.0);
    layer.ln_bias = Matrix(1, d_f);
  }
  p.classifier_w = glorot(d_f, c.n_classes, rng);
  p.classifier_b = Matrix(1, c.n_classes);
  return p;
}

template <typename Self, typename Fn>
static void for_each_block_impl(Self& p, const Fn& fn) {
  fn("input_proj.w", p.input_proj_w);
  fn("input_proj.b", p.input_proj_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    std::string lp = "layers[" + std::to_string(l) + "].";
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      auto& head = layer.heads[h];
      std::string hp = lp + "heads[" + std::to_string(h) + "].";
      if (p.attention == AttentionKind::Graph) {
        fn(hp + "w", head.w);
        fn(hp + "b", head.b);
        fn(hp + "attn_a", head.attn_a);
        fn(hp + "attn_b", head.attn_b);
      } else {
        fn(hp + "wq", head.wq);
        fn(hp + "bq", head.bq);
        fn(hp + "wk", head.wk);
        fn(hp + "bk", head.bk);
        fn(hp + "wv", head.wv);
        fn(hp + "bv", head.bv);
      }
    }
    fn(lp + "w_out", layer.w_out);
    fn(lp + "b_out", layer.b_out);
    fn(lp + "ln_gain", layer.ln_gain);
    fn(lp + "ln_bias", layer.ln_bias);
  }
  fn("classifier.w", p.classifier_w);
  fn("classifier.b", p.classifier_b);
}

void ParameterSet::for_each_block(const std::function<void(const std::string&, Matrix&)>& fn) {
  for_each_block_impl(*this, fn);
}

void ParameterSet::for_each_block(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  for_each_block_impl(*this, fn);
}

std::int64_t ParameterSet::n_coords() const {
  std::int64_t n = 0;
  for_each_block([&](const std::string&, const Matrix& m) { n += std::int64_t(m.size()); });
  return n;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> theta;
  theta.reserve(std::size_t(n_coords()));
  for_each_block([&](const std::string&, const Matrix& m) {
    theta.insert(theta.end(), m.data.begin(), m.data.end());
  });
  return theta;
}

void ParameterSet::unflatten(const std::vector<double>& theta) {
  if (std::int64_t(theta.size()) != n_coords())
    throw ShapeError("unflatten: " + std::to_string(theta.size()) + " values for " +
                     std::to_string(n_coords()) + " coordinates");
  std::size_t off = 0;
  for_each_block([&](const std::string&, Matrix& m) {
    std::copy(theta.begin() + long(off), theta.begin() + long(off + m.size()), m.data.begin());
    off += m.size();
  });
}

ParamIds insert_params(Tape& t, const ParameterSet& p) {
  ParamIds ids;
  ids.proj_w = t.leaf(p.input_proj_w);
  ids.proj_b = t.leaf(p.input_proj_b);
  for (const LayerParams& layer : p.layers) {
    LayerParamIds lids;
    for (const HeadParams& head : layer.heads) {
      HeadParamIds hids;
      if (p.attention == AttentionKind::Graph) {
        hids.w = t.leaf(head.w);
        hids.b = t.leaf(head.b);
        hids.attn_a = t.leaf(head.attn_a);
        hids.attn_b = t.leaf(head.attn_b);
      } else {
        hids.wq = t.leaf(head.wq);
        hids.bq = t.leaf(head.bq);
        hids.wk = t.leaf(head.wk);
        hids.bk = t.leaf(head.bk);
        hids.wv = t.leaf(head.wv);
        hids.bv = t.leaf(head.bv);
      }
      lids.heads.push_back(hids);
    }
    lids.w_out = t.leaf(layer.w_out);
    lids.b_out = t.leaf(layer.b_out);
    lids.ln_gain = t.leaf(layer.ln_gain);
    lids.ln_bias = t.leaf(layer.ln_bias);
    ids.layers.push_back(std::move(lids));
  }
  ids.cls_w = t.leaf(p.classifier_w);
  ids.cls_b = t.leaf(p.classifier_b);
  return ids;
}

std::vector<std::pair<std::string, const Matrix*>> collect_grads(const Tape& t,
                                                                 const ParamIds& ids) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  auto push = [&](const std::string& name, ValueId id) { out.emplace_back(name, &t.grad(id)); };
  push("input_proj.w", ids.proj_w);
  push("input_proj.b", ids.proj_b);
  for (std::size_t l = 0; l < ids.layers.size(); ++l) {
    const LayerParamIds& layer = ids.layers[l];
    std::string lp = "layers[" + std::to_string(l) + "].";
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const HeadParamIds& head = layer.heads[h];
      std::string hp = lp + "heads[" + std::to_string(h) + "].";
      if (head.w >= 0) {
        push(hp + "w", head.w);
        push(hp + "b", head.b);
        push(hp + "attn_a", head.attn_a);
        push(hp + "attn_b", head.attn_b);
      } else {
        push(hp + "wq", head.wq);
        push(hp + "bq", head.bq);
        push(hp + "wk", head.wk);
        push(hp + "bk", head.bk);
        push(hp + "wv", head.wv);
        push(hp + "bv", head.bv);
      }
    }
    push(lp + "w_out", layer.w_out);
    push(lp + "b_out", layer.b_out);
    push(lp + "ln_gain", layer.ln_gain);
    push(lp + "ln_bias", layer.ln_bias);
  }
  push("classifier.w", ids.cls_w);
  push("classifier.b", ids.cls_b);
  return out;
}

WindowGraph assemble_window(std::span<const ClipRecord> clips, const StageConfig& c) {
  WindowGraph g;
  int rf = c.temporal_on ? c.rf_direct : 1;
  TemporalAdjacency ta = multi_clip_adjacency(clips, rf);
  g.clip_offsets = ta.clip_offsets;
  g.tmask = std::move(ta.tmask);

  int actor_ext = c.actor_feat_width + 4;
  int object_ext = c.object_feat_width + 4;
  int node = 0;
  std::vector<std::vector<double>> actor_data, object_data;
  for (const ClipRecord& clip : clips) {
    for (const EntityDetection& e : clip.entities) {
      bool actor = e.kind == EntityKind::Actor;
      int want = actor ? c.actor_feat_width : c.object_feat_width;
      if (int(e.feature.size()) != want)
        throw FormatError("assemble_window: " + std::string(actor ? "actor" : "object") +
                          " feature width " + std::to_string(e.feature.size()) +
                          " does not match configured " + std::to_string(want));
      std::vector<double> ext = e.feature;
      ext.push_back(e.box.h());
      ext.push_back(e.box.w());
      ext.push_back(e.box.xc());
      ext.push_back(e.box.yc());
      g.kinds.push_back(e.kind);
      if (actor) {
        g.actor_rows.push_back(node);
        actor_data.push_back(std::move(ext));
        g.actor_labels.push_back(e.labels);
        g.actor_scores.push_back(e.score);
        g.actor_boxes.push_back(e.box);
        g.actor_keys.emplace_back(clip.video_id, clip.timestamp);
      } else {
        g.object_rows.push_back(node);
        object_data.push_back(std::move(ext));
      }
      ++node;
    }
  }

  g.actor_inputs = Matrix(int(actor_data.size()), actor_ext);
  for (int i = 0; i < g.actor_inputs.rows; ++i)
    for (int j = 0; j < actor_ext; ++j)
      g.actor_inputs.at(i, j) = actor_data[std::size_t(i)][std::size_t(j)];
  g.object_inputs = Matrix(int(object_data.size()), object_ext);
  for (int i = 0; i < g.object_inputs.rows; ++i)
    for (int j = 0; j < object_ext; ++j)
      g.object_inputs.at(i, j) = object_data[std::size_t(i)][std::size_t(j)];

  if (!c.proximity_on) {
    g.adjacency = g.tmask;
  } else if (c.adjacency == AdjacencyKind::FeatureDistance) {
    // distances over the raw extended inputs, zero-padded to a common width
    // so the adjacency stays independent of the learnable projection
    int wide = std::max(actor_ext, object_ext);
    Matrix padded(g.n_nodes(), wide);
    int a = 0, o = 0;
    for (int i = 0; i < g.n_nodes(); ++i) {
      if (g.kinds[std::size_t(i)] == EntityKind::Actor) {
        for (int j = 0; j < actor_ext; ++j) padded.at(i, j) = g.actor_inputs.at(a, j);
        ++a;
      } else {
        for (int j = 0; j < object_ext; ++j) padded.at(i, j) = g.object_inputs.at(o, j);
        ++o;
      }
    }
    g.adjacency = hadamard(feature_distance_adjacency(padded), g.tmask);
  } else {
    g.adjacency = std::move(ta.adjacency);
  }

  InteractionToggles toggles;
  toggles.actor_actor = c.actor_actor_on;
  toggles.object_object = c.object_object_on;
  g.imask = interaction_mask(g.kinds, toggles);
  g.attn_mask = hadamard(g.tmask, g.imask);
  return g;
}

WindowForward stage_window_forward(Tape& t, const WindowGraph& g, const ParamIds& ids,
                                   const StageConfig& c, bool training, Rng& rng) {
  ValueId actors = t.leaf(g.actor_inputs);
  ValueId objects = t.leaf(g.object_inputs);
  ValueId actor_feat =
      c.project_actors() ? t.linear(actors, ids.proj_w, ids.proj_b) : actors;
  ValueId object_feat =
      c.project_actors() ? objects : t.linear(objects, ids.proj_w, ids.proj_b);
  int n = g.n_nodes();
  ValueId x = t.add(t.scatter_rows(actor_feat, g.actor_rows, n),
                    t.scatter_rows(object_feat, g.object_rows, n));

  AttentionOptions o;
  o.kind = c.attention;
  o.leaky_slope = c.leaky_slope;
  o.dropout_keep = c.dropout_keep;
  o.training = training;
  o.ln_eps = c.ln_eps;
  StageResult sr = stage_forward(t, x, g.adjacency, g.attn_mask, ids.layers, o, rng);

  WindowForward fw;
  fw.features = sr.out;
  fw.attn_weights = std::move(sr.weights);
  fw.logits = t.linear(t.select_rows(sr.out, g.actor_rows), ids.cls_w, ids.cls_b);
  return fw;
}

ValueId stage_loss(Tape& t, ValueId logits, const std::vector<std::vector<int>>& actor_labels,
                   const StageConfig& c) {
  const Matrix& lm = t.value(logits);
  if (int(actor_labels.size()) != lm.rows)
    throw ShapeError("stage_loss: " + std::to_string(actor_labels.size()) + " label sets for " +
                     lm.shape_str());
  if (c.loss_mode == LossMode::MultiLabelSigmoid) {
    Matrix targets(lm.rows, lm.cols);
    for (int i = 0; i < lm.rows; ++i)
      for (int lab : actor_labels[std::size_t(i)]) {
        if (lab < 0 || lab >= lm.cols)
          throw std::out_of_range("stage_loss: label " + std::to_string(lab) +
                                  " out of range for " + std::to_string(lm.cols) + " classes");
        targets.at(i, lab) = 1.0;
      }
    return t.sigmoid_ce_mean(logits, std::move(targets));
  }
  std::vector<int> labels(std::size_t(lm.rows));
  for (int i = 0; i < lm.rows; ++i) {
    const auto& ls = actor_labels[std::size_t(i)];
    if (ls.size() != 1)
      throw FormatError("stage_loss: single-label mode needs exactly one label per actor, got " +
                        std::to_string(ls.size()));
    labels[std::size_t(i)] = ls[0];
  }
  return t.softmax_ce_mean(logits, std::move(labels));
}

std::int64_t count_params(const StageConfig& c) {
  c.validate();
  std::int64_t d_f = c.d_f();
  std::int64_t d_h = c.d_h();
  std::int64_t total = std::int64_t(c.projected_width()) * d_f + d_f;
  std::int64_t per_head = c.attention == AttentionKind::Graph
                              ? d_f * d_h + d_h + 2 * d_h + 1
                              : 3 * (d_f * d_h + d_h);
  std::int64_t per_layer =
      c.n_heads * per_head + (c.n_heads * d_h) * d_f + d_f + 2 * d_f;
  total += c.n_layers * per_layer;
  total += d_f * c.n_classes + c.n_classes;
  return total;
}

FlopBreakdown count_flops_breakdown(const StageConfig& c, int n_actors, int n_objects) {
  if (n_actors < 0 || n_objects < 0)
    throw std::invalid_argument("count_flops: entity counts must be >= 0");
  c.validate();
  std::int64_t n = n_actors + n_objects;
  std::int64_t d_f = c.d_f();
  std::int64_t d_h = c.d_h();
  std::int64_t n_proj = c.project_actors() ? n_actors : n_objects;
  FlopBreakdown fb;
  fb.projection = n_proj * std::int64_t(c.projected_width()) * d_f;
  for (int l = 0; l < c.n_layers; ++l) {
    if (c.attention == AttentionKind::Graph) {
      fb.head_proj += c.n_heads * n * d_f * d_h;
      fb.attn_scores += c.n_heads * n * n * 2 * d_h;
    } else {
      fb.head_proj += c.n_heads * 3 * n * d_f * d_h;
      fb.attn_scores += c.n_heads * n * n * d_h;
    }
    fb.weighted_sum += c.n_heads * n * n * d_h;
    fb.out_proj += n * (c.n_heads * d_h) * d_f;
  }
  fb.classifier = std::int64_t(n_actors) * d_f * c.n_classes;
  return fb;
}

std::int64_t count_flops(const StageConfig& c, int n_actors, int n_objects) {
  return count_flops_breakdown(c, n_actors, n_objects).total();
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'T', 'A', 'G', 'E', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const StageConfig& c, const ParameterSet& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("checkpoint: cannot write " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  std::string cfg = config_to_json(c);
  write_pod<std::uint64_t>(os, cfg.size());
  os.write(cfg.data(), std::streamsize(cfg.size()));
  std::uint32_t n_blocks = 0;
  p.for_each_block([&](const std::string&, const Matrix&) { ++n_blocks; });
  write_pod<std::uint32_t>(os, n_blocks);
  p.for_each_block([&](const std::string& name, const Matrix& m) {
    write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_pod<std::uint32_t>(os, std::uint32_t(m.rows));
    write_pod<std::uint32_t>(os, std::uint32_t(m.cols));
    os.write(reinterpret_cast<const char*>(m.data.data()),
             std::streamsize(m.data.size() * sizeof(double)));
  });
  if (!os) throw FileError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  auto cfg_len = read_pod<std::uint64_t>(is, "config length");
  std::string cfg(cfg_len, '\0');
  is.read(cfg.data(), std::streamsize(cfg_len));
  if (!is) throw FormatError("checkpoint: truncated config in " + path);

  Checkpoint ck;
  ck.config = config_from_json(cfg);
  Rng rng(0);
  ck.params = ParameterSet::init(ck.config, rng);

  auto n_blocks = read_pod<std::uint32_t>(is, "block count");
  std::uint32_t expected = 0;
  ck.params.for_each_block([&](const std::string&, const Matrix&) { ++expected; });
  if (n_blocks != expected)
    throw FormatError("checkpoint: " + std::to_string(n_blocks) + " blocks, config implies " +
                      std::to_string(expected));
  ck.params.for_each_block([&](const std::string& name, Matrix& m) {
    auto name_len = read_pod<std::uint32_t>(is, "block name length");
    std::string got(name_len, '\0');
    is.read(got.data(), std::streamsize(name_len));
    if (!is) throw FormatError("checkpoint: truncated block name");
    if (got != name)
      throw FormatError("checkpoint: block '" + got + "' where '" + name + "' expected");
    auto rows = read_pod<std::uint32_t>(is, "rows");
    auto cols = read_pod<std::uint32_t>(is, "cols");
    if (int(rows) != m.rows || int(cols) != m.cols)
      throw FormatError("checkpoint: block '" + name + "' is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", config implies " + m.shape_str());
    is.read(reinterpret_cast<char*>(m.data.data()),
            std::streamsize(m.data.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated data in block '" + name + "'");
  });
  return ck;
}

}  // namespace stage
