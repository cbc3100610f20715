#include "stage/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stage/errors.hpp"
#include "stage/rng.hpp"

namespace stage {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double round_real(double v) { return std::strtod(format_real(v).c_str(), nullptr); }

namespace {

void validate_box(const BoxGeometry& b, const std::string& where) {
  if (!(b.x1 >= 0.0 && b.x1 < b.x2 && b.x2 <= 1.0 && b.y1 >= 0.0 && b.y1 < b.y2 && b.y2 <= 1.0))
    throw FormatError(where + ": invalid box [" + format_real(b.x1) + "," + format_real(b.y1) +
                      "," + format_real(b.x2) + "," + format_real(b.y2) + "]");
}

EntityDetection parse_entity(const nlohmann::json& j, const std::string& where) {
  EntityDetection e;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "actor")
    e.kind = EntityKind::Actor;
  else if (kind == "object")
    e.kind = EntityKind::Object;
  else
    throw FormatError(where + ": unknown kind '" + kind + "'");
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw FormatError(where + ": box must have 4 values");
  e.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
           box[3].get<double>()};
  validate_box(e.box, where);
  e.score = j.at("score").get<double>();
  if (!(e.score >= 0.0 && e.score <= 1.0))
    throw FormatError(where + ": score " + format_real(e.score) + " outside [0,1]");
  e.feature = j.at("feature").get<std::vector<double>>();
  if (e.feature.empty()) throw FormatError(where + ": empty feature vector");
  if (j.contains("labels")) {
    if (e.kind == EntityKind::Object) throw FormatError(where + ": labels on an object");
    e.labels = j.at("labels").get<std::vector<int>>();
    for (int lab : e.labels)
      if (lab < 0) throw FormatError(where + ": negative label " + std::to_string(lab));
  }
  return e;
}

}  // namespace

Dataset read_clips(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FileError("read_clips: cannot open " + path);

  std::map<std::string, std::vector<ClipRecord>> by_video;
  std::vector<std::string> video_order;
  int actor_width = -1, object_width = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": malformed record: " + e.what());
    }
    ClipRecord clip;
    try {
      clip.video_id = j.at("video_id").get<std::string>();
      clip.timestamp = j.at("timestamp").get<int>();
      for (const auto& je : j.at("entities")) clip.entities.push_back(parse_entity(je, where));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": missing or mistyped field: " + e.what());
    }
    for (const EntityDetection& e : clip.entities) {
      int& width = e.kind == EntityKind::Actor ? actor_width : object_width;
      int got = int(e.feature.size());
      if (width < 0)
        width = got;
      else if (width != got)
        throw FormatError(where + ": " +
                          (e.kind == EntityKind::Actor ? std::string("actor") : "object") +
                          " feature width " + std::to_string(got) + " differs from " +
                          std::to_string(width) + " seen earlier");
    }
    if (by_video.find(clip.video_id) == by_video.end()) video_order.push_back(clip.video_id);
    by_video[clip.video_id].push_back(std::move(clip));
  }

  Dataset out;
  for (const std::string& vid : video_order) {
    auto& clips = by_video[vid];
    std::stable_sort(clips.begin(), clips.end(),
                     [](const ClipRecord& a, const ClipRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
    for (std::size_t i = 1; i < clips.size(); ++i)
      if (clips[i].timestamp == clips[i - 1].timestamp)
        throw FormatError(path + ": duplicate timestamp " + std::to_string(clips[i].timestamp) +
                          " in video " + vid);
    for (ClipRecord& c : clips) out.push_back(std::move(c));
  }
  return out;
}

std::string clip_to_line(const ClipRecord& clip) {
  std::ostringstream os;
  os << "{\"video_id\":\"" << clip.video_id << "\",\"timestamp\":" << clip.timestamp
     << ",\"entities\":[";
  for (std::size_t i = 0; i < clip.entities.size(); ++i) {
    const EntityDetection& e = clip.entities[i];
    if (i) os << ",";
    os << "{\"kind\":\"" << (e.kind == EntityKind::Actor ? "actor" : "object") << "\",\"box\":["
       << format_real(e.box.x1) << "," << format_real(e.box.y1) << "," << format_real(e.box.x2)
       << "," << format_real(e.box.y2) << "],\"score\":" << format_real(e.score)
       << ",\"feature\":[";
    for (std::size_t k = 0; k < e.feature.size(); ++k) {
      if (k) os << ",";
      os << format_real(e.feature[k]);
    }
    os << "]";
    if (e.kind == EntityKind::Actor) {
      os << ",\"labels\":[";
      for (std::size_t k = 0; k < e.labels.size(); ++k) {
        if (k) os << ",";
        os << e.labels[k];
      }
      os << "]";
    }
    os << "}";
  }
  os << "]}";
  return os.str();
}

void write_clips(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw FileError("write_clips: cannot write " + path);
  for (const ClipRecord& clip : data) os << clip_to_line(clip) << "\n";
  if (!os) throw FileError("write_clips: write failed for " + path);
}

int SynthSpec::n_classes() const {
  int n = 0;
  for (const SynthRule& r : rules) n = std::max(n, r.class_id + 1);
  return n;
}

void SynthSpec::validate() const {
  if (videos_train < 1 || videos_val < 1)
    throw std::invalid_argument("synth: need at least one video per split");
  if (clips_per_video < 1) throw std::invalid_argument("synth: clips_per_video must be >= 1");
  if (actors_min < 1 || actors_max < actors_min)
    throw std::invalid_argument("synth: bad actor count range");
  if (free_objects_min < 0 || free_objects_max < free_objects_min)
    throw std::invalid_argument("synth: bad free object count range");
  if (object_kinds < 1) throw std::invalid_argument("synth: object_kinds must be >= 1");
  if (feature_width < 1) throw std::invalid_argument("synth: feature_width must be >= 1");
  if (noise_level < 0.0) throw std::invalid_argument("synth: noise_level must be >= 0");
  if (!(visibility > 0.0 && visibility <= 1.0))
    throw std::invalid_argument("synth: visibility must be in (0,1]");
  if (rules.empty()) throw std::invalid_argument("synth: at least one rule");
  std::set<int> temporal_kinds;
  for (const SynthRule& r : rules) {
    if (r.class_id < 0) throw std::invalid_argument("synth: negative class id");
    if (!(r.radius > 0.0 && r.radius <= 1.0))
      throw std::invalid_argument("synth: rule radius must be in (0,1]");
    if (r.kind != SynthRule::Kind::ActorActor &&
        (r.object_kind < 0 || r.object_kind >= object_kinds))
      throw std::invalid_argument("synth: rule references object kind " +
                                  std::to_string(r.object_kind) + " of " +
                                  std::to_string(object_kinds));
    if (r.kind == SynthRule::Kind::TemporalAdjacentObject) temporal_kinds.insert(r.object_kind);
  }
  if (free_objects_max > 0 && int(temporal_kinds.size()) >= object_kinds)
    throw std::invalid_argument("synth: free objects need at least one kind not claimed by a "
                                "temporal rule");
}

namespace {

SynthRule::Kind rule_kind_from_string(const std::string& s) {
  if (s == "spatial-proximity") return SynthRule::Kind::SpatialProximity;
  if (s == "temporal-adjacent-object") return SynthRule::Kind::TemporalAdjacentObject;
  if (s == "actor-actor") return SynthRule::Kind::ActorActor;
  throw FormatError("synth spec: unknown rule kind '" + s + "'");
}

const char* rule_kind_name(SynthRule::Kind k) {
  switch (k) {
    case SynthRule::Kind::SpatialProximity: return "spatial-proximity";
    case SynthRule::Kind::TemporalAdjacentObject: return "temporal-adjacent-object";
    case SynthRule::Kind::ActorActor: return "actor-actor";
  }
  return "?";
}

}  // namespace

SynthSpec synth_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth spec: invalid json: ") + e.what());
  }
  SynthSpec s;
  try {
    s.seed = j.value("seed", std::uint64_t(1));
    s.videos_train = j.value("videos_train", s.videos_train);
    s.videos_val = j.value("videos_val", s.videos_val);
    s.clips_per_video = j.value("clips_per_video", s.clips_per_video);
    if (j.contains("actors_per_clip")) {
      s.actors_min = j["actors_per_clip"].at(0).get<int>();
      s.actors_max = j["actors_per_clip"].at(1).get<int>();
    }
    if (j.contains("free_objects_per_clip")) {
      s.free_objects_min = j["free_objects_per_clip"].at(0).get<int>();
      s.free_objects_max = j["free_objects_per_clip"].at(1).get<int>();
    }
    s.object_kinds = j.value("object_kinds", s.object_kinds);
    s.feature_width = j.value("feature_width", s.feature_width);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.visibility = j.value("visibility", s.visibility);
    for (const auto& jr : j.at("rules")) {
      SynthRule r;
      r.class_id = jr.at("class_id").get<int>();
      r.kind = rule_kind_from_string(jr.at("kind").get<std::string>());
      r.object_kind = jr.value("object_kind", 0);
      r.radius = jr.at("radius").get<double>();
      s.rules.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth spec: missing or mistyped field: ") + e.what());
  }
  s.validate();
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["videos_train"] = s.videos_train;
  j["videos_val"] = s.videos_val;
  j["clips_per_video"] = s.clips_per_video;
  j["actors_per_clip"] = {s.actors_min, s.actors_max};
  j["free_objects_per_clip"] = {s.free_objects_min, s.free_objects_max};
  j["object_kinds"] = s.object_kinds;
  j["feature_width"] = s.feature_width;
  j["noise_level"] = s.noise_level;
  j["visibility"] = s.visibility;
  j["rules"] = nlohmann::ordered_json::array();
  for (const SynthRule& r : s.rules) {
    nlohmann::ordered_json jr;
    jr["class_id"] = r.class_id;
    jr["kind"] = rule_kind_name(r.kind);
    jr["object_kind"] = r.object_kind;
    jr["radius"] = r.radius;
    j["rules"].push_back(jr);
  }
  return j.dump(2);
}

namespace {

constexpr double kActorStepLimit = 0.02;
constexpr double kTetherFraction = 0.4;

struct WalkState {
  double x = 0.5, y = 0.5;
  double vx = 0.0, vy = 0.0;
  double bw = 0.1, bh = 0.1;
};

BoxGeometry rounded_box(const WalkState& w) {
  double margin_x = w.bw / 2, margin_y = w.bh / 2;
  double cx = std::clamp(w.x, margin_x, 1.0 - margin_x);
  double cy = std::clamp(w.y, margin_y, 1.0 - margin_y);
  BoxGeometry b;
  b.x1 = round_real(cx - margin_x);
  b.y1 = round_real(cy - margin_y);
  b.x2 = round_real(cx + margin_x);
  b.y2 = round_real(cy + margin_y);
  return b;
}

void advance_walk(WalkState& w, Rng& rng, double step_limit) {
  w.vx = 0.8 * w.vx + 0.35 * step_limit * rng.normal();
  w.vy = 0.8 * w.vy + 0.35 * step_limit * rng.normal();
  double speed = std::sqrt(w.vx * w.vx + w.vy * w.vy);
  if (speed > step_limit) {
    w.vx *= step_limit / speed;
    w.vy *= step_limit / speed;
  }
  w.x += w.vx;
  w.y += w.vy;
  if (w.x < 0.08 || w.x > 0.92) w.vx = -w.vx;
  if (w.y < 0.08 || w.y > 0.92) w.vy = -w.vy;
  w.x = std::clamp(w.x, 0.08, 0.92);
  w.y = std::clamp(w.y, 0.08, 0.92);
}

std::vector<double> make_feature(const std::vector<double>& embedding, double noise, Rng& rng) {
  std::vector<double> f(embedding.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = round_real(embedding[i] + noise * rng.normal());
  return f;
}

double center_dist(const BoxGeometry& a, const BoxGeometry& b) {
  double dx = a.xc() - b.xc();
  double dy = a.yc() - b.yc();
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  int n_classes = spec.n_classes();

  std::vector<double> actor_emb(std::size_t(spec.feature_width));
  for (double& v : actor_emb) v = rng.uniform(-1.0, 1.0);
  std::vector<std::vector<double>> object_emb(std::size_t(spec.object_kinds));
  for (auto& emb : object_emb) {
    emb.resize(std::size_t(spec.feature_width));
    for (double& v : emb) v = rng.uniform(-1.0, 1.0);
  }

  std::vector<int> temporal_kinds;
  std::vector<const SynthRule*> temporal_rules;
  for (const SynthRule& r : spec.rules)
    if (r.kind == SynthRule::Kind::TemporalAdjacentObject) {
      temporal_kinds.push_back(r.object_kind);
      temporal_rules.push_back(&r);
    }
  std::vector<int> free_kinds;
  for (int k = 0; k < spec.object_kinds; ++k)
    if (std::find(temporal_kinds.begin(), temporal_kinds.end(), k) == temporal_kinds.end())
      free_kinds.push_back(k);

  SynthResult result;
  result.positives_per_class.assign(std::size_t(std::max(n_classes, 1)), 0);

  for (int split = 0; split < 2; ++split) {
    Dataset& out = split == 0 ? result.train : result.val;
    int n_videos = split == 0 ? spec.videos_train : spec.videos_val;
    const char* prefix = split == 0 ? "train" : "val";
    for (int v = 0; v < n_videos; ++v) {
      char vid[32];
      std::snprintf(vid, sizeof vid, "%s_%03d", prefix, v);

      int n_actors = rng.uniform_int(spec.actors_min, spec.actors_max);
      int n_free = rng.uniform_int(spec.free_objects_min, spec.free_objects_max);

      std::vector<WalkState> actors(static_cast<std::size_t>(n_actors));
      for (WalkState& a : actors) {
        a.x = rng.uniform(0.15, 0.85);
        a.y = rng.uniform(0.15, 0.85);
        a.bw = rng.uniform(0.06, 0.12);
        a.bh = rng.uniform(0.06, 0.12);
      }
      // one shadow object per (actor, temporal rule); stays within
      // kTetherFraction * radius of its actor so adjacent-clip visibility
      // alone decides the rule
      struct Shadow {
        int actor = 0;
        const SynthRule* rule = nullptr;
        double ox = 0.0, oy = 0.0;
        double bw = 0.08, bh = 0.08;
      };
      std::vector<Shadow> shadows;
      for (int a = 0; a < n_actors; ++a)
        for (const SynthRule* r : temporal_rules) {
          Shadow s;
          s.actor = a;
          s.rule = r;
          double lim = kTetherFraction * r->radius;
          s.ox = rng.uniform(-lim, lim) * 0.7;
          s.oy = rng.uniform(-lim, lim) * 0.7;
          s.bw = rng.uniform(0.05, 0.09);
          s.bh = rng.uniform(0.05, 0.09);
          shadows.push_back(s);
        }
      std::vector<WalkState> free_objects(static_cast<std::size_t>(n_free));
      std::vector<int> free_kind(static_cast<std::size_t>(n_free), 0);
      for (int f = 0; f < n_free; ++f) {
        free_objects[std::size_t(f)].x = rng.uniform(0.1, 0.9);
        free_objects[std::size_t(f)].y = rng.uniform(0.1, 0.9);
        free_objects[std::size_t(f)].bw = rng.uniform(0.05, 0.1);
        free_objects[std::size_t(f)].bh = rng.uniform(0.05, 0.1);
        free_kind[std::size_t(f)] = free_kinds[std::size_t(rng.uniform_int(0, int(free_kinds.size()) - 1))];
      }

      // per clip: recorded boxes + kinds; kind -1 marks an actor
      std::vector<ClipRecord> clips(std::size_t(spec.clips_per_video));
      std::vector<std::vector<int>> entity_kind(std::size_t(spec.clips_per_video));
      for (int t = 0; t < spec.clips_per_video; ++t) {
        ClipRecord& clip = clips[std::size_t(t)];
        clip.video_id = vid;
        clip.timestamp = t;
        if (t > 0) {
          for (WalkState& a : actors) advance_walk(a, rng, kActorStepLimit);
          for (WalkState& f : free_objects) advance_walk(f, rng, 0.06);
        }
        for (int a = 0; a < n_actors; ++a) {
          EntityDetection e;
          e.kind = EntityKind::Actor;
          e.box = rounded_box(actors[std::size_t(a)]);
          e.score = 1.0;
          e.feature = make_feature(actor_emb, spec.noise_level, rng);
          clip.entities.push_back(std::move(e));
          entity_kind[std::size_t(t)].push_back(-1);
        }
        for (Shadow& s : shadows) {
          double lim = kTetherFraction * s.rule->radius;
          s.ox = std::clamp(s.ox + 0.015 * rng.normal(), -lim * 0.7, lim * 0.7);
          s.oy = std::clamp(s.oy + 0.015 * rng.normal(), -lim * 0.7, lim * 0.7);
          bool visible = rng.uniform01() < spec.visibility;
          if (!visible) continue;
          WalkState w = actors[std::size_t(s.actor)];
          w.x += s.ox;
          w.y += s.oy;
          w.bw = s.bw;
          w.bh = s.bh;
          EntityDetection e;
          e.kind = EntityKind::Object;
          e.box = rounded_box(w);
          e.score = 1.0;
          e.feature = make_feature(object_emb[std::size_t(s.rule->object_kind)],
                                   spec.noise_level, rng);
          clip.entities.push_back(std::move(e));
          entity_kind[std::size_t(t)].push_back(s.rule->object_kind);
        }
        for (int f = 0; f < n_free; ++f) {
          EntityDetection e;
          e.kind = EntityKind::Object;
          e.box = rounded_box(free_objects[std::size_t(f)]);
          e.score = 1.0;
          e.feature = make_feature(object_emb[std::size_t(free_kind[std::size_t(f)])],
                                   spec.noise_level, rng);
          clip.entities.push_back(std::move(e));
          entity_kind[std::size_t(t)].push_back(free_kind[std::size_t(f)]);
        }
      }

      // labels from the recorded (rounded) geometry
      for (int t = 0; t < spec.clips_per_video; ++t) {
        ClipRecord& clip = clips[std::size_t(t)];
        for (int a = 0; a < n_actors; ++a) {
          EntityDetection& actor = clip.entities[std::size_t(a)];
          for (const SynthRule& r : spec.rules) {
            bool fired = false;
            switch (r.kind) {
              case SynthRule::Kind::SpatialProximity: {
                for (std::size_t e = 0; e < clip.entities.size() && !fired; ++e)
                  fired = entity_kind[std::size_t(t)][e] == r.object_kind &&
                          center_dist(actor.box, clip.entities[e].box) <= r.radius;
                break;
              }
              case SynthRule::Kind::TemporalAdjacentObject: {
                for (int dt : {-1, 1}) {
                  int u = t + dt;
                  if (u < 0 || u >= spec.clips_per_video || fired) continue;
                  const ClipRecord& other = clips[std::size_t(u)];
                  for (std::size_t e = 0; e < other.entities.size() && !fired; ++e)
                    fired = entity_kind[std::size_t(u)][e] == r.object_kind &&
                            center_dist(actor.box, other.entities[e].box) <= r.radius;
                }
                break;
              }
              case SynthRule::Kind::ActorActor: {
                for (int b = 0; b < n_actors && !fired; ++b)
                  fired = b != a &&
                          center_dist(actor.box, clip.entities[std::size_t(b)].box) <= r.radius;
                break;
              }
            }
            if (fired) {
              actor.labels.push_back(r.class_id);
              ++result.positives_per_class[std::size_t(r.class_id)];
            }
          }
          std::sort(actor.labels.begin(), actor.labels.end());
          actor.labels.erase(std::unique(actor.labels.begin(), actor.labels.end()),
                             actor.labels.end());
        }
      }
      for (ClipRecord& clip : clips) out.push_back(std::move(clip));
    }
  }

  for (const SynthRule& r : spec.rules)
    if (result.positives_per_class[std::size_t(r.class_id)] == 0)
      result.warnings.push_back("rule for class " + std::to_string(r.class_id) + " (" +
                                rule_kind_name(r.kind) + ", radius " + format_real(r.radius) +
                                ") produced zero positives");
  return result;
}

SynthEmbeddings synth_embeddings(const SynthSpec& spec) {
  // the generator draws these first, so they are recoverable from the seed
  Rng rng(spec.seed);
  SynthEmbeddings emb;
  emb.actor.resize(std::size_t(spec.feature_width));
  for (double& v : emb.actor) v = rng.uniform(-1.0, 1.0);
  emb.objects.resize(std::size_t(spec.object_kinds));
  for (auto& e : emb.objects) {
    e.resize(std::size_t(spec.feature_width));
    for (double& v : e) v = rng.uniform(-1.0, 1.0);
  }
  return emb;
}

namespace {

int nearest_object_kind(const std::vector<double>& feature, const SynthEmbeddings& emb) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < emb.objects.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < feature.size(); ++i) {
      double d = feature[i] - emb.objects[k][i];
      acc += d * d;
    }
    if (acc < best_d) {
      best_d = acc;
      best = int(k);
    }
  }
  return best;
}

}  // namespace

std::vector<std::vector<std::vector<int>>> rule_labels(const Dataset& data,
                                                       const SynthSpec& spec) {
  SynthEmbeddings emb = synth_embeddings(spec);
  std::vector<std::vector<std::vector<int>>> out(data.size());

  for (std::size_t ci = 0; ci < data.size(); ++ci) {
    const ClipRecord& clip = data[ci];
    const ClipRecord* prev =
        ci > 0 && data[ci - 1].video_id == clip.video_id ? &data[ci - 1] : nullptr;
    const ClipRecord* next = ci + 1 < data.size() && data[ci + 1].video_id == clip.video_id
                                 ? &data[ci + 1]
                                 : nullptr;
    if (prev && prev->timestamp + 1 != clip.timestamp) prev = nullptr;
    if (next && clip.timestamp + 1 != next->timestamp) next = nullptr;

    auto kinded_within = [&](const ClipRecord* where, const BoxGeometry& anchor, int kind,
                             double radius) {
      if (!where) return false;
      for (const EntityDetection& e : where->entities) {
        if (e.kind != EntityKind::Object) continue;
        if (nearest_object_kind(e.feature, emb) != kind) continue;
        if (center_dist(anchor, e.box) <= radius) return true;
      }
      return false;
    };

    for (const EntityDetection& actor : clip.entities) {
      if (actor.kind != EntityKind::Actor) continue;
      std::vector<int> labels;
      for (const SynthRule& r : spec.rules) {
        bool fired = false;
        switch (r.kind) {
          case SynthRule::Kind::SpatialProximity:
            fired = kinded_within(&clip, actor.box, r.object_kind, r.radius);
            break;
          case SynthRule::Kind::TemporalAdjacentObject:
            fired = kinded_within(prev, actor.box, r.object_kind, r.radius) ||
                    kinded_within(next, actor.box, r.object_kind, r.radius);
            break;
          case SynthRule::Kind::ActorActor:
            for (const EntityDetection& other : clip.entities)
              if (&other != &actor && other.kind == EntityKind::Actor &&
                  center_dist(actor.box, other.box) <= r.radius) {
                fired = true;
                break;
              }
            break;
        }
        if (fired) labels.push_back(r.class_id);
      }
      std::sort(labels.begin(), labels.end());
      labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
      out[ci].push_back(std::move(labels));
    }
  }
  return out;
}

}  // namespace stage
