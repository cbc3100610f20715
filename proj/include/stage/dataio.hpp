#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stage/data.hpp"

namespace stage {

/// One JSON object per line:
///   {"video_id":"v","timestamp":0,"entities":[{"kind":"actor","box":[...],
///    "score":1,"feature":[...],"labels":[...]}, ...]}
/// Reals are written with 9 significant digits; writing what read_clips
/// returned reproduces the file byte for byte. Records come back grouped by
/// video (first-appearance order) and sorted by timestamp.
Dataset read_clips(const std::string& path);
void write_clips(const std::string& path, const Dataset& data);
std::string clip_to_line(const ClipRecord& clip);

/// double -> canonical 9-significant-digit decimal -> double
double round_real(double v);
std::string format_real(double v);

struct SynthRule {
  enum class Kind { SpatialProximity, TemporalAdjacentObject, ActorActor };
  int class_id = 0;
  Kind kind = Kind::SpatialProximity;
  int object_kind = 0;  // unused by actor-actor rules
  double radius = 0.2;
};

/// Generator of spatio-temporal interaction datasets. Entities follow smooth
/// random walks; features embed the entity kind plus Gaussian noise, never
/// the label. Rule semantics, all decided from recorded geometry:
///   spatial-proximity(k, r):        some kind-k object in clip t lies within
///                                   r of the actor's center
///   temporal-adjacent-object(k, r): some kind-k object recorded in clip t-1
///                                   or t+1 lies within r of the actor's
///                                   center at t
///   actor-actor(r):                 another actor in clip t lies within r
/// Objects of a temporal rule's kind shadow one actor each (offset at most
/// 0.4*r, actor steps at most 0.02 per clip) and are recorded per clip with
/// probability `visibility`, so the temporal label is exactly the adjacent
/// visibility draw — invisible in clip t itself.
struct SynthSpec {
  std::uint64_t seed = 1;
  int videos_train = 16;
  int videos_val = 8;
  int clips_per_video = 12;
  int actors_min = 1, actors_max = 2;
  int free_objects_min = 3, free_objects_max = 5;
  int object_kinds = 3;
  int feature_width = 12;
  double noise_level = 0.05;
  double visibility = 0.5;
  std::vector<SynthRule> rules;

  int n_classes() const;
  void validate() const;
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

struct SynthResult {
  Dataset train;
  Dataset val;
  std::vector<std::int64_t> positives_per_class;  // train + val
  std::vector<std::string> warnings;
};

/// Deterministic in the spec (seed included): equal specs give byte-identical
/// datasets.
SynthResult synth_generate(const SynthSpec& spec);

/// The kind embeddings are drawn before anything else, so they can be
/// re-derived from the spec without regenerating the dataset.
struct SynthEmbeddings {
  std::vector<double> actor;
  std::vector<std::vector<double>> objects;  // per kind
};
SynthEmbeddings synth_embeddings(const SynthSpec& spec);

/// Reference rule evaluator: recomputes every actor's label set from the clip
/// records (object kinds recovered by nearest kind embedding). The generator
/// must agree with it entry for entry. Returns label sets per clip, in actor
/// order.
std::vector<std::vector<std::vector<int>>> rule_labels(const Dataset& data,
                                                       const SynthSpec& spec);

}  // namespace stage
