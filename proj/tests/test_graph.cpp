#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "stage/errors.hpp"
#include "stage/graph.hpp"
#include "stage/rng.hpp"

using namespace stage;

namespace {

BoxGeometry box_at(double xc, double yc, double size = 0.1) {
  return {xc - size / 2, yc - size / 2, xc + size / 2, yc + size / 2};
}

ClipRecord clip_with_boxes(const std::string& vid, int t,
                           const std::vector<BoxGeometry>& boxes) {
  ClipRecord c;
  c.video_id = vid;
  c.timestamp = t;
  for (const BoxGeometry& b : boxes) {
    EntityDetection e;
    e.kind = EntityKind::Actor;
    e.box = b;
    e.feature = {0.0};
    c.entities.push_back(e);
  }
  return c;
}

}  // namespace

TEST_CASE("proximity: coincident centers give weight 1") {
  Matrix a = proximity_adjacency({box_at(0.4, 0.4, 0.1), box_at(0.4, 0.4, 0.3)});
  CHECK(a.at(0, 1) == 1.0);
  CHECK(a.at(1, 0) == 1.0);
  CHECK(a.at(0, 0) == 1.0);
}

TEST_CASE("proximity: 3-4-5 separation gives exp(-0.5)") {
  Matrix a = proximity_adjacency({box_at(0.1, 0.1), box_at(0.4, 0.5)});
  CHECK(a.at(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("proximity: symmetric with unit diagonal on random boxes") {
  Rng rng(2);
  std::vector<BoxGeometry> boxes;
  for (int i = 0; i < 9; ++i)
    boxes.push_back(box_at(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.08));
  Matrix a = proximity_adjacency(boxes);
  for (int i = 0; i < a.rows; ++i) {
    CHECK(a.at(i, i) == 1.0);
    for (int j = 0; j < a.cols; ++j) {
      CHECK(a.at(i, j) == a.at(j, i));
      CHECK(a.at(i, j) > 0.0);
      CHECK(a.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("feature distance: inverse Euclidean distance with capped diagonal") {
  Matrix h = Matrix::from_rows({{0, 0}, {3, 4}});
  Matrix a = feature_distance_adjacency(h);
  CHECK(a.at(0, 1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(a.at(1, 0) == a.at(0, 1));
  CHECK(a.at(0, 0) == kFeatureDistanceCap);

  Matrix same = Matrix::from_rows({{1, 1}, {1, 1}});
  Matrix b = feature_distance_adjacency(same);
  CHECK(b.at(0, 1) == kFeatureDistanceCap);
}

TEST_CASE("multi-clip adjacency: zero blocks only beyond the direct field") {
  std::vector<ClipRecord> clips = {
      clip_with_boxes("v", 0, {box_at(0.2, 0.2), box_at(0.8, 0.8)}),
      clip_with_boxes("v", 1, {box_at(0.5, 0.5)}),
      clip_with_boxes("v", 2, {box_at(0.3, 0.3), box_at(0.7, 0.7)}),
  };
  TemporalAdjacency ta = multi_clip_adjacency({clips.data(), clips.size()}, 3);
  CHECK(ta.adjacency.rows == 5);
  CHECK(ta.clip_offsets == std::vector<int>({0, 2, 3, 5}));
  // rows 0-1 are clip 0, row 2 is clip 1, rows 3-4 are clip 2
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      bool far = (i <= 1 && j >= 3) || (i >= 3 && j <= 1);
      if (far) {
        CHECK(ta.adjacency.at(i, j) == 0.0);
        CHECK(ta.tmask.at(i, j) == 0.0);
      } else {
        CHECK(ta.adjacency.at(i, j) > 0.0);
        CHECK(ta.tmask.at(i, j) == 1.0);
      }
    }
}

TEST_CASE("multi-clip adjacency: rf 1 is block diagonal") {
  std::vector<ClipRecord> clips = {
      clip_with_boxes("v", 5, {box_at(0.2, 0.2), box_at(0.4, 0.4)}),
      clip_with_boxes("v", 6, {box_at(0.6, 0.6)}),
  };
  TemporalAdjacency ta = multi_clip_adjacency({clips.data(), clips.size()}, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      bool same_clip = (i <= 1) == (j <= 1);
      CHECK((ta.tmask.at(i, j) != 0.0) == same_clip);
    }
}

TEST_CASE("multi-clip adjacency: cross-clip value follows the proximity rule") {
  std::vector<ClipRecord> clips = {
      clip_with_boxes("v", 0, {box_at(0.2, 0.3)}),
      clip_with_boxes("v", 1, {box_at(0.5, 0.7)}),  // distance 0.5
  };
  TemporalAdjacency ta = multi_clip_adjacency({clips.data(), clips.size()}, 3);
  CHECK(ta.adjacency.at(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("multi-clip adjacency restricted to one clip equals the single-clip rule") {
  Rng rng(9);
  std::vector<BoxGeometry> boxes;
  for (int i = 0; i < 5; ++i)
    boxes.push_back(box_at(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.1));
  std::vector<ClipRecord> clips = {clip_with_boxes("v", 0, boxes)};
  TemporalAdjacency ta = multi_clip_adjacency({clips.data(), clips.size()}, 3);
  CHECK(bitwise_equal(ta.adjacency, proximity_adjacency(boxes)));
}

TEST_CASE("multi-clip adjacency: timestamp gap is an error naming the timestamps") {
  std::vector<ClipRecord> clips = {
      clip_with_boxes("vid7", 3, {box_at(0.5, 0.5)}),
      clip_with_boxes("vid7", 7, {box_at(0.5, 0.5)}),
  };
  CHECK_THROWS_WITH_AS(multi_clip_adjacency({clips.data(), clips.size()}, 3),
                       "multi_clip_adjacency: gap between t=3 and t=7 in video vid7", FormatError);
}

TEST_CASE("multi-clip adjacency rejects even receptive fields") {
  std::vector<ClipRecord> clips = {clip_with_boxes("v", 0, {box_at(0.5, 0.5)})};
  CHECK_THROWS_AS(multi_clip_adjacency({clips.data(), clips.size()}, 2), std::invalid_argument);
}

TEST_CASE("adjacency construction is permutation equivariant within a clip") {
  Rng rng(21);
  std::vector<BoxGeometry> boxes;
  for (int i = 0; i < 6; ++i)
    boxes.push_back(box_at(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.1));
  Matrix a = proximity_adjacency(boxes);

  std::vector<int> perm = {3, 1, 5, 0, 2, 4};
  std::vector<BoxGeometry> permuted;
  for (int p : perm) permuted.push_back(boxes[std::size_t(p)]);
  Matrix b = proximity_adjacency(permuted);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(b.at(i, j) == a.at(perm[std::size_t(i)], perm[std::size_t(j)]));
}

TEST_CASE("interaction mask: all toggles on gives all ones") {
  std::vector<EntityKind> kinds = {EntityKind::Actor, EntityKind::Object, EntityKind::Actor};
  Matrix m = interaction_mask(kinds, InteractionToggles{});
  for (double v : m.data) CHECK(v == 1.0);
}

TEST_CASE("interaction mask: actor-actor off zeroes only that block off-diagonal") {
  std::vector<EntityKind> kinds = {EntityKind::Actor, EntityKind::Actor, EntityKind::Object};
  InteractionToggles toggles;
  toggles.actor_actor = false;
  Matrix m = interaction_mask(kinds, toggles);
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(1, 0) == 0.0);
  CHECK(m.at(0, 0) == 1.0);  // self edge retained
  CHECK(m.at(1, 1) == 1.0);
  CHECK(m.at(0, 2) == 1.0);
  CHECK(m.at(2, 0) == 1.0);
  CHECK(m.at(2, 2) == 1.0);
}

TEST_CASE("interaction mask: object-object off") {
  std::vector<EntityKind> kinds = {EntityKind::Object, EntityKind::Object, EntityKind::Actor};
  InteractionToggles toggles;
  toggles.object_object = false;
  Matrix m = interaction_mask(kinds, toggles);
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(1, 0) == 0.0);
  CHECK(m.at(0, 0) == 1.0);
  CHECK(m.at(0, 2) == 1.0);
  CHECK(m.at(2, 1) == 1.0);
}
