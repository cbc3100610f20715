#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "ap_oracle.hpp"
#include "doctest.h"
#include "stage/errors.hpp"
#include "stage/evaluation.hpp"
#include "stage/rng.hpp"

using namespace stage;

namespace {

BoxGeometry box_at(double x, double y, double s) { return {x, y, x + s, y + s}; }

}  // namespace

TEST_CASE("iou examples") {
  CHECK(iou({0.1, 0.1, 0.4, 0.4}, {0.1, 0.1, 0.4, 0.4}) == 1.0);
  CHECK(iou({0.0, 0.0, 0.2, 0.2}, {0.5, 0.5, 0.9, 0.9}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("average precision hand cases") {
  GroupedBox gt{box_at(0.2, 0.2, 0.3), 0};
  {
    std::vector<ScoredBox> dets = {{box_at(0.2, 0.2, 0.3), 0.8, 0}};
    CHECK(average_precision(dets, {gt}, 0.5).value() == 1.0);
  }
  {
    // higher-scored false positive first, then the true positive
    std::vector<ScoredBox> dets = {{box_at(0.7, 0.7, 0.2), 0.9, 0},
                                   {box_at(0.2, 0.2, 0.3), 0.6, 0}};
    CHECK(average_precision(dets, {gt}, 0.5).value() == 0.5);
  }
}

TEST_CASE("zero-ground-truth conventions") {
  CHECK_FALSE(average_precision({}, {}, 0.5).has_value());
  std::vector<ScoredBox> dets = {{box_at(0.1, 0.1, 0.2), 0.5, 0}};
  CHECK(average_precision(dets, {}, 0.5).value() == 0.0);
}

TEST_CASE("AP is invariant under strictly monotone score rescaling") {
  Rng rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<GroupedBox> gts;
    int n_gt = rng.uniform_int(1, 3);
    for (int g = 0; g < n_gt; ++g)
      gts.push_back({box_at(rng.uniform(0.0, 0.6), rng.uniform(0.0, 0.6), 0.25), 0});
    std::vector<ScoredBox> dets;
    int n_det = rng.uniform_int(1, 5);
    for (int d = 0; d < n_det; ++d)
      dets.push_back(
          {box_at(rng.uniform(0.0, 0.6), rng.uniform(0.0, 0.6), 0.25), rng.uniform01(), 0});
    std::vector<ScoredBox> rescaled = dets;
    for (ScoredBox& d : rescaled) d.score = std::exp(3.0 * d.score + 1.0);
    CHECK(average_precision(dets, gts, 0.5).value() ==
          average_precision(rescaled, gts, 0.5).value());
  }
}

TEST_CASE("adding a zero-score false positive never increases AP") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<GroupedBox> gts = {{box_at(0.1, 0.1, 0.3), 0}};
    std::vector<ScoredBox> dets;
    int n_det = rng.uniform_int(1, 4);
    for (int d = 0; d < n_det; ++d)
      dets.push_back(
          {box_at(rng.uniform(0.0, 0.6), rng.uniform(0.0, 0.6), 0.3), rng.uniform(0.1, 1.0), 0});
    double before = average_precision(dets, gts, 0.5).value();
    dets.push_back({box_at(0.65, 0.65, 0.3), 0.0, 0});  // disjoint from the GT
    double after = average_precision(dets, gts, 0.5).value();
    CHECK(after <= before);
  }
}

TEST_CASE("evaluator equals the brute-force oracle on small instances") {
  Rng rng(6);
  for (int trial = 0; trial < 3000; ++trial) {
    int n_gt = rng.uniform_int(0, 3);
    int n_det = rng.uniform_int(0, 5);
    int n_groups = rng.uniform_int(1, 2);
    std::vector<GroupedBox> gts;
    for (int g = 0; g < n_gt; ++g)
      gts.push_back({box_at(rng.uniform(0.0, 0.55), rng.uniform(0.0, 0.55), 0.3),
                     rng.uniform_int(0, n_groups - 1)});
    std::vector<ScoredBox> dets;
    for (int d = 0; d < n_det; ++d) {
      ScoredBox det;
      if (!gts.empty() && rng.uniform01() < 0.6) {
        // jittered copy of a GT so matches and near-misses both occur
        const GroupedBox& base = gts[std::size_t(rng.uniform_int(0, n_gt - 1))];
        det.box = base.box;
        det.box.x1 += rng.uniform(-0.12, 0.12);
        det.box.y1 += rng.uniform(-0.12, 0.12);
        det.box.x2 = det.box.x1 + 0.3;
        det.box.y2 = det.box.y1 + 0.3;
      } else {
        det.box = box_at(rng.uniform(0.0, 0.55), rng.uniform(0.0, 0.55), 0.3);
      }
      // coarse scores force ties
      det.score = rng.uniform_int(0, 4) / 4.0;
      det.group = rng.uniform_int(0, n_groups - 1);
      dets.push_back(det);
    }
    auto got = average_precision(dets, gts, 0.5);
    if (gts.empty()) {
      if (dets.empty())
        CHECK_FALSE(got.has_value());
      else
        CHECK(got.value() == 0.0);
      continue;
    }
    CHECK(got.value() == ap_oracle(dets, gts, 0.5));
  }
}

TEST_CASE("frame_map: perfect predictor scores 1.0") {
  std::vector<FrameGroundTruth> gts;
  std::vector<FramePrediction> preds;
  Rng rng(7);
  for (int t = 0; t < 6; ++t) {
    BoxGeometry b = box_at(rng.uniform(0.0, 0.6), rng.uniform(0.0, 0.6), 0.2);
    int label = t % 3;
    gts.push_back({"v", t, b, {label}});
    FramePrediction p{"v", t, b, std::vector<double>(3, 0.0)};
    p.scores[std::size_t(label)] = 1.0;
    preds.push_back(p);
  }
  EvalReport r = frame_map(preds, gts, 0.5, 0, 3);
  CHECK(r.mean_ap == 1.0);
  CHECK(r.n_eligible == 3);
}

TEST_CASE("frame_map: min_class_examples excludes rare classes from the mean") {
  std::vector<FrameGroundTruth> gts;
  std::vector<FramePrediction> preds;
  for (int t = 0; t < 30; ++t) {
    BoxGeometry b = box_at(0.1, 0.1, 0.2);
    int label = t < 29 ? 0 : 1;  // class 1 has a single example
    gts.push_back({"v", t, b, {label}});
    FramePrediction p{"v", t, b, {0.0, 0.0}};
    // class 0 predicted perfectly; class 1 badly
    p.scores[0] = label == 0 ? 0.9 : 0.1;
    p.scores[1] = 0.5;
    preds.push_back(p);
  }
  EvalReport strict = frame_map(preds, gts, 0.5, 25, 2);
  CHECK(strict.n_eligible == 1);
  CHECK(strict.classes[0].eligible);
  CHECK_FALSE(strict.classes[1].eligible);
  EvalReport loose = frame_map(preds, gts, 0.5, 0, 2);
  CHECK(loose.n_eligible == 2);
  CHECK(loose.mean_ap < strict.mean_ap);
}

TEST_CASE("frame_map on a single-class set reduces to average_precision") {
  Rng rng(8);
  std::vector<FrameGroundTruth> gts;
  std::vector<FramePrediction> preds;
  std::vector<GroupedBox> flat_gts;
  std::vector<ScoredBox> flat_dets;
  for (int t = 0; t < 5; ++t) {
    BoxGeometry b = box_at(rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5), 0.25);
    gts.push_back({"v", t, b, {0}});
    flat_gts.push_back({b, t});
    BoxGeometry pb = b;
    pb.x1 += rng.uniform(-0.1, 0.1);
    pb.x2 += rng.uniform(-0.1, 0.1);
    if (pb.x2 <= pb.x1) pb.x2 = pb.x1 + 0.1;
    double s = rng.uniform01();
    preds.push_back({"v", t, pb, {s}});
    flat_dets.push_back({pb, s, t});
  }
  EvalReport r = frame_map(preds, gts, 0.5, 0, 1);
  CHECK(r.classes[0].ap == average_precision(flat_dets, flat_gts, 0.5).value());
  CHECK(r.mean_ap == r.classes[0].ap);
}

TEST_CASE("frame_map: group means cover only mapped classes") {
  std::vector<FrameGroundTruth> gts = {{"v", 0, box_at(0.1, 0.1, 0.2), {0}},
                                       {"v", 1, box_at(0.1, 0.1, 0.2), {1}}};
  std::vector<FramePrediction> preds = {{"v", 0, box_at(0.1, 0.1, 0.2), {1.0, 0.0}},
                                        {"v", 1, box_at(0.1, 0.1, 0.2), {0.0, 1.0}}};
  std::map<int, std::string> groups = {{0, "pose"}};
  EvalReport r = frame_map(preds, gts, 0.5, 0, 2, &groups);
  CHECK(r.group_means.size() == 1);
  CHECK(r.group_means.at("pose") == 1.0);
}

TEST_CASE("frame_map: empty ground truth is an error") {
  std::vector<FramePrediction> preds = {{"v", 0, box_at(0.1, 0.1, 0.2), {1.0}}};
  CHECK_THROWS_AS(frame_map(preds, {}, 0.5, 0, 1), FormatError);
}

TEST_CASE("eval report CSV carries one row per class plus a summary") {
  std::vector<FrameGroundTruth> gts = {{"v", 0, box_at(0.1, 0.1, 0.2), {0}}};
  std::vector<FramePrediction> preds = {{"v", 0, box_at(0.1, 0.1, 0.2), {1.0, 0.0}}};
  EvalReport r = frame_map(preds, gts, 0.5, 0, 2);
  std::string csv = r.to_csv();
  CHECK(csv.find("class_id,class_name,n_gt,AP\n") == 0);
  CHECK(csv.find("0,class_0,1,1\n") != std::string::npos);
  CHECK(csv.find("mAP,") != std::string::npos);
}
