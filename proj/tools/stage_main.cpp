// Command-line entry point: train, eval, gradcheck, params, flops, synth.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stage/dataio.hpp"
#include "stage/errors.hpp"
#include "stage/evaluation.hpp"
#include "stage/model.hpp"
#include "stage/training.hpp"
#include "stage/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "stage 0.1.0";

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw stage::FileError("cannot open " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= std::uint64_t(static_cast<unsigned char>(buf[i]));
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string digest_str(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw stage::FileError("no such file: " + path);
}

std::string read_text_file(const std::string& path) {
  require_file(path);
  std::ifstream is(path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw stage::FileError("cannot write " + path);
  os << text;
}

int thread_cap() {
  // execution is single-threaded; the cap is recorded and honored trivially
  const char* env = std::getenv("STAGE_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const stage::StageConfig* config, std::uint64_t seed,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::string>& outputs) {
  nlohmann::ordered_json j;
  j["tool"] = kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["threads"] = thread_cap();
  if (config) j["config"] = nlohmann::ordered_json::parse(stage::config_to_json(*config));
  j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& [name, path] : inputs) {
    nlohmann::ordered_json ji;
    ji["path"] = path;
    ji["digest"] = digest_str(fnv1a64_file(path));
    j["inputs"][name] = ji;
  }
  j["outputs"] = outputs;
  write_text_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

struct ConfigFlags {
  std::string preset;
  int heads = 0, layers = 0, window = 0, classes = 0, rf = 0;
  double lr = 0.0, keep = -1.0;
  int epochs = 0, batch = 0, stride = 0;
  int decay_patience = 0, stop_patience = 0;
  int min_class_examples = -1;
  double score_thresh = -1.0;
  double label_iou = 0.0;
  std::uint64_t seed = 0;
  std::string loss;
  std::vector<std::string> ablations;

  CLI::Option* o_heads = nullptr;
  CLI::Option* o_layers = nullptr;
  CLI::Option* o_window = nullptr;
  CLI::Option* o_classes = nullptr;
  CLI::Option* o_rf = nullptr;
  CLI::Option* o_lr = nullptr;
  CLI::Option* o_keep = nullptr;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_batch = nullptr;
  CLI::Option* o_stride = nullptr;
  CLI::Option* o_decay = nullptr;
  CLI::Option* o_stop = nullptr;
  CLI::Option* o_min_cls = nullptr;
  CLI::Option* o_score = nullptr;
  CLI::Option* o_label_iou = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_loss = nullptr;

  void add_to(CLI::App* app, bool training_flags) {
    app->add_option("--preset", preset,
                    "configuration preset: stage-i3d, stage-r101, stage-slowfast");
    o_heads = app->add_option("--heads", heads, "attention heads per layer");
    o_layers = app->add_option("--layers", layers, "attention layers");
    o_window = app->add_option("--window", window, "consecutive clips per window");
    o_classes = app->add_option("--classes", classes, "number of classes");
    o_rf = app->add_option("--rf", rf, "direct temporal receptive field (odd)");
    o_keep = app->add_option("--keep", keep, "dropout keep probability");
    o_loss = app->add_option("--loss", loss, "multi-label-sigmoid or single-label-softmax");
    app->add_option("--ablate", ablations,
                    "no-proximity, no-temporal, no-aa, no-oo, transformer, feature-distance")
        ->delimiter(',');
    if (training_flags) {
      o_lr = app->add_option("--lr", lr, "learning rate");
      o_epochs = app->add_option("--epochs", epochs, "maximum epochs");
      o_batch = app->add_option("--batch", batch, "windows per optimizer step");
      o_stride = app->add_option("--stride", stride, "window stride (default: window size)");
      o_decay = app->add_option("--decay-patience", decay_patience,
                                "epochs without val improvement before lr/10");
      o_stop = app->add_option("--stop-patience", stop_patience,
                               "epochs without val improvement before stopping");
      o_label_iou = app->add_option("--label-iou", label_iou,
                                    "IoU threshold for --gt label assignment");
      o_seed = app->add_option("--seed", seed, "training seed");
    }
    o_min_cls = app->add_option("--min-class-examples", min_class_examples,
                                "ground-truth count required for a class to enter the mean");
    o_score = app->add_option("--score-thresh", score_thresh,
                              "detector score required for an actor box at evaluation");
  }

  void apply(stage::StageConfig& c) const {
    if (o_heads && o_heads->count()) c.n_heads = heads;
    if (o_layers && o_layers->count()) c.n_layers = layers;
    if (o_window && o_window->count()) c.window_clips = window;
    if (o_classes && o_classes->count()) c.n_classes = classes;
    if (o_rf && o_rf->count()) c.rf_direct = rf;
    if (o_lr && o_lr->count()) c.lr = lr;
    if (o_keep && o_keep->count()) c.dropout_keep = keep;
    if (o_epochs && o_epochs->count()) c.max_epochs = epochs;
    if (o_batch && o_batch->count()) c.batch_windows = batch;
    if (o_stride && o_stride->count()) c.window_stride = stride;
    if (o_decay && o_decay->count()) c.decay_patience = decay_patience;
    if (o_stop && o_stop->count()) c.stop_patience = stop_patience;
    if (o_min_cls && o_min_cls->count()) c.min_class_examples = min_class_examples;
    if (o_score && o_score->count()) c.eval_score_thresh = score_thresh;
    if (o_label_iou && o_label_iou->count()) c.label_iou_thresh = label_iou;
    if (o_seed && o_seed->count()) c.seed = seed;
    if (o_loss && o_loss->count()) {
      if (loss == "multi-label-sigmoid")
        c.loss_mode = stage::LossMode::MultiLabelSigmoid;
      else if (loss == "single-label-softmax")
        c.loss_mode = stage::LossMode::SingleLabelSoftmax;
      else
        throw CLI::ValidationError("--loss", "unknown loss mode '" + loss + "'");
    }
    for (const std::string& a : ablations) {
      if (a == "no-proximity")
        c.proximity_on = false;
      else if (a == "no-temporal")
        c.temporal_on = false;
      else if (a == "no-aa")
        c.actor_actor_on = false;
      else if (a == "no-oo")
        c.object_object_on = false;
      else if (a == "transformer")
        c.attention = stage::AttentionKind::Transformer;
      else if (a == "feature-distance")
        c.adjacency = stage::AdjacencyKind::FeatureDistance;
      else
        throw CLI::ValidationError("--ablate", "unknown ablation '" + a + "'");
    }
  }

  stage::StageConfig base_config() const {
    return preset.empty() ? stage::StageConfig{} : stage::preset_config(preset);
  }
};

void derive_widths_from_data(stage::StageConfig& c, const stage::Dataset& data) {
  int actor_w = -1, object_w = -1;
  for (const stage::ClipRecord& clip : data)
    for (const stage::EntityDetection& e : clip.entities) {
      if (e.kind == stage::EntityKind::Actor) {
        if (actor_w < 0) actor_w = int(e.feature.size());
      } else if (object_w < 0) {
        object_w = int(e.feature.size());
      }
    }
  if (actor_w < 0 && object_w < 0) throw stage::FormatError("dataset contains no entities");
  c.actor_feat_width = actor_w > 0 ? actor_w : object_w;
  c.object_feat_width = object_w > 0 ? object_w : actor_w;
}

int max_label_of(const stage::Dataset& data) {
  int max_label = -1;
  for (const stage::ClipRecord& clip : data)
    for (const stage::EntityDetection& e : clip.entities)
      for (int lab : e.labels) max_label = std::max(max_label, lab);
  return max_label;
}

std::map<int, std::string> read_groups_csv(const std::string& path) {
  std::map<int, std::string> groups;
  std::ifstream is(path);
  if (!is) throw stage::FileError("cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line.rfind("class_id", 0) == 0) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw stage::FormatError(path + ":" + std::to_string(line_no) +
                               ": expected class_id,group");
    groups[std::stoi(line.substr(0, comma))] = line.substr(comma + 1);
  }
  return groups;
}

int cmd_train(const ConfigFlags& flags, const std::string& train_path,
              const std::string& val_path, const std::string& gt_path,
              const std::string& out_dir) {
  require_file(train_path);
  require_file(val_path);
  fs::create_directories(out_dir);

  stage::Dataset train = stage::read_clips(train_path);
  stage::Dataset val = stage::read_clips(val_path);

  stage::StageConfig c = flags.base_config();
  derive_widths_from_data(c, train);
  flags.apply(c);

  if (!gt_path.empty()) {
    require_file(gt_path);
    stage::Dataset gt = stage::read_clips(gt_path);
    stage::apply_ground_truth_labels(train, gt, c.label_iou_thresh);
  }

  int max_label = std::max(max_label_of(train), max_label_of(val));
  if (flags.o_classes->count() || !flags.preset.empty()) {
    if (max_label >= c.n_classes)
      throw stage::FormatError("dataset carries label " + std::to_string(max_label) +
                               " but the configuration has " + std::to_string(c.n_classes) +
                               " classes");
  } else {
    if (max_label < 0)
      throw stage::FormatError("no labels in the data; pass --classes or --gt");
    c.n_classes = max_label + 1;
  }
  c.validate();

  stage::FitResult result = stage::fit(c, train, val, &std::cout);

  stage::save_checkpoint(out_dir + "/checkpoint.stage", c, result.best_params);
  write_text_file(out_dir + "/history.csv", stage::history_csv(result.history));
  std::vector<std::pair<std::string, std::string>> inputs = {{"train", train_path},
                                                             {"val", val_path}};
  if (!gt_path.empty()) inputs.emplace_back("gt", gt_path);
  write_manifest(out_dir, "train", &c, c.seed, inputs, {"checkpoint.stage", "history.csv"});

  std::printf("best val mAP %.6f at epoch %d (%zu epochs run)\n", result.best_val_map,
              result.best_epoch, result.history.size());
  if (result.diverged) {
    std::fprintf(stderr, "training diverged; last best checkpoint retained\n");
    return 1;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& groups_path, int min_class_examples, double score_thresh,
             bool have_min_cls, bool have_score, const std::string& out_dir) {
  require_file(ckpt_path);
  require_file(data_path);
  stage::Checkpoint ck = stage::load_checkpoint(ckpt_path);
  stage::Dataset data = stage::read_clips(data_path);

  // structural mismatch between checkpoint config and dataset is a hard error
  for (const stage::ClipRecord& clip : data)
    for (const stage::EntityDetection& e : clip.entities) {
      int want = e.kind == stage::EntityKind::Actor ? ck.config.actor_feat_width
                                                    : ck.config.object_feat_width;
      if (int(e.feature.size()) != want)
        throw stage::FormatError(
            "checkpoint/dataset mismatch: checkpoint expects " +
            std::string(e.kind == stage::EntityKind::Actor ? "actor" : "object") + " width " +
            std::to_string(want) + ", dataset has " + std::to_string(e.feature.size()));
    }

  stage::EvalOptions opts;
  opts.min_class_examples = have_min_cls ? min_class_examples : ck.config.min_class_examples;
  opts.score_thresh = have_score ? score_thresh : ck.config.eval_score_thresh;
  std::map<int, std::string> groups;
  if (!groups_path.empty()) {
    groups = read_groups_csv(groups_path);
    opts.groups = &groups;
  }
  stage::EvalReport report = stage::evaluate_dataset(ck.config, ck.params, data, opts);

  std::printf("mAP %.9g over %d classes\n", report.mean_ap, report.n_eligible);
  for (const auto& [name, ap] : report.group_means)
    std::printf("group %s mAP %.9g\n", name.c_str(), ap);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/eval_report.csv", report.to_csv());
    nlohmann::ordered_json j;
    j["mean_ap"] = report.mean_ap;
    j["n_eligible"] = report.n_eligible;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& e : report.classes) {
      nlohmann::ordered_json je;
      je["class_id"] = e.class_id;
      je["name"] = e.name;
      je["n_gt"] = e.n_gt;
      je["ap"] = e.ap;
      je["eligible"] = e.eligible;
      j["classes"].push_back(je);
    }
    for (const auto& [name, ap] : report.group_means) j["group_means"][name] = ap;
    write_text_file(out_dir + "/eval_report.json", j.dump(2) + "\n");
    std::vector<std::pair<std::string, std::string>> inputs = {{"checkpoint", ckpt_path},
                                                               {"data", data_path}};
    if (!groups_path.empty()) inputs.emplace_back("groups", groups_path);
    write_manifest(out_dir, "eval", &ck.config, ck.config.seed, inputs,
                   {"eval_report.csv", "eval_report.json"});
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int cases) {
  stage::GradCheckResult r = stage::run_gradcheck(seed, cases);
  bool pass = r.max_rel_err < stage::kGradCheckTolerance;
  std::printf(
      "gradcheck: max relative error %.3g over %d cases (%lld parameters): %s (tolerance %g)\n",
      r.max_rel_err, r.n_cases, static_cast<long long>(r.n_params), pass ? "PASS" : "FAIL",
      stage::kGradCheckTolerance);
  return pass ? 0 : 1;
}

int cmd_params(const ConfigFlags& flags) {
  stage::StageConfig c = flags.base_config();
  flags.apply(c);
  std::int64_t n = stage::count_params(c);
  std::printf("parameters: %lld (%.3gM)\n", static_cast<long long>(n), double(n) / 1e6);
  return 0;
}

int cmd_flops(const ConfigFlags& flags, int actors, int objects) {
  stage::StageConfig c = flags.base_config();
  flags.apply(c);
  stage::FlopBreakdown fb = stage::count_flops_breakdown(c, actors, objects);
  std::printf("flops: %lld multiply-accumulates (%.3g GMAC) for %d actors + %d objects\n",
              static_cast<long long>(fb.total()), double(fb.total()) / 1e9, actors, objects);
  std::printf(
      "  projection %lld, head projections %lld, attention scores %lld, "
      "weighted sums %lld, output maps %lld, classifier %lld\n",
      static_cast<long long>(fb.projection), static_cast<long long>(fb.head_proj),
      static_cast<long long>(fb.attn_scores), static_cast<long long>(fb.weighted_sum),
      static_cast<long long>(fb.out_proj), static_cast<long long>(fb.classifier));
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed,
              bool have_seed) {
  stage::SynthSpec spec = stage::synth_spec_from_json(read_text_file(spec_path));
  if (have_seed) spec.seed = seed;
  fs::create_directories(out_dir);
  stage::SynthResult result = stage::synth_generate(spec);
  stage::write_clips(out_dir + "/train.jsonl", result.train);
  stage::write_clips(out_dir + "/val.jsonl", result.val);

  nlohmann::ordered_json j;
  j["spec"] = nlohmann::ordered_json::parse(stage::synth_spec_to_json(spec));
  j["positives_per_class"] = result.positives_per_class;
  j["warnings"] = result.warnings;
  write_text_file(out_dir + "/synth_report.json", j.dump(2) + "\n");
  write_manifest(out_dir, "synth", nullptr, spec.seed, {{"spec", spec_path}},
                 {"train.jsonl", "val.jsonl", "synth_report.json"});

  for (std::size_t c = 0; c < result.positives_per_class.size(); ++c)
    std::printf("class %zu: %lld positives\n", c,
                static_cast<long long>(result.positives_per_class[c]));
  for (const std::string& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-attention action detection toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::function<int()> run;

  auto* train = app.add_subcommand("train", "train on a detection-feature dataset");
  auto train_flags = std::make_shared<ConfigFlags>();
  auto train_paths = std::make_shared<std::vector<std::string>>(4);
  train->add_option("--train", (*train_paths)[0], "training dataset (jsonl)")->required();
  train->add_option("--val", (*train_paths)[1], "validation dataset (jsonl)")->required();
  train->add_option("--out", (*train_paths)[2], "output directory")->required();
  train->add_option("--gt", (*train_paths)[3],
                    "relabel training actors from this ground-truth dataset by maximum IoU");
  train_flags->add_to(train, /*training_flags=*/true);
  train->callback([&run, train_flags, train_paths] {
    run = [train_flags, train_paths] {
      return cmd_train(*train_flags, (*train_paths)[0], (*train_paths)[1], (*train_paths)[3],
                       (*train_paths)[2]);
    };
  });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint: frame-mAP at IoU 0.5");
  auto eval_opts =
      std::make_shared<std::tuple<std::string, std::string, std::string, std::string, int, double>>();
  eval->add_option("--checkpoint", std::get<0>(*eval_opts), "checkpoint file")->required();
  eval->add_option("--data", std::get<1>(*eval_opts), "dataset to evaluate (jsonl)")->required();
  eval->add_option("--out", std::get<2>(*eval_opts), "output directory (optional)");
  eval->add_option("--groups", std::get<3>(*eval_opts), "csv mapping class_id,group");
  auto* o_mince = eval->add_option("--min-class-examples", std::get<4>(*eval_opts),
                                   "ground-truth count required per class");
  auto* o_score = eval->add_option("--score-thresh", std::get<5>(*eval_opts),
                                   "detector score threshold for actor boxes");
  eval->callback([&run, eval_opts, o_mince, o_score] {
    run = [eval_opts, o_mince, o_score] {
      return cmd_eval(std::get<0>(*eval_opts), std::get<1>(*eval_opts), std::get<3>(*eval_opts),
                      std::get<4>(*eval_opts), std::get<5>(*eval_opts), o_mince->count() > 0,
                      o_score->count() > 0, std::get<2>(*eval_opts));
    };
  });

  auto* gradcheck =
      app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  auto gc = std::make_shared<std::pair<std::uint64_t, int>>(1, 20);
  gradcheck->add_option("--seed", gc->first, "seed for the randomized cases");
  gradcheck->add_option("--cases", gc->second, "number of randomized cases");
  gradcheck->callback([&run, gc] {
    run = [gc] { return cmd_gradcheck(gc->first, gc->second); };
  });

  auto* params = app.add_subcommand("params", "print the learnable parameter count");
  auto params_flags = std::make_shared<ConfigFlags>();
  params_flags->add_to(params, /*training_flags=*/false);
  params->callback([&run, params_flags] {
    run = [params_flags] { return cmd_params(*params_flags); };
  });

  auto* flops =
      app.add_subcommand("flops", "print the analytic multiply-accumulate count per clip");
  auto flops_flags = std::make_shared<ConfigFlags>();
  auto counts = std::make_shared<std::pair<int, int>>(4, 25);
  flops->add_option("--actors", counts->first, "actor detections per clip");
  flops->add_option("--objects", counts->second, "object detections per clip");
  flops_flags->add_to(flops, /*training_flags=*/false);
  flops->callback([&run, flops_flags, counts] {
    run = [flops_flags, counts] { return cmd_flops(*flops_flags, counts->first, counts->second); };
  });

  auto* synth = app.add_subcommand("synth", "generate a synthetic interaction dataset");
  auto sy = std::make_shared<std::tuple<std::string, std::string, std::uint64_t>>();
  synth->add_option("--spec", std::get<0>(*sy), "generator spec (json)")->required();
  synth->add_option("--out", std::get<1>(*sy), "output directory")->required();
  auto* o_seed = synth->add_option("--seed", std::get<2>(*sy), "override the spec seed");
  synth->callback([&run, sy, o_seed] {
    run = [sy, o_seed] {
      return cmd_synth(std::get<0>(*sy), std::get<1>(*sy), std::get<2>(*sy), o_seed->count() > 0);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return run ? run() : 2;
  } catch (const stage::FileError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
