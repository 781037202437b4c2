#include "pep/train.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "pep/io.hpp"
#include "pep/rng.hpp"

namespace pep {

using nlohmann::json;

PaintMode parse_paint_mode(const std::string& s) {
  if (s == "none") return PaintMode::None;
  if (s == "mask") return PaintMode::Mask;
  if (s == "self") return PaintMode::Self;
  throw Error("unknown painting mode '" + s + "' (expected none, mask or self)");
}

std::string to_string(PaintMode m) {
  switch (m) {
    case PaintMode::None: return "none";
    case PaintMode::Mask: return "mask";
    case PaintMode::Self: return "self";
  }
  return "none";
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> tasks = {"train", "eval", "paint", "selfpaint", "gradcheck", "gen"};
  if (!tasks.count(task)) throw Error("unknown task '" + task + "'");
  scene.validate();
  encoder.validate();
  if (encoder.num_classes != synth::kNumClasses) throw Error("synthetic scenes have exactly 4 classes");
  if (train_scenes < 1 || holdout_scenes < 1) throw Error("need at least one training and one holdout scene");
  if (optimizer.steps < 0 || optimizer.batch_points < 0 || optimizer.log_every < 1 || !(optimizer.lr > 0.0)) {
    throw Error("invalid optimizer settings");
  }
  if (!(self_corrupt_rate >= 0.0 && self_corrupt_rate <= 1.0)) throw Error("self_corrupt_rate must lie in [0, 1]");
  if (stages < 2) throw Error("stages must be >= 2");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error("config: unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_range(const json& j, const char* key, synth::CountRange& r) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw Error(std::string("config: '") + key + "' must be [min, max]");
  r = {a[0].get<int>(), a[1].get<int>()};
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(json_text);
    check_keys(j, {"task", "seed", "scene", "train_scenes", "holdout_scenes", "encoder", "optimizer", "painting",
                   "self_corrupt_rate", "stages"},
               "config");
    read(j, "task", c.task);
    read(j, "seed", c.seed);
    read(j, "train_scenes", c.train_scenes);
    read(j, "holdout_scenes", c.holdout_scenes);
    read(j, "self_corrupt_rate", c.self_corrupt_rate);
    read(j, "stages", c.stages);
    if (j.contains("painting")) c.painting = parse_paint_mode(j.at("painting").get<std::string>());
    if (j.contains("scene")) {
      const auto& s = j.at("scene");
      check_keys(s, {"n_points", "vehicles", "poles", "pedestrians", "extent", "lidar_height",
                     "out_of_view_fraction", "mask_noise_rate", "drop_rate"},
                 "scene");
      read(s, "n_points", c.scene.n_points);
      read_range(s, "vehicles", c.scene.vehicles);
      read_range(s, "poles", c.scene.poles);
      read_range(s, "pedestrians", c.scene.pedestrians);
      read(s, "extent", c.scene.extent);
      read(s, "lidar_height", c.scene.lidar_height);
      read(s, "out_of_view_fraction", c.scene.out_of_view_fraction);
      read(s, "mask_noise_rate", c.scene.mask_noise_rate);
      read(s, "drop_rate", c.scene.drop_rate);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      check_keys(e, {"d", "head_hidden", "knn_k", "heads"}, "encoder");
      read(e, "d", c.encoder.d);
      read(e, "heads", c.encoder.heads);
      read(e, "head_hidden", c.encoder.head_hidden);
      read(e, "knn_k", c.encoder.knn_k);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, {"lr", "steps", "batch_points", "log_every"}, "optimizer");
      read(o, "lr", c.optimizer.lr);
      read(o, "steps", c.optimizer.steps);
      read(o, "batch_points", c.optimizer.batch_points);
      read(o, "log_every", c.optimizer.log_every);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string format_metric(const MetricRecord& r) {
  std::string s = "step=" + std::to_string(r.step) + " loss=" + io::format_real(r.loss) +
                  " train_miou=" + io::format_real(r.train_miou);
  if (r.holdout_miou) s += " holdout_miou=" + io::format_real(*r.holdout_miou);
  return s;
}

AttributeSchema model_schema(PaintMode mode, int num_classes) {
  auto s = lidar_schema();
  switch (mode) {
    case PaintMode::None: return s;
    case PaintMode::Mask:
      return s.with(AttrDesc::categorical("sem", num_classes)).with(AttrDesc::categorical("inst", kInstanceSlots));
    case PaintMode::Self: return s.with(AttrDesc::categorical(kSelfPaintColumn, num_classes));
  }
  return s;
}

PreparedScene prepare_scene(const synth::Scene& scene, PaintMode mode, int knn_k, int num_classes) {
  PreparedScene p;
  p.gt = *scene.cloud.gt_labels();
  p.input = mode == PaintMode::Mask ? paint_with_mask(scene.cloud, scene.calib, scene.mask, num_classes)
                                    : scene.cloud;
  p.neighbors = knn_indices(scene.cloud, knn_k);
  return p;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  const int total = cfg.train_scenes + cfg.holdout_scenes;
  std::vector<PreparedScene> all(static_cast<std::size_t>(total));
  // Scenes are independent; results land in fixed slots.
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    synth::SceneConfig sc = cfg.scene;
    sc.seed = i < cfg.train_scenes ? mix_seed(cfg.seed, static_cast<std::uint64_t>(i))
                                   : mix_seed(cfg.seed, 10000 + static_cast<std::uint64_t>(i - cfg.train_scenes));
    all[static_cast<std::size_t>(i)] =
        prepare_scene(synth::gen_scene(sc), cfg.painting, cfg.encoder.knn_k, cfg.encoder.num_classes);
  }
  Dataset d;
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cfg.train_scenes));
  d.holdout.assign(std::make_move_iterator(all.begin() + cfg.train_scenes), std::make_move_iterator(all.end()));
  return d;
}

std::vector<int> predict_scene(const Model& model, const PreparedScene& scene, PaintMode mode, int stages,
                               std::vector<int>* stage1) {
  if (mode != PaintMode::Self) return argmax_rows(forward_segmentation(scene.input, model, scene.neighbors));
  Segmenter seg = [&](const PointCloud& c) { return argmax_rows(forward_segmentation(c, model, scene.neighbors)); };
  auto r = run_two_stage(seg, scene.input, model.config.num_classes, stages);
  if (stage1) *stage1 = r.stage1();
  return r.stages.back();
}

EvalResult evaluate(const Model& model, std::span<const PreparedScene> scenes, PaintMode mode, int stages) {
  ConfusionMatrix final_cm(model.config.num_classes), first_cm(model.config.num_classes);
  for (const auto& s : scenes) {
    std::vector<int> first;
    const auto pred = predict_scene(model, s, mode, stages, &first);
    final_cm.add(s.gt, pred);
    if (mode == PaintMode::Self) first_cm.add(s.gt, first);
  }
  EvalResult r;
  r.miou = final_cm.mean_iou();
  if (mode == PaintMode::Self) r.stage1_miou = first_cm.mean_iou();
  return r;
}

namespace {

// Stage-two training input: ground truth with each label swapped for a
// different random class with probability `rate`.
std::vector<int> corrupt_labels(const std::vector<int>& gt, double rate, int num_classes, Rng& rng) {
  std::vector<int> out = gt;
  for (auto& l : out) {
    const double u = rng.uniform();
    const int shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes - 1)));
    if (num_classes > 1 && u < rate) l = (l + shift) % num_classes;
  }
  return out;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const MetricSink& sink) { return train(cfg, build_dataset(cfg), sink); }

TrainResult train(const ExperimentConfig& cfg, Dataset data, const MetricSink& sink) {
  cfg.validate();
  const int c = cfg.encoder.num_classes;
  TrainResult result{Model::init(model_schema(cfg.painting, c), cfg.encoder, mix_seed(cfg.seed, 777777)), {},
                     std::move(data)};
  Model& model = result.model;
  const auto& scenes = result.data.train;
  model.params.set_requires_grad(true);
  auto params = model.params.pointers();
  grad::AdamState adam;
  const grad::AdamConfig adam_cfg{cfg.optimizer.lr};
  Rng rng(mix_seed(cfg.seed, 888888));
  std::vector<std::size_t> order;

  for (int step = 1; step <= cfg.optimizer.steps; ++step) {
    if (order.empty()) {
      order.resize(scenes.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    const PreparedScene& scene = scenes[order.back()];
    order.pop_back();

    PointCloud input = scene.input;
    if (cfg.painting == PaintMode::Self) {
      input = rng.bernoulli(0.5) ? self_paint_stage1(scene.input, c)
                                 : self_paint_stage2(scene.input, corrupt_labels(scene.gt, cfg.self_corrupt_rate, c, rng), c);
    }
    std::vector<int> targets = scene.gt;
    std::vector<std::uint32_t> subset;
    const auto n = static_cast<std::uint32_t>(scene.gt.size());
    if (cfg.optimizer.batch_points > 0 && static_cast<std::uint32_t>(cfg.optimizer.batch_points) < n) {
      std::vector<std::uint32_t> idx(n);
      for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
      for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(cfg.optimizer.batch_points); ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
      }
      subset.assign(idx.begin(), idx.begin() + cfg.optimizer.batch_points);
      targets.clear();
      for (auto i : subset) targets.push_back(scene.gt[i]);
    }

    grad::Tape tape;
    auto bound = bind(tape, model.params);
    grad::Var logits = build_logits(tape, bound, model, input, scene.neighbors);
    grad::Var scored = subset.empty() ? logits : tape.gather_row(logits, subset);
    grad::Var loss = tape.cross_entropy(scored, targets);
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value)) {
      throw Error("training diverged: non-finite loss at step " + std::to_string(step));
    }
    model.params.zero_grad();
    tape.backward(loss);
    grad::adam_step(params, adam, adam_cfg);

    if (step % cfg.optimizer.log_every == 0 || step == cfg.optimizer.steps) {
      MetricRecord rec;
      rec.step = step;
      rec.loss = loss_value;
      rec.train_miou = miou(argmax_rows(tape.value(scored)), targets, c).miou;
      rec.holdout_miou = evaluate(model, result.data.holdout, cfg.painting, cfg.stages).miou;
      result.log.push_back(rec);
      if (sink) sink(rec);
    }
  }
  model.params.set_requires_grad(false);
  return result;
}

}  // namespace pep
