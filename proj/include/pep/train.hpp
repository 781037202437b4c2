#pragma once

// Experiment harness: builds seeded synthetic datasets, paints them per the
// configured mode, trains the encoder with cross-entropy + Adam and scores
// holdout scenes.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pep/encoder.hpp"
#include "pep/grad.hpp"
#include "pep/synth.hpp"

namespace pep {

enum class PaintMode { None, Mask, Self };

PaintMode parse_paint_mode(const std::string& s);
std::string to_string(PaintMode m);

struct OptimizerConfig {
  double lr = 0.01;
  int steps = 1000;
  int batch_points = 0;  // loss on a random subset of this many points; 0 = all
  int log_every = 100;
};

struct ExperimentConfig {
  std::string task = "train";
  std::uint64_t seed = 0;
  synth::SceneConfig scene;
  int train_scenes = 32;
  int holdout_scenes = 4;
  EncoderConfig encoder;
  OptimizerConfig optimizer;
  PaintMode painting = PaintMode::None;
  double self_corrupt_rate = 0.2;  // label noise on stage-two training inputs
  int stages = 2;

  void validate() const;
};

// JSON with any subset of the fields above; see README for the layout.
ExperimentConfig parse_experiment_config(const std::string& json_text);

struct MetricRecord {
  int step = 0;
  double loss = 0.0;
  double train_miou = 0.0;
  std::optional<double> holdout_miou;
};

// "step=<s> loss=<l> train_miou=<m> holdout_miou=<h>"
std::string format_metric(const MetricRecord& r);

// One scene prepared for a painting mode. For PaintMode::Self `input` is the
// unpainted cloud; the selfsem column is added per use.
struct PreparedScene {
  PointCloud input;
  std::vector<int> gt;
  std::vector<std::uint32_t> neighbors;
};

AttributeSchema model_schema(PaintMode mode, int num_classes);
PreparedScene prepare_scene(const synth::Scene& scene, PaintMode mode, int knn_k, int num_classes);

struct Dataset {
  std::vector<PreparedScene> train;
  std::vector<PreparedScene> holdout;
};

Dataset build_dataset(const ExperimentConfig& cfg);

struct EvalResult {
  double miou = 0.0;                  // final stage for self-painting
  std::optional<double> stage1_miou;  // self-painting only
};

std::vector<int> predict_scene(const Model& model, const PreparedScene& scene, PaintMode mode, int stages,
                               std::vector<int>* stage1 = nullptr);
EvalResult evaluate(const Model& model, std::span<const PreparedScene> scenes, PaintMode mode, int stages);

struct TrainResult {
  Model model;
  std::vector<MetricRecord> log;
  Dataset data;
};

using MetricSink = std::function<void(const MetricRecord&)>;

// Deterministic in cfg.seed. Throws pep::Error on a non-finite loss.
TrainResult train(const ExperimentConfig& cfg, const MetricSink& sink = {});
TrainResult train(const ExperimentConfig& cfg, Dataset data, const MetricSink& sink = {});

}  // namespace pep
