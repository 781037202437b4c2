// pep: command-line front end for scene generation, painting, training and
// evaluation. Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "pep/core.hpp"
#include "pep/encoder.hpp"
#include "pep/geometry.hpp"
#include "pep/io.hpp"
#include "pep/kernels.hpp"
#include "pep/synth.hpp"
#include "pep/train.hpp"

namespace {

using namespace pep;

constexpr int kUsage = 1;
constexpr int kDataError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  if (!path.empty()) cfg = parse_experiment_config(io::read_file(path));
  return cfg;
}

void print_miou(std::ostream& os, const ConfusionMatrix& cm, const ClassSpace* names) {
  os << "miou=" << io::format_real(cm.mean_iou()) << "\n";
  for (int c = 0; c < cm.num_classes(); ++c) {
    os << "class=" << c;
    if (names && c < static_cast<int>(names->names.size())) os << " name=" << names->names[static_cast<std::size_t>(c)];
    const auto iou = cm.iou(c);
    os << " iou=" << (iou ? io::format_real(*iou) : std::string("absent")) << "\n";
  }
}

// --- gen --------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  std::string out, config;
  std::optional<double> noise;
};

int run_gen(const GenArgs& a) {
  synth::SceneConfig sc = load_config(a.config).scene;
  sc.seed = a.seed;
  if (a.noise) sc.mask_noise_rate = *a.noise;
  const synth::Scene scene = synth::gen_scene(sc);
  io::write_cloud(a.out, scene.cloud);
  io::write_kitti_calib(a.out + ".calib.txt", scene.calib);
  io::write_mask(a.out + ".mask", scene.mask);
  std::cout << "points=" << scene.cloud.size() << " cloud=" << a.out << " calib=" << a.out << ".calib.txt"
            << " mask=" << a.out << ".mask\n";
  return 0;
}

// --- paint ------------------------------------------------------------------

struct PaintArgs {
  std::string cloud, calib, mask, out;
  int classes = synth::kNumClasses;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

int run_paint(const PaintArgs& a) {
  const PointCloud cloud = io::read_cloud(a.cloud);
  const Calibration calib = io::read_kitti_calib(a.calib);
  LabeledMask mask = io::read_mask(a.mask);
  if (a.noise > 0.0) mask = synth::corrupt_mask(mask, a.noise, a.seed);
  const PointCloud painted = paint_with_mask(cloud, calib, mask, a.classes);
  io::write_cloud(a.out, painted);
  const auto sem = painted.column(painted.schema().index_of("sem"));
  std::size_t visible = 0;
  for (double s : sem) visible += s >= 0.0 ? 1 : 0;
  std::cout << "points=" << painted.size() << " painted=" << visible << "\n";
  return 0;
}

// --- selfpaint --------------------------------------------------------------

struct SelfPaintArgs {
  int stage = 1;
  std::string cloud, out, pred;
  int classes = synth::kNumClasses;
};

int run_selfpaint(const SelfPaintArgs& a) {
  const PointCloud cloud = io::read_cloud(a.cloud);
  PointCloud result = cloud;
  if (a.stage == 1) {
    if (!a.pred.empty()) throw UsageError("--pred is only used with --stage 2");
    result = self_paint_stage1(cloud, a.classes);
  } else {
    if (a.pred.empty()) throw UsageError("--stage 2 needs --pred <labels>");
    const auto preds = io::read_labels(a.pred);
    result = self_paint_stage2(cloud, preds, a.classes);
  }
  io::write_cloud(a.out, result);
  std::cout << "points=" << result.size() << " stage=" << a.stage << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, log;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
};

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.noise) cfg.scene.mask_noise_rate = *a.noise;
  cfg.validate();
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::trunc);
    if (!log_file) throw Error("cannot write " + a.log);
  }
  std::ostream& log = a.log.empty() ? std::cout : log_file;
  const TrainResult r = train(cfg, [&](const MetricRecord& m) { log << format_metric(m) << "\n" << std::flush; });
  save_checkpoint(a.out, r.model);
  const EvalResult ev = evaluate(r.model, r.data.holdout, cfg.painting, cfg.stages);
  std::cout << "checkpoint=" << a.out << " painting=" << to_string(cfg.painting)
            << " holdout_miou=" << io::format_real(ev.miou);
  if (ev.stage1_miou) std::cout << " stage1_miou=" << io::format_real(*ev.stage1_miou);
  std::cout << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, ckpt, cloud, config, out;
  std::optional<std::uint64_t> seed;
  int classes = synth::kNumClasses;
  int stages = 2;
};

int run_eval(const EvalArgs& a) {
  if (!a.pred.empty()) {
    if (a.gt.empty()) throw UsageError("--pred needs --gt");
    if (!a.ckpt.empty() || !a.cloud.empty() || !a.config.empty()) {
      throw UsageError("--pred/--gt cannot be combined with --ckpt, --cloud or --config");
    }
    const auto pred = io::read_labels(a.pred);
    const auto gt = io::read_labels(a.gt);
    if (pred.size() != gt.size()) {
      throw Error("prediction count " + std::to_string(pred.size()) + " differs from ground-truth count " +
                  std::to_string(gt.size()));
    }
    ConfusionMatrix cm(a.classes);
    cm.add(gt, pred);
    print_miou(std::cout, cm, nullptr);
    return 0;
  }
  if (a.ckpt.empty()) throw UsageError("eval needs --pred/--gt or --ckpt");
  const Model model = load_checkpoint(a.ckpt);
  const bool self = model.schema.find(kSelfPaintColumn).has_value();
  const PaintMode mode = self ? PaintMode::Self
                         : model.schema.find("sem").has_value() ? PaintMode::Mask
                                                    : PaintMode::None;
  const ClassSpace names = synth::class_space();
  const ClassSpace* label_names = model.config.num_classes == names.num_classes ? &names : nullptr;

  if (!a.cloud.empty()) {
    if (!a.config.empty()) throw UsageError("--cloud and --config are exclusive");
    const PointCloud cloud = io::read_cloud(a.cloud);
    PreparedScene scene{cloud, {}, knn_indices(cloud, model.config.knn_k)};
    std::vector<int> first;
    const auto pred = predict_scene(model, scene, mode, a.stages, &first);
    if (!a.out.empty()) io::write_labels(a.out, pred);
    if (!cloud.gt_labels()) {
      std::cout << "points=" << pred.size() << " (cloud has no gt column; predictions only)\n";
      return 0;
    }
    ConfusionMatrix cm(model.config.num_classes);
    cm.add(*cloud.gt_labels(), pred);
    print_miou(std::cout, cm, label_names);
    if (self) std::cout << "stage1_miou=" << io::format_real(miou(first, *cloud.gt_labels(), model.config.num_classes).miou) << "\n";
    return 0;
  }
  if (a.config.empty()) throw UsageError("eval --ckpt needs --cloud or --config");
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (cfg.painting != mode) {
    throw Error("config painting mode '" + to_string(cfg.painting) + "' does not match the checkpoint ('" +
                to_string(mode) + "')");
  }
  cfg.stages = a.stages;
  const Dataset data = build_dataset(cfg);
  ConfusionMatrix cm(model.config.num_classes), first_cm(model.config.num_classes);
  for (const auto& s : data.holdout) {
    std::vector<int> first;
    cm.add(s.gt, predict_scene(model, s, mode, a.stages, &first));
    if (self) first_cm.add(s.gt, first);
  }
  print_miou(std::cout, cm, label_names);
  if (self) std::cout << "stage1_miou=" << io::format_real(first_cm.mean_iou()) << "\n";
  return 0;
}

// --- gradcheck --------------------------------------------------------------

int run_gradcheck(std::uint64_t seed) {
  const GradCheckSetup setup;
  const auto report = grad_check(setup, seed);
  std::cout << "tensor coords max_rel_err flagged\n";
  for (const auto& t : report.tensors) {
    std::cout << t.name << " " << t.coords << " " << io::format_real(t.max_rel_err) << " " << t.flagged << "\n";
  }
  std::cout << "max_rel_err=" << io::format_real(report.max_rel_err)
            << " threshold=" << io::format_real(report.threshold) << " status=" << (report.passed() ? "pass" : "fail")
            << "\n";
  return report.passed() ? 0 : kDataError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point painting and attribute-token point encoder experiments"};
  app.require_subcommand(1, 1);
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads for per-scene and kernel loops")
      ->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic scene: <out>, <out>.calib.txt, <out>.mask");
  gen_cmd->add_option("--seed", gen.seed, "Scene seed");
  gen_cmd->add_option("--out", gen.out, "Cloud output path")->required();
  gen_cmd->add_option("--config", gen.config, "JSON config; its scene section is used");
  gen_cmd->add_option("--noise", gen.noise, "Mask noise rate near class boundaries")->check(CLI::Range(0.0, 1.0));

  PaintArgs paint;
  auto* paint_cmd = app.add_subcommand("paint", "Append sem/inst columns from a labeled image mask");
  paint_cmd->add_option("--cloud", paint.cloud, "Cloud text file")->required();
  paint_cmd->add_option("--calib", paint.calib, "KITTI calibration file")->required();
  paint_cmd->add_option("--mask", paint.mask, "Labeled mask file")->required();
  paint_cmd->add_option("--out", paint.out, "Painted cloud output")->required();
  paint_cmd->add_option("--classes", paint.classes, "Number of semantic classes")->check(CLI::PositiveNumber);
  paint_cmd->add_option("--noise", paint.noise, "Corrupt the mask at this rate before painting")
      ->check(CLI::Range(0.0, 1.0));
  paint_cmd->add_option("--seed", paint.seed, "Seed for --noise");

  SelfPaintArgs sp;
  auto* sp_cmd = app.add_subcommand("selfpaint", "Build the self-painting input for stage 1 or 2");
  sp_cmd->add_option("--stage", sp.stage, "1: unknown labels; 2: labels from --pred")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  sp_cmd->add_option("--cloud", sp.cloud, "Cloud text file")->required();
  sp_cmd->add_option("--out", sp.out, "Output cloud")->required();
  sp_cmd->add_option("--pred", sp.pred, "Stage-one predictions, one label per line");
  sp_cmd->add_option("--classes", sp.classes, "Number of semantic classes")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on synthetic scenes and write a checkpoint");
  train_cmd->add_option("--config", tr.config, "JSON experiment config");
  train_cmd->add_option("--seed", tr.seed, "Overrides the config seed");
  train_cmd->add_option("--out", tr.out, "Checkpoint output")->required();
  train_cmd->add_option("--noise", tr.noise, "Overrides scene.mask_noise_rate")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--log", tr.log, "Metrics file (default: stdout)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions or a checkpoint");
  eval_cmd->add_option("--pred", ev.pred, "Predicted labels file");
  eval_cmd->add_option("--gt", ev.gt, "Ground-truth labels file");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint to run");
  eval_cmd->add_option("--cloud", ev.cloud, "Cloud for --ckpt (scored when it has a gt column)");
  eval_cmd->add_option("--config", ev.config, "Score --ckpt on this config's holdout scenes");
  eval_cmd->add_option("--seed", ev.seed, "Overrides the config seed");
  eval_cmd->add_option("--out", ev.out, "Write --cloud predictions here");
  eval_cmd->add_option("--classes", ev.classes, "Number of classes for --pred/--gt")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--stages", ev.stages, "Self-painting passes")->check(CLI::Range(2, 64));

  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every encoder gradient");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  kernels::set_num_threads(workers);
  try {
    if (*gen_cmd) return run_gen(gen);
    if (*paint_cmd) return run_paint(paint);
    if (*sp_cmd) return run_selfpaint(sp);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc_seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
