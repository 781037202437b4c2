// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pep/encoder.hpp"
#include "pep/geometry.hpp"
#include "pep/grad.hpp"
#include "pep/io.hpp"
#include "pep/rng.hpp"
#include "pep/synth.hpp"
#include "pep/train.hpp"
#include "support.hpp"

using namespace pep;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Outcome a1_gradients() {
  const auto t0 = Clock::now();
  GradCheckSetup setup;  // 12 points, 7 attributes, d=4, C=4, eps=1e-3
  const auto report = grad_check(setup, 0);
  const double secs = seconds_since(t0);
  return {report.passed() && secs < 60.0 && !report.tensors.empty(),
          "max_rel_err=" + fmt(report.max_rel_err) + " tensors=" + std::to_string(report.tensors.size()) +
              " seconds=" + fmt(secs)};
}

Outcome a2_shapes() {
  const std::vector<std::pair<int, int>> shapes{{3, 2}, {5, 4}, {7, 4}};
  std::string detail;
  bool ok = true;
  for (auto [m, d] : shapes) {
    std::vector<AttrDesc> attrs;
    for (int i = 0; i < m; ++i) {
      attrs.push_back(i % 2 ? AttrDesc::categorical("c" + std::to_string(i), 3)
                            : AttrDesc::continuous("f" + std::to_string(i)));
    }
    const AttributeSchema s(attrs);
    EncoderConfig cfg;
    cfg.d = d;
    const auto params = init_params(s, cfg, 1);
    std::vector<double> point(static_cast<std::size_t>(m), 1.0);
    const auto len = encode_point(point, s, params, cfg).size();
    ok = ok && len == static_cast<std::size_t>(m * d);
    detail += "(" + std::to_string(m) + "," + std::to_string(d) + ")->" + std::to_string(len) + " ";
  }
  return {ok, detail};
}

Outcome a3_oracle_painting() {
  std::size_t visible = 0, correct = 0, invisible = 0, invisible_ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synth::SceneConfig sc;
    sc.seed = seed;
    const auto scene = synth::gen_scene(sc);
    const auto proj = project_points(scene.cloud, scene.calib);
    const auto painted = paint_with_mask(scene.cloud, proj, scene.mask, synth::kNumClasses);
    const auto sem = painted.schema().index_of("sem");
    const auto inst = painted.schema().index_of("inst");
    const auto& gt = *scene.cloud.gt_labels();
    for (std::size_t i = 0; i < painted.size(); ++i) {
      if (proj[i].visible) {
        ++visible;
        correct += painted.at(i, sem) == gt[i];
      } else {
        ++invisible;
        invisible_ok += painted.at(i, sem) == -1 && painted.at(i, inst) == -1;
      }
    }
  }
  return {visible > 0 && invisible > 0 && correct == visible && invisible_ok == invisible,
          "visible=" + std::to_string(correct) + "/" + std::to_string(visible) +
              " invisible=" + std::to_string(invisible_ok) + "/" + std::to_string(invisible)};
}

ExperimentConfig experiment(PaintMode mode, std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.painting = mode;
  c.optimizer.steps = 2000;
  c.optimizer.log_every = 2000;
  return c;
}

struct Run {
  EvalResult eval;
  double seconds = 0.0;
};

Run run(PaintMode mode, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto cfg = experiment(mode, seed);
  const auto r = train(cfg);
  Run out{evaluate(r.model, r.data.holdout, mode, cfg.stages), 0.0};
  out.seconds = seconds_since(t0);
  return out;
}

Outcome a4_painting_helps() {
  double mask = 0.0, none = 0.0, worst = 0.0;
  std::string per;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto m = run(PaintMode::Mask, s);
    const auto n = run(PaintMode::None, s);
    mask += m.eval.miou / 5.0;
    none += n.eval.miou / 5.0;
    worst = std::max({worst, m.seconds, n.seconds});
    per += " s" + std::to_string(s) + "=" + fmt(m.eval.miou) + "/" + fmt(n.eval.miou);
  }
  return {mask >= 0.95 && mask - none >= 0.05 && worst < 300.0,
          "mask_mean=" + fmt(mask) + " none_mean=" + fmt(none) + " slowest_run_s=" + fmt(worst) + per};
}

Outcome a5_self_correction() {
  double s1 = 0.0, s2 = 0.0, worst = 0.0;
  bool blind_equal = true;
  std::string per;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto t0 = Clock::now();
    const auto cfg = experiment(PaintMode::Self, s);
    const auto r = train(cfg);
    const auto e = evaluate(r.model, r.data.holdout, PaintMode::Self, cfg.stages);
    worst = std::max(worst, seconds_since(t0));
    s1 += *e.stage1_miou / 5.0;
    s2 += e.miou / 5.0;
    per += " s" + std::to_string(s) + "=" + fmt(*e.stage1_miou) + "->" + fmt(e.miou);

    auto blind = r.model;
    zero_attribute(blind.params, kSelfPaintColumn);
    for (const auto& scene : r.data.holdout) {
      std::vector<int> first;
      const auto last = predict_scene(blind, scene, PaintMode::Self, cfg.stages, &first);
      blind_equal = blind_equal && last == first;
    }
  }
  return {s2 >= s1 && blind_equal && worst < 300.0,
          "stage1_mean=" + fmt(s1) + " stage2_mean=" + fmt(s2) +
              " zeroed_selfsem_identical=" + (blind_equal ? "yes" : "no") + per};
}

Outcome a6_noise_degradation() {
  const std::vector<double> rates{0.0, 0.1, 0.3};
  std::vector<double> frac;
  for (double rate : rates) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      synth::SceneConfig sc;
      sc.seed = seed;
      sc.mask_noise_rate = rate;
      const auto scene = synth::gen_scene(sc);
      const auto proj = project_points(scene.cloud, scene.calib);
      const auto painted = paint_with_mask(scene.cloud, proj, scene.mask, synth::kNumClasses);
      const auto sem = painted.schema().index_of("sem");
      const auto& gt = *scene.cloud.gt_labels();
      std::size_t visible = 0, correct = 0;
      for (std::size_t i = 0; i < painted.size(); ++i) {
        if (!proj[i].visible) continue;
        ++visible;
        correct += painted.at(i, sem) == gt[i];
      }
      sum += static_cast<double>(correct) / static_cast<double>(visible);
    }
    frac.push_back(sum / 5.0);
  }
  std::string detail;
  bool ok = true;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    detail += "rate" + fmt(rates[i]) + "=" + fmt(frac[i]) + " ";
    if (i > 0) ok = ok && frac[i] <= frac[i - 1];
  }
  return {ok, detail};
}

Outcome a7_numerics() {
  Rng rng(2024);
  double attn_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<AttrDesc> attrs;
    const int m = rng.uniform_int(1, 9);
    for (int i = 0; i < m; ++i) {
      attrs.push_back(rng.bernoulli(0.5) ? AttrDesc::continuous("a" + std::to_string(i))
                                         : AttrDesc::categorical("a" + std::to_string(i), 5));
    }
    const AttributeSchema s(attrs);
    EncoderConfig cfg;
    cfg.d = rng.uniform_int(1, 8);
    const auto params = init_params(s, cfg, rng.next());
    std::vector<double> point;
    for (const auto& a : attrs) point.push_back(a.is_categorical() ? rng.uniform_int(-1, 4) : rng.uniform(-50, 50));
    const auto w = attention_weights(tokenize(point, s, params, cfg), params, cfg);
    for (int i = 0; i < m; ++i) {
      double sum = 0.0;
      for (int j = 0; j < m; ++j) sum += w[static_cast<std::size_t>(i * m + j)];
      attn_err = std::max(attn_err, std::abs(sum - 1.0));
    }
  }

  double ce_err = 0.0;
  for (int c : {2, 4, 7, 19}) {
    grad::Tape tape;
    auto logits = tape.constant(grad::Tensor({3, static_cast<std::size_t>(c)},
                                             std::vector<double>(static_cast<std::size_t>(3 * c), 0.25)));
    const std::vector<int> targets{0, c - 1, c / 2};
    const double ce = tape.value(tape.cross_entropy(logits, targets))[0];
    ce_err = std::max(ce_err, std::abs(ce - std::log(static_cast<double>(c))));
  }

  const auto calib = io::read_kitti_calib(PEP_TEST_DATA "/kitti_calib_000000.txt");
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) {
    v.insert(v.end(), {rng.uniform(2, 80), rng.uniform(-80, 80), rng.uniform(-3, 3), 0.0, 0.0});
  }
  const PointCloud cloud(lidar_schema(), v);
  const auto proj = project_points(cloud, calib);
  double proj_err = 0.0;
  int compared = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double u, vv, depth;
    test::oracle_project(calib, cloud.at(i, 0), cloud.at(i, 1), cloud.at(i, 2), u, vv, depth);
    // Points grazing the image plane have unbounded u, v.
    if (std::abs(depth) < 1.0) continue;
    ++compared;
    proj_err = std::max({proj_err, std::abs(proj[i].u - u), std::abs(proj[i].v - vv), std::abs(proj[i].depth - depth)});
  }
  return {attn_err <= 1e-12 && ce_err <= 1e-12 && proj_err <= 1e-9,
          "attn_row_err=" + fmt(attn_err) + " ce_err=" + fmt(ce_err) + " proj_err=" + fmt(proj_err) + " points=" + std::to_string(compared)};
}

Outcome a8_determinism_formats() {
  std::vector<std::string> failures;
  const std::string cfg_json =
      R"({"train_scenes": 2, "holdout_scenes": 1, "scene": {"n_points": 64}, "optimizer": {"steps": 20, "log_every": 10}})";
  const std::string cli = std::string(" && '") + PEP_CLI + "' ";
  struct Cmd {
    std::string name, setup, args;
    std::vector<std::string> files;
  };
  const std::string gen = "gen --seed 5 --out s.txt";
  const std::string trained = "train --config cfg.json --seed 4 --out ck.bin" + cli + gen;
  const std::vector<Cmd> cmds{
      {"gen", "", "gen --seed 5 --noise 0.2 --out s.txt", {"s.txt", "s.txt.mask", "s.txt.calib.txt"}},
      {"paint", gen, "paint --cloud s.txt --calib s.txt.calib.txt --mask s.txt.mask --noise 0.3 --seed 2 --out p.txt",
       {"p.txt"}},
      {"selfpaint", trained + cli + "eval --ckpt ck.bin --cloud s.txt --out pred.txt",
       "selfpaint --stage 2 --cloud s.txt --pred pred.txt --out sp.txt", {"sp.txt"}},
      {"train", "", "train --config cfg.json --seed 4 --out ck.bin --log m.txt", {"ck.bin", "m.txt"}},
      {"eval", trained, "eval --ckpt ck.bin --cloud s.txt --out pred.txt", {"pred.txt"}},
      {"gradcheck", "", "gradcheck --seed 1", {}},
  };
  for (const auto& c : cmds) {
    test::TempDir a("acc_a"), b("acc_b");
    std::vector<test::CommandResult> res;
    bool setup_ok = true;
    for (auto* dir : {&a, &b}) {
      io::write_file(dir->file("cfg.json"), cfg_json);
      if (!c.setup.empty()) setup_ok = setup_ok && test::run_cli(c.setup, *dir).exit_code == 0;
      res.push_back(test::run_cli(c.args, *dir));
    }
    bool same = setup_ok && res[0].exit_code == 0 && res[1].exit_code == 0 && res[0].out == res[1].out;
    for (const auto& f : c.files) same = same && test::slurp(a.file(f)) == test::slurp(b.file(f));
    if (!same) failures.push_back("cli:" + c.name);
  }

  test::TempDir dir("acc_fmt");
  Rng rng(8);
  std::vector<double> v;
  for (int i = 0; i < 500; ++i) {
    for (int a = 0; a < 4; ++a) v.push_back(static_cast<float>(rng.uniform(-100, 100)));
  }
  const AttributeSchema bin_schema({AttrDesc::continuous("x"), AttrDesc::continuous("y"), AttrDesc::continuous("z"),
                                    AttrDesc::continuous("intensity")});
  const PointCloud bin_cloud(bin_schema, v);
  io::write_kitti_bin(dir.file("c.bin"), bin_cloud);
  if (!(io::read_kitti_bin(dir.file("c.bin")) == bin_cloud)) failures.push_back("kitti_bin");

  synth::SceneConfig sc;
  sc.seed = 3;
  const auto painted = paint_with_mask(synth::gen_scene(sc).cloud, synth::default_camera(), synth::gen_scene(sc).mask,
                                       synth::kNumClasses);
  io::write_cloud(dir.file("c.txt"), painted);
  if (!(io::read_cloud(dir.file("c.txt")) == painted)) failures.push_back("cloud_text");

  const std::string good_rest = "R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  const std::vector<std::pair<std::string, std::string>> bad{
      {"P2: 1 0 0 0 0 1 0 0 0 0 1\n" + good_rest, "P2"},
      {"P2: 1 0 0 0 0 1 0 0 0 0 1 x\n" + good_rest, "P2"},
      {"P2: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n", "R0_rect"},
      {"P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n", "R0_rect"},
      {"P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n", "Tr_velo_to_cam"},
  };
  for (const auto& [text, key] : bad) {
    std::string msg;
    try {
      io::parse_kitti_calib(text);
    } catch (const Error& e) {
      msg = e.what();
    }
    if (msg.find(key) == std::string::npos) failures.push_back("calib:" + key);
  }

  std::string detail = failures.empty() ? "cli=6/6 bin=ok cloud_text=ok calib_errors=5/5" : "failed:";
  for (const auto& f : failures) detail += " " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1_gradients},        {"A2", a2_shapes},          {"A3", a3_oracle_painting},
      {"A4", a4_painting_helps},   {"A5", a5_self_correction}, {"A6", a6_noise_degradation},
      {"A7", a7_numerics},         {"A8", a8_determinism_formats},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " " << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
