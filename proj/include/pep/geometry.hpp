#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "pep/core.hpp"

namespace pep {

using Mat34 = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;
using Mat4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;

// Single-camera calibration in KITTI convention.
struct Calibration {
  Mat34 P = Mat34::Zero();                  // camera projection
  Mat4 R_rect = Mat4::Identity();           // rectification, homogeneous
  Mat4 T_velo_cam = Mat4::Identity();       // lidar -> camera rigid transform
  int image_w = 0;
  int image_h = 0;

  // P * R_rect * T_velo_cam.
  Mat34 chain() const;
  // Throws pep::Error when an invariant is violated.
  void validate() const;

  bool operator==(const Calibration&) const = default;
};

struct PointProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool visible = false;
};

using Projection = std::vector<PointProjection>;

// Per-pixel semantic class and instance id, row-major H x W. -1 = none.
struct LabeledMask {
  int width = 0;
  int height = 0;
  std::vector<int> semantic;
  std::vector<int> instance;

  LabeledMask() = default;
  LabeledMask(int w, int h) : width(w), height(h), semantic(static_cast<std::size_t>(w) * h, kUnknown),
                              instance(static_cast<std::size_t>(w) * h, kUnknown) {}

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  int sem(int x, int y) const { return semantic[index(x, y)]; }
  int inst(int x, int y) const { return instance[index(x, y)]; }
  void validate() const;

  bool operator==(const LabeledMask&) const = default;
};

// Embedding-table size used for painted instance ids; ids are stored modulo it.
inline constexpr int kInstanceSlots = 64;

// Projects the x,y,z attributes of every point through the calibration chain.
Projection project_points(const PointCloud& cloud, const Calibration& calib);

// Appends categorical "sem" (cardinality num_classes) and "inst"
// (cardinality kInstanceSlots) columns looked up at (floor(u), floor(v)).
// Invisible points receive (-1, -1).
PointCloud paint_with_mask(const PointCloud& cloud, const Projection& proj, const LabeledMask& mask,
                           int num_classes);
// Projects then paints; throws when the mask extent differs from the image.
PointCloud paint_with_mask(const PointCloud& cloud, const Calibration& calib, const LabeledMask& mask,
                           int num_classes);

inline constexpr const char* kSelfPaintColumn = "selfsem";

// Appends a "selfsem" column filled with the unknown sentinel.
PointCloud self_paint_stage1(const PointCloud& cloud, int num_classes);
// Appends a "selfsem" column holding stage-one predictions in [0, C).
PointCloud self_paint_stage2(const PointCloud& cloud, std::span<const int> preds, int num_classes);

// Any per-point classifier over painted clouds.
using Segmenter = std::function<std::vector<int>(const PointCloud&)>;

struct TwoStageResult {
  std::vector<std::vector<int>> stages;  // stages[0] is the unpainted (-1) pass
  const std::vector<int>& stage1() const { return stages.front(); }
  const std::vector<int>& stage2() const { return stages.at(1); }
};

// Stage 1 infers on the -1 painted cloud; each later stage repaints the
// original cloud with the previous stage's predictions and infers again.
TwoStageResult run_two_stage(const Segmenter& model, const PointCloud& cloud, int num_classes,
                             int num_stages = 2);

// Small-angle rigid perturbation: a rotation of exactly rot_noise_rad about
// a seeded random axis and a translation of length trans_noise_m along a
// seeded random direction, both in the camera frame.
Mat4 rigid_perturbation(double rot_noise_rad, double trans_noise_m, std::uint64_t seed);

// T_velo_cam <- rigid_perturbation(...) * T_velo_cam. Zero noise returns the
// input unchanged.
Calibration perturb_calibration(const Calibration& calib, double rot_noise_rad, double trans_noise_m,
                                std::uint64_t seed);

}  // namespace pep
