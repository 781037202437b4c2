#include "pep/geometry.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "pep/kernels.hpp"
#include "pep/rng.hpp"

namespace pep {

Mat34 Calibration::chain() const { return P * R_rect * T_velo_cam; }

void Calibration::validate() const {
  const Eigen::RowVector4d bottom(0, 0, 0, 1);
  if (R_rect.row(3) != bottom) throw Error("calibration: R_rect bottom row must be (0,0,0,1)");
  if (T_velo_cam.row(3) != bottom) throw Error("calibration: T_velo_cam bottom row must be (0,0,0,1)");
  if (P.row(2).isZero(0.0)) throw Error("calibration: P depth row is all zero");
  if (image_w <= 0 || image_h <= 0) throw Error("calibration: image extent must be positive");
  if (!P.allFinite() || !R_rect.allFinite() || !T_velo_cam.allFinite()) {
    throw Error("calibration: non-finite matrix entry");
  }
}

void LabeledMask::validate() const {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width <= 0 || height <= 0) throw Error("mask extent must be positive");
  if (semantic.size() != n || instance.size() != n) throw Error("mask arrays do not match extent");
  for (std::size_t i = 0; i < n; ++i) {
    if (semantic[i] < kUnknown || instance[i] < kUnknown) throw Error("mask label below -1");
  }
}

Projection project_points(const PointCloud& cloud, const Calibration& calib) {
  calib.validate();
  const auto& s = cloud.schema();
  const std::size_t ix = s.index_of("x");
  if (s.index_of("y") != ix + 1 || s.index_of("z") != ix + 2) {
    throw Error("project_points: x, y, z must be adjacent attributes");
  }
  const Mat34 chain = calib.chain();
  std::vector<kernels::Projected> raw(cloud.size());
  if (!raw.empty()) {
    kernels::omp::project(chain.data(), cloud.values().data() + ix, cloud.num_attrs(), cloud.size(),
                          calib.image_w, calib.image_h, raw.data());
  }
  Projection out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = {raw[i].u, raw[i].v, raw[i].depth, raw[i].visible};
  return out;
}

PointCloud paint_with_mask(const PointCloud& cloud, const Projection& proj, const LabeledMask& mask,
                           int num_classes) {
  mask.validate();
  if (proj.size() != cloud.size()) {
    throw Error("paint: projection has " + std::to_string(proj.size()) + " points, cloud has " +
                std::to_string(cloud.size()));
  }
  std::vector<double> sem(cloud.size(), kUnknown), inst(cloud.size(), kUnknown);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    const auto& p = proj[i];
    if (!p.visible) continue;
    const int x = static_cast<int>(std::floor(p.u));
    const int y = static_cast<int>(std::floor(p.v));
    if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) {
      throw Error("paint: visible point falls outside the " + std::to_string(mask.width) + "x" +
                  std::to_string(mask.height) + " mask; extents do not match the calibration");
    }
    const int s = mask.sem(x, y);
    const int id = mask.inst(x, y);
    if (s >= num_classes) throw Error("paint: mask class " + std::to_string(s) + " outside class space");
    sem[i] = s;
    inst[i] = id < 0 ? kUnknown : id % kInstanceSlots;
  }
  auto painted = append_column(cloud, AttrDesc::categorical("sem", num_classes), sem);
  return append_column(painted, AttrDesc::categorical("inst", kInstanceSlots), inst);
}

PointCloud paint_with_mask(const PointCloud& cloud, const Calibration& calib, const LabeledMask& mask,
                           int num_classes) {
  if (mask.width != calib.image_w || mask.height != calib.image_h) {
    throw Error("paint: mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                " but the calibration image is " + std::to_string(calib.image_w) + "x" +
                std::to_string(calib.image_h));
  }
  return paint_with_mask(cloud, project_points(cloud, calib), mask, num_classes);
}

PointCloud self_paint_stage1(const PointCloud& cloud, int num_classes) {
  std::vector<double> col(cloud.size(), kUnknown);
  return append_column(cloud, AttrDesc::categorical(kSelfPaintColumn, num_classes), col);
}

PointCloud self_paint_stage2(const PointCloud& cloud, std::span<const int> preds, int num_classes) {
  if (preds.size() != cloud.size()) {
    throw Error("self-paint: " + std::to_string(preds.size()) + " predictions for " +
                std::to_string(cloud.size()) + " points");
  }
  std::vector<double> col(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= num_classes) {
      throw Error("self-paint: stage-two label " + std::to_string(preds[i]) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    }
    col[i] = preds[i];
  }
  return append_column(cloud, AttrDesc::categorical(kSelfPaintColumn, num_classes), col);
}

TwoStageResult run_two_stage(const Segmenter& model, const PointCloud& cloud, int num_classes,
                             int num_stages) {
  if (num_stages < 2) throw Error("self-painting needs at least two stages");
  TwoStageResult r;
  r.stages.push_back(model(self_paint_stage1(cloud, num_classes)));
  for (int s = 1; s < num_stages; ++s) {
    r.stages.push_back(model(self_paint_stage2(cloud, r.stages.back(), num_classes)));
  }
  return r;
}

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
  // Uniform on the sphere via z and azimuth.
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

Mat4 rigid_perturbation(double rot_noise_rad, double trans_noise_m, std::uint64_t seed) {
  if (rot_noise_rad < 0.0 || trans_noise_m < 0.0) throw Error("noise magnitudes must be non-negative");
  Rng rng(seed);
  const Eigen::Vector3d axis = random_unit(rng);
  const Eigen::Vector3d dir = random_unit(rng);
  Mat4 d = Mat4::Identity();
  d.topLeftCorner<3, 3>() = Eigen::AngleAxisd(rot_noise_rad, axis).toRotationMatrix();
  d.topRightCorner<3, 1>() = trans_noise_m * dir;
  return d;
}

Calibration perturb_calibration(const Calibration& calib, double rot_noise_rad, double trans_noise_m,
                                std::uint64_t seed) {
  const Mat4 d = rigid_perturbation(rot_noise_rad, trans_noise_m, seed);
  if (rot_noise_rad == 0.0 && trans_noise_m == 0.0) return calib;
  Calibration out = calib;
  out.T_velo_cam = d * calib.T_velo_cam;
  out.T_velo_cam.row(3) << 0, 0, 0, 1;
  return out;
}

}  // namespace pep
