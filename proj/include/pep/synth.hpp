#pragma once

#include <cstdint>
#include <vector>

#include "pep/core.hpp"
#include "pep/geometry.hpp"

namespace pep::synth {

enum SceneClass : int { kGround = 0, kVehicle = 1, kPole = 2, kPedestrian = 3 };
inline constexpr int kNumClasses = 4;

ClassSpace class_space();

// 320 x 96 pinhole camera at the lidar origin looking along lidar +x.
Calibration default_camera();

struct CountRange {
  int min = 0;
  int max = 0;
};

struct SceneConfig {
  std::uint64_t seed = 0;
  int n_points = 512;
  CountRange vehicles{2, 4};
  CountRange poles{2, 5};
  CountRange pedestrians{2, 5};
  double extent = 30.0;  // sensing range in meters
  double lidar_height = 1.7;
  double out_of_view_fraction = 0.05;
  Calibration camera = default_camera();
  double mask_noise_rate = 0.0;
  double drop_rate = 0.0;

  void validate() const;
};

struct Scene {
  PointCloud cloud;               // x, y, z, intensity, t with ground-truth classes
  std::vector<int> gt_instance;   // -1 for ground
  LabeledMask mask;
  Calibration calib;
};

// Points are first hits of rays cast through camera pixel centers (plus a
// fraction of out-of-view lidar rays); the mask is rendered by the same ray
// caster, so at zero noise every visible point paints its own class.
Scene gen_scene(const SceneConfig& config);

// Resamples, with probability `rate`, every pixel within 2 px (Chebyshev)
// of a semantic boundary to the label of a neighboring region. Draws are
// made for every eligible pixel regardless of rate, so for a fixed seed the
// flipped set grows monotonically with rate.
LabeledMask corrupt_mask(const LabeledMask& mask, double rate, std::uint64_t seed);

// Pixels within 2 px of a different semantic label.
std::vector<bool> boundary_pixels(const LabeledMask& mask);

}  // namespace pep::synth
