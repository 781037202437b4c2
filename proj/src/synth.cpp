#include "pep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "pep/rng.hpp"

namespace pep::synth {
namespace {

using Vec3 = Eigen::Vector3d;

constexpr double kMinT = 1e-9;
constexpr double kPi = std::numbers::pi;

// Seed streams; each concern draws from its own generator.
enum Stream : std::uint64_t { kLayout = 1, kPixels, kAttributes, kOutOfView, kMaskNoise, kDropout };

enum class Shape { Box, Cylinder, Sphere };

struct Primitive {
  Shape shape;
  int cls;
  int instance;
  Vec3 center;
  Vec3 half;  // box: half extents; cylinder: (radius, -, half height); sphere: (radius, -, -)
  double yaw = 0.0;
};

std::optional<double> hit_box(const Primitive& p, const Vec3& o, const Vec3& d) {
  const double c = std::cos(-p.yaw), s = std::sin(-p.yaw);
  const Vec3 rel = o - p.center;
  const Vec3 lo(c * rel.x() - s * rel.y(), s * rel.x() + c * rel.y(), rel.z());
  const Vec3 ld(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-15) {
      if (std::abs(lo[a]) > p.half[a]) return std::nullopt;
      continue;
    }
    double ta = (-p.half[a] - lo[a]) / ld[a];
    double tb = (p.half[a] - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 < kMinT) return std::nullopt;
  return t0 > kMinT ? t0 : t1;
}

std::optional<double> hit_cylinder(const Primitive& p, const Vec3& o, const Vec3& d) {
  const double r = p.half.x();
  const double z0 = p.center.z() - p.half.z();
  const double z1 = p.center.z() + p.half.z();
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t > kMinT && (!best || t < *best)) best = t;
  };
  const double ox = o.x() - p.center.x(), oy = o.y() - p.center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        const double z = o.z() + t * d.z();
        if (z >= z0 && z <= z1) consider(t);
      }
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {z0, z1}) {
      const double t = (zc - o.z()) / d.z();
      const double x = ox + t * d.x(), y = oy + t * d.y();
      if (x * x + y * y <= r * r) consider(t);
    }
  }
  return best;
}

std::optional<double> hit_sphere(const Primitive& p, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - p.center;
  const double a = d.dot(d);
  const double b = 2.0 * oc.dot(d);
  const double c = oc.dot(oc) - p.half.x() * p.half.x();
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / (2.0 * a);
  const double t1 = (-b + sq) / (2.0 * a);
  if (t0 > kMinT) return t0;
  if (t1 > kMinT) return t1;
  return std::nullopt;
}

struct Hit {
  Vec3 point;
  int cls = kUnknown;
  int instance = kUnknown;
};

class World {
 public:
  World(std::vector<Primitive> prims, double ground_z, double range)
      : prims_(std::move(prims)), ground_z_(ground_z), range_(range) {}

  // Nearest surface along the ray; a miss when it lies beyond sensing range.
  std::optional<Hit> cast(const Vec3& o, const Vec3& d) const {
    std::optional<double> best;
    Hit h;
    if (std::abs(d.z()) > 1e-15) {
      const double t = (ground_z_ - o.z()) / d.z();
      if (t > kMinT) {
        best = t;
        h.cls = kGround;
        h.instance = kUnknown;
      }
    }
    for (const auto& p : prims_) {
      std::optional<double> t;
      switch (p.shape) {
        case Shape::Box: t = hit_box(p, o, d); break;
        case Shape::Cylinder: t = hit_cylinder(p, o, d); break;
        case Shape::Sphere: t = hit_sphere(p, o, d); break;
      }
      if (t && (!best || *t < *best)) {
        best = t;
        h.cls = p.cls;
        h.instance = p.instance;
      }
    }
    if (!best) return std::nullopt;
    h.point = o + *best * d;
    if (std::hypot(h.point.x(), h.point.y()) > range_) return std::nullopt;
    return h;
  }

 private:
  std::vector<Primitive> prims_;
  double ground_z_;
  double range_;
};

// Back-projection of pixel centers through the calibration chain.
class PixelRays {
 public:
  explicit PixelRays(const Calibration& calib) {
    const Mat34 a = calib.chain();
    const Eigen::Matrix3d m = a.leftCols<3>();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
    if (!lu.isInvertible()) throw Error("scene camera: projection chain is not invertible");
    inv_ = lu.inverse();
    origin_ = -inv_ * a.col(3);
  }
  const Vec3& origin() const { return origin_; }
  Vec3 direction(int px, int py) const { return inv_ * Vec3(px + 0.5, py + 0.5, 1.0); }

 private:
  Eigen::Matrix3d inv_;
  Vec3 origin_;
};

double footprint(const Primitive& p) {
  switch (p.shape) {
    case Shape::Box: return std::hypot(p.half.x(), p.half.y());
    default: return p.half.x();
  }
}

std::vector<Primitive> layout(const SceneConfig& cfg, Rng& rng) {
  std::vector<Primitive> prims;
  const double ground = -cfg.lidar_height;
  const double max_az = 0.7;  // rad; keeps objects inside the default camera view
  const double near = 6.0;
  const double far = std::max(near + 1.0, 0.8 * cfg.extent);
  auto place = [&](Primitive p) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double az = rng.uniform(-max_az, max_az);
      const double dist = rng.uniform(near, far);
      p.center.x() = dist * std::cos(az);
      p.center.y() = dist * std::sin(az);
      bool clear = true;
      for (const auto& q : prims) {
        const double gap = std::hypot(p.center.x() - q.center.x(), p.center.y() - q.center.y());
        if (gap < footprint(p) + footprint(q) + 0.5) {
          clear = false;
          break;
        }
      }
      if (clear) {
        p.instance = static_cast<int>(prims.size());
        prims.push_back(p);
        return;
      }
    }
  };
  const int vehicles = rng.uniform_int(cfg.vehicles.min, cfg.vehicles.max);
  for (int i = 0; i < vehicles; ++i) {
    Primitive p{Shape::Box, kVehicle, 0, {}, {}, rng.uniform(0.0, kPi)};
    p.half = Vec3(rng.uniform(3.5, 4.8) / 2, rng.uniform(1.6, 2.0) / 2, rng.uniform(1.4, 1.9) / 2);
    p.center.z() = ground + p.half.z();
    place(p);
  }
  const int poles = rng.uniform_int(cfg.poles.min, cfg.poles.max);
  for (int i = 0; i < poles; ++i) {
    Primitive p{Shape::Cylinder, kPole, 0, {}, {}, 0.0};
    p.half = Vec3(rng.uniform(0.08, 0.2), 0.0, rng.uniform(3.0, 6.0) / 2);
    p.center.z() = ground + p.half.z();
    place(p);
  }
  const int peds = rng.uniform_int(cfg.pedestrians.min, cfg.pedestrians.max);
  for (int i = 0; i < peds; ++i) {
    Primitive p{Shape::Sphere, kPedestrian, 0, {}, {}, 0.0};
    p.half = Vec3(rng.uniform(0.3, 0.5), 0.0, 0.0);
    p.center.z() = ground + rng.uniform(0.8, 1.2);
    place(p);
  }
  // Instance ids are arbitrary labels: draw distinct slots so they carry no class order.
  std::vector<int> ids(kInstanceSlots);
  for (int i = 0; i < kInstanceSlots; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
    prims[i].instance = ids[i];
  }
  return prims;
}

double base_intensity(int cls) {
  switch (cls) {
    case kGround: return 0.25;
    case kVehicle: return 0.45;
    case kPole: return 0.40;
    default: return 0.30;
  }
}

}  // namespace

ClassSpace class_space() { return {kNumClasses, {"ground", "vehicle", "pole", "pedestrian"}}; }

Calibration default_camera() {
  Calibration c;
  c.image_w = 320;
  c.image_h = 96;
  c.P << 160, 0, 160, 0,
         0, 160, 48, 0,
         0, 0, 1, 0;
  // lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
  c.T_velo_cam << 0, -1, 0, 0,
                  0, 0, -1, 0,
                  1, 0, 0, 0,
                  0, 0, 0, 1;
  return c;
}

void SceneConfig::validate() const {
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (n_points < 1) throw Error("scene: n_points must be >= 1");
  if (!rate_ok(mask_noise_rate) || !rate_ok(drop_rate) || !rate_ok(out_of_view_fraction)) {
    throw Error("scene: rates must lie in [0, 1]");
  }
  for (const auto& r : {vehicles, poles, pedestrians}) {
    if (r.min < 0 || r.max < r.min) throw Error("scene: invalid object count range");
  }
  if (vehicles.max + poles.max + pedestrians.max > kInstanceSlots) {
    throw Error("scene: at most " + std::to_string(kInstanceSlots) + " objects per scene");
  }
  if (!(extent > 0.0) || !(lidar_height > 0.0)) throw Error("scene: extent and lidar height must be positive");
  camera.validate();
}

Scene gen_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng layout_rng(mix_seed(cfg.seed, kLayout));
  const World world(layout(cfg, layout_rng), -cfg.lidar_height, cfg.extent);
  const PixelRays rays(cfg.camera);
  const int w = cfg.camera.image_w, h = cfg.camera.image_h;

  Scene scene;
  scene.calib = cfg.camera;
  scene.mask = LabeledMask(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (auto hit = world.cast(rays.origin(), rays.direction(x, y))) {
        scene.mask.semantic[scene.mask.index(x, y)] = hit->cls;
        scene.mask.instance[scene.mask.index(x, y)] = hit->instance;
      }
    }
  }

  const auto n = static_cast<std::size_t>(cfg.n_points);
  const auto n_out = static_cast<std::size_t>(std::llround(cfg.out_of_view_fraction * static_cast<double>(n)));
  std::vector<Hit> hits;
  hits.reserve(n);

  // In-view points: distinct pixel centers in a seeded order.
  Rng pixel_rng(mix_seed(cfg.seed, kPixels));
  std::vector<std::uint32_t> order(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[pixel_rng.below(i)]);
  for (std::uint32_t px : order) {
    if (hits.size() + n_out >= n) break;
    const int x = static_cast<int>(px % static_cast<std::uint32_t>(w));
    const int y = static_cast<int>(px / static_cast<std::uint32_t>(w));
    if (auto hit = world.cast(rays.origin(), rays.direction(x, y))) hits.push_back(*hit);
  }
  if (hits.empty()) throw Error("scene: the camera sees no scene content");

  // Out-of-view points: lidar rays whose hits do not project into the image.
  Rng out_rng(mix_seed(cfg.seed, kOutOfView));
  const Mat34 chain = cfg.camera.chain();
  std::size_t attempts = 0;
  while (hits.size() < n) {
    if (++attempts > 1000 * n) throw Error("scene: could not place out-of-view points");
    const double az = out_rng.uniform(-kPi, kPi);
    const double el = out_rng.uniform(-0.5, 0.05);
    const Vec3 dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    auto hit = world.cast(Vec3::Zero(), dir);
    if (!hit) continue;
    const Eigen::Vector3d img = chain * hit->point.homogeneous();
    if (img.z() > 1e-12) {
      const double u = img.x() / img.z(), v = img.y() / img.z();
      if (u >= 0.0 && u < w && v >= 0.0 && v < h) continue;
    }
    hits.push_back(*hit);
  }

  Rng attr_rng(mix_seed(cfg.seed, kAttributes));
  Rng drop_rng(mix_seed(cfg.seed, kDropout));
  std::vector<double> values;
  values.reserve(n * 5);
  std::vector<int> gt;
  for (const auto& hit : hits) {
    const double intensity = std::clamp(base_intensity(hit.cls) + attr_rng.uniform(-0.2, 0.2), 0.0, 1.0);
    const double t = attr_rng.uniform(0.0, 0.1);
    const bool dropped = drop_rng.bernoulli(cfg.drop_rate);
    if (dropped) {
      values.insert(values.end(), {0.0, 0.0, 0.0, 0.0, 0.0});
    } else {
      values.insert(values.end(), {hit.point.x(), hit.point.y(), hit.point.z(), intensity, t});
    }
    gt.push_back(hit.cls);
    scene.gt_instance.push_back(hit.instance);
  }
  scene.cloud = PointCloud(lidar_schema(), std::move(values), std::move(gt));
  if (cfg.mask_noise_rate > 0.0) {
    scene.mask = corrupt_mask(scene.mask, cfg.mask_noise_rate, mix_seed(cfg.seed, kMaskNoise));
  }
  return scene;
}

std::vector<bool> boundary_pixels(const LabeledMask& mask) {
  mask.validate();
  std::vector<bool> out(mask.semantic.size(), false);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const int own = mask.sem(x, y);
      bool edge = false;
      for (int dy = -2; dy <= 2 && !edge; ++dy) {
        for (int dx = -2; dx <= 2 && !edge; ++dx) {
          const int qx = x + dx, qy = y + dy;
          if (qx < 0 || qy < 0 || qx >= mask.width || qy >= mask.height) continue;
          edge = mask.sem(qx, qy) != own;
        }
      }
      out[mask.index(x, y)] = edge;
    }
  }
  return out;
}

LabeledMask corrupt_mask(const LabeledMask& mask, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("mask noise rate must lie in [0, 1]");
  const auto eligible = boundary_pixels(mask);
  LabeledMask out = mask;
  Rng rng(seed);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!eligible[mask.index(x, y)]) continue;
      const double u = rng.uniform();
      const std::uint64_t pick = rng.next();
      if (!(u < rate)) continue;
      // Distinct neighboring labels in window raster order, with the
      // instance of their first occurrence.
      const int own = mask.sem(x, y);
      std::vector<std::pair<int, int>> candidates;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int qx = x + dx, qy = y + dy;
          if (qx < 0 || qy < 0 || qx >= mask.width || qy >= mask.height) continue;
          const int s = mask.sem(qx, qy);
          if (s == own) continue;
          if (std::none_of(candidates.begin(), candidates.end(), [s](const auto& c) { return c.first == s; })) {
            candidates.emplace_back(s, mask.inst(qx, qy));
          }
        }
      }
      const auto& [sem, inst] = candidates[pick % candidates.size()];
      out.semantic[mask.index(x, y)] = sem;
      out.instance[mask.index(x, y)] = inst;
    }
  }
  return out;
}

}  // namespace pep::synth
