#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <vector>

#include "pep/io.hpp"
#include "pep/rng.hpp"
#include "pep/synth.hpp"
#include "support.hpp"

using namespace pep;

namespace {

std::string calib_text(const std::string& p2 = "1 0 0 0 0 1 0 0 0 0 1 0") {
  return "P2: " + p2 + "\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("format_real is the shortest round-tripping text") {
  CHECK(io::format_real(1.0) == "1.0");
  CHECK(io::format_real(0.1) == "0.1");
  CHECK(io::format_real(-2.5) == "-2.5");
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.below(200)) - 100);
    CHECK(std::stod(io::format_real(v)) == v);
  }
}

TEST_CASE("kitti bin: single record") {
  test::TempDir dir("bin");
  const float rec[4] = {1.0f, 2.0f, 3.0f, 0.5f};
  std::string bytes;
  for (float f : rec) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  io::write_file(dir.file("one.bin"), bytes);
  const auto cloud = io::read_kitti_bin(dir.file("one.bin"));
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.at(0, 0) == 1.0);
  CHECK(cloud.at(0, 1) == 2.0);
  CHECK(cloud.at(0, 2) == 3.0);
  CHECK(cloud.at(0, 3) == 0.5);
  CHECK(cloud.schema().index_of("intensity") == 3);
}

TEST_CASE("kitti bin: empty file, bad length, missing file") {
  test::TempDir dir("bin");
  io::write_file(dir.file("empty.bin"), "");
  CHECK(io::read_kitti_bin(dir.file("empty.bin")).size() == 0);
  io::write_file(dir.file("bad.bin"), std::string(17, '\0'));
  CHECK(error_of([&] { io::read_kitti_bin(dir.file("bad.bin")); }).find("16") != std::string::npos);
  CHECK_THROWS_AS(io::read_kitti_bin(dir.file("nope.bin")), Error);
}

TEST_CASE("kitti bin: write then read is the identity on float32 values") {
  test::TempDir dir("bin");
  Rng rng(4);
  AttributeSchema s({AttrDesc::continuous("x"), AttrDesc::continuous("y"), AttrDesc::continuous("z"),
                     AttrDesc::continuous("intensity")});
  std::vector<double> v;
  for (int i = 0; i < 400; ++i) v.push_back(static_cast<float>(rng.uniform(-80.0, 80.0)));
  v.push_back(std::numeric_limits<float>::denorm_min());
  v.push_back(-0.0);
  v.push_back(std::numeric_limits<float>::max());
  v.push_back(std::numeric_limits<float>::lowest());
  const PointCloud cloud(s, v);
  io::write_kitti_bin(dir.file("c.bin"), cloud);
  const auto back = io::read_kitti_bin(dir.file("c.bin"));
  REQUIRE(back.size() == cloud.size());
  CHECK(std::memcmp(back.values().data(), cloud.values().data(), v.size() * sizeof(double)) == 0);
}

TEST_CASE("kitti calib: identity matrices") {
  const auto c = io::parse_kitti_calib(calib_text());
  CHECK(c.P == (Mat34() << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0).finished());
  CHECK(c.R_rect == Mat4::Identity());
  CHECK(c.T_velo_cam == Mat4::Identity());
  CHECK(c.image_w == 1242);
  CHECK(c.image_h == 375);
}

TEST_CASE("kitti calib: errors name the key") {
  CHECK(error_of([] { io::parse_kitti_calib(calib_text("1 0 0 0 0 1 0 0 0 0 1")); }).find("P2") != std::string::npos);
  const std::string no_r0 = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  CHECK(error_of([&] { io::parse_kitti_calib(no_r0); }).find("R0_rect") != std::string::npos);
  const auto bad_num = error_of([] { io::parse_kitti_calib(calib_text("1 0 0 0 0 1 0 zero 0 0 1 0")); });
  CHECK(bad_num.find("P2") != std::string::npos);
  CHECK(bad_num.find("line 1") != std::string::npos);
  CHECK(bad_num.find("column 19") != std::string::npos);
  CHECK(error_of([] { io::parse_kitti_calib(calib_text() + "garbage line\n"); }).find("line 4") != std::string::npos);
  CHECK_THROWS_AS(io::parse_kitti_calib(calib_text("0 0 0 0 0 0 0 0 0 0 0 0")), Error);
}

TEST_CASE("kitti calib: real sample projects like the matrix oracle") {
  const auto c = io::read_kitti_calib(PEP_TEST_DATA "/kitti_calib_000000.txt");
  CHECK(c.P(0, 0) == 721.5377);
  CHECK(c.P(1, 3) == 0.2163791);
  CHECK(c.R_rect(3, 3) == 1.0);
  CHECK(c.R_rect(0, 3) == 0.0);
  CHECK(c.T_velo_cam(2, 3) == -0.2717806);
  // A point 15 m ahead, 1 m left, 0.5 m below the sensor.
  const double x = 15.0, y = 1.0, z = -0.5;
  const auto proj = project_points(PointCloud(lidar_schema(), {x, y, z, 0.3, 0.0}), c)[0];
  double u, v, depth;
  test::oracle_project(c, x, y, z, u, v, depth);
  CHECK(std::abs(proj.u - u) <= 1e-9);
  CHECK(std::abs(proj.v - v) <= 1e-9);
  CHECK(proj.visible);
  // Left of the optical axis and below the horizon in a 1242 x 375 image.
  CHECK(u < 609.5593);
  CHECK(v > 172.854);
}

TEST_CASE("kitti calib: format/parse round trip with image size") {
  const auto c = synth::default_camera();
  CHECK(io::parse_kitti_calib(io::format_kitti_calib(c)) == c);
}

TEST_CASE("cloud text: round trip, empty cloud and sentinel") {
  Rng rng(2);
  const auto s = lidar_schema().with(AttrDesc::categorical("sem", 4)).with(AttrDesc::categorical("inst", 64));
  std::vector<double> v;
  std::vector<int> gt;
  for (int i = 0; i < 50; ++i) {
    for (int a = 0; a < 5; ++a) v.push_back(rng.uniform(-50.0, 50.0) * std::pow(10.0, rng.uniform_int(-8, 8)));
    v.push_back(rng.uniform_int(-1, 3));
    v.push_back(rng.uniform_int(-1, 63));
    gt.push_back(rng.uniform_int(0, 3));
  }
  const PointCloud cloud(s, v, gt);
  const auto text = io::format_cloud_text(cloud);
  CHECK(text.rfind("x:f y:f z:f intensity:f t:f sem:c4 inst:c64 gt:l\n", 0) == 0);
  CHECK(io::parse_cloud_text(text) == cloud);
  CHECK(io::format_cloud_text(io::parse_cloud_text(text)) == text);

  const PointCloud empty(s, {});
  CHECK(io::parse_cloud_text(io::format_cloud_text(empty)) == empty);

  const PointCloud sentinel(AttributeSchema({AttrDesc::categorical("sem", 3)}), {-1, 2, -1});
  const auto back = io::parse_cloud_text(io::format_cloud_text(sentinel));
  CHECK(back.at(0, 0) == -1);
  CHECK(back.at(2, 0) == -1);
}

TEST_CASE("cloud text errors") {
  CHECK_THROWS_AS(io::parse_cloud_text(""), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f y:q\n1 2\n"), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f y:f\n1 2 3\n"), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f y:f\n1\n"), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f s:c2\n1 2\n"), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f s:c0\n1 0\n"), Error);
  CHECK_THROWS_AS(io::parse_cloud_text("x:f\nabc\n"), Error);
}

TEST_CASE("mask text round trip and errors") {
  synth::SceneConfig cfg;
  cfg.seed = 1;
  const auto mask = synth::gen_scene(cfg).mask;
  CHECK(io::parse_mask_text(io::format_mask_text(mask)) == mask);
  CHECK_THROWS_AS(io::parse_mask_text("mask 2 1\n0 0\n"), Error);
  CHECK_THROWS_AS(io::parse_mask_text("mask 1 1\n0\n0\n5\n"), Error);
  CHECK_THROWS_AS(io::parse_mask_text("mask 1 1\n-2\n0\n"), Error);
  CHECK_THROWS_AS(io::parse_mask_text("grid 1 1\n0\n0\n"), Error);
}

TEST_CASE("labels round trip") {
  test::TempDir dir("labels");
  const std::vector<int> labels{0, 3, 2, 2, 1};
  io::write_labels(dir.file("l.txt"), labels);
  CHECK(io::read_labels(dir.file("l.txt")) == labels);
  io::write_file(dir.file("bad.txt"), "1\n2 3\n");
  CHECK_THROWS_AS(io::read_labels(dir.file("bad.txt")), Error);
}

}
