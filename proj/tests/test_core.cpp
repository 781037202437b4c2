#include <doctest.h>

#include "pep/core.hpp"
#include "pep/rng.hpp"

using namespace pep;

TEST_SUITE("core") {

TEST_CASE("schema rejects duplicate names and zero cardinality") {
  CHECK_THROWS_AS(AttributeSchema({AttrDesc::continuous("x"), AttrDesc::continuous("x")}), Error);
  CHECK_THROWS_AS(AttributeSchema({AttrDesc::categorical("sem", 0)}), Error);
  const auto s = lidar_schema();
  REQUIRE(s.size() == 5);
  CHECK(s.index_of("intensity") == 3);
  CHECK_FALSE(s.find("sem").has_value());
  CHECK_THROWS_AS(s.index_of("sem"), Error);
}

TEST_CASE("point cloud validates shape, categorical range and gt length") {
  AttributeSchema s({AttrDesc::continuous("x"), AttrDesc::categorical("c", 3)});
  CHECK_NOTHROW(PointCloud(s, {0.5, 2, 1.5, -1}));
  CHECK_THROWS_AS(PointCloud(s, {0.5, 2, 1.5}), Error);
  CHECK_THROWS_AS(PointCloud(s, {0.5, 3}), Error);
  CHECK_THROWS_AS(PointCloud(s, {0.5, 1.5}), Error);
  CHECK_THROWS_AS(PointCloud(s, {0.5, -2}), Error);
  CHECK_THROWS_AS(PointCloud(s, {0.5, 1}, std::vector<int>{0, 1}), Error);
}

TEST_CASE("append_column: constant -1 column on m=4") {
  AttributeSchema s({AttrDesc::continuous("a"), AttrDesc::continuous("b"), AttrDesc::continuous("c"),
                     AttrDesc::continuous("d")});
  PointCloud cloud(s, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<double> col{-1, -1};
  const auto out = append_column(cloud, AttrDesc::categorical("sem", 4), col);
  REQUIRE(out.num_attrs() == 5);
  CHECK(out.at(0, 4) == -1);
  CHECK(out.at(1, 4) == -1);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t a = 0; a < 4; ++a) CHECK(out.at(i, a) == cloud.at(i, a));
}

TEST_CASE("append_column: empty cloud") {
  AttributeSchema s({AttrDesc::continuous("a"), AttrDesc::continuous("b"), AttrDesc::continuous("c")});
  PointCloud cloud(s, {});
  const auto out = append_column(cloud, AttrDesc::categorical("sem", 2), std::vector<double>{});
  CHECK(out.size() == 0);
  CHECK(out.num_attrs() == 4);
}

TEST_CASE("append_column: values copied element-wise") {
  AttributeSchema s({AttrDesc::continuous("a"), AttrDesc::continuous("b")});
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[static_cast<std::size_t>(i)] = 0.25 * i;
  PointCloud cloud(s, v, std::vector<int>{0, 1, 2, 0, 1});
  const std::vector<double> col{0, 1, 2, 0, 1};
  const auto out = append_column(cloud, AttrDesc::categorical("k", 3), col);
  for (std::size_t i = 0; i < 5; ++i) CHECK(out.at(i, 2) == col[i]);
  CHECK(out.gt_labels() == cloud.gt_labels());
}

TEST_CASE("append_column errors") {
  PointCloud cloud(lidar_schema(), std::vector<double>(10, 0.0));
  CHECK_THROWS_AS(append_column(cloud, AttrDesc::categorical("s", 2), std::vector<double>{0}), Error);
  CHECK_THROWS_AS(append_column(cloud, AttrDesc::categorical("x", 2), std::vector<double>{0, 0}), Error);
  CHECK_THROWS_AS(append_column(cloud, AttrDesc::categorical("s", 2), std::vector<double>{0, 2}), Error);
  CHECK_THROWS_AS(append_column(cloud, AttrDesc::categorical("s", 2), std::vector<double>{0, 0.5}), Error);
}

TEST_CASE("miou: perfect prediction") {
  const std::vector<int> gt{0, 1, 2, 2, 1};
  CHECK(miou(gt, gt, 3).miou == 1.0);
}

TEST_CASE("miou: total confusion") {
  const std::vector<int> gt{0, 0, 1, 1}, pred{1, 1, 0, 0};
  CHECK(miou(pred, gt, 2).miou == 0.0);
}

TEST_CASE("miou: hand-counted confusion matrix") {
  // gt=(0,0,1,1) pred=(0,1,1,1): class 0 TP=1 FP=0 FN=1 -> 1/2; class 1 TP=2 FP=1 FN=0 -> 2/3.
  const std::vector<int> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto r = miou(pred, gt, 2);
  CHECK(*r.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*r.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("miou: absent class excluded from the mean") {
  const std::vector<int> gt{0, 0, 1}, pred{0, 0, 1};
  const auto r = miou(pred, gt, 3);
  CHECK_FALSE(r.per_class_iou[2].has_value());
  CHECK(r.miou == 1.0);
}

TEST_CASE("miou errors") {
  CHECK_THROWS_AS(miou(std::vector<int>{}, std::vector<int>{}, 2), Error);
  CHECK_THROWS_AS(miou(std::vector<int>{0}, std::vector<int>{0, 1}, 2), Error);
  CHECK_THROWS_AS(miou(std::vector<int>{2}, std::vector<int>{0}, 2), Error);
  CHECK_THROWS_AS(miou(std::vector<int>{0}, std::vector<int>{-1}, 2), Error);
}

TEST_CASE("miou matches a per-class counting oracle on random labels") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(5));
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
      pred[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
    }
    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += gt[i] == k && pred[i] == k;
        fp += gt[i] != k && pred[i] == k;
        fn += gt[i] == k && pred[i] != k;
      }
      if (tp + fp + fn == 0) continue;
      sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      ++present;
    }
    CHECK(miou(pred, gt, c).miou == doctest::Approx(sum / present).epsilon(1e-14));
  }
}

TEST_CASE("rng streams are deterministic and in range") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

}
