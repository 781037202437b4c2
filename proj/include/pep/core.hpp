#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pep {

// Raised for invalid data or violated preconditions on user-supplied inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reserved categorical value meaning "no label available".
inline constexpr int kUnknown = -1;

enum class AttrKind { Continuous, Categorical };

struct AttrDesc {
  std::string name;
  AttrKind kind = AttrKind::Continuous;
  int cardinality = 0;  // Categorical only; excludes the unknown sentinel.
  std::string unit;

  static AttrDesc continuous(std::string name, std::string unit = {}) {
    return {std::move(name), AttrKind::Continuous, 0, std::move(unit)};
  }
  static AttrDesc categorical(std::string name, int cardinality) {
    return {std::move(name), AttrKind::Categorical, cardinality, {}};
  }

  bool is_categorical() const { return kind == AttrKind::Categorical; }
  // Units are informational and not stored by the file formats.
  bool operator==(const AttrDesc& o) const {
    return name == o.name && kind == o.kind && cardinality == o.cardinality;
  }
};

class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<AttrDesc> attrs);

  std::size_t size() const { return attrs_.size(); }
  const AttrDesc& operator[](std::size_t i) const { return attrs_[i]; }
  const std::vector<AttrDesc>& attrs() const { return attrs_; }

  std::optional<std::size_t> find(const std::string& name) const;
  // Throws pep::Error when the attribute is absent.
  std::size_t index_of(const std::string& name) const;

  AttributeSchema with(AttrDesc desc) const;

  bool operator==(const AttributeSchema&) const = default;

 private:
  std::vector<AttrDesc> attrs_;
};

// The x, y, z, intensity, t layout produced by lidar readers and the scene
// generator.
AttributeSchema lidar_schema();

// N x m attribute matrix bound to a schema. Immutable once built.
class PointCloud {
 public:
  PointCloud() = default;
  PointCloud(AttributeSchema schema, std::vector<double> values,
             std::optional<std::vector<int>> gt_labels = std::nullopt);

  const AttributeSchema& schema() const { return schema_; }
  std::size_t size() const { return n_; }
  std::size_t num_attrs() const { return schema_.size(); }

  double at(std::size_t point, std::size_t attr) const { return values_[point * num_attrs() + attr]; }
  std::span<const double> row(std::size_t point) const {
    return {values_.data() + point * num_attrs(), num_attrs()};
  }
  std::span<const double> values() const { return values_; }
  std::vector<double> column(std::size_t attr) const;

  const std::optional<std::vector<int>>& gt_labels() const { return gt_; }
  PointCloud with_gt(std::vector<int> labels) const;

  bool operator==(const PointCloud&) const = default;

 private:
  AttributeSchema schema_;
  std::vector<double> values_;
  std::size_t n_ = 0;
  std::optional<std::vector<int>> gt_;
};

// Throws unless value is kUnknown or an integer in [0, cardinality).
void check_categorical(const AttrDesc& desc, double value);

// Returns a new cloud with `column` appended as the last attribute.
PointCloud append_column(const PointCloud& cloud, AttrDesc desc, std::span<const double> column);

struct ClassSpace {
  int num_classes = 0;
  std::vector<std::string> names;
};

// Row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int gt, int pred);
  void add(std::span<const int> gt, std::span<const int> pred);

  int num_classes() const { return c_; }
  long long at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * c_ + pred)]; }
  long long total() const;

  // Empty when the class is absent from both ground truth and prediction.
  std::optional<double> iou(int cls) const;
  double mean_iou() const;

 private:
  int c_;
  std::vector<long long> counts_;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
};

MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes);

}  // namespace pep
