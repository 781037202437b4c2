#include "pep/core.hpp"

#include <cmath>
#include <unordered_set>

namespace pep {

AttributeSchema::AttributeSchema(std::vector<AttrDesc> attrs) : attrs_(std::move(attrs)) {
  std::unordered_set<std::string> seen;
  for (const auto& a : attrs_) {
    if (!seen.insert(a.name).second) throw Error("duplicate attribute name '" + a.name + "'");
    if (a.is_categorical() && a.cardinality < 1) {
      throw Error("categorical attribute '" + a.name + "' needs cardinality >= 1");
    }
  }
}

std::optional<std::size_t> AttributeSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < attrs_.size(); ++i) {
    if (attrs_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t AttributeSchema::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw Error("missing attribute '" + name + "'");
}

AttributeSchema AttributeSchema::with(AttrDesc desc) const {
  auto attrs = attrs_;
  attrs.push_back(std::move(desc));
  return AttributeSchema(std::move(attrs));
}

AttributeSchema lidar_schema() {
  return AttributeSchema({AttrDesc::continuous("x", "m"), AttrDesc::continuous("y", "m"),
                          AttrDesc::continuous("z", "m"), AttrDesc::continuous("intensity"),
                          AttrDesc::continuous("t", "s")});
}

void check_categorical(const AttrDesc& desc, double value) {
  if (value == kUnknown) return;
  if (!(value >= 0.0) || value >= desc.cardinality || std::floor(value) != value) {
    throw Error("categorical attribute '" + desc.name + "' has invalid id " + std::to_string(value) +
                " (cardinality " + std::to_string(desc.cardinality) + ")");
  }
}

PointCloud::PointCloud(AttributeSchema schema, std::vector<double> values,
                       std::optional<std::vector<int>> gt_labels)
    : schema_(std::move(schema)), values_(std::move(values)), gt_(std::move(gt_labels)) {
  const std::size_t m = schema_.size();
  if (m == 0) {
    if (!values_.empty()) throw Error("values given for an empty schema");
    n_ = gt_ ? gt_->size() : 0;
  } else {
    if (values_.size() % m != 0) throw Error("value count is not a multiple of the attribute count");
    n_ = values_.size() / m;
  }
  if (gt_ && gt_->size() != n_) throw Error("ground-truth label count does not match point count");
  for (std::size_t a = 0; a < m; ++a) {
    if (!schema_[a].is_categorical()) continue;
    for (std::size_t i = 0; i < n_; ++i) check_categorical(schema_[a], values_[i * m + a]);
  }
}

std::vector<double> PointCloud::column(std::size_t attr) const {
  std::vector<double> out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = at(i, attr);
  return out;
}

PointCloud PointCloud::with_gt(std::vector<int> labels) const {
  return PointCloud(schema_, values_, std::move(labels));
}

PointCloud append_column(const PointCloud& cloud, AttrDesc desc, std::span<const double> column) {
  const std::size_t n = cloud.size();
  if (column.size() != n) {
    throw Error("column length " + std::to_string(column.size()) + " does not match point count " +
                std::to_string(n));
  }
  if (cloud.schema().find(desc.name)) throw Error("duplicate attribute name '" + desc.name + "'");
  if (desc.is_categorical()) {
    if (desc.cardinality < 1) throw Error("categorical attribute '" + desc.name + "' needs cardinality >= 1");
    for (double v : column) check_categorical(desc, v);
  }
  const std::size_t m = cloud.num_attrs();
  std::vector<double> values;
  values.reserve(n * (m + 1));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = cloud.row(i);
    values.insert(values.end(), r.begin(), r.end());
    values.push_back(column[i]);
  }
  return PointCloud(cloud.schema().with(std::move(desc)), std::move(values), cloud.gt_labels());
}

ConfusionMatrix::ConfusionMatrix(int num_classes) : c_(num_classes) {
  if (num_classes < 1) throw Error("class count must be positive");
  counts_.assign(static_cast<std::size_t>(c_) * c_, 0);
}

void ConfusionMatrix::add(int gt, int pred) {
  if (gt < 0 || gt >= c_ || pred < 0 || pred >= c_) {
    throw Error("class id out of range: gt=" + std::to_string(gt) + " pred=" + std::to_string(pred));
  }
  ++counts_[static_cast<std::size_t>(gt * c_ + pred)];
}

void ConfusionMatrix::add(std::span<const int> gt, std::span<const int> pred) {
  if (gt.size() != pred.size()) throw Error("prediction and ground-truth lengths differ");
  for (std::size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i]);
}

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::optional<double> ConfusionMatrix::iou(int cls) const {
  const long long tp = at(cls, cls);
  long long fp = 0, fn = 0;
  for (int k = 0; k < c_; ++k) {
    if (k == cls) continue;
    fn += at(cls, k);
    fp += at(k, cls);
  }
  const long long denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < c_; ++c) {
    if (auto v = iou(c)) {
      sum += *v;
      ++used;
    }
  }
  if (used == 0) throw Error("mIoU undefined: no evaluated points");
  return sum / used;
}

MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  if (pred.empty()) throw Error("mIoU undefined for zero points");
  ConfusionMatrix cm(num_classes);
  cm.add(gt, pred);
  MiouResult r;
  for (int c = 0; c < num_classes; ++c) r.per_class_iou.push_back(cm.iou(c));
  r.miou = cm.mean_iou();
  return r;
}

}  // namespace pep
