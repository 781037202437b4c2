#include "pep/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "pep/kernels.hpp"
#include "pep/rng.hpp"

namespace pep {

using grad::Shape;
using grad::Tape;
using grad::Tensor;
using grad::Var;

void EncoderConfig::validate() const {
  if (d < 1) throw Error("encoder: d must be >= 1");
  if (heads != 1) throw Error("encoder: only a single attention head is supported");
  if (d % heads != 0) throw Error("encoder: d must be divisible by heads");
  if (num_classes < 1) throw Error("encoder: class count must be positive");
  if (head_hidden < 1) throw Error("encoder: head_hidden must be positive");
  if (knn_k < 0) throw Error("encoder: knn_k must be >= 0");
}

void EncoderParams::add(std::string name, Tensor t) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

grad::Tensor& EncoderParams::at(const std::string& name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw Error("unknown parameter '" + name + "'");
}

const grad::Tensor& EncoderParams::at(const std::string& name) const {
  return const_cast<EncoderParams*>(this)->at(name);
}

bool EncoderParams::contains(const std::string& name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

std::vector<grad::Tensor*> EncoderParams::pointers() {
  std::vector<Tensor*> out;
  for (auto& t : tensors_) out.push_back(&t);
  return out;
}

std::vector<grad::NamedTensor> EncoderParams::named() {
  std::vector<grad::NamedTensor> out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.push_back({names_[i], &tensors_[i]});
  return out;
}

void EncoderParams::set_requires_grad(bool on) {
  for (auto& t : tensors_) t.set_requires_grad(on);
}

void EncoderParams::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

namespace {

std::size_t head_input_width(std::size_t m, const EncoderConfig& c) {
  return m * static_cast<std::size_t>(c.d) * (c.knn_k > 0 ? 2 : 1);
}

Tensor uniform_tensor(Shape dims, double bound, Rng& rng) {
  Tensor t(std::move(dims));
  for (auto& x : t.data()) x = rng.uniform(-bound, bound);
  return t;
}

std::string tok(const std::string& attr, const char* suffix) { return "tok." + attr + "." + suffix; }

// Categorical value -> embedding row; the unknown sentinel maps to the last row.
std::uint32_t embedding_row(const AttrDesc& a, double v) {
  check_categorical(a, v);
  return v == kUnknown ? static_cast<std::uint32_t>(a.cardinality) : static_cast<std::uint32_t>(v);
}

}  // namespace

EncoderParams init_params(const AttributeSchema& schema, const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  if (schema.size() == 0) throw Error("encoder: schema has no attributes");
  const auto d = static_cast<std::size_t>(config.d);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  Rng rng(seed);
  EncoderParams p;
  for (const auto& a : schema.attrs()) {
    if (a.is_categorical()) {
      p.add(tok(a.name, "emb"), uniform_tensor({static_cast<std::size_t>(a.cardinality) + 1, d}, bound, rng));
    } else {
      p.add(tok(a.name, "w"), uniform_tensor({d}, bound, rng));
      p.add(tok(a.name, "b"), Tensor(Shape{d}));
    }
  }
  for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) p.add(n, uniform_tensor({d, d}, bound, rng));
  const auto hidden = static_cast<std::size_t>(config.head_hidden);
  const auto classes = static_cast<std::size_t>(config.num_classes);
  p.add("head.w1", uniform_tensor({head_input_width(schema.size(), config), hidden}, bound, rng));
  p.add("head.b1", Tensor(Shape{hidden}));
  p.add("head.w2", uniform_tensor({hidden, classes}, bound, rng));
  p.add("head.b2", Tensor(Shape{classes}));
  return p;
}

Model Model::init(AttributeSchema schema, EncoderConfig config, std::uint64_t seed) {
  auto params = init_params(schema, config, seed);
  return Model{std::move(schema), config, std::move(params)};
}

void zero_attribute(EncoderParams& params, const std::string& attr) {
  bool found = false;
  for (const char* suffix : {"w", "b", "emb"}) {
    const auto name = tok(attr, suffix);
    if (!params.contains(name)) continue;
    for (auto& x : params.at(name).data()) x = 0.0;
    found = true;
  }
  if (!found) throw Error("no tokenizer parameters for attribute '" + attr + "'");
}

grad::Var BoundParams::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < params->size(); ++i) {
    if (params->name(i) == name) return vars[i];
  }
  throw Error("unknown parameter '" + name + "'");
}

BoundParams bind(Tape& tape, EncoderParams& params) {
  BoundParams b;
  b.params = &params;
  for (std::size_t i = 0; i < params.size(); ++i) b.vars.push_back(tape.leaf(params.tensor(i)));
  return b;
}

void check_conforms(const PointCloud& cloud, const AttributeSchema& schema) {
  const auto& cs = cloud.schema();
  bool ok = cs.size() == schema.size();
  for (std::size_t a = 0; ok && a < cs.size(); ++a) {
    ok = cs[a].name == schema[a].name && cs[a].kind == schema[a].kind && cs[a].cardinality == schema[a].cardinality;
  }
  if (!ok) throw Error("point attributes do not match the model schema");
}

Var build_tokens(Tape& tape, const BoundParams& p, const AttributeSchema& schema, const EncoderConfig& config,
                 const PointCloud& cloud) {
  check_conforms(cloud, schema);
  const std::size_t n = cloud.size();
  const auto d = static_cast<std::size_t>(config.d);
  std::vector<Var> parts;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& desc = schema[a];
    if (desc.is_categorical()) {
      std::vector<std::uint32_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = embedding_row(desc, cloud.at(i, a));
      parts.push_back(tape.gather_row(p[tok(desc.name, "emb")], std::move(rows)));
    } else {
      Var col = tape.constant(Tensor(Shape{n, 1}, cloud.column(a)));
      Var w = tape.reshape(p[tok(desc.name, "w")], Shape{1, d});
      parts.push_back(tape.add(tape.matmul(col, w), p[tok(desc.name, "b")]));
    }
  }
  return tape.reshape(tape.concat(parts), Shape{n, schema.size(), d});
}

Var build_attention(Tape& tape, const BoundParams& p, const EncoderConfig& config, Var tokens) {
  Var q = tape.matmul(tokens, p["attn.q"]);
  Var k = tape.matmul(tokens, p["attn.k"]);
  Var v = tape.matmul(tokens, p["attn.v"]);
  Var scores = tape.scale(tape.matmul(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(config.d)));
  Var weights = tape.row_softmax(scores);
  return tape.matmul(tape.matmul(weights, v), p["attn.o"]);
}

namespace {

// concat(f_i, mean of neighbor f_j), or f_i alone when knn_k == 0.
Var build_head_input(Tape& tape, const BoundParams& p, const Model& model, const PointCloud& cloud,
                     std::span<const std::uint32_t> neighbors) {
  const std::size_t n = cloud.size();
  const std::size_t width = model.schema.size() * static_cast<std::size_t>(model.config.d);
  Var tokens = build_tokens(tape, p, model.schema, model.config, cloud);
  Var features = tape.reshape(build_attention(tape, p, model.config, tokens), Shape{n, width});
  if (model.config.knn_k == 0) return features;
  const auto k = static_cast<std::size_t>(model.config.knn_k);
  if (neighbors.size() != n * k) throw Error("neighbor table does not match cloud size and knn_k");
  Var pooled = tape.group_mean(tape.gather_row(features, {neighbors.begin(), neighbors.end()}), k);
  const Var both[] = {features, pooled};
  return tape.concat(both);
}

}  // namespace

Var build_logits(Tape& tape, const BoundParams& p, const Model& model, const PointCloud& cloud,
                 std::span<const std::uint32_t> neighbors) {
  Var head_in = build_head_input(tape, p, model, cloud, neighbors);
  Var hidden = tape.relu(tape.add(tape.matmul(head_in, p["head.w1"]), p["head.b1"]));
  return tape.add(tape.matmul(hidden, p["head.w2"]), p["head.b2"]);
}

std::vector<std::uint32_t> knn_indices(const PointCloud& cloud, int k) {
  if (k < 0) throw Error("knn_k must be non-negative");
  const std::size_t n = cloud.size();
  if (k == 0) return {};
  if (static_cast<std::size_t>(k) >= n) {
    throw Error("knn_k = " + std::to_string(k) + " needs more than " + std::to_string(n) + " points");
  }
  const auto& s = cloud.schema();
  const std::size_t ix = s.index_of("x");
  if (s.index_of("y") != ix + 1 || s.index_of("z") != ix + 2) throw Error("x, y, z must be adjacent attributes");
  std::vector<std::uint32_t> out(n * static_cast<std::size_t>(k));
  kernels::omp::knn(cloud.values().data() + ix, cloud.num_attrs(), n, static_cast<std::size_t>(k), out.data());
  return out;
}

namespace {

PointCloud single_point(std::span<const double> point, const AttributeSchema& schema) {
  if (point.size() != schema.size()) {
    throw Error("point has " + std::to_string(point.size()) + " values for " + std::to_string(schema.size()) +
                " attributes");
  }
  return PointCloud(schema, {point.begin(), point.end()});
}

// Inference never needs gradients; a const_cast is safe because leaves are
// only read until backward() runs.
BoundParams bind_readonly(Tape& tape, const EncoderParams& params) {
  return bind(tape, const_cast<EncoderParams&>(params));
}

Tensor detach(const Tensor& t) { return Tensor(t.dims(), {t.data().begin(), t.data().end()}); }

}  // namespace

Tensor tokenize(std::span<const double> point, const AttributeSchema& schema, const EncoderParams& params,
                const EncoderConfig& config) {
  Tape tape;
  auto p = bind_readonly(tape, params);
  Var t = build_tokens(tape, p, schema, config, single_point(point, schema));
  return detach(tape.value(tape.reshape(t, Shape{schema.size(), static_cast<std::size_t>(config.d)})));
}

namespace {

Var tokens_as_batch(Tape& tape, const Tensor& tokens, const EncoderConfig& config) {
  if (tokens.rank() != 2 || tokens.dim(1) != static_cast<std::size_t>(config.d)) {
    throw Error("tokens must be m x d, got " + grad::to_string(tokens.dims()));
  }
  return tape.constant(Tensor(Shape{1, tokens.dim(0), tokens.dim(1)}, {tokens.data().begin(), tokens.data().end()}));
}

}  // namespace

Tensor attend(const Tensor& tokens, const EncoderParams& params, const EncoderConfig& config) {
  Tape tape;
  auto p = bind_readonly(tape, params);
  Var out = build_attention(tape, p, config, tokens_as_batch(tape, tokens, config));
  return detach(tape.value(tape.reshape(out, tokens.dims())));
}

Tensor attention_weights(const Tensor& tokens, const EncoderParams& params, const EncoderConfig& config) {
  Tape tape;
  auto p = bind_readonly(tape, params);
  Var t = tokens_as_batch(tape, tokens, config);
  Var q = tape.matmul(t, p["attn.q"]);
  Var k = tape.matmul(t, p["attn.k"]);
  Var s = tape.scale(tape.matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(config.d)));
  const std::size_t m = tokens.dim(0);
  return detach(tape.value(tape.reshape(tape.row_softmax(s), Shape{m, m})));
}

std::vector<double> encode_point(std::span<const double> point, const AttributeSchema& schema,
                                 const EncoderParams& params, const EncoderConfig& config) {
  Tape tape;
  auto p = bind_readonly(tape, params);
  Var tokens = build_tokens(tape, p, schema, config, single_point(point, schema));
  const auto& v = tape.value(build_attention(tape, p, config, tokens));
  return {v.data().begin(), v.data().end()};
}

Tensor forward_segmentation(const PointCloud& cloud, const Model& model) {
  return forward_segmentation(cloud, model, knn_indices(cloud, model.config.knn_k));
}

Tensor forward_segmentation(const PointCloud& cloud, const Model& model, std::span<const std::uint32_t> neighbors) {
  Tape tape;
  auto p = bind_readonly(tape, model.params);
  return detach(tape.value(build_logits(tape, p, model, cloud, neighbors)));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw Error("logits must be N x C");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits[i * c + j] > logits[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const PointCloud& cloud, const Model& model) {
  return argmax_rows(forward_segmentation(cloud, model));
}

grad::GradCheckReport grad_check(const GradCheckSetup& setup, std::uint64_t seed) {
  if (setup.n_points < 1 || setup.n_points > 32) throw Error("gradient check expects 1..32 points");
  const int c = setup.num_classes;
  auto schema = lidar_schema()
                    .with(AttrDesc::categorical("sem", c))
                    .with(AttrDesc::categorical("inst", 64));
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(setup.n_points);
  std::vector<double> values;
  std::vector<int> targets;
  for (std::size_t i = 0; i < n; ++i) {
    values.push_back(rng.uniform(-3.0, 3.0));
    values.push_back(rng.uniform(-3.0, 3.0));
    values.push_back(rng.uniform(-1.0, 1.0));
    values.push_back(rng.uniform(0.0, 1.0));
    values.push_back(rng.uniform(0.0, 0.1));
    values.push_back(rng.uniform_int(-1, c - 1));
    values.push_back(rng.uniform_int(-1, 7));
    targets.push_back(rng.uniform_int(0, c - 1));
  }
  PointCloud cloud(schema, std::move(values), targets);
  EncoderConfig cfg{setup.d, 1, c, setup.head_hidden, setup.knn_k};
  Model model = Model::init(schema, cfg, mix_seed(seed, 1));
  // Nonzero biases so that bias gradients are exercised off the init point.
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    for (auto& x : model.params.tensor(i).data()) {
      if (x == 0.0) x = rng.uniform(-0.1, 0.1);
    }
  }
  const auto neighbors = knn_indices(cloud, cfg.knn_k);

  // Central differences are meaningless across a ReLU kink. Put each hidden
  // bias mid-way in the widest gap between the points' switching thresholds.
  {
    Tape tape;
    auto p = bind_readonly(tape, model.params);
    const Tensor z = tape.value(tape.matmul(build_head_input(tape, p, model, cloud, neighbors), p["head.w1"]));
    Tensor& b1 = model.params.at("head.b1");
    const std::size_t hidden = b1.size();
    for (std::size_t j = 0; j < hidden; ++j) {
      std::vector<double> flip(n);
      for (std::size_t i = 0; i < n; ++i) flip[i] = -z[i * hidden + j];
      std::sort(flip.begin(), flip.end());
      double best = flip.back() + 0.5, width = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        if (flip[i] - flip[i - 1] > width) {
          width = flip[i] - flip[i - 1];
          best = 0.5 * (flip[i] + flip[i - 1]);
        }
      }
      b1[j] = best;
    }
  }

  auto loss_value = [&]() {
    Tape tape;
    auto p = bind_readonly(tape, model.params);
    Var logits = build_logits(tape, p, model, cloud, neighbors);
    return tape.value(tape.cross_entropy(logits, targets))[0];
  };

  model.params.set_requires_grad(true);
  {
    Tape tape;
    auto p = bind(tape, model.params);
    Var loss = tape.cross_entropy(build_logits(tape, p, model, cloud, neighbors), targets);
    tape.backward(loss);
  }
  auto named = model.params.named();
  return grad::finite_difference_check(named, loss_value, setup.eps, setup.threshold);
}

}  // namespace pep
