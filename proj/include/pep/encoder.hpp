#pragma once

// Attribute-token point encoder. Each of a point's m attributes becomes a
// d-dim token (an affine map of the scalar for continuous attributes, a
// table row for categorical ones), a single self-attention layer mixes the
// tokens of that point, and the attended tokens are concatenated into an
// m*d feature. A two-layer head with optional k-NN mean pooling turns the
// features into per-point class logits.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pep/core.hpp"
#include "pep/grad.hpp"

namespace pep {

struct EncoderConfig {
  int d = 4;
  int heads = 1;
  int num_classes = 4;
  int head_hidden = 32;
  int knn_k = 8;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Learnable tensors in a fixed, schema-derived order:
//   tok.<attr>.w, tok.<attr>.b   (d)                 continuous attributes
//   tok.<attr>.emb               ((cardinality+1) x d, last row = unknown)
//   attn.q, attn.k, attn.v, attn.o  (d x d)
//   head.w1 (m*d*(1 + [knn_k > 0]) x hidden), head.b1 (hidden)
//   head.w2 (hidden x C), head.b2 (C)
class EncoderParams {
 public:
  void add(std::string name, grad::Tensor t);

  grad::Tensor& at(const std::string& name);
  const grad::Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  grad::Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const grad::Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  std::vector<grad::Tensor*> pointers();
  std::vector<grad::NamedTensor> named();
  void set_requires_grad(bool on);
  void zero_grad();

  bool operator==(const EncoderParams&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<grad::Tensor> tensors_;
};

// Weights uniform in [-1/sqrt(d), 1/sqrt(d)], biases zero.
EncoderParams init_params(const AttributeSchema& schema, const EncoderConfig& config, std::uint64_t seed);

struct Model {
  AttributeSchema schema;
  EncoderConfig config;
  EncoderParams params;

  static Model init(AttributeSchema schema, EncoderConfig config, std::uint64_t seed);
  bool operator==(const Model&) const = default;
};

// Zeroes every tokenizer tensor of one attribute, making the model blind to it.
void zero_attribute(EncoderParams& params, const std::string& attr);

// Single-point operations.
grad::Tensor tokenize(std::span<const double> point, const AttributeSchema& schema,
                      const EncoderParams& params, const EncoderConfig& config);
grad::Tensor attend(const grad::Tensor& tokens, const EncoderParams& params, const EncoderConfig& config);
// Row-stochastic m x m attention matrix used by attend().
grad::Tensor attention_weights(const grad::Tensor& tokens, const EncoderParams& params,
                               const EncoderConfig& config);
std::vector<double> encode_point(std::span<const double> point, const AttributeSchema& schema,
                                 const EncoderParams& params, const EncoderConfig& config);

// Indices of the k nearest neighbors of every point by x,y,z (self
// excluded, ties to the lower index), flattened n x k.
std::vector<std::uint32_t> knn_indices(const PointCloud& cloud, int k);

// Parameter leaves bound on a tape, in EncoderParams order.
struct BoundParams {
  std::vector<grad::Var> vars;
  const EncoderParams* params = nullptr;
  grad::Var operator[](const std::string& name) const;
};
BoundParams bind(grad::Tape& tape, EncoderParams& params);

// Graph builders shared by inference and training.
grad::Var build_tokens(grad::Tape& tape, const BoundParams& p, const AttributeSchema& schema,
                       const EncoderConfig& config, const PointCloud& cloud);  // N x m x d
grad::Var build_attention(grad::Tape& tape, const BoundParams& p, const EncoderConfig& config,
                          grad::Var tokens);  // N x m x d
// N x C logits. `neighbors` must come from knn_indices when knn_k > 0.
grad::Var build_logits(grad::Tape& tape, const BoundParams& p, const Model& model, const PointCloud& cloud,
                       std::span<const std::uint32_t> neighbors);

// Throws unless the cloud's attributes match the model schema by name, kind
// and cardinality.
void check_conforms(const PointCloud& cloud, const AttributeSchema& schema);

grad::Tensor forward_segmentation(const PointCloud& cloud, const Model& model);
// Same, with a precomputed knn_indices table.
grad::Tensor forward_segmentation(const PointCloud& cloud, const Model& model,
                                  std::span<const std::uint32_t> neighbors);
std::vector<int> predict(const PointCloud& cloud, const Model& model);
std::vector<int> argmax_rows(const grad::Tensor& logits);

// Binary checkpoint, see docs/formats.md.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct GradCheckSetup {
  int n_points = 12;
  int d = 4;
  int num_classes = 4;
  int head_hidden = 32;
  int knn_k = 8;
  double eps = 1e-3;
  double threshold = 1e-4;
};

// Central-difference check of every encoder and head tensor on a seeded
// random cloud with attributes x, y, z, intensity, t, sem, inst.
grad::GradCheckReport grad_check(const GradCheckSetup& setup, std::uint64_t seed);

}  // namespace pep
