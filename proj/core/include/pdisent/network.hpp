#pragma once

#include "pdisent/container.hpp"
#include "pdisent/tensor.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pdisent {

struct Corpus;

/// Layer sizes. Feature matrices throughout the network are (dim x batch):
/// one column per sample.
struct ArchConfig {
  int image_size = 32;
  std::vector<int> stage_channels{16, 32, 64, 128};
  int convs_per_stage = 1;  ///< first conv of a stage has stride 2, the rest stride 1
  int rich_dim = 512;
  int id_dim = 256;
  int nonid_dim = 128;
  int num_classes = 2;
  int pose_dim = 7;
  int landmark_dim = 32;
  int recon_hidden = 512;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

/// Parameter partition. Every tensor belongs to exactly one group and each
/// group can be frozen independently.
enum class Group : int {
  Backbone = 0,   ///< convolutional stages + rich affine
  Identity,       ///< e_r -> e_i
  NonIdentity,    ///< e_r -> e_n
  IdClassifier,   ///< e_i -> logits
  PoseHead,       ///< e_n -> e_p
  LandmarkHead,   ///< e_n -> e_l
  Reconstructor,  ///< (e_i, e_n) -> reconstructed e_r
};
inline constexpr int kNumGroups = 7;
inline constexpr std::array<Group, kNumGroups> kAllGroups = {
    Group::Backbone, Group::Identity, Group::NonIdentity, Group::IdClassifier,
    Group::PoseHead, Group::LandmarkHead, Group::Reconstructor};
const char* group_name(Group g);

struct ParamGroup {
  std::vector<Tensor> tensors;
  bool frozen = false;

  bool operator==(const ParamGroup&) const = default;
};

class ModelParams {
 public:
  ArchConfig arch;

  ParamGroup& group(Group g) { return groups_[static_cast<std::size_t>(g)]; }
  const ParamGroup& group(Group g) const { return groups_[static_cast<std::size_t>(g)]; }

  Tensor& tensor(const std::string& name);
  const Tensor& tensor(const std::string& name) const;

  void set_frozen(Group g, bool frozen) { group(g).frozen = frozen; }
  bool frozen(Group g) const { return group(g).frozen; }

  /// Same names and shapes, all zeros, nothing frozen.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  /// FNV-1a over the raw bytes of every tensor in a group.
  std::uint64_t group_hash(Group g) const;

  bool operator==(const ModelParams&) const = default;

 private:
  std::array<ParamGroup, kNumGroups> groups_;
};

/// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero, nothing frozen.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed);
/// Re-initializes the tensors of one group with the same rule.
void reinit_group(ModelParams& params, Group g, std::uint64_t seed);

struct ConvSpec {
  int in_channels;
  int out_channels;
  int stride;
  int in_size;
  int out_size;
};
std::vector<ConvSpec> conv_specs(const ArchConfig& arch);

/// Images as (H*W x B), pixel-major within a column.
Eigen::MatrixXd image_batch(const Corpus& corpus, std::span<const std::size_t> indices);

struct BackboneTrace {
  std::vector<Eigen::MatrixXd> cols;  ///< im2col input of each conv
  std::vector<Eigen::MatrixXd> acts;  ///< post-ReLU output of each conv
  Eigen::MatrixXd pooled;
};

/// 3x3 convolutions (pad 1) with ReLU, global average pooling, affine to
/// rich_dim. Returns (rich_dim x B). Throws std::invalid_argument on shape mismatch.
Eigen::MatrixXd forward_rich(const ModelParams& params, const Eigen::MatrixXd& images,
                             BackboneTrace* trace = nullptr);
/// Accumulates backbone gradients into `grads` (skipped when the backbone is frozen).
void backward_rich(const ModelParams& params, const BackboneTrace& trace,
                   const Eigen::MatrixXd& d_rich, ModelParams& grads);

struct EmbeddingBundle {
  Eigen::VectorXd e_r, e_i, e_n, e_p, e_l, logits;
};

struct EmbeddingBatch {
  Eigen::MatrixXd e_r, e_i, e_n, logits, e_p, e_l;

  Eigen::Index size() const { return e_r.cols(); }
  EmbeddingBundle bundle(Eigen::Index k) const;
};

/// e_i = ReLU(W_i e_r + b_i), e_n = ReLU(W_n e_r + b_n), logits = W_c e_i + b_c,
/// e_p = W_p e_n + b_p, e_l = W_l e_n + b_l.
EmbeddingBatch forward_branches(const ModelParams& params, const Eigen::MatrixXd& e_r);

/// Upstream gradients for the branch outputs; empty matrices count as zero.
struct BranchGrads {
  Eigen::MatrixXd d_e_i, d_e_n, d_logits, d_e_p, d_e_l;
};

/// Accumulates gradients of every unfrozen branch/head group and returns the
/// gradient with respect to e_r (empty when `want_rich_grad` is false).
Eigen::MatrixXd backward_branches(const ModelParams& params, const EmbeddingBatch& out,
                                  const BranchGrads& upstream, ModelParams& grads,
                                  bool want_rich_grad);

EmbeddingBatch forward(const ModelParams& params, const Eigen::MatrixXd& images);

struct ReconTrace {
  Eigen::MatrixXd hidden;  ///< post-ReLU hidden layer
};

/// g(e_i, e_n) = W2 ReLU(W1 [e_i; e_n] + b1) + b2.
Eigen::MatrixXd forward_reconstruct(const ModelParams& params, const Eigen::MatrixXd& e_i,
                                    const Eigen::MatrixXd& e_n, ReconTrace* trace = nullptr);
void backward_reconstruct(const ModelParams& params, const Eigen::MatrixXd& e_i,
                          const Eigen::MatrixXd& e_n, const ReconTrace& trace,
                          const Eigen::MatrixXd& d_out, ModelParams& grads,
                          Eigen::MatrixXd& d_e_i, Eigen::MatrixXd& d_e_n);

struct PairForward {
  EmbeddingBatch first;   ///< near-frontal references x1
  EmbeddingBatch second;  ///< non-frontal peers x2
  Eigen::MatrixXd self_recon;   ///< g(e_i1, e_n1)
  Eigen::MatrixXd cross_recon;  ///< g(e_i2, e_n1)
  ReconTrace self_trace, cross_trace;
};

PairForward forward_pair(const ModelParams& params, const Eigen::MatrixXd& x1,
                         const Eigen::MatrixXd& x2);
/// Same as forward_pair for precomputed rich embeddings.
PairForward forward_pair_from_rich(const ModelParams& params, const Eigen::MatrixXd& e_r1,
                                   const Eigen::MatrixXd& e_r2);

Container checkpoint_to_container(const ModelParams& params, const nlohmann::json& extra = {});
/// Validates every tensor against the stored arch; throws ContainerError on mismatch.
ModelParams checkpoint_from_container(const Container& container);
void save_checkpoint(const ModelParams& params, const std::string& path,
                     const nlohmann::json& extra = {});
ModelParams load_checkpoint(const std::string& path);

}  // namespace pdisent
