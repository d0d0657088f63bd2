#pragma once

#include "pdisent/container.hpp"
#include "pdisent/morphable_shape.hpp"
#include "pdisent/random.hpp"
#include "pdisent/renderer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pdisent {

inline constexpr double kNearFrontalDeg = 5.0;
inline constexpr int kNumPoseBins = 6;
inline constexpr std::array<int, kNumPoseBins> kPoseBinEdges = {15, 30, 45, 60, 75, 90};

/// |yaw| <= 5 degrees (with 1e-9 rad slack).
bool is_near_frontal(double yaw);

enum class PoseMode {
  Sweep,         ///< yaw_min .. yaw_max at yaw_step
  FrontalHeavy,  ///< one exact frontal view plus |N(0, sigma)| yaws
};

struct GenerationConfig {
  std::string source_tag = "target";
  int num_identities = 80;
  PoseMode pose_mode = PoseMode::Sweep;
  /// Sweep mode: 0 derives the count from the sweep; any other value must match it.
  int poses_per_identity = 0;
  double yaw_min_deg = -90.0;
  double yaw_max_deg = 90.0;
  double yaw_step_deg = 5.0;
  double frontal_sigma_deg = 25.0;
  int image_size = 32;
  double sigma_id = 1.0;
  double sigma_exp = 0.3;
  double jitter_pitch_deg = 3.0;
  double jitter_roll_deg = 3.0;
  double jitter_translation = 0.5;
  double scale_fraction = 0.42;  ///< s = scale_fraction * image_size before jitter
  double scale_jitter = 0.03;
  std::uint64_t texture_seed = 11;
  MorphableModelConfig model;

  /// Number of views per identity implied by the config.
  int views_per_identity() const;
  void validate() const;

  bool operator==(const GenerationConfig&) const = default;
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);
void to_json(nlohmann::json& j, const MorphableModelConfig& c);
void from_json(const nlohmann::json& j, MorphableModelConfig& c);

struct LabeledSample {
  Image image;
  int identity = 0;
  std::array<double, 7> pose{};   ///< standardized (s, pitch, yaw, roll, Tx, Ty, Tz)
  std::vector<double> landmarks;  ///< 2K values in [-1, 1]
  double yaw = 0.0;               ///< raw yaw in radians

  bool operator==(const LabeledSample&) const = default;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::string source_tag;
  int num_identities = 0;  ///< size of the identity label space
  int num_samples = 0;
  int image_size = 0;
  std::array<double, 7> pose_mean{};
  std::array<double, 7> pose_std{};
  GenerationConfig generation;

  bool operator==(const CorpusManifest&) const = default;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<LabeledSample> samples;
  std::shared_ptr<const MorphableModel> model;

  std::size_t size() const { return samples.size(); }
  int landmark_dim() const { return samples.empty() ? 0 : static_cast<int>(samples.front().landmarks.size()); }

  /// Undoes the pose standardization for sample i.
  std::array<double, 7> raw_pose(std::size_t i) const;
  /// Sorted distinct identity labels present.
  std::vector<int> identities() const;
  /// Samples whose identity is in `ids`, labels unchanged.
  Corpus subset(const std::vector<int>& ids) const;

  /// Field-by-field equality (model compared by its arrays).
  friend bool operator==(const Corpus& a, const Corpus& b);
};

/// Renders every identity's views and labels them; deterministic given seed.
/// Throws std::invalid_argument for invalid configs.
Corpus generate_corpus(const GenerationConfig& config, std::uint64_t seed);

/// Pose bin end point in degrees: (0,15] -> 15, ..., (75,90] -> 90; 0 maps to 15.
/// Throws std::invalid_argument when |yaw| exceeds 90 degrees (+1e-9 rad).
int pose_bin(double yaw);
/// Index 0..5 of pose_bin(yaw).
int pose_bin_index(double yaw);

struct GenuinePair {
  std::size_t reference = 0;  ///< index of the near-frontal sample
  std::size_t peer = 0;       ///< index of the non-frontal sample
  int identity = 0;
};

/// Per-identity near-frontal / non-frontal pools over a corpus.
class PairSampler {
 public:
  /// Throws std::runtime_error when no identity has both pools.
  explicit PairSampler(const Corpus& corpus);
  /// Pools over parallel label / yaw arrays; pair indices refer to positions in them.
  PairSampler(std::span<const int> identities, std::span<const double> yaws);

  /// Uniform identity (redrawn until it has both pools), then a uniform
  /// reference and a uniform peer.
  GenuinePair sample(Rng& rng) const;

  std::size_t qualifying_identities() const { return qualifying_; }

 private:
  struct Pools {
    int identity = 0;
    std::vector<std::size_t> frontal;
    std::vector<std::size_t> profile;
  };
  std::vector<Pools> pools_;
  std::size_t qualifying_ = 0;
};

GenuinePair sample_pair(const Corpus& corpus, Rng& rng);

enum class Protocol { P1, P2 };

struct GalleryProbeSplit {
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> probe;
};

/// P1: two random near-frontal samples per identity; P2: every near-frontal
/// sample. Probes are all non-frontal samples. Throws std::runtime_error naming
/// the identity when P1 cannot draw two frontal samples.
GalleryProbeSplit split_gallery_probe(const Corpus& corpus, Protocol protocol, Rng& rng);

Container corpus_to_container(const Corpus& corpus);
Corpus corpus_from_container(const Container& container);
void save_corpus(const Corpus& corpus, const std::string& path);
/// Throws ContainerError with a kind distinguishing bad magic, truncation,
/// corruption and manifest mismatch.
Corpus load_corpus(const std::string& path);

}  // namespace pdisent
