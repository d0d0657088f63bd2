#include "pdisent/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace pdisent {

namespace {
constexpr double kYawSlack = 1e-9;
}

bool is_near_frontal(double yaw) { return std::abs(yaw) <= deg_to_rad(kNearFrontalDeg) + kYawSlack; }

int GenerationConfig::views_per_identity() const {
  if (pose_mode == PoseMode::Sweep)
    return static_cast<int>(std::floor((yaw_max_deg - yaw_min_deg) / yaw_step_deg + 1e-9)) + 1;
  return poses_per_identity;
}

void GenerationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("generation config: " + msg); };
  if (num_identities < 2) fail("num_identities must be >= 2");
  if (image_size < 8) fail("image_size must be >= 8");
  if (yaw_min_deg < -90.0 || yaw_max_deg > 90.0 || yaw_min_deg > yaw_max_deg)
    fail("yaw range must lie within [-90, 90] with min <= max");
  if (pose_mode == PoseMode::Sweep) {
    if (!(yaw_step_deg > 0)) fail("yaw_step_deg must be positive");
    if (poses_per_identity != 0 && poses_per_identity != views_per_identity())
      fail("poses_per_identity (" + std::to_string(poses_per_identity) +
           ") disagrees with the sweep count (" + std::to_string(views_per_identity()) + ")");
    if (yaw_min_deg > kNearFrontalDeg || yaw_max_deg < -kNearFrontalDeg)
      fail("the sweep must include a near-frontal view");
  } else if (!(frontal_sigma_deg > 0)) {
    fail("frontal_sigma_deg must be positive");
  }
  if (views_per_identity() < 2) fail("poses_per_identity must be >= 2");
  if (!(sigma_id >= 0) || !(sigma_exp >= 0)) fail("coefficient sigmas must be nonnegative");
  if (!(scale_fraction > 0)) fail("scale_fraction must be positive");
}

void to_json(nlohmann::json& j, const MorphableModelConfig& c) {
  j = {{"seed", c.seed}, {"num_vertices", c.num_vertices}, {"id_dim", c.id_dim},
       {"exp_dim", c.exp_dim}, {"num_landmarks", c.num_landmarks}};
}

void from_json(const nlohmann::json& j, MorphableModelConfig& c) {
  c.seed = j.at("seed").get<std::uint64_t>();
  c.num_vertices = j.at("num_vertices").get<int>();
  c.id_dim = j.at("id_dim").get<int>();
  c.exp_dim = j.at("exp_dim").get<int>();
  c.num_landmarks = j.at("num_landmarks").get<int>();
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = {{"source_tag", c.source_tag},
       {"num_identities", c.num_identities},
       {"pose_mode", c.pose_mode == PoseMode::Sweep ? "sweep" : "frontal_heavy"},
       {"poses_per_identity", c.poses_per_identity},
       {"yaw_min_deg", c.yaw_min_deg},
       {"yaw_max_deg", c.yaw_max_deg},
       {"yaw_step_deg", c.yaw_step_deg},
       {"frontal_sigma_deg", c.frontal_sigma_deg},
       {"image_size", c.image_size},
       {"sigma_id", c.sigma_id},
       {"sigma_exp", c.sigma_exp},
       {"jitter_pitch_deg", c.jitter_pitch_deg},
       {"jitter_roll_deg", c.jitter_roll_deg},
       {"jitter_translation", c.jitter_translation},
       {"scale_fraction", c.scale_fraction},
       {"scale_jitter", c.scale_jitter},
       {"texture_seed", c.texture_seed},
       {"model", c.model}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  c.source_tag = j.at("source_tag").get<std::string>();
  c.num_identities = j.at("num_identities").get<int>();
  const auto mode = j.at("pose_mode").get<std::string>();
  if (mode == "sweep")
    c.pose_mode = PoseMode::Sweep;
  else if (mode == "frontal_heavy")
    c.pose_mode = PoseMode::FrontalHeavy;
  else
    throw std::invalid_argument("unknown pose_mode '" + mode + "'");
  c.poses_per_identity = j.at("poses_per_identity").get<int>();
  c.yaw_min_deg = j.at("yaw_min_deg").get<double>();
  c.yaw_max_deg = j.at("yaw_max_deg").get<double>();
  c.yaw_step_deg = j.at("yaw_step_deg").get<double>();
  c.frontal_sigma_deg = j.at("frontal_sigma_deg").get<double>();
  c.image_size = j.at("image_size").get<int>();
  c.sigma_id = j.at("sigma_id").get<double>();
  c.sigma_exp = j.at("sigma_exp").get<double>();
  c.jitter_pitch_deg = j.at("jitter_pitch_deg").get<double>();
  c.jitter_roll_deg = j.at("jitter_roll_deg").get<double>();
  c.jitter_translation = j.at("jitter_translation").get<double>();
  c.scale_fraction = j.at("scale_fraction").get<double>();
  c.scale_jitter = j.at("scale_jitter").get<double>();
  c.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  c.model = j.at("model").get<MorphableModelConfig>();
}

std::array<double, 7> Corpus::raw_pose(std::size_t i) const {
  std::array<double, 7> out{};
  for (int d = 0; d < 7; ++d)
    out[d] = samples[i].pose[d] * manifest.pose_std[d] + manifest.pose_mean[d];
  return out;
}

std::vector<int> Corpus::identities() const {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  return {ids.begin(), ids.end()};
}

Corpus Corpus::subset(const std::vector<int>& ids) const {
  const std::set<int> keep(ids.begin(), ids.end());
  Corpus out;
  out.manifest = manifest;
  out.model = model;
  for (const auto& s : samples)
    if (keep.count(s.identity)) out.samples.push_back(s);
  out.manifest.num_samples = static_cast<int>(out.samples.size());
  return out;
}

bool operator==(const Corpus& a, const Corpus& b) {
  if (!(a.manifest == b.manifest) || !(a.samples == b.samples)) return false;
  if (!a.model || !b.model) return a.model == b.model;
  return a.model->mean_shape() == b.model->mean_shape() &&
         a.model->identity_basis() == b.model->identity_basis() &&
         a.model->expression_basis() == b.model->expression_basis() &&
         a.model->landmark_indices() == b.model->landmark_indices();
}

namespace {

std::vector<double> view_yaws(const GenerationConfig& c, Rng& rng) {
  std::vector<double> yaws;
  if (c.pose_mode == PoseMode::Sweep) {
    FaceParams base;
    for (const auto& p : pose_sweep(base, deg_to_rad(c.yaw_min_deg), deg_to_rad(c.yaw_max_deg),
                                    deg_to_rad(c.yaw_step_deg)))
      yaws.push_back(p.rotation.yaw);
    return yaws;
  }
  yaws.push_back(0.0);
  for (int k = 1; k < c.poses_per_identity; ++k) {
    const double deg = std::clamp(c.frontal_sigma_deg * standard_normal(rng), c.yaw_min_deg, c.yaw_max_deg);
    yaws.push_back(deg_to_rad(deg));
  }
  return yaws;
}

}  // namespace

Corpus generate_corpus(const GenerationConfig& config, std::uint64_t seed) {
  config.validate();
  auto model = std::make_shared<const MorphableModel>(MorphableModel::generate(config.model));
  const TextureModel textures = TextureModel::generate(*model, config.texture_seed);

  Corpus corpus;
  corpus.model = model;
  std::vector<std::array<double, 7>> raw;
  for (int id = 0; id < config.num_identities; ++id) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(id)});
    FaceParams base = model->neutral_params();
    for (int k = 0; k < model->id_dim(); ++k) base.alpha_id(k) = config.sigma_id * standard_normal(rng);
    for (int k = 0; k < model->exp_dim(); ++k) base.alpha_exp(k) = config.sigma_exp * standard_normal(rng);
    const Texture texture = textures.texture(base.alpha_id);

    for (double yaw : view_yaws(config, rng)) {
      FaceParams p = base;
      p.rotation.yaw = yaw;
      p.rotation.pitch = deg_to_rad(config.jitter_pitch_deg) * standard_normal(rng);
      p.rotation.roll = deg_to_rad(config.jitter_roll_deg) * standard_normal(rng);
      for (int d = 0; d < 3; ++d) p.translation(d) = config.jitter_translation * standard_normal(rng);
      p.scale = config.scale_fraction * config.image_size * (1.0 + config.scale_jitter * standard_normal(rng));

      const Projection proj = project_weak_perspective(instantiate_shape(*model, p), config.image_size);
      LabeledSample s;
      s.image = render(proj.points, proj.depth, texture, config.image_size);
      s.identity = id;
      s.yaw = yaw;
      const double c = config.image_size / 2.0;
      for (int idx : model->landmark_indices()) {
        s.landmarks.push_back((proj.points(idx, 0) - c) / c);
        s.landmarks.push_back((proj.points(idx, 1) - c) / c);
      }
      raw.push_back(p.pose_vector());
      corpus.samples.push_back(std::move(s));
    }
  }

  CorpusManifest& m = corpus.manifest;
  m.seed = seed;
  m.source_tag = config.source_tag;
  m.num_identities = config.num_identities;
  m.num_samples = static_cast<int>(corpus.samples.size());
  m.image_size = config.image_size;
  m.generation = config;
  const double n = static_cast<double>(raw.size());
  for (int d = 0; d < 7; ++d) {
    double mean = 0;
    for (const auto& r : raw) mean += r[d];
    mean /= n;
    double var = 0;
    for (const auto& r : raw) var += (r[d] - mean) * (r[d] - mean);
    const double sd = std::sqrt(var / n);
    m.pose_mean[d] = mean;
    m.pose_std[d] = sd > 1e-12 ? sd : 1.0;
  }
  for (std::size_t i = 0; i < raw.size(); ++i)
    for (int d = 0; d < 7; ++d)
      corpus.samples[i].pose[d] = (raw[i][d] - m.pose_mean[d]) / m.pose_std[d];
  return corpus;
}

int pose_bin_index(double yaw) {
  const double deg = rad_to_deg(std::abs(yaw));
  if (!(std::abs(yaw) <= deg_to_rad(90.0) + kYawSlack))
    throw std::invalid_argument("yaw " + std::to_string(rad_to_deg(yaw)) + " deg outside [-90, 90]");
  const int idx = static_cast<int>(std::ceil(deg / 15.0 - 1e-9)) - 1;
  return std::clamp(idx, 0, kNumPoseBins - 1);
}

int pose_bin(double yaw) { return kPoseBinEdges[static_cast<std::size_t>(pose_bin_index(yaw))]; }

namespace {
std::vector<int> corpus_identities(const Corpus& c) {
  std::vector<int> v;
  for (const auto& s : c.samples) v.push_back(s.identity);
  return v;
}
std::vector<double> corpus_yaws(const Corpus& c) {
  std::vector<double> v;
  for (const auto& s : c.samples) v.push_back(s.yaw);
  return v;
}
}  // namespace

PairSampler::PairSampler(const Corpus& corpus)
    : PairSampler(corpus_identities(corpus), corpus_yaws(corpus)) {}

PairSampler::PairSampler(std::span<const int> identities, std::span<const double> yaws) {
  if (identities.size() != yaws.size())
    throw std::invalid_argument("pair sampler: identity and yaw arrays differ in length");
  std::map<int, Pools> by_id;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    auto& p = by_id[identities[i]];
    p.identity = identities[i];
    (is_near_frontal(yaws[i]) ? p.frontal : p.profile).push_back(i);
  }
  for (auto& [id, p] : by_id) {
    if (!p.frontal.empty() && !p.profile.empty()) ++qualifying_;
    pools_.push_back(std::move(p));
  }
  if (qualifying_ == 0)
    throw std::runtime_error("pair sampler: no identity has both near-frontal and non-frontal samples");
}

GenuinePair PairSampler::sample(Rng& rng) const {
  for (;;) {
    const auto& p = pools_[uniform_index(rng, pools_.size())];
    if (p.frontal.empty() || p.profile.empty()) continue;
    GenuinePair pair;
    pair.identity = p.identity;
    pair.reference = p.frontal[uniform_index(rng, p.frontal.size())];
    pair.peer = p.profile[uniform_index(rng, p.profile.size())];
    return pair;
  }
}

GenuinePair sample_pair(const Corpus& corpus, Rng& rng) { return PairSampler(corpus).sample(rng); }

GalleryProbeSplit split_gallery_probe(const Corpus& corpus, Protocol protocol, Rng& rng) {
  std::map<int, std::vector<std::size_t>> frontal;
  GalleryProbeSplit split;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    if (is_near_frontal(s.yaw))
      frontal[s.identity].push_back(i);
    else
      split.probe.push_back(i);
  }
  for (int id : corpus.identities()) {
    auto& pool = frontal[id];
    if (protocol == Protocol::P2) {
      split.gallery.insert(split.gallery.end(), pool.begin(), pool.end());
      continue;
    }
    if (pool.size() < 2)
      throw std::runtime_error("protocol P1: identity " + std::to_string(id) + " has " +
                               std::to_string(pool.size()) + " near-frontal samples, needs 2");
    // Partial Fisher-Yates for two distinct draws.
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t j = k + uniform_index(rng, pool.size() - k);
      std::swap(pool[k], pool[j]);
      split.gallery.push_back(pool[k]);
    }
  }
  return split;
}

Container corpus_to_container(const Corpus& corpus) {
  const auto& m = corpus.manifest;
  Container c;
  c.manifest = {{"format", "pdisent-corpus"},
                {"version", 1},
                {"seed", m.seed},
                {"source_tag", m.source_tag},
                {"num_identities", m.num_identities},
                {"num_samples", m.num_samples},
                {"image_size", m.image_size},
                {"pose_mean", m.pose_mean},
                {"pose_std", m.pose_std},
                {"generation", m.generation}};

  const std::size_t n = corpus.samples.size();
  const auto hw = static_cast<std::size_t>(m.image_size) * static_cast<std::size_t>(m.image_size);
  const auto k2 = static_cast<std::size_t>(corpus.landmark_dim());
  std::vector<float> images;
  images.reserve(n * hw);
  std::vector<std::int32_t> identity;
  std::vector<double> pose, landmarks, yaw;
  for (const auto& s : corpus.samples) {
    if (s.image.pixels.size() != hw || s.landmarks.size() != k2)
      throw std::invalid_argument("corpus samples have inconsistent shapes");
    images.insert(images.end(), s.image.pixels.begin(), s.image.pixels.end());
    identity.push_back(s.identity);
    pose.insert(pose.end(), s.pose.begin(), s.pose.end());
    landmarks.insert(landmarks.end(), s.landmarks.begin(), s.landmarks.end());
    yaw.push_back(s.yaw);
  }
  const auto u = [](std::size_t v) { return static_cast<std::uint64_t>(v); };
  c.add("images", {u(n), u(m.image_size), u(m.image_size)}, std::move(images));
  c.add("identity", {u(n)}, std::move(identity));
  c.add("pose", {u(n), 7}, std::move(pose));
  c.add("landmarks", {u(n), u(k2)}, std::move(landmarks));
  c.add("yaw", {u(n)}, std::move(yaw));

  if (corpus.model) {
    const auto& mm = *corpus.model;
    const auto rows = static_cast<std::size_t>(mm.mean_shape().size());
    c.add("model.mean_shape", {u(rows)},
          std::vector<double>(mm.mean_shape().data(), mm.mean_shape().data() + rows));
    auto row_major = [](const Eigen::MatrixXd& a) {
      std::vector<double> v(static_cast<std::size_t>(a.size()));
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          v.data(), a.rows(), a.cols()) = a;
      return v;
    };
    c.add("model.identity_basis", {u(rows), u(static_cast<std::size_t>(mm.id_dim()))},
          row_major(mm.identity_basis()));
    c.add("model.expression_basis", {u(rows), u(static_cast<std::size_t>(mm.exp_dim()))},
          row_major(mm.expression_basis()));
    std::vector<std::int32_t> lm(mm.landmark_indices().begin(), mm.landmark_indices().end());
    const auto n_lm = u(lm.size());
    c.add("model.landmark_indices", {n_lm}, std::move(lm));
  }
  return c;
}

Corpus corpus_from_container(const Container& c) {
  using Kind = ContainerError::Kind;
  const auto& j = c.manifest;
  Corpus corpus;
  auto& m = corpus.manifest;
  try {
    if (j.at("format") != "pdisent-corpus")
      throw ContainerError(Kind::Corrupt, "container is not a corpus");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.source_tag = j.at("source_tag").get<std::string>();
    m.num_identities = j.at("num_identities").get<int>();
    m.num_samples = j.at("num_samples").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.pose_mean = j.at("pose_mean").get<std::array<double, 7>>();
    m.pose_std = j.at("pose_std").get<std::array<double, 7>>();
    m.generation = j.at("generation").get<GenerationConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(Kind::Corrupt, std::string("corpus manifest: ") + e.what());
  }

  const auto n = static_cast<std::size_t>(m.num_samples);
  const auto size = static_cast<std::size_t>(m.image_size);
  const auto& images = c.at("images");
  if (images.shape != std::vector<std::uint64_t>{n, size, size})
    throw ContainerError(Kind::ManifestMismatch, "image array shape disagrees with manifest counts");
  for (const char* name : {"identity", "pose", "landmarks", "yaw"})
    if (c.at(name).shape.empty() || c.at(name).shape[0] != n)
      throw ContainerError(Kind::ManifestMismatch,
                           std::string("array '") + name + "' disagrees with manifest sample count");
  if (c.at("pose").shape.size() != 2 || c.at("pose").shape[1] != 7)
    throw ContainerError(Kind::ManifestMismatch, "pose array must be N x 7");

  const auto& pix = c.values<float>("images");
  const auto& ids = c.values<std::int32_t>("identity");
  const auto& pose = c.values<double>("pose");
  const auto& lmk = c.values<double>("landmarks");
  const auto& yaw = c.values<double>("yaw");
  const std::size_t k2 = c.at("landmarks").shape.size() > 1 ? static_cast<std::size_t>(c.at("landmarks").shape[1]) : 0;
  corpus.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = corpus.samples[i];
    s.image = Image(m.image_size);
    std::copy_n(pix.begin() + static_cast<std::ptrdiff_t>(i * size * size), size * size, s.image.pixels.begin());
    s.identity = ids[i];
    if (s.identity < 0 || s.identity >= m.num_identities)
      throw ContainerError(Kind::ManifestMismatch, "identity label outside the manifest label space");
    std::copy_n(pose.begin() + static_cast<std::ptrdiff_t>(7 * i), 7, s.pose.begin());
    s.landmarks.assign(lmk.begin() + static_cast<std::ptrdiff_t>(k2 * i),
                       lmk.begin() + static_cast<std::ptrdiff_t>(k2 * (i + 1)));
    s.yaw = yaw[i];
  }

  if (c.contains("model.mean_shape")) {
    const auto& mean = c.values<double>("model.mean_shape");
    auto matrix = [&](const char* name) {
      const auto& a = c.at(name);
      if (a.shape.size() != 2) throw ContainerError(Kind::Corrupt, std::string(name) + " must be rank 2");
      const auto& v = c.values<double>(name);
      return Eigen::MatrixXd(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          v.data(), static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1])));
    };
    const auto& lm = c.values<std::int32_t>("model.landmark_indices");
    try {
      corpus.model = std::make_shared<const MorphableModel>(
          Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
          matrix("model.identity_basis"), matrix("model.expression_basis"),
          std::vector<int>(lm.begin(), lm.end()));
    } catch (const std::invalid_argument& e) {
      throw ContainerError(Kind::Corrupt, std::string("stored model is invalid: ") + e.what());
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) { corpus_to_container(corpus).save(path); }

Corpus load_corpus(const std::string& path) { return corpus_from_container(Container::load(path)); }

}  // namespace pdisent
