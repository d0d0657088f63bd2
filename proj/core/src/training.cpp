#include "pdisent/training.hpp"

#include "pdisent/errors.hpp"
#include "pdisent/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace pdisent {

using Eigen::MatrixXd;

namespace {

constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kPairTag = 0x5041;
constexpr std::uint64_t kReconInitTag = 0x5243;

MatrixXd gather_columns(const MatrixXd& m, std::span<const std::size_t> idx) {
  MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = labels[idx[k]];
  return out;
}

void check_labels(const LabeledSet& data, const ArchConfig& arch) {
  if (data.size() == 0) throw std::invalid_argument("training set is empty");
  if (data.image_size != arch.image_size)
    throw ConfigurationError("training images are " + std::to_string(data.image_size) + " px but the network expects " +
                             std::to_string(arch.image_size));
  if (data.landmarks.rows() != arch.landmark_dim)
    throw ConfigurationError("landmark targets have " + std::to_string(data.landmarks.rows()) +
                             " values but the landmark head outputs " + std::to_string(arch.landmark_dim));
  const auto [lo, hi] = std::minmax_element(data.labels.begin(), data.labels.end());
  if (*lo < 0 || *hi >= arch.num_classes)
    throw ConfigurationError("identity labels span [" + std::to_string(*lo) + ", " + std::to_string(*hi) +
                             "] but the classifier has " + std::to_string(arch.num_classes) + " classes");
}

void require_finite(const LossTerms& t, int epoch, long step) {
  if (!std::isfinite(t.total))
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

LabeledSet assemble_labeled_set(std::span<const SourceSpec> sources) {
  if (sources.empty()) throw std::invalid_argument("no training sources");
  LabeledSet set;
  std::vector<std::size_t> picks;
  std::vector<const SourceSpec*> owner;
  std::vector<std::array<double, 7>> raw;
  int landmark_dim = -1;
  for (const auto& src : sources) {
    if (!src.corpus) throw std::invalid_argument("training source without a corpus");
    const Corpus& c = *src.corpus;
    if (set.image_size == 0) set.image_size = c.manifest.image_size;
    if (c.manifest.image_size != set.image_size)
      throw std::invalid_argument("training sources disagree on image size");
    if (landmark_dim < 0) landmark_dim = c.landmark_dim();
    if (c.landmark_dim() != landmark_dim) throw std::invalid_argument("training sources disagree on landmark count");
    std::unordered_map<int, int> label_of;
    for (std::size_t k = 0; k < src.identities.size(); ++k)
      if (!label_of.emplace(src.identities[k], src.label_offset + static_cast<int>(k)).second)
        throw std::invalid_argument("identity " + std::to_string(src.identities[k]) + " listed twice");
    std::size_t found = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto it = label_of.find(c.samples[i].identity);
      if (it == label_of.end()) continue;
      ++found;
      picks.push_back(i);
      owner.push_back(&src);
      set.labels.push_back(it->second);
      set.yaw.push_back(c.samples[i].yaw);
      raw.push_back(c.raw_pose(i));
    }
    if (found == 0 && !src.identities.empty())
      throw std::invalid_argument("source '" + c.manifest.source_tag + "' has no samples for the requested identities");
  }

  const Eigen::Index n = static_cast<Eigen::Index>(picks.size());
  const int hw = set.image_size * set.image_size;
  set.images.resize(hw, n);
  set.landmarks.resize(std::max(landmark_dim, 0), n);
  set.pose.resize(7, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& s = owner[static_cast<std::size_t>(k)]->corpus->samples[picks[static_cast<std::size_t>(k)]];
    for (int p = 0; p < hw; ++p) set.images(p, k) = s.image.pixels[static_cast<std::size_t>(p)];
    for (int l = 0; l < landmark_dim; ++l) set.landmarks(l, k) = s.landmarks[static_cast<std::size_t>(l)];
    for (int d = 0; d < 7; ++d) set.pose(d, k) = raw[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < 7; ++d) {
    const double mean = n > 0 ? set.pose.row(d).mean() : 0.0;
    const double var = n > 0 ? (set.pose.row(d).array() - mean).square().mean() : 0.0;
    const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    set.pose.row(d) = (set.pose.row(d).array() - mean) / sd;
    set.pose_mean[static_cast<std::size_t>(d)] = mean;
    set.pose_std[static_cast<std::size_t>(d)] = sd;
  }
  return set;
}

double stage2_learning_rate(const Stage2Config& config, int epoch) {
  return config.lr0 * std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

void validate(const Stage2Config& c) {
  if (!(c.lr0 > 0.0)) throw ConfigurationError("stage2.lr0 must be positive");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) throw ConfigurationError("stage2.lr_decay must lie in (0, 1]");
  if (c.decay_every < 1) throw ConfigurationError("stage2.decay_every must be at least 1");
  if (c.epochs < 1) throw ConfigurationError("stage2.epochs must be at least 1");
  if (c.batch_size < 1) throw ConfigurationError("stage2.batch_size must be at least 1");
  if (!(c.weights.identity > 0.0)) throw ConfigurationError("stage2.lambda_identity must be positive");
  if (c.weights.pose < 0.0 || c.weights.landmark < 0.0)
    throw ConfigurationError("stage2 loss weights must be nonnegative");
}

void validate(const Stage3Config& c) {
  if (!(c.lr > 0.0)) throw ConfigurationError("stage3.lr must be positive");
  if (c.patience < 1) throw ConfigurationError("stage3.patience must be at least 1");
  if (c.max_epochs < 1) throw ConfigurationError("stage3.max_epochs must be at least 1");
  if (c.batch_size < 1) throw ConfigurationError("stage3.batch_size must be at least 1");
  if (c.pairs_per_epoch < 0) throw ConfigurationError("stage3.pairs_per_epoch must be nonnegative");
  if (c.weights.identity < 0.0 || c.weights.self < 0.0 || c.weights.cross < 0.0 || c.l2_beta < 0.0)
    throw ConfigurationError("stage3 loss weights must be nonnegative");
}

const char* finetune_loss_name(FinetuneLoss l) { return l == FinetuneLoss::Reconstruction ? "reconstruction" : "l2"; }

void to_json(nlohmann::json& j, const Stage2Config& c) {
  j = {{"lambda_identity", c.weights.identity},
       {"lambda_pose", c.weights.pose},
       {"lambda_landmark", c.weights.landmark},
       {"lr0", c.lr0},
       {"lr_decay", c.lr_decay},
       {"decay_every", c.decay_every},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"adam_beta1", c.adam.beta1},
       {"adam_beta2", c.adam.beta2},
       {"adam_epsilon", c.adam.epsilon}};
}

void from_json(const nlohmann::json& j, Stage2Config& c) {
  c.weights.identity = j.at("lambda_identity").get<double>();
  c.weights.pose = j.at("lambda_pose").get<double>();
  c.weights.landmark = j.at("lambda_landmark").get<double>();
  c.lr0 = j.at("lr0").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.adam.beta1 = j.at("adam_beta1").get<double>();
  c.adam.beta2 = j.at("adam_beta2").get<double>();
  c.adam.epsilon = j.at("adam_epsilon").get<double>();
}

void to_json(nlohmann::json& j, const Stage3Config& c) {
  j = {{"loss", finetune_loss_name(c.loss)},
       {"gamma_identity", c.weights.identity},
       {"gamma_self", c.weights.self},
       {"gamma_cross", c.weights.cross},
       {"l2_beta", c.l2_beta},
       {"lr", c.lr},
       {"patience", c.patience},
       {"max_epochs", c.max_epochs},
       {"pairs_per_epoch", c.pairs_per_epoch},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"adam_beta1", c.adam.beta1},
       {"adam_beta2", c.adam.beta2},
       {"adam_epsilon", c.adam.epsilon}};
}

void from_json(const nlohmann::json& j, Stage3Config& c) {
  const auto loss = j.at("loss").get<std::string>();
  if (loss == "reconstruction")
    c.loss = FinetuneLoss::Reconstruction;
  else if (loss == "l2")
    c.loss = FinetuneLoss::L2;
  else
    throw ConfigurationError("unknown stage3 loss '" + loss + "' (expected reconstruction or l2)");
  c.weights.identity = j.at("gamma_identity").get<double>();
  c.weights.self = j.at("gamma_self").get<double>();
  c.weights.cross = j.at("gamma_cross").get<double>();
  c.l2_beta = j.at("l2_beta").get<double>();
  c.lr = j.at("lr").get<double>();
  c.patience = j.at("patience").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.pairs_per_epoch = j.at("pairs_per_epoch").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.adam.beta1 = j.at("adam_beta1").get<double>();
  c.adam.beta2 = j.at("adam_beta2").get<double>();
  c.adam.epsilon = j.at("adam_epsilon").get<double>();
}

TrainResult train_stage2(const LabeledSet& data, const ArchConfig& arch, const Stage2Config& config,
                         const EpochCallback& on_epoch) {
  arch.validate();
  return train_stage2(data, init_params(arch, config.seed), config, on_epoch);
}

TrainResult train_stage2(const LabeledSet& data, ModelParams init, const Stage2Config& config,
                         const EpochCallback& on_epoch) {
  validate(config);
  check_labels(data, init.arch);
  TrainResult result{std::move(init), {}};
  ModelParams& params = result.params;
  for (Group g : kAllGroups) params.set_frozen(g, false);
  // no stage-2 loss term reaches the reconstructor
  params.set_frozen(Group::Reconstructor, true);

  result.log.kind = LogKind::Stage2;
  AdamOptimizer adam(config.adam);
  Rng rng = make_rng(config.seed, {kShuffleTag});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = stage2_learning_rate(config, epoch);
    shuffle(order.begin(), order.end(), rng);
    LossTerms sum;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      const std::vector<int> labels = gather_labels(data.labels, idx);
      const Objective obj = multitask_objective(params, gather_columns(data.images, idx), labels,
                                                gather_columns(data.pose, idx), gather_columns(data.landmarks, idx),
                                                config.weights);
      require_finite(obj.terms, epoch, adam.step_count() + 1);
      adam.step(params, obj.grads, lr);
      sum += obj.terms * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) correct += obj.predicted[k] == labels[k] ? 1 : 0;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.terms = sum * (1.0 / static_cast<double>(data.size()));
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.log.best_epoch = config.epochs - 1;
  params.set_frozen(Group::Reconstructor, false);
  return result;
}

TrainResult train_stage3(const ModelParams& stage2, const LabeledSet& data, const Stage3Config& config,
                         const Validator& validator, const EpochCallback& on_epoch) {
  validate(config);
  check_labels(data, stage2.arch);
  TrainResult result{stage2, {}};
  ModelParams& params = result.params;
  for (Group g : {Group::Backbone, Group::IdClassifier, Group::PoseHead, Group::LandmarkHead})
    params.set_frozen(g, true);
  params.set_frozen(Group::Identity, false);
  params.set_frozen(Group::NonIdentity, false);
  const bool recon = config.loss == FinetuneLoss::Reconstruction;
  if (recon) {
    reinit_group(params, Group::Reconstructor, derive_seed(config.seed, {kReconInitTag}));
    params.set_frozen(Group::Reconstructor, false);
  } else {
    params.set_frozen(Group::Reconstructor, true);
  }
  result.log.kind = recon ? LogKind::Stage3Reconstruction : LogKind::Stage3L2;

  const PairSampler sampler(std::span<const int>(data.labels), std::span<const double>(data.yaw));
  const MatrixXd rich = rich_embeddings(params, data.images);
  const std::size_t pairs = config.pairs_per_epoch > 0 ? static_cast<std::size_t>(config.pairs_per_epoch) : data.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  AdamOptimizer adam(config.adam);
  ModelParams best = params;
  double best_score = -std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng rng = make_rng(config.seed, {kPairTag, static_cast<std::uint64_t>(epoch)});
    std::vector<std::size_t> refs(pairs), peers(pairs);
    for (std::size_t k = 0; k < pairs; ++k) {
      const GenuinePair p = sampler.sample(rng);
      refs[k] = p.reference;
      peers[k] = p.peer;
    }
    LossTerms sum;
    for (std::size_t start = 0; start < pairs; start += bs) {
      const std::size_t len = std::min(bs, pairs - start);
      const std::span<const std::size_t> r(refs.data() + start, len), q(peers.data() + start, len);
      const std::vector<int> labels = gather_labels(data.labels, r);
      const MatrixXd e1 = gather_columns(rich, r), e2 = gather_columns(rich, q);
      const Objective obj = recon ? reconstruction_objective(params, e1, e2, labels, config.weights)
                                  : l2_pair_objective(params, e1, e2, labels, config.weights.identity, config.l2_beta);
      require_finite(obj.terms, epoch, adam.step_count() + 1);
      adam.step(params, obj.grads, config.lr);
      sum += obj.terms * static_cast<double>(len);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.lr;
    rec.terms = sum * (1.0 / static_cast<double>(pairs));
    rec.val_rank1 = validator ? validator(params) : std::numeric_limits<double>::quiet_NaN();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!validator) {
      best = params;
      result.log.best_epoch = epoch;
      continue;
    }
    if (rec.val_rank1 > best_score) {
      best_score = rec.val_rank1;
      best = params;
      result.log.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.params = std::move(best);
  return result;
}

MatrixXd rich_embeddings(const ModelParams& params, const MatrixXd& images, int chunk) {
  if (chunk < 1) throw std::invalid_argument("chunk must be positive");
  MatrixXd out(params.arch.rich_dim, images.cols());
  for (Eigen::Index start = 0; start < images.cols(); start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, images.cols() - start);
    out.middleCols(start, len) = forward_rich(params, images.middleCols(start, len));
  }
  return out;
}

double identity_accuracy(const ModelParams& params, const LabeledSet& data) {
  if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const MatrixXd rich = rich_embeddings(params, data.images);
  const EmbeddingBatch out = forward_branches(params, rich);
  std::size_t correct = 0;
  for (Eigen::Index b = 0; b < out.logits.cols(); ++b) {
    Eigen::Index best = 0;
    out.logits.col(b).maxCoeff(&best);
    correct += static_cast<int>(best) == data.labels[static_cast<std::size_t>(b)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string TrainingLog::to_csv() const {
  std::ostringstream os;
  switch (kind) {
    case LogKind::Stage2: os << "epoch,lr,loss_total,loss_ce,loss_pose,loss_lmk,train_acc\n"; break;
    case LogKind::Stage3Reconstruction: os << "epoch,lr,loss_total,loss_ce,loss_self,loss_cross,val_rank1\n"; break;
    case LogKind::Stage3L2: os << "epoch,lr,loss_total,loss_ce,loss_l2,val_rank1\n"; break;
  }
  for (const auto& e : epochs) {
    os << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.terms.total) << ',' << fmt(e.terms.ce) << ',';
    switch (kind) {
      case LogKind::Stage2:
        os << fmt(e.terms.pose) << ',' << fmt(e.terms.landmark) << ',' << fmt(e.train_accuracy);
        break;
      case LogKind::Stage3Reconstruction:
        os << fmt(e.terms.self) << ',' << fmt(e.terms.cross) << ',' << fmt(e.val_rank1);
        break;
      case LogKind::Stage3L2:
        os << fmt(e.terms.l2) << ',' << fmt(e.val_rank1);
        break;
    }
    os << '\n';
  }
  return os.str();
}

void TrainingLog::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << to_csv();
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace pdisent
