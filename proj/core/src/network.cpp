#include "pdisent/network.hpp"

#include "pdisent/dataset.hpp"
#include "pdisent/random.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace pdisent {

namespace {

using Eigen::MatrixXd;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Index of the tensors inside each group.
constexpr std::size_t kWeight = 0;
constexpr std::size_t kBias = 1;

Eigen::Map<const RowMatrix> weight(const ParamGroup& g, std::size_t layer = 0) {
  return g.tensors[2 * layer + kWeight].matrix();
}
Eigen::Map<const Eigen::VectorXd> bias(const ParamGroup& g, std::size_t layer = 0) {
  return g.tensors[2 * layer + kBias].vector();
}
Eigen::Map<RowMatrix> weight(ParamGroup& g, std::size_t layer = 0) {
  return g.tensors[2 * layer + kWeight].matrix();
}
Eigen::Map<Eigen::VectorXd> bias(ParamGroup& g, std::size_t layer = 0) {
  return g.tensors[2 * layer + kBias].vector();
}

MatrixXd affine(const ParamGroup& g, const MatrixXd& x, std::size_t layer = 0) {
  MatrixXd y = weight(g, layer) * x;
  y.colwise() += bias(g, layer);
  return y;
}

void relu_inplace(MatrixXd& m) { m = m.cwiseMax(0.0); }

// d(pre-activation) from d(post-activation) and the post-activation values.
MatrixXd relu_backward(const MatrixXd& d_out, const MatrixXd& out) {
  return (out.array() > 0.0).select(d_out, 0.0);
}

// Accumulates dW += d_y x^T, db += rowsum(d_y).
void accumulate_affine(ParamGroup& g, const MatrixXd& d_y, const MatrixXd& x, std::size_t layer = 0) {
  weight(g, layer).noalias() += d_y * x.transpose();
  bias(g, layer) += d_y.rowwise().sum();
}

void add_linear(ParamGroup& g, const std::string& prefix, int out, int in) {
  g.tensors.emplace_back(prefix + ".weight", std::vector<int>{out, in});
  g.tensors.emplace_back(prefix + ".bias", std::vector<int>{out});
}

std::uint64_t name_tag(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void init_tensor_group(ParamGroup& g, std::uint64_t seed) {
  for (auto& t : g.tensors) {
    if (t.shape.size() == 1) {
      std::fill(t.data.begin(), t.data.end(), 0.0);
      continue;
    }
    const double fan_in = static_cast<double>(t.size()) / t.shape.front();
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng = make_rng(seed, {name_tag(t.name)});
    for (auto& v : t.data) v = bound * (2.0 * uniform_unit(rng) - 1.0);
  }
}

void im2col(const MatrixXd& act, const ConvSpec& s, int batch, MatrixXd& cols) {
  const int cin = s.in_channels, h = s.in_size, o = s.out_size;
  cols.setZero(9 * cin, static_cast<Eigen::Index>(batch) * o * o);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < o; ++oy) {
      for (int ox = 0; ox < o; ++ox) {
        const Eigen::Index q = (static_cast<Eigen::Index>(b) * o + oy) * o + ox;
        double* dst = cols.col(q).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * s.stride - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * s.stride - 1 + kx;
            if (ix < 0 || ix >= h) continue;
            const Eigen::Index src = (static_cast<Eigen::Index>(b) * h + iy) * h + ix;
            std::memcpy(dst + (ky * 3 + kx) * cin, act.col(src).data(), sizeof(double) * static_cast<std::size_t>(cin));
          }
        }
      }
    }
  }
}

void col2im(const MatrixXd& d_cols, const ConvSpec& s, int batch, MatrixXd& d_act) {
  const int cin = s.in_channels, h = s.in_size, o = s.out_size;
  d_act.setZero(cin, static_cast<Eigen::Index>(batch) * h * h);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < o; ++oy) {
      for (int ox = 0; ox < o; ++ox) {
        const Eigen::Index q = (static_cast<Eigen::Index>(b) * o + oy) * o + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * s.stride - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * s.stride - 1 + kx;
            if (ix < 0 || ix >= h) continue;
            const Eigen::Index dst = (static_cast<Eigen::Index>(b) * h + iy) * h + ix;
            d_act.col(dst) += d_cols.col(q).segment((ky * 3 + kx) * cin, cin);
          }
        }
      }
    }
  }
}

}  // namespace

void ArchConfig::validate() const {
  require(image_size >= 1, "arch: image_size must be positive");
  require(!stage_channels.empty(), "arch: at least one stage is required");
  for (int c : stage_channels) require(c >= 1, "arch: stage channels must be positive");
  require(convs_per_stage >= 1, "arch: convs_per_stage must be >= 1");
  require(rich_dim >= 1 && id_dim >= 1 && nonid_dim >= 1 && num_classes >= 1 && pose_dim >= 1 &&
              landmark_dim >= 1 && recon_hidden >= 1,
          "arch: all layer widths must be positive");
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"image_size", a.image_size},     {"stage_channels", a.stage_channels},
       {"convs_per_stage", a.convs_per_stage}, {"rich_dim", a.rich_dim},
       {"id_dim", a.id_dim},             {"nonid_dim", a.nonid_dim},
       {"num_classes", a.num_classes},   {"pose_dim", a.pose_dim},
       {"landmark_dim", a.landmark_dim}, {"recon_hidden", a.recon_hidden}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  a.image_size = j.at("image_size").get<int>();
  a.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  a.convs_per_stage = j.at("convs_per_stage").get<int>();
  a.rich_dim = j.at("rich_dim").get<int>();
  a.id_dim = j.at("id_dim").get<int>();
  a.nonid_dim = j.at("nonid_dim").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.pose_dim = j.at("pose_dim").get<int>();
  a.landmark_dim = j.at("landmark_dim").get<int>();
  a.recon_hidden = j.at("recon_hidden").get<int>();
}

const char* group_name(Group g) {
  switch (g) {
    case Group::Backbone: return "backbone";
    case Group::Identity: return "identity";
    case Group::NonIdentity: return "nonidentity";
    case Group::IdClassifier: return "classifier";
    case Group::PoseHead: return "pose_head";
    case Group::LandmarkHead: return "landmark_head";
    case Group::Reconstructor: return "reconstructor";
  }
  return "?";
}

Tensor& ModelParams::tensor(const std::string& name) {
  for (auto& g : groups_)
    for (auto& t : g.tensors)
      if (t.name == name) return t;
  throw std::out_of_range("no parameter tensor named '" + name + "'");
}

const Tensor& ModelParams::tensor(const std::string& name) const {
  return const_cast<ModelParams*>(this)->tensor(name);
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& g : z.groups_) {
    g.frozen = false;
    for (auto& t : g.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : groups_)
    for (const auto& t : g.tensors) n += t.size();
  return n;
}

std::uint64_t ModelParams::group_hash(Group g) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : group(g).tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    h ^= fnv1a64({p, t.data.size() * sizeof(double)});
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<ConvSpec> conv_specs(const ArchConfig& arch) {
  std::vector<ConvSpec> specs;
  int channels = 1;
  int size = arch.image_size;
  for (int out : arch.stage_channels) {
    for (int k = 0; k < arch.convs_per_stage; ++k) {
      const int stride = k == 0 ? 2 : 1;
      const int out_size = (size - 1) / stride + 1;
      specs.push_back({channels, out, stride, size, out_size});
      channels = out;
      size = out_size;
    }
  }
  return specs;
}

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  auto& backbone = p.group(Group::Backbone);
  const auto specs = conv_specs(arch);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i);
    backbone.tensors.emplace_back(prefix + ".weight",
                                  std::vector<int>{specs[i].out_channels, 3, 3, specs[i].in_channels});
    backbone.tensors.emplace_back(prefix + ".bias", std::vector<int>{specs[i].out_channels});
  }
  add_linear(backbone, "backbone.fc", arch.rich_dim, specs.back().out_channels);
  add_linear(p.group(Group::Identity), "identity", arch.id_dim, arch.rich_dim);
  add_linear(p.group(Group::NonIdentity), "nonidentity", arch.nonid_dim, arch.rich_dim);
  add_linear(p.group(Group::IdClassifier), "classifier", arch.num_classes, arch.id_dim);
  add_linear(p.group(Group::PoseHead), "pose_head", arch.pose_dim, arch.nonid_dim);
  add_linear(p.group(Group::LandmarkHead), "landmark_head", arch.landmark_dim, arch.nonid_dim);
  auto& recon = p.group(Group::Reconstructor);
  add_linear(recon, "reconstructor.fc1", arch.recon_hidden, arch.id_dim + arch.nonid_dim);
  add_linear(recon, "reconstructor.fc2", arch.rich_dim, arch.recon_hidden);
  for (Group g : kAllGroups) init_tensor_group(p.group(g), seed);
  return p;
}

void reinit_group(ModelParams& params, Group g, std::uint64_t seed) {
  init_tensor_group(params.group(g), seed);
}

Eigen::MatrixXd image_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
  const int size = corpus.manifest.image_size;
  const Eigen::Index hw = static_cast<Eigen::Index>(size) * size;
  MatrixXd x(hw, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& px = corpus.samples[indices[k]].image.pixels;
    x.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXf>(px.data(), hw).cast<double>();
  }
  return x;
}

Eigen::MatrixXd forward_rich(const ModelParams& params, const Eigen::MatrixXd& images,
                             BackboneTrace* trace) {
  const auto& arch = params.arch;
  require(images.rows() == static_cast<Eigen::Index>(arch.image_size) * arch.image_size,
          "forward_rich: image batch has " + std::to_string(images.rows()) + " pixels per image, arch expects " +
              std::to_string(arch.image_size * arch.image_size));
  const int batch = static_cast<int>(images.cols());
  const auto specs = conv_specs(arch);
  const auto& g = params.group(Group::Backbone);

  MatrixXd act = Eigen::Map<const MatrixXd>(images.data(), 1, images.size());
  MatrixXd cols;
  if (trace) {
    trace->cols.assign(specs.size(), MatrixXd());
    trace->acts.assign(specs.size(), MatrixXd());
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    im2col(act, specs[i], batch, cols);
    act.noalias() = weight(g, i) * cols;
    act.colwise() += bias(g, i);
    relu_inplace(act);
    if (trace) {
      trace->cols[i] = cols;
      trace->acts[i] = act;
    }
  }
  const auto& last = specs.back();
  const Eigen::Index area = static_cast<Eigen::Index>(last.out_size) * last.out_size;
  MatrixXd pooled(last.out_channels, batch);
  for (int b = 0; b < batch; ++b)
    pooled.col(b) = act.middleCols(b * area, area).rowwise().mean();
  MatrixXd rich = affine(g, pooled, specs.size());
  if (trace) trace->pooled = std::move(pooled);
  return rich;
}

void backward_rich(const ModelParams& params, const BackboneTrace& trace, const Eigen::MatrixXd& d_rich,
                   ModelParams& grads) {
  if (params.frozen(Group::Backbone)) return;
  const auto specs = conv_specs(params.arch);
  const auto& g = params.group(Group::Backbone);
  auto& dg = grads.group(Group::Backbone);
  const int batch = static_cast<int>(d_rich.cols());
  const std::size_t fc = specs.size();

  accumulate_affine(dg, d_rich, trace.pooled, fc);
  const MatrixXd d_pooled = weight(g, fc).transpose() * d_rich;

  const auto& last = specs.back();
  const Eigen::Index area = static_cast<Eigen::Index>(last.out_size) * last.out_size;
  MatrixXd d_act(last.out_channels, batch * area);
  for (int b = 0; b < batch; ++b)
    d_act.middleCols(b * area, area) = (d_pooled.col(b) / static_cast<double>(area)).replicate(1, area);

  for (std::size_t i = specs.size(); i-- > 0;) {
    const MatrixXd d_pre = relu_backward(d_act, trace.acts[i]);
    accumulate_affine(dg, d_pre, trace.cols[i], i);
    if (i == 0) break;
    const MatrixXd d_cols = weight(g, i).transpose() * d_pre;
    col2im(d_cols, specs[i], batch, d_act);
  }
}

EmbeddingBundle EmbeddingBatch::bundle(Eigen::Index k) const {
  return {e_r.col(k), e_i.col(k), e_n.col(k), e_p.col(k), e_l.col(k), logits.col(k)};
}

EmbeddingBatch forward_branches(const ModelParams& params, const Eigen::MatrixXd& e_r) {
  require(e_r.rows() == params.arch.rich_dim,
          "forward_branches: rich embedding has " + std::to_string(e_r.rows()) + " rows, expected " +
              std::to_string(params.arch.rich_dim));
  EmbeddingBatch out;
  out.e_r = e_r;
  out.e_i = affine(params.group(Group::Identity), e_r);
  relu_inplace(out.e_i);
  out.e_n = affine(params.group(Group::NonIdentity), e_r);
  relu_inplace(out.e_n);
  out.logits = affine(params.group(Group::IdClassifier), out.e_i);
  out.e_p = affine(params.group(Group::PoseHead), out.e_n);
  out.e_l = affine(params.group(Group::LandmarkHead), out.e_n);
  return out;
}

Eigen::MatrixXd backward_branches(const ModelParams& params, const EmbeddingBatch& out,
                                  const BranchGrads& up, ModelParams& grads, bool want_rich_grad) {
  const Eigen::Index batch = out.size();
  MatrixXd d_e_i = up.d_e_i.size() ? up.d_e_i : MatrixXd::Zero(out.e_i.rows(), batch);
  MatrixXd d_e_n = up.d_e_n.size() ? up.d_e_n : MatrixXd::Zero(out.e_n.rows(), batch);

  auto head = [&](Group g, const MatrixXd& d_y, const MatrixXd& x, MatrixXd& d_x) {
    if (d_y.size() == 0) return;
    if (!params.frozen(g)) accumulate_affine(grads.group(g), d_y, x);
    d_x.noalias() += weight(params.group(g)).transpose() * d_y;
  };
  head(Group::IdClassifier, up.d_logits, out.e_i, d_e_i);
  head(Group::PoseHead, up.d_e_p, out.e_n, d_e_n);
  head(Group::LandmarkHead, up.d_e_l, out.e_n, d_e_n);

  MatrixXd d_rich;
  if (want_rich_grad) d_rich = MatrixXd::Zero(out.e_r.rows(), batch);
  auto branch = [&](Group g, const MatrixXd& d_y, const MatrixXd& y) {
    const MatrixXd d_pre = relu_backward(d_y, y);
    if (!params.frozen(g)) accumulate_affine(grads.group(g), d_pre, out.e_r);
    if (want_rich_grad) d_rich.noalias() += weight(params.group(g)).transpose() * d_pre;
  };
  branch(Group::Identity, d_e_i, out.e_i);
  branch(Group::NonIdentity, d_e_n, out.e_n);
  return d_rich;
}

EmbeddingBatch forward(const ModelParams& params, const Eigen::MatrixXd& images) {
  return forward_branches(params, forward_rich(params, images));
}

Eigen::MatrixXd forward_reconstruct(const ModelParams& params, const Eigen::MatrixXd& e_i,
                                    const Eigen::MatrixXd& e_n, ReconTrace* trace) {
  const auto& arch = params.arch;
  require(e_i.rows() == arch.id_dim && e_n.rows() == arch.nonid_dim && e_i.cols() == e_n.cols(),
          "forward_reconstruct: expected (" + std::to_string(arch.id_dim) + ", " +
              std::to_string(arch.nonid_dim) + ") inputs with equal batch sizes");
  const auto& g = params.group(Group::Reconstructor);
  const auto w1 = weight(g, 0);
  MatrixXd hidden = w1.leftCols(arch.id_dim) * e_i;
  hidden.noalias() += w1.rightCols(arch.nonid_dim) * e_n;
  hidden.colwise() += bias(g, 0);
  relu_inplace(hidden);
  MatrixXd out = affine(g, hidden, 1);
  if (trace) trace->hidden = std::move(hidden);
  return out;
}

void backward_reconstruct(const ModelParams& params, const Eigen::MatrixXd& e_i, const Eigen::MatrixXd& e_n,
                          const ReconTrace& trace, const Eigen::MatrixXd& d_out, ModelParams& grads,
                          Eigen::MatrixXd& d_e_i, Eigen::MatrixXd& d_e_n) {
  const auto& arch = params.arch;
  const auto& g = params.group(Group::Reconstructor);
  const bool train = !params.frozen(Group::Reconstructor);
  auto& dg = grads.group(Group::Reconstructor);
  if (train) accumulate_affine(dg, d_out, trace.hidden, 1);
  const MatrixXd d_hidden = relu_backward(weight(g, 1).transpose() * d_out, trace.hidden);
  if (train) {
    auto dw1 = weight(dg, 0);
    dw1.leftCols(arch.id_dim).noalias() += d_hidden * e_i.transpose();
    dw1.rightCols(arch.nonid_dim).noalias() += d_hidden * e_n.transpose();
    bias(dg, 0) += d_hidden.rowwise().sum();
  }
  const auto w1 = weight(g, 0);
  d_e_i.noalias() += w1.leftCols(arch.id_dim).transpose() * d_hidden;
  d_e_n.noalias() += w1.rightCols(arch.nonid_dim).transpose() * d_hidden;
}

PairForward forward_pair_from_rich(const ModelParams& params, const Eigen::MatrixXd& e_r1,
                                   const Eigen::MatrixXd& e_r2) {
  require(e_r1.cols() == e_r2.cols(), "forward_pair: both sides need the same batch size");
  PairForward p;
  p.first = forward_branches(params, e_r1);
  p.second = forward_branches(params, e_r2);
  p.self_recon = forward_reconstruct(params, p.first.e_i, p.first.e_n, &p.self_trace);
  p.cross_recon = forward_reconstruct(params, p.second.e_i, p.first.e_n, &p.cross_trace);
  return p;
}

PairForward forward_pair(const ModelParams& params, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
  return forward_pair_from_rich(params, forward_rich(params, x1), forward_rich(params, x2));
}

Container checkpoint_to_container(const ModelParams& params, const nlohmann::json& extra) {
  Container c;
  nlohmann::json frozen = nlohmann::json::object();
  for (Group g : kAllGroups) frozen[group_name(g)] = params.frozen(g);
  c.manifest = {{"format", "pdisent-checkpoint"}, {"version", 1}, {"arch", params.arch}, {"frozen", frozen}};
  if (!extra.is_null()) c.manifest["extra"] = extra;
  for (Group g : kAllGroups)
    for (const auto& t : params.group(g).tensors) {
      std::vector<std::uint64_t> shape(t.shape.begin(), t.shape.end());
      c.add(t.name, std::move(shape), std::vector<double>(t.data.begin(), t.data.end()));
    }
  return c;
}

ModelParams checkpoint_from_container(const Container& c) {
  using Kind = ContainerError::Kind;
  ArchConfig arch;
  try {
    if (c.manifest.at("format") != "pdisent-checkpoint")
      throw ContainerError(Kind::Corrupt, "container is not a checkpoint");
    arch = c.manifest.at("arch").get<ArchConfig>();
    arch.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(Kind::Corrupt, std::string("checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ContainerError(Kind::Corrupt, std::string("checkpoint arch: ") + e.what());
  }
  ModelParams p = init_params(arch, 0);
  std::size_t expected = 0;
  for (Group g : kAllGroups) {
    const auto& frozen = c.manifest.at("frozen");
    if (frozen.contains(group_name(g))) p.set_frozen(g, frozen.at(group_name(g)).get<bool>());
    for (auto& t : p.group(g).tensors) {
      ++expected;
      const auto& arr = c.at(t.name);
      if (arr.shape != std::vector<std::uint64_t>(t.shape.begin(), t.shape.end()))
        throw ContainerError(Kind::ManifestMismatch, "checkpoint tensor '" + t.name + "' has the wrong shape for its arch");
      {
      const auto& v = c.values<double>(t.name);
      t.data.assign(v.begin(), v.end());
    }
    }
  }
  if (c.arrays().size() != expected)
    throw ContainerError(Kind::ManifestMismatch, "checkpoint holds tensors its arch does not define");
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path, const nlohmann::json& extra) {
  checkpoint_to_container(params, extra).save(path);
}

ModelParams load_checkpoint(const std::string& path) { return checkpoint_from_container(Container::load(path)); }

}  // namespace pdisent
