#include "pdisent/gradcheck.hpp"
#include "pdisent/network.hpp"
#include "pdisent/random.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace pdisent;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelParams random_params(const ArchConfig& arch, std::uint64_t seed) {
  ModelParams p = init_params(arch, seed);
  Rng rng = make_rng(seed, {99});
  for (Group g : kAllGroups)
    for (auto& t : p.group(g).tensors)
      if (t.shape.size() == 1)
        for (auto& v : t.data) v = 0.1 * standard_normal(rng);
  return p;
}

MatrixXd random_images(int size, int batch, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  MatrixXd x(size * size, batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform_unit(rng);
  return x;
}

// Direct-loop convolution stack, pooling and affine.
VectorXd rich_oracle(const ModelParams& p, const VectorXd& image) {
  const auto specs = conv_specs(p.arch);
  const auto& g = p.group(Group::Backbone);
  std::vector<double> act(image.data(), image.data() + image.size());  // [y][x][c]
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto& w = g.tensors[2 * i];  // {out, 3, 3, in}
    const auto& b = g.tensors[2 * i + 1];
    std::vector<double> out(static_cast<std::size_t>(s.out_size * s.out_size * s.out_channels));
    for (int oy = 0; oy < s.out_size; ++oy)
      for (int ox = 0; ox < s.out_size; ++ox)
        for (int co = 0; co < s.out_channels; ++co) {
          double sum = b.data[co];
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * s.stride - 1 + ky, ix = ox * s.stride - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= s.in_size || ix >= s.in_size) continue;
              for (int ci = 0; ci < s.in_channels; ++ci)
                sum += w.data[((co * 3 + ky) * 3 + kx) * s.in_channels + ci] *
                       act[(iy * s.in_size + ix) * s.in_channels + ci];
            }
          out[(oy * s.out_size + ox) * s.out_channels + co] = std::max(0.0, sum);
        }
    act = std::move(out);
  }
  const auto& last = specs.back();
  VectorXd pooled = VectorXd::Zero(last.out_channels);
  const int area = last.out_size * last.out_size;
  for (int q = 0; q < area; ++q)
    for (int c = 0; c < last.out_channels; ++c) pooled(c) += act[q * last.out_channels + c] / area;
  const auto& fw = g.tensors[2 * specs.size()];
  const auto& fb = g.tensors[2 * specs.size() + 1];
  return fw.matrix() * pooled + fb.vector();
}

VectorXd relu(const VectorXd& v) { return v.cwiseMax(0.0); }

}  // namespace

TEST(Network, DefaultShapes) {
  ArchConfig arch;
  const auto specs = conv_specs(arch);
  ASSERT_EQ(specs.size(), 4u);
  EXPECT_EQ(specs.back().out_size, 2);
  EXPECT_EQ(specs.back().out_channels, 128);
  const ModelParams p = init_params(arch, 1);
  EXPECT_EQ(p.tensor("identity.weight").shape, (std::vector<int>{256, 512}));
  EXPECT_EQ(p.tensor("nonidentity.weight").shape, (std::vector<int>{128, 512}));
  EXPECT_EQ(p.tensor("pose_head.weight").shape, (std::vector<int>{7, 128}));
  EXPECT_EQ(p.tensor("reconstructor.fc1.weight").shape, (std::vector<int>{512, 384}));
  EXPECT_EQ(p.tensor("reconstructor.fc2.weight").shape, (std::vector<int>{512, 512}));
}

TEST(Network, InitIsDeterministicAndBounded) {
  const ArchConfig arch = reduced_arch();
  const ModelParams a = init_params(arch, 5), b = init_params(arch, 5), c = init_params(arch, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const auto& w = a.tensor("identity.weight");
  const double bound = std::sqrt(6.0 / arch.rich_dim);
  for (double v : w.data) EXPECT_LE(std::abs(v), bound);
  for (double v : a.tensor("identity.bias").data) EXPECT_EQ(v, 0.0);
}

TEST(Network, ForwardRichMatchesDirectConvolution) {
  ArchConfig arch = reduced_arch();
  arch.image_size = 9;  // odd size exercises the stride-2 border
  const ModelParams p = random_params(arch, 3);
  const MatrixXd x = random_images(arch.image_size, 4, 8);
  const MatrixXd rich = forward_rich(p, x);
  for (int b = 0; b < 4; ++b) EXPECT_LT((rich.col(b) - rich_oracle(p, x.col(b))).norm(), 1e-10);
}

TEST(Network, BranchesAndHeads) {
  const ArchConfig arch = reduced_arch();
  const ModelParams p = random_params(arch, 4);
  const MatrixXd x = random_images(arch.image_size, 3, 9);
  const EmbeddingBatch out = forward(p, x);
  for (int b = 0; b < 3; ++b) {
    const VectorXd er = out.e_r.col(b);
    const VectorXd ei = relu(p.tensor("identity.weight").matrix() * er + p.tensor("identity.bias").vector());
    const VectorXd en = relu(p.tensor("nonidentity.weight").matrix() * er + p.tensor("nonidentity.bias").vector());
    EXPECT_LT((out.e_i.col(b) - ei).norm(), 1e-12);
    EXPECT_LT((out.e_n.col(b) - en).norm(), 1e-12);
    EXPECT_LT((out.logits.col(b) - (p.tensor("classifier.weight").matrix() * ei + p.tensor("classifier.bias").vector())).norm(), 1e-12);
    EXPECT_LT((out.e_p.col(b) - (p.tensor("pose_head.weight").matrix() * en + p.tensor("pose_head.bias").vector())).norm(), 1e-12);
    EXPECT_LT((out.e_l.col(b) - (p.tensor("landmark_head.weight").matrix() * en + p.tensor("landmark_head.bias").vector())).norm(), 1e-12);
  }
  EXPECT_EQ(out.e_p.rows(), arch.pose_dim);
  EXPECT_EQ(out.e_l.rows(), arch.landmark_dim);
}

TEST(Network, BatchEquivariance) {
  const ArchConfig arch;
  const ModelParams p = random_params(arch, 2);
  const MatrixXd x = random_images(arch.image_size, 5, 3);
  const EmbeddingBatch batch = forward(p, x);
  for (int b = 0; b < 5; ++b) {
    const EmbeddingBatch one = forward(p, x.col(b));
    EXPECT_LT((batch.e_r.col(b) - one.e_r.col(0)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((batch.e_i.col(b) - one.e_i.col(0)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((batch.logits.col(b) - one.logits.col(0)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((batch.e_l.col(b) - one.e_l.col(0)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Network, ReconstructorAndPairWiring) {
  const ArchConfig arch = reduced_arch();
  const ModelParams p = random_params(arch, 6);
  Rng rng = make_rng(4);
  MatrixXd r1(arch.rich_dim, 2), r2(arch.rich_dim, 2);
  for (Eigen::Index i = 0; i < r1.size(); ++i) {
    r1.data()[i] = standard_normal(rng);
    r2.data()[i] = standard_normal(rng);
  }
  const PairForward pf = forward_pair_from_rich(p, r1, r2);
  const MatrixXd self = forward_reconstruct(p, pf.first.e_i, pf.first.e_n);
  const MatrixXd cross = forward_reconstruct(p, pf.second.e_i, pf.first.e_n);
  EXPECT_LT((pf.self_recon - self).norm(), 1e-12);
  EXPECT_LT((pf.cross_recon - cross).norm(), 1e-12);
  VectorXd in(arch.id_dim + arch.nonid_dim);
  in << pf.first.e_i.col(0), pf.first.e_n.col(0);
  const VectorXd h = relu(p.tensor("reconstructor.fc1.weight").matrix() * in + p.tensor("reconstructor.fc1.bias").vector());
  const VectorXd g = p.tensor("reconstructor.fc2.weight").matrix() * h + p.tensor("reconstructor.fc2.bias").vector();
  EXPECT_LT((self.col(0) - g).norm(), 1e-12);
  EXPECT_EQ(self.rows(), arch.rich_dim);
}

TEST(Network, RejectsWrongImageSize) {
  const ArchConfig arch = reduced_arch();
  const ModelParams p = init_params(arch, 1);
  EXPECT_THROW(forward_rich(p, MatrixXd::Zero(arch.image_size * arch.image_size + 1, 1)), std::invalid_argument);
}

TEST(Network, GroupHashTracksOnlyItsGroup) {
  ModelParams p = init_params(reduced_arch(), 1);
  std::array<std::uint64_t, kNumGroups> before{};
  for (Group g : kAllGroups) before[static_cast<int>(g)] = p.group_hash(g);
  p.tensor("nonidentity.weight").data[0] += 1e-9;
  for (Group g : kAllGroups) {
    if (g == Group::NonIdentity)
      EXPECT_NE(p.group_hash(g), before[static_cast<int>(g)]);
    else
      EXPECT_EQ(p.group_hash(g), before[static_cast<int>(g)]);
  }
}

TEST(Network, ReinitGroupLeavesOthers) {
  ModelParams p = random_params(reduced_arch(), 1);
  const ModelParams q = p;
  reinit_group(p, Group::Reconstructor, 77);
  EXPECT_NE(p.group(Group::Reconstructor), q.group(Group::Reconstructor));
  EXPECT_EQ(p.group(Group::Identity), q.group(Group::Identity));
  EXPECT_EQ(p.group(Group::Backbone), q.group(Group::Backbone));
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  ModelParams p = random_params(reduced_arch(), 2);
  p.set_frozen(Group::Backbone, true);
  const auto path = (std::filesystem::temp_directory_path() / "pdisent_ckpt_test.ckpt").string();
  save_checkpoint(p, path, {{"note", "x"}});
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(q.arch, p.arch);
  for (Group g : kAllGroups) EXPECT_EQ(q.group(g).tensors, p.group(g).tensors);
  EXPECT_TRUE(q.frozen(Group::Backbone));
  EXPECT_FALSE(q.frozen(Group::Identity));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  const ModelParams p = init_params(reduced_arch(), 2);
  Container c = checkpoint_to_container(p);
  c.manifest["arch"]["id_dim"] = 7;
  EXPECT_THROW(checkpoint_from_container(c), ContainerError);
}

TEST(Arch, JsonRoundTripAndValidation) {
  ArchConfig a = reduced_arch();
  nlohmann::json j = a;
  EXPECT_EQ(j.get<ArchConfig>(), a);
  a.stage_channels.clear();
  EXPECT_THROW(a.validate(), std::invalid_argument);
}
