#include "pdisent/random.hpp"
#include "pdisent/renderer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

using namespace pdisent;

namespace {

struct Scene {
  Points2D points;
  Eigen::VectorXd depth;
  Texture texture;
};

Scene random_scene(Rng& rng, int n, int size) {
  Scene s;
  s.points.resize(n, 2);
  s.depth.resize(n);
  s.texture.intensity.resize(n);
  for (int v = 0; v < n; ++v) {
    s.points(v, 0) = -2.0 + (size + 4.0) * uniform_unit(rng);
    s.points(v, 1) = -2.0 + (size + 4.0) * uniform_unit(rng);
    // coarse depths so ties occur
    s.depth(v) = static_cast<double>(uniform_index(rng, 6));
    s.texture.intensity(v) = 0.1 + 0.9 * uniform_unit(rng);
  }
  return s;
}

// Per pixel: among vertices whose 2x2 footprint covers it, take the largest
// depth, breaking ties by the larger intensity.
Image brute_force(const Scene& s, int size) {
  Image img(size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double best_z = -std::numeric_limits<double>::infinity();
      float best_v = 0.0f;
      bool hit = false;
      for (Eigen::Index v = 0; v < s.points.rows(); ++v) {
        const double x = s.points(v, 0), y = s.points(v, 1);
        if (x < 0 || x > size || y < 0 || y > size) continue;
        const long vc = std::lround(x), vr = std::lround(y);
        if (!((r == vr || r == vr - 1) && (c == vc || c == vc - 1))) continue;
        const auto value = static_cast<float>(s.texture.intensity(v));
        if (!hit || s.depth(v) > best_z || (s.depth(v) == best_z && value > best_v)) {
          best_z = s.depth(v);
          best_v = value;
          hit = true;
        }
      }
      img.at(r, c) = best_v;
    }
  return img;
}

Scene permuted(const Scene& s, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(s.points.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  shuffle(order.begin(), order.end(), rng);
  Scene out = s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.points.row(i) = s.points.row(order[k]);
    out.depth(i) = s.depth(order[k]);
    out.texture.intensity(i) = s.texture.intensity(order[k]);
  }
  return out;
}

}  // namespace

TEST(Render, MatchesBruteForceOracle) {
  Rng rng(21);
  for (int scene = 0; scene < 20; ++scene) {
    const Scene s = random_scene(rng, 40 + scene * 5, 16);
    EXPECT_EQ(render(s.points, s.depth, s.texture, 16), brute_force(s, 16)) << "scene " << scene;
  }
}

TEST(Render, NearerVertexOccludesRegardlessOfOrder) {
  Scene s;
  s.points.resize(2, 2);
  s.points << 5.2, 5.2, 5.4, 4.9;
  s.depth.resize(2);
  s.depth << 1.0, 2.0;
  s.texture.intensity.resize(2);
  s.texture.intensity << 0.9, 0.3;
  const Image a = render(s.points, s.depth, s.texture, 16);
  EXPECT_FLOAT_EQ(a.at(4, 4), 0.3f);
  EXPECT_FLOAT_EQ(a.at(5, 5), 0.3f);
  Rng rng(1);
  const Scene t = permuted(s, rng);
  EXPECT_EQ(render(t.points, t.depth, t.texture, 16), a);
}

TEST(Render, OutputIsOrderInvariant) {
  Rng rng(33);
  for (int k = 0; k < 10; ++k) {
    const Scene s = random_scene(rng, 120, 16);
    const Scene t = permuted(s, rng);
    EXPECT_EQ(render(s.points, s.depth, s.texture, 16), render(t.points, t.depth, t.texture, 16));
  }
}

TEST(Render, SkipsVerticesOutsideFrame) {
  Scene s;
  s.points.resize(3, 2);
  s.points << -0.1, 3, 3, 16.2, 20, 20;
  s.depth = Eigen::VectorXd::Ones(3);
  s.texture.intensity = Eigen::VectorXd::Constant(3, 0.5);
  const Image img = render(s.points, s.depth, s.texture, 16);
  for (float p : img.pixels) EXPECT_EQ(p, 0.0f);
}

TEST(Render, RejectsMismatchedLengths) {
  Points2D pts(2, 2);
  pts.setZero();
  Texture t{Eigen::VectorXd::Ones(3)};
  EXPECT_THROW(render(pts, Eigen::VectorXd::Zero(2), t, 8), std::invalid_argument);
}

TEST(Texture, IntensityStaysInRange) {
  MorphableModelConfig cfg;
  cfg.num_vertices = 400;
  const auto m = MorphableModel::generate(cfg);
  const TextureModel tex = TextureModel::generate(m, 11);
  Rng rng(2);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd a(m.id_dim());
    for (auto& x : a) x = 3.0 * standard_normal(rng);
    const Texture t = tex.texture(a);
    EXPECT_GE(t.intensity.minCoeff(), 0.1);
    EXPECT_LE(t.intensity.maxCoeff(), 1.0);
  }
  EXPECT_EQ(texture_from_identity(Eigen::VectorXd::Zero(m.id_dim()), m, 11).intensity,
            tex.texture(Eigen::VectorXd::Zero(m.id_dim())).intensity);
}

TEST(RenderSample, OpposingYawsAreMirrorImages) {
  MorphableModelConfig cfg;
  cfg.num_vertices = 900;
  const auto m = MorphableModel::generate(cfg);
  const TextureModel tex = TextureModel::generate(m, 4);
  FaceParams p = m.neutral_params();
  p.scale = 13.0;
  // silhouettes of the symmetric mean shape agree within one pixel
  const auto covered = [](const Image& img, int r, int c) {
    for (int dc = -1; dc <= 1; ++dc)
      if (c + dc >= 0 && c + dc < img.size && img.at(r, c + dc) > 0.0f) return true;
    return false;
  };
  for (double yaw : {15.0, 40.0, 60.0}) {
    p.rotation.yaw = deg_to_rad(yaw);
    const Image left = render_sample(m, tex, p, 32);
    p.rotation.yaw = -deg_to_rad(yaw);
    const Image right = render_sample(m, tex, p, 32);
    int mismatched = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        if (left.at(r, c) > 0.0f) mismatched += !covered(right, r, 31 - c);
        if (right.at(r, 31 - c) > 0.0f) mismatched += !covered(left, r, c);
      }
    EXPECT_EQ(mismatched, 0) << "yaw " << yaw;
  }
}

TEST(WritePgm, WritesBinaryGraymap) {
  Image img(4);
  img.at(0, 0) = 1.0f;
  img.at(3, 3) = 0.5f;
  const auto path = std::filesystem::temp_directory_path() / "pdisent_test.pgm";
  write_pgm(img, path.string());
  std::ifstream f(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n4 4\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 16);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), 255);
  EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 128);
  std::filesystem::remove(path);
}
