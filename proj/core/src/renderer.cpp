#include "pdisent/renderer.hpp"

#include "pdisent/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace pdisent {

TextureModel::TextureModel(Eigen::MatrixXd gain, Eigen::VectorXd bias)
    : gain_(std::move(gain)), bias_(std::move(bias)) {
  if (gain_.rows() != bias_.size())
    throw std::invalid_argument("texture gain rows must match bias length");
}

namespace {

// Low-frequency field over the model surface; mirror-averaged when the model
// carries a mirror map.
Eigen::VectorXd surface_field(const MorphableModel& model, Rng& rng) {
  const int n = model.num_vertices();
  const auto& uv = model.surface_coords();
  double coef[4][4];
  double phase[4][4];
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      coef[a][b] = standard_normal(rng) / (1.0 + a + b);
      phase[a][b] = 2 * kPi * uniform_unit(rng);
    }
  Eigen::VectorXd f(n);
  for (int k = 0; k < n; ++k) {
    double u = 0, v = 0;
    if (uv.rows() == n) {
      u = uv(k, 0);
      v = uv(k, 1);
    } else {
      const Eigen::Index i = 3 * static_cast<Eigen::Index>(k);
      u = model.mean_shape()(i);
      v = model.mean_shape()(i + 1);
    }
    double s = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) s += coef[a][b] * std::cos(1.2 * a * u + phase[a][b] * (a > 0)) * std::cos(1.6 * b * v);
    f(k) = s;
  }
  if (!model.mirror_map().empty()) {
    Eigen::VectorXd sym(n);
    for (int k = 0; k < n; ++k) sym(k) = 0.5 * (f(k) + f(model.mirror_of(k)));
    return sym;
  }
  return f;
}

}  // namespace

TextureModel TextureModel::generate(const MorphableModel& model, std::uint64_t seed) {
  const int n = model.num_vertices();
  const int d = model.id_dim();
  Rng rng = make_rng(seed, {0x7e47});
  Eigen::MatrixXd gain(n, d);
  for (int c = 0; c < d; ++c) {
    Eigen::VectorXd f = surface_field(model, rng);
    const double rms = std::sqrt(f.squaredNorm() / n);
    // Unit-variance identity coefficients give logits of roughly unit scale.
    gain.col(c) = f / (rms * std::sqrt(static_cast<double>(d)));
  }
  Eigen::VectorXd bias = surface_field(model, rng);
  bias *= 0.3 / std::sqrt(bias.squaredNorm() / n);
  return TextureModel(std::move(gain), std::move(bias));
}

Texture TextureModel::texture(const Eigen::VectorXd& alpha_id) const {
  if (alpha_id.size() != gain_.cols())
    throw std::invalid_argument("alpha_id length does not match texture model");
  Texture t;
  t.intensity = 0.55 + 0.45 * (gain_ * alpha_id + bias_).array().tanh();
  return t;
}

Texture texture_from_identity(const Eigen::VectorXd& alpha_id, const TextureModel& textures) {
  return textures.texture(alpha_id);
}

Texture texture_from_identity(const Eigen::VectorXd& alpha_id, const MorphableModel& model,
                              std::uint64_t seed) {
  return TextureModel::generate(model, seed).texture(alpha_id);
}

Image render(const Points2D& points, const Eigen::VectorXd& depth, const Texture& texture,
             int image_size) {
  if (points.rows() != depth.size() || depth.size() != texture.intensity.size())
    throw std::invalid_argument("render: points, depth and texture lengths differ");
  Image img(image_size);
  std::vector<double> zbuf(img.pixels.size(), -std::numeric_limits<double>::infinity());
  const double limit = image_size;
  for (Eigen::Index v = 0; v < points.rows(); ++v) {
    const double x = points(v, 0), y = points(v, 1);
    if (!(x >= 0 && x <= limit && y >= 0 && y <= limit)) continue;
    const int c = static_cast<int>(std::lround(x));
    const int r = static_cast<int>(std::lround(y));
    const double z = depth(v);
    const auto value = static_cast<float>(texture.intensity(v));
    for (int rr = r - 1; rr <= r; ++rr) {
      if (rr < 0 || rr >= image_size) continue;
      for (int cc = c - 1; cc <= c; ++cc) {
        if (cc < 0 || cc >= image_size) continue;
        const std::size_t p = static_cast<std::size_t>(rr) * static_cast<std::size_t>(image_size) + static_cast<std::size_t>(cc);
        if (z > zbuf[p] || (z == zbuf[p] && value > img.pixels[p])) {
          zbuf[p] = z;
          img.pixels[p] = value;
        }
      }
    }
  }
  return img;
}

Image render_sample(const MorphableModel& model, const TextureModel& textures,
                    const FaceParams& params, int image_size) {
  const Projection proj = project_weak_perspective(instantiate_shape(model, params), image_size);
  return render(proj.points, proj.depth, textures.texture(params.alpha_id), image_size);
}

Image render_sample(const MorphableModel& model, const FaceParams& params, int image_size,
                    std::uint64_t texture_seed) {
  return render_sample(model, TextureModel::generate(model, texture_seed), params, image_size);
}

void write_pgm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P5\n" << image.size << " " << image.size << "\n255\n";
  for (float v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(byte));
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace pdisent
