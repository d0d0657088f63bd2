#pragma once

#include "pdisent/morphable_shape.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pdisent {

/// Square grayscale image, row-major, values in [0, 1].
struct Image {
  int size = 0;
  std::vector<float> pixels;

  Image() = default;
  explicit Image(int s) : size(s), pixels(static_cast<std::size_t>(s) * static_cast<std::size_t>(s), 0.0f) {}

  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(size) + static_cast<std::size_t>(col)]; }
  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(size) + static_cast<std::size_t>(col)]; }

  bool operator==(const Image&) const = default;
};

/// Per-vertex intensity in [0.1, 1.0].
struct Texture {
  Eigen::VectorXd intensity;
};

/// Seeded linear map from identity coefficients to per-vertex texture logits:
/// intensity = 0.55 + 0.45 tanh(G a_id + b). G and b are smooth and mirror
/// symmetric when built from a procedural model.
class TextureModel {
 public:
  TextureModel() = default;
  TextureModel(Eigen::MatrixXd gain, Eigen::VectorXd bias);

  static TextureModel generate(const MorphableModel& model, std::uint64_t seed);

  const Eigen::MatrixXd& gain() const { return gain_; }
  const Eigen::VectorXd& bias() const { return bias_; }

  Texture texture(const Eigen::VectorXd& alpha_id) const;

 private:
  Eigen::MatrixXd gain_;
  Eigen::VectorXd bias_;
};

Texture texture_from_identity(const Eigen::VectorXd& alpha_id, const TextureModel& textures);
/// Convenience overload that regenerates the texture model from its seed.
Texture texture_from_identity(const Eigen::VectorXd& alpha_id, const MorphableModel& model,
                              std::uint64_t seed);

/// Point-splat z-buffer rasterizer. Each vertex inside the frame paints the
/// 2x2 block of pixels {r-1, r} x {c-1, c} around its rounded location (r, c)
/// when it is nearer (larger depth) than the current z-buffer entry; equal
/// depths resolve to the brighter intensity so output is order independent.
Image render(const Points2D& points, const Eigen::VectorXd& depth, const Texture& texture,
             int image_size);

Image render_sample(const MorphableModel& model, const TextureModel& textures,
                    const FaceParams& params, int image_size);
Image render_sample(const MorphableModel& model, const FaceParams& params, int image_size,
                    std::uint64_t texture_seed);

/// Binary PGM (P5, maxval 255).
void write_pgm(const Image& image, const std::string& path);

}  // namespace pdisent
