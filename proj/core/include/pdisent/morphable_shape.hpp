#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace pdisent {

/// N x 3 vertex positions.
using Shape3D = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
/// N x 2 pixel coordinates.
using Points2D = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

inline constexpr double kPi = 3.14159265358979323846;
constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

struct EulerAngles {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
};

/// Similarity transform plus shape coefficients of one face instance.
/// Scale and translation are in model units; the projection maps model units
/// one-to-one onto pixels.
struct FaceParams {
  double scale = 1.0;
  EulerAngles rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::VectorXd alpha_id;
  Eigen::VectorXd alpha_exp;

  /// (s, pitch, yaw, roll, Tx, Ty, Tz)
  std::array<double, 7> pose_vector() const;
};

struct MorphableModelConfig {
  std::uint64_t seed = 7;
  int num_vertices = 1500;  ///< approximate; the vertex grid is rounded to an odd column count
  int id_dim = 30;
  int exp_dim = 29;
  int num_landmarks = 16;

  bool operator==(const MorphableModelConfig&) const = default;
};

/// Linear 3D shape model: mean shape plus orthonormal identity and expression
/// bases, laid out as x0 y0 z0 x1 y1 z1 ...
class MorphableModel {
 public:
  MorphableModel() = default;
  /// Validates basis heights, landmark range and distinctness.
  MorphableModel(Eigen::VectorXd mean_shape, Eigen::MatrixXd identity_basis,
                 Eigen::MatrixXd expression_basis, std::vector<int> landmark_indices);

  /// Procedural face mask: a bilaterally symmetric ellipsoidal patch with depth
  /// relief, smooth seeded bases (identity basis mirror-symmetric), orthonormalized.
  static MorphableModel generate(const MorphableModelConfig& config);

  int num_vertices() const { return static_cast<int>(mean_shape_.size() / 3); }
  int id_dim() const { return static_cast<int>(identity_basis_.cols()); }
  int exp_dim() const { return static_cast<int>(expression_basis_.cols()); }
  int num_landmarks() const { return static_cast<int>(landmark_indices_.size()); }

  const Eigen::VectorXd& mean_shape() const { return mean_shape_; }
  const Eigen::MatrixXd& identity_basis() const { return identity_basis_; }
  const Eigen::MatrixXd& expression_basis() const { return expression_basis_; }
  const std::vector<int>& landmark_indices() const { return landmark_indices_; }

  /// Index of the vertex mirrored across the x = 0 plane, or -1 when the model
  /// was not generated procedurally.
  int mirror_of(int vertex) const {
    return mirror_.empty() ? -1 : mirror_[static_cast<std::size_t>(vertex)];
  }
  const std::vector<int>& mirror_map() const { return mirror_; }
  /// Grid coordinates (azimuth, elevation) in radians of each procedural vertex.
  const Eigen::MatrixX2d& surface_coords() const { return surface_; }

  /// Zero-coefficient params with unit scale and no rotation.
  FaceParams neutral_params() const;

 private:
  Eigen::VectorXd mean_shape_;
  Eigen::MatrixXd identity_basis_;
  Eigen::MatrixXd expression_basis_;
  std::vector<int> landmark_indices_;
  std::vector<int> mirror_;
  Eigen::MatrixX2d surface_;
};

/// R = Rz(roll) * Ry(yaw) * Rx(pitch).
Eigen::Matrix3d rotation_from_euler(double pitch, double yaw, double roll);
inline Eigen::Matrix3d rotation_from_euler(const EulerAngles& a) {
  return rotation_from_euler(a.pitch, a.yaw, a.roll);
}

/// S = s R (mean + Phi_id a_id + Phi_exp a_exp) + T, per vertex.
/// Throws std::invalid_argument when coefficient lengths disagree with the model.
Shape3D instantiate_shape(const MorphableModel& model, const FaceParams& params);

struct Projection {
  Points2D points;        ///< (x_pix, y_pix); y grows downward
  Eigen::VectorXd depth;  ///< larger is nearer the camera
};

/// Weak perspective: x_pix = W/2 + x, y_pix = W/2 - y, depth = z.
Projection project_weak_perspective(const Shape3D& shape, int image_size);

/// Landmark pixel coordinates flattened (x1, y1, ..., xK, yK) and mapped to
/// [-1, 1] by (p - W/2) / (W/2).
Eigen::VectorXd landmarks_2d(const MorphableModel& model, const FaceParams& params, int image_size);

/// Copies of `base` with yaw = yaw_min, yaw_min + step, ..., up to yaw_max
/// inclusive (within 1e-9). Throws std::invalid_argument on step <= 0 or
/// yaw_min > yaw_max.
std::vector<FaceParams> pose_sweep(const FaceParams& base, double yaw_min, double yaw_max,
                                   double step);

}  // namespace pdisent
