#include "pdisent/morphable_shape.hpp"

#include "pdisent/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace pdisent {

std::array<double, 7> FaceParams::pose_vector() const {
  return {scale, rotation.pitch, rotation.yaw, rotation.roll,
          translation.x(), translation.y(), translation.z()};
}

MorphableModel::MorphableModel(Eigen::VectorXd mean_shape, Eigen::MatrixXd identity_basis,
                               Eigen::MatrixXd expression_basis,
                               std::vector<int> landmark_indices)
    : mean_shape_(std::move(mean_shape)),
      identity_basis_(std::move(identity_basis)),
      expression_basis_(std::move(expression_basis)),
      landmark_indices_(std::move(landmark_indices)) {
  if (mean_shape_.size() == 0 || mean_shape_.size() % 3 != 0)
    throw std::invalid_argument("mean shape length must be a positive multiple of 3");
  if (identity_basis_.rows() != mean_shape_.size() || expression_basis_.rows() != mean_shape_.size())
    throw std::invalid_argument("basis height must equal 3N");
  const int n = num_vertices();
  std::set<int> seen;
  for (int idx : landmark_indices_) {
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("landmark index " + std::to_string(idx) + " out of range");
    if (!seen.insert(idx).second)
      throw std::invalid_argument("duplicate landmark index " + std::to_string(idx));
  }
}

FaceParams MorphableModel::neutral_params() const {
  FaceParams p;
  p.alpha_id = Eigen::VectorXd::Zero(id_dim());
  p.alpha_exp = Eigen::VectorXd::Zero(exp_dim());
  return p;
}

namespace {

constexpr double kAzimuthHalfRange = deg_to_rad(100.0);
constexpr double kElevationHalfRange = deg_to_rad(55.0);
constexpr int kFieldFrequencies = 4;

double gauss2(double du, double dv, double su, double sv) {
  return std::exp(-(du * du) / (2 * su * su) - (dv * dv) / (2 * sv * sv));
}

// Depth relief of the mean face; even in azimuth.
double relief(double u, double v) {
  double z = 0.25 * gauss2(u, v + 0.05, 0.12, 0.18);                       // nose
  z += 0.06 * gauss2(0.0, v - 0.35, 1.0, 0.06) * gauss2(u, 0.0, 0.5, 1.0); // brow ridge
  z -= 0.07 * (gauss2(u - 0.35, v - 0.2, 0.1, 0.1) + gauss2(u + 0.35, v - 0.2, 0.1, 0.1));
  z += 0.04 * gauss2(u, v + 0.45, 0.25, 0.05);  // lips
  z += 0.05 * gauss2(u, v + 0.75, 0.2, 0.1);    // chin
  return z;
}

struct Grid {
  int nu = 0;
  int nv = 0;
  Eigen::MatrixX2d coords;  // (u, v) per vertex
  Eigen::MatrixX2d unit;    // (u, v) mapped to [0, 1]
  std::vector<int> mirror;
};

Grid make_grid(int requested) {
  if (requested < 6) throw std::invalid_argument("num_vertices must be at least 6");
  Grid g;
  g.nv = std::max(2, static_cast<int>(std::lround(std::sqrt(requested / 1.2))));
  g.nu = std::max(3, static_cast<int>(std::lround(static_cast<double>(requested) / g.nv)));
  if (g.nu % 2 == 0) ++g.nu;
  const int n = g.nu * g.nv;
  g.coords.resize(n, 2);
  g.unit.resize(n, 2);
  g.mirror.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < g.nv; ++j) {
    for (int i = 0; i < g.nu; ++i) {
      const int k = j * g.nu + i;
      const double tu = static_cast<double>(i) / (g.nu - 1);
      const double tv = static_cast<double>(j) / (g.nv - 1);
      g.unit(k, 0) = tu;
      g.unit(k, 1) = tv;
      g.coords(k, 0) = -kAzimuthHalfRange + 2 * kAzimuthHalfRange * tu;
      g.coords(k, 1) = -kElevationHalfRange + 2 * kElevationHalfRange * tv;
      g.mirror[static_cast<std::size_t>(k)] = j * g.nu + (g.nu - 1 - i);
    }
  }
  // Exact symmetry: mirrored azimuths are negated bitwise.
  for (int k = 0; k < n; ++k) {
    const int m = g.mirror[static_cast<std::size_t>(k)];
    if (m > k) g.coords(m, 0) = -g.coords(k, 0);
    if (m == k) g.coords(k, 0) = 0.0;
  }
  return g;
}

// Smooth random scalar field over the grid: low-order cosine products with
// decaying Gaussian weights.
Eigen::VectorXd smooth_field(const Grid& g, Rng& rng) {
  double coef[kFieldFrequencies][kFieldFrequencies];
  for (int a = 0; a < kFieldFrequencies; ++a)
    for (int b = 0; b < kFieldFrequencies; ++b)
      coef[a][b] = standard_normal(rng) / (1.0 + a + b);
  const Eigen::Index n = g.unit.rows();
  Eigen::VectorXd f(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double s = 0.0;
    for (int a = 0; a < kFieldFrequencies; ++a) {
      const double ca = std::cos(kPi * a * g.unit(k, 0));
      for (int b = 0; b < kFieldFrequencies; ++b) s += coef[a][b] * ca * std::cos(kPi * b * g.unit(k, 1));
    }
    f(k) = s;
  }
  return f;
}

Eigen::VectorXd even_part(const Grid& g, const Eigen::VectorXd& f) {
  Eigen::VectorXd out(f.size());
  for (Eigen::Index k = 0; k < f.size(); ++k)
    out(k) = 0.5 * (f(k) + f(g.mirror[static_cast<std::size_t>(k)]));
  return out;
}

Eigen::VectorXd odd_part(const Grid& g, const Eigen::VectorXd& f) {
  Eigen::VectorXd out(f.size());
  for (Eigen::Index k = 0; k < f.size(); ++k) {
    const int m = g.mirror[static_cast<std::size_t>(k)];
    out(k) = (m == k) ? 0.0 : 0.5 * (f(k) - f(m));
  }
  return out;
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  // Fix the sign convention so that R has a positive diagonal.
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

Eigen::MatrixXd make_basis(const Grid& g, int dim, bool symmetric, Rng& rng) {
  const Eigen::Index n = g.unit.rows();
  if (3 * n < dim) throw std::invalid_argument("basis dimension exceeds 3N");
  Eigen::MatrixXd raw(3 * n, dim);
  for (int c = 0; c < dim; ++c) {
    Eigen::VectorXd fx = smooth_field(g, rng);
    Eigen::VectorXd fy = smooth_field(g, rng);
    Eigen::VectorXd fz = smooth_field(g, rng);
    if (symmetric) {
      fx = odd_part(g, fx);
      fy = even_part(g, fy);
      fz = even_part(g, fz);
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      raw(3 * k + 0, c) = fx(k);
      raw(3 * k + 1, c) = fy(k);
      raw(3 * k + 2, c) = fz(k);
    }
  }
  return orthonormalize(raw);
}

// Anatomical anchors in degrees (azimuth, elevation); symmetric pairs are
// listed as +u and expanded to (+u, -u).
struct Anchor {
  double u;
  double v;
  bool pair;
};

constexpr Anchor kAnchors[] = {
    {0, 0, false},     {12, 18, true},   {32, 18, true},  {20, -28, true},  {0, -48, false},
    {55, -20, true},   {0, 30, false},   {25, 32, true},  {0, -24, false},  {75, 0, true},
    {10, -8, true},    {45, 35, true},   {0, -36, false}, {40, -45, true},  {65, 20, true},
    {80, -30, true},   {90, 10, true},   {22, 8, true},   {0, 12, false},   {30, -12, true},
    {50, 5, true},     {12, -40, true},  {60, -40, true}, {35, 42, true},   {85, 30, true},
};

std::vector<int> choose_landmarks(const Grid& g, int k, std::uint64_t seed) {
  const int n = static_cast<int>(g.coords.rows());
  if (k < 0 || k > n) throw std::invalid_argument("num_landmarks must lie in [0, N]");
  std::vector<int> out;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  auto take_nearest = [&](double u, double v) {
    int best = -1;
    double best_d = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double du = g.coords(i, 0) - u, dv = g.coords(i, 1) - v;
      const double d = du * du + dv * dv;
      if (best < 0 || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    out.push_back(best);
  };
  for (const auto& a : kAnchors) {
    if (static_cast<int>(out.size()) >= k) break;
    take_nearest(deg_to_rad(a.u), deg_to_rad(a.v));
    if (a.pair && static_cast<int>(out.size()) < k) take_nearest(deg_to_rad(-a.u), deg_to_rad(a.v));
  }
  if (static_cast<int>(out.size()) < k) {
    std::vector<int> rest;
    for (int i = 0; i < n; ++i)
      if (!used[static_cast<std::size_t>(i)]) rest.push_back(i);
    Rng rng = make_rng(seed, {0x1a4d});
    shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t i = 0; static_cast<int>(out.size()) < k; ++i) out.push_back(rest[i]);
  }
  return out;
}

}  // namespace

MorphableModel MorphableModel::generate(const MorphableModelConfig& config) {
  if (config.id_dim < 1 || config.exp_dim < 1)
    throw std::invalid_argument("basis dimensions must be positive");
  Grid grid = make_grid(config.num_vertices);
  const Eigen::Index n = grid.coords.rows();

  Eigen::VectorXd mean(3 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double u = grid.coords(k, 0), v = grid.coords(k, 1);
    mean(3 * k + 0) = 0.8 * std::sin(u) * std::cos(v);
    mean(3 * k + 1) = 0.95 * std::sin(v);
    mean(3 * k + 2) = 0.9 * std::cos(u) * std::cos(v) + relief(u, v);
  }

  Rng id_rng = make_rng(config.seed, {1});
  Rng exp_rng = make_rng(config.seed, {2});
  Eigen::MatrixXd id_basis = make_basis(grid, config.id_dim, true, id_rng);
  Eigen::MatrixXd exp_basis = make_basis(grid, config.exp_dim, false, exp_rng);

  MorphableModel model(std::move(mean), std::move(id_basis), std::move(exp_basis),
                       choose_landmarks(grid, config.num_landmarks, config.seed));
  model.mirror_ = std::move(grid.mirror);
  model.surface_ = std::move(grid.coords);
  return model;
}

Eigen::Matrix3d rotation_from_euler(double pitch, double yaw, double roll) {
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cr = std::cos(roll), sr = std::sin(roll);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  return rz * ry * rx;
}

Shape3D instantiate_shape(const MorphableModel& model, const FaceParams& params) {
  if (params.alpha_id.size() != model.id_dim())
    throw std::invalid_argument("alpha_id has length " + std::to_string(params.alpha_id.size()) +
                                ", model expects " + std::to_string(model.id_dim()));
  if (params.alpha_exp.size() != model.exp_dim())
    throw std::invalid_argument("alpha_exp has length " + std::to_string(params.alpha_exp.size()) +
                                ", model expects " + std::to_string(model.exp_dim()));
  const Eigen::VectorXd flat = model.mean_shape() + model.identity_basis() * params.alpha_id +
                               model.expression_basis() * params.alpha_exp;
  const Eigen::Map<const Shape3D> vertices(flat.data(), model.num_vertices(), 3);
  const Eigen::Matrix3d r = rotation_from_euler(params.rotation);
  Shape3D out = params.scale * (vertices * r.transpose());
  out.rowwise() += params.translation.transpose();
  return out;
}

Projection project_weak_perspective(const Shape3D& shape, int image_size) {
  if (image_size < 8) throw std::invalid_argument("image_size must be at least 8");
  const double c = image_size / 2.0;
  Projection p;
  p.points.resize(shape.rows(), 2);
  p.points.col(0) = shape.col(0).array() + c;
  p.points.col(1) = c - shape.col(1).array();
  p.depth = shape.col(2);
  return p;
}

Eigen::VectorXd landmarks_2d(const MorphableModel& model, const FaceParams& params, int image_size) {
  const Projection proj = project_weak_perspective(instantiate_shape(model, params), image_size);
  const double c = image_size / 2.0;
  const auto& idx = model.landmark_indices();
  Eigen::VectorXd out(2 * static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out(2 * static_cast<Eigen::Index>(k)) = (proj.points(idx[k], 0) - c) / c;
    out(2 * static_cast<Eigen::Index>(k) + 1) = (proj.points(idx[k], 1) - c) / c;
  }
  return out;
}

std::vector<FaceParams> pose_sweep(const FaceParams& base, double yaw_min, double yaw_max,
                                   double step) {
  if (!(step > 0)) throw std::invalid_argument("pose_sweep step must be positive");
  if (yaw_min > yaw_max) throw std::invalid_argument("pose_sweep requires yaw_min <= yaw_max");
  const auto count = static_cast<std::size_t>(std::floor((yaw_max - yaw_min) / step + 1e-9)) + 1;
  std::vector<FaceParams> out(count, base);
  for (std::size_t k = 0; k < count; ++k) out[k].rotation.yaw = yaw_min + static_cast<double>(k) * step;
  return out;
}

}  // namespace pdisent
