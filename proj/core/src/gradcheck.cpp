#include "pdisent/gradcheck.hpp"

#include "pdisent/losses.hpp"
#include "pdisent/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdisent {

using Eigen::MatrixXd;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

GradCheckReport gradient_check(const ScalarLoss& loss, const ModelParams& params, const ModelParams& analytic,
                               const GradCheckOptions& options) {
  GradCheckReport report;
  ModelParams probe = params;
  Rng rng = make_rng(options.seed, {0x4743});
  double total = 0.0;
  for (Group g : kAllGroups) {
    if (params.frozen(g)) continue;
    auto& tensors = probe.group(g).tensors;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      auto& w = tensors[t].data;
      const auto& grad = analytic.group(g).tensors[t].data;
      std::vector<std::size_t> idx(w.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      if (idx.size() > options.max_per_tensor) {
        shuffle(idx.begin(), idx.end(), rng);
        idx.resize(options.max_per_tensor);
        std::sort(idx.begin(), idx.end());
      }
      TensorCheck tc{tensors[t].name, idx.size(), 0.0, 0.0};
      for (std::size_t k : idx) {
        const double w0 = w[k];
        w[k] = w0 + options.epsilon;
        const double up = loss(probe);
        w[k] = w0 - options.epsilon;
        const double down = loss(probe);
        w[k] = w0;
        const double err = relative_error(grad[k], (up - down) / (2.0 * options.epsilon));
        tc.max_rel = std::max(tc.max_rel, err);
        tc.mean_rel += err;
      }
      total += tc.mean_rel;
      if (tc.checked > 0) tc.mean_rel /= static_cast<double>(tc.checked);
      report.checked += tc.checked;
      if (tc.max_rel >= report.max_rel) {
        report.max_rel = tc.max_rel;
        report.worst_tensor = tc.tensor;
      }
      report.tensors.push_back(std::move(tc));
    }
  }
  if (report.checked > 0) report.mean_rel = total / static_cast<double>(report.checked);
  return report;
}

ArchConfig reduced_arch() {
  ArchConfig a;
  a.image_size = 8;
  a.stage_channels = {3, 4};
  a.convs_per_stage = 2;
  a.rich_dim = 10;
  a.id_dim = 6;
  a.nonid_dim = 5;
  a.num_classes = 4;
  a.pose_dim = 7;
  a.landmark_dim = 6;
  a.recon_hidden = 7;
  return a;
}

namespace {

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * standard_normal(rng);
  return m;
}

// Random init with nonzero biases so no pre-activation sits exactly on a ReLU kink.
ModelParams random_params(const ArchConfig& arch, Rng& rng) {
  ModelParams p = init_params(arch, rng());
  for (Group g : kAllGroups)
    for (auto& t : p.group(g).tensors)
      if (t.shape.size() == 1)
        for (double& v : t.data) v = 0.1 * standard_normal(rng);
  return p;
}

}  // namespace

std::vector<LossCheck> check_training_losses(std::uint64_t seed, const GradCheckOptions& options) {
  const ArchConfig arch = reduced_arch();
  Rng rng = make_rng(seed, {0x4c43});
  const int batch = 3;
  std::vector<int> labels(batch);
  for (int& y : labels) y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(arch.num_classes)));
  std::vector<LossCheck> out;

  {
    ModelParams params = random_params(arch, rng);
    params.set_frozen(Group::Reconstructor, true);
    MatrixXd images(arch.image_size * arch.image_size, batch);
    for (Eigen::Index c = 0; c < images.cols(); ++c)
      for (Eigen::Index r = 0; r < images.rows(); ++r) images(r, c) = uniform_unit(rng);
    const MatrixXd pose = gaussian(arch.pose_dim, batch, rng);
    const MatrixXd lmk = gaussian(arch.landmark_dim, batch, rng, 0.5);
    const MultitaskWeights w{1.0, 0.7, 1.3};
    const Objective obj = multitask_objective(params, images, labels, pose, lmk, w);
    const ScalarLoss f = [&](const ModelParams& p) {
      return loss_multitask(forward(p, images), labels, pose, lmk, w).terms.total;
    };
    out.push_back({"multitask", gradient_check(f, params, obj.grads, options)});
  }

  const auto pair_params = [&] {
    ModelParams p = random_params(arch, rng);
    for (Group g : {Group::Backbone, Group::IdClassifier, Group::PoseHead, Group::LandmarkHead}) p.set_frozen(g, true);
    return p;
  };
  const MatrixXd e_r1 = gaussian(arch.rich_dim, batch, rng);
  const MatrixXd e_r2 = gaussian(arch.rich_dim, batch, rng);

  {
    const ModelParams params = pair_params();
    const ReconstructionWeights w{1.0, 0.8, 1.2};
    const Objective obj = reconstruction_objective(params, e_r1, e_r2, labels, w);
    const ScalarLoss f = [&](const ModelParams& p) {
      return loss_reconstruction(forward_pair_from_rich(p, e_r1, e_r2), labels, w).terms.total;
    };
    out.push_back({"reconstruction", gradient_check(f, params, obj.grads, options)});
  }

  {
    ModelParams params = pair_params();
    params.set_frozen(Group::Reconstructor, true);
    const double ce = 1.0, beta = 0.9;
    const Objective obj = l2_pair_objective(params, e_r1, e_r2, labels, ce, beta);
    const ScalarLoss f = [&](const ModelParams& p) {
      return loss_l2_pair(forward_branches(p, e_r1), forward_branches(p, e_r2), labels, ce, beta).terms.total;
    };
    out.push_back({"l2_pair", gradient_check(f, params, obj.grads, options)});
  }
  return out;
}

}  // namespace pdisent
