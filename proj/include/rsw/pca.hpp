#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsw/trajectory.hpp"

namespace rsw {

// Principal component analysis over z-scored features. Axes come from a
// cyclic Jacobi eigendecomposition of the sample covariance and carry a fixed
// sign convention (largest-magnitude loading positive), so fits are
// deterministic and serialized models are stable.
struct PcaModel {
  std::vector<std::string> feature_names;
  std::vector<double> mean;
  std::vector<double> std;  // zero-variance features carry std = 1
  std::vector<std::vector<double>> components;      // rows = principal axes
  std::vector<double> explained_variance_ratio;     // nonincreasing, sums to 1

  size_t dim() const { return mean.size(); }

  // First three principal coordinates; axes beyond rank are zero.
  std::array<double, 3> project3(std::span<const double> x) const;
  // All principal coordinates.
  std::vector<double> project(std::span<const double> x) const;
  // Inverse of project: back to z-scored feature space.
  std::vector<double> reconstruct_z(std::span<const double> proj) const;

  nlohmann::json to_json() const;
  static PcaModel from_json(const nlohmann::json& j);
};

PcaModel pca_fit(const std::vector<std::vector<double>>& rows,
                 std::vector<std::string> feature_names = {});

// Fixed-order per-step feature vector fed to bias flagging:
// highway: [ego_speed, mean_neighbor_gap, action_id, reward, collision_flag,
//           lane_index, adjusted_reward]
// reacher: [target_distance, joint_speed, torque_magnitude, reward, 0, -1,
//           adjusted_reward]
std::vector<double> pca_step_features(const ShapedTransition& tr,
                                      const std::string& env_id);
std::vector<std::string> pca_feature_names(const std::string& env_id);

PcaModel pca_fit_dataset(const ShapedDataset& d);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations
// (tolerance 1e-12, at most 100 sweeps). Returns (eigenvalues, eigenvectors)
// sorted by eigenvalue descending; eigenvectors are rows.
std::pair<std::vector<double>, std::vector<std::vector<double>>>
jacobi_eigensymmetric(std::vector<std::vector<double>> a);

}  // namespace rsw
