#include "rsw/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/reacher_env.hpp"

namespace rsw {

std::pair<std::vector<double>, std::vector<std::vector<double>>>
jacobi_eigensymmetric(std::vector<std::vector<double>> a) {
  const size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  constexpr double kTol = 1e-12;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (std::sqrt(off) <= kTol) break;

    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) <= kTol) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<double> eigvals(n);
  for (size_t i = 0; i < n; ++i) eigvals[i] = a[i][i];
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return eigvals[x] > eigvals[y]; });

  std::vector<double> sorted_vals(n);
  std::vector<std::vector<double>> rows(n, std::vector<double>(n));
  for (size_t r = 0; r < n; ++r) {
    sorted_vals[r] = eigvals[order[r]];
    for (size_t k = 0; k < n; ++k) rows[r][k] = v[k][order[r]];
  }
  return {std::move(sorted_vals), std::move(rows)};
}

namespace {

// Largest-magnitude loading made positive; eigenvector sign is otherwise
// arbitrary and would leak nondeterminism into prompts and saved models.
void fix_sign(std::vector<double>& axis) {
  size_t arg = 0;
  for (size_t i = 1; i < axis.size(); ++i)
    if (std::abs(axis[i]) > std::abs(axis[arg])) arg = i;
  if (axis[arg] < 0.0)
    for (auto& x : axis) x = -x;
}

}  // namespace

PcaModel pca_fit(const std::vector<std::vector<double>>& rows,
                 std::vector<std::string> feature_names) {
  const size_t n = rows.size();
  if (n < 2) throw ContractViolation("pca_fit: needs at least 2 rows");
  const size_t dim = rows.front().size();
  if (dim < 1) throw ContractViolation("pca_fit: needs at least 1 feature");
  for (const auto& r : rows)
    if (r.size() != dim) throw DataError("pca_fit: ragged feature matrix");

  PcaModel model;
  model.feature_names = feature_names.empty()
                            ? std::vector<std::string>(dim, "")
                            : std::move(feature_names);
  if (model.feature_names.size() != dim)
    throw ContractViolation("pca_fit: feature_names length mismatch");

  model.mean.assign(dim, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < dim; ++j) model.mean[j] += r[j];
  for (auto& m : model.mean) m /= static_cast<double>(n);

  model.std.assign(dim, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < dim; ++j) {
      const double c = r[j] - model.mean[j];
      model.std[j] += c * c;
    }
  bool any_variance = false;
  for (auto& s : model.std) {
    s = std::sqrt(s / static_cast<double>(n - 1));
    if (s > 1e-12) {
      any_variance = true;
    } else {
      s = 1.0;
    }
  }
  if (!any_variance)
    throw DataError("pca_fit: all features are constant (degenerate input)");

  std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
  for (const auto& r : rows) {
    std::vector<double> z(dim);
    for (size_t j = 0; j < dim; ++j) z[j] = (r[j] - model.mean[j]) / model.std[j];
    for (size_t j = 0; j < dim; ++j)
      for (size_t k = j; k < dim; ++k) cov[j][k] += z[j] * z[k];
  }
  for (size_t j = 0; j < dim; ++j)
    for (size_t k = j; k < dim; ++k) {
      cov[j][k] /= static_cast<double>(n - 1);
      cov[k][j] = cov[j][k];
    }

  auto [eigvals, axes] = jacobi_eigensymmetric(std::move(cov));
  double total = 0.0;
  for (auto& ev : eigvals) {
    if (ev < 0.0 && ev > -1e-9) ev = 0.0;  // numerical dust
    total += ev;
  }
  if (!(total > 0.0)) throw DataError("pca_fit: covariance has no variance");

  model.components = std::move(axes);
  for (auto& axis : model.components) fix_sign(axis);
  model.explained_variance_ratio.resize(dim);
  for (size_t i = 0; i < dim; ++i)
    model.explained_variance_ratio[i] = eigvals[i] / total;
  return model;
}

std::vector<double> PcaModel::project(std::span<const double> x) const {
  if (x.size() != dim())
    throw ContractViolation("pca project: feature vector length mismatch");
  std::vector<double> z(dim());
  for (size_t j = 0; j < dim(); ++j) z[j] = (x[j] - mean[j]) / std[j];
  std::vector<double> out(components.size(), 0.0);
  for (size_t r = 0; r < components.size(); ++r) {
    double acc = 0.0;
    for (size_t j = 0; j < dim(); ++j) acc += components[r][j] * z[j];
    out[r] = acc;
  }
  return out;
}

std::array<double, 3> PcaModel::project3(std::span<const double> x) const {
  const auto full = project(x);
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (size_t i = 0; i < 3 && i < full.size(); ++i) out[i] = full[i];
  return out;
}

std::vector<double> PcaModel::reconstruct_z(std::span<const double> proj) const {
  if (proj.size() != components.size())
    throw ContractViolation("pca reconstruct: projection length mismatch");
  std::vector<double> z(dim(), 0.0);
  for (size_t r = 0; r < components.size(); ++r)
    for (size_t j = 0; j < dim(); ++j) z[j] += components[r][j] * proj[r];
  return z;
}

nlohmann::json PcaModel::to_json() const {
  return nlohmann::json{{"feature_names", feature_names},
                        {"mean", mean},
                        {"std", std},
                        {"components", components},
                        {"explained_variance_ratio", explained_variance_ratio}};
}

PcaModel PcaModel::from_json(const nlohmann::json& j) {
  PcaModel m;
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.mean = j.at("mean").get<std::vector<double>>();
  m.std = j.at("std").get<std::vector<double>>();
  m.components = j.at("components").get<std::vector<std::vector<double>>>();
  m.explained_variance_ratio =
      j.at("explained_variance_ratio").get<std::vector<double>>();
  return m;
}

std::vector<std::string> pca_feature_names(const std::string& env_id) {
  if (env_id == "highway")
    return {"ego_speed", "mean_neighbor_gap", "action_id",  "reward",
            "collision_flag", "lane_index", "adjusted_reward"};
  if (env_id == "reacher")
    return {"target_distance", "joint_speed", "torque_magnitude", "reward",
            "collision_flag", "lane_index", "adjusted_reward"};
  throw ConfigError("pca step features undefined for environment '" + env_id + "'");
}

std::vector<double> pca_step_features(const ShapedTransition& tr,
                                      const std::string& env_id) {
  if (env_id == "highway") {
    if (tr.state.size() != kHighwayObsDim)
      throw DataError("pca step features: unexpected highway observation");
    double gap_sum = 0.0;
    int present = 0;
    for (int k = 0; k < kNeighborSlots; ++k) {
      const int base = kObsSlotBase + k * kObsSlotStride;
      if (tr.state[base] == 0.0) continue;
      gap_sum += std::abs(tr.state[base + 1]);
      ++present;
    }
    const double mean_gap = present > 0 ? gap_sum / present : 0.0;
    return {tr.state[kObsEgoSpeed],
            mean_gap,
            tr.action.empty() ? 0.0 : tr.action[0],
            tr.reward,
            static_cast<double>(tr.collision_flag),
            static_cast<double>(tr.lane_index),
            tr.augmented_reward};
  }
  if (env_id == "reacher") {
    if (tr.state.size() != kReacherObsDim)
      throw DataError("pca step features: unexpected reacher observation");
    double ctrl = 0.0;
    for (double a : tr.action) ctrl += a * a;
    return {tr.state[10],
            std::hypot(tr.state[6], tr.state[7]),
            std::sqrt(ctrl),
            tr.reward,
            0.0,
            -1.0,
            tr.augmented_reward};
  }
  throw ConfigError("pca step features undefined for environment '" + env_id + "'");
}

PcaModel pca_fit_dataset(const ShapedDataset& d) {
  std::vector<std::vector<double>> rows;
  rows.reserve(d.size());
  for (size_t i = 0; i < d.size(); ++i)
    rows.push_back(pca_step_features(d[i], d.env_id()));
  return pca_fit(std::move(rows), pca_feature_names(d.env_id()));
}

}  // namespace rsw
