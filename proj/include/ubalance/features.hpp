#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "telemetry.hpp"

namespace ubalance {

inline constexpr int kFeatureDim = 16;

// Blocks (r, x, y, z), each ordered (mean, std, min, max). The order is part
// of the model file contract.
using FeatureVector16 = Eigen::Matrix<double, kFeatureDim, 1>;

inline FeatureVector16 extract_features(const WindowValues& values) {
    if (values.cols() != kChannels || values.rows() < 1)
        throw ContractViolation("extract_features expects an N x 4 window");
    if (!values.allFinite()) throw DomainError("extract_features: window contains non-finite values");
    FeatureVector16 f;
    const double n = static_cast<double>(values.rows());
    for (int c = 0; c < kChannels; ++c) {
        const auto col = values.col(c).array();
        const double lo = col.minCoeff();
        const double hi = col.maxCoeff();
        // Offset from the minimum so a constant channel yields exactly (c, 0, c, c).
        const double mean = std::clamp(lo + (col - lo).sum() / n, lo, hi);
        const double var = (col - mean).square().sum() / n;
        f[4 * c + 0] = mean;
        f[4 * c + 1] = std::sqrt(var);
        f[4 * c + 2] = lo;
        f[4 * c + 3] = hi;
    }
    return f;
}

// Column-per-window feature matrix (16 x n).
inline Eigen::MatrixXd feature_matrix(const std::vector<Window>& windows) {
    Eigen::MatrixXd out(kFeatureDim, static_cast<Eigen::Index>(windows.size()));
    for (std::size_t i = 0; i < windows.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = extract_features(windows[i].values);
    return out;
}

}  // namespace ubalance
