#pragma once

#include <Eigen/Dense>

namespace moss {

/// Rows are 3D points (meters).
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

}  // namespace moss
