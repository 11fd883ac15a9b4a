#pragma once

#include <Eigen/Dense>

namespace eofnet {

using Index = Eigen::Index;

/// Row-major dense matrix; rows are stations (or samples), columns are time steps (or features).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace eofnet
