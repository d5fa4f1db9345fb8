#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>

namespace vpfc {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline std::span<double> row_span(Mat& m, Eigen::Index r) {
  return {m.row(r).data(), static_cast<std::size_t>(m.cols())};
}

inline std::span<const double> row_span(const Mat& m, Eigen::Index r) {
  return {m.row(r).data(), static_cast<std::size_t>(m.cols())};
}

bool all_finite(const Mat& m);

}  // namespace vpfc
