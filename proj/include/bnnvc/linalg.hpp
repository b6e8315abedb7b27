#pragma once

#include <string>

#include <Eigen/Dense>

namespace bnnvc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RealMatrix = Matrix<double>;
using RealRowVector = RowVector<double>;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace bnnvc
