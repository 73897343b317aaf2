#pragma once

#include <Eigen/Core>

#include <cmath>

namespace gradiseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Rotation matrix of the normalized quaternion (w, x, y, z).
Mat3 quat_to_rotation(const Vec4& q);

/// Reverse-mode derivative of quat_to_rotation: given dL/dR returns dL/dq for
/// the raw (unnormalized) quaternion. At |q| = 1 this is the tangent-space
/// projection of the gradient.
Vec4 quat_to_rotation_backward(const Vec4& q, const Mat3& grad_rotation);

/// Sigma = R diag(s)^2 R^T.
Mat3 covariance_3d(const Vec3& scale, const Vec4& rotation);

}  // namespace gradiseg
