#include "gradiseg/math.hpp"

namespace gradiseg {

Mat3 quat_to_rotation(const Vec4& q) {
    const Vec4 n = q / q.norm();
    const double w = n[0], x = n[1], y = n[2], z = n[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Vec4 quat_to_rotation_backward(const Vec4& q, const Mat3& g) {
    const double len = q.norm();
    const Vec4 n = q / len;
    const double w = n[0], x = n[1], y = n[2], z = n[3];

    Vec4 dn;
    dn[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    dn[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                   z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    dn[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                   w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    dn[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                   y * g(1, 2) + x * g(2, 0) + y * g(2, 1));

    // d(q/|q|)/dq = (I - n n^T) / |q|
    return (dn - n * n.dot(dn)) / len;
}

Mat3 covariance_3d(const Vec3& scale, const Vec4& rotation) {
    const Mat3 m = quat_to_rotation(rotation) * scale.asDiagonal();
    return m * m.transpose();
}

}  // namespace gradiseg
