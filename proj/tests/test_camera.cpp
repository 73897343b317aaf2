#include "gradiseg/camera.hpp"
#include "gradiseg/error.hpp"
#include "gradiseg/math.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace gradiseg;

namespace {

Gaussian at(const Vec3& p, const Vec3& s = Vec3::Constant(0.1)) {
    Gaussian g;
    g.position = p;
    g.scale = s;
    g.encoding.assign(2, 0.0);
    return g;
}

}  // namespace

TEST_CASE("on-axis pinhole projection") {
    CameraView cam;
    cam.intrinsics = {100, 100, 32, 32, 64, 64};
    const auto pg = project_gaussian(at(Vec3(0, 0, 2)), cam);
    REQUIRE(pg);
    CHECK(pg->splat.mean2d.x() == doctest::Approx(32));
    CHECK(pg->splat.mean2d.y() == doctest::Approx(32));
    CHECK(pg->splat.depth == doctest::Approx(2));
}

TEST_CASE("orthographic unit Gaussian has covariance 1.3 I") {
    CameraView cam;
    cam.mode = Projection::orthographic;
    cam.intrinsics = {1, 1, 4, 4, 9, 9};
    const auto pg = project_gaussian(at(Vec3(0, 0, 5), Vec3::Ones()), cam);
    REQUIRE(pg);
    CHECK(pg->splat.cov2d(0, 0) == doctest::Approx(1.3));
    CHECK(pg->splat.cov2d(1, 1) == doctest::Approx(1.3));
    CHECK(pg->splat.cov2d(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("culling: behind the near plane and outside the image") {
    const CameraView cam = oracle::pinhole_camera(32, 32, 30);
    CHECK_FALSE(project_gaussian(at(Vec3(0, 0, 0.005)), cam));
    CHECK_FALSE(project_gaussian(at(Vec3(0, 0, -1)), cam));
    CHECK_FALSE(project_gaussian(at(Vec3(50, 0, 2)), cam));
    CHECK(project_gaussian(at(Vec3(0, 0, 2)), cam));
}

TEST_CASE("covariance matches a finite-difference Jacobian of the projection") {
    std::mt19937_64 rng(3);
    CameraView cam = oracle::pinhole_camera(64, 48, 60);
    cam.world_to_camera = look_at(Vec3(1.0, -3.0, 1.5), Vec3::Zero(), Vec3(0, 0, 1));
    int checked = 0;
    for (int t = 0; t < 100; ++t) {
        const Gaussian g = oracle::random_gaussian(rng, 1, Vec3::Constant(-0.6), Vec3::Constant(0.6));
        const auto pg = project_gaussian(g, cam);
        if (!pg) continue;
        ++checked;
        // Numerical Jacobian of world point -> pixel.
        auto proj = [&](const Vec3& p) {
            const Vec3 c = cam.world_to_camera.topLeftCorner<3, 3>() * p +
                           cam.world_to_camera.topRightCorner<3, 1>();
            return Vec2(cam.intrinsics.fx * c.x() / c.z() + cam.intrinsics.cx,
                        cam.intrinsics.fy * c.y() / c.z() + cam.intrinsics.cy);
        };
        Eigen::Matrix<double, 2, 3> J;
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Vec3 e = Vec3::Zero();
            e[k] = h;
            J.col(k) = (proj(g.position + e) - proj(g.position - e)) / (2 * h);
        }
        const Mat3 R = oracle::rotation_of(g.rotation);
        const Mat3 S = g.scale.asDiagonal();
        const Mat2 expect = J * R * S * S * R.transpose() * J.transpose() + 0.3 * Mat2::Identity();
        const double rel = (pg->splat.cov2d - expect).norm() / expect.norm();
        CHECK(rel < 1e-3);
        CHECK((pg->splat.mean2d - proj(g.position)).norm() < 1e-9);
        CHECK(std::abs(pg->splat.cov2d(0, 1) - pg->splat.cov2d(1, 0)) < 1e-9);
        CHECK(pg->splat.cov2d.llt().info() == Eigen::Success);
    }
    CHECK(checked > 50);
}

TEST_CASE("enlarging the image never culls a visible splat") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 300; ++t) {
        const Gaussian g = oracle::random_gaussian(rng, 1, Vec3(-3, -3, -0.5), Vec3(3, 3, 4));
        CameraView small;
        small.intrinsics = {20, 20, 10, 10, 20, 20};
        CameraView big = small;
        big.intrinsics.width = 40;
        big.intrinsics.height = 33;
        if (project_gaussian(g, small)) CHECK(project_gaussian(g, big));
    }
}

TEST_CASE("depth_sort examples") {
    std::vector<Splat2D> s(3);
    s[0].depth = 3;
    s[1].depth = 1;
    s[2].depth = 2;
    for (int i = 0; i < 3; ++i) s[i].source_index = i;
    CHECK(depth_sort(s) == std::vector<std::size_t>{1, 2, 0});

    std::vector<Splat2D> tie(2);
    tie[0].depth = tie[1].depth = 2;
    tie[0].source_index = 5;
    tie[1].source_index = 3;
    CHECK(depth_sort(tie) == std::vector<std::size_t>{1, 0});

    s[1].depth = std::nan("");
    CHECK_THROWS_AS(depth_sort(s), ValidationError);
}

TEST_CASE("depth_sort equals a reference comparison sort") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    std::uniform_int_distribution<int> coarse(1, 20);
    std::vector<Splat2D> s(1000);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i].depth = i % 3 == 0 ? coarse(rng) : u(rng);  // plenty of ties
        s[i].source_index = static_cast<std::int64_t>((i * 7919) % 1000);
    }
    std::vector<std::size_t> ref(s.size());
    std::iota(ref.begin(), ref.end(), 0);
    std::sort(ref.begin(), ref.end(), [&](std::size_t a, std::size_t b) {
        if (s[a].depth != s[b].depth) return s[a].depth < s[b].depth;
        return s[a].source_index < s[b].source_index;
    });
    CHECK(depth_sort(s) == ref);
}

TEST_CASE("camera validation") {
    CameraView cam = oracle::pinhole_camera(4, 4, 10);
    CHECK_NOTHROW(cam.validate());
    cam.intrinsics.fx = 0;
    CHECK_THROWS_AS(cam.validate(), ValidationError);
    cam.intrinsics.fx = 10;
    cam.world_to_camera(0, 0) = 1.01;
    CHECK_THROWS_AS(cam.validate(), ValidationError);
    cam.world_to_camera = Mat4::Identity();
    cam.mask = Mask(4, 4);
    cam.mask.data[3] = 9;
    CHECK_THROWS_AS(cam.validate(8), ValidationError);
    CHECK_NOTHROW(cam.validate(10));
}

TEST_CASE("look_at points the camera at the target") {
    const Mat4 pose = look_at(Vec3(3, 1, 2), Vec3(0.5, 0, 0), Vec3(0, 0, 1));
    const Vec3 c = pose.topLeftCorner<3, 3>() * Vec3(0.5, 0, 0) + pose.topRightCorner<3, 1>();
    CHECK(c.x() == doctest::Approx(0).epsilon(1e-12));
    CHECK(c.y() == doctest::Approx(0).epsilon(1e-12));
    CHECK(c.z() > 0);
    const Mat3 r = pose.topLeftCorner<3, 3>();
    CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0));
}
