#include "gradiseg/knn.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace gradiseg;

namespace {

GaussianCloud points(const std::vector<Vec3>& ps, std::size_t dim = 1) {
    GaussianCloud cloud(dim);
    for (const Vec3& p : ps) {
        Gaussian g;
        g.position = p;
        g.encoding.assign(dim, 0.0);
        cloud.push_back(g);
    }
    return cloud;
}

std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n, bool coarse = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> q(-3, 3);
    std::vector<Vec3> ps(n);
    for (auto& p : ps) p = coarse ? Vec3(q(rng), q(rng), q(rng)) : Vec3(u(rng), u(rng), u(rng));
    return ps;
}

// Naive double loop over the same targets, neighbor rule as documented.
double reference_loss(const GaussianCloud& cloud, const ClassifierHead& head,
                      const std::vector<std::size_t>& targets, std::size_t k, NeighborMode mode) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i : targets) {
        std::vector<std::size_t> nb;
        const Vec3 ema = cloud.pos_grad_ema[i];
        if (mode == NeighborMode::local_adaptive && ema.norm() >= 1e-12) {
            nb = oracle::brute_local(cloud.positions, i, -ema / ema.norm(), k);
        } else {
            nb = oracle::brute_global(cloud.positions, i, k);
        }
        const auto pi = oracle::softmax_row(head, cloud.encodings.data() + i * cloud.dim());
        for (std::size_t j : nb) {
            total += oracle::kl(pi, oracle::softmax_row(head, cloud.encodings.data() + j * cloud.dim()));
            ++pairs;
        }
    }
    return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("neighbor direction") {
    GaussianCloud cloud = points({Vec3::Zero(), Vec3::Zero()});
    cloud.pos_grad_ema[0] = Vec3(0, -2, 0);
    const auto u = neighbor_direction(cloud, 0);
    REQUIRE(u);
    CHECK(u->isApprox(Vec3(0, 1, 0)));
    CHECK_FALSE(neighbor_direction(cloud, 1));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        cloud.pos_grad_ema[0] = Vec3(n(rng), n(rng), n(rng));
        const auto v = neighbor_direction(cloud, 0);
        REQUIRE(v);
        CHECK(std::abs(v->norm() - 1.0) <= 1e-9);
        CHECK(v->dot(cloud.pos_grad_ema[0]) < 0);
    }
}

TEST_CASE("local adaptive example") {
    const GaussianCloud cloud =
        points({Vec3::Zero(), Vec3(-1, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(0, 5, 0)});
    const PointSet ps(cloud);
    CHECK(local_adaptive_neighbors(ps, 0, Vec3(1, 0, 0), 2) == std::vector<std::size_t>{2, 3});
    CHECK(local_adaptive_neighbors(ps, 0, Vec3(1, 0, 0), 5) == std::vector<std::size_t>{2, 3});
    CHECK(local_adaptive_neighbors(ps, 3, Vec3(1, 0, 0), 3).empty());
}

TEST_CASE("global examples") {
    const GaussianCloud two = points({Vec3::Zero(), Vec3(1, 1, 1)});
    CHECK(global_neighbors(PointSet(two), 0, 5) == std::vector<std::size_t>{1});
    std::vector<Vec3> grid;
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y)
            for (int z = 0; z < 3; ++z) grid.emplace_back(x, y, z);
    const GaussianCloud g = points(grid);
    const PointSet ps(g);
    for (std::size_t i = 0; i < grid.size(); i += 7) {
        CHECK(global_neighbors(ps, i, 6) == oracle::brute_global(grid, i, 6));
    }
    const auto all = global_neighbors(ps, 4, grid.size() + 3);
    CHECK(all.size() == grid.size() - 1);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).count(4) == 0);
}

TEST_CASE("neighbor searches equal exhaustive search") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (const bool coarse : {false, true}) {
        const auto pts = random_points(rng, coarse ? 500 : 2000, coarse);
        const GaussianCloud cloud = points(pts);
        const PointSet ps(cloud);
        for (std::size_t t = 0; t < 60; ++t) {
            const std::size_t i = (t * 131) % pts.size();
            const std::size_t k = 1 + t % 9;
            CHECK(global_neighbors(ps, i, k) == oracle::brute_global(pts, i, k));
            const Vec3 u = coarse ? Vec3(0, 0, 1) : Vec3(n(rng), n(rng), n(rng)).normalized();
            const auto la = local_adaptive_neighbors(ps, i, u, k);
            CHECK(la == oracle::brute_local(pts, i, u, k));
            for (std::size_t j : la) CHECK((pts[j] - pts[i]).dot(u) > 0);
        }
    }
}

TEST_CASE("sample_targets draws distinct indices reproducibly") {
    const auto a = sample_targets(100, 30, 9);
    CHECK(a == sample_targets(100, 30, 9));
    CHECK(a != sample_targets(100, 30, 10));
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 30);
    CHECK(sample_targets(5, 10, 1).size() == 5);
}

TEST_CASE("loss_3d: identical encodings give zero") {
    std::mt19937_64 rng(3);
    GaussianCloud cloud = points(random_points(rng, 50), 4);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t d = 0; d < 4; ++d) cloud.encodings[i * 4 + d] = 0.25 * d - 0.3;
    const ClassifierHead head = oracle::random_head(rng, 10, 4);
    Loss3dOptions o;
    o.samples = 20;
    const Loss3d l = loss_3d(cloud, head, o);
    CHECK(std::abs(l.value) <= 1e-12);
    CHECK(l.pairs == 20 * 5);
}

TEST_CASE("loss_3d two-class scalar example") {
    GaussianCloud cloud = points({Vec3::Zero(), Vec3(1, 0, 0)});
    cloud.encodings = {std::log(9.0), 0.0};
    cloud.pos_grad_ema[0] = Vec3(-1, 0, 0);  // looks toward +x
    cloud.pos_grad_ema[1] = Vec3(-1, 0, 0);  // nothing ahead of it
    ClassifierHead head(2, 1);
    head.weight(0, 0) = 1.0;
    Loss3dOptions o;
    o.samples = 2;
    o.k = 1;
    o.mode = NeighborMode::local_adaptive;
    const Loss3d l = loss_3d(cloud, head, o);
    CHECK(l.pairs == 1);
    CHECK(l.value == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-12));
    CHECK(std::abs(l.value - 0.3681) <= 1e-4);
}

TEST_CASE("loss_3d equals a naive double loop") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const NeighborMode mode : {NeighborMode::global, NeighborMode::local_adaptive}) {
        GaussianCloud cloud = oracle::random_cloud(rng, 200, 5, Vec3::Constant(-1), Vec3::Constant(1));
        for (auto& e : cloud.pos_grad_ema) e = u(rng) < 0.9 ? Vec3(n(rng), n(rng), n(rng)) : Vec3::Zero();
        const ClassifierHead head = oracle::random_head(rng, 16, 5);
        Loss3dOptions o;
        o.samples = 80;
        o.k = 5;
        o.mode = mode;
        o.seed = 1234;
        const Loss3d l = loss_3d(cloud, head, o);
        CHECK(l.value >= 0.0);
        CHECK(std::abs(l.value - reference_loss(cloud, head, l.targets, 5, mode)) <= 1e-9);
        CHECK(l.targets == sample_targets(200, 80, 1234));
    }
}

TEST_CASE("loss_3d is non-negative on random draws") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 1000; ++t) {
        GaussianCloud cloud = oracle::random_cloud(rng, 6, 3, Vec3::Constant(-1), Vec3::Constant(1));
        const ClassifierHead head = oracle::random_head(rng, 4, 3, 2.0);
        Loss3dOptions o;
        o.samples = 3;
        o.k = 2;
        o.seed = static_cast<std::uint64_t>(t);
        CHECK(loss_3d(cloud, head, o).value >= 0.0);
    }
}

TEST_CASE("loss_3d encoding gradients match finite differences; head stays put by default") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    for (const NeighborMode mode : {NeighborMode::global, NeighborMode::local_adaptive}) {
        GaussianCloud cloud = oracle::random_cloud(rng, 10, 4, Vec3::Constant(-1), Vec3::Constant(1));
        for (auto& e : cloud.pos_grad_ema) e = Vec3(n(rng), n(rng), n(rng));
        const ClassifierHead head = oracle::random_head(rng, 6, 4);
        Loss3dOptions o;
        o.samples = 10;
        o.k = 3;
        o.mode = mode;
        const Loss3d l = loss_3d(cloud, head, o);
        for (double g : l.grad_head.weights) CHECK(g == 0.0);
        for (double g : l.grad_head.biases) CHECK(g == 0.0);
        const double h = 1e-5;
        for (std::size_t k = 0; k < cloud.encodings.size(); ++k) {
            GaussianCloud p = cloud, m = cloud;
            p.encodings[k] += h;
            m.encodings[k] -= h;
            const double fd = (loss_3d(p, head, o).value - loss_3d(m, head, o).value) / (2 * h);
            const double err = std::abs(fd - l.grad_encodings[k]);
            CHECK((err <= 1e-7 || err <= 1e-4 * std::max(std::abs(fd), std::abs(l.grad_encodings[k]))));
        }
    }
}
