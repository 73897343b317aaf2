#include "gradiseg/backward.hpp"
#include "gradiseg/error.hpp"
#include "gradiseg/knn.hpp"
#include "gradiseg/render.hpp"
#include "gradiseg/scene_io.hpp"
#include "gradiseg/synth.hpp"
#include "gradiseg/trainer.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace gradiseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "gradiseg_test_trainer" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const Dataset& small_dataset() {
    static const Dataset data = [] {
        SceneSpec spec = SceneSpec::standard();
        spec.views = 6;
        spec.held_out_views = 1;
        spec.image_size = 24;
        for (auto& o : spec.objects) o.samples = 80;
        return generate(spec).dataset;
    }();
    return data;
}

TrainSchedule short_schedule(int iters) {
    TrainSchedule s;
    s.total_iters = iters;
    s.densify_interval = 20;
    s.igd_interval = 10;
    s.init_count = 300;
    s.samples = 100;
    s.log_interval = 10;
    s.checkpoint_interval = 40;
    return s;
}

}  // namespace

TEST_CASE("schedule defaults resolve proportionally") {
    TrainSchedule s;
    const TrainSchedule r = s.resolved();
    CHECK(r.densify_end == 1200);
    CHECK(r.igd_end == 1500);
    CHECK(r.knn_switch == 1200);
    CHECK_NOTHROW(r.validate());
}

TEST_CASE("config parsing") {
    const TrainSchedule s = TrainSchedule::parse(
        "# run\n"
        "total_iters = 500\n"
        "beta = 0.5   # weaker\n"
        "knn_policy = global_only\n"
        "igd_enabled = false\n"
        "background = 1, 0.5, 0\n"
        "[lr]\n"
        "encoding = 0.01\n"
        "[igd]\n"
        "tau_percentile = 95\n"
        "split_direction = position_gradient\n");
    CHECK(s.total_iters == 500);
    CHECK(s.beta == 0.5);
    CHECK(s.knn_policy == KnnPolicy::global_only);
    CHECK_FALSE(s.igd_enabled);
    CHECK(s.background == Vec3(1, 0.5, 0));
    CHECK(s.lr.encoding == 0.01);
    CHECK(s.igd.tau_percentile == 95);
    CHECK(s.igd.split_direction == SplitDirection::position_gradient);

    CHECK_THROWS_WITH_AS(TrainSchedule::parse("gamma = 1\n"), doctest::Contains("unknown key"), ValidationError);
    CHECK_THROWS_AS(TrainSchedule::parse("total_iters = many\n"), ValidationError);
    CHECK_THROWS_AS(TrainSchedule::parse("alpha = -1\n"), ValidationError);
    CHECK_THROWS_AS(TrainSchedule::parse("total_iters = 100\ndensify_end = 80\nigd_end = 50\n"), ValidationError);
    CHECK_THROWS_AS(TrainSchedule::parse("just words\n"), ValidationError);

    // Round trip through the flat map.
    std::string text;
    for (const auto& [k, v] : s.to_map()) text += k + " = " + v + "\n";
    CHECK(TrainSchedule::parse(text).to_json() == s.to_json());
}

TEST_CASE("phase flags keep the phases apart") {
    TrainSchedule s = short_schedule(200).resolved();
    bool local_seen = false;
    for (int iter = 0; iter < s.total_iters; ++iter) {
        const PhaseFlags f = phase_flags(s, iter);
        if (f.densify) CHECK(iter < s.densify_end);
        if (f.igd) {
            CHECK(iter >= s.densify_end);
            CHECK(iter < s.igd_end);
        }
        if (f.local_knn) {
            CHECK(iter >= s.knn_switch);
            local_seen = true;
        }
        CHECK(f.reset_monitors == (iter + 1 == s.densify_end));
    }
    CHECK(local_seen);
    s.knn_policy = KnnPolicy::global_only;
    s.igd_enabled = false;
    for (int iter = 0; iter < s.total_iters; ++iter) {
        CHECK_FALSE(phase_flags(s, iter).local_knn);
        CHECK_FALSE(phase_flags(s, iter).igd);
    }
}

TEST_CASE("initial cloud") {
    TrainSchedule s;
    s.init_count = 500;
    const GaussianCloud c = initialize_cloud(Vec3::Constant(-1), Vec3::Constant(1), s);
    REQUIRE(c.size() == 500);
    CHECK_NOTHROW(c.validate());
    double enc2 = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c.positions[i].cwiseAbs().maxCoeff() <= 1.0);
        CHECK(c.scales[i].x() == c.scales[i].z());
        CHECK(c.opacities[i] == doctest::Approx(0.1));
        CHECK(c.colors[i] == Vec3::Constant(0.5));
    }
    for (double e : c.encodings) enc2 += e * e;
    CHECK(std::sqrt(enc2 / static_cast<double>(c.encodings.size())) == doctest::Approx(0.01).epsilon(0.1));
    // Mean nearest-neighbor distance of 500 uniform points in a 2-cube.
    std::vector<double> nn;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto j = oracle::brute_global(c.positions, i, 1)[0];
        nn.push_back((c.positions[i] - c.positions[j]).norm());
    }
    CHECK(c.scales[0].x() == doctest::Approx(std::accumulate(nn.begin(), nn.end(), 0.0) / nn.size()).epsilon(1e-9));
}

TEST_CASE("total loss examples") {
    std::mt19937_64 rng(3);
    GaussianCloud cloud = oracle::random_cloud(rng, 20, 16, Vec3(-1, -1, 2), Vec3(1, 1, 3));
    CameraView cam = oracle::pinhole_camera(12, 12, 10);
    const RenderOutput out = render(cloud, cam);
    cam.image = out.color;
    cam.mask = Mask(12, 12);
    const TotalLoss perfect = total_loss(cloud, ClassifierHead(256, 16), cam, out, std::nullopt, 1.0, 0.0);
    CHECK(perfect.loss.l1 == 0.0);
    CHECK(perfect.loss.total == doctest::Approx(std::log(256.0)).epsilon(1e-12));

    // Identical encodings, confident head, perfect image: total near zero.
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (std::size_t d = 0; d < 16; ++d) cloud.encodings[i * 16 + d] = d == 0 ? 1.0 : 0.0;
    }
    ClassifierHead head(256, 16);
    head.biases[0] = 60.0;
    Loss3dInputs in;
    in.options.samples = 20;
    const RenderOutput o2 = render(cloud, cam);
    const TotalLoss near0 = total_loss(cloud, head, cam, o2, in, 1.0, 2.0);
    CHECK(near0.loss.total >= 0.0);
    CHECK(near0.loss.total < 1e-15);
}

TEST_CASE("total gradient is the sum of independently computed parts") {
    std::mt19937_64 rng(4);
    const std::size_t dim = 4;
    GaussianCloud cloud = oracle::random_cloud(rng, 25, dim, Vec3(-1, -1, 2), Vec3(1, 1, 3));
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& e : cloud.pos_grad_ema) e = Vec3(n(rng), n(rng), n(rng));
    CameraView cam = oracle::pinhole_camera(10, 10, 9);
    cam.image = Image(10, 10);
    cam.mask = Mask(10, 10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : cam.image.data) v = u(rng);
    for (std::size_t p = 0; p < cam.mask.data.size(); ++p) cam.mask.data[p] = static_cast<std::uint8_t>(p % 7);
    const ClassifierHead head = oracle::random_head(rng, 7, dim);
    const Vec3 bg(0.1, 0.2, 0.3);
    const RenderOutput out = render(cloud, cam, bg);
    Loss3dInputs in;
    in.options.samples = 10;
    in.options.k = 3;
    in.options.mode = NeighborMode::local_adaptive;
    in.options.seed = 5;
    const double alpha = 0.7, beta = 1.3;
    const TotalLoss tl = total_loss(cloud, head, cam, out, in, alpha, beta, bg);

    const std::size_t pixels = out.pixels();
    PixelGrads pg(pixels, dim);
    double l1 = 0.0;
    for (std::size_t k = 0; k < pixels * 3; ++k) {
        const double d = out.color.data[k] - cam.image.data[k];
        l1 += std::abs(d);
        pg.values[(k / 3) * pg.stride() + k % 3] = (d > 0) - (d < 0);
    }
    l1 /= static_cast<double>(pixels * 3);
    for (std::size_t p = 0; p < pixels; ++p)
        for (int c = 0; c < 3; ++c) pg.values[p * pg.stride() + c] /= static_cast<double>(pixels * 3);
    const Loss2d l2 = loss_2d(out.identity, cam.mask.data, head);
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t d = 0; d < dim; ++d) pg.values[p * pg.stride() + 3 + d] = alpha * l2.grad_features[p * dim + d];
    ParamGrads expect = backward(cloud, cam, out, pg, bg);
    const Loss3d l3 = loss_3d(cloud, head, in.options);
    for (std::size_t k = 0; k < expect.encoding.size(); ++k) expect.encoding[k] += beta * l3.grad_encodings[k];

    CHECK(tl.loss.l1 == doctest::Approx(l1).epsilon(1e-12));
    CHECK(tl.loss.l2d == doctest::Approx(l2.value).epsilon(1e-12));
    CHECK(tl.loss.l3d == doctest::Approx(l3.value).epsilon(1e-12));
    CHECK(tl.loss.total == doctest::Approx(l1 + alpha * l2.value + beta * l3.value).epsilon(1e-12));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK((tl.grads.position[i] - expect.position[i]).norm() <= 1e-9);
        CHECK((tl.grads.log_scale[i] - expect.log_scale[i]).norm() <= 1e-9);
        CHECK((tl.grads.rotation[i] - expect.rotation[i]).norm() <= 1e-9);
        CHECK(std::abs(tl.grads.opacity_logit[i] - expect.opacity_logit[i]) <= 1e-9);
        CHECK((tl.grads.color[i] - expect.color[i]).norm() <= 1e-9);
    }
    for (std::size_t k = 0; k < expect.encoding.size(); ++k) CHECK(std::abs(tl.grads.encoding[k] - expect.encoding[k]) <= 1e-9);
    for (std::size_t k = 0; k < head.weights.size(); ++k)
        CHECK(std::abs(tl.grads.head.weights[k] - alpha * l2.grad_head.weights[k]) <= 1e-9);
}

TEST_CASE("standard densification") {
    std::mt19937_64 rng(5);
    GaussianCloud cloud = oracle::random_cloud(rng, 10, 2, Vec3::Constant(-1), Vec3::Constant(1), 0.01, 0.02);
    for (auto& o : cloud.opacities) o = 0.5;
    cloud.opacities[4] = 0.001;
    DensifyStats stats;
    stats.resize(10);

    SUBCASE("cold accumulators prune only") {
        const DensifyResult r = standard_densify(cloud, stats, 1e-3, 0.05, 0.005, 1000, 1);
        CHECK(r.cloud.size() == 9);
        CHECK(r.pruned == 1);
        CHECK(r.cloned + r.split == 0);
    }
    SUBCASE("one hot small Gaussian is cloned") {
        cloud.opacities[4] = 0.5;
        stats.grad_norm_sum[6] = 1.0;
        stats.visible[6] = 2;
        const DensifyResult r = standard_densify(cloud, stats, 1e-3, 0.05, 0.005, 1000, 1);
        CHECK(r.cloned == 1);
        CHECK(r.cloud.size() == 11);
        CHECK(r.cloud.positions.back() == cloud.positions[6]);
    }
    SUBCASE("one hot large Gaussian is split in two") {
        cloud.opacities[4] = 0.5;
        cloud.scales[6] = Vec3(0.3, 0.1, 0.1);
        stats.grad_norm_sum[6] = 1.0;
        stats.visible[6] = 1;
        const DensifyResult r = standard_densify(cloud, stats, 1e-3, 0.05, 0.005, 1000, 1);
        CHECK(r.split == 1);
        CHECK(r.cloud.size() == 11);
        CHECK(r.cloud.scales.back().isApprox(Vec3(0.3, 0.1, 0.1) / 1.6));
    }
    SUBCASE("the budget caps growth") {
        for (std::size_t i = 0; i < 10; ++i) {
            stats.grad_norm_sum[i] = 1.0;
            stats.visible[i] = 1;
        }
        const DensifyResult r = standard_densify(cloud, stats, 1e-3, 0.05, 0.005, 12, 1);
        CHECK(r.cloud.size() == 12);
    }
}

TEST_CASE("zero iterations saves the initial scene") {
    const fs::path dir = temp_dir("t0");
    TrainSchedule s = short_schedule(0);
    s.densify_end = 0;
    s.igd_end = 0;
    s.knn_switch = 0;
    const TrainResult r = train(small_dataset(), s, dir);
    const GaussianCloud init = initialize_cloud(small_dataset().bounds_min, small_dataset().bounds_max, s);
    const auto [saved, head] = load_scene(dir / "scene.gseg");
    REQUIRE(saved.size() == init.size());
    for (std::size_t i = 0; i < init.size(); ++i) {
        CHECK((saved.positions[i] - init.positions[i]).norm() <= 1e-6);
        CHECK(std::abs(saved.opacities[i] - init.opacities[i]) <= 1e-7);
    }
    CHECK(head.weights == std::vector<double>(head.weights.size(), 0.0));
    CHECK(fs::exists(dir / "run.json"));
    CHECK(slurp(dir / "metrics.csv") == std::string(kMetricsHeader) + "\n");
}

TEST_CASE("short runs are deterministic and keep the optimizer in sync") {
    const TrainSchedule s = short_schedule(80);
    const fs::path a = temp_dir("a"), b = temp_dir("b");
    const TrainResult ra = train(small_dataset(), s, a);
    const TrainResult rb = train(small_dataset(), s, b);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "ckpt_40.gseg") == slurp(b / "ckpt_40.gseg"));
    CHECK(slurp(a / "ckpt_80.gseg") == slurp(b / "ckpt_80.gseg"));
    CHECK(slurp(a / "scene.gseg") == slurp(b / "scene.gseg"));
    CHECK(ra.metrics.size() == 8);
    for (const auto& row : ra.metrics) CHECK(std::isfinite(row.psnr));

    // A different seed changes the run.
    TrainSchedule other = s;
    other.seed = 7;
    const fs::path c = temp_dir("c");
    (void)train(small_dataset(), other, c);
    CHECK(slurp(a / "metrics.csv") != slurp(c / "metrics.csv"));
}

TEST_CASE("photometric-only fitting lowers L1 and grows the cloud while densifying") {
    TrainSchedule s = short_schedule(300);
    s.alpha = 0.0;
    s.beta = 0.0;
    s.densify_end = 200;
    s.igd_end = 200;
    s.knn_switch = 200;
    s.igd_enabled = false;
    s.densify_interval = 50;
    s.log_interval = 50;
    const TrainResult r = train(small_dataset(), s, {});
    REQUIRE(r.metrics.size() == 6);
    CHECK(r.metrics.back().l1 < r.metrics.front().l1);
    for (std::size_t k = 2; k < r.metrics.size(); ++k) CHECK(r.metrics[k].l1 <= r.metrics[k - 2].l1 + 1e-3);
    CHECK(r.metrics[0].count > static_cast<std::size_t>(s.init_count));
    CHECK(r.metrics[3].count > static_cast<std::size_t>(s.init_count));
    // No densification once the phase is over.
    CHECK(r.metrics[4].count == r.metrics[5].count);
    CHECK(r.metrics[3].count == r.metrics[4].count);
}
