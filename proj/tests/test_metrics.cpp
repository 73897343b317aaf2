#include "gradiseg/error.hpp"
#include "gradiseg/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace gradiseg;

namespace {

Mask rect(int w, int h, int x0, int y0, int x1, int y1, std::uint8_t id, Mask m = {}) {
    if (m.data.empty()) m = Mask(w, h);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(x, y) = id;
    return m;
}

Mask random_blobs(std::mt19937_64& rng, int w, int h) {
    std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1), id(1, 4);
    Mask m(w, h);
    for (int k = 0; k < 5; ++k) {
        const int x0 = ux(rng), y0 = uy(rng);
        m = rect(w, h, x0, y0, std::min(w, x0 + 2 + ux(rng) / 2), std::min(h, y0 + 2 + uy(rng) / 2),
                 static_cast<std::uint8_t>(id(rng)), m);
    }
    return m;
}

}  // namespace

TEST_CASE("mIoU examples") {
    const Mask gt = rect(8, 8, 0, 0, 4, 8, 1);
    CHECK(miou(gt, gt) == 1.0);
    CHECK(miou(rect(8, 8, 0, 0, 6, 8, 1), gt) == doctest::Approx(2.0 / 3.0));
    CHECK(miou(rect(8, 8, 4, 0, 8, 8, 1), gt) == 0.0);
    CHECK(miou(Mask(8, 8), gt) == 0.0);
    CHECK(miou(Mask(8, 8), Mask(8, 8)) == 1.0);
    CHECK_THROWS_AS(miou(Mask(8, 7), gt), ValidationError);
}

TEST_CASE("mIoU grows with correct overlap under a fixed union") {
    const Mask gt = rect(10, 10, 0, 0, 10, 5, 1);
    double last = -1.0;
    for (int cut = 0; cut <= 10; ++cut) {
        // pred covers the union's extent but labels only `cut` columns correctly.
        Mask pred = rect(10, 10, 0, 0, cut, 5, 1);
        const double v = miou(pred, gt);
        CHECK(v >= last);
        last = v;
    }
}

TEST_CASE("mBIoU examples and the enumeration oracle") {
    const Mask sq = rect(20, 20, 5, 5, 13, 13, 1);
    CHECK(mbiou(sq, sq, 2) == 1.0);
    CHECK(mbiou(Mask(20, 20), sq, 2) == 0.0);
    const Mask shifted = rect(20, 20, 6, 5, 14, 13, 1);
    CHECK(mbiou(shifted, sq, 2) == doctest::Approx(oracle::mbiou_enumerate(shifted, sq, 2)).epsilon(1e-12));
    CHECK(mbiou(shifted, sq, 2) < 1.0);

    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        const Mask a = random_blobs(rng, 24, 18), b = random_blobs(rng, 24, 18);
        for (int band : {1, 2, 3}) {
            CHECK(mbiou(a, b, band) == doctest::Approx(oracle::mbiou_enumerate(a, b, band)).epsilon(1e-12));
            CHECK(mbiou(a, a, band) == 1.0);
            CHECK(mbiou(a, b, band) <= 1.0);
        }
        // Consistent relabeling changes nothing.
        Mask ra = a, rb = b;
        for (auto* m : {&ra, &rb})
            for (auto& v : m->data) v = v == 0 ? 0 : static_cast<std::uint8_t>(10 + 4 - v);
        CHECK(mbiou(ra, rb, 2) == doctest::Approx(mbiou(a, b, 2)).epsilon(1e-12));
        CHECK(miou(ra, rb) == doctest::Approx(miou(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("PSNR") {
    Image a(4, 4), b(4, 4);
    CHECK(psnr(a, a) == kPsnrCap);
    for (auto& v : b.data) v = 0.5;
    CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(4.0)));
    CHECK(psnr(a, b) == doctest::Approx(6.0206).epsilon(1e-4));
    CHECK(psnr(b, a) == psnr(a, b));
}

TEST_CASE("default band and pooled evaluation") {
    CHECK(default_band(64, 64) == 2);
    CHECK(default_band(8, 8) == 1);
    CHECK(default_band(512, 512) == 14);

    const Mask gt = rect(8, 8, 0, 0, 4, 8, 1);
    const Mask pred = rect(8, 8, 0, 0, 6, 8, 1);
    Image img(8, 8);
    const EvalReport r = evaluate({gt, pred}, {gt, gt}, {img, img}, {img, img}, 1);
    // Pooled: intersection 64, union 32 + 48.
    CHECK(r.miou == doctest::Approx(64.0 / 80.0));
    CHECK(r.class_iou.at(1) == doctest::Approx(0.8));
    CHECK(r.pixel_counts.at(1) == 64);
    CHECK(r.mean_psnr == kPsnrCap);
    const std::string json = r.to_json();
    CHECK(json.find("\"miou\"") != std::string::npos);
    CHECK(json.find("\"mbiou\"") != std::string::npos);
}
