#pragma once

// Central finite-difference check of every analytic gradient the trainer
// uses. The forward side is the naive compositor from oracles.hpp; the
// analytic side is gradiseg::total_loss. Entries whose discrete structure
// (fragment sets, clamping, culling, L1 signs, neighbor sets) differs
// between the +h and -h evaluations sit on a non-differentiable seam and
// are skipped and counted.

#include "gradiseg/backward.hpp"
#include "gradiseg/knn.hpp"
#include "gradiseg/render.hpp"
#include "gradiseg/trainer.hpp"
#include "oracles.hpp"

#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fdcheck {

using namespace gradiseg;

struct Config {
    GaussianCloud cloud;
    ClassifierHead head;
    CameraView cam;
    Loss3dOptions l3d;
};

/// Up to 10 Gaussians in front of an 8x8 pinhole camera, random target image
/// and mask, small random head.
inline Config random_config(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count(1, 10);
    std::uniform_int_distribution<int> dims(2, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t dim = static_cast<std::size_t>(dims(rng));
    const std::size_t classes = 8;
    Config c;
    c.cam = oracle::pinhole_camera(8, 8, 9.0);
    c.cloud = oracle::random_cloud(rng, static_cast<std::size_t>(count(rng)), dim, Vec3(-0.8, -0.8, 2.0),
                                   Vec3(0.8, 0.8, 4.0), 0.08, 0.5);
    std::normal_distribution<double> nrm(0.0, 1.0);
    for (std::size_t i = 0; i < c.cloud.size(); ++i) {
        if (u(rng) < 0.1) c.cloud.opacities[i] = 0.997;  // exercises the clamp
        if (u(rng) < 0.8) c.cloud.pos_grad_ema[i] = Vec3(nrm(rng), nrm(rng), nrm(rng));
    }
    c.head = oracle::random_head(rng, classes, dim, 0.7);
    c.cam.image = Image(8, 8);
    c.cam.mask = Mask(8, 8);
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    for (auto& v : c.cam.image.data) v = u(rng);
    for (auto& v : c.cam.mask.data) v = static_cast<std::uint8_t>(label(rng));
    c.l3d.samples = c.cloud.size();
    c.l3d.k = std::min<std::size_t>(3, c.cloud.size() > 0 ? c.cloud.size() - 1 : 0);
    c.l3d.mode = u(rng) < 0.5 ? NeighborMode::global : NeighborMode::local_adaptive;
    c.l3d.seed = seed * 7 + 1;
    c.l3d.head_gradient = true;
    return c;
}

struct Evaluation {
    double loss = 0.0;
    std::string signature;
};

inline std::vector<std::vector<std::size_t>> oracle_neighbors(const GaussianCloud& cloud,
                                                              const Loss3dOptions& o,
                                                              const std::vector<std::size_t>& targets) {
    std::vector<std::vector<std::size_t>> out;
    for (const std::size_t i : targets) {
        const Vec3 ema = cloud.pos_grad_ema[i];
        if (o.mode == NeighborMode::local_adaptive && ema.norm() >= 1e-12) {
            out.push_back(oracle::brute_local(cloud.positions, i, -ema / ema.norm(), o.k));
        } else {
            out.push_back(oracle::brute_global(cloud.positions, i, o.k));
        }
    }
    return out;
}

/// L1 + alpha CE + beta KL with the oracle forward pass.
inline Evaluation oracle_loss(const Config& c, double alpha, double beta,
                              const std::vector<std::size_t>& targets) {
    Evaluation ev;
    const oracle::NaiveRender r = oracle::naive_render(c.cloud, c.cam);
    std::ostringstream sig;
    double l1 = 0.0;
    for (std::size_t k = 0; k < r.color.size(); ++k) {
        const double d = r.color[k] - c.cam.image.data[k];
        l1 += std::abs(d);
        sig << (d > 0 ? '+' : '-');
    }
    ev.loss = l1 / static_cast<double>(r.color.size());
    for (std::size_t i = 0; i < r.visible.size(); ++i) sig << int(r.visible[i]);
    for (const auto& frags : r.fragments) {
        sig << '|';
        for (const auto& f : frags) sig << f.index << (f.clamped ? 'c' : '.');
    }
    if (alpha != 0.0) {
        ev.loss += alpha * oracle::cross_entropy(r.identity, c.cam.mask.data, c.head);
    }
    if (beta != 0.0) {
        const auto nbrs = oracle_neighbors(c.cloud, c.l3d, targets);
        double total = 0.0;
        std::size_t pairs = 0;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const auto p = oracle::softmax_row(c.head, c.cloud.encodings.data() + targets[t] * c.cloud.dim());
            sig << '#';
            for (const std::size_t j : nbrs[t]) {
                const auto q = oracle::softmax_row(c.head, c.cloud.encodings.data() + j * c.cloud.dim());
                total += oracle::kl(p, q);
                ++pairs;
                sig << j << ',';
            }
        }
        if (pairs > 0) ev.loss += beta * total / static_cast<double>(pairs);
    }
    ev.signature = sig.str();
    return ev;
}

struct Report {
    std::size_t checked = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    double worst_rel = 0.0;
    std::vector<std::string> failures;
};

struct Param {
    std::string name;
    double analytic;
    std::function<void(Config&, double)> nudge;  // moves the parameter by +delta in its own coordinates
};

inline std::vector<Param> parameters(const Config& c, const ParamGrads& g) {
    std::vector<Param> ps;
    const std::size_t dim = c.cloud.dim();
    for (std::size_t i = 0; i < c.cloud.size(); ++i) {
        const std::string id = "[" + std::to_string(i) + "]";
        for (int k = 0; k < 3; ++k) {
            ps.push_back({"position" + id, g.position[i][k],
                          [i, k](Config& x, double h) { x.cloud.positions[i][k] += h; }});
            ps.push_back({"log_scale" + id, g.log_scale[i][k],
                          [i, k](Config& x, double h) { x.cloud.scales[i][k] *= std::exp(h); }});
            ps.push_back({"color" + id, g.color[i][k],
                          [i, k](Config& x, double h) { x.cloud.colors[i][k] += h; }});
        }
        for (int k = 0; k < 4; ++k) {
            ps.push_back({"rotation" + id, g.rotation[i][k],
                          [i, k](Config& x, double h) { x.cloud.rotations[i][k] += h; }});
        }
        ps.push_back({"opacity_logit" + id, g.opacity_logit[i], [i](Config& x, double h) {
                          x.cloud.opacities[i] = sigmoid(logit(x.cloud.opacities[i]) + h);
                      }});
        for (std::size_t d = 0; d < dim; ++d) {
            ps.push_back({"encoding" + id, g.encoding[i * dim + d],
                          [i, d, dim](Config& x, double h) { x.cloud.encodings[i * dim + d] += h; }});
        }
    }
    for (std::size_t k = 0; k < c.head.weights.size(); ++k) {
        ps.push_back({"head_weight", g.head.weights[k], [k](Config& x, double h) { x.head.weights[k] += h; }});
    }
    for (std::size_t k = 0; k < c.head.biases.size(); ++k) {
        ps.push_back({"head_bias", g.head.biases[k], [k](Config& x, double h) { x.head.biases[k] += h; }});
    }
    return ps;
}

/// Compares the analytic gradient of L1 + alpha L_2d + beta L_3d with
/// central differences (h = 1e-5). Pass: |a - f| <= 1e-7 or <= 1e-4 max(|a|,|f|).
inline Report check(const Config& c, double alpha, double beta, double h = 1e-5) {
    Report rep;
    const RenderOutput out = render(c.cloud, c.cam);
    std::optional<Loss3dInputs> l3d;
    std::vector<std::size_t> targets;
    if (beta != 0.0 && c.l3d.k > 0) {
        l3d = Loss3dInputs{c.l3d};
        targets = sample_targets(c.cloud.size(), c.l3d.samples, c.l3d.seed);
    }
    const TotalLoss tl = total_loss(c.cloud, c.head, c.cam, out, l3d, alpha, l3d ? beta : 0.0);
    const double b = l3d ? beta : 0.0;
    const Evaluation base = oracle_loss(c, alpha, b, targets);
    if (std::abs(base.loss - tl.loss.total) > 1e-9 * std::max(1.0, std::abs(base.loss))) {
        ++rep.failed;
        rep.failures.push_back("forward loss mismatch: oracle " + std::to_string(base.loss) +
                               " vs " + std::to_string(tl.loss.total));
    }
    for (const Param& p : parameters(c, tl.grads)) {
        Config plus = c, minus = c;
        p.nudge(plus, h);
        p.nudge(minus, -h);
        const Evaluation ep = oracle_loss(plus, alpha, b, targets);
        const Evaluation em = oracle_loss(minus, alpha, b, targets);
        if (ep.signature != base.signature || em.signature != base.signature) {
            ++rep.skipped;
            continue;
        }
        const double fd = (ep.loss - em.loss) / (2.0 * h);
        const double err = std::abs(fd - p.analytic);
        const double scale = std::max(std::abs(fd), std::abs(p.analytic));
        ++rep.checked;
        if (err > 1e-7) rep.worst_rel = std::max(rep.worst_rel, err / scale);
        if (err > 1e-7 && err > 1e-4 * scale) {
            ++rep.failed;
            std::ostringstream os;
            os << p.name << ": analytic " << p.analytic << " fd " << fd;
            rep.failures.push_back(os.str());
        }
    }
    return rep;
}

}  // namespace fdcheck
