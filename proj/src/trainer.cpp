#include "gradiseg/trainer.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/metrics.hpp"
#include "gradiseg/parallel.hpp"
#include "gradiseg/scene_io.hpp"
#include "gradiseg/simd.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

namespace gradiseg {

namespace {

// ---- config fields -------------------------------------------------------

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    s = s.substr(b, e - b + 1);
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
        throw ValidationError("config key '" + key + "': '" + v + "' is not an integer");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
}

struct Field {
    const char* name;
    std::function<std::string(const TrainSchedule&)> get;
    std::function<void(TrainSchedule&, const std::string&)> set;
};

Field f_int(const char* name, int TrainSchedule::*m) {
    return {name, [m](const TrainSchedule& s) { return std::to_string(s.*m); },
            [m, name](TrainSchedule& s, const std::string& v) {
                s.*m = static_cast<int>(parse_int(name, v));
            }};
}

Field f_size(const char* name, std::size_t TrainSchedule::*m) {
    return {name, [m](const TrainSchedule& s) { return std::to_string(s.*m); },
            [m, name](TrainSchedule& s, const std::string& v) {
                const long long x = parse_int(name, v);
                if (x < 0) throw ValidationError(std::string("config key '") + name + "' must be >= 0");
                s.*m = static_cast<std::size_t>(x);
            }};
}

Field f_double(const char* name, std::function<double&(TrainSchedule&)> ref) {
    return {name,
            [ref](const TrainSchedule& s) {
                return fmt_double(ref(const_cast<TrainSchedule&>(s)));
            },
            [ref, name](TrainSchedule& s, const std::string& v) { ref(s) = parse_double(name, v); }};
}

Field f_bool(const char* name, bool TrainSchedule::*m) {
    return {name, [m](const TrainSchedule& s) { return std::string(s.*m ? "true" : "false"); },
            [m, name](TrainSchedule& s, const std::string& v) { s.*m = parse_bool(name, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> list = [] {
        std::vector<Field> f;
        f.push_back(f_int("total_iters", &TrainSchedule::total_iters));
        f.push_back(f_int("densify_end", &TrainSchedule::densify_end));
        f.push_back(f_int("igd_end", &TrainSchedule::igd_end));
        f.push_back(f_int("knn_switch", &TrainSchedule::knn_switch));
        f.push_back(f_int("densify_interval", &TrainSchedule::densify_interval));
        f.push_back(f_int("igd_interval", &TrainSchedule::igd_interval));
        f.push_back(f_double("alpha", [](TrainSchedule& s) -> double& { return s.alpha; }));
        f.push_back(f_double("beta", [](TrainSchedule& s) -> double& { return s.beta; }));
        f.push_back(f_size("k", &TrainSchedule::k));
        f.push_back(f_size("samples", &TrainSchedule::samples));
        f.push_back({"seed", [](const TrainSchedule& s) { return std::to_string(s.seed); },
                     [](TrainSchedule& s, const std::string& v) {
                         std::uint64_t out = 0;
                         const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
                         if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
                             throw ValidationError("config key 'seed': '" + v + "' is not an unsigned integer");
                         }
                         s.seed = out;
                     }});
        f.push_back(f_double("lr.position", [](TrainSchedule& s) -> double& { return s.lr.position; }));
        f.push_back(f_double("lr.log_scale", [](TrainSchedule& s) -> double& { return s.lr.log_scale; }));
        f.push_back(f_double("lr.rotation", [](TrainSchedule& s) -> double& { return s.lr.rotation; }));
        f.push_back(f_double("lr.opacity", [](TrainSchedule& s) -> double& { return s.lr.opacity_logit; }));
        f.push_back(f_double("lr.color", [](TrainSchedule& s) -> double& { return s.lr.color; }));
        f.push_back(f_double("lr.encoding", [](TrainSchedule& s) -> double& { return s.lr.encoding; }));
        f.push_back(f_double("lr.head", [](TrainSchedule& s) -> double& { return s.lr.head; }));
        f.push_back(f_bool("igd_enabled", &TrainSchedule::igd_enabled));
        f.push_back({"knn_policy",
                     [](const TrainSchedule& s) {
                         return std::string(s.knn_policy == KnnPolicy::switched ? "switched" : "global_only");
                     },
                     [](TrainSchedule& s, const std::string& v) {
                         if (v == "switched") s.knn_policy = KnnPolicy::switched;
                         else if (v == "global_only") s.knn_policy = KnnPolicy::global_only;
                         else throw ValidationError("config key 'knn_policy': expected switched or global_only");
                     }});
        f.push_back({"monitor_mode",
                     [](const TrainSchedule& s) {
                         return std::string(s.monitor_mode == MonitorMode::norm_sum ? "norm_sum" : "vector_sum");
                     },
                     [](TrainSchedule& s, const std::string& v) {
                         if (v == "norm_sum") s.monitor_mode = MonitorMode::norm_sum;
                         else if (v == "vector_sum") s.monitor_mode = MonitorMode::vector_sum;
                         else throw ValidationError("config key 'monitor_mode': expected norm_sum or vector_sum");
                     }});
        f.push_back(f_bool("l3d_head_gradient", &TrainSchedule::l3d_head_gradient));
        f.push_back(f_double("identity_geometry_grad",
                             [](TrainSchedule& s) -> double& { return s.identity_geometry_grad; }));
        f.push_back(f_double("igd.tau_percentile", [](TrainSchedule& s) -> double& { return s.igd.tau_percentile; }));
        f.push_back(f_double("igd.opacity_eps", [](TrainSchedule& s) -> double& { return s.igd.opacity_eps; }));
        f.push_back(f_double("igd.too_large_frac", [](TrainSchedule& s) -> double& { return s.igd.too_large_frac; }));
        f.push_back(f_double("igd.split_scale_div", [](TrainSchedule& s) -> double& { return s.igd.split_scale_div; }));
        f.push_back(f_double("igd.split_offset_frac", [](TrainSchedule& s) -> double& { return s.igd.split_offset_frac; }));
        f.push_back({"igd.split_direction",
                     [](const TrainSchedule& s) {
                         return std::string(s.igd.split_direction == SplitDirection::principal_axis
                                                ? "principal_axis"
                                                : "position_gradient");
                     },
                     [](TrainSchedule& s, const std::string& v) {
                         if (v == "principal_axis") s.igd.split_direction = SplitDirection::principal_axis;
                         else if (v == "position_gradient") s.igd.split_direction = SplitDirection::position_gradient;
                         else throw ValidationError("config key 'igd.split_direction': expected principal_axis or position_gradient");
                     }});
        f.push_back(f_int("init_count", &TrainSchedule::init_count));
        f.push_back(f_double("init_opacity", [](TrainSchedule& s) -> double& { return s.init_opacity; }));
        f.push_back(f_double("init_encoding_std", [](TrainSchedule& s) -> double& { return s.init_encoding_std; }));
        f.push_back(f_double("densify_grad_threshold", [](TrainSchedule& s) -> double& { return s.densify_grad_threshold; }));
        f.push_back(f_double("percent_dense", [](TrainSchedule& s) -> double& { return s.percent_dense; }));
        f.push_back(f_size("max_gaussians", &TrainSchedule::max_gaussians));
        f.push_back(f_int("checkpoint_interval", &TrainSchedule::checkpoint_interval));
        f.push_back(f_int("log_interval", &TrainSchedule::log_interval));
        f.push_back({"background",
                     [](const TrainSchedule& s) {
                         return fmt_double(s.background.x()) + "," + fmt_double(s.background.y()) + "," +
                                fmt_double(s.background.z());
                     },
                     [](TrainSchedule& s, const std::string& v) {
                         std::stringstream ss(v);
                         std::string part;
                         int c = 0;
                         while (std::getline(ss, part, ',')) {
                             if (c >= 3) throw ValidationError("config key 'background': expected r,g,b");
                             s.background[c++] = parse_double("background", trim(part));
                         }
                         if (c != 3) throw ValidationError("config key 'background': expected r,g,b");
                     }});
        f.push_back(f_size("encoding_dim", &TrainSchedule::encoding_dim));
        return f;
    }();
    return list;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

// ---- schedule ------------------------------------------------------------

TrainSchedule TrainSchedule::resolved() const {
    TrainSchedule s = *this;
    const auto frac = [&](double f) { return static_cast<int>(std::lround(f * total_iters)); };
    if (s.densify_end < 0) s.densify_end = frac(0.4);
    if (s.igd_end < 0) s.igd_end = frac(0.5);
    if (s.knn_switch < 0) s.knn_switch = frac(0.4);
    return s;
}

void TrainSchedule::validate() const {
    const TrainSchedule s = resolved();
    if (s.total_iters < 0) throw ValidationError("total_iters must be >= 0");
    if (s.total_iters > 0 && !(0 < s.densify_end)) throw ValidationError("densify_end must be > 0");
    if (s.densify_end > s.igd_end) throw ValidationError("densify_end must not exceed igd_end");
    if (s.igd_end > s.total_iters) throw ValidationError("igd_end must not exceed total_iters");
    if (s.knn_switch < 0 || s.knn_switch > s.total_iters) {
        throw ValidationError("knn_switch must lie in [0, total_iters]");
    }
    if (s.densify_interval < 1 || s.igd_interval < 1) throw ValidationError("intervals must be >= 1");
    if (!(s.alpha >= 0.0) || !(s.beta >= 0.0)) throw ValidationError("alpha and beta must be >= 0");
    if (!(s.identity_geometry_grad >= 0.0) || !(s.identity_geometry_grad <= 1.0)) {
        throw ValidationError("identity_geometry_grad must be in [0, 1]");
    }
    if (s.k < 1) throw ValidationError("k must be >= 1");
    if (s.samples < 1) throw ValidationError("samples must be >= 1");
    if (s.init_count < 2) throw ValidationError("init_count must be >= 2");
    if (!(s.init_opacity > 0.0 && s.init_opacity < 1.0)) throw ValidationError("init_opacity must lie in (0,1)");
    if (!(s.init_encoding_std >= 0.0)) throw ValidationError("init_encoding_std must be >= 0");
    if (s.checkpoint_interval < 1 || s.log_interval < 1) {
        throw ValidationError("checkpoint_interval and log_interval must be >= 1");
    }
    if (s.encoding_dim < 1) throw ValidationError("encoding_dim must be >= 1");
    if (s.max_gaussians < static_cast<std::size_t>(s.init_count)) {
        throw ValidationError("max_gaussians must be >= init_count");
    }
    const LearningRates& lr = s.lr;
    for (double v : {lr.position, lr.log_scale, lr.rotation, lr.opacity_logit, lr.color, lr.encoding, lr.head}) {
        if (!(v >= 0.0)) throw ValidationError("learning rates must be >= 0");
    }
    s.igd.validate();
}

TrainSchedule TrainSchedule::parse(const std::string& text) {
    TrainSchedule s;
    std::stringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        const std::string value = trim(line.substr(eq + 1));
        const auto& fs = fields();
        const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.name; });
        if (it == fs.end()) {
            throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        it->set(s, value);
    }
    s.validate();
    return s;
}

TrainSchedule TrainSchedule::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::map<std::string, std::string> TrainSchedule::to_map() const {
    std::map<std::string, std::string> m;
    for (const Field& f : fields()) m[f.name] = f.get(*this);
    return m;
}

std::string TrainSchedule::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const Field& f : fields()) {
        const std::string v = f.get(*this);
        if (v == "true" || v == "false") {
            j[f.name] = v == "true";
            continue;
        }
        double d = 0.0;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), d);
        if (r.ec == std::errc() && r.ptr == v.data() + v.size()) {
            long long i = 0;
            const auto ri = std::from_chars(v.data(), v.data() + v.size(), i);
            if (ri.ec == std::errc() && ri.ptr == v.data() + v.size()) {
                j[f.name] = i;
            } else {
                j[f.name] = d;
            }
        } else {
            j[f.name] = v;
        }
    }
    return j.dump(2);
}

// ---- initialization ------------------------------------------------------

GaussianCloud initialize_cloud(const Vec3& lo, const Vec3& hi, const TrainSchedule& schedule) {
    const std::size_t n = static_cast<std::size_t>(std::max(0, schedule.init_count));
    const std::size_t dim = schedule.encoding_dim;
    std::mt19937_64 rng(mix_seed(schedule.seed, 0x1417));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> enc(0.0, 1.0);

    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
        for (int k = 0; k < 3; ++k) p[k] = lo[k] + (hi[k] - lo[k]) * unit(rng);
    }
    std::vector<double> nn(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) best = std::min(best, (pts[j] - pts[i]).squaredNorm());
        }
        nn[i] = n > 1 ? std::sqrt(best) : 0.0;
    });
    double mean_nn = 0.0;
    for (double d : nn) mean_nn += d;
    mean_nn = n > 0 ? mean_nn / static_cast<double>(n) : 0.0;
    if (!(mean_nn > 0.0)) mean_nn = 0.01 * (hi - lo).norm() + 1e-3;

    GaussianCloud cloud(dim);
    for (std::size_t i = 0; i < n; ++i) {
        Gaussian g;
        g.position = pts[i];
        g.scale = Vec3::Constant(mean_nn);
        g.opacity = schedule.init_opacity;
        g.color = Vec3::Constant(0.5);
        g.encoding.resize(dim);
        for (auto& e : g.encoding) e = schedule.init_encoding_std * enc(rng);
        cloud.push_back(g);
    }
    return cloud;
}

// ---- loss ----------------------------------------------------------------

TotalLoss total_loss(const GaussianCloud& cloud, const ClassifierHead& head, const CameraView& cam,
                     const RenderOutput& out, const std::optional<Loss3dInputs>& l3d, double alpha,
                     double beta, const Vec3& background, double identity_geometry_grad) {
    const std::size_t pixels = out.pixels();
    const std::size_t dim = cloud.dim();
    if (cam.image.width != out.width || cam.image.height != out.height) {
        throw ValidationError("total_loss: target image does not match the render");
    }
    if (cam.mask.width != out.width || cam.mask.height != out.height) {
        throw ValidationError("total_loss: target mask does not match the render");
    }
    if (head.dim != dim) throw ValidationError("total_loss: head dimension does not match encodings");

    TotalLoss result;
    PixelGrads pg(pixels, dim);
    const std::size_t stride = pg.stride();

    // Mean absolute per-channel difference.
    const double inv = 1.0 / static_cast<double>(pixels * 3);
    double l1 = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
        for (int c = 0; c < 3; ++c) {
            const double d = out.color.data[p * 3 + c] - cam.image.data[p * 3 + c];
            l1 += std::abs(d);
            pg.values[p * stride + c] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
        }
    }
    result.loss.l1 = l1 * inv;

    const Loss2d l2 = loss_2d(out.identity, cam.mask.data, head);
    result.loss.l2d = l2.value;
    if (alpha != 0.0) {
        for (std::size_t p = 0; p < pixels; ++p) {
            double* dst = pg.values.data() + p * stride + 3;
            const double* src = l2.grad_features.data() + p * dim;
            for (std::size_t d = 0; d < dim; ++d) dst[d] = alpha * src[d];
        }
    }

    result.grads = backward(cloud, cam, out, pg, background, identity_geometry_grad);
    result.grads.head = HeadGrads(head);
    if (alpha != 0.0) {
        for (std::size_t k = 0; k < head.weights.size(); ++k) {
            result.grads.head.weights[k] = alpha * l2.grad_head.weights[k];
        }
        for (std::size_t k = 0; k < head.biases.size(); ++k) {
            result.grads.head.biases[k] = alpha * l2.grad_head.biases[k];
        }
    }

    if (l3d) {
        const Loss3d l3 = loss_3d(cloud, head, l3d->options);
        result.loss.l3d = l3.value;
        result.loss.l3d_pairs = l3.pairs;
        if (beta != 0.0) {
            for (std::size_t k = 0; k < l3.grad_encodings.size(); ++k) {
                result.grads.encoding[k] += beta * l3.grad_encodings[k];
            }
            if (l3d->options.head_gradient) {
                for (std::size_t k = 0; k < head.weights.size(); ++k) {
                    result.grads.head.weights[k] += beta * l3.grad_head.weights[k];
                }
                for (std::size_t k = 0; k < head.biases.size(); ++k) {
                    result.grads.head.biases[k] += beta * l3.grad_head.biases[k];
                }
            }
        }
    }
    result.loss.total = result.loss.l1 + alpha * result.loss.l2d + beta * result.loss.l3d;
    return result;
}

// ---- standard densification ---------------------------------------------

void DensifyStats::resize(std::size_t n) {
    grad_norm_sum.assign(n, 0.0);
    visible.assign(n, 0);
}

void DensifyStats::add(const ParamGrads& grads) {
    if (grads.size() != grad_norm_sum.size()) {
        throw Error("DensifyStats::add: row count mismatch");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads.visible[i]) continue;
        grad_norm_sum[i] += grads.position[i].norm();
        ++visible[i];
    }
}

void DensifyStats::remap(const RowRemap& remap) {
    std::vector<double> g(remap.source.size(), 0.0);
    std::vector<std::int64_t> v(remap.source.size(), 0);
    for (std::size_t r = 0; r < remap.source.size(); ++r) {
        const std::int64_t s = remap.source[r];
        if (s >= 0) {
            g[r] = grad_norm_sum[static_cast<std::size_t>(s)];
            v[r] = visible[static_cast<std::size_t>(s)];
        }
    }
    grad_norm_sum = std::move(g);
    visible = std::move(v);
}

DensifyResult standard_densify(const GaussianCloud& cloud, const DensifyStats& stats,
                               double grad_threshold, double clone_max_scale, double opacity_eps,
                               std::size_t max_gaussians, std::uint64_t seed) {
    const std::size_t n = cloud.size();
    if (stats.grad_norm_sum.size() != n || stats.visible.size() != n) {
        throw Error("standard_densify: statistics are out of sync with the cloud");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::size_t live = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(cloud.opacities[i] < opacity_eps)) ++live;
    }

    DensifyResult result;
    std::vector<std::int64_t> kept;
    std::vector<Gaussian> fresh;
    std::vector<std::int32_t> fresh_group;
    std::size_t budget = max_gaussians > live ? max_gaussians - live : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (cloud.opacities[i] < opacity_eps) {
            ++result.pruned;
            continue;
        }
        const bool hot = stats.visible[i] > 0 &&
                         stats.grad_norm_sum[i] / static_cast<double>(stats.visible[i]) > grad_threshold;
        if (!hot || budget == 0) {
            kept.push_back(static_cast<std::int64_t>(i));
            continue;
        }
        const Gaussian g = cloud.gaussian(i);
        if (g.scale.maxCoeff() <= clone_max_scale) {
            kept.push_back(static_cast<std::int64_t>(i));
            fresh.push_back(g);
            fresh_group.push_back(cloud.group_id[i]);
            ++result.cloned;
            --budget;
        } else {
            // Two children drawn from the parent's own distribution.
            const Mat3 rot = quat_to_rotation(g.rotation);
            for (int c = 0; c < 2; ++c) {
                Gaussian child = g;
                Vec3 z(normal(rng), normal(rng), normal(rng));
                child.position = g.position + rot * z.cwiseProduct(g.scale);
                child.scale = g.scale / 1.6;
                fresh.push_back(child);
                fresh_group.push_back(cloud.group_id[i]);
            }
            ++result.split;
            --budget;
        }
    }
    result.remap.source = kept;
    result.remap.source.insert(result.remap.source.end(), fresh.size(), -1);
    result.cloud = cloud.rebuild(result.remap, fresh);
    for (std::size_t f = 0; f < fresh.size(); ++f) {
        result.cloud.group_id[kept.size() + f] = fresh_group[f];
    }
    return result;
}

PhaseFlags phase_flags(const TrainSchedule& s, int iter) {
    const int done = iter + 1;
    PhaseFlags f;
    f.densify = iter < s.densify_end && done % s.densify_interval == 0;
    // The identity monitors start counting when the IGD window opens.
    f.reset_monitors = done == s.densify_end;
    f.igd = s.igd_enabled && iter >= s.densify_end && iter < s.igd_end && done % s.igd_interval == 0;
    f.local_knn = s.knn_policy == KnnPolicy::switched && iter >= s.knn_switch;
    return f;
}

// ---- evaluation helpers --------------------------------------------------

Mask segment_view(const GaussianCloud& cloud, const ClassifierHead& head, const CameraView& cam) {
    const RenderOutput out = render(cloud, cam);
    const std::vector<std::int32_t> labels = predict_labels(out.identity, head);
    Mask mask(out.width, out.height);
    for (std::size_t p = 0; p < labels.size(); ++p) {
        mask.data[p] = static_cast<std::uint8_t>(std::clamp(labels[p], 0, 255));
    }
    return mask;
}

HeldOutEval render_held_out(const GaussianCloud& cloud, const ClassifierHead& head,
                            const Dataset& data, const Vec3& background) {
    HeldOutEval eval;
    for (const std::size_t v : data.test_indices()) {
        const CameraView& cam = data.views[v];
        const RenderOutput out = render(cloud, cam, background);
        eval.rendered.push_back(out.color);
        const std::vector<std::int32_t> labels = predict_labels(out.identity, head);
        Mask mask(out.width, out.height);
        for (std::size_t p = 0; p < labels.size(); ++p) {
            mask.data[p] = static_cast<std::uint8_t>(std::clamp(labels[p], 0, 255));
        }
        eval.predicted.push_back(std::move(mask));
    }
    return eval;
}

// ---- training loop -------------------------------------------------------

namespace {

std::string metrics_line(const MetricsRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%zu,%.6f", r.iter, r.l1, r.l2d, r.l3d, r.count,
                  r.psnr);
    return buf;
}

void save_checkpoint(const GaussianCloud& cloud, const ClassifierHead& head,
                     const std::filesystem::path& path) {
    save_scene(assign_groups(cloud, head), head, path);
}

}  // namespace

TrainResult train(const Dataset& data, const TrainSchedule& schedule,
                  const std::filesystem::path& out_dir) {
    schedule.validate();
    const TrainSchedule s = schedule.resolved();
    if (data.views.size() < 2) throw ValidationError("training needs at least 2 views");
    std::vector<std::size_t> train_views = data.train_indices();
    if (train_views.empty()) throw ValidationError("dataset has no training views");
    for (const std::size_t v : train_views) {
        const CameraView& cam = data.views[v];
        if (cam.image.width != cam.width() || cam.image.height != cam.height() ||
            cam.mask.width != cam.width() || cam.mask.height != cam.height()) {
            throw ValidationError("view " + data.names[v] + " lacks an image or mask of its size");
        }
    }
    std::vector<std::size_t> test_views = data.test_indices();
    const std::size_t monitor_view = test_views.empty() ? train_views.front() : test_views.front();
    const double extent = data.extent();

    const bool write = !out_dir.empty();
    if (write) std::filesystem::create_directories(out_dir);

    TrainResult result;
    GaussianCloud cloud = initialize_cloud(data.bounds_min, data.bounds_max, s);
    ClassifierHead head(data.num_classes, s.encoding_dim);
    AdamState adam(cloud.size(), s.encoding_dim, head);
    DensifyStats stats;
    stats.resize(cloud.size());

    std::ofstream metrics;
    if (write) {
        metrics.open(out_dir / "metrics.csv", std::ios::binary);
        if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
        metrics << kMetricsHeader << "\n";
    }

    LossBreakdown window;
    int window_count = 0;
    for (int iter = 0; iter < s.total_iters; ++iter) {
        const CameraView& cam = data.views[train_views[static_cast<std::size_t>(iter) % train_views.size()]];
        const RenderOutput out = render(cloud, cam, s.background);
        const PhaseFlags phase = phase_flags(s, iter);

        std::optional<Loss3dInputs> l3d;
        if (s.beta > 0.0) {
            Loss3dInputs in;
            in.options.samples = std::min(s.samples, cloud.size());
            in.options.k = std::min(s.k, cloud.size() > 0 ? cloud.size() - 1 : 0);
            in.options.mode = phase.local_knn ? NeighborMode::local_adaptive : NeighborMode::global;
            in.options.seed = mix_seed(s.seed, 0x100000000ULL + static_cast<std::uint64_t>(iter));
            in.options.head_gradient = s.l3d_head_gradient;
            l3d = in;
        }
        TotalLoss tl = total_loss(cloud, head, cam, out, l3d, s.alpha, s.beta, s.background,
                                  s.identity_geometry_grad);
        if (!std::isfinite(tl.loss.total)) {
            throw Error("training diverged: total loss is not finite at iteration " + std::to_string(iter));
        }
        accumulate_monitors(cloud, tl.grads, s.monitor_mode);
        if (iter < s.densify_end) stats.add(tl.grads);
        adam.step(cloud, head, tl.grads, s.lr, extent);

        window.l1 += tl.loss.l1;
        window.l2d += tl.loss.l2d;
        window.l3d += tl.loss.l3d;
        ++window_count;

        const int done = iter + 1;
        if (phase.densify) {
            DensifyResult d = standard_densify(cloud, stats, s.densify_grad_threshold * extent,
                                               s.percent_dense * extent, s.igd.opacity_eps,
                                               s.max_gaussians, mix_seed(s.seed, 0x200000000ULL + done));
            cloud = std::move(d.cloud);
            adam.remap(d.remap);
            stats.resize(cloud.size());
        }
        if (phase.reset_monitors) {
            std::fill(cloud.id_grad_accum.begin(), cloud.id_grad_accum.end(), 0.0);
            std::fill(cloud.id_grad_vector.begin(), cloud.id_grad_vector.end(), 0.0);
            std::fill(cloud.visible_count.begin(), cloud.visible_count.end(), 0);
        }
        if (phase.igd) {
            IgdResult r = igd_step(cloud, s.igd, extent);
            spdlog::debug("igd at {}: pruned {}, split {}, tau {}", done, r.pruned, r.split, r.threshold);
            cloud = std::move(r.cloud);
            adam.remap(r.remap);
            stats.resize(cloud.size());
        }

        if (done % s.log_interval == 0 || done == s.total_iters) {
            MetricsRow row;
            row.iter = done;
            row.l1 = window.l1 / window_count;
            row.l2d = window.l2d / window_count;
            row.l3d = window.l3d / window_count;
            row.count = cloud.size();
            const CameraView& mcam = data.views[monitor_view];
            row.psnr = mcam.image.data.empty() ? 0.0 : psnr(render(cloud, mcam, s.background).color, mcam.image);
            result.metrics.push_back(row);
            if (write) metrics << metrics_line(row) << "\n" << std::flush;
            window = {};
            window_count = 0;
        }
        if (write && done % s.checkpoint_interval == 0) {
            save_checkpoint(cloud, head, out_dir / ("ckpt_" + std::to_string(done) + ".gseg"));
        }
    }

    result.cloud = assign_groups(cloud, head);
    result.head = head;
    if (write) {
        save_scene(result.cloud, result.head, out_dir / "scene.gseg");
        nlohmann::ordered_json run;
        run["command"] = "train";
        run["seed"] = s.seed;
        run["config"] = nlohmann::ordered_json::parse(s.to_json());
        run["scene_extent"] = extent;
        run["final_gaussians"] = result.cloud.size();
        run["simd"] = std::string(simd::isa_name(simd::kernels().isa));
        std::ofstream rj(out_dir / "run.json");
        rj << run.dump(2) << "\n";
    }
    return result;
}

}  // namespace gradiseg
