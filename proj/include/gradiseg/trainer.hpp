#pragma once

#include "gradiseg/backward.hpp"
#include "gradiseg/dataset.hpp"
#include "gradiseg/igd.hpp"
#include "gradiseg/knn.hpp"
#include "gradiseg/optimizer.hpp"
#include "gradiseg/render.hpp"
#include "gradiseg/scene.hpp"
#include "gradiseg/semantic_head.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gradiseg {

/// Which neighbor rule feeds L_3d: global before knn_switch then
/// local-adaptive (the full method), or global throughout.
enum class KnnPolicy { switched, global_only };

struct TrainSchedule {
    int total_iters = 3000;
    // Phase boundaries default to 0.4 T, 0.5 T and 0.4 T when left negative.
    int densify_end = -1;
    int igd_end = -1;
    int knn_switch = -1;
    int densify_interval = 100;
    int igd_interval = 100;
    double alpha = 1.0;  // L_2d weight
    double beta = 2.0;   // L_3d weight
    std::size_t k = 5;
    std::size_t samples = 1000;  // M
    LearningRates lr;
    std::uint64_t seed = 42;

    bool igd_enabled = true;
    KnnPolicy knn_policy = KnnPolicy::switched;
    MonitorMode monitor_mode = MonitorMode::norm_sum;
    bool l3d_head_gradient = false;
    // Weight of the L_2d gradient reaching geometry and opacity; encodings
    // and head always receive the full gradient.
    double identity_geometry_grad = 0.01;
    IgdConfig igd;

    int init_count = 2000;
    double init_opacity = 0.1;
    double init_encoding_std = 0.01;
    double densify_grad_threshold = 2e-4;  // times extent, per visible iteration
    double percent_dense = 0.01;           // clone when max scale <= this * extent
    std::size_t max_gaussians = 20000;
    int checkpoint_interval = 500;
    int log_interval = 50;
    Vec3 background = Vec3::Zero();
    std::size_t encoding_dim = 16;

    /// Fills negative phase boundaries from total_iters.
    TrainSchedule resolved() const;
    /// Throws ValidationError when phase ordering or weights are invalid.
    void validate() const;

    /// Flat key=value text; `#` starts a comment. Unknown keys are rejected.
    static TrainSchedule parse(const std::string& text);
    static TrainSchedule load(const std::filesystem::path& path);
    std::map<std::string, std::string> to_map() const;
    std::string to_json() const;
};

/// What the loop does at 0-based iteration `iter` of a resolved schedule.
struct PhaseFlags {
    bool densify = false;        // standard_densify after this step
    bool reset_monitors = false;  // identity monitors zeroed after this step
    bool igd = false;            // igd_step after this step
    bool local_knn = false;      // L_3d uses local-adaptive neighbors
};
PhaseFlags phase_flags(const TrainSchedule& resolved, int iter);

/// Uniform random centers in the box, isotropic scale equal to the mean
/// nearest-neighbor distance, gray color, small Gaussian encodings.
GaussianCloud initialize_cloud(const Vec3& lo, const Vec3& hi, const TrainSchedule& schedule);

struct LossBreakdown {
    double l1 = 0.0;
    double l2d = 0.0;
    double l3d = 0.0;
    double total = 0.0;
    std::size_t l3d_pairs = 0;
};

struct TotalLoss {
    LossBreakdown loss;
    ParamGrads grads;
};

/// Options for the 3D term; nullopt disables it.
struct Loss3dInputs {
    Loss3dOptions options;
};

/// L = L1(target, rendered) + alpha L_2d + beta L_3d with its gradient with
/// respect to every Gaussian parameter and the head.
TotalLoss total_loss(const GaussianCloud& cloud, const ClassifierHead& head, const CameraView& cam,
                     const RenderOutput& out, const std::optional<Loss3dInputs>& l3d, double alpha,
                     double beta, const Vec3& background = Vec3::Zero(),
                     double identity_geometry_grad = 1.0);

/// Per-row accumulators for the photometric densification phase.
struct DensifyStats {
    std::vector<double> grad_norm_sum;
    std::vector<std::int64_t> visible;

    void resize(std::size_t n);
    void add(const ParamGrads& grads);
    void remap(const RowRemap& remap);
};

struct DensifyResult {
    GaussianCloud cloud;
    RowRemap remap;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// Clone small / split large Gaussians whose mean positional gradient norm
/// exceeds grad_threshold, then prune opacity below opacity_eps.
DensifyResult standard_densify(const GaussianCloud& cloud, const DensifyStats& stats,
                               double grad_threshold, double clone_max_scale, double opacity_eps,
                               std::size_t max_gaussians, std::uint64_t seed);

struct MetricsRow {
    int iter = 0;
    double l1 = 0.0;
    double l2d = 0.0;
    double l3d = 0.0;
    std::size_t count = 0;
    double psnr = 0.0;
};

struct TrainResult {
    GaussianCloud cloud;
    ClassifierHead head;
    std::vector<MetricsRow> metrics;
};

inline constexpr const char* kMetricsHeader = "iter,l1,l2d,l3d,num_gaussians,heldout_psnr";

/// Full optimization run. Writes ckpt_<iter>.gseg every checkpoint_interval
/// iterations, scene.gseg at the end, metrics.csv and run.json into out_dir
/// (skipped when out_dir is empty).
TrainResult train(const Dataset& data, const TrainSchedule& schedule,
                  const std::filesystem::path& out_dir);

/// Renders and segments every held-out view of `data`.
struct HeldOutEval {
    std::vector<Image> rendered;
    std::vector<Mask> predicted;
};
HeldOutEval render_held_out(const GaussianCloud& cloud, const ClassifierHead& head,
                            const Dataset& data, const Vec3& background = Vec3::Zero());

/// Label mask predicted from the rendered identity map.
Mask segment_view(const GaussianCloud& cloud, const ClassifierHead& head, const CameraView& cam);

}  // namespace gradiseg
