#pragma once

#include "gradiseg/scene.hpp"
#include "gradiseg/semantic_head.hpp"

#include <filesystem>
#include <utility>

namespace gradiseg {

/// GSEG1 container: "GSEG1", u32 version, N, D, C, then little-endian
/// float32 arrays (positions, scales, rotations, opacities, colors,
/// encodings), int32 group ids, float32 head weights and biases.
/// Refuses to write a cloud that fails validation.
void save_scene(const GaussianCloud& cloud, const ClassifierHead& head,
                const std::filesystem::path& path);

/// Quaternions off unit length by at most 1e-4 are renormalized; anything
/// else that breaks an invariant is rejected.
std::pair<GaussianCloud, ClassifierHead> load_scene(const std::filesystem::path& path);

}  // namespace gradiseg
