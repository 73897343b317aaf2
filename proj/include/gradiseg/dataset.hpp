#pragma once

#include "gradiseg/camera.hpp"
#include "gradiseg/math.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace gradiseg {

/// Multi-view dataset described by `manifest.json` in its directory. Each
/// view names a P6 image and a P5 mask relative to that directory.
struct Dataset {
    std::vector<CameraView> views;
    std::vector<std::string> names;
    std::vector<bool> held_out;  // evaluation-only views
    Vec3 bounds_min = Vec3::Constant(-1.0);
    Vec3 bounds_max = Vec3::Constant(1.0);
    std::size_t num_classes = 256;

    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
    double extent() const;
};

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace gradiseg
