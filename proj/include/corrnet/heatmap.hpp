#pragma once

#include "corrnet/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace corrnet {

/// Linear map of (-0.5, 0.5) onto [0, 255]: round((v + 0.5) * 255), clamped.
std::uint8_t gate_to_pixel(double v);

/// Binary greyscale PGM (P5) of a row-major H x W map.
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, Index height, Index width);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, Index* height = nullptr, Index* width = nullptr);

/// Pixels of map (t, slot) of a [T, K, H, W] tensor.
std::vector<std::uint8_t> map_pixels(const Tensor<float>& maps, Index t, Index slot);
/// Channel mean of frame t of a [T, C, H, W] tensor, as pixels.
std::vector<std::uint8_t> channel_mean_pixels(const Tensor<float>& maps, Index t);

struct Peak {
  Index t = 0;
  Index slot = 0;
  Index y = 0;
  Index x = 0;
  float value = 0;
};

/// Argmax location (first in row-major order) of every (t, slot) map of a [T, K, H, W] tensor.
std::vector<Peak> peak_trace(const Tensor<float>& maps);

/// Per-frame mean |U| of a [T, C] gate tensor.
std::vector<double> gate_magnitudes(const Tensor<float>& gates);

/// Writes, for every ST stage, A_hat images per frame and neighbour slot, channel-averaged M
/// images per frame, the U magnitude series and the A_hat peak trace. Returns written paths.
std::vector<std::filesystem::path> dump_stage_maps(const std::vector<StageTrace<float>>& traces,
                                                   const std::filesystem::path& out);

}  // namespace corrnet
