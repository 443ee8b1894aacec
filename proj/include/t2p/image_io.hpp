#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace t2p {

// 8-bit RGB PNG <-> float [3, H, W] in [-1, 1]. Values written as
// round((v + 1) * 127.5), so frames rendered from 8-bit colors round-trip exactly.
void write_png(const std::filesystem::path& path, const torch::Tensor& frame);
torch::Tensor read_png(const std::filesystem::path& path);

// Tiles frames row-major into one image with a 2px separator.
torch::Tensor tile_frames(const std::vector<torch::Tensor>& frames, int columns);

// Looping animated GIF (6x7x6 color cube, uncompressed LZW codes).
void write_gif(const std::filesystem::path& path, const std::vector<torch::Tensor>& frames, int delay_cs = 12);

}  // namespace t2p
