#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>

namespace t2p {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container: magic, version, stage tag, config echo, rng state, then
// named arrays (dtype, shape, raw little-endian bytes).
struct CheckpointBundle {
    std::string stage;
    std::string config_echo;
    std::string rng_state;
    std::map<std::string, torch::Tensor> arrays;
};

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle);
// Throws FormatError on a bad magic, version, truncation or unknown dtype.
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

// Parameters and buffers under "<prefix>.<name>".
void export_module(const torch::nn::Module& module, const std::string& prefix,
                   std::map<std::string, torch::Tensor>& out);
// Copies arrays back; missing names or shape mismatches throw FormatError.
void import_module(torch::nn::Module& module, const std::string& prefix,
                   const std::map<std::string, torch::Tensor>& arrays);

// Adam moments and step counters, keyed by parameter order.
void export_adam(torch::optim::Adam& optimizer, const std::string& prefix,
                 std::map<std::string, torch::Tensor>& out);
void import_adam(torch::optim::Adam& optimizer, const std::string& prefix,
                 const std::map<std::string, torch::Tensor>& arrays);

std::string rng_to_string(const std::mt19937_64& rng);
void rng_from_string(std::mt19937_64& rng, const std::string& state);

}  // namespace t2p
