#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "t2p/config.hpp"

namespace t2p {

// A frame is a float32 tensor [3, H, W] with values in [-1, 1].
using Frame = torch::Tensor;

using Rgb = std::array<double, 3>;

enum class SleeveLength { kNone, kShort, kMedium, kLong };
enum class GarmentLength { kShort, kMedium, kLong };

enum class Motion { kStand, kMoveRight, kMoveLeft, kTurnAround, kRaiseArms, kWave, kSquat, kJump };

inline constexpr std::array<Motion, 8> kAllMotions{Motion::kStand,     Motion::kMoveRight, Motion::kMoveLeft,
                                                   Motion::kTurnAround, Motion::kRaiseArms, Motion::kWave,
                                                   Motion::kSquat,      Motion::kJump};

std::string_view motion_name(Motion m);
std::optional<Motion> motion_from_name(std::string_view name);
std::string_view sleeve_name(SleeveLength s);
std::string_view garment_name(GarmentLength g);

struct NamedColor {
    std::string_view name;
    std::array<std::uint8_t, 3> rgb;
    Rgb unit() const { return {rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0}; }
};

// Garment palette; every color word the templates can emit.
const std::vector<NamedColor>& garment_palette();
// Palette entry closest (L2) to `c`.
const NamedColor& nearest_color_name(const Rgb& c);

// Flat light background shared by renderer and extractors.
inline constexpr std::array<std::uint8_t, 3> kBackground{235, 235, 235};

struct AppearanceSpec {
    Rgb top_color{0.5, 0.5, 0.5};
    Rgb bottom_color{0.5, 0.5, 0.5};
    SleeveLength sleeve_length = SleeveLength::kShort;
    GarmentLength garment_length = GarmentLength::kLong;
    std::uint64_t figure_id = 0;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    friend bool operator==(const AppearanceSpec&, const AppearanceSpec&) = default;
};

struct MotionSpec {
    Motion label = Motion::kStand;
    int duration_frames = 8;

    void validate() const;
    friend bool operator==(const MotionSpec&, const MotionSpec&) = default;
};

struct Canvas {
    int height = 128;
    int width = 64;
};

struct VideoClip {
    std::vector<Frame> frames;
    AppearanceSpec appearance;
    MotionSpec motion;
    std::string appearance_text;
    std::string motion_text;
};

// Rasterizes the articulated figure for `motion` at `phase` in [0, 1]. `mirror`
// swaps which limb leads (walking, waving) and nothing else.
Frame render_frame(const AppearanceSpec& appearance, double phase, const MotionSpec& motion,
                   const Canvas& canvas = {}, bool mirror = false);

// Phases are i / (duration - 1); the seed only picks the mirrored variant.
VideoClip generate_clip(const AppearanceSpec& appearance, const MotionSpec& motion, std::uint64_t rng_seed,
                        const Canvas& canvas = {});

struct ClipTexts {
    std::string appearance_text;
    std::string motion_text;
};

ClipTexts text_from_spec(const AppearanceSpec& appearance, const MotionSpec& motion);
std::string motion_text(Motion m);
std::string appearance_text(const AppearanceSpec& appearance);

// Every word the templates can produce, sorted, without duplicates.
std::vector<std::string> template_vocabulary();

// Source frame indices round(i * (L - 1) / (n - 1)).
std::vector<int> normalized_indices(int length, int n);
VideoClip normalize_clip(const VideoClip& clip, int n);

// Random appearance drawn from the garment palette.
AppearanceSpec random_appearance(std::mt19937_64& rng);

enum class Split { kTrain, kHeldOut };

struct ClipRecord {
    std::string id;
    Split split = Split::kTrain;
    AppearanceSpec appearance;
    MotionSpec motion;
    std::uint64_t seed = 0;
    std::string appearance_text;
    std::string motion_text;
    std::vector<std::string> frame_paths;  // relative to the manifest root
};

struct DatasetManifest {
    std::filesystem::path root;
    int height = 128;
    int width = 64;
    std::uint64_t master_seed = 0;
    std::vector<std::string> motion_classes;
    std::vector<ClipRecord> clips;

    std::vector<const ClipRecord*> split(Split s) const;
    // Checks frame files exist, ids are unique and classes are known.
    void validate() const;
};

// Writes frames and manifest.txt under `out_dir`.
DatasetManifest make_dataset(const DataConfig& config, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& root);
VideoClip load_clip(const DatasetManifest& manifest, const ClipRecord& record);

// FNV-1a over the manifest file bytes; used to stamp evaluation reports.
std::string manifest_hash(const std::filesystem::path& root);

}  // namespace t2p
