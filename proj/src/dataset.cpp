#include "t2p/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "t2p/errors.hpp"
#include "t2p/image_io.hpp"

namespace t2p {
namespace {

using Rgb8 = std::array<std::uint8_t, 3>;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rgb8 to_rgb8(const Rgb& c) {
    Rgb8 out{};
    for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(c[i] * 255.0));
    return out;
}

constexpr std::array<Rgb8, 3> kSkinTones{{{224, 172, 130}, {198, 134, 96}, {141, 85, 54}}};
constexpr std::array<Rgb8, 3> kHairColors{{{40, 30, 20}, {110, 70, 30}, {200, 170, 90}}};
constexpr Rgb8 kShoes{50, 50, 50};

// Per-figure constants derived from figure_id.
struct Build {
    Rgb8 skin;
    Rgb8 hair;
    double height_scale;
    double shoulder_scale;
};

Build build_for(std::uint64_t figure_id) {
    const std::uint64_t h = splitmix64(figure_id);
    constexpr std::array<double, 3> heights{0.94, 0.97, 1.0};
    constexpr std::array<double, 3> shoulders{0.9, 1.0, 1.1};
    return {kSkinTones[h % 3], kHairColors[(h >> 8) % 3], heights[(h >> 16) % 3], shoulders[(h >> 24) % 3]};
}

struct Pose {
    double dx = 0.0;        // horizontal offset (figure units)
    double lift = 0.0;      // vertical lift above the ground (figure units)
    double turn = 0.0;      // 0 = facing front, 1 = profile
    double arm_left = 0.15;  // radians from hanging straight down, outward positive
    double arm_right = 0.15;
    double elbow_left = 0.0;
    double elbow_right = 0.0;
    double leg_left = 0.08;
    double leg_right = 0.08;
    double knee = 0.0;  // shin angle relative to thigh, inward positive
};

Pose pose_for(Motion motion, double p, bool mirror) {
    constexpr double pi = std::numbers::pi;
    Pose pose;
    const double lead = mirror ? -1.0 : 1.0;
    switch (motion) {
        case Motion::kStand:
            break;
        case Motion::kMoveRight:
        case Motion::kMoveLeft: {
            const double dir = motion == Motion::kMoveRight ? 1.0 : -1.0;
            pose.dx = dir * 14.0 * p;
            const double swing = 0.35 * std::sin(4.0 * pi * p) * lead;
            pose.leg_left = 0.08 + swing;
            pose.leg_right = 0.08 - swing;
            pose.arm_left = 0.15 - 0.8 * swing;
            pose.arm_right = 0.15 + 0.8 * swing;
            break;
        }
        case Motion::kTurnAround:
            pose.turn = p;
            break;
        case Motion::kRaiseArms: {
            const double a = 0.15 + (2.7 - 0.15) * p;
            pose.arm_left = a;
            pose.arm_right = a;
            break;
        }
        case Motion::kWave: {
            const double a = 0.15 + (2.3 - 0.15) * std::min(1.0, 3.0 * p);
            const double elbow = p > 1.0 / 3.0 ? 0.5 * std::sin(6.0 * pi * (p - 1.0 / 3.0)) : 0.0;
            (mirror ? pose.arm_left : pose.arm_right) = a;
            (mirror ? pose.elbow_left : pose.elbow_right) = elbow;
            break;
        }
        case Motion::kSquat:
            pose.leg_left = 0.08 + 0.9 * p;
            pose.leg_right = 0.08 + 0.9 * p;
            pose.knee = 1.4 * p;
            pose.arm_left = 0.15 + 0.6 * p;
            pose.arm_right = 0.15 + 0.6 * p;
            break;
        case Motion::kJump:
            pose.lift = 18.0 * std::sin(pi * p);
            pose.arm_left = 0.15 + 0.5 * std::sin(pi * p);
            pose.arm_right = pose.arm_left;
            break;
    }
    return pose;
}

class Raster {
public:
    Raster(int height, int width) : h_(height), w_(width), px_(static_cast<std::size_t>(height) * width, kBackground) {}

    void circle(double cx, double cy, double r, const Rgb8& c) {
        fill(cx - r, cy - r, cx + r, cy + r, c, [&](double x, double y) {
            return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        });
    }

    void rect(double x0, double y0, double x1, double y1, const Rgb8& c) {
        fill(x0, y0, x1, y1, c, [&](double x, double y) { return x >= x0 && x < x1 && y >= y0 && y < y1; });
    }

    // Segment (ax, ay)-(bx, by) thickened to radius r.
    void capsule(double ax, double ay, double bx, double by, double r, const Rgb8& c) {
        const double vx = bx - ax, vy = by - ay;
        const double len2 = std::max(vx * vx + vy * vy, 1e-12);
        fill(std::min(ax, bx) - r, std::min(ay, by) - r, std::max(ax, bx) + r, std::max(ay, by) + r, c,
             [&](double x, double y) {
                 const double t = std::clamp(((x - ax) * vx + (y - ay) * vy) / len2, 0.0, 1.0);
                 const double dx = x - (ax + t * vx), dy = y - (ay + t * vy);
                 return dx * dx + dy * dy <= r * r;
             });
    }

    // Pixels inside the circle whose centers lie above `y_limit`.
    void circle_cap(double cx, double cy, double r, double y_limit, const Rgb8& c) {
        fill(cx - r, cy - r, cx + r, y_limit, c, [&](double x, double y) {
            return y < y_limit && (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        });
    }

    Frame to_frame() const {
        auto out = torch::empty({3, h_, w_}, torch::kFloat32);
        auto acc = out.accessor<float, 3>();
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < w_; ++x) {
                const auto& c = px_[static_cast<std::size_t>(y) * w_ + x];
                for (int ch = 0; ch < 3; ++ch) acc[ch][y][x] = static_cast<float>(c[ch]) / 127.5f - 1.0f;
            }
        }
        return out;
    }

private:
    template <class Inside>
    void fill(double x0, double y0, double x1, double y1, const Rgb8& c, Inside&& inside) {
        const int xa = std::max(0, static_cast<int>(std::floor(x0)) - 1);
        const int ya = std::max(0, static_cast<int>(std::floor(y0)) - 1);
        const int xb = std::min(w_ - 1, static_cast<int>(std::ceil(x1)) + 1);
        const int yb = std::min(h_ - 1, static_cast<int>(std::ceil(y1)) + 1);
        for (int y = ya; y <= yb; ++y) {
            for (int x = xa; x <= xb; ++x) {
                if (inside(x + 0.5, y + 0.5)) px_[static_cast<std::size_t>(y) * w_ + x] = c;
            }
        }
    }

    int h_, w_;
    std::vector<Rgb8> px_;
};

void check_unit_rgb(const Rgb& c, const char* field) {
    for (double v : c) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw std::invalid_argument(std::string("AppearanceSpec.") + field + " must lie in [0, 1]");
        }
    }
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_rgb(const Rgb& c) {
    return format_double(c[0]) + " " + format_double(c[1]) + " " + format_double(c[2]);
}

}  // namespace

std::string_view motion_name(Motion m) {
    switch (m) {
        case Motion::kStand: return "stand";
        case Motion::kMoveRight: return "move_right";
        case Motion::kMoveLeft: return "move_left";
        case Motion::kTurnAround: return "turn_around";
        case Motion::kRaiseArms: return "raise_arms";
        case Motion::kWave: return "wave";
        case Motion::kSquat: return "squat";
        case Motion::kJump: return "jump";
    }
    throw std::invalid_argument("MotionSpec.label out of range");
}

std::optional<Motion> motion_from_name(std::string_view name) {
    for (Motion m : kAllMotions) {
        if (motion_name(m) == name) return m;
    }
    return std::nullopt;
}

std::string_view sleeve_name(SleeveLength s) {
    switch (s) {
        case SleeveLength::kNone: return "no";
        case SleeveLength::kShort: return "short";
        case SleeveLength::kMedium: return "medium";
        case SleeveLength::kLong: return "long";
    }
    throw std::invalid_argument("AppearanceSpec.sleeve_length out of range");
}

std::string_view garment_name(GarmentLength g) {
    switch (g) {
        case GarmentLength::kShort: return "short";
        case GarmentLength::kMedium: return "medium";
        case GarmentLength::kLong: return "long";
    }
    throw std::invalid_argument("AppearanceSpec.garment_length out of range");
}

const std::vector<NamedColor>& garment_palette() {
    static const std::vector<NamedColor> palette{
        {"red", {200, 40, 40}},    {"orange", {240, 140, 30}}, {"yellow", {235, 210, 40}},
        {"green", {50, 160, 60}},  {"cyan", {40, 190, 200}},   {"blue", {40, 70, 200}},
        {"purple", {130, 50, 170}}, {"pink", {240, 120, 170}}, {"brown", {120, 70, 30}},
        {"black", {30, 30, 30}},   {"gray", {128, 128, 128}},
    };
    return palette;
}

const NamedColor& nearest_color_name(const Rgb& c) {
    const auto& palette = garment_palette();
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t i = 0; i < palette.size(); ++i) {
        const auto u = palette[i].unit();
        const double d = (u[0] - c[0]) * (u[0] - c[0]) + (u[1] - c[1]) * (u[1] - c[1]) + (u[2] - c[2]) * (u[2] - c[2]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return palette[best];
}

void AppearanceSpec::validate() const {
    check_unit_rgb(top_color, "top_color");
    check_unit_rgb(bottom_color, "bottom_color");
    if (static_cast<int>(sleeve_length) < 0 || static_cast<int>(sleeve_length) > 3) {
        throw std::invalid_argument("AppearanceSpec.sleeve_length out of range");
    }
    if (static_cast<int>(garment_length) < 0 || static_cast<int>(garment_length) > 2) {
        throw std::invalid_argument("AppearanceSpec.garment_length out of range");
    }
}

void MotionSpec::validate() const {
    if (static_cast<int>(label) < 0 || static_cast<int>(label) >= static_cast<int>(kAllMotions.size())) {
        throw std::invalid_argument("MotionSpec.label out of range");
    }
    if (duration_frames < 2) throw std::invalid_argument("MotionSpec.duration_frames must be >= 2");
}

Frame render_frame(const AppearanceSpec& appearance, double phase, const MotionSpec& motion, const Canvas& canvas,
                   bool mirror) {
    appearance.validate();
    motion.validate();
    if (!(phase >= 0.0 && phase <= 1.0)) throw std::invalid_argument("pose_phase must lie in [0, 1]");
    if (canvas.height < 16 || canvas.width < 16) throw std::invalid_argument("canvas must be at least 16x16");

    const Build build = build_for(appearance.figure_id);
    const Rgb8 top = to_rgb8(appearance.top_color);
    const Rgb8 bottom = to_rgb8(appearance.bottom_color);
    const Pose pose = pose_for(motion.label, phase, mirror);

    const double s = canvas.height / 128.0;
    const double u = s * build.height_scale;
    const double cx = canvas.width / 2.0 + pose.dx * s;
    const double ground = 122.0 * s;

    const double thigh = 23.0 * u, shin = 23.0 * u, foot = 3.0 * u, leg_r = 3.0 * u;
    const double shin_angle_l = pose.leg_left - pose.knee;
    const double shin_angle_r = pose.leg_right - pose.knee;
    const double leg_drop = std::max(thigh * std::cos(pose.leg_left) + shin * std::cos(shin_angle_l),
                                     thigh * std::cos(pose.leg_right) + shin * std::cos(shin_angle_r));
    const double hip_y = ground - foot - leg_drop - pose.lift * s;
    const double waist_y = hip_y - 8.0 * u;
    const double shoulder_y = waist_y - 30.0 * u;
    const double neck_top = shoulder_y - 3.0 * u;
    const double head_r = 7.0 * u;
    const double head_cy = neck_top - head_r + 1.0 * u;

    const double half_w = 9.0 * u * build.shoulder_scale * (1.0 - 0.45 * pose.turn);
    const double arm_x = (half_w + 1.0 * u) * (1.0 - 0.9 * pose.turn);
    const double hip_x = 4.5 * u * (1.0 - 0.8 * pose.turn);

    Raster r(canvas.height, canvas.width);

    // Arms sit behind the torso.
    const double upper = 16.0 * u, lower = 15.0 * u, arm_r = 2.5 * u;
    auto draw_arm = [&](double side, double angle, double elbow) {
        const double sx = cx + side * arm_x, sy = shoulder_y + 3.0 * u;
        const double ex = sx + side * std::sin(angle) * upper, ey = sy + std::cos(angle) * upper;
        const double fa = angle + elbow;
        const double wx = ex + side * std::sin(fa) * lower, wy = ey + std::cos(fa) * lower;
        r.capsule(sx, sy, ex, ey, arm_r, build.skin);
        r.capsule(ex, ey, wx, wy, arm_r, build.skin);
        switch (appearance.sleeve_length) {
            case SleeveLength::kNone:
                break;
            case SleeveLength::kShort:
                r.capsule(sx, sy, sx + 0.5 * (ex - sx), sy + 0.5 * (ey - sy), arm_r + 0.3 * u, top);
                break;
            case SleeveLength::kMedium:
                r.capsule(sx, sy, ex, ey, arm_r + 0.3 * u, top);
                break;
            case SleeveLength::kLong:
                r.capsule(sx, sy, ex, ey, arm_r + 0.3 * u, top);
                r.capsule(ex, ey, wx, wy, arm_r + 0.3 * u, top);
                break;
        }
        r.circle(wx, wy, 3.0 * u, build.skin);
    };
    draw_arm(-1.0, pose.arm_left, pose.elbow_left);
    draw_arm(1.0, pose.arm_right, pose.elbow_right);

    auto draw_leg = [&](double side, double angle, double shin_angle) {
        const double hx = cx + side * hip_x, hy = hip_y;
        const double kx = hx + side * std::sin(angle) * thigh, ky = hy + std::cos(angle) * thigh;
        const double ax = kx + side * std::sin(shin_angle) * shin, ay = ky + std::cos(shin_angle) * shin;
        r.capsule(hx, hy, kx, ky, leg_r, build.skin);
        r.capsule(kx, ky, ax, ay, leg_r, build.skin);
        switch (appearance.garment_length) {
            case GarmentLength::kShort:
                r.capsule(hx, hy, hx + 0.4 * (kx - hx), hy + 0.4 * (ky - hy), leg_r + 0.4 * u, bottom);
                break;
            case GarmentLength::kMedium:
                r.capsule(hx, hy, kx, ky, leg_r + 0.4 * u, bottom);
                break;
            case GarmentLength::kLong:
                r.capsule(hx, hy, kx, ky, leg_r + 0.4 * u, bottom);
                r.capsule(kx, ky, ax, ay, leg_r + 0.4 * u, bottom);
                break;
        }
        r.rect(ax - 3.0 * u, ay, ax + 3.0 * u, ay + foot + 0.5 * u, kShoes);
    };
    draw_leg(-1.0, pose.leg_left, shin_angle_l);
    draw_leg(1.0, pose.leg_right, shin_angle_r);

    r.rect(cx - 0.92 * half_w, waist_y, cx + 0.92 * half_w, hip_y + 1.0 * u, bottom);
    r.rect(cx - half_w, shoulder_y, cx + half_w, waist_y, top);
    r.rect(cx - 1.8 * u, neck_top - 1.0 * u, cx + 1.8 * u, shoulder_y + 0.5 * u, build.skin);
    r.circle(cx, head_cy, head_r, build.skin);
    r.circle_cap(cx, head_cy, head_r + 0.5 * u, head_cy - 2.0 * u, build.hair);

    return r.to_frame();
}

VideoClip generate_clip(const AppearanceSpec& appearance, const MotionSpec& motion, std::uint64_t rng_seed,
                        const Canvas& canvas) {
    appearance.validate();
    motion.validate();
    std::mt19937_64 rng(rng_seed);
    const bool mirror = (rng() & 1ULL) != 0;

    VideoClip clip;
    clip.appearance = appearance;
    clip.motion = motion;
    const int n = motion.duration_frames;
    clip.frames.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double phase = static_cast<double>(i) / static_cast<double>(n - 1);
        clip.frames.push_back(render_frame(appearance, phase, motion, canvas, mirror));
    }
    auto texts = text_from_spec(appearance, motion);
    clip.appearance_text = std::move(texts.appearance_text);
    clip.motion_text = std::move(texts.motion_text);
    return clip;
}

std::string motion_text(Motion m) {
    switch (m) {
        case Motion::kStand: return "she stands still";
        case Motion::kMoveRight: return "she moves to the right";
        case Motion::kMoveLeft: return "she moves to the left";
        case Motion::kTurnAround: return "she turns around";
        case Motion::kRaiseArms: return "she raises her arms";
        case Motion::kWave: return "she waves her hand";
        case Motion::kSquat: return "she squats down";
        case Motion::kJump: return "she jumps up";
    }
    throw std::invalid_argument("MotionSpec.label out of range");
}

std::string appearance_text(const AppearanceSpec& appearance) {
    std::ostringstream os;
    os << "a person wearing a " << sleeve_name(appearance.sleeve_length) << "-sleeve "
       << nearest_color_name(appearance.top_color).name << " top and " << garment_name(appearance.garment_length)
       << " " << nearest_color_name(appearance.bottom_color).name << " bottom";
    return os.str();
}

ClipTexts text_from_spec(const AppearanceSpec& appearance, const MotionSpec& motion) {
    appearance.validate();
    motion.validate();
    return {appearance_text(appearance), motion_text(motion.label)};
}

std::vector<std::string> template_vocabulary() {
    std::set<std::string> words;
    auto add_words = [&](const std::string& text) {
        std::string word;
        for (char ch : text + " ") {
            if (std::isalnum(static_cast<unsigned char>(ch))) {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            } else if (!word.empty()) {
                words.insert(word);
                word.clear();
            }
        }
    };
    for (Motion m : kAllMotions) add_words(motion_text(m));
    for (auto sleeve : {SleeveLength::kNone, SleeveLength::kShort, SleeveLength::kMedium, SleeveLength::kLong}) {
        for (auto garment : {GarmentLength::kShort, GarmentLength::kMedium, GarmentLength::kLong}) {
            for (const auto& top : garment_palette()) {
                for (const auto& bottom : garment_palette()) {
                    AppearanceSpec spec;
                    spec.sleeve_length = sleeve;
                    spec.garment_length = garment;
                    spec.top_color = top.unit();
                    spec.bottom_color = bottom.unit();
                    add_words(appearance_text(spec));
                }
            }
        }
    }
    return {words.begin(), words.end()};
}

std::vector<int> normalized_indices(int length, int n) {
    if (n < 2) throw std::invalid_argument("normalize_clip: n must be >= 2");
    if (length < 2) throw std::invalid_argument("normalize_clip: clip must have >= 2 frames");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        idx[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(i) * (length - 1) / static_cast<double>(n - 1)));
    }
    return idx;
}

VideoClip normalize_clip(const VideoClip& clip, int n) {
    const auto idx = normalized_indices(static_cast<int>(clip.frames.size()), n);
    VideoClip out = clip;
    out.frames.clear();
    for (int i : idx) out.frames.push_back(clip.frames[static_cast<std::size_t>(i)]);
    out.motion.duration_frames = n;
    return out;
}

AppearanceSpec random_appearance(std::mt19937_64& rng) {
    const auto& palette = garment_palette();
    std::uniform_int_distribution<std::size_t> color(0, palette.size() - 1);
    std::uniform_int_distribution<int> sleeve(0, 3);
    std::uniform_int_distribution<int> garment(0, 2);
    AppearanceSpec spec;
    spec.top_color = palette[color(rng)].unit();
    spec.bottom_color = palette[color(rng)].unit();
    spec.sleeve_length = static_cast<SleeveLength>(sleeve(rng));
    spec.garment_length = static_cast<GarmentLength>(garment(rng));
    spec.figure_id = rng() % 100000;
    return spec;
}

std::vector<const ClipRecord*> DatasetManifest::split(Split s) const {
    std::vector<const ClipRecord*> out;
    for (const auto& c : clips) {
        if (c.split == s) out.push_back(&c);
    }
    return out;
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& c : clips) {
        if (!ids.insert(c.id).second) throw FormatError("manifest: duplicate clip id " + c.id);
        if (std::find(motion_classes.begin(), motion_classes.end(), motion_name(c.motion.label)) ==
            motion_classes.end()) {
            throw FormatError("manifest: clip " + c.id + " uses a motion outside the class set");
        }
        if (static_cast<int>(c.frame_paths.size()) != c.motion.duration_frames) {
            throw FormatError("manifest: clip " + c.id + " frame count does not match duration");
        }
        for (const auto& f : c.frame_paths) {
            if (!std::filesystem::exists(root / f)) throw FormatError("manifest: missing frame " + (root / f).string());
        }
    }
}

DatasetManifest make_dataset(const DataConfig& config, const std::filesystem::path& out_dir) {
    if (config.n_clips < 1) throw ConfigError("data.n_clips must be >= 1");
    std::vector<Motion> classes;
    for (const auto& name : config.motion_classes) {
        auto m = motion_from_name(name);
        if (!m) throw ConfigError("unknown motion class '" + name + "'");
        classes.push_back(*m);
    }
    if (classes.empty()) throw ConfigError("data.motion_classes is empty");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "clips", ec);
    if (ec) throw std::runtime_error("cannot create dataset directory " + (out_dir / "clips").string() + ": " + ec.message());

    std::mt19937_64 rng(config.seed);
    const int n = config.n_clips;

    // Stratified class assignment: round-robin, then shuffled.
    std::vector<Motion> labels;
    for (int i = 0; i < n; ++i) labels.push_back(classes[static_cast<std::size_t>(i) % classes.size()]);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = static_cast<int>(std::lround(config.split * n));

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.height = config.height;
    manifest.width = config.width;
    manifest.master_seed = config.seed;
    manifest.motion_classes = config.motion_classes;
    manifest.clips.resize(static_cast<std::size_t>(n));

    std::uniform_int_distribution<int> duration(config.min_frames, config.max_frames);
    for (int i = 0; i < n; ++i) {
        auto& rec = manifest.clips[static_cast<std::size_t>(i)];
        char id[32];
        std::snprintf(id, sizeof(id), "clip_%04d", i);
        rec.id = id;
        rec.appearance = random_appearance(rng);
        rec.motion = {labels[static_cast<std::size_t>(i)], duration(rng)};
        rec.seed = rng();
        auto texts = text_from_spec(rec.appearance, rec.motion);
        rec.appearance_text = texts.appearance_text;
        rec.motion_text = texts.motion_text;
        for (int f = 0; f < rec.motion.duration_frames; ++f) {
            char name[64];
            std::snprintf(name, sizeof(name), "clips/%s/frame_%03d.png", id, f);
            rec.frame_paths.emplace_back(name);
        }
    }
    for (int i = 0; i < n; ++i) {
        manifest.clips[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].split =
            i < n_train ? Split::kTrain : Split::kHeldOut;
    }

    // Each clip is a pure function of its record; render in parallel.
    const Canvas canvas{config.height, config.width};
    const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
    std::vector<std::string> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < manifest.clips.size(); i += workers) {
                        const auto& rec = manifest.clips[i];
                        auto clip = generate_clip(rec.appearance, rec.motion, rec.seed, canvas);
                        std::filesystem::create_directories(out_dir / "clips" / rec.id);
                        for (std::size_t f = 0; f < clip.frames.size(); ++f) {
                            write_png(out_dir / rec.frame_paths[f], clip.frames[f]);
                        }
                    }
                } catch (const std::exception& e) {
                    errors[w] = e.what();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw std::runtime_error("make_dataset: " + e);
    }
    write_manifest(manifest);
    return manifest;
}

void write_manifest(const DatasetManifest& m) {
    const auto path = m.root / "manifest.txt";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << "# t2p synthetic performer manifest\n";
    out << "version = 1\n";
    out << "height = " << m.height << "\n";
    out << "width = " << m.width << "\n";
    out << "master_seed = " << m.master_seed << "\n";
    out << "motion_classes = ";
    for (std::size_t i = 0; i < m.motion_classes.size(); ++i) out << (i ? "," : "") << m.motion_classes[i];
    out << "\nclips = " << m.clips.size() << "\n";
    for (const auto& c : m.clips) {
        out << "\n[" << c.id << "]\n";
        out << "split = " << (c.split == Split::kTrain ? "train" : "held_out") << "\n";
        out << "motion = " << motion_name(c.motion.label) << "\n";
        out << "duration = " << c.motion.duration_frames << "\n";
        out << "seed = " << c.seed << "\n";
        out << "top_color = " << format_rgb(c.appearance.top_color) << "\n";
        out << "bottom_color = " << format_rgb(c.appearance.bottom_color) << "\n";
        out << "sleeve = " << static_cast<int>(c.appearance.sleeve_length) << "\n";
        out << "garment = " << static_cast<int>(c.appearance.garment_length) << "\n";
        out << "figure_id = " << c.appearance.figure_id << "\n";
        out << "appearance_text = " << c.appearance_text << "\n";
        out << "motion_text = " << c.motion_text << "\n";
        out << "frames = ";
        for (std::size_t i = 0; i < c.frame_paths.size(); ++i) out << (i ? "," : "") << c.frame_paths[i];
        out << "\n";
    }
    if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
    const auto path = root / "manifest.txt";
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path.string());

    DatasetManifest m;
    m.root = root;
    ClipRecord* cur = nullptr;
    std::string line;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    auto split_csv = [](const std::string& s, char sep) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, sep)) {
            if (!item.empty()) out.push_back(item);
        }
        return out;
    };
    auto parse_rgb = [&](const std::string& v) {
        Rgb c{};
        std::istringstream is(v);
        is >> c[0] >> c[1] >> c[2];
        if (!is) throw FormatError("manifest: bad color '" + v + "'");
        return c;
    };
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            m.clips.emplace_back();
            cur = &m.clips.back();
            cur->id = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("manifest: malformed line '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (cur == nullptr) {
                if (key == "height") m.height = std::stoi(value);
                else if (key == "width") m.width = std::stoi(value);
                else if (key == "master_seed") m.master_seed = std::stoull(value);
                else if (key == "motion_classes") m.motion_classes = split_csv(value, ',');
                continue;
            }
            if (key == "split") {
                if (value == "train") cur->split = Split::kTrain;
                else if (value == "held_out") cur->split = Split::kHeldOut;
                else throw FormatError("manifest: unknown split '" + value + "'");
            } else if (key == "motion") {
                auto mo = motion_from_name(value);
                if (!mo) throw FormatError("manifest: unknown motion '" + value + "'");
                cur->motion.label = *mo;
            } else if (key == "duration") {
                cur->motion.duration_frames = std::stoi(value);
            } else if (key == "seed") {
                cur->seed = std::stoull(value);
            } else if (key == "top_color") {
                cur->appearance.top_color = parse_rgb(value);
            } else if (key == "bottom_color") {
                cur->appearance.bottom_color = parse_rgb(value);
            } else if (key == "sleeve") {
                cur->appearance.sleeve_length = static_cast<SleeveLength>(std::stoi(value));
            } else if (key == "garment") {
                cur->appearance.garment_length = static_cast<GarmentLength>(std::stoi(value));
            } else if (key == "figure_id") {
                cur->appearance.figure_id = std::stoull(value);
            } else if (key == "appearance_text") {
                cur->appearance_text = value;
            } else if (key == "motion_text") {
                cur->motion_text = value;
            } else if (key == "frames") {
                cur->frame_paths = split_csv(value, ',');
            }
        } catch (const std::invalid_argument&) {
            throw FormatError("manifest: bad value for '" + key + "': " + value);
        } catch (const std::out_of_range&) {
            throw FormatError("manifest: value out of range for '" + key + "': " + value);
        }
    }
    m.validate();
    return m;
}

VideoClip load_clip(const DatasetManifest& manifest, const ClipRecord& record) {
    VideoClip clip;
    clip.appearance = record.appearance;
    clip.motion = record.motion;
    clip.appearance_text = record.appearance_text;
    clip.motion_text = record.motion_text;
    for (const auto& f : record.frame_paths) clip.frames.push_back(read_png(manifest.root / f));
    return clip;
}

std::string manifest_hash(const std::filesystem::path& root) {
    std::ifstream in(root / "manifest.txt", std::ios::binary);
    if (!in) throw FormatError("cannot open manifest under " + root.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char ch;
    while (in.get(ch)) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace t2p
