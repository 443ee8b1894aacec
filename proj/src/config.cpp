#include "t2p/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <variant>

#include "t2p/dataset.hpp"
#include "t2p/errors.hpp"

namespace t2p {
namespace {

using FieldRef = std::variant<int*, double*, bool*, std::uint64_t*, std::string*, std::vector<int>*,
                              std::vector<std::string>*>;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

// Every configurable field, in echo order.
template <class Config, class Fn>
void visit_fields(Config& c, Fn&& fn) {
    fn("run.seed", FieldRef{&c.seed});
    fn("run.out_dir", FieldRef{&c.out_dir});

    fn("data.dir", FieldRef{&c.data.dir});
    fn("data.n_clips", FieldRef{&c.data.n_clips});
    fn("data.height", FieldRef{&c.data.height});
    fn("data.width", FieldRef{&c.data.width});
    fn("data.motion_classes", FieldRef{&c.data.motion_classes});
    fn("data.min_frames", FieldRef{&c.data.min_frames});
    fn("data.max_frames", FieldRef{&c.data.max_frames});
    fn("data.split", FieldRef{&c.data.split});
    fn("data.seed", FieldRef{&c.data.seed});

    fn("vqvae.channels", FieldRef{&c.vqvae.channels});
    fn("vqvae.trunk_down", FieldRef{&c.vqvae.trunk_down});
    fn("vqvae.pose_down", FieldRef{&c.vqvae.pose_down});
    fn("vqvae.d_a", FieldRef{&c.vqvae.d_a});
    fn("vqvae.d_p", FieldRef{&c.vqvae.d_p});
    fn("vqvae.k_a", FieldRef{&c.vqvae.k_a});
    fn("vqvae.k_p", FieldRef{&c.vqvae.k_p});
    fn("vqvae.unified_space", FieldRef{&c.vqvae.unified_space});
    fn("vqvae.same_res", FieldRef{&c.vqvae.same_res});
    fn("vqvae.steps", FieldRef{&c.vqvae.steps});
    fn("vqvae.batch", FieldRef{&c.vqvae.batch});
    fn("vqvae.lr", FieldRef{&c.vqvae.lr});
    fn("vqvae.beta", FieldRef{&c.vqvae.beta});
    fn("vqvae.reinit_threshold", FieldRef{&c.vqvae.reinit_threshold});
    fn("vqvae.log_every", FieldRef{&c.vqvae.log_every});

    fn("aug.brightness", FieldRef{&c.aug.brightness});
    fn("aug.contrast", FieldRef{&c.aug.contrast});
    fn("aug.saturation", FieldRef{&c.aug.saturation});
    fn("aug.blur_min", FieldRef{&c.aug.blur_min});
    fn("aug.blur_max", FieldRef{&c.aug.blur_max});

    fn("text.max_len", FieldRef{&c.text.max_len});
    fn("text.dim", FieldRef{&c.text.dim});
    fn("text.attention_block", FieldRef{&c.text.attention_block});

    fn("exemplar.d_model", FieldRef{&c.exemplar.d_model});
    fn("exemplar.layers", FieldRef{&c.exemplar.layers});
    fn("exemplar.heads", FieldRef{&c.exemplar.heads});
    fn("exemplar.steps", FieldRef{&c.exemplar.steps});
    fn("exemplar.batch", FieldRef{&c.exemplar.batch});
    fn("exemplar.lr", FieldRef{&c.exemplar.lr});
    fn("exemplar.sample_steps", FieldRef{&c.exemplar.sample_steps});
    fn("exemplar.temperature", FieldRef{&c.exemplar.temperature});
    fn("exemplar.log_every", FieldRef{&c.exemplar.log_every});

    fn("diffuser.d_model", FieldRef{&c.diffuser.d_model});
    fn("diffuser.layers", FieldRef{&c.diffuser.layers});
    fn("diffuser.heads", FieldRef{&c.diffuser.heads});
    fn("diffuser.steps", FieldRef{&c.diffuser.steps});
    fn("diffuser.batch", FieldRef{&c.diffuser.batch});
    fn("diffuser.lr", FieldRef{&c.diffuser.lr});
    fn("diffuser.n_frames", FieldRef{&c.diffuser.n_frames});
    fn("diffuser.p_mask_all", FieldRef{&c.diffuser.p_mask_all});
    fn("diffuser.p_interp", FieldRef{&c.diffuser.p_interp});
    fn("diffuser.end_steps", FieldRef{&c.diffuser.end_steps});
    fn("diffuser.rec_frames", FieldRef{&c.diffuser.rec_frames});
    fn("diffuser.discrete_head", FieldRef{&c.diffuser.discrete_head});
    fn("diffuser.no_codebook", FieldRef{&c.diffuser.no_codebook});
    fn("diffuser.temperature", FieldRef{&c.diffuser.temperature});
    fn("diffuser.log_every", FieldRef{&c.diffuser.log_every});

    fn("eval.n_generated", FieldRef{&c.eval.n_generated});
    fn("eval.classifier_steps", FieldRef{&c.eval.classifier_steps});
    fn("eval.gate", FieldRef{&c.eval.gate});
    fn("eval.nn_queries", FieldRef{&c.eval.nn_queries});
    fn("eval.seed", FieldRef{&c.eval.seed});
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* first = value.data();
    const auto* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) {
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
}

void assign(const std::string& key, FieldRef ref, const std::string& raw) {
    const std::string value = trim(raw);
    std::visit(
        [&](auto* field) {
            using T = std::remove_pointer_t<decltype(field)>;
            if constexpr (std::is_same_v<T, int>) {
                *field = parse_number<int>(key, value);
            } else if constexpr (std::is_same_v<T, double>) {
                *field = parse_number<double>(key, value);
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                *field = parse_number<std::uint64_t>(key, value);
            } else if constexpr (std::is_same_v<T, bool>) {
                *field = parse_bool(key, value);
            } else if constexpr (std::is_same_v<T, std::string>) {
                *field = value;
            } else if constexpr (std::is_same_v<T, std::vector<int>>) {
                std::vector<int> out;
                for (const auto& item : split_list(value)) out.push_back(parse_number<int>(key, item));
                *field = std::move(out);
            } else {
                *field = split_list(value);
            }
        },
        ref);
}

std::string render(FieldRef ref) {
    return std::visit(
        [](auto* field) -> std::string {
            using T = std::remove_pointer_t<decltype(field)>;
            if constexpr (std::is_same_v<T, bool>) {
                return *field ? "true" : "false";
            } else if constexpr (std::is_same_v<T, double>) {
                char buf[64];
                auto res = std::to_chars(buf, buf + sizeof(buf), *field);
                return std::string(buf, res.ptr);
            } else if constexpr (std::is_same_v<T, std::string>) {
                return *field;
            } else if constexpr (std::is_same_v<T, std::vector<int>> ||
                                 std::is_same_v<T, std::vector<std::string>>) {
                std::ostringstream os;
                for (std::size_t i = 0; i < field->size(); ++i) os << (i ? "," : "") << (*field)[i];
                return os.str();
            } else {
                return std::to_string(*field);
            }
        },
        ref);
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    bool found = false;
    visit_fields(*this, [&](const char* name, FieldRef ref) {
        if (key == name) {
            assign(key, ref, value);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::apply_env(const char* const* environ_vars) {
    if (environ_vars == nullptr) return;
    constexpr std::string_view prefix = "T2P_";
    for (auto* it = environ_vars; *it != nullptr; ++it) {
        std::string_view entry(*it);
        if (!entry.starts_with(prefix)) continue;
        const auto eq = entry.find('=');
        if (eq == std::string_view::npos) continue;
        std::string name(entry.substr(prefix.size(), eq - prefix.size()));
        const auto sep = name.find("__");
        if (sep == std::string::npos) continue;
        std::string key = name.substr(0, sep) + "." + name.substr(sep + 2);
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
        set(key, std::string(entry.substr(eq + 1)));
    }
}

std::string RunConfig::get(const std::string& key) const {
    std::string out;
    bool found = false;
    auto& self = const_cast<RunConfig&>(*this);
    visit_fields(self, [&](const char* name, FieldRef ref) {
        if (key == name) {
            out = render(ref);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
    return out;
}

std::vector<std::string> RunConfig::keys() const {
    std::vector<std::string> out;
    auto& self = const_cast<RunConfig&>(*this);
    visit_fields(self, [&](const char* name, FieldRef) { out.emplace_back(name); });
    return out;
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    auto& self = const_cast<RunConfig&>(*this);
    visit_fields(self, [&](const char* name, FieldRef ref) { os << name << " = " << render(ref) << "\n"; });
    return os.str();
}

void RunConfig::validate() const {
    require(data.n_clips >= 1, "data.n_clips must be >= 1");
    require(data.split > 0.0 && data.split <= 1.0, "data.split must lie in (0, 1]");
    require(data.min_frames >= 2, "data.min_frames must be >= 2");
    require(data.max_frames >= data.min_frames, "data.max_frames must be >= data.min_frames");
    require(data.motion_classes.size() >= 4 && data.motion_classes.size() <= 8,
            "data.motion_classes must list 4 to 8 classes");
    std::set<std::string> seen;
    for (const auto& name : data.motion_classes) {
        require(motion_from_name(name).has_value(), "data.motion_classes: unknown class '" + name + "'");
        require(seen.insert(name).second, "data.motion_classes: duplicate class '" + name + "'");
    }

    require(vqvae.trunk_down >= 1, "vqvae.trunk_down must be >= 1");
    require(vqvae.pose_down >= 1, "vqvae.pose_down must be >= 1");
    require(static_cast<int>(vqvae.channels.size()) == vqvae.trunk_down,
            "vqvae.channels must list one width per trunk downsample");
    for (int c : vqvae.channels) require(c >= 1, "vqvae.channels entries must be >= 1");
    const int pose_factor = 1 << (vqvae.trunk_down + (vqvae.same_res ? 0 : vqvae.pose_down));
    require(data.height >= 1 && data.width >= 1, "data.height/width must be positive");
    require(data.height % pose_factor == 0 && data.width % pose_factor == 0,
            "resolution " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                " must be divisible by " + std::to_string(pose_factor) + " (pose grid would be empty)");
    require(vqvae.d_a >= 1 && vqvae.d_p >= 1 && vqvae.k_a >= 1 && vqvae.k_p >= 1,
            "codebook sizes and dims must be >= 1");
    require(vqvae.steps >= 0 && vqvae.batch >= 1 && vqvae.lr > 0, "vqvae optimizer settings invalid");
    require(vqvae.beta >= 0, "vqvae.beta must be >= 0");
    require(vqvae.reinit_threshold >= 0, "vqvae.reinit_threshold must be >= 0");

    require(aug.brightness >= 0 && aug.contrast >= 0 && aug.saturation >= 0, "aug deltas must be >= 0");
    require(aug.blur_min >= 0 && aug.blur_max >= aug.blur_min, "aug blur range invalid");

    require(text.max_len >= 2 && text.dim >= 1, "text.max_len >= 2 and text.dim >= 1 required");

    require(exemplar.d_model % exemplar.heads == 0, "exemplar.d_model must be divisible by exemplar.heads");
    require(exemplar.sample_steps >= 1, "exemplar.sample_steps must be >= 1");
    require(exemplar.temperature > 0, "exemplar.temperature must be > 0");
    require(exemplar.batch >= 1 && exemplar.steps >= 0 && exemplar.lr > 0, "exemplar optimizer settings invalid");

    require(diffuser.d_model % diffuser.heads == 0, "diffuser.d_model must be divisible by diffuser.heads");
    require(diffuser.n_frames >= 2, "diffuser.n_frames must be >= 2");
    require(diffuser.p_mask_all >= 0 && diffuser.p_mask_all <= 1, "diffuser.p_mask_all must lie in [0, 1]");
    require(diffuser.p_interp >= 0 && diffuser.p_interp <= 1, "diffuser.p_interp must lie in [0, 1]");
    require(diffuser.end_steps >= 1, "diffuser.end_steps must be >= 1");
    require(diffuser.rec_frames >= 0, "diffuser.rec_frames must be >= 0");
    require(!(diffuser.discrete_head && diffuser.no_codebook),
            "diffuser.discrete_head and diffuser.no_codebook are mutually exclusive");
    require(diffuser.temperature > 0, "diffuser.temperature must be > 0");
    require(diffuser.batch >= 1 && diffuser.steps >= 0 && diffuser.lr > 0, "diffuser optimizer settings invalid");
    require(data.min_frames >= diffuser.n_frames,
            "data.min_frames must be >= diffuser.n_frames (interpolation windows use original clips)");

    require(eval.gate > 0 && eval.gate <= 1, "eval.gate must lie in (0, 1]");
    require(eval.n_generated >= 1 && eval.nn_queries >= 1, "eval counts must be >= 1");
}

std::filesystem::path RunConfig::dataset_dir() const {
    if (!data.dir.empty()) return data.dir;
    return std::filesystem::path(out_dir) / "dataset";
}

std::filesystem::path RunConfig::stage_dir(const std::string& stage) const {
    return std::filesystem::path(out_dir) / stage;
}

GridGeometry grid_geometry(const DataConfig& data, const VqvaeConfig& vq) {
    const int app_factor = 1 << vq.trunk_down;
    const int pose_factor = vq.same_res ? app_factor : app_factor << vq.pose_down;
    return {data.height / app_factor, data.width / app_factor, data.height / pose_factor,
            data.width / pose_factor};
}

}  // namespace t2p
