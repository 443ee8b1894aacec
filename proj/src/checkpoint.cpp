#include "t2p/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "t2p/errors.hpp"

namespace t2p {

namespace {

constexpr char kMagic[8] = {'T', '2', 'P', 'C', 'K', 'P', 'T', '\0'};

std::uint8_t dtype_code(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat: return 1;
        case torch::kDouble: return 2;
        case torch::kInt64: return 3;
        case torch::kBool: return 4;
        case torch::kUInt8: return 5;
        default: throw std::invalid_argument(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
    }
}

torch::ScalarType dtype_from_code(std::uint8_t code) {
    switch (code) {
        case 1: return torch::kFloat;
        case 2: return torch::kDouble;
        case 3: return torch::kInt64;
        case 4: return torch::kBool;
        case 5: return torch::kUInt8;
        default: throw FormatError("checkpoint: unknown dtype code " + std::to_string(code));
    }
}

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    template <typename T>
    T get() {
        T v;
        read(&v, sizeof(T));
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint64_t>();
        if (n > (1ULL << 32)) throw FormatError("checkpoint: implausible string length");
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

    void read(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("checkpoint: truncated file");
    }

private:
    std::istream& in_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        os.write(kMagic, sizeof(kMagic));
        put<std::uint32_t>(os, kCheckpointVersion);
        put_string(os, bundle.stage);
        put_string(os, bundle.config_echo);
        put_string(os, bundle.rng_state);
        put<std::uint64_t>(os, bundle.arrays.size());
        for (const auto& [name, tensor] : bundle.arrays) {
            auto t = tensor.detach().cpu().contiguous();
            put_string(os, name);
            put<std::uint8_t>(os, dtype_code(t.scalar_type()));
            put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
            for (auto d : t.sizes()) put<std::int64_t>(os, d);
            const auto bytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
            put<std::uint64_t>(os, bytes);
            os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
        }
        if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    Reader r(in);
    char magic[8];
    r.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + " is not a checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    CheckpointBundle b;
    b.stage = r.get_string();
    b.config_echo = r.get_string();
    b.rng_state = r.get_string();
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name = r.get_string();
        const auto dtype = dtype_from_code(r.get<std::uint8_t>());
        const auto ndim = r.get<std::uint32_t>();
        if (ndim > 16) throw FormatError("checkpoint: implausible rank for " + name);
        std::vector<int64_t> dims(ndim);
        for (auto& d : dims) d = r.get<std::int64_t>();
        const auto bytes = r.get<std::uint64_t>();
        auto t = torch::empty(dims, dtype);
        if (bytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
            throw FormatError("checkpoint: byte count mismatch for " + name);
        }
        r.read(t.data_ptr(), bytes);
        b.arrays.emplace(std::move(name), std::move(t));
    }
    return b;
}

void export_module(const torch::nn::Module& module, const std::string& prefix,
                   std::map<std::string, torch::Tensor>& out) {
    for (const auto& p : module.named_parameters()) out[prefix + "." + p.key()] = p.value().detach().clone();
    for (const auto& b : module.named_buffers()) out[prefix + "." + b.key()] = b.value().detach().clone();
}

void import_module(torch::nn::Module& module, const std::string& prefix,
                   const std::map<std::string, torch::Tensor>& arrays) {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        const auto it = arrays.find(prefix + "." + key);
        if (it == arrays.end()) throw FormatError("checkpoint lacks array " + prefix + "." + key);
        if (!it->second.sizes().equals(dst.sizes()) || it->second.scalar_type() != dst.scalar_type()) {
            throw FormatError("checkpoint array " + prefix + "." + key + " has shape " +
                              c10::str(it->second.sizes()) + ", expected " + c10::str(dst.sizes()));
        }
        dst.copy_(it->second);
    };
    for (auto& p : module.named_parameters()) assign(p.key(), p.value());
    for (auto& b : module.named_buffers()) assign(b.key(), b.value());
}

void export_adam(torch::optim::Adam& optimizer, const std::string& prefix,
                 std::map<std::string, torch::Tensor>& out) {
    int64_t index = 0;
    for (auto& group : optimizer.param_groups()) {
        for (auto& p : group.params()) {
            const auto it = optimizer.state().find(p.unsafeGetTensorImpl());
            if (it != optimizer.state().end()) {
                auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
                const auto key = prefix + "." + std::to_string(index);
                out[key + ".step"] = torch::tensor({s.step()}, torch::kInt64);
                out[key + ".exp_avg"] = s.exp_avg().clone();
                out[key + ".exp_avg_sq"] = s.exp_avg_sq().clone();
            }
            ++index;
        }
    }
}

void import_adam(torch::optim::Adam& optimizer, const std::string& prefix,
                 const std::map<std::string, torch::Tensor>& arrays) {
    int64_t index = 0;
    for (auto& group : optimizer.param_groups()) {
        for (auto& p : group.params()) {
            const auto key = prefix + "." + std::to_string(index++);
            const auto step = arrays.find(key + ".step");
            if (step == arrays.end()) continue;
            const auto& avg = arrays.at(key + ".exp_avg");
            const auto& sq = arrays.at(key + ".exp_avg_sq");
            if (!avg.sizes().equals(p.sizes()) || !sq.sizes().equals(p.sizes())) {
                throw FormatError("optimizer state " + key + " does not match its parameter");
            }
            auto state = std::make_unique<torch::optim::AdamParamState>();
            state->step(step->second.item<int64_t>());
            state->exp_avg(avg.clone());
            state->exp_avg_sq(sq.clone());
            optimizer.state()[p.unsafeGetTensorImpl()] = std::move(state);
        }
    }
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw FormatError("checkpoint: malformed rng state");
}

}  // namespace t2p
