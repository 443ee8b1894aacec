// Acceptance run: one PASS/FAIL line per criterion. Tolerances are pinned
// below and must not be edited to make a run pass.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "t2p/diffuser.hpp"
#include "t2p/masking.hpp"
#include "t2p/pipeline.hpp"
#include "t2p/quantizer.hpp"

using namespace t2p;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ------------------------------------------------------
constexpr int kQuantizeCases = 1000;
constexpr double kQuantizeSeconds = 60;
constexpr double kGradRelError = 1e-4;
constexpr double kGradSeconds = 300;
constexpr int kMaskDraws = 100000;
constexpr double kMaskSigmas = 3.0;
constexpr double kPaperMaskAll = 0.375;
constexpr double kPaperInterp = 0.2;
constexpr int kScheduleMaxFrames = 16;
constexpr int kScheduleMaxCells = 8;
constexpr int kInterpCases = 100;
constexpr int kLossWindows = 5;
// Held-out reconstruction L1 on [-1, 1] frames. On the default dataset a
// background-only prediction scores 0.179 and copying frame 0 scores 0.106; the
// default run reached 0.043. Frozen below half the copy baseline so that the
// pose branch has to carry the motion.
constexpr double kReconL1Threshold = 0.05;
constexpr double kTrainingHours = 4.0;
constexpr double kMotionAccuracy = 0.75;
constexpr double kClassifierGate = 0.95;
constexpr int kGeneratedClips = 64;
constexpr double kDriftFactor = 2.0;
constexpr int kNoveltyFrames = 16;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::map<int, Outcome> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    g_results[id] = {pass, detail};
    std::cout << "criterion " << id << " " << (pass ? "PASS" : "FAIL") << "  " << name << ": " << detail << std::endl;
}

void info(const std::string& line) { std::cout << "  info  " << line << std::endl; }

// ---- 1: nearest-entry lookup against a scalar scan ---------------------------

int64_t brute_nearest(const torch::Tensor& v, const torch::Tensor& table) {
    const auto vd = v.to(torch::kFloat64).contiguous();
    const auto td = table.to(torch::kFloat64).contiguous();
    const double* pv = vd.data_ptr<double>();
    const double* pt = td.data_ptr<double>();
    const int64_t k = td.size(0), d = td.size(1);
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < k; ++i) {
        double s = 0;
        for (int64_t j = 0; j < d; ++j) s += (pv[j] - pt[i * d + j]) * (pv[j] - pt[i * d + j]);
        if (s < best_d) {
            best_d = s;
            best = i;
        }
    }
    return best;
}

void criterion_quantize() {
    const auto t0 = Clock::now();
    torch::manual_seed(101);
    std::mt19937_64 rng(101);
    const auto vocab = Vocabulary::from_templates();
    TextConfig text{8, 16, true};
    DiffuserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.layers = 1;
    dcfg.heads = 2;
    int q_ok = 0, r_ok = 0;
    for (int c = 0; c < kQuantizeCases; ++c) {
        const int64_t k = std::uniform_int_distribution<int64_t>(1, 64)(rng);
        const int64_t d = std::uniform_int_distribution<int64_t>(1, 16)(rng);
        const int h = std::uniform_int_distribution<int>(1, 3)(rng);
        const int w = std::uniform_int_distribution<int>(1, 3)(rng);
        Codebook cb(k, d);
        {
            torch::NoGradGuard guard;
            cb->entries().copy_(torch::randn({k, d}));
        }
        // Mix fresh vectors with near-copies of entries to exercise close calls.
        auto grid = torch::randn({h, w, d});
        if (c % 3 == 0) {
            grid = cb->entries().detach().index_select(0, torch::randint(0, k, {h * w}, torch::kInt64)).reshape({h, w, d}) +
                   1e-4 * torch::randn({h, w, d});
        }
        const auto rows = grid.reshape({-1, d});
        torch::NoGradGuard guard;
        const auto q = cb->quantize(grid);
        bool same = true;
        for (int64_t i = 0; i < rows.size(0); ++i) {
            const auto best = brute_nearest(rows[i], cb->entries());
            same = same && q.indices.reshape({-1})[i].item<int64_t>() == best &&
                   torch::equal(q.quantized.reshape({-1, d})[i], cb->entries()[best]);
        }
        q_ok += same;

        MotionDiffuser m(vocab.size(), text, dcfg, h, w, d, k);
        m->attach_codebook(cb);
        const auto r = m->retrieve(grid.unsqueeze(0)).reshape({-1, d});
        bool rsame = true;
        for (int64_t i = 0; i < rows.size(0); ++i) {
            rsame = rsame && torch::equal(r[i], cb->entries()[brute_nearest(rows[i], cb->entries())]);
        }
        r_ok += rsame;
    }
    const double secs = seconds_since(t0);
    report(1, "quantize/retrieve vs brute force",
           q_ok == kQuantizeCases && r_ok == kQuantizeCases && secs <= kQuantizeSeconds,
           "quantize " + std::to_string(q_ok) + "/" + std::to_string(kQuantizeCases) + ", retrieve " +
               std::to_string(r_ok) + "/" + std::to_string(kQuantizeCases) + " exact, " + fmt(secs, 3) + " s (limit " +
               fmt(kQuantizeSeconds) + " s)");
}

// ---- 2: double-precision gradient checks -------------------------------------

void criterion_gradients() {
    const auto t0 = Clock::now();
    double worst = 0;
    int checked = 0;
    bool nonzero = true;

    {  // VQ-VAE decoder and encoders, quantizer bypassed
        torch::manual_seed(201);
        const auto cfg = testing::gradcheck_config();
        DecomposedVqvae model(cfg.data, cfg.vqvae);
        model->to(torch::kFloat64);
        const auto a_in = torch::rand({2, 3, 16, 8}, torch::kFloat64) * 2 - 1;
        const auto p_in = torch::rand({2, 3, 16, 8}, torch::kFloat64) * 2 - 1;
        const auto weights = torch::randn({2, 3, 16, 8}, torch::kFloat64);
        auto loss = [&] { return (model->forward(a_in, p_in, QuantMode::kBypass).recon * weights).sum(); };
        std::vector<torch::Tensor> params;
        for (auto& p : model->named_parameters()) {
            if (p.key().find("codebook") == std::string::npos) params.push_back(p.value());
        }
        const auto check = testing::gradient_check(loss, params);
        info("decoder path relative error " + fmt(check.relative_error) + " over " + std::to_string(check.checked) +
             " entries");
        worst = std::max(worst, check.relative_error);
        checked += check.checked;
        nonzero = nonzero && check.analytic_norm > 0;
    }
    {  // diffuser transformer with the embedding-L1 and commitment terms
        torch::manual_seed(202);
        const auto vocab = Vocabulary::from_templates();
        TextConfig text{8, 16, true};
        DiffuserConfig dcfg;
        dcfg.d_model = 16;
        dcfg.layers = 1;
        dcfg.heads = 2;
        dcfg.n_frames = 4;
        MotionDiffuser m(vocab.size(), text, dcfg, 2, 1, 3, 5);
        m->to(torch::kFloat64);
        const auto ids = vocab.tokenize_tensor("she turns around", 8).unsqueeze(0);
        const auto ex = torch::randn({1, 2, 1, 3}, torch::kFloat64);
        const auto truth = torch::randn({1, 4, 2, 1, 3}, torch::kFloat64);
        const auto q = torch::randn({1, 4, 2, 1, 3}, torch::kFloat64);
        auto mask = torch::zeros({1, 4, 2}, torch::kBool);
        mask[0][1] = true;
        mask[0][3][0] = true;
        auto loss = [&] {
            const auto pred = m->forward(ids, ex, m->mask_sequence(truth, mask));
            const auto l = diffuser_loss(pred, q, truth, mask, {}, {});
            return l.components[0] + l.components[2];
        };
        const auto check = testing::gradient_check(loss, m->parameters(), 1e-5, 6);
        info("transformer + emb-L1 relative error " + fmt(check.relative_error) + " over " +
             std::to_string(check.checked) + " entries");
        worst = std::max(worst, check.relative_error);
        checked += check.checked;
        nonzero = nonzero && check.analytic_norm > 0;
    }
    bool identity = true;
    {  // straight-through: incoming gradient reaches the encoder output unchanged
        torch::manual_seed(203);
        for (int trial = 0; trial < 20; ++trial) {
            Codebook cb(7, 5);
            const auto f = torch::randn({3, 2, 5}, torch::kFloat64).requires_grad_(true);
            cb->to(torch::kFloat64);
            torch::Tensor quantized;
            {
                torch::NoGradGuard guard;
                quantized = cb->quantize(f.detach()).quantized;
            }
            const auto st = straight_through(f, quantized);
            const auto upstream = torch::randn_like(f);
            st.backward(upstream);
            identity = identity && torch::equal(f.grad(), upstream) && torch::equal(st.detach(), quantized);
        }
    }
    const double secs = seconds_since(t0);
    report(2, "double-precision gradient check",
           worst <= kGradRelError && nonzero && identity && secs <= kGradSeconds,
           "worst relative error " + fmt(worst) + " (limit " + fmt(kGradRelError) + ") over " +
               std::to_string(checked) + " entries; straight-through identity " + (identity ? "exact" : "VIOLATED") +
               "; " + fmt(secs, 3) + " s");
}

// ---- 3: training mask statistics ----------------------------------------------

void criterion_masking() {
    DiffuserConfig cfg;
    std::mt19937_64 rng(301);
    const int n = cfg.n_frames, cells = 2;
    DiffuserClip clip;
    clip.motion_text = "she jumps up";
    clip.poses = torch::zeros({12, 2, 1, 4});
    clip.frames = torch::zeros({12, 3, 4, 2});
    clip.appearance = torch::zeros({2, 1, 4});
    for (int i = 0; i < n; ++i) clip.normalized.push_back(i);

    int interp = 0, generation = 0, all_masked = 0, violations = 0;
    for (int i = 0; i < kMaskDraws; ++i) {
        const auto ex = make_diffuser_example(clip, cfg, rng);
        const auto& m = ex.mask;
        if (m.mode == MaskMode::kInterpolation) {
            ++interp;
            continue;
        }
        ++generation;
        if (m.all()) ++all_masked;
        // Both ends masked (even partially) must mean the whole clip is masked.
        if (m.frame_any(0) && m.frame_any(m.n - 1) && !m.all()) ++violations;
    }
    auto band = [](double p, int trials) { return kMaskSigmas * std::sqrt(p * (1 - p) / trials); };
    const double f_all = static_cast<double>(all_masked) / generation;
    const double f_interp = static_cast<double>(interp) / kMaskDraws;
    const bool all_ok = std::abs(f_all - kPaperMaskAll) <= band(kPaperMaskAll, generation);
    const bool interp_ok = std::abs(f_interp - kPaperInterp) <= band(kPaperInterp, kMaskDraws);
    const bool config_ok = cfg.p_mask_all == kPaperMaskAll && cfg.p_interp == kPaperInterp;
    report(3, "masking statistics", all_ok && interp_ok && violations == 0 && config_ok,
           "all-masked " + fmt(f_all, 5) + " (0.375 +/- " + fmt(band(kPaperMaskAll, generation), 3) +
               "), interpolation " + fmt(f_interp, 5) + " (0.2 +/- " + fmt(band(kPaperInterp, kMaskDraws), 3) +
               "), both-ends violations " + std::to_string(violations) + " in " + std::to_string(kMaskDraws) +
               " draws");
}

// ---- 4: sampling schedule ------------------------------------------------------

bool rows_in_codebook(const torch::Tensor& grid, const torch::Tensor& table) {
    const auto rows = grid.reshape({-1, table.size(1)});
    for (int64_t i = 0; i < rows.size(0); ++i) {
        if (!(rows[i].unsqueeze(0) == table).all(1).any().item<bool>()) return false;
    }
    return true;
}

void criterion_schedule() {
    torch::manual_seed(401);
    const auto vocab = Vocabulary::from_templates();
    TextConfig text{8, 16, true};
    DiffuserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.layers = 1;
    dcfg.heads = 2;
    dcfg.n_frames = kScheduleMaxFrames;
    int partitions = 0, total = 0, sampled_ok = 0;
    const int end_steps = dcfg.end_steps;
    for (int cells = 1; cells <= kScheduleMaxCells; ++cells) {
        MotionDiffuser m(vocab.size(), text, dcfg, cells, 1, 4, 9);
        Codebook cb(9, 4);
        {
            torch::NoGradGuard guard;
            cb->entries().copy_(torch::randn({9, 4}));
        }
        m->attach_codebook(cb);
        m->add_trained_steps(1);
        m->eval();
        for (int n = 2; n <= kScheduleMaxFrames; ++n) {
            ++total;
            const auto schedule = build_sampling_schedule(n, cells, end_steps, static_cast<std::uint64_t>(n * 31 + cells));
            partitions += schedule.partitions(MaskState::filled(n, cells, true, MaskMode::kGeneration));
            int last = -1;
            const auto seq = m->sample(vocab, "she waves her hand", torch::randn({cells, 1, 4}), schedule,
                                       static_cast<std::uint64_t>(n),
                                       [&](std::size_t, const torch::Tensor&, const MaskState& mask) { last = mask.count(); });
            sampled_ok += last == 0 && rows_in_codebook(seq, cb->entries());
        }
    }
    report(4, "sampling schedule", partitions == total && sampled_ok == total,
           "partitions " + std::to_string(partitions) + "/" + std::to_string(total) + ", sequences ending unmasked and codebook-valued " +
               std::to_string(sampled_ok) + "/" + std::to_string(total));
}

// ---- 5: interpolation endpoints ------------------------------------------------

void criterion_interpolation() {
    torch::manual_seed(501);
    std::mt19937_64 rng(501);
    const auto vocab = Vocabulary::from_templates();
    TextConfig text{8, 16, true};
    DiffuserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.layers = 1;
    dcfg.heads = 2;
    MotionDiffuser m(vocab.size(), text, dcfg, 2, 1, 4, 12);
    Codebook cb(12, 4);
    {
        torch::NoGradGuard guard;
        cb->entries().copy_(torch::randn({12, 4}));
    }
    m->attach_codebook(cb);
    m->add_trained_steps(1);
    m->eval();
    int ok = 0;
    for (int c = 0; c < kInterpCases; ++c) {
        const int n = std::uniform_int_distribution<int>(2, dcfg.n_frames)(rng);
        const auto first = torch::randn({2, 1, 4});
        const auto last = torch::randn({2, 1, 4});
        const auto out = m->interpolate(vocab, first, last, n, rng());
        ok += out.size(0) == n && torch::equal(out[0], first) && torch::equal(out[n - 1], last);
    }
    report(5, "interpolation endpoints", ok == kInterpCases,
           std::to_string(ok) + "/" + std::to_string(kInterpCases) + " cases bit-equal at both ends");
}

// ---- 6-10: desk-scale training and evaluation -----------------------------------

struct Variant {
    std::string name;
    RunConfig config;
    std::optional<MetricReport> report;
    double train_seconds = 0;
    std::string error;
};

RunConfig desk_config(const fs::path& work, const std::string& variant) {
    RunConfig c;
    c.out_dir = (work / variant).string();
    c.data.dir = (work / "dataset").string();
    if (variant == "unified_space") c.vqvae.unified_space = true;
    if (variant == "discrete_head") c.diffuser.discrete_head = true;
    if (variant == "no_codebook") c.diffuser.no_codebook = true;
    c.validate();
    return c;
}

// Windowed averages of a loss column, and whether each window beats the previous one.
bool windowed_decrease(const std::vector<double>& values, std::string& text) {
    if (static_cast<int>(values.size()) < kLossWindows) {
        text = "too few rows";
        return false;
    }
    std::vector<double> means;
    for (int w = 0; w < kLossWindows; ++w) {
        const std::size_t lo = values.size() * static_cast<std::size_t>(w) / kLossWindows;
        const std::size_t hi = values.size() * static_cast<std::size_t>(w + 1) / kLossWindows;
        double s = 0;
        for (std::size_t i = lo; i < hi; ++i) s += values[i];
        means.push_back(s / static_cast<double>(hi - lo));
    }
    bool ok = true;
    text.clear();
    for (std::size_t i = 0; i < means.size(); ++i) {
        text += (i ? " > " : "") + fmt(means[i]);
        if (i > 0 && !(means[i] < means[i - 1])) ok = false;
    }
    return ok;
}

void copy_stage(const RunConfig& from, const RunConfig& to, const std::string& stage) {
    fs::create_directories(to.stage_dir(stage));
    for (const auto& e : fs::directory_iterator(from.stage_dir(stage))) {
        if (e.is_regular_file()) {
            fs::copy_file(e.path(), to.stage_dir(stage) / e.path().filename(), fs::copy_options::overwrite_existing);
        }
    }
}

// Returns true when any stage had to be trained.
bool train_variant(Variant& v, const RunConfig* shared_upstream, bool fresh, std::ostream& log) {
    const auto t0 = Clock::now();
    bool trained = false;
    Pipeline p(v.config, &log);
    if (!p.dataset_current()) p.make_dataset();
    if (shared_upstream && (fresh || !p.stage_current(kStageVqvae) || !p.stage_current(kStageExemplar))) {
        copy_stage(*shared_upstream, v.config, kStageVqvae);
        copy_stage(*shared_upstream, v.config, kStageExemplar);
    }
    if (fresh || !p.stage_current(kStageVqvae)) {
        p.train_vqvae();
        trained = true;
    }
    if (fresh || !p.stage_current(kStageExemplar)) {
        p.train_exemplar();
        trained = true;
    }
    if (fresh || !p.stage_current(kStageDiffuser)) {
        p.train_diffuser();
        trained = true;
    }
    v.train_seconds = seconds_since(t0);
    return trained;
}

double stage_seconds(const fs::path& dir) {
    std::ifstream in(dir / "train_seconds.txt");
    double s = 0;
    in >> s;
    return s;
}

void run_desk(const fs::path& work, bool fresh, bool ablations) {
    fs::create_directories(work);
    std::ofstream log(work / "acceptance.log", std::ios::app);
    std::map<std::string, Variant> variants;
    for (const char* name : {"full", "unified_space", "discrete_head", "no_codebook"}) {
        variants[name] = Variant{name, desk_config(work, name), std::nullopt, 0, ""};
    }

    // Training wall time is recorded beside each run so a resumed acceptance
    // run still reports what training cost.
    auto train = [&](Variant& v, const RunConfig* upstream) {
        try {
            const auto marker = fs::path(v.config.out_dir) / "train_seconds.txt";
            if (train_variant(v, upstream, fresh, log) || !fs::exists(marker)) {
                std::ofstream(marker) << v.train_seconds << "\n";
            }
            v.train_seconds = stage_seconds(v.config.out_dir);
        } catch (const std::exception& e) {
            v.error = e.what();
        }
    };
    auto evaluate = [&](Variant& v) {
        if (!v.error.empty()) return;
        try {
            Pipeline p(v.config, &log);
            v.report = p.evaluate();
        } catch (const std::exception& e) {
            v.error = e.what();
        }
    };

    auto& full = variants["full"];
    train(full, nullptr);
    evaluate(full);

    // ---- 6
    {
        bool ok = full.error.empty();
        std::string detail;
        if (!ok) {
            detail = "training failed: " + full.error;
        } else {
            const fs::path out = full.config.out_dir;
            for (const char* stage : {kStageVqvae, kStageExemplar, kStageDiffuser}) {
                std::string text;
                const bool dec = windowed_decrease(read_metric_column(out / stage / "metrics.tsv", "total"), text);
                info(std::string(stage) + " windowed total loss " + text + (dec ? "" : "  (not decreasing)"));
                ok = ok && dec;
            }
            Pipeline p(full.config);
            const double recon = p.heldout_recon_l1();
            const double hours = full.train_seconds / 3600.0;
            ok = ok && recon < kReconL1Threshold && hours <= kTrainingHours;
            detail = "held-out recon L1 " + fmt(recon) + " (threshold " + fmt(kReconL1Threshold) + "), training " +
                     fmt(hours, 3) + " h (limit " + fmt(kTrainingHours) + " h), windowed losses " +
                     (ok ? "decreasing" : "see info lines");
        }
        report(6, "end-to-end desk training", ok, detail);
    }

    // ---- 7
    if (full.report) {
        const auto& r = *full.report;
        const bool ok = r.classifier_heldout_accuracy >= kClassifierGate && r.motion_accuracy >= kMotionAccuracy &&
                        static_cast<int>(r.clips.size()) == kGeneratedClips;
        report(7, "motion accuracy", ok,
               fmt(r.motion_accuracy) + " on " + std::to_string(r.clips.size()) + " generated clips (need " +
                   fmt(kMotionAccuracy) + "), classifier held-out " + fmt(r.classifier_heldout_accuracy) + " (gate " +
                   fmt(kClassifierGate) + ")");
    } else {
        report(7, "motion accuracy", false, "evaluation failed: " + full.error);
    }

    // ---- 8
    if (full.report) {
        const auto& r = *full.report;
        bool single = true;
        {
            Pipeline p(full.config);
            for (int i = 0; i < 4; ++i) {
                const auto g = p.generate_video("a person wearing a short-sleeve red top and long blue bottom",
                                                {"she turns around", "she moves to the left"}, 900 + i);
                single = single && g.single_appearance() && !g.appearance_ptrs.empty();
            }
        }
        const bool drift_ok = r.identity_drift && *r.identity_drift <= kDriftFactor * r.gt_drift_floor;
        report(8, "identity preservation", drift_ok && single,
               "drift " + (r.identity_drift ? fmt(*r.identity_drift) : std::string("undefined")) + " vs " +
                   fmt(kDriftFactor) + " x ground-truth floor " + fmt(r.gt_drift_floor) +
                   "; single appearance grid per clip " + (single ? "asserted" : "VIOLATED"));
    } else {
        report(8, "identity preservation", false, "evaluation failed: " + full.error);
    }

    // ---- 9
    if (ablations) {
        auto& unified = variants["unified_space"];
        auto& discrete = variants["discrete_head"];
        auto& raw = variants["no_codebook"];
        train(unified, nullptr);
        evaluate(unified);
        if (full.error.empty()) {
            train(discrete, &full.config);
            evaluate(discrete);
            train(raw, &full.config);
            evaluate(raw);
        }
        bool ok = full.report.has_value();
        std::ostringstream detail;
        auto drift = [](const Variant& v) { return v.report && v.report->identity_drift ? *v.report->identity_drift : NAN; };
        if (unified.report && full.report) {
            const bool b = drift(unified) > drift(full);
            ok = ok && b;
            detail << "unified drift " << fmt(drift(unified)) << (b ? " > " : " !> ") << fmt(drift(full));
        } else {
            ok = false;
            detail << "unified failed: " << unified.error;
        }
        if (discrete.report && full.report) {
            const bool b = discrete.report->motion_accuracy < full.report->motion_accuracy;
            ok = ok && b;
            detail << "; discrete accuracy " << fmt(discrete.report->motion_accuracy) << (b ? " < " : " !< ")
                   << fmt(full.report->motion_accuracy);
        } else {
            ok = false;
            detail << "; discrete failed: " << discrete.error;
        }
        if (raw.report && full.report) {
            const bool b = raw.report->feature_frechet > full.report->feature_frechet;
            ok = ok && b;
            detail << "; no_codebook Frechet " << fmt(raw.report->feature_frechet) << (b ? " > " : " !> ")
                   << fmt(full.report->feature_frechet);
        } else {
            ok = false;
            detail << "; no_codebook failed: " << raw.error;
        }
        for (const auto& [name, v] : variants) {
            if (!v.report) continue;
            const auto& r = *v.report;
            info(name + ": drift " + (r.identity_drift ? fmt(*r.identity_drift) : std::string("undefined")) +
                 ", accuracy " + fmt(r.motion_accuracy) + ", Frechet " + fmt(r.feature_frechet) +
                 (r.frechet_regularized ? " (regularized)" : "") + ", exemplar colour fidelity " +
                 (r.exemplar_color_fidelity ? fmt(*r.exemplar_color_fidelity) : std::string("undefined")));
        }
        report(9, "ablations", ok, detail.str());
    }

    // ---- 10
    if (full.report) {
        const auto& top = full.report->novelty_top1;
        double smallest = std::numeric_limits<double>::infinity();
        for (double d : top) smallest = std::min(smallest, d);
        const auto grid = fs::path(full.config.stage_dir("eval")) / "nn_grid.png";
        const bool ok = static_cast<int>(top.size()) == kNoveltyFrames && smallest > 0 && fs::exists(grid);
        report(10, "novelty", ok,
               std::to_string(top.size()) + " generated frames, smallest top-1 distance " + fmt(smallest) +
                   ", inspection grid " + grid.string());
    } else {
        report(10, "novelty", false, "evaluation failed: " + full.error);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = "acceptance_run";
    bool fresh = false;
    std::vector<int> only;
    app.add_option("--work-dir", work, "where desk-scale runs are kept and reused");
    app.add_flag("--fresh", fresh, "retrain every stage even when a current checkpoint exists");
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    torch::set_num_threads(1);
    const std::vector<std::pair<int, std::function<void()>>> unit{
        {1, criterion_quantize}, {2, criterion_gradients}, {3, criterion_masking},
        {4, criterion_schedule}, {5, criterion_interpolation},
    };
    for (const auto& [id, fn] : unit) {
        if (!wanted(id)) continue;
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, "exception", false, e.what());
        }
    }
    bool desk = false;
    for (int id = 6; id <= 10; ++id) desk = desk || wanted(id);
    if (desk) {
        try {
            run_desk(work, fresh, wanted(9));
        } catch (const std::exception& e) {
            std::cout << "desk-scale run aborted: " << e.what() << std::endl;
            for (int id = 6; id <= 10; ++id) {
                if (!g_results.count(id)) report(id, "aborted", false, e.what());
            }
        }
    }
    int failed = 0;
    for (const auto& [id, r] : g_results) failed += !r.pass;
    std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : std::string("acceptance: all criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}
