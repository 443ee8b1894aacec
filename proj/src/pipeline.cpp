#include "t2p/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "t2p/errors.hpp"
#include "t2p/image_io.hpp"
#include "t2p/masking.hpp"

namespace t2p {

namespace {

const std::vector<std::string>& stage_sections(const std::string& stage) {
    static const std::vector<std::string> vq{"run.seed", "data.", "vqvae.", "aug."};
    static const std::vector<std::string> ex{"run.seed", "data.", "vqvae.", "aug.", "text.", "exemplar."};
    static const std::vector<std::string> df{"run.seed", "data.", "vqvae.", "aug.", "text.", "diffuser."};
    static const std::vector<std::string> data{"data."};
    if (stage == kStageVqvae) return vq;
    if (stage == kStageExemplar) return ex;
    if (stage == kStageDiffuser) return df;
    if (stage == "dataset") return data;
    throw std::invalid_argument("unknown stage " + stage);
}

std::string fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string format_metric(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

std::vector<VideoClip> load_split(const DatasetManifest& manifest, Split split) {
    std::vector<VideoClip> clips;
    for (const auto* rec : manifest.split(split)) clips.push_back(load_clip(manifest, *rec));
    return clips;
}

}  // namespace

std::string stage_echo(const RunConfig& config, const std::string& stage) {
    const auto& prefixes = stage_sections(stage);
    std::string out;
    for (const auto& key : config.keys()) {
        if (key == "data.dir") continue;
        const bool wanted = std::any_of(prefixes.begin(), prefixes.end(),
                                        [&](const std::string& p) { return key.rfind(p, 0) == 0; });
        if (wanted) out += key + " = " + config.get(key) + "\n";
    }
    return out;
}

std::string variant_name(const RunConfig& config) {
    std::vector<std::string> parts;
    if (config.vqvae.unified_space) parts.emplace_back("unified_space");
    if (config.vqvae.same_res) parts.emplace_back("same_res");
    if (config.diffuser.discrete_head) parts.emplace_back("discrete_head");
    if (config.diffuser.no_codebook) parts.emplace_back("no_codebook");
    if (parts.empty()) return "full";
    std::string out = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
    return out;
}

MetricsLog::MetricsLog(const std::filesystem::path& path, std::vector<std::string> columns)
    : path_(path), columns_(std::move(columns)), sums_(columns_.size(), 0.0) {
    std::string header = "step";
    for (const auto& c : columns_) header += "\t" + c;
    write_text(path_, header + "\n");
}

void MetricsLog::add(const std::vector<double>& values) {
    if (values.size() != columns_.size()) throw std::invalid_argument("metrics row has the wrong width");
    for (std::size_t i = 0; i < values.size(); ++i) sums_[i] += values[i];
    ++count_;
}

void MetricsLog::flush_row(int step) {
    if (count_ == 0) return;
    std::ofstream out(path_, std::ios::app);
    out << step;
    for (auto& s : sums_) {
        out << "\t" << format_metric(s / count_);
        s = 0.0;
    }
    out << "\n";
    count_ = 0;
}

std::vector<double> read_metric_column(const std::filesystem::path& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) header.push_back(cell);
    }
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) throw std::invalid_argument("no column " + column + " in " + path.string());
    const auto index = static_cast<std::size_t>(it - header.begin());
    std::vector<double> values;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t i = 0; std::getline(ss, cell, '\t'); ++i) {
            if (i == index) values.push_back(std::stod(cell));
        }
    }
    return values;
}

bool GenerationResult::single_appearance() const {
    if (!appearance.defined() || appearance_ptrs.empty()) return false;
    return std::all_of(appearance_ptrs.begin(), appearance_ptrs.end(),
                       [&](const void* p) { return p == appearance.data_ptr(); });
}

Pipeline::Pipeline(RunConfig config, std::ostream* log)
    : config_(std::move(config)), log_(log), vocab_(Vocabulary::from_templates()) {
    config_.validate();
}

void Pipeline::say(const std::string& line) const {
    if (log_) *log_ << line << std::endl;
}

DatasetManifest Pipeline::make_dataset() {
    const auto dir = config_.dataset_dir();
    say("rendering " + std::to_string(config_.data.n_clips) + " clips into " + dir.string());
    auto manifest = t2p::make_dataset(config_.data, dir);
    write_text(dir / "config.txt", stage_echo(config_, "dataset"));
    return manifest;
}

bool Pipeline::dataset_current() const {
    const auto dir = config_.dataset_dir();
    std::ifstream in(dir / "config.txt");
    if (!in || !std::filesystem::exists(dir / "manifest.txt")) return false;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str() == stage_echo(config_, "dataset");
}

DatasetManifest Pipeline::require_dataset() const {
    const auto dir = config_.dataset_dir();
    if (!std::filesystem::exists(dir / "manifest.txt")) {
        throw StageOrderError("no dataset at " + dir.string() + "; run make-dataset first");
    }
    auto manifest = load_manifest(dir);
    if (manifest.height != config_.data.height || manifest.width != config_.data.width) {
        throw ConfigError("dataset at " + dir.string() + " has a different resolution than the config");
    }
    return manifest;
}

std::filesystem::path Pipeline::checkpoint_path(const std::string& stage) const {
    return config_.stage_dir(stage) / "checkpoint.t2p";
}

bool Pipeline::stage_current(const std::string& stage) const {
    const auto path = checkpoint_path(stage);
    if (!std::filesystem::exists(path)) return false;
    try {
        auto bundle = load_checkpoint(path);
        return bundle.stage == stage && stage_echo(RunConfig::parse(bundle.config_echo), stage) ==
                                            stage_echo(config_, stage);
    } catch (const std::exception&) {
        return false;
    }
}

CheckpointBundle Pipeline::require_checkpoint(const std::string& stage, const std::string& needed_by) const {
    const auto path = checkpoint_path(stage);
    if (!std::filesystem::exists(path)) {
        throw StageOrderError(needed_by + " needs a trained " + stage + " checkpoint at " + path.string() +
                              "; run train-" + stage + " first");
    }
    auto bundle = load_checkpoint(path);
    if (bundle.stage != stage) throw FormatError(path.string() + " holds stage '" + bundle.stage + "'");
    if (stage_echo(RunConfig::parse(bundle.config_echo), stage) != stage_echo(config_, stage)) {
        throw ConfigError("the " + stage + " checkpoint at " + path.string() +
                          " was trained with a different configuration");
    }
    return bundle;
}

torch::Tensor Pipeline::indices_of(Codebook& codebook, const torch::Tensor& grid) const {
    auto sizes = grid.sizes().vec();
    sizes.pop_back();
    return codebook->nearest_indices(grid.reshape({-1, codebook->dim()})).reshape(sizes);
}

VqvaeStageSummary Pipeline::train_vqvae() {
    const auto manifest = require_dataset();
    const auto& cfg = config_.vqvae;
    const auto dir = config_.stage_dir(kStageVqvae);
    std::filesystem::create_directories(dir);
    auto clips = load_split(manifest, Split::kTrain);
    if (clips.empty()) throw ConfigError("the dataset has no training clips");

    torch::manual_seed(config_.seed * 1000 + 1);
    DecomposedVqvae model(config_.data, cfg);
    VqvaeTrainer trainer(model, cfg, config_.aug, config_.seed * 1000 + 11);
    std::mt19937_64 rng(config_.seed * 1000 + 21);
    std::uniform_int_distribution<std::size_t> pick_clip(0, clips.size() - 1);
    MetricsLog metrics(dir / "metrics.tsv",
                       {"total", "recon_l1", "app_codebook", "app_commit", "pose_codebook", "pose_commit", "reinit_rows"});
    say("training vqvae (" + variant_name(config_) + ") for " + std::to_string(cfg.steps) + " steps");
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<FramePair> batch;
        for (int i = 0; i < cfg.batch; ++i) {
            const auto& clip = clips[pick_clip(rng)];
            std::uniform_int_distribution<std::size_t> pick_frame(0, clip.frames.size() - 1);
            batch.push_back({clip.frames.front(), clip.frames[pick_frame(rng)]});
        }
        const auto m = trainer.train_step(batch);
        metrics.add({m.total, m.recon_l1, m.app_codebook, m.app_commit, m.pose_codebook, m.pose_commit,
                     static_cast<double>(m.reinit_rows)});
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            metrics.flush_row(step);
            say("vqvae step " + std::to_string(step) + "/" + std::to_string(cfg.steps) +
                " total=" + format_metric(m.total) + " recon_l1=" + format_metric(m.recon_l1));
        }
    }

    CheckpointBundle bundle{kStageVqvae, config_.echo(), rng_to_string(rng), {}};
    export_module(*model, "model", bundle.arrays);
    export_adam(trainer.optimizer(), "adam", bundle.arrays);
    save_checkpoint(checkpoint_path(kStageVqvae), bundle);
    write_text(dir / "config.txt", config_.echo());
    vocab_.save(dir / "vocab.txt");
    vqvae_ = nullptr;

    VqvaeStageSummary summary{heldout_recon_l1()};
    write_text(dir / "summary.txt", "heldout_recon_l1 = " + format_metric(summary.heldout_recon_l1) + "\n");
    say("vqvae held-out reconstruction L1 " + format_metric(summary.heldout_recon_l1));
    return summary;
}

DecomposedVqvae& Pipeline::vqvae() {
    if (!vqvae_) {
        auto bundle = require_checkpoint(kStageVqvae, "this command");
        DecomposedVqvae model(config_.data, config_.vqvae);
        import_module(*model, "model", bundle.arrays);
        model->eval();
        for (auto& p : model->parameters()) p.requires_grad_(false);
        vqvae_ = model;
    }
    return vqvae_;
}

double Pipeline::heldout_recon_l1() {
    const auto manifest = require_dataset();
    auto& model = vqvae();
    torch::NoGradGuard guard;
    double sum = 0;
    int64_t frames = 0;
    for (const auto& clip : load_split(manifest, Split::kHeldOut)) {
        auto target = torch::stack(clip.frames);
        auto first = clip.frames.front().unsqueeze(0).expand_as(target);
        auto out = model->forward(first, target);
        sum += (out.recon - target).abs().mean().item<double>() * target.size(0);
        frames += target.size(0);
    }
    if (frames == 0) throw ConfigError("the dataset has no held-out clips");
    return sum / static_cast<double>(frames);
}

void Pipeline::train_exemplar() {
    auto& vq = vqvae();
    const auto manifest = require_dataset();
    const auto& cfg = config_.exemplar;
    const auto dir = config_.stage_dir(kStageExemplar);
    std::filesystem::create_directories(dir);

    std::vector<ExemplarExample> examples;
    {
        torch::NoGradGuard guard;
        for (const auto* rec : manifest.split(Split::kTrain)) {
            auto clip = load_clip(manifest, *rec);
            auto first = clip.frames.front().unsqueeze(0);
            ExemplarExample ex;
            ex.text = rec->appearance_text;
            ex.appearance_indices = indices_of(vq->appearance_codebook, vq->encode_appearance(first))[0];
            if (!vq->unified()) ex.pose_indices = indices_of(vq->pose_codebook, vq->encode_pose(first))[0];
            examples.push_back(std::move(ex));
        }
    }
    if (examples.empty()) throw ConfigError("the dataset has no training clips");

    torch::manual_seed(config_.seed * 1000 + 2);
    const auto& g = vq->geometry();
    ExemplarSampler model(vocab_.size(), config_.text, cfg, g, config_.vqvae.k_a, config_.vqvae.k_p, !vq->unified());
    ExemplarTrainer trainer(model, vocab_, cfg, config_.seed * 1000 + 12);
    std::mt19937_64 rng(config_.seed * 1000 + 22);
    std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
    MetricsLog metrics(dir / "metrics.tsv", {"total", "app_ce", "pose_ce"});
    say("training exemplar sampler for " + std::to_string(cfg.steps) + " steps");
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<ExemplarExample> batch;
        for (int i = 0; i < cfg.batch; ++i) batch.push_back(examples[pick(rng)]);
        const auto m = trainer.train_step(batch);
        metrics.add({m.loss, m.app_ce, m.pose_ce});
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            metrics.flush_row(step);
            say("exemplar step " + std::to_string(step) + "/" + std::to_string(cfg.steps) +
                " loss=" + format_metric(m.loss));
        }
    }
    model->eval();
    CheckpointBundle bundle{kStageExemplar, config_.echo(), rng_to_string(rng), {}};
    export_module(*model, "model", bundle.arrays);
    export_adam(trainer.optimizer(), "adam", bundle.arrays);
    save_checkpoint(checkpoint_path(kStageExemplar), bundle);
    write_text(dir / "config.txt", config_.echo());
    vocab_.save(dir / "vocab.txt");
    exemplar_ = nullptr;
}

ExemplarSampler& Pipeline::exemplar() {
    if (!exemplar_) {
        auto& vq = vqvae();
        auto bundle = require_checkpoint(kStageExemplar, "this command");
        ExemplarSampler model(vocab_.size(), config_.text, config_.exemplar, vq->geometry(), config_.vqvae.k_a,
                              config_.vqvae.k_p, !vq->unified());
        import_module(*model, "model", bundle.arrays);
        model->eval();
        exemplar_ = model;
    }
    return exemplar_;
}

void Pipeline::train_diffuser() {
    auto& vq = vqvae();
    const auto manifest = require_dataset();
    const auto& cfg = config_.diffuser;
    const auto dir = config_.stage_dir(kStageDiffuser);
    std::filesystem::create_directories(dir);

    std::vector<DiffuserClip> clips;
    {
        torch::NoGradGuard guard;
        for (const auto* rec : manifest.split(Split::kTrain)) {
            auto clip = load_clip(manifest, *rec);
            DiffuserClip dc;
            dc.motion_text = rec->motion_text;
            dc.frames = torch::stack(clip.frames);
            auto app = vq->encode_appearance(dc.frames);
            auto& acb = vq->appearance_codebook;
            auto app_q = acb->lookup(indices_of(acb, app));
            dc.appearance = app_q[0].clone();
            if (vq->unified()) {
                dc.poses = app_q;
            } else {
                auto& pcb = vq->pose_codebook;
                dc.poses = pcb->lookup(indices_of(pcb, vq->encode_pose(dc.frames)));
            }
            dc.normalized = normalized_indices(static_cast<int>(clip.frames.size()), cfg.n_frames);
            clips.push_back(std::move(dc));
        }
    }
    if (clips.empty()) throw ConfigError("the dataset has no training clips");

    torch::manual_seed(config_.seed * 1000 + 3);
    MotionDiffuser model(vocab_.size(), config_.text, cfg, vq->motion_h(), vq->motion_w(), vq->motion_dim(),
                         vq->motion_codebook()->size());
    DiffuserTrainer trainer(model, vq, vocab_, cfg, config_.seed * 1000 + 13);
    std::vector<std::string> columns{"total"};
    for (const auto* name : kDiffuserLossNames) columns.emplace_back(name);
    columns.emplace_back("interp_fraction");
    MetricsLog metrics(dir / "metrics.tsv", columns);
    say("training diffuser (" + variant_name(config_) + ") for " + std::to_string(cfg.steps) + " steps");
    for (int step = 1; step <= cfg.steps; ++step) {
        const auto m = trainer.train_step(clips);
        std::vector<double> row{m.total};
        row.insert(row.end(), m.components.begin(), m.components.end());
        row.push_back(static_cast<double>(m.interpolation) / cfg.batch);
        metrics.add(row);
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            metrics.flush_row(step);
            say("diffuser step " + std::to_string(step) + "/" + std::to_string(cfg.steps) +
                " total=" + format_metric(m.total));
        }
    }
    model->eval();
    CheckpointBundle bundle{kStageDiffuser, config_.echo(), rng_to_string(trainer.rng()), {}};
    export_module(*model, "model", bundle.arrays);
    export_adam(trainer.optimizer(), "adam", bundle.arrays);
    save_checkpoint(checkpoint_path(kStageDiffuser), bundle);
    write_text(dir / "config.txt", config_.echo());
    vocab_.save(dir / "vocab.txt");
    diffuser_ = nullptr;
}

MotionDiffuser& Pipeline::diffuser() {
    if (!diffuser_) {
        auto& vq = vqvae();
        auto bundle = require_checkpoint(kStageDiffuser, "this command");
        MotionDiffuser model(vocab_.size(), config_.text, config_.diffuser, vq->motion_h(), vq->motion_w(),
                             vq->motion_dim(), vq->motion_codebook()->size());
        import_module(*model, "model", bundle.arrays);
        model->attach_codebook(vq->motion_codebook());
        model->eval();
        diffuser_ = model;
    }
    return diffuser_;
}

GenerationResult Pipeline::generate_video(const std::string& appearance_text,
                                          const std::vector<std::string>& motion_texts, std::uint64_t seed) {
    if (motion_texts.empty()) throw std::invalid_argument("generate needs at least one motion text");
    auto& vq = vqvae();
    auto& ex = exemplar();
    auto& df = diffuser();
    torch::NoGradGuard guard;
    const int n = config_.diffuser.n_frames;

    GenerationResult out;
    out.exemplar = ex->sample(vocab_, appearance_text, seed, config_.exemplar.sample_steps,
                              config_.exemplar.temperature);
    auto app_grid = vq->appearance_codebook->lookup(out.exemplar.appearance_indices);
    torch::Tensor pose = vq->unified() ? app_grid : vq->pose_codebook->lookup(out.exemplar.pose_indices);
    if (!vq->unified()) out.appearance = app_grid;

    std::vector<torch::Tensor> segments;
    for (std::size_t i = 0; i < motion_texts.size(); ++i) {
        const std::uint64_t seg_seed = seed * 1009 + i + 1;
        auto schedule = build_sampling_schedule(n, df->cells(), config_.diffuser.end_steps, seg_seed);
        auto seq = df->sample(vocab_, motion_texts[i], pose, schedule, seg_seed);
        segments.push_back(i == 0 ? seq : seq.narrow(0, 1, n - 1));
        pose = seq[n - 1].clone();
    }
    out.poses = torch::cat(segments, 0);

    std::vector<torch::Tensor> frames;
    constexpr int64_t kChunk = 16;
    for (int64_t start = 0; start < out.poses.size(0); start += kChunk) {
        auto chunk = out.poses.narrow(0, start, std::min(kChunk, out.poses.size(0) - start));
        if (vq->unified()) {
            frames.push_back(vq->decode(chunk, {}));
        } else {
            out.appearance_ptrs.push_back(out.appearance.data_ptr());
            frames.push_back(vq->render(out.appearance.unsqueeze(0), chunk));
        }
    }
    out.frames = torch::cat(frames, 0);
    return out;
}

torch::Tensor Pipeline::interpolate_frames(const torch::Tensor& first, const torch::Tensor& last, int n,
                                           std::uint64_t seed) {
    auto& vq = vqvae();
    auto& df = diffuser();
    torch::NoGradGuard guard;
    auto ends = torch::stack({first, last});
    auto& mcb = vq->motion_codebook();
    auto grids = vq->unified() ? vq->encode_appearance(ends) : vq->encode_pose(ends);
    grids = mcb->lookup(indices_of(mcb, grids));
    auto seq = df->interpolate(vocab_, grids[0], grids[1], n, seed);
    if (vq->unified()) return vq->decode(seq, {});
    auto& acb = vq->appearance_codebook;
    auto app = acb->lookup(indices_of(acb, vq->encode_appearance(first.unsqueeze(0))));
    return vq->render(app, seq);
}

void Pipeline::write_video(const std::filesystem::path& dir, const torch::Tensor& frames) {
    std::filesystem::create_directories(dir);
    std::vector<torch::Tensor> list;
    for (int64_t i = 0; i < frames.size(0); ++i) {
        std::ostringstream name;
        name << "frame_" << std::setw(3) << std::setfill('0') << i << ".png";
        write_png(dir / name.str(), frames[i]);
        list.push_back(frames[i]);
    }
    write_gif(dir / "animation.gif", list);
    write_png(dir / "strip.png", tile_frames(list, static_cast<int>(list.size())));
}

MetricReport Pipeline::evaluate() {
    const auto manifest = require_dataset();
    const auto& ecfg = config_.eval;
    const int n = config_.diffuser.n_frames;
    const auto dir = config_.stage_dir("eval");
    std::filesystem::create_directories(dir);
    const int classes = static_cast<int>(manifest.motion_classes.size());

    MetricReport report;
    report.variant = variant_name(config_);
    report.manifest_hash = manifest_hash(manifest.root);
    report.checkpoint_id = fnv1a_file(checkpoint_path(kStageDiffuser));
    diffuser();
    exemplar();

    say("training the motion classifier");
    const auto train = load_labeled_clips(manifest, Split::kTrain, n);
    const auto held = load_labeled_clips(manifest, Split::kHeldOut, n);
    ClassifierReport gate;
    auto classifier = train_motion_classifier(train, held, classes, ecfg.classifier_steps, ecfg.gate, ecfg.seed, &gate);
    report.classifier_heldout_accuracy = gate.heldout_accuracy;
    if (!gate.gate_passed) {
        throw std::runtime_error("motion classifier reached only " + format_metric(gate.heldout_accuracy) +
                                 " held-out accuracy (gate " + format_metric(ecfg.gate) +
                                 "); refusing to score generated clips");
    }

    auto all_real = torch::cat({train.clips, held.clips}, 0);
    {
        double sum = 0;
        int count = 0;
        for (int64_t i = 0; i < all_real.size(0); ++i) {
            if (auto d = identity_drift(all_real[i])) {
                sum += *d;
                ++count;
            }
        }
        report.gt_drift_floor = count ? sum / count : 0.0;
    }

    std::vector<const ClipRecord*> prompts = manifest.split(Split::kHeldOut);
    for (const auto* rec : manifest.split(Split::kTrain)) prompts.push_back(rec);

    say("generating " + std::to_string(ecfg.n_generated) + " clips");
    std::vector<torch::Tensor> generated;
    std::vector<int64_t> labels;
    double drift_sum = 0;
    int drift_count = 0;
    for (int i = 0; i < ecfg.n_generated; ++i) {
        const auto* rec = prompts[static_cast<std::size_t>(i) % prompts.size()];
        const int label = i % classes;
        const auto motion = motion_from_name(manifest.motion_classes[static_cast<std::size_t>(label)]);
        const auto text = motion_text(*motion);
        auto result = generate_video(rec->appearance_text, {text}, ecfg.seed * 7919 + static_cast<std::uint64_t>(i));
        if (!result.appearance_ptrs.empty() && !result.single_appearance()) {
            throw std::logic_error("generated frames were not decoded from a single appearance grid");
        }
        ClipRecordMetrics cm;
        cm.id = "gen_" + std::to_string(i);
        cm.appearance_text = rec->appearance_text;
        cm.motion_text = text;
        cm.label = label;
        cm.drift = identity_drift(result.frames);
        if (cm.drift) {
            drift_sum += *cm.drift;
            ++drift_count;
        }
        report.clips.push_back(cm);
        generated.push_back(result.frames);
        labels.push_back(label);
    }
    auto gen = torch::stack(generated);
    auto label_t = torch::tensor(labels, torch::kInt64);
    if (drift_count) report.identity_drift = drift_sum / drift_count;
    auto predicted = classifier->predict(gen);
    for (std::size_t i = 0; i < report.clips.size(); ++i) {
        report.clips[i].predicted = static_cast<int>(predicted[static_cast<int64_t>(i)].item<int64_t>());
    }
    report.motion_accuracy = motion_accuracy(classifier, gate, gen, label_t);
    const auto frechet = feature_frechet(classifier->clip_features(all_real), classifier->clip_features(gen));
    report.feature_frechet = frechet.value;
    report.frechet_regularized = frechet.regularized;

    {
        torch::NoGradGuard guard;
        auto& vq = vqvae();
        int hits = 0, total = 0;
        for (const auto* rec : manifest.split(Split::kHeldOut)) {
            auto sample = exemplar()->sample(vocab_, rec->appearance_text, ecfg.seed * 104729 + total,
                                             config_.exemplar.sample_steps, config_.exemplar.temperature);
            auto app = vq->appearance_codebook->lookup(sample.appearance_indices).unsqueeze(0);
            auto frame = vq->unified() ? vq->decode(app, {})
                                       : vq->decode(app, vq->pose_codebook->lookup(sample.pose_indices).unsqueeze(0));
            const auto reading = extract_colors(frame[0]);
            hits += reading.detected &&
                    nearest_color_name(reading.top).name == nearest_color_name(rec->appearance.top_color).name;
            ++total;
        }
        if (total) report.exemplar_color_fidelity = static_cast<double>(hits) / total;
    }

    say("nearest-neighbour novelty check");
    {
        const auto corpus = load_frame_corpus(manifest, Split::kTrain);
        std::vector<torch::Tensor> tiles;
        std::ofstream nn(dir / "nn.tsv", std::ios::trunc);
        nn << "query_clip\tquery_frame\trank\tclip\tframe\tdistance\n";
        for (int q = 0; q < ecfg.nn_queries; ++q) {
            const int64_t clip = q % gen.size(0);
            const int64_t frame = (q * 3) % gen.size(1);
            auto query = gen[clip][frame];
            const auto hits = nn_search(query, corpus, 2);
            report.novelty_top1.push_back(hits.front().distance);
            tiles.push_back(query);
            for (std::size_t r = 0; r < hits.size(); ++r) {
                nn << report.clips[static_cast<std::size_t>(clip)].id << "\t" << frame << "\t" << r + 1 << "\t"
                   << hits[r].clip_id << "\t" << hits[r].frame << "\t" << format_metric(hits[r].distance) << "\n";
                const auto it = std::find_if(corpus.refs.begin(), corpus.refs.end(), [&](const auto& ref) {
                    return ref.clip_id == hits[r].clip_id && ref.frame == hits[r].frame;
                });
                tiles.push_back(corpus.frames[it - corpus.refs.begin()]);
            }
        }
        write_png(dir / "nn_grid.png", tile_frames(tiles, 3));
    }

    for (int i = 0; i < std::min<int>(8, static_cast<int>(gen.size(0))); ++i) {
        write_video(dir / "samples" / report.clips[static_cast<std::size_t>(i)].id, gen[i]);
    }
    write_text(dir / "report.txt", report.to_text());
    write_text(dir / "config.txt", config_.echo());
    std::ostringstream summary;
    summary << "variant\tidentity_drift\tgt_drift_floor\tmotion_accuracy\tfeature_frechet\n"
            << report.variant << "\t" << (report.identity_drift ? format_metric(*report.identity_drift) : "undefined")
            << "\t" << format_metric(report.gt_drift_floor) << "\t" << format_metric(report.motion_accuracy) << "\t"
            << format_metric(report.feature_frechet) << "\n";
    write_text(dir / "summary.tsv", summary.str());
    return report;
}

}  // namespace t2p
