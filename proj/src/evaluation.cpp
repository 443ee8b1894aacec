#include "t2p/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace t2p {

namespace {

constexpr double kForegroundThreshold = 0.12;

double background_unit(int c) { return kBackground[static_cast<std::size_t>(c)] / 255.0; }

// Max-channel deviation from the background, [H, W], from a [-1, 1] frame.
torch::Tensor background_distance(const torch::Tensor& frame) {
    auto x = (frame.to(torch::kFloat) + 1.0) * 0.5;
    auto bg = torch::tensor({background_unit(0), background_unit(1), background_unit(2)}, torch::kFloat)
                  .view({3, 1, 1});
    return (x - bg).abs().amax(0);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

}  // namespace

ColorReading extract_colors(const Frame& frame) {
    if (frame.dim() != 3 || frame.size(0) != 3) {
        throw std::invalid_argument("extract_colors expects [3, H, W], got " + c10::str(frame.sizes()));
    }
    const int h = static_cast<int>(frame.size(1)), w = static_cast<int>(frame.size(2));
    auto fg_t = (background_distance(frame) > kForegroundThreshold).contiguous();
    auto x_t = ((frame.to(torch::kFloat) + 1.0) * 0.5).clamp(0.0, 1.0).contiguous();
    auto fg = fg_t.accessor<bool, 2>();
    auto x = x_t.accessor<float, 3>();

    std::vector<int> columns;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (fg[r][c]) columns.push_back(c);
        }
    }
    ColorReading out;
    if (columns.size() < 20) return out;
    std::nth_element(columns.begin(), columns.begin() + static_cast<std::ptrdiff_t>(columns.size() / 2), columns.end());
    const int cx = columns[columns.size() / 2];

    int top = -1;
    for (int r = 0; r < h && top < 0; ++r) {
        for (int c = std::max(0, cx - 2); c <= std::min(w - 1, cx + 2); ++c) {
            if (fg[r][c]) {
                top = r;
                break;
            }
        }
    }
    if (top < 0) return out;

    const double s = h / 128.0;
    const int half = std::max(1, static_cast<int>(std::lround(1.5 * s)));  // stays inside a profile-view torso
    auto band_mean = [&](double from, double to, Rgb& dst) {
        const int r0 = top + static_cast<int>(std::lround(from * s));
        const int r1 = top + static_cast<int>(std::lround(to * s));
        double acc[3] = {0, 0, 0};
        int count = 0;
        for (int r = std::max(0, r0); r < std::min(h, r1); ++r) {
            for (int c = std::max(0, cx - half); c <= std::min(w - 1, cx + half); ++c) {
                if (!fg[r][c]) continue;
                for (int k = 0; k < 3; ++k) acc[k] += x[k][r][c];
                ++count;
            }
        }
        if (count < 4) return false;
        for (int k = 0; k < 3; ++k) dst[static_cast<std::size_t>(k)] = acc[k] / count;
        return true;
    };
    out.detected = band_mean(19.0, 42.0, out.top) && band_mean(47.0, 51.0, out.bottom);
    return out;
}

std::optional<double> identity_drift(const torch::Tensor& frames) {
    if (frames.dim() != 4 || frames.size(0) < 1) {
        throw std::invalid_argument("identity_drift expects [n, 3, H, W], got " + c10::str(frames.sizes()));
    }
    const auto ref = extract_colors(frames[0]);
    if (!ref.detected) return std::nullopt;
    double total = 0;
    int count = 0;
    for (int64_t i = 0; i < frames.size(0); ++i) {
        const auto reading = i == 0 ? ref : extract_colors(frames[i]);
        if (!reading.detected) continue;
        double sq = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            sq += std::pow(reading.top[k] - ref.top[k], 2) + std::pow(reading.bottom[k] - ref.bottom[k], 2);
        }
        total += std::sqrt(sq);
        ++count;
    }
    return total / count;
}

torch::Tensor motion_input(const torch::Tensor& frames) {
    if (frames.dim() != 4 || frames.size(1) != 3) {
        throw std::invalid_argument("motion_input expects [n, 3, H, W], got " + c10::str(frames.sizes()));
    }
    auto x = (frames.to(torch::kFloat) + 1.0) * 0.5;
    auto bg = torch::tensor({background_unit(0), background_unit(1), background_unit(2)}, torch::kFloat)
                  .view({1, 3, 1, 1});
    auto soft = (((x - bg).abs().amax(1) - 0.5 * kForegroundThreshold) / kForegroundThreshold).clamp(0.0, 1.0);
    return torch::adaptive_avg_pool2d(soft, {32, 16}).reshape({-1});
}

MotionClassifierImpl::MotionClassifierImpl(int n_frames, int classes) : n_frames_(n_frames) {
    fc1 = register_module("fc1", torch::nn::Linear(n_frames * 32 * 16, 64));
    fc2 = register_module("fc2", torch::nn::Linear(64, kFeatureDim));
    out = register_module("out", torch::nn::Linear(kFeatureDim, classes));
}

torch::Tensor MotionClassifierImpl::features(const torch::Tensor& inputs) {
    return torch::tanh(fc2->forward(torch::relu(fc1->forward(inputs))));
}

torch::Tensor MotionClassifierImpl::forward(const torch::Tensor& inputs) { return out->forward(features(inputs)); }

namespace {

torch::Tensor clip_inputs(const torch::Tensor& clips, int n_frames) {
    if (clips.dim() != 5 || clips.size(1) != n_frames) {
        throw std::invalid_argument("classifier expects [B, " + std::to_string(n_frames) + ", 3, H, W], got " +
                                    c10::str(clips.sizes()));
    }
    std::vector<torch::Tensor> rows;
    for (int64_t i = 0; i < clips.size(0); ++i) rows.push_back(motion_input(clips[i]));
    return torch::stack(rows);
}

}  // namespace

torch::Tensor MotionClassifierImpl::predict(const torch::Tensor& clips) {
    torch::NoGradGuard guard;
    return forward(clip_inputs(clips, n_frames_)).argmax(-1);
}

torch::Tensor MotionClassifierImpl::clip_features(const torch::Tensor& clips) {
    torch::NoGradGuard guard;
    return features(clip_inputs(clips, n_frames_));
}

LabeledClips load_labeled_clips(const DatasetManifest& manifest, Split split, int n_frames) {
    std::vector<torch::Tensor> clips;
    std::vector<int64_t> labels;
    for (const auto* rec : manifest.split(split)) {
        auto clip = normalize_clip(load_clip(manifest, *rec), n_frames);
        clips.push_back(torch::stack(clip.frames));
        const auto name = std::string(motion_name(rec->motion.label));
        const auto it = std::find(manifest.motion_classes.begin(), manifest.motion_classes.end(), name);
        if (it == manifest.motion_classes.end()) throw std::invalid_argument("clip label outside motion classes");
        labels.push_back(it - manifest.motion_classes.begin());
    }
    if (clips.empty()) throw std::invalid_argument("split has no clips");
    return {torch::stack(clips), torch::tensor(labels, torch::kInt64)};
}

MotionClassifier train_motion_classifier(const LabeledClips& train, const LabeledClips& heldout, int classes,
                                         int steps, double gate, std::uint64_t seed, ClassifierReport* report) {
    torch::manual_seed(seed);
    const int n = static_cast<int>(train.clips.size(1));
    MotionClassifier model(n, classes);
    auto inputs = clip_inputs(train.clips, n);
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(1e-3).weight_decay(1e-4));
    std::mt19937_64 rng(seed);
    const auto total = inputs.size(0);
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    const int64_t batch = std::min<int64_t>(32, total);
    model->train();
    for (int step = 0; step < steps; ++step) {
        std::vector<int64_t> idx(static_cast<std::size_t>(batch));
        for (auto& i : idx) i = pick(rng);
        auto sel = torch::tensor(idx, torch::kInt64);
        auto loss = torch::nn::functional::cross_entropy(model->forward(inputs.index_select(0, sel)),
                                                         train.labels.index_select(0, sel));
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    model->eval();
    ClassifierReport r;
    r.train_accuracy = model->predict(train.clips).eq(train.labels).to(torch::kDouble).mean().item<double>();
    r.heldout_accuracy = model->predict(heldout.clips).eq(heldout.labels).to(torch::kDouble).mean().item<double>();
    r.gate_passed = r.heldout_accuracy >= gate;
    if (report) *report = r;
    return model;
}

double motion_accuracy(MotionClassifier& classifier, const ClassifierReport& gate, const torch::Tensor& clips,
                       const torch::Tensor& labels) {
    if (!gate.gate_passed) {
        throw std::logic_error("motion classifier failed its ground-truth gate (held-out accuracy " +
                               format_double(gate.heldout_accuracy) + ")");
    }
    return classifier->predict(clips).eq(labels).to(torch::kDouble).mean().item<double>();
}

namespace {

torch::Tensor psd_sqrt(const torch::Tensor& m) {
    auto [vals, vecs] = torch::linalg_eigh(m);
    return vecs.matmul(torch::diag(vals.clamp_min(0.0).sqrt())).matmul(vecs.transpose(0, 1));
}

}  // namespace

double frechet_from_stats(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                          const torch::Tensor& cov2) {
    auto m1 = mu1.to(torch::kDouble), m2 = mu2.to(torch::kDouble);
    auto c1 = cov1.to(torch::kDouble), c2 = cov2.to(torch::kDouble);
    auto s1 = psd_sqrt(c1);
    auto inner = s1.matmul(c2).matmul(s1);
    inner = 0.5 * (inner + inner.transpose(0, 1));
    const double cross = torch::linalg_eigvalsh(inner).clamp_min(0.0).sqrt().sum().item<double>();
    const double mean_term = (m1 - m2).pow(2).sum().item<double>();
    const double value = mean_term + c1.trace().item<double>() + c2.trace().item<double>() - 2.0 * cross;
    return std::max(0.0, value);
}

FrechetResult feature_frechet(const torch::Tensor& real, const torch::Tensor& generated, double eps) {
    if (real.dim() != 2 || generated.dim() != 2 || real.size(1) != generated.size(1) || real.size(0) < 2 ||
        generated.size(0) < 2) {
        throw std::invalid_argument("feature_frechet expects [N, F] sets with N >= 2, got " +
                                    c10::str(real.sizes()) + " and " + c10::str(generated.sizes()));
    }
    FrechetResult out;
    auto stats = [&](const torch::Tensor& x) {
        auto d = x.to(torch::kDouble);
        auto mu = d.mean(0);
        auto centered = d - mu;
        auto cov = centered.transpose(0, 1).matmul(centered) / static_cast<double>(d.size(0) - 1);
        if (torch::linalg_eigvalsh(cov).min().item<double>() < eps) {
            cov = cov + eps * torch::eye(cov.size(0), torch::kDouble);
            out.regularized = true;
        }
        return std::pair{mu, cov};
    };
    auto [mu1, c1] = stats(real);
    auto [mu2, c2] = stats(generated);
    out.value = frechet_from_stats(mu1, c1, mu2, c2);
    return out;
}

FrameCorpus load_frame_corpus(const DatasetManifest& manifest, std::optional<Split> split) {
    FrameCorpus corpus;
    std::vector<torch::Tensor> frames;
    for (const auto& rec : manifest.clips) {
        if (split && rec.split != *split) continue;
        auto clip = load_clip(manifest, rec);
        for (std::size_t i = 0; i < clip.frames.size(); ++i) {
            corpus.refs.push_back({rec.id, static_cast<int>(i)});
            frames.push_back(clip.frames[i]);
        }
    }
    if (frames.empty()) throw std::invalid_argument("frame corpus is empty");
    corpus.frames = torch::stack(frames);
    return corpus;
}

torch::Tensor pyramid_distances(const torch::Tensor& query, const torch::Tensor& corpus) {
    if (query.dim() != 3 || corpus.dim() != 4 || !query.sizes().equals(corpus.sizes().slice(1))) {
        throw std::invalid_argument("pyramid_distances: query " + c10::str(query.sizes()) + " vs corpus " +
                                    c10::str(corpus.sizes()));
    }
    const int64_t h = query.size(1), w = query.size(2);
    auto total = torch::zeros({corpus.size(0)}, torch::kDouble);
    auto q = query.to(torch::kDouble).unsqueeze(0);
    auto c = corpus.to(torch::kDouble);
    for (int level = 0; level < 3; ++level) {
        const std::vector<int64_t> size{std::max<int64_t>(1, h >> level), std::max<int64_t>(1, w >> level)};
        auto diff = (torch::adaptive_avg_pool2d(c, size) - torch::adaptive_avg_pool2d(q, size)).abs();
        total += diff.reshape({corpus.size(0), -1}).mean(1);
    }
    return total / 3.0;
}

std::vector<Neighbor> nn_search(const torch::Tensor& query, const FrameCorpus& corpus, std::size_t k) {
    torch::NoGradGuard guard;
    const int64_t n = corpus.frames.size(0);
    std::vector<double> dist(static_cast<std::size_t>(n));
    constexpr int64_t kChunk = 256;
    for (int64_t start = 0; start < n; start += kChunk) {
        const int64_t len = std::min(kChunk, n - start);
        auto d = pyramid_distances(query, corpus.frames.narrow(0, start, len)).contiguous();
        std::copy(d.data_ptr<double>(), d.data_ptr<double>() + len, dist.begin() + start);
    }
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        if (corpus.refs[a].clip_id != corpus.refs[b].clip_id) return corpus.refs[a].clip_id < corpus.refs[b].clip_id;
        return corpus.refs[a].frame < corpus.refs[b].frame;
    });
    order.resize(std::min(k, order.size()));
    std::vector<Neighbor> out;
    for (auto i : order) out.push_back({corpus.refs[i].clip_id, corpus.refs[i].frame, dist[i]});
    return out;
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "# evaluation report (desk-scale proxies: color-extractor drift, mask-MLP motion classifier, "
          "classifier-feature Frechet distance; not comparable to published FID/FVD/Face/ReID numbers)\n";
    os << "variant = " << variant << "\n";
    os << "checkpoint = " << checkpoint_id << "\n";
    os << "manifest_hash = " << manifest_hash << "\n";
    os << "identity_drift = " << (identity_drift ? format_double(*identity_drift) : "undefined") << "\n";
    os << "gt_drift_floor = " << format_double(gt_drift_floor) << "\n";
    os << "motion_accuracy = " << format_double(motion_accuracy) << "\n";
    os << "classifier_heldout_accuracy = " << format_double(classifier_heldout_accuracy) << "\n";
    os << "feature_frechet = " << format_double(feature_frechet) << "\n";
    os << "frechet_regularized = " << (frechet_regularized ? "true" : "false") << "\n";
    os << "exemplar_color_fidelity = "
       << (exemplar_color_fidelity ? format_double(*exemplar_color_fidelity) : "undefined") << "\n";
    if (!novelty_top1.empty()) {
        os << "novelty_min_top1 = " << format_double(*std::min_element(novelty_top1.begin(), novelty_top1.end()))
           << "\n";
    }
    os << "clips = " << clips.size() << "\n";
    os << "\n# id\tlabel\tpredicted\tdrift\tappearance_text\tmotion_text\n";
    for (const auto& c : clips) {
        os << c.id << "\t" << c.label << "\t" << c.predicted << "\t" << (c.drift ? format_double(*c.drift) : "undefined")
           << "\t" << c.appearance_text << "\t" << c.motion_text << "\n";
    }
    return os.str();
}

}  // namespace t2p
