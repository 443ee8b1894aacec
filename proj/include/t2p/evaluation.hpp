#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "t2p/config.hpp"
#include "t2p/dataset.hpp"

namespace t2p {

// Ground-truth-style color extraction from a rendered (or generated) frame.
struct ColorReading {
    bool detected = false;
    Rgb top{};     // mean torso color, [0, 1]
    Rgb bottom{};  // mean color of the band between waist and hips, [0, 1]
};

ColorReading extract_colors(const Frame& frame);

// Mean over all frames of the L2 distance between the frame's (top, bottom)
// colors and frame 0's; frames without a detectable figure are skipped.
// nullopt when frame 0 has no detectable figure. frames: [n, 3, H, W].
std::optional<double> identity_drift(const torch::Tensor& frames);

// Foreground masks of a clip, pooled and flattened: [n * 32 * 16] features.
torch::Tensor motion_input(const torch::Tensor& frames);

// Small MLP over stacked foreground masks; the penultimate layer doubles as
// the clip-level feature for the Frechet proxy.
class MotionClassifierImpl : public torch::nn::Module {
public:
    MotionClassifierImpl(int n_frames, int classes);

    torch::Tensor features(const torch::Tensor& inputs);  // [B, in] -> [B, 16]
    torch::Tensor forward(const torch::Tensor& inputs);   // [B, in] -> logits [B, classes]
    // frames [B, n, 3, H, W] -> predicted class indices [B]
    torch::Tensor predict(const torch::Tensor& clips);
    torch::Tensor clip_features(const torch::Tensor& clips);

    int n_frames() const { return n_frames_; }
    static constexpr int kFeatureDim = 16;

private:
    int n_frames_;
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, out{nullptr};
};
TORCH_MODULE(MotionClassifier);

struct LabeledClips {
    torch::Tensor clips;   // [N, n, 3, H, W]
    torch::Tensor labels;  // [N] class index into the manifest's motion_classes
};

// Normalized n-frame clips of one split.
LabeledClips load_labeled_clips(const DatasetManifest& manifest, Split split, int n_frames);

struct ClassifierReport {
    double train_accuracy = 0;
    double heldout_accuracy = 0;
    bool gate_passed = false;
};

MotionClassifier train_motion_classifier(const LabeledClips& train, const LabeledClips& heldout, int classes,
                                         int steps, double gate, std::uint64_t seed, ClassifierReport* report);

// Fraction of correct predictions. Throws std::logic_error if the classifier
// did not pass its sanity gate.
double motion_accuracy(MotionClassifier& classifier, const ClassifierReport& gate, const torch::Tensor& clips,
                       const torch::Tensor& labels);

struct FrechetResult {
    double value = 0;
    bool regularized = false;  // epsilon * I was added to a singular covariance
};

// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)) over row features [N, F].
FrechetResult feature_frechet(const torch::Tensor& real, const torch::Tensor& generated, double eps = 1e-6);
// Closed form from Gaussian statistics (double precision, PSD covariances).
double frechet_from_stats(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                          const torch::Tensor& cov2);

// Frame corpus for nearest-neighbour lookups.
struct FrameCorpus {
    struct Ref {
        std::string clip_id;
        int frame;
    };
    std::vector<Ref> refs;
    torch::Tensor frames;  // [N, 3, H, W]
};

FrameCorpus load_frame_corpus(const DatasetManifest& manifest, std::optional<Split> split = std::nullopt);

// Pool-pyramid distance of `query` [3, H, W] against every corpus frame [N, 3, H, W].
torch::Tensor pyramid_distances(const torch::Tensor& query, const torch::Tensor& corpus);

struct Neighbor {
    std::string clip_id;
    int frame;
    double distance;
};

// k nearest frames ordered by (distance, clip id, frame). k larger than the
// corpus returns the whole corpus ranked.
std::vector<Neighbor> nn_search(const torch::Tensor& query, const FrameCorpus& corpus, std::size_t k);

struct ClipRecordMetrics {
    std::string id;
    std::string appearance_text;
    std::string motion_text;
    int label = -1;
    int predicted = -1;
    std::optional<double> drift;
};

struct MetricReport {
    std::string variant;
    std::string checkpoint_id;
    std::string manifest_hash;
    std::optional<double> identity_drift;  // mean over clips where frame 0 is detectable
    double motion_accuracy = 0;
    double feature_frechet = 0;
    bool frechet_regularized = false;
    double gt_drift_floor = 0;
    double classifier_heldout_accuracy = 0;
    std::optional<double> exemplar_color_fidelity;  // decoded exemplar torso color matches the text
    std::vector<double> novelty_top1;              // nearest training-frame distance per query frame
    std::vector<ClipRecordMetrics> clips;

    // Structured key = value text followed by one line per clip.
    std::string to_text() const;
};

}  // namespace t2p
