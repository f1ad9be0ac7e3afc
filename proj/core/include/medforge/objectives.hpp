#pragma once

// Toy-scale training objectives: captioning and alignment losses, empirical
// and noisy-mixture risks, difference decoding and the edit-set SFT loss,
// each with an analytic gradient.
//
// Images are feature vectors, captions are token sequences. The decoder
// emits independent logits for each of L positions.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace medforge::objectives {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Tokens = std::vector<int>;

class ObjectiveError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ToyEncoders {
    MatrixXd W_I;               // d x m
    MatrixXd W_T;               // d x V
    std::vector<MatrixXd> W_Z;  // L matrices, each V x d

    int m() const { return static_cast<int>(W_I.cols()); }
    int d() const { return static_cast<int>(W_I.rows()); }
    int V() const { return static_cast<int>(W_T.cols()); }
    int L() const { return static_cast<int>(W_Z.size()); }

    static ToyEncoders zeros(int m, int d, int V, int L);
    // Entries drawn from N(0, scale^2).
    static ToyEncoders random(int m, int d, int V, int L, std::uint64_t seed, double scale = 0.5);
};

// Throws ObjectiveError on inconsistent shapes or non-finite entries.
void validate(const ToyEncoders& enc);

// Same layout as ToyEncoders.
using Gradients = ToyEncoders;
Gradients zeros_like(const ToyEncoders& enc);

struct LossWeights {
    double cap = 1.0;
    double clip = 1.0;
};
void validate(const LossWeights& w);

enum class ClipMode { Residual, Contrastive };

struct ClipOptions {
    ClipMode mode = ClipMode::Residual;
    double temperature = 0.1;  // Contrastive only
};

struct Pair {
    VectorXd x;  // image features, dim m
    Tokens t;    // caption tokens
};

struct DifferenceSample {
    VectorXd x1;
    VectorXd x2;
    Tokens difference;
};
// An edit triplet (x, x_hat, difference text) has the same shape.
using EditTriplet = DifferenceSample;

// Bag-of-token counts over the vocabulary.
VectorXd bag_of_tokens(const Tokens& t, int V);

VectorXd image_embed(const ToyEncoders& enc, const VectorXd& x);
VectorXd text_embed(const ToyEncoders& enc, const Tokens& t);
std::vector<VectorXd> decode_logits(const ToyEncoders& enc, const VectorXd& z);

// Mean per-position softmax negative log-likelihood. Throws on an empty
// target, a target longer than the logits, or a token id outside [0, V).
double l_cap(const std::vector<VectorXd>& logits, const Tokens& target);
// 0.5 * |residual|^2. Throws on non-finite input.
double l_clip(const VectorXd& residual);

// Mean over pairs of cap * l_cap(Z[I(x)], t) + clip * l_clip(I(x) - T(t)).
// In Contrastive mode the alignment term is the in-batch InfoNCE loss
// (image-to-text direction) instead. When `grad` is non-null it receives the
// gradient.
double empirical_risk(const ToyEncoders& enc, const std::vector<Pair>& data, const LossWeights& w,
                      const ClipOptions& clip = {}, Gradients* grad = nullptr);

struct CorruptedRisk {
    double clean = 0.0;        // R on the clean set
    double corrupt = 0.0;      // R on the corrupt set
    double closed_form = 0.0;  // eta * clean + (1 - eta) * corrupt
    double monte_carlo = 0.0;
    double mc_stderr = 0.0;
    std::size_t n_samples = 0;
};

// Closed-form mixture plus a Monte-Carlo estimate that draws clean with
// probability eta, then a uniform pair from the chosen set. Residual mode
// only, since the estimate needs a per-pair loss.
CorruptedRisk corrupted_risk(const ToyEncoders& enc, const std::vector<Pair>& clean,
                             const std::vector<Pair>& corrupt, double eta, const LossWeights& w,
                             std::size_t n_samples, std::uint64_t seed);

// Mean l_cap(Z[I(x1) - I(x2)], difference).
double generalization_error(const ToyEncoders& enc, const std::vector<DifferenceSample>& samples,
                            Gradients* grad = nullptr);
// Mean l_cap(Z[I(x) - I(x_hat)], difference) over the edit set.
double sft_loss(const ToyEncoders& enc, const std::vector<EditTriplet>& triplets, Gradients* grad = nullptr);

// A scalar function of the parameters that optionally fills its gradient.
using Objective = std::function<double(const ToyEncoders&, Gradients*)>;

struct DescentOptions {
    int steps = 100;
    double step = 0.1;
    int max_halvings = 30;
};

struct DescentTrace {
    std::vector<double> losses;  // initial loss, then one entry per accepted step
    int accepted = 0;
    int rejected = 0;  // trial steps undone by backtracking
};

// Gradient descent with backtracking: a trial step is accepted only if it
// strictly lowers the loss, otherwise the step is halved. Stops early when
// no halving helps.
DescentTrace descend(ToyEncoders& enc, const Objective& f, const DescentOptions& opt = {});

struct GradCheck {
    double max_relative_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t entries = 0;
};

// Central differences over every parameter. The relative error of an entry
// is |a - n| / max(|a|, |n|, floor).
GradCheck check_gradient(const ToyEncoders& enc, const Objective& f, double h = 1e-5, double floor = 1e-6);

// Mixture identity, Monte-Carlo agreement, gradient checks and a short SFT
// descent on a seeded toy instance.
nlohmann::json demo(std::uint64_t seed);

}  // namespace medforge::objectives
