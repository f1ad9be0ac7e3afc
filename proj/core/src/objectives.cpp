#include "medforge/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace medforge::objectives {

using nlohmann::json;

namespace {

template <typename Fn>
void for_each_matrix(ToyEncoders& e, Fn&& fn) {
    fn(e.W_I);
    fn(e.W_T);
    for (auto& z : e.W_Z) fn(z);
}

template <typename Fn>
void for_each_matrix2(ToyEncoders& a, const ToyEncoders& b, Fn&& fn) {
    fn(a.W_I, b.W_I);
    fn(a.W_T, b.W_T);
    for (std::size_t p = 0; p < a.W_Z.size(); ++p) fn(a.W_Z[p], b.W_Z[p]);
}

double log_sum_exp(const VectorXd& v) {
    double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
}

VectorXd softmax(const VectorXd& v) {
    VectorXd e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

void check_target(const Tokens& target, std::size_t positions, int V) {
    if (target.empty()) throw ObjectiveError("empty target");
    if (target.size() > positions) {
        throw ObjectiveError("target length " + std::to_string(target.size()) + " exceeds " +
                             std::to_string(positions) + " positions");
    }
    for (int tok : target) {
        if (tok < 0 || tok >= V) throw ObjectiveError("token id " + std::to_string(tok) + " outside vocabulary");
    }
}

void check_x(const ToyEncoders& enc, const VectorXd& x) {
    if (x.size() != enc.m()) throw ObjectiveError("image feature has the wrong dimension");
}

// Captioning loss of the decoder at embedding z. Adds the gradient w.r.t.
// W_Z (scaled by `s`) into g and returns dL/dz (unscaled).
double cap_at(const ToyEncoders& enc, const VectorXd& z, const Tokens& target, Gradients* g, double s,
              VectorXd* dz) {
    check_target(target, enc.W_Z.size(), enc.V());
    const double inv_n = 1.0 / static_cast<double>(target.size());
    double loss = 0.0;
    if (dz) *dz = VectorXd::Zero(enc.d());
    for (std::size_t p = 0; p < target.size(); ++p) {
        VectorXd logits = enc.W_Z[p] * z;
        loss += log_sum_exp(logits) - logits(target[p]);
        if (g || dz) {
            VectorXd gp = softmax(logits);
            gp(target[p]) -= 1.0;
            gp *= inv_n;
            if (g) g->W_Z[p].noalias() += s * gp * z.transpose();
            if (dz) dz->noalias() += enc.W_Z[p].transpose() * gp;
        }
    }
    return loss * inv_n;
}

double diff_loss(const ToyEncoders& enc, const std::vector<DifferenceSample>& samples, Gradients* grad) {
    validate(enc);
    if (samples.empty()) throw ObjectiveError("empty sample set");
    if (grad) *grad = zeros_like(enc);
    const double s = 1.0 / static_cast<double>(samples.size());
    double total = 0.0;
    for (const auto& smp : samples) {
        check_x(enc, smp.x1);
        check_x(enc, smp.x2);
        VectorXd dx = smp.x1 - smp.x2;
        VectorXd z = enc.W_I * dx;
        VectorXd dz;
        total += cap_at(enc, z, smp.difference, grad, s, grad ? &dz : nullptr);
        if (grad) grad->W_I.noalias() += s * dz * dx.transpose();
    }
    return total * s;
}

}  // namespace

ToyEncoders ToyEncoders::zeros(int m, int d, int V, int L) {
    if (m < 1 || d < 1 || V < 1 || L < 1) throw ObjectiveError("dimensions must be positive");
    ToyEncoders e;
    e.W_I = MatrixXd::Zero(d, m);
    e.W_T = MatrixXd::Zero(d, V);
    e.W_Z.assign(static_cast<std::size_t>(L), MatrixXd::Zero(V, d));
    return e;
}

ToyEncoders ToyEncoders::random(int m, int d, int V, int L, std::uint64_t seed, double scale) {
    ToyEncoders e = zeros(m, d, V, L);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for_each_matrix(e, [&](MatrixXd& M) {
        for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
    });
    return e;
}

void validate(const ToyEncoders& enc) {
    if (enc.W_Z.empty()) throw ObjectiveError("decoder needs at least one position");
    if (enc.W_T.rows() != enc.W_I.rows()) throw ObjectiveError("W_I and W_T disagree on the embedding dimension");
    for (const auto& z : enc.W_Z) {
        if (z.rows() != enc.W_T.cols() || z.cols() != enc.W_I.rows()) {
            throw ObjectiveError("W_Z position matrix must be V x d");
        }
        if (!z.allFinite()) throw ObjectiveError("W_Z has non-finite entries");
    }
    if (!enc.W_I.allFinite() || !enc.W_T.allFinite()) throw ObjectiveError("encoder has non-finite entries");
}

Gradients zeros_like(const ToyEncoders& enc) { return ToyEncoders::zeros(enc.m(), enc.d(), enc.V(), enc.L()); }

void validate(const LossWeights& w) {
    if (!(w.cap >= 0.0) || !(w.clip >= 0.0)) throw ObjectiveError("loss weights must be non-negative");
    if (w.cap == 0.0 && w.clip == 0.0) throw ObjectiveError("loss weights cannot both be zero");
}

VectorXd bag_of_tokens(const Tokens& t, int V) {
    VectorXd b = VectorXd::Zero(V);
    for (int tok : t) {
        if (tok < 0 || tok >= V) throw ObjectiveError("token id " + std::to_string(tok) + " outside vocabulary");
        b(tok) += 1.0;
    }
    return b;
}

VectorXd image_embed(const ToyEncoders& enc, const VectorXd& x) {
    check_x(enc, x);
    return enc.W_I * x;
}

VectorXd text_embed(const ToyEncoders& enc, const Tokens& t) { return enc.W_T * bag_of_tokens(t, enc.V()); }

std::vector<VectorXd> decode_logits(const ToyEncoders& enc, const VectorXd& z) {
    std::vector<VectorXd> out;
    out.reserve(enc.W_Z.size());
    for (const auto& W : enc.W_Z) out.push_back(W * z);
    return out;
}

double l_cap(const std::vector<VectorXd>& logits, const Tokens& target) {
    if (logits.empty()) throw ObjectiveError("no logits");
    check_target(target, logits.size(), static_cast<int>(logits.front().size()));
    double loss = 0.0;
    for (std::size_t p = 0; p < target.size(); ++p) {
        loss += log_sum_exp(logits[p]) - logits[p](target[p]);
    }
    return loss / static_cast<double>(target.size());
}

double l_clip(const VectorXd& residual) {
    if (!residual.allFinite()) throw ObjectiveError("non-finite residual");
    return 0.5 * residual.squaredNorm();
}

double empirical_risk(const ToyEncoders& enc, const std::vector<Pair>& data, const LossWeights& w,
                      const ClipOptions& clip, Gradients* grad) {
    validate(enc);
    validate(w);
    if (data.empty()) throw ObjectiveError("empty dataset");
    if (clip.mode == ClipMode::Contrastive && !(clip.temperature > 0.0)) {
        throw ObjectiveError("temperature must be positive");
    }
    if (grad) *grad = zeros_like(enc);
    const std::size_t n = data.size();
    const double s = 1.0 / static_cast<double>(n);

    std::vector<VectorXd> u(n), b(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        check_x(enc, data[i].x);
        u[i] = enc.W_I * data[i].x;
        b[i] = bag_of_tokens(data[i].t, enc.V());
        v[i] = enc.W_T * b[i];
    }

    double cap = 0.0;
    if (w.cap > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            VectorXd dz;
            cap += cap_at(enc, u[i], data[i].t, grad, w.cap * s, grad ? &dz : nullptr);
            if (grad) grad->W_I.noalias() += (w.cap * s) * dz * data[i].x.transpose();
        }
        cap *= s;
    }

    double align = 0.0;
    if (w.clip > 0.0) {
        if (clip.mode == ClipMode::Residual) {
            for (std::size_t i = 0; i < n; ++i) {
                VectorXd r = u[i] - v[i];
                align += l_clip(r);
                if (grad) {
                    grad->W_I.noalias() += (w.clip * s) * r * data[i].x.transpose();
                    grad->W_T.noalias() -= (w.clip * s) * r * b[i].transpose();
                }
            }
            align *= s;
        } else {
            const double inv_tau = 1.0 / clip.temperature;
            MatrixXd S(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) S(i, j) = u[i].dot(v[j]) * inv_tau;
            }
            MatrixXd dS = MatrixXd::Zero(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                VectorXd row = S.row(i).transpose();
                align += log_sum_exp(row) - S(i, i);
                if (grad) {
                    dS.row(i) = softmax(row).transpose();
                    dS(i, i) -= 1.0;
                }
            }
            align *= s;
            if (grad) {
                dS *= w.clip * s * inv_tau;
                for (std::size_t i = 0; i < n; ++i) {
                    VectorXd du = VectorXd::Zero(enc.d());
                    VectorXd dv = VectorXd::Zero(enc.d());
                    for (std::size_t j = 0; j < n; ++j) {
                        du.noalias() += dS(i, j) * v[j];
                        dv.noalias() += dS(j, i) * u[j];
                    }
                    grad->W_I.noalias() += du * data[i].x.transpose();
                    grad->W_T.noalias() += dv * b[i].transpose();
                }
            }
        }
    }
    return w.cap * cap + w.clip * align;
}

CorruptedRisk corrupted_risk(const ToyEncoders& enc, const std::vector<Pair>& clean,
                             const std::vector<Pair>& corrupt, double eta, const LossWeights& w,
                             std::size_t n_samples, std::uint64_t seed) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ObjectiveError("eta must be in [0, 1]");
    if (eta > 0.0 && clean.empty()) throw ObjectiveError("clean set is empty but has weight eta > 0");
    if (eta < 1.0 && corrupt.empty()) throw ObjectiveError("corrupt set is empty but has weight 1 - eta > 0");
    CorruptedRisk r;
    if (!clean.empty()) r.clean = empirical_risk(enc, clean, w);
    if (!corrupt.empty()) r.corrupt = empirical_risk(enc, corrupt, w);
    r.closed_form = eta * r.clean + (1.0 - eta) * r.corrupt;
    r.n_samples = n_samples;
    if (n_samples == 0) return r;

    std::vector<double> clean_loss(clean.size()), corrupt_loss(corrupt.size());
    for (std::size_t i = 0; i < clean.size(); ++i) clean_loss[i] = empirical_risk(enc, {clean[i]}, w);
    for (std::size_t i = 0; i < corrupt.size(); ++i) corrupt_loss[i] = empirical_risk(enc, {corrupt[i]}, w);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        bool from_clean = unit(rng) < eta;
        const auto& pool = from_clean ? clean_loss : corrupt_loss;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        double l = pool[pick(rng)];
        sum += l;
        sum_sq += l * l;
    }
    const double n = static_cast<double>(n_samples);
    r.monte_carlo = sum / n;
    if (n_samples > 1) {
        double var = std::max(0.0, (sum_sq - n * r.monte_carlo * r.monte_carlo) / (n - 1.0));
        r.mc_stderr = std::sqrt(var / n);
    }
    return r;
}

double generalization_error(const ToyEncoders& enc, const std::vector<DifferenceSample>& samples, Gradients* grad) {
    return diff_loss(enc, samples, grad);
}

double sft_loss(const ToyEncoders& enc, const std::vector<EditTriplet>& triplets, Gradients* grad) {
    return diff_loss(enc, triplets, grad);
}

DescentTrace descend(ToyEncoders& enc, const Objective& f, const DescentOptions& opt) {
    if (opt.steps < 0 || !(opt.step > 0.0)) throw ObjectiveError("invalid descent options");
    DescentTrace trace;
    Gradients g;
    double loss = f(enc, &g);
    trace.losses.push_back(loss);
    for (int it = 0; it < opt.steps; ++it) {
        double step = opt.step;
        bool accepted = false;
        for (int h = 0; h <= opt.max_halvings; ++h, step *= 0.5) {
            ToyEncoders trial = enc;
            for_each_matrix2(trial, g, [&](MatrixXd& p, const MatrixXd& d) { p -= step * d; });
            double next = f(trial, nullptr);
            if (std::isfinite(next) && next < loss) {
                enc = std::move(trial);
                loss = f(enc, &g);
                trace.losses.push_back(loss);
                ++trace.accepted;
                accepted = true;
                break;
            }
            ++trace.rejected;
        }
        if (!accepted) break;
    }
    return trace;
}

GradCheck check_gradient(const ToyEncoders& enc, const Objective& f, double h, double floor) {
    Gradients g;
    f(enc, &g);
    ToyEncoders probe = enc;
    GradCheck out;
    auto visit = [&](MatrixXd& P, const MatrixXd& G) {
        for (Eigen::Index i = 0; i < P.size(); ++i) {
            double saved = P.data()[i];
            P.data()[i] = saved + h;
            double up = f(probe, nullptr);
            P.data()[i] = saved - h;
            double down = f(probe, nullptr);
            P.data()[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = G.data()[i];
            double err = std::abs(analytic - numeric);
            double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            out.max_abs_error = std::max(out.max_abs_error, err);
            out.max_relative_error = std::max(out.max_relative_error, err / denom);
            ++out.entries;
        }
    };
    for_each_matrix2(probe, g, visit);
    return out;
}

// ---------------------------------------------------------------------------

json demo(std::uint64_t seed) {
    const int m = 3, d = 4, V = 5, L = 3;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> tok(0, V - 1);
    std::uniform_int_distribution<int> len(1, L);
    auto vec = [&] {
        VectorXd x(m);
        for (int i = 0; i < m; ++i) x(i) = n(rng);
        return x;
    };
    auto tokens = [&] {
        Tokens t(static_cast<std::size_t>(len(rng)));
        for (int& x : t) x = tok(rng);
        return t;
    };

    ToyEncoders enc = ToyEncoders::random(m, d, V, L, seed);
    std::vector<Pair> clean, corrupt;
    for (int i = 0; i < 8; ++i) {
        VectorXd x = vec();
        clean.push_back({x, tokens()});
        corrupt.push_back({x, tokens()});
    }
    LossWeights w{1.0, 0.5};

    json mixture = json::array();
    double worst_identity = 0.0;
    for (double eta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        CorruptedRisk r = corrupted_risk(enc, clean, corrupt, eta, w, 0, seed);
        double direct = eta * empirical_risk(enc, clean, w) + (1.0 - eta) * empirical_risk(enc, corrupt, w);
        worst_identity = std::max(worst_identity, std::abs(r.closed_form - direct));
        mixture.push_back({{"eta", eta}, {"closed_form", r.closed_form}, {"abs_diff", std::abs(r.closed_form - direct)}});
    }

    json mc = json::array();
    for (std::size_t ns : {std::size_t{100}, std::size_t{10000}}) {
        CorruptedRisk r = corrupted_risk(enc, clean, corrupt, 0.5, w, ns, seed + 1);
        mc.push_back({{"n_samples", ns},
                      {"monte_carlo", r.monte_carlo},
                      {"closed_form", r.closed_form},
                      {"stderr", r.mc_stderr},
                      {"within_3_sigma", std::abs(r.monte_carlo - r.closed_form) <= 3.0 * r.mc_stderr}});
    }

    std::vector<EditTriplet> triplets;
    for (int i = 0; i < 5; ++i) triplets.push_back({vec(), vec(), tokens()});

    json checks = json::object();
    auto record = [&](const char* name, const Objective& f) {
        GradCheck c = check_gradient(enc, f);
        checks[name] = {{"max_relative_error", c.max_relative_error}, {"entries", c.entries},
                        {"pass", c.max_relative_error < 1e-4}};
    };
    record("empirical_risk", [&](const ToyEncoders& e, Gradients* g) { return empirical_risk(e, clean, w, {}, g); });
    record("empirical_risk_contrastive", [&](const ToyEncoders& e, Gradients* g) {
        return empirical_risk(e, clean, w, {ClipMode::Contrastive, 0.5}, g);
    });
    record("sft_loss", [&](const ToyEncoders& e, Gradients* g) { return sft_loss(e, triplets, g); });

    ToyEncoders fit = enc;
    DescentTrace trace =
        descend(fit, [&](const ToyEncoders& e, Gradients* g) { return sft_loss(e, triplets, g); }, {100, 0.1, 30});
    bool monotone = true;
    for (std::size_t i = 1; i < trace.losses.size(); ++i) monotone = monotone && trace.losses[i] < trace.losses[i - 1];

    return json{{"seed", seed},
                {"dims", {{"m", m}, {"d", d}, {"V", V}, {"L", L}}},
                {"mixture_identity", {{"rows", mixture}, {"max_abs_diff", worst_identity}}},
                {"monte_carlo", mc},
                {"gradient_checks", checks},
                {"sft_descent",
                 {{"initial", trace.losses.front()},
                  {"final", trace.losses.back()},
                  {"accepted_steps", trace.accepted},
                  {"strictly_decreasing", monotone}}}};
}

}  // namespace medforge::objectives
