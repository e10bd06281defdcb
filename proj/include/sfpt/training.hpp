#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfpt/config.hpp"
#include "sfpt/evaluation.hpp"
#include "sfpt/losses.hpp"

namespace sfpt {

struct TrainConfig {
    long long steps = 2000;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int accumulation = 4;  // (source, target) pairs per update
    int paired_ratio = 1;
    int unpaired_ratio = 1;
    LossWeights weights;
    std::uint64_t seed = 1;
    long long checkpoint_interval = 0;  // 0 = final checkpoint only
    long long probe_interval = 10;      // 0 = never
    bool use_edge = true;
    bool use_pseudo = true;
    bool use_skin = true;
    int skin_pairs = 256;
    ModelConfig model;
};

/// Throws InvalidArgument when a field is out of range.
inline void validate(const TrainConfig& c) {
    if (c.steps < 0) throw InvalidArgument("steps must be >= 0");
    if (!(c.learning_rate >= 0)) throw InvalidArgument("learning_rate must be >= 0");
    if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1)) throw InvalidArgument("betas must be in [0, 1)");
    if (!(c.epsilon > 0)) throw InvalidArgument("epsilon must be > 0");
    if (c.accumulation < 1) throw InvalidArgument("accumulation must be >= 1");
    if (c.paired_ratio < 0 || c.unpaired_ratio < 0 || c.paired_ratio + c.unpaired_ratio == 0) {
        throw InvalidArgument("step ratio weights must be >= 0 and not both zero");
    }
    const auto& w = c.weights;
    for (double v : {w.rec, w.trans, w.cycle, w.skin, w.edge, w.pseudo})
        if (!(v >= 0)) throw InvalidArgument("loss weights must be >= 0");
    if (c.checkpoint_interval < 0 || c.probe_interval < 0) throw InvalidArgument("intervals must be >= 0");
    if (c.skin_pairs < 0) throw InvalidArgument("skin_pairs must be >= 0");
    if (c.model.parts < 1 || c.model.latent < 1) throw InvalidArgument("parts and latent must be >= 1");
}

/// Applies one `key = value` entry. Unknown keys are a ParseError.
inline void apply_config(TrainConfig& c, const ConfigEntry& e) {
    const std::string& k = e.key;
    if (k == "steps") c.steps = config_int(e);
    else if (k == "learning_rate") c.learning_rate = config_double(e);
    else if (k == "beta1") c.beta1 = config_double(e);
    else if (k == "beta2") c.beta2 = config_double(e);
    else if (k == "epsilon") c.epsilon = config_double(e);
    else if (k == "accumulation") c.accumulation = static_cast<int>(config_int(e));
    else if (k == "paired_ratio") c.paired_ratio = static_cast<int>(config_int(e));
    else if (k == "unpaired_ratio") c.unpaired_ratio = static_cast<int>(config_int(e));
    else if (k == "lambda_rec") c.weights.rec = config_double(e);
    else if (k == "lambda_trans") c.weights.trans = config_double(e);
    else if (k == "lambda_cycle") c.weights.cycle = config_double(e);
    else if (k == "lambda_skin") c.weights.skin = config_double(e);
    else if (k == "lambda_edge") c.weights.edge = config_double(e);
    else if (k == "w_pseudo") c.weights.pseudo = config_double(e);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(config_int(e));
    else if (k == "checkpoint_interval") c.checkpoint_interval = config_int(e);
    else if (k == "probe_interval") c.probe_interval = config_int(e);
    else if (k == "use_edge") c.use_edge = config_bool(e);
    else if (k == "use_pseudo") c.use_pseudo = config_bool(e);
    else if (k == "use_skin") c.use_skin = config_bool(e);
    else if (k == "skin_pairs") c.skin_pairs = static_cast<int>(config_int(e));
    else if (k == "parts") c.model.parts = static_cast<int>(config_int(e));
    else if (k == "latent") c.model.latent = static_cast<int>(config_int(e));
    else if (k == "skin_widths") c.model.skin_widths = config_int_list(e);
    else if (k == "encoder_widths") c.model.encoder_widths = config_int_list(e);
    else if (k == "decoder_widths") c.model.decoder_widths = config_int_list(e);
    else if (k == "leaky_slope") c.model.leaky_slope = config_double(e);
    else throw ParseError("unknown training key '" + k + "'", e.line);
}

inline TrainConfig train_config_from(const std::vector<ConfigEntry>& entries, TrainConfig base = {}) {
    for (const auto& e : entries) apply_config(base, e);
    validate(base);
    return base;
}

namespace detail {
inline std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

/// Canonical `key = value` text; parses back to an equal config.
inline std::string to_text(const TrainConfig& c) {
    using detail::fmt;
    std::ostringstream o;
    o << "steps = " << c.steps << "\nlearning_rate = " << fmt(c.learning_rate) << "\nbeta1 = " << fmt(c.beta1)
      << "\nbeta2 = " << fmt(c.beta2) << "\nepsilon = " << fmt(c.epsilon) << "\naccumulation = " << c.accumulation
      << "\npaired_ratio = " << c.paired_ratio << "\nunpaired_ratio = " << c.unpaired_ratio
      << "\nlambda_rec = " << fmt(c.weights.rec) << "\nlambda_trans = " << fmt(c.weights.trans)
      << "\nlambda_cycle = " << fmt(c.weights.cycle) << "\nlambda_skin = " << fmt(c.weights.skin)
      << "\nlambda_edge = " << fmt(c.weights.edge) << "\nw_pseudo = " << fmt(c.weights.pseudo) << "\nseed = " << c.seed
      << "\ncheckpoint_interval = " << c.checkpoint_interval << "\nprobe_interval = " << c.probe_interval
      << "\nuse_edge = " << (c.use_edge ? "true" : "false") << "\nuse_pseudo = " << (c.use_pseudo ? "true" : "false")
      << "\nuse_skin = " << (c.use_skin ? "true" : "false") << "\nskin_pairs = " << c.skin_pairs
      << "\nparts = " << c.model.parts << "\nlatent = " << c.model.latent
      << "\nskin_widths = " << detail::join(c.model.skin_widths)
      << "\nencoder_widths = " << detail::join(c.model.encoder_widths)
      << "\ndecoder_widths = " << detail::join(c.model.decoder_widths)
      << "\nleaky_slope = " << fmt(c.model.leaky_slope) << '\n';
    return o.str();
}

/// Fingerprint of everything that shapes the trajectory. Run length and
/// output cadence are excluded so a run can be resumed with more steps.
inline std::uint64_t config_hash(const TrainConfig& c) {
    TrainConfig h = c;
    h.steps = 0;
    h.checkpoint_interval = 0;
    h.probe_interval = 0;
    return fnv1a(to_text(h));
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long long t = 0;

    static AdamState zeros(const std::vector<Tensor>& params) {
        AdamState s;
        for (const auto& p : params) {
            s.m.emplace_back(p.size(), 0.0);
            s.v.emplace_back(p.size(), 0.0);
        }
        return s;
    }
};

/// One bias-corrected update from the gradients currently stored in `params`.
inline void adam_update(std::vector<Tensor>& params, AdamState& s, const TrainConfig& c) {
    if (s.m.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
    ++s.t;
    const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& x = params[p].mutable_data();
        const auto& g = params[p].grad();
        auto& m = s.m[p];
        auto& v = s.v[p];
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
            x[i] -= c.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + c.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    ModelParams model;
    AdamState optimizer;
    long long step = 0;
    std::uint64_t config_hash = 0;
};

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
    const auto& mc = ck.model.config;
    out << "sfpt-checkpoint 1\nstep " << ck.step << "\nconfig_hash " << ck.config_hash << "\nadam_t " << ck.optimizer.t
        << "\nmodel " << mc.parts << ' ' << mc.latent << ' ' << detail::fmt(mc.leaky_slope) << ' '
        << detail::join(mc.skin_widths) << ' ' << detail::join(mc.encoder_widths) << ' '
        << detail::join(mc.decoder_widths) << '\n';
    const auto named = ck.model.named_parameters();
    auto block = [&](const char* tag, const std::string& name, std::size_t r, std::size_t c, const std::vector<double>& v) {
        out << tag << ' ' << name << ' ' << r << ' ' << c << '\n';
        for (std::size_t i = 0; i < v.size(); ++i) out << detail::fmt(v[i]) << ((i + 1) % c == 0 ? '\n' : ' ');
    };
    const bool has_moments = ck.optimizer.m.size() == named.size();
    for (std::size_t p = 0; p < named.size(); ++p) {
        const auto& [name, t] = named[p];
        block("param", name, t.rows(), t.cols(), t.data());
        if (has_moments) {
            block("adam_m", name, t.rows(), t.cols(), ck.optimizer.m[p]);
            block("adam_v", name, t.rows(), t.cols(), ck.optimizer.v[p]);
        }
    }
    out << "end\n";
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    write_checkpoint(ck, f);
    f.flush();
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint read_checkpoint(std::istream& in) {
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "sfpt-checkpoint" || version != 1) throw ParseError("not a checkpoint file");
    Checkpoint ck;
    ModelConfig mc;
    std::string sw, ew, dw;
    auto expect = [&](const char* key) {
        if (!(in >> word) || word != key) throw ParseError(std::string("checkpoint: expected '") + key + "'");
    };
    expect("step");
    in >> ck.step;
    expect("config_hash");
    in >> ck.config_hash;
    expect("adam_t");
    in >> ck.optimizer.t;
    expect("model");
    in >> mc.parts >> mc.latent >> mc.leaky_slope >> sw >> ew >> dw;
    if (!in) throw ParseError("checkpoint: malformed header");
    auto list = [](const std::string& s) { return config_int_list({"widths", s, 0}); };
    mc.skin_widths = list(sw);
    mc.encoder_widths = list(ew);
    mc.decoder_widths = list(dw);
    ck.model = init_model(mc, 0);
    auto named = ck.model.named_parameters();
    ck.optimizer.m.resize(named.size());
    ck.optimizer.v.resize(named.size());
    auto read_block = [&](const char* tag, const std::string& name, const Tensor& shape, std::vector<double>& dst) {
        std::string n;
        std::size_t r = 0, c = 0;
        if (!(in >> word >> n >> r >> c) || word != tag || n != name) {
            throw ParseError("checkpoint: expected " + std::string(tag) + " " + name);
        }
        if (r != shape.rows() || c != shape.cols()) throw ParseError("checkpoint: shape mismatch for " + name);
        dst.resize(r * c);
        for (auto& x : dst) {
            if (!(in >> word)) throw ParseError("checkpoint: truncated " + name);
            x = config_double({name, word, 0});
        }
    };
    bool moments = false;
    for (std::size_t p = 0; p < named.size(); ++p) {
        auto& [name, t] = named[p];
        read_block("param", name, t, t.mutable_data());
        if (p == 0) {
            const auto pos = in.tellg();
            in >> word;
            moments = word == "adam_m";
            in.seekg(pos);
        }
        if (moments) {
            read_block("adam_m", name, t, ck.optimizer.m[p]);
            read_block("adam_v", name, t, ck.optimizer.v[p]);
        } else {
            ck.optimizer.m[p].assign(t.size(), 0.0);
            ck.optimizer.v[p].assign(t.size(), 0.0);
        }
    }
    if (!(in >> word) || word != "end") throw ParseError("checkpoint: missing end marker");
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(f);
}

// ---------------------------------------------------------------------------
// Steps

enum class StepKind { paired, unpaired };

inline const char* step_kind_name(StepKind k) { return k == StepKind::paired ? "paired" : "unpaired"; }

/// Per-step loss values averaged over the accumulated pairs; NaN = absent.
struct LossReport {
    double total = 0;
    double rec = NAN;
    double trans = NAN;
    double cycle = NAN;
    double pseudo = NAN;
    double skin = NAN;
    double edge = NAN;
};

namespace detail {
inline double value_or_nan(const Tensor& t) { return t.defined() ? t.item() : NAN; }

inline void accumulate(LossReport& r, const LossComponents& c, const Tensor& total, double share) {
    auto add = [share](double& dst, const Tensor& t) {
        if (!t.defined()) return;
        dst = (std::isnan(dst) ? 0.0 : dst) + share * t.item();
    };
    r.total += share * total.item();
    add(r.rec, c.rec);
    add(r.trans, c.trans);
    add(r.cycle, c.cycle);
    add(r.pseudo, c.pseudo);
    add(r.skin, c.skin);
    add(r.edge, c.edge);
}

inline Tensor skin_term(const RestEncoding& enc, const PreparedCharacter& c, const TrainConfig& cfg, std::uint64_t seed) {
    return loss_skin(enc.skinning, c.gt_skinning, cfg.skin_pairs, seed);
}
}  // namespace detail

/// One paired pair: source and target share the pose `pose_id`.
inline LossComponents paired_losses(const ModelParams& m, const PreparedCharacter& src, const PreparedCharacter& tgt,
                                    int pose_id, const TrainConfig& cfg, std::uint64_t skin_seed) {
    const RestEncoding es = encode_rest(m, src.rest);
    const RestEncoding et = encode_rest(m, tgt.rest);
    const auto r = pose_transfer(m, src.posed_positions.at(pose_id), src.rest, es, tgt.rest, et);
    LossComponents c;
    c.rec = loss_rec(r.vertices, tgt.posed_positions.at(pose_id));
    c.trans = loss_trans(r.target_transforms, tgt.rest.mesh, tgt.posed.at(pose_id), r.target_skinning);
    if (cfg.use_skin) {
        c.skin = ad::scale(detail::skin_term(es, src, cfg, skin_seed) + detail::skin_term(et, tgt, cfg, skin_seed + 1), 0.5);
    }
    if (cfg.use_edge) c.edge = loss_edge(r.vertices, tgt.rest.positions, tgt.rest.topology);
    return c;
}

/// One unpaired pair: a posed paired-set source and a rest-only target.
inline LossComponents unpaired_losses(const ModelParams& m, const PreparedCharacter& src, const PreparedCharacter& tgt,
                                      int pose_id, const TrainConfig& cfg, std::uint64_t skin_seed) {
    const RestEncoding es = encode_rest(m, src.rest);
    const RestEncoding et = encode_rest(m, tgt.rest);
    const auto cyc = loss_cycle(m, src.posed_positions.at(pose_id), src.rest, es, tgt.rest, et, cfg.use_pseudo);
    LossComponents c;
    c.cycle = cyc.cycle;
    c.pseudo = cyc.pseudo;
    if (cfg.use_skin) {
        c.skin = ad::scale(detail::skin_term(es, src, cfg, skin_seed) + detail::skin_term(et, tgt, cfg, skin_seed + 1), 0.5);
    }
    if (cfg.use_edge) c.edge = loss_edge(cyc.forward.vertices, tgt.rest.positions, tgt.rest.topology);
    return c;
}

/// A (source, target, pose) triple drawn for one accumulation slot.
struct PairSample {
    std::size_t source = 0;
    std::size_t target = 0;
    int pose = 0;
};

struct PairRef {
    const PreparedCharacter* source;
    const PreparedCharacter* target;
    int pose;
};

/// Runs `pairs`, backpropagates the mean of their total losses and applies
/// one optimizer update.
inline LossReport train_step(ModelParams& m, AdamState& opt, StepKind kind, const std::vector<PairRef>& pairs,
                             const TrainConfig& cfg, std::uint64_t skin_seed) {
    if (pairs.empty()) throw InvalidArgument("train_step needs at least one pair");
    auto params = m.parameters();
    for (auto& p : params) p.zero_grad();
    LossReport report;
    const double share = 1.0 / static_cast<double>(pairs.size());
    const TrainingMode mode = kind == StepKind::paired ? TrainingMode::paired : TrainingMode::unpaired;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const std::uint64_t seed = skin_seed + 2 * i;
        const LossComponents c = kind == StepKind::paired ? paired_losses(m, *p.source, *p.target, p.pose, cfg, seed)
                                                          : unpaired_losses(m, *p.source, *p.target, p.pose, cfg, seed);
        const Tensor total = total_loss(c, cfg.weights, mode);
        if (!std::isfinite(total.item())) throw NumericalError("non-finite training loss");
        detail::accumulate(report, c, total, share);
        ad::backward(ad::scale(total, share));
    }
    adam_update(params, opt, cfg);
    return report;
}

inline LossReport train_step_paired(ModelParams& m, AdamState& opt, const PreparedCharacter& source,
                                    const PreparedCharacter& target, int pose, const TrainConfig& cfg,
                                    std::uint64_t skin_seed = 0) {
    if (!source.posed.count(pose) || !target.posed.count(pose)) throw InvalidArgument("paired step needs a shared pose");
    return train_step(m, opt, StepKind::paired, {{&source, &target, pose}}, cfg, skin_seed);
}

inline LossReport train_step_unpaired(ModelParams& m, AdamState& opt, const PreparedCharacter& source,
                                      const PreparedCharacter& target, int pose, const TrainConfig& cfg,
                                      std::uint64_t skin_seed = 0) {
    if (!target.posed.empty()) throw InvalidArgument("unpaired step target must be rest-only");
    if (!source.posed.count(pose)) throw InvalidArgument("unpaired step source lacks the pose");
    return train_step(m, opt, StepKind::unpaired, {{&source, &target, pose}}, cfg, skin_seed);
}

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRow {
    long long step = 0;
    StepKind kind = StepKind::paired;
    LossReport losses;
    double probe_pmd = NAN;
};

inline constexpr const char* kMetricsHeader = "step,kind,total,rec,trans,cycle,pseudo,skin,edge,probe_pmd";

inline std::string format_metrics_row(const MetricsRow& r) {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::fmt(v); };
    std::string s = std::to_string(r.step) + ',' + step_kind_name(r.kind);
    for (double v : {r.losses.total, r.losses.rec, r.losses.trans, r.losses.cycle, r.losses.pseudo, r.losses.skin,
                     r.losses.edge, r.probe_pmd})
        s += ',' + cell(v);
    return s;
}

/// Characters grouped for training plus the held-out probe pair.
struct TrainingData {
    std::vector<PreparedCharacter> paired;
    std::vector<PreparedCharacter> unpaired;
    std::vector<PreparedCharacter> probe;  // two held-out characters, or empty
};

inline TrainingData prepare_training_data(const Dataset& ds) {
    TrainingData d;
    d.paired = prepare_split(ds, Split::paired);
    d.unpaired = prepare_split(ds, Split::static_only);
    auto held = prepare_split(ds, Split::held_out);
    if (held.size() >= 2) {
        held.resize(2);
        d.probe = std::move(held);
    }
    return d;
}

/// Paired steps fill the first `paired_ratio` slots of each period. Without
/// static characters every step is paired.
inline StepKind step_kind(long long step, const TrainConfig& cfg, bool has_unpaired) {
    if (!has_unpaired || cfg.unpaired_ratio == 0) return StepKind::paired;
    if (cfg.paired_ratio == 0) return StepKind::unpaired;
    const long long period = cfg.paired_ratio + cfg.unpaired_ratio;
    return step % period < cfg.paired_ratio ? StepKind::paired : StepKind::unpaired;
}

/// Deterministic generator for step `step`, independent of earlier steps.
inline std::mt19937_64 step_rng(std::uint64_t seed, long long step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
    return std::mt19937_64(seq);
}

/// Draws the accumulation pairs for one step.
inline std::vector<PairSample> sample_pairs(StepKind kind, const TrainingData& d, std::mt19937_64& rng, int count) {
    std::vector<PairSample> out;
    const auto& targets = kind == StepKind::paired ? d.paired : d.unpaired;
    std::uniform_int_distribution<std::size_t> pick_s(0, d.paired.size() - 1), pick_t(0, targets.size() - 1);
    for (int i = 0; i < count; ++i) {
        PairSample p;
        p.source = pick_s(rng);
        p.target = pick_t(rng);
        // Poses available on both sides (paired) or on the source (unpaired).
        std::vector<int> poses;
        for (const auto& [id, mesh] : d.paired[p.source].posed)
            if (kind == StepKind::unpaired || targets[p.target].posed.count(id)) poses.push_back(id);
        if (poses.empty()) throw InvalidArgument("no shared pose for sampled pair");
        p.pose = poses[std::uniform_int_distribution<std::size_t>(0, poses.size() - 1)(rng)];
        out.push_back(p);
    }
    return out;
}

/// PMD of transferring the first probe character's first pose to the second.
inline double probe_pmd(const ModelParams& m, const TrainingData& d) {
    if (d.probe.size() < 2) return NAN;
    ad::NoGradGuard ng;
    const auto& a = d.probe[0];
    const auto& b = d.probe[1];
    for (const auto& [pose, src] : a.posed_positions) {
        const auto gt = b.posed_positions.find(pose);
        if (gt == b.posed_positions.end()) continue;
        return pmd(pose_transfer(m, src, a.rest, b.rest).vertices, gt->second);
    }
    return NAN;
}

struct FitOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoints + metrics.csv
    std::function<void(const MetricsRow&)> on_step;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<MetricsRow> metrics;
};

inline Checkpoint initial_checkpoint(const TrainConfig& cfg) {
    Checkpoint ck;
    ck.model = init_model(cfg.model, cfg.seed);
    ck.optimizer = AdamState::zeros(ck.model.parameters());
    ck.config_hash = config_hash(cfg);
    return ck;
}

/// Trains from `resume` (or a fresh model) up to `cfg.steps`. With an output
/// directory, writes `checkpoint_<step>.txt` at the configured interval,
/// `final.txt`, and appends rows to `metrics.csv`.
inline FitResult fit(const TrainingData& data, const TrainConfig& cfg, const FitOptions& options = {},
                     std::optional<Checkpoint> resume = std::nullopt) {
    validate(cfg);
    if (data.paired.empty()) throw InvalidArgument("training needs paired characters");
    FitResult res;
    res.checkpoint = resume ? std::move(*resume) : initial_checkpoint(cfg);
    auto& ck = res.checkpoint;
    if (ck.config_hash != config_hash(cfg)) throw InvalidArgument("checkpoint was produced with a different config");
    if (ck.step > cfg.steps) throw InvalidArgument("checkpoint is past the configured step count");

    std::ofstream metrics;
    if (options.out_dir) {
        std::error_code ec;
        std::filesystem::create_directories(*options.out_dir, ec);
        if (ec) throw IoError("cannot create '" + options.out_dir->string() + "': " + ec.message());
        const auto path = *options.out_dir / "metrics.csv";
        const bool fresh = !resume || !std::filesystem::exists(path);
        metrics.open(path, fresh ? std::ios::trunc : std::ios::app);
        if (!metrics) throw IoError("cannot write '" + path.string() + "'");
        if (fresh) metrics << kMetricsHeader << '\n';
    }
    auto save = [&](const std::string& name) {
        if (options.out_dir) save_checkpoint(ck, (*options.out_dir / name).string());
    };

    while (ck.step < cfg.steps) {
        const long long step = ck.step;
        auto rng = step_rng(cfg.seed, step);
        const StepKind kind = step_kind(step, cfg, !data.unpaired.empty());
        const auto pairs = sample_pairs(kind, data, rng, cfg.accumulation);
        const auto& targets = kind == StepKind::paired ? data.paired : data.unpaired;
        std::vector<PairRef> refs;
        for (const auto& p : pairs) refs.push_back({&data.paired[p.source], &targets[p.target], p.pose});
        MetricsRow row;
        row.step = step;
        row.kind = kind;
        row.losses = train_step(ck.model, ck.optimizer, kind, refs, cfg, rng());
        ck.step = step + 1;
        if (cfg.probe_interval > 0 && ck.step % cfg.probe_interval == 0) row.probe_pmd = probe_pmd(ck.model, data);
        if (metrics.is_open()) metrics << format_metrics_row(row) << '\n';
        if (options.on_step) options.on_step(row);
        res.metrics.push_back(row);
        if (cfg.checkpoint_interval > 0 && ck.step % cfg.checkpoint_interval == 0) {
            save("checkpoint_" + std::to_string(ck.step) + ".txt");
        }
    }
    save("final.txt");
    if (metrics.is_open()) {
        metrics.flush();
        if (!metrics) throw IoError("metrics write failed");
    }
    return res;
}

inline FitResult fit(const Dataset& ds, const TrainConfig& cfg, const FitOptions& options = {},
                     std::optional<Checkpoint> resume = std::nullopt) {
    return fit(prepare_training_data(ds), cfg, options, std::move(resume));
}

}  // namespace sfpt
