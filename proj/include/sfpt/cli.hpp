#pragma once

// Command-line front end. `run_cli` is the whole program; the tool's main
// only forwards to it, which keeps every subcommand testable in-process.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
// 4 numerical-check failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sfpt/config.hpp"
#include "sfpt/evaluation.hpp"
#include "sfpt/gradcheck_suite.hpp"
#include "sfpt/training.hpp"

namespace sfpt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

inline void apply_dataset_config(DatasetConfig& c, const ConfigEntry& e) {
    const std::string& k = e.key;
    auto count = [&] {
        const long long v = config_int(e);
        if (v < 0) throw ParseError("'" + k + "' must be non-negative", e.line);
        return static_cast<int>(v);
    };
    if (k == "paired") c.paired = count();
    else if (k == "static") c.static_only = count();
    else if (k == "heldout") c.held_out = count();
    else if (k == "poses") c.poses = count();
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(config_int(e));
    else if (k == "max_angle") c.max_angle = config_double(e);
    else throw ParseError("unknown dataset key '" + k + "'", e.line);
}

/// Content hash of a dataset directory: every file, in path order. Printed
/// by gen-data so reruns can be compared.
inline std::uint64_t dataset_hash(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& p : files) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot read '" + p.string() + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        all += fs::relative(p, dir).generic_string();
        all += '\0';
        all += ss.str();
    }
    return fnv1a(all);
}

namespace cli_detail {

inline ConfigEntry override_entry(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("override '" + kv + "' is not key=value");
    return {detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)), 0};
}

inline std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Pose transfer between characters through learned deformation parts"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic character dataset");
    std::string gen_out, gen_config;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--config", gen_config, "Dataset config (keys: paired, static, heldout, poses, seed, max_angle)")
        ->check(CLI::ExistingFile);
    gen->add_option("--seed", gen_seed, "Dataset seed (overrides the config)");

    // train
    auto* train = app.add_subcommand("train", "Train the transfer network");
    std::string train_data, train_out, train_config, train_resume;
    std::optional<long long> train_steps;
    std::optional<std::uint64_t> train_seed;
    std::vector<std::string> train_set, train_ablate;
    train->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", train_out, "Checkpoint and metrics directory")->required();
    train->add_option("--config", train_config, "Training config file")->check(CLI::ExistingFile);
    train->add_option("--steps", train_steps, "Optimizer steps (overrides the config)");
    train->add_option("--seed", train_seed, "Training seed (overrides the config)");
    train->add_option("--set", train_set, "Config override key=value, repeatable");
    train->add_option("--ablate", train_ablate, "Disable a loss: edge, pseudo or skin")
        ->check(CLI::IsMember({"edge", "pseudo", "skin"}));
    train->add_option("--resume", train_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

    // transfer
    auto* transfer = app.add_subcommand("transfer", "Transfer a pose onto a target character");
    std::string tr_ckpt, tr_sp, tr_sr, tr_tr, tr_out, tr_dump_w, tr_dump_t;
    transfer->add_option("--ckpt", tr_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    transfer->add_option("--source-posed", tr_sp, "Posed source OBJ")->required()->check(CLI::ExistingFile);
    transfer->add_option("--source-rest", tr_sr, "Rest source OBJ")->required()->check(CLI::ExistingFile);
    transfer->add_option("--target-rest", tr_tr, "Rest target OBJ")->required()->check(CLI::ExistingFile);
    transfer->add_option("--out", tr_out, "Deformed target OBJ")->required();
    transfer->add_option("--dump-skinning", tr_dump_w, "Write the predicted target skinning");
    transfer->add_option("--dump-transforms", tr_dump_t, "Write the predicted target part transforms");

    // eval
    auto* eval = app.add_subcommand("eval", "Held-out PMD and part consistency");
    std::string ev_ckpt, ev_data, ev_report, ev_split = "heldout", ev_colors;
    bool ev_gt = false;
    eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--report", ev_report, "Report CSV")->required();
    eval->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"paired", "static", "heldout"}));
    eval->add_option("--colors", ev_colors, "Directory for part-colored rest meshes");
    eval->add_flag("--gt-as-prediction", ev_gt, "Score ground-truth labels in place of predictions");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op, loss and the pipeline");
    int gc_shapes = 20;
    grad->add_option("--shapes", gc_shapes, "Random shapes per op")->check(CLI::PositiveNumber);

    // skinning
    auto* skin = app.add_subcommand("skinning", "Export predicted parts as a colored OBJ");
    std::string sk_ckpt, sk_mesh, sk_out;
    skin->add_option("--ckpt", sk_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    skin->add_option("--mesh", sk_mesh, "Rest OBJ")->required()->check(CLI::ExistingFile);
    skin->add_option("--out", sk_out, "Colored OBJ")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) {
            DatasetConfig dc;
            if (!gen_config.empty())
                for (const auto& e : load_config(gen_config)) apply_dataset_config(dc, e);
            if (gen_seed) dc.seed = *gen_seed;
            const Dataset ds = make_dataset(dc);
            write_dataset(ds, gen_out);
            out << "characters " << ds.characters.size() << " (paired " << dc.paired << ", static " << dc.static_only
                << ", heldout " << dc.held_out << ")\nhash " << cli_detail::hex(dataset_hash(gen_out)) << '\n';
        } else if (*train) {
            TrainConfig cfg = train_config_from(train_config.empty() ? std::vector<ConfigEntry>{} : load_config(train_config));
            for (const auto& kv : train_set) apply_config(cfg, cli_detail::override_entry(kv));
            if (train_steps) cfg.steps = *train_steps;
            if (train_seed) cfg.seed = *train_seed;
            for (const auto& a : train_ablate) {
                if (a == "edge") cfg.use_edge = false;
                if (a == "pseudo") cfg.use_pseudo = false;
                if (a == "skin") cfg.use_skin = false;
            }
            validate(cfg);
            std::optional<Checkpoint> resume;
            if (!train_resume.empty()) resume = load_checkpoint(train_resume);
            FitOptions opt;
            opt.out_dir = train_out;
            std::filesystem::create_directories(train_out);
            {
                std::ofstream f(std::filesystem::path(train_out) / "config.txt");
                if (!f) throw IoError("cannot write config to '" + train_out + "'");
                f << to_text(cfg);
            }
            const auto r = fit(read_dataset(train_data), cfg, opt, std::move(resume));
            out << "trained to step " << r.checkpoint.step << "; wrote " << train_out << "/final.txt\n";
        } else if (*transfer) {
            const Checkpoint ck = load_checkpoint(tr_ckpt);
            const auto r = pose_transfer(ck.model, load_obj(tr_sp), load_obj(tr_sr), load_obj(tr_tr));
            save_obj(r.deformed, tr_out);
            if (!tr_dump_w.empty()) save_skinning(r.target_skinning, tr_dump_w);
            if (!tr_dump_t.empty()) save_transforms(r.target_transforms, tr_dump_t);
        } else if (*eval) {
            const Checkpoint ck = load_checkpoint(ev_ckpt);
            const Dataset ds = read_dataset(ev_data);
            const Split split = parse_split(ev_split);
            EvaluationReport rep = evaluate(ck.model, ds, split);
            const auto chars = prepare_split(ds, split);
            std::vector<std::vector<int>> gt, pred = predicted_labels(ck.model, chars);
            for (const auto& c : chars) gt.push_back(c.gt_labels);
            if (ev_gt) rep.consistency = consistency_scores(gt, gt);
            write_report(rep, ev_report);
            if (!ev_colors.empty()) {
                std::filesystem::create_directories(ev_colors);
                for (std::size_t i = 0; i < chars.size(); ++i)
                    save_part_colored_obj(chars[i].rest.mesh, ev_gt ? gt[i] : pred[i],
                                          (std::filesystem::path(ev_colors) / (chars[i].id + ".obj")).string());
            }
            out << "pmd " << rep.model.pmd << " baseline " << rep.baseline.pmd << " pairs " << rep.model.pairs
                << "\nconsistency pred->gt " << rep.consistency.pred_to_gt << " gt->pred " << rep.consistency.gt_to_pred
                << '\n';
        } else if (*grad) {
            bool ok = true;
            for (const auto& c : run_gradcheck_suite(gc_shapes)) {
                out << (c.report.passed ? "PASS " : "FAIL ") << c.name << " max_rel " << c.report.max_relative_error
                    << " tol " << c.tolerance << " checked " << c.report.checked << '\n';
                ok = ok && c.report.passed;
            }
            if (!ok) throw NumericalError("gradient check failed");
        } else if (*skin) {
            const Checkpoint ck = load_checkpoint(sk_ckpt);
            const Mesh mesh = load_obj(sk_mesh);
            save_part_colored_obj(mesh, hard_assignment(predict_skinning(ck.model, mesh)), sk_out);
        }
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitOk;
}

}  // namespace sfpt
