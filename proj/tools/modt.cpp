// modt: joint detection-and-tracking pipeline for LiDAR point clouds.
// Subcommands: synth, train, track, eval, gradcheck.
#include <CLI11.hpp>

#include <iostream>

#include "modt/cli.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitBadInput = 2;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D multi-object detection and tracking on LiDAR scans"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, ckpt_path, scan_dir;
    std::string tracks_path, gt_path, resume_path, log_csv, recall_csv;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;
    double dist_max_flag = 0.0;
    bool dist_max_given = false;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed_flag, "Override the config seed")
            ->each([&](const std::string&) { seed_given = true; });
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic scan sequence");
    synth->add_option("--config", config_path, "Config file")->required();
    synth->add_option("--out", out_path, "Output directory")->required();
    add_seed(synth);

    CLI::App* train = app.add_subcommand("train", "Train the pipeline on a scan directory");
    train->add_option("--config", config_path, "Config file")->required();
    train->add_option("--data", data_dir, "Scan directory with gt.txt")->required();
    train->add_option("--out", out_path, "Output checkpoint")->required();
    train->add_option("--resume", resume_path, "Resume from checkpoint");
    train->add_option("--log", log_csv, "Per-iteration loss CSV");
    add_seed(train);

    CLI::App* track = app.add_subcommand("track", "Run tracking inference");
    track->add_option("--config", config_path, "Config file")->required();
    track->add_option("--checkpoint", ckpt_path, "Model checkpoint")->required();
    track->add_option("--scans", scan_dir, "Scan directory")->required();
    track->add_option("--out", out_path, "Output track file")->required();

    CLI::App* eval = app.add_subcommand("eval", "Evaluate tracks against ground truth");
    eval->add_option("--tracks", tracks_path, "Track file")->required();
    eval->add_option("--gt", gt_path, "Ground-truth sidecar")->required();
    eval->add_option("--out", out_path, "Report key-value file");
    eval->add_option("--config", config_path, "Config file (for metrics.dist_max)");
    eval->add_option("--dist-max", dist_max_flag, "Matching distance (meters)")
        ->each([&](const std::string&) { dist_max_given = true; });
    eval->add_option("--csv", recall_csv, "Per-recall CSV");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gradcheck->add_option("--config", config_path, "Config file")->required();
    add_seed(gradcheck);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            modt::RunConfig cfg = modt::load_config(config_path);
            if (seed_given) cfg.scene_seed = seed_flag;
            modt::cli::run_synth(cfg, out_path);
        } else if (train->parsed()) {
            modt::RunConfig cfg = modt::load_config(config_path);
            if (seed_given) cfg.train.seed = seed_flag;
            modt::cli::run_train(cfg, data_dir, out_path, resume_path, log_csv);
        } else if (track->parsed()) {
            modt::RunConfig cfg = modt::load_config(config_path);
            modt::cli::run_track(cfg, ckpt_path, scan_dir, out_path);
        } else if (eval->parsed()) {
            double dist_max = 1.0;
            if (!config_path.empty()) dist_max = modt::load_config(config_path).metrics.dist_max;
            if (dist_max_given) dist_max = dist_max_flag;
            if (dist_max <= 0.0) throw modt::FormatError("dist-max must be > 0");
            modt::cli::run_eval(tracks_path, gt_path, out_path, dist_max, recall_csv);
        } else if (gradcheck->parsed()) {
            modt::RunConfig cfg = modt::load_config(config_path);
            std::uint64_t seed = seed_given ? seed_flag : cfg.train.seed;
            if (!modt::cli::run_gradcheck(cfg, seed, std::cout)) {
                std::cerr << "gradcheck: FAILED\n";
                return kExitRuntime;
            }
            std::cout << "gradcheck: all passed\n";
        }
    } catch (const modt::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
