#include "derain/cli.hpp"

#include "derain/metrics.hpp"
#include "derain/random.hpp"
#include "derain/weights.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace derain {

namespace fs = std::filesystem;

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> names(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!names.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read_field(const Json& j, const char* key, T& dst, const std::string& where)
{
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where + ": " +
                          j.at(key).dump());
    }
}

Json train_to_json(const TrainConfig& t)
{
    return Json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"patch_size", t.patch_size},
                {"lr", t.lr},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"poisson_peak", t.poisson_peak},
                {"val_fraction", t.val_fraction},
                {"base_channels", t.base_channels},
                {"patches_per_frame", t.patches_per_frame},
                {"source_rain", rain_params_to_json(t.source_rain)},
                {"target_rain", rain_params_to_json(t.target_rain)}};
}

TrainConfig train_from_json(const Json& j)
{
    const std::string where = "train";
    check_keys(j, {"epochs", "batch_size", "patch_size", "lr", "beta1", "beta2", "eps",
                   "poisson_peak", "val_fraction", "base_channels", "patches_per_frame",
                   "source_rain", "target_rain"},
               where);
    TrainConfig t;
    read_field(j, "epochs", t.epochs, where);
    read_field(j, "batch_size", t.batch_size, where);
    read_field(j, "patch_size", t.patch_size, where);
    read_field(j, "lr", t.lr, where);
    read_field(j, "beta1", t.beta1, where);
    read_field(j, "beta2", t.beta2, where);
    read_field(j, "eps", t.eps, where);
    read_field(j, "poisson_peak", t.poisson_peak, where);
    read_field(j, "val_fraction", t.val_fraction, where);
    read_field(j, "base_channels", t.base_channels, where);
    read_field(j, "patches_per_frame", t.patches_per_frame, where);
    if (j.contains("source_rain")) t.source_rain = rain_params_from_json(j["source_rain"], t.source_rain);
    if (j.contains("target_rain")) t.target_rain = rain_params_from_json(j["target_rain"], t.target_rain);
    return t;
}

void write_json(const fs::path& path, const Json& j)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void prepare_out_dir(const fs::path& out, const Json& resolved)
{
    fs::create_directories(out);
    fs::remove(out / "error.json");
    write_json(out / "config.resolved.json", resolved);
}

std::string sequence_name(const ExperimentConfig& cfg, std::size_t i)
{
    if (!cfg.clean_dirs.empty()) {
        auto name = cfg.clean_dirs[i].filename().string();
        if (name.empty()) name = cfg.clean_dirs[i].parent_path().filename().string();
        if (!name.empty()) return name;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%03zu", i);
    return buf;
}

std::string frame_file(const FrameSequence& seq, std::size_t i)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "frame_%06zu.%s", i, seq.shape().channels == 1 ? "pgm" : "ppm");
    return buf;
}

void write_weights_with_stage(const fs::path& path, const SpatialDenoiser<float>& spatial,
                              const TemporalDenoiser<float>* temporal, float stage, float epoch)
{
    Weights w;
    w.add("meta.stage", ag::Tensor::scalar(stage));
    w.add("meta.epoch", ag::Tensor::scalar(epoch));
    export_model(w, spatial);
    if (temporal) export_model(w, *temporal);
    save_weights(path, w);
}

std::string checkpoint_name(const char* stage, std::size_t epoch)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_epoch_%03zu.drlw", stage, epoch);
    return buf;
}

void require_finite_report(const TrainReport& report, const char* stage)
{
    for (const auto& r : report.epochs) {
        if (!std::isfinite(r.train_loss)) {
            throw std::runtime_error(std::string(stage) + " report has a non-finite loss");
        }
    }
}

DerainMode parse_mode(const std::string& s)
{
    if (s == "full") return DerainMode::full;
    if (s == "spatial-only") return DerainMode::spatial_only;
    throw std::invalid_argument("unknown mode '" + s + "' (expected spatial-only or full)");
}

TrainStage parse_stage(const std::string& s)
{
    if (s == "spatial") return TrainStage::spatial;
    if (s == "temporal") return TrainStage::temporal;
    if (s == "both") return TrainStage::both;
    throw std::invalid_argument("unknown stage '" + s + "' (expected spatial, temporal or both)");
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

Json rain_params_to_json(const RainParams& p)
{
    return Json{{"density_mean", p.density_mean},
                {"density_std", p.density_std},
                {"streak_length_px", p.streak_length_px},
                {"streak_width_px", p.streak_width_px},
                {"angle_deg", p.angle_deg},
                {"streak_intensity", p.streak_intensity},
                {"mist_sigma_px", p.mist_sigma_px},
                {"mist_alpha", p.mist_alpha},
                {"seed", p.seed}};
}

RainParams rain_params_from_json(const Json& j, RainParams base)
{
    const std::string where = "rain parameters";
    check_keys(j, {"density_mean", "density_std", "streak_length_px", "streak_width_px",
                   "angle_deg", "streak_intensity", "mist_sigma_px", "mist_alpha", "seed"},
               where);
    read_field(j, "density_mean", base.density_mean, where);
    read_field(j, "density_std", base.density_std, where);
    read_field(j, "streak_length_px", base.streak_length_px, where);
    read_field(j, "streak_width_px", base.streak_width_px, where);
    read_field(j, "angle_deg", base.angle_deg, where);
    read_field(j, "streak_intensity", base.streak_intensity, where);
    read_field(j, "mist_sigma_px", base.mist_sigma_px, where);
    read_field(j, "mist_alpha", base.mist_alpha, where);
    read_field(j, "seed", base.seed, where);
    base.validate();
    return base;
}

void ExperimentConfig::validate() const
{
    for (const auto& d : clean_dirs) {
        if (!fs::is_directory(d)) throw ConfigError("dataset directory does not exist: " + d.string());
    }
    if (clean_dirs.empty()) {
        if (synthetic.sequences < 1) throw ConfigError("synthetic.sequences must be >= 1");
        if (synthetic.scene.frames < 1) throw ConfigError("synthetic.frames must be >= 1");
    }
    if (out.empty()) throw ConfigError("output directory must not be empty");
    if (eval_densities.empty()) throw ConfigError("eval_densities must not be empty");
    for (const auto& d : eval_densities) {
        RainParams p = train.source_rain;
        p.density_mean = d.mean;
        p.density_std = d.std;
        p.validate();
    }
    synth_rain.validate();
    train.validate();
}

TrainConfig ExperimentConfig::resolved_train() const
{
    TrainConfig t = train;
    t.seed = derive_seed(seed, "train");
    return t;
}

Json config_to_json(const ExperimentConfig& cfg)
{
    Json dirs = Json::array();
    for (const auto& d : cfg.clean_dirs) dirs.push_back(d.string());
    Json densities = Json::array();
    for (const auto& d : cfg.eval_densities) densities.push_back({{"mean", d.mean}, {"std", d.std}});
    const auto& s = cfg.synthetic;
    return Json{{"seed", cfg.seed},
                {"out", cfg.out.string()},
                {"dataset", {{"clean_dirs", dirs}, {"pattern", cfg.pattern}}},
                {"synthetic",
                 {{"sequences", s.sequences},
                  {"height", s.scene.height},
                  {"width", s.scene.width},
                  {"channels", s.scene.channels},
                  {"frames", s.scene.frames},
                  {"objects", s.scene.objects},
                  {"max_speed_px", s.scene.max_speed_px}}},
                {"synth_rain", rain_params_to_json(cfg.synth_rain)},
                {"eval_densities", densities},
                {"train", train_to_json(cfg.train)}};
}

ExperimentConfig config_from_json(const Json& j)
{
    const std::string where = "experiment config";
    check_keys(j, {"seed", "out", "dataset", "synthetic", "synth_rain", "eval_densities", "train"},
               where);
    ExperimentConfig cfg;
    read_field(j, "seed", cfg.seed, where);
    if (j.contains("out")) {
        std::string out;
        read_field(j, "out", out, where);
        cfg.out = out;
    }
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        check_keys(d, {"clean_dirs", "pattern"}, "dataset");
        std::vector<std::string> dirs;
        read_field(d, "clean_dirs", dirs, "dataset");
        for (auto& s : dirs) cfg.clean_dirs.emplace_back(s);
        read_field(d, "pattern", cfg.pattern, "dataset");
    }
    if (j.contains("synthetic")) {
        const auto& s = j["synthetic"];
        check_keys(s, {"sequences", "height", "width", "channels", "frames", "objects", "max_speed_px"},
                   "synthetic");
        read_field(s, "sequences", cfg.synthetic.sequences, "synthetic");
        read_field(s, "height", cfg.synthetic.scene.height, "synthetic");
        read_field(s, "width", cfg.synthetic.scene.width, "synthetic");
        read_field(s, "channels", cfg.synthetic.scene.channels, "synthetic");
        read_field(s, "frames", cfg.synthetic.scene.frames, "synthetic");
        read_field(s, "objects", cfg.synthetic.scene.objects, "synthetic");
        read_field(s, "max_speed_px", cfg.synthetic.scene.max_speed_px, "synthetic");
    }
    if (j.contains("synth_rain")) cfg.synth_rain = rain_params_from_json(j["synth_rain"]);
    if (j.contains("eval_densities")) {
        const auto& arr = j["eval_densities"];
        if (!arr.is_array()) throw ConfigError("eval_densities must be an array");
        cfg.eval_densities.clear();
        for (const auto& e : arr) {
            check_keys(e, {"mean", "std"}, "eval_densities entry");
            EvalDensity d;
            read_field(e, "mean", d.mean, "eval_densities entry");
            read_field(e, "std", d.std, "eval_densities entry");
            cfg.eval_densities.push_back(d);
        }
    }
    if (j.contains("train")) cfg.train = train_from_json(j["train"]);
    return cfg;
}

ExperimentConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto cfg = config_from_json(j);
    // Dataset directories are relative to the config file.
    for (auto& d : cfg.clean_dirs) {
        if (d.is_relative()) d = path.parent_path() / d;
    }
    return cfg;
}

std::vector<FrameSequence> load_clean_data(const ExperimentConfig& cfg)
{
    std::vector<FrameSequence> data;
    if (!cfg.clean_dirs.empty()) {
        for (const auto& d : cfg.clean_dirs) {
            auto seq = load_sequence(d, cfg.pattern);
            for (std::size_t i = 0; i < seq.size(); ++i) seq[i].set_provenance(Provenance::clean);
            data.push_back(std::move(seq));
        }
        return data;
    }
    const auto data_seed = derive_seed(cfg.seed, "data");
    for (std::size_t i = 0; i < cfg.synthetic.sequences; ++i) {
        data.push_back(make_synthetic_sequence(cfg.synthetic.scene, derive_seed(data_seed, i)));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const ExperimentConfig& cfg)
{
    cfg.validate();
    prepare_out_dir(cfg.out, config_to_json(cfg));
    const auto data = load_clean_data(cfg);
    const auto synth_seed = derive_seed(cfg.seed, "synth");

    Json sequences = Json::array();
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto name = sequence_name(cfg, s);
        fs::path clean_dir;
        if (cfg.clean_dirs.empty()) {
            clean_dir = cfg.out / "clean" / name;
            save_sequence(data[s], clean_dir);
        } else {
            clean_dir = cfg.clean_dirs[s];
        }
        RainParams params = cfg.synth_rain;
        params.seed = derive_seed(synth_seed, s);
        const auto rainy = corrupt_sequence(data[s], params);
        const auto rainy_dir = cfg.out / "rainy" / name;
        save_sequence(rainy, rainy_dir);

        Json frames = Json::array();
        for (std::size_t i = 0; i < rainy.size(); ++i) {
            const auto layer_count = synthesize_rain_layer(data[s].shape(), params, i).streak_count;
            frames.push_back({{"frame_index", i},
                              {"clean", (clean_dir / frame_file(data[s], i)).string()},
                              {"rainy", (rainy_dir / frame_file(rainy, i)).string()},
                              {"rain_seed", params.seed},
                              {"streak_count", layer_count}});
        }
        sequences.push_back({{"name", name},
                             {"clean_dir", clean_dir.string()},
                             {"rainy_dir", rainy_dir.string()},
                             {"rain", rain_params_to_json(params)},
                             {"frames", frames}});
    }
    write_json(cfg.out / "manifest.json", Json{{"root_seed", cfg.seed}, {"sequences", sequences}});
}

void cmd_train(const ExperimentConfig& cfg, TrainStage stage,
               const std::optional<fs::path>& spatial_weights)
{
    cfg.validate();
    Json resolved = config_to_json(cfg);
    resolved["stage"] = stage == TrainStage::spatial ? "spatial"
                        : stage == TrainStage::temporal ? "temporal" : "both";
    if (spatial_weights) resolved["weights"] = spatial_weights->string();
    prepare_out_dir(cfg.out, resolved);
    const auto ckpt_dir = cfg.out / "checkpoints";
    fs::create_directories(ckpt_dir);

    const auto data = load_clean_data(cfg);
    const auto tc = cfg.resolved_train();

    std::optional<SpatialDenoiser<float>> spatial;
    if (stage == TrainStage::temporal) {
        const auto path = spatial_weights.value_or(cfg.out / "weights.drlw");
        const auto w = load_weights(path);
        if (!has_spatial(w)) throw std::runtime_error(path.string() + " holds no spatial network");
        spatial = import_spatial(w);
    } else {
        auto result = train_spatial(data, tc, [&](const EpochRecord& rec, const SpatialDenoiser<float>& net) {
            write_weights_with_stage(ckpt_dir / checkpoint_name("spatial", rec.epoch), net, nullptr,
                                     1.0f, static_cast<float>(rec.epoch));
        });
        require_finite_report(result.report, "spatial");
        write_report_csv(cfg.out / "train_spatial.csv", result.report);
        write_report_json(cfg.out / "train_spatial.json", result.report);
        spatial = std::move(result.model);
        write_weights_with_stage(cfg.out / "weights.drlw", *spatial, nullptr, 1.0f,
                                 static_cast<float>(tc.epochs));
    }

    if (stage == TrainStage::spatial) return;
    auto result = train_temporal(data, *spatial, tc, [&](const EpochRecord& rec, const TemporalDenoiser<float>& net) {
        write_weights_with_stage(ckpt_dir / checkpoint_name("temporal", rec.epoch), *spatial, &net,
                                 2.0f, static_cast<float>(rec.epoch));
    });
    require_finite_report(result.report, "temporal");
    write_report_csv(cfg.out / "train_temporal.csv", result.report);
    write_report_json(cfg.out / "train_temporal.json", result.report);
    write_weights_with_stage(cfg.out / "weights.drlw", *spatial, &result.model, 2.0f,
                             static_cast<float>(tc.epochs));
}

void cmd_derain(const fs::path& weights, const fs::path& input, const fs::path& out, DerainMode mode)
{
    const auto w = load_weights(weights);
    if (!has_spatial(w)) throw std::runtime_error(weights.string() + " holds no spatial network");
    if (mode == DerainMode::full && !has_temporal(w)) {
        throw std::runtime_error(weights.string() +
                                 " holds no temporal network; use --mode spatial-only");
    }
    auto seq = load_sequence(input);
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i].set_provenance(Provenance::rainy);
    prepare_out_dir(out, Json{{"command", "derain"},
                              {"weights", weights.string()},
                              {"input", input.string()},
                              {"out", out.string()},
                              {"mode", mode == DerainMode::full ? "full" : "spatial-only"}});
    const auto spatial = import_spatial(w);
    std::optional<TemporalDenoiser<float>> temporal;
    if (mode == DerainMode::full) temporal = import_temporal(w);
    const auto result = derain_sequence(spatial, temporal ? &*temporal : nullptr, seq, mode);
    save_sequence(result, out);
}

MetricReport cmd_eval(const fs::path& pred, const fs::path& ref, const fs::path& out)
{
    const auto p = load_sequence(pred);
    const auto r = load_sequence(ref);
    prepare_out_dir(out, Json{{"command", "eval"},
                              {"pred", pred.string()},
                              {"ref", ref.string()},
                              {"out", out.string()}});
    const auto report = evaluate_sequences(p, r);
    if (!std::isfinite(report.mean_ssim)) throw std::runtime_error("evaluation produced a non-finite SSIM");
    write_metric_csv(out / "metrics.csv", report);
    write_metric_json(out / "metrics.json", report);
    return report;
}

void cmd_table(const ExperimentConfig& cfg)
{
    cfg.validate();
    prepare_out_dir(cfg.out, config_to_json(cfg));
    const auto data = load_clean_data(cfg);
    const auto tc = cfg.resolved_train();

    auto stage1 = train_spatial(data, tc);
    auto stage2 = train_temporal(data, stage1.model, tc);
    require_finite_report(stage1.report, "spatial");
    require_finite_report(stage2.report, "temporal");
    write_report_csv(cfg.out / "train_spatial.csv", stage1.report);
    write_report_csv(cfg.out / "train_temporal.csv", stage2.report);
    write_weights_with_stage(cfg.out / "weights.drlw", stage1.model, &stage2.model, 2.0f,
                             static_cast<float>(tc.epochs));

    // Held-out sequences only; with a single sequence there is nothing held out.
    auto eval_indices = stage1.report.val_indices;
    if (eval_indices.empty()) eval_indices = stage1.report.train_indices;

    std::ostringstream csv;
    csv << kTableHeader << '\n';
    const auto eval_seed = derive_seed(cfg.seed, "eval");
    for (std::size_t d = 0; d < cfg.eval_densities.size(); ++d) {
        std::vector<MetricReport> without, with;
        for (auto idx : eval_indices) {
            RainParams p = tc.source_rain;
            p.density_mean = cfg.eval_densities[d].mean;
            p.density_std = cfg.eval_densities[d].std;
            p.seed = derive_seed(derive_seed(eval_seed, d), idx);
            const auto rainy = corrupt_sequence(data[idx], p);
            without.push_back(evaluate_sequences(
                derain_sequence(stage1.model, nullptr, rainy, DerainMode::spatial_only), data[idx]));
            with.push_back(evaluate_sequences(
                derain_sequence(stage1.model, &stage2.model, rainy, DerainMode::full), data[idx]));
        }
        const auto a = merge_reports(without);
        const auto b = merge_reports(with);
        for (double v : {a.mean_psnr_db, a.mean_ssim, b.mean_psnr_db, b.mean_ssim}) {
            if (!std::isfinite(v)) throw std::runtime_error("table produced a non-finite metric");
        }
        char line[256];
        std::snprintf(line, sizeof line, "%g,%.4f,%.6f,%.4f,%.6f\n", cfg.eval_densities[d].mean,
                      a.mean_psnr_db, a.mean_ssim, b.mean_psnr_db, b.mean_ssim);
        csv << line;
    }
    std::ofstream out(cfg.out / "table.csv");
    if (!out) throw std::runtime_error("cannot write table.csv");
    out << csv.str();
    if (!out) throw std::runtime_error("failed writing table.csv");
}

// ---------------------------------------------------------------------------
// Entry point

int run_cli(int argc, char** argv)
{
    CLI::App app{"Two-stage self-supervised video deraining"};
    app.require_subcommand(1);

    std::string config_path, out_dir, stage_name = "both", mode_name = "full";
    std::string weights_path, input_dir, pred_dir, ref_dir;
    std::optional<std::uint64_t> seed;

    auto add_experiment = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "root seed override");
        cmd->add_option("--out", out_dir, "output directory override");
    };
    auto* synth = app.add_subcommand("synth", "write rain-corrupted copies of clean sequences");
    add_experiment(synth);
    auto* train = app.add_subcommand("train", "train the spatial and/or temporal stage");
    add_experiment(train);
    train->add_option("--stage", stage_name, "spatial | temporal | both")
        ->check(CLI::IsMember({"spatial", "temporal", "both"}));
    train->add_option("--weights", weights_path, "spatial weights for --stage temporal");
    auto* derain = app.add_subcommand("derain", "derain a frame directory");
    derain->add_option("--weights", weights_path, "weights file")->required();
    derain->add_option("--input", input_dir, "directory of rainy frames")->required();
    derain->add_option("--out", out_dir, "output directory")->required();
    derain->add_option("--mode", mode_name, "spatial-only | full")
        ->check(CLI::IsMember({"spatial-only", "full"}));
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of predicted frames against references");
    eval->add_option("--pred", pred_dir, "predicted frames")->required();
    eval->add_option("--ref", ref_dir, "reference frames")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    auto* table = app.add_subcommand("table", "density x stage-2 ablation table");
    add_experiment(table);

    std::string command = "derain";
    fs::path error_dir;
    try {
        app.parse(argc, argv);
        command = app.get_subcommands().front()->get_name();

        auto experiment = [&] {
            ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
            if (seed) cfg.seed = *seed;
            if (!out_dir.empty()) cfg.out = out_dir;
            error_dir = cfg.out;
            return cfg;
        };
        if (!out_dir.empty()) error_dir = out_dir;

        if (command == "synth") {
            cmd_synth(experiment());
        } else if (command == "train") {
            std::optional<fs::path> w;
            if (!weights_path.empty()) w = weights_path;
            cmd_train(experiment(), parse_stage(stage_name), w);
        } else if (command == "derain") {
            cmd_derain(weights_path, input_dir, out_dir, parse_mode(mode_name));
        } else if (command == "eval") {
            cmd_eval(pred_dir, ref_dir, out_dir);
        } else if (command == "table") {
            cmd_table(experiment());
        }
        return 0;
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        const Json record{{"status", "error"}, {"command", command}, {"kind", "usage"}, {"message", e.what()}};
        std::cerr << record.dump() << '\n';
        return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
    } catch (const std::exception& e) {
        const char* kind = dynamic_cast<const ConfigError*>(&e)       ? "config"
                           : dynamic_cast<const TrainingDiverged*>(&e) ? "diverged"
                           : dynamic_cast<const std::invalid_argument*>(&e) ? "invalid_argument"
                                                                             : "runtime";
        const Json record{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", e.what()}};
        std::cerr << record.dump() << '\n';
        if (!error_dir.empty()) {
            std::error_code ec;
            fs::create_directories(error_dir, ec);
            std::ofstream out(error_dir / "error.json");
            if (out) out << record.dump(2) << '\n';
        }
        return 1;
    }
}

} // namespace derain
