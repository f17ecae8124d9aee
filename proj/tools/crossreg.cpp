// crossreg: register a drift-distorted street-view point cloud to georeferenced
// over-view building segments. Subcommands expose the individual pipeline stages;
// `run` chains them over the same on-disk artifacts, so the two ways of invoking
// the pipeline produce identical outputs.
//
// Exit codes: 0 success, 2 unusable input, 3 message passing diverged, 4 stage failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "crossreg/pipeline.hpp"
#include "crossreg/synthetic.hpp"

namespace {

struct CommonArgs {
    std::string out;
    std::string config;
    int threads = 1;
};

crossreg::PipelineConfig load_config(const CommonArgs& a) {
    return crossreg::parse_config(a.config);
}

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_config = true) {
    cmd->add_option("--out", a.out, "working directory for pipeline artifacts")->required();
    if (needs_config)
        cmd->add_option("--config", a.config, "pipeline configuration file")->required();
    cmd->add_option("--threads", a.threads, "worker pool size (deterministic at any value)")
        ->check(CLI::PositiveNumber);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"street-view to over-view registration pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    crossreg::PipelineInputs inputs;
    bool dump_instance = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene bundle");
    crossreg::SceneConfig scene_cfg;
    crossreg::DriftModel drift;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory for the bundle")->required();
    synth->add_option("--seed", scene_cfg.seed, "scene layout seed");
    synth->add_option("--buildings", scene_cfg.buildings, "number of buildings");
    synth->add_option("--loop-width", scene_cfg.loop_width, "trajectory loop width in meters");
    synth->add_option("--loop-height", scene_cfg.loop_height, "trajectory loop height in meters");
    synth->add_option("--facade-spacing", scene_cfg.facade_spacing, "facade sample spacing");
    synth->add_option("--ground-spacing", scene_cfg.ground_spacing, "ground sample spacing");
    synth->add_option("--overview-spacing", scene_cfg.overview_spacing,
                      "over-view sample spacing");
    synth->add_option("--drift-heading", drift.heading_rate_deg_per_m,
                      "heading drift, degrees per meter traveled");
    synth->add_option("--drift-translation", drift.translation_rate,
                      "along-track stretch, meters per meter");
    synth->add_option("--drift-vertical", drift.vertical_rate, "height ramp, meters per meter");
    synth->add_option("--noise", drift.noise_sigma, "iid point noise sigma in meters");
    synth->add_option("--noise-seed", drift.seed, "noise seed");

    auto* segment = app.add_subcommand("segment", "scale, level, and segment the street cloud");
    add_common(segment, args);
    segment->add_option("--street", inputs.street, "street-view cloud (.xyz or .ply)")->required();
    segment->add_option("--poses", inputs.poses, "camera poses riding along with the cloud");

    auto* match = app.add_subcommand("match", "assign street segments to over-view segments");
    add_common(match, args);
    match->add_option("--overview-polygons", inputs.overview_polygons,
                      "over-view building footprints (JSON rings)");
    match->add_option("--overview-mask", inputs.overview_mask,
                      "over-view building mask image (PGM or PNG)");
    match->add_option("--georef", inputs.overview_georef, "georeferencing for the mask");
    match->add_option("--overview-cloud", inputs.overview_cloud,
                      "over-view cloud supplying roof and ground heights");
    match->add_flag("--dump-instance", dump_instance,
                    "also write the labeling problem to instance.json");

    auto* reg = app.add_subcommand("register", "refine each matched segment's transform");
    add_common(reg, args);

    auto* adjust = app.add_subcommand("adjust", "blend per-segment transforms; optional pose adjustment");
    add_common(adjust, args);
    adjust->add_option("--observations", inputs.observations,
                       "image observations (pose track u v) enabling the adjustment");
    adjust->add_option("--tracks", inputs.tracks, "track id to cloud point index map");

    auto* evaluate = app.add_subcommand("evaluate", "chamfer statistics against a reference cloud");
    add_common(evaluate, args);
    std::string reference;
    evaluate->add_option("--reference", reference, "reference cloud, typically the over-view")
        ->required();

    auto* run = app.add_subcommand("run", "execute the full pipeline in one shot");
    add_common(run, args);
    run->add_option("--street", inputs.street, "street-view cloud (.xyz or .ply)")->required();
    run->add_option("--overview-polygons", inputs.overview_polygons,
                    "over-view building footprints (JSON rings)");
    run->add_option("--overview-mask", inputs.overview_mask, "over-view building mask image");
    run->add_option("--georef", inputs.overview_georef, "georeferencing for the mask");
    run->add_option("--overview-cloud", inputs.overview_cloud,
                    "over-view cloud supplying heights and the evaluation reference");
    run->add_option("--poses", inputs.poses, "camera poses riding along with the cloud");
    run->add_option("--observations", inputs.observations, "image observations for the adjustment");
    run->add_option("--tracks", inputs.tracks, "track id to cloud point index map");
    run->add_flag("--dump-instance", dump_instance, "also write the labeling problem");

    auto* config = app.add_subcommand("config", "print or write a commented configuration template");
    std::string config_out;
    config->add_option("--out", config_out, "write the template here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        scene_cfg.validate();
        drift.validate();
        crossreg::SyntheticScene scene = crossreg::generate_scene(scene_cfg);
        scene = crossreg::apply_drift(scene, drift);
        std::filesystem::create_directories(synth_out);
        crossreg::write_scene_bundle(scene, synth_out);
        double worst_rms = 0.0;
        for (double r : scene.truth_rms) worst_rms = std::max(worst_rms, r);
        std::cout << "scene: " << scene.buildings.size() << " buildings, "
                  << scene.street.size() << " street points, "
                  << scene.overview_cloud.size() << " over-view points, worst truth rms "
                  << worst_rms << "\n";
        return 0;
    }
    if (config->parsed()) {
        if (config_out.empty())
            std::cout << crossreg::config_template_text();
        else
            crossreg::write_config_template(config_out);
        return 0;
    }

    if (segment->parsed()) {
        const auto cfg = load_config(args);
        std::filesystem::create_directories(args.out);
        crossreg::run_stage("segment", [&] {
            crossreg::stage_segment(inputs.street, inputs.poses, cfg, args.out, args.threads);
        });
        return 0;
    }
    if (match->parsed()) {
        const auto cfg = load_config(args);
        bool converged = true;
        crossreg::run_stage("match", [&] {
            converged = crossreg::stage_match(args.out, inputs.overview_polygons,
                                              inputs.overview_mask, inputs.overview_georef,
                                              inputs.overview_cloud, cfg, args.threads,
                                              dump_instance);
        });
        if (!converged) {
            std::cerr << "match: message passing did not converge\n";
            return 3;
        }
        return 0;
    }
    if (reg->parsed()) {
        const auto cfg = load_config(args);
        crossreg::run_stage("register",
                            [&] { crossreg::stage_register(args.out, cfg, args.threads); });
        return 0;
    }
    if (adjust->parsed()) {
        const auto cfg = load_config(args);
        crossreg::run_stage("adjust", [&] {
            crossreg::stage_adjust(args.out, inputs.observations, inputs.tracks, cfg,
                                   args.threads);
        });
        return 0;
    }
    if (evaluate->parsed()) {
        const auto cfg = load_config(args);
        crossreg::run_stage("evaluate",
                            [&] { crossreg::stage_evaluate(args.out, reference, cfg); });
        return 0;
    }
    if (run->parsed()) {
        const auto cfg = load_config(args);
        crossreg::PipelineOptions opt;
        opt.threads = args.threads;
        opt.dump_instance = dump_instance;
        const int code = crossreg::run_pipeline(inputs, cfg, args.out, opt);
        if (code == 3) std::cerr << "run: message passing did not converge\n";
        return code;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const crossreg::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const crossreg::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
