// conspace: amenity clusters, consumption space, relatedness regressions and
// shopping-trip flow networks from gridded transaction data.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "conspace/pipeline.hpp"

namespace {

struct Overrides {
    std::optional<std::string> out_dir, stores, cells, transactions, profiles;
    std::optional<std::string> log_mode, panel_mode, group_mode;
    std::optional<double> gamma, cutoff, peak_radius, max_assign, threshold, split;
    std::optional<int> kmeans_k, kmeans_restarts;
    std::optional<std::uint64_t> kmeans_seed, synth_seed;
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& ov) {
    cmd->add_option("-c,--config", config_path, "JSON config file");
    cmd->add_option("-o,--out", ov.out_dir, "output directory (overrides config)");
    cmd->add_option("--stores", ov.stores, "store file");
    cmd->add_option("--cells", ov.cells, "cell registry file");
    cmd->add_option("--transactions", ov.transactions, "transaction file");
    cmd->add_option("--profiles", ov.profiles, "cluster profile file");
    cmd->add_option("--gamma", ov.gamma, "density decay rate per km");
    cmd->add_option("--density-cutoff-km", ov.cutoff, "density truncation radius");
    cmd->add_option("--peak-radius-km", ov.peak_radius, "peak neighborhood radius");
    cmd->add_option("--max-assign-km", ov.max_assign, "cluster assignment radius");
    cmd->add_option("--log-mode", ov.log_mode, "log1p or log_positive");
    cmd->add_option("--panel-mode", ov.panel_mode, "observed or dense");
    cmd->add_option("--group-mode", ov.group_mode,
                    "res_age_gender_area or res_age_gender");
    cmd->add_option("--edge-threshold", ov.threshold, "consumption-space edge threshold");
    cmd->add_option("--flow-split-km", ov.split, "local/remote trip split distance");
    cmd->add_option("--kmeans-k", ov.kmeans_k, "number of cluster types");
    cmd->add_option("--kmeans-restarts", ov.kmeans_restarts, "k-means restarts");
    cmd->add_option("--kmeans-seed", ov.kmeans_seed, "k-means master seed");
    cmd->add_option("--seed", ov.synth_seed, "synthetic generator seed");
}

conspace::PipelineConfig resolve(const std::string& config_path, const Overrides& ov) {
    conspace::PipelineConfig config;
    if (!config_path.empty()) {
        config = conspace::PipelineConfig::from_json_file(config_path);
    }
    if (ov.out_dir) config.out_dir = *ov.out_dir;
    if (ov.stores) config.stores_file = *ov.stores;
    if (ov.cells) config.cells_file = *ov.cells;
    if (ov.transactions) config.transactions_file = *ov.transactions;
    if (ov.profiles) config.profiles_file = *ov.profiles;
    if (ov.gamma) config.gamma = *ov.gamma;
    if (ov.cutoff) config.density_cutoff_km = *ov.cutoff;
    if (ov.peak_radius) config.peak_radius_km = *ov.peak_radius;
    if (ov.max_assign) config.max_assign_km = *ov.max_assign;
    if (ov.log_mode) config.log_mode = *ov.log_mode;
    if (ov.panel_mode) config.panel_mode = *ov.panel_mode;
    if (ov.group_mode) config.group_mode = *ov.group_mode;
    if (ov.threshold) config.space_edge_threshold = *ov.threshold;
    if (ov.split) config.flow_split_km = *ov.split;
    if (ov.kmeans_k) config.kmeans_k = *ov.kmeans_k;
    if (ov.kmeans_restarts) config.kmeans_restarts = *ov.kmeans_restarts;
    if (ov.kmeans_seed) config.kmeans_seed = *ov.kmeans_seed;
    if (ov.synth_seed) config.synth.seed = *ov.synth_seed;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conspace: spatial consumption analytics pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    std::string fit_spec = "eq6_pooled";
    std::string marginal_spec = "eq6_pooled";

    auto* synth = app.add_subcommand("synth", "generate a synthetic town with ground truth");
    auto* detect = app.add_subcommand("detect-clusters",
                                      "effective shop density, peaks, cluster partition");
    auto* space = app.add_subcommand("build-space",
                                     "RCA, proximity, relatedness density, graph export");
    auto* panel = app.add_subcommand("build-panel",
                                     "assemble the (i,j,p,t) regression panel");
    auto* fit = app.add_subcommand("fit", "fixed-effects regression for a named spec");
    fit->add_option("spec", fit_spec, "spec name (see error message for the list)");
    auto* marginal = app.add_subcommand("marginal",
                                        "marginal effect of relatedness over distance");
    marginal->add_option("spec", marginal_spec, "spec with an omega x log-distance term");
    auto* typology = app.add_subcommand("typology", "k-means cluster typology");
    auto* flows = app.add_subcommand("flows", "origin-destination flow networks per period");
    auto* rank = app.add_subcommand("rank", "distance-interval amenity ranking");
    auto* run_all_cmd = app.add_subcommand("run-all", "every stage in order");

    for (auto* cmd : {synth, detect, space, panel, fit, marginal, typology, flows,
                      rank, run_all_cmd}) {
        add_common(cmd, config_path, ov);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const conspace::PipelineConfig config = resolve(config_path, ov);
        if (synth->parsed()) conspace::run_synth(config);
        else if (detect->parsed()) conspace::run_detect_clusters(config);
        else if (space->parsed()) conspace::run_build_space(config);
        else if (panel->parsed()) conspace::run_build_panel(config);
        else if (fit->parsed()) conspace::run_fit(config, fit_spec);
        else if (marginal->parsed()) conspace::run_marginal(config, marginal_spec);
        else if (typology->parsed()) conspace::run_typology(config);
        else if (flows->parsed()) conspace::run_flows(config);
        else if (rank->parsed()) conspace::run_rank(config);
        else if (run_all_cmd->parsed()) conspace::run_all(config);
    } catch (const conspace::SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const conspace::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const conspace::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
