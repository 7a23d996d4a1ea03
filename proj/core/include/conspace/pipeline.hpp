#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conspace/panel.hpp"
#include "conspace/regression.hpp"
#include "conspace/synth.hpp"

namespace conspace {

inline constexpr const char* kVersion = "0.1.0";

// One structured config file drives every stage; CLI flags override keys.
// Every run writes a metadata file echoing the resolved parameters.
struct PipelineConfig {
    std::filesystem::path out_dir = "out";
    std::filesystem::path stores_file;
    std::filesystem::path cells_file;
    std::filesystem::path transactions_file;
    std::filesystem::path profiles_file;

    // cluster detection
    double gamma = 7.58;
    double density_cutoff_km = 2.0;
    double peak_radius_km = 0.2;
    double max_assign_km = 0.8047;

    // consumption space
    std::string group_mode = "res_age_gender_area";  // or "res_age_gender"
    std::vector<std::string> phi_baseline_periods;   // empty: the pre-COVID group
    double space_edge_threshold = 0.4;
    int space_top_k = 10;

    // panel
    std::string log_mode = "log1p";
    double dist_offset_km = 0.025;
    std::string panel_mode = "observed";

    // regression
    double demean_tol = 1e-8;
    int demean_max_iter = 500;

    // typology
    int kmeans_k = 5;
    int kmeans_restarts = 16;
    std::uint64_t kmeans_seed = 7;

    // flows
    double flow_split_km = 1.0;

    // explicit period -> group assignment; periods not listed fall back to
    // the year rule (<2020 pre-COVID, 2020-2022 COVID, >=2023 recovery)
    std::map<std::string, std::string> period_group_overrides;

    SynthConfig synth;

    void validate() const;

    static PipelineConfig from_json_file(const std::filesystem::path& path);
    std::string to_json() const;

    PeriodGroups period_groups(const std::set<std::string>& periods) const;

    // Default input locations under out_dir (where `synth` writes them).
    std::filesystem::path stores_path() const;
    std::filesystem::path cells_path() const;
    std::filesystem::path transactions_path() const;
    std::filesystem::path profiles_path() const;
};

// Named regression specifications mirroring the reporting layout: the pooled
// interaction model, its period subsamples, the full interaction model, the
// per-distance-interval models and the per-cluster-type models.
std::vector<std::string> available_fit_specs();

// Stage runners; each writes its artifacts plus meta_<stage>.json under
// out_dir and throws on error.
void run_synth(const PipelineConfig& config);
void run_detect_clusters(const PipelineConfig& config);
void run_build_space(const PipelineConfig& config);
void run_build_panel(const PipelineConfig& config);
void run_fit(const PipelineConfig& config, const std::string& spec_name);
void run_marginal(const PipelineConfig& config, const std::string& spec_name);
void run_typology(const PipelineConfig& config);
void run_flows(const PipelineConfig& config);
void run_rank(const PipelineConfig& config);
void run_all(const PipelineConfig& config);

}  // namespace conspace
