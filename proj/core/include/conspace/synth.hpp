#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "conspace/cluster.hpp"
#include "conspace/complexity.hpp"
#include "conspace/panel.hpp"
#include "conspace/typology.hpp"

namespace conspace {

// Planted regression truth. Counts are generated in log space as
//   mu = beta0 + b_omega*z(omega) + b_dist*z(logdist) + b_int*z(omega)z(logdist)
//      + b_covid*z(omega)Covid + b_recovery*z(omega)Recovery
//      + FE draws + period shift + noise
// and rounded half-to-even after expm1, so the fitted log-linear model is
// correctly specified up to rounding. omega is driven to a fixed point of
// the pipeline's own estimator, so the emitted data carries its regressor
// truth with it.
struct SynthTruth {
    double beta0 = 5.0;
    double beta_omega = 1.0;
    double beta_dist = -0.15;
    double beta_interaction = -0.12;
    double beta_covid = -0.08;
    double beta_recovery = -0.04;
    double noise_sd = 0.35;
    double fe_sd = 0.25;
    double group_spec_weight = 40.0;    // allocation weight of specialized amenities
    double x_density = 0.4;             // initial cluster specialization density
};

struct SynthBlocks {
    int n_blocks = 6;
    double within_intensity = 0.85;  // P(group specialized in an amenity of its block)
    double cross_intensity = 0.05;   // P(specialized outside its block)
};

struct SynthConfig {
    std::uint64_t seed = 20180601;
    int n_peaks = 20;
    int stores_per_peak = 100;
    double peak_spacing_km = 2.0;
    double store_scatter_sd_km = 0.15;  // truncated at 2.5 sd
    int n_amenities = 48;
    int n_residence_cells = 400;
    int dests_per_group = 3;  // own cluster plus this-1 remote clusters
    std::vector<std::string> age_bands = {"20s", "40s", "60s"};
    std::vector<std::string> genders = {"F", "M"};
    SynthBlocks blocks;
    SynthTruth truth;
    std::vector<std::string> periods = {"201906", "202006", "202106", "202206", "202306"};
    std::vector<double> period_shifts = {0.0, -0.30, -0.38, -0.25, -0.10};
    double cell_pitch_km = 0.05;
    double base_lat = 37.3;
    double base_lon = 127.0;
    // detection parameters, mirrored from the pipeline defaults
    double gamma = 7.58;
    double density_cutoff_km = 2.0;
    double peak_radius_km = 0.2;
    double max_assign_km = 0.8047;
    double dist_offset_km = 0.025;

    void validate() const;  // ConfigError naming the offending parameter
};

struct SynthWorld {
    std::vector<StorePoint> stores;
    CellRegistry cells;
    ClusterAssignment clusters;  // from running detection on the stores
    DensityField field;
    std::vector<ClusterProfile> profiles;  // keyed by detected cluster id

    std::vector<GeoPoint> peak_locations;               // planted
    std::unordered_map<std::string, int> store_to_peak; // store id -> planted peak
    std::vector<std::string> residence_cells;           // sorted cell ids
    std::map<std::string, int> residence_cell_peak;     // cell -> planted peak
    std::vector<int> detected_cluster_of_peak;          // planted peak -> cluster id
    std::map<int, char> planted_archetype;              // cluster id -> 'A'..'E'
    std::map<int, std::string> cluster_dest_cell;       // cluster id -> its peak's cell
};

struct GroundTruthManifest {
    std::uint64_t seed = 0;
    SynthTruth truth;
    std::vector<std::string> periods;
    std::vector<GeoPoint> peak_locations;
    std::map<std::string, int> store_to_peak;
    std::map<std::string, int> residence_cell_peak;
    std::vector<int> detected_cluster_of_peak;
    std::map<int, char> planted_archetype;
    std::map<std::string, int> amenity_block;
    Moments omega_moments;    // generator-side standardization of omega*
    Moments logdist_moments;  // and of log(distance + offset)
    Moments y_moments;        // of log1p(count) over the generated panel
    double phi_within_mean = 0.0;
    double phi_cross_mean = 0.0;
    double max_rounding_error = 0.0;  // max |log1p(count) - mu|
    double omega_consistency_error = 0.0;  // max |pipeline omega - regressor truth|
    int omega_rounds = 0;                  // fixed-point rounds used
    std::size_t n_groups = 0;
    std::string rounding_rule = "round-half-even(expm1(mu))";
};

struct SynthData {
    std::vector<TransactionRecord> records;
    OmegaTable planted_omega;
    GroundTruthManifest manifest;
};

SynthWorld gen_world(const SynthConfig& config);
SynthData gen_transactions(const SynthWorld& world, const SynthConfig& config);

void write_manifest_json(const GroundTruthManifest& manifest,
                         const std::filesystem::path& path);

// Writes every ingestion file the pipeline stages consume, plus the manifest:
// stores.csv, cells.csv, transactions.csv, profiles.csv, planted_omega.csv,
// manifest.json.
void write_synth_outputs(const SynthWorld& world, const SynthData& data,
                         const std::filesystem::path& out_dir);

}  // namespace conspace
