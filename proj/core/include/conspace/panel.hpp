#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "conspace/cluster.hpp"
#include "conspace/complexity.hpp"
#include "conspace/geo.hpp"

namespace conspace {

struct TransactionRecord {
    std::string period;     // year+month label, e.g. "201906"
    std::string res_cell;
    std::string dest_cell;
    std::string amenity;    // small-level code
    std::string age_band;
    std::string gender;
    long long count = 0;
    double amount = 0.0;
};

std::vector<TransactionRecord> load_transactions_csv(const std::filesystem::path& path);
void write_transactions_csv(const std::vector<TransactionRecord>& records,
                            const std::filesystem::path& path);

// Period labels partitioned into pre-COVID / COVID / recovery groups.
// When a period is not listed explicitly it is grouped by its year prefix:
// <2020 pre-COVID, 2020-2022 COVID, >=2023 recovery.
struct PeriodGroups {
    std::set<std::string> pre_covid;
    std::set<std::string> covid;
    std::set<std::string> recovery;

    static PeriodGroups by_year(const std::set<std::string>& periods);

    bool is_covid(const std::string& period) const { return covid.count(period) > 0; }
    bool is_recovery(const std::string& period) const { return recovery.count(period) > 0; }
    std::string group_of(const std::string& period) const;
};

// Cell -> cluster mapping through the nearest assigned store.
struct CellClusterMap {
    std::map<std::string, int> cell_to_cluster;
    std::vector<std::string> unmapped_cells;  // sorted; nearest assigned store too far

    static CellClusterMap load_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;
};

// Maps every distinct cell referenced by the records (both residence and
// destination side) to the cluster of its nearest assigned store within
// max_km; cells beyond that are reported unmapped.
CellClusterMap map_cells_to_clusters(const std::vector<TransactionRecord>& records,
                                     const std::unordered_map<std::string, int>& membership,
                                     const StoreIndex& stores,
                                     const CellRegistry& registry,
                                     double max_km);

// Same mapping over an explicit cell set.
CellClusterMap map_cell_set_to_clusters(const std::set<std::string>& cells,
                                        const std::unordered_map<std::string, int>& membership,
                                        const StoreIndex& stores,
                                        const CellRegistry& registry,
                                        double max_km);

// A transaction re-keyed by cluster ids.
struct MappedRecord {
    int dest_cluster = 0;
    int res_cluster = 0;
    std::string amenity;
    std::string period;
    std::string age_band;
    std::string gender;
    std::string res_cell;
    long long count = 0;
};

struct MappedRecords {
    std::vector<MappedRecord> records;
    std::size_t dropped_records = 0;   // res or dest cell unmapped
    std::vector<std::string> unmapped_cells;
};

MappedRecords apply_cell_map(const std::vector<TransactionRecord>& records,
                             const CellClusterMap& map);

// Distance intervals, left-open / right-closed per the reporting convention.
inline constexpr std::array<const char*, 7> kDistanceIntervals = {
    "0", "(0,1]", "(1,2]", "(2,5]", "(5,10]", "(10,20]", ">20"};

std::string interval_of(double distance_km);

struct PanelRow {
    int dest_cluster = 0;       // shopping area i
    int res_cluster = 0;        // residence j
    std::string amenity;        // p
    std::string period;         // t
    long long count = 0;        // raw aggregated purchase count
    double omega = 0.0;         // raw relatedness density
    double distance_km = 0.0;
    std::string interval;
    int covid = 0;
    int recovery = 0;
    double y_std = 0.0;         // standardized on the build sample
    double omega_std = 0.0;
    double log_dist_std = 0.0;
};

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

struct Standardization {
    std::string sample_id;
    std::string log_mode;        // "log1p" or "log_positive"
    double dist_offset_km = 0.0;
    Moments y;
    Moments omega;
    Moments log_dist;
};

struct PanelConfig {
    std::string log_mode = "log1p";   // "log_positive" keeps only count > 0 rows
    double dist_offset_km = 0.025;    // half a 50m cell, keeps i == j rows finite
    std::string panel_mode = "observed";  // "dense" adds zero-count combinations
    PeriodGroups periods;
};

struct Panel {
    std::vector<PanelRow> rows;
    Standardization standardization;
};

// Cluster centroids keyed by cluster id, for (i, j) distances.
std::map<int, GeoPoint> cluster_centroids(const std::vector<AmenityCluster>& clusters);

Panel build_panel(const MappedRecords& records,
                  const OmegaTable& omega,
                  const std::map<int, GeoPoint>& centroids,
                  const PanelConfig& config);

// Partition of the panel rows over the seven distance intervals; every
// interval key is present, possibly with an empty vector.
std::map<std::string, std::vector<PanelRow>> split_by_interval(const Panel& panel);

void write_panel_csv(const Panel& panel, const std::filesystem::path& path);
Panel load_panel_csv(const std::filesystem::path& path);

void write_standardization_json(const Standardization& s, const std::filesystem::path& path);

}  // namespace conspace
