#include "conspace/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "conspace/csv.hpp"

namespace conspace {

std::vector<TransactionRecord> load_transactions_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"period", "res_cell", "dest_cell", "amenity_small",
                              "age_band", "gender", "count", "amount"});
    std::vector<TransactionRecord> records;
    while (auto row = reader.next()) {
        TransactionRecord r;
        r.period = (*row)[0];
        r.res_cell = (*row)[1];
        r.dest_cell = (*row)[2];
        r.amenity = (*row)[3];
        r.age_band = (*row)[4];
        r.gender = (*row)[5];
        r.count = reader.as_long(*row, 6);
        r.amount = reader.as_double(*row, 7);
        if (r.count < 0 || r.amount < 0) {
            throw SchemaError(path.string(), reader.line(), 7,
                              "count and amount must be nonnegative");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_transactions_csv(const std::vector<TransactionRecord>& records,
                            const std::filesystem::path& path) {
    csv::Writer w(path, {"period", "res_cell", "dest_cell", "amenity_small",
                         "age_band", "gender", "count", "amount"});
    for (const auto& r : records) {
        w.row({r.period, r.res_cell, r.dest_cell, r.amenity, r.age_band, r.gender,
               csv::format_long(r.count), csv::format_double(r.amount)});
    }
}

PeriodGroups PeriodGroups::by_year(const std::set<std::string>& periods) {
    PeriodGroups g;
    for (const auto& p : periods) {
        if (p.size() < 4) throw ConfigError("period label too short for year prefix: '" + p + "'");
        const int year = std::stoi(p.substr(0, 4));
        if (year < 2020) g.pre_covid.insert(p);
        else if (year <= 2022) g.covid.insert(p);
        else g.recovery.insert(p);
    }
    return g;
}

std::string PeriodGroups::group_of(const std::string& period) const {
    if (pre_covid.count(period)) return "pre_covid";
    if (covid.count(period)) return "covid";
    if (recovery.count(period)) return "recovery";
    throw MissingKeyError("period '" + period + "' not assigned to any group");
}

CellClusterMap CellClusterMap::load_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cell_id", "cluster_id"});
    CellClusterMap m;
    while (auto row = reader.next()) {
        m.cell_to_cluster[(*row)[0]] = static_cast<int>(reader.as_long(*row, 1));
    }
    return m;
}

void CellClusterMap::write_csv(const std::filesystem::path& path) const {
    csv::Writer w(path, {"cell_id", "cluster_id"});
    for (const auto& [cell, cluster] : cell_to_cluster) {
        w.row({cell, csv::format_long(cluster)});
    }
}

CellClusterMap map_cells_to_clusters(const std::vector<TransactionRecord>& records,
                                     const std::unordered_map<std::string, int>& membership,
                                     const StoreIndex& stores,
                                     const CellRegistry& registry,
                                     double max_km) {
    std::set<std::string> cells;
    for (const auto& r : records) {
        cells.insert(r.res_cell);
        cells.insert(r.dest_cell);
    }
    return map_cell_set_to_clusters(cells, membership, stores, registry, max_km);
}

CellClusterMap map_cell_set_to_clusters(const std::set<std::string>& cells,
                                        const std::unordered_map<std::string, int>& membership,
                                        const StoreIndex& stores,
                                        const CellRegistry& registry,
                                        double max_km) {
    if (membership.empty()) throw InvalidInputError("map_cells_to_clusters: empty membership");
    if (!(max_km > 0.0)) throw InvalidInputError("map_cells_to_clusters: max_km must be > 0");

    CellClusterMap out;
    for (const auto& cell : cells) {
        const GeoPoint& centroid = registry.at(cell);
        // Nearest assigned store within max_km; ties break on smaller store id.
        double best_d = std::numeric_limits<double>::infinity();
        const std::string* best_id = nullptr;
        int best_cluster = 0;
        for (std::size_t s : stores.within_radius(centroid, max_km)) {
            const auto& st = stores.store(s);
            const auto mem = membership.find(st.store_id);
            if (mem == membership.end()) continue;  // unassigned store
            const double d = haversine_km(centroid, st.location);
            if (best_id == nullptr || d < best_d
                || (d == best_d && st.store_id < *best_id)) {
                best_d = d;
                best_id = &st.store_id;
                best_cluster = mem->second;
            }
        }
        if (best_id == nullptr) {
            out.unmapped_cells.push_back(cell);
        } else {
            out.cell_to_cluster[cell] = best_cluster;
        }
    }
    return out;
}

MappedRecords apply_cell_map(const std::vector<TransactionRecord>& records,
                             const CellClusterMap& map) {
    MappedRecords out;
    out.unmapped_cells = map.unmapped_cells;
    out.records.reserve(records.size());
    for (const auto& r : records) {
        const auto dest = map.cell_to_cluster.find(r.dest_cell);
        const auto res = map.cell_to_cluster.find(r.res_cell);
        if (dest == map.cell_to_cluster.end() || res == map.cell_to_cluster.end()) {
            ++out.dropped_records;
            continue;
        }
        out.records.push_back({dest->second, res->second, r.amenity, r.period,
                               r.age_band, r.gender, r.res_cell, r.count});
    }
    return out;
}

std::string interval_of(double distance_km) {
    if (distance_km < 0.0 || !std::isfinite(distance_km)) {
        throw InvalidInputError("interval_of: distance must be finite and >= 0");
    }
    if (distance_km == 0.0) return "0";
    if (distance_km <= 1.0) return "(0,1]";
    if (distance_km <= 2.0) return "(1,2]";
    if (distance_km <= 5.0) return "(2,5]";
    if (distance_km <= 10.0) return "(5,10]";
    if (distance_km <= 20.0) return "(10,20]";
    return ">20";
}

std::map<int, GeoPoint> cluster_centroids(const std::vector<AmenityCluster>& clusters) {
    std::map<int, GeoPoint> out;
    for (const auto& c : clusters) out[c.cluster_id] = c.centroid;
    return out;
}

namespace {

Moments compute_moments(const std::vector<double>& xs, const std::string& name,
                        const std::string& sample_id) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    // Unbiased (n-1) scaling, matching the standardization report contract.
    const double sd = xs.size() > 1
        ? std::sqrt(ss / static_cast<double>(xs.size() - 1))
        : 0.0;
    if (!(sd > 0.0)) {
        throw DegenerateSampleError("standardization: variable '" + name
                                    + "' has zero variance in sample '" + sample_id + "'");
    }
    return {mean, sd};
}

const GeoPoint& centroid_of(const std::map<int, GeoPoint>& centroids, int cluster) {
    const auto it = centroids.find(cluster);
    if (it == centroids.end()) {
        throw MissingKeyError("no centroid for cluster " + std::to_string(cluster));
    }
    return it->second;
}

}  // namespace

Panel build_panel(const MappedRecords& records,
                  const OmegaTable& omega,
                  const std::map<int, GeoPoint>& centroids,
                  const PanelConfig& config) {
    if (records.records.empty()) throw InvalidInputError("build_panel: no mapped records");
    if (config.log_mode != "log1p" && config.log_mode != "log_positive") {
        throw ConfigError("log_mode must be 'log1p' or 'log_positive', got '"
                          + config.log_mode + "'");
    }
    if (config.panel_mode != "observed" && config.panel_mode != "dense") {
        throw ConfigError("panel_mode must be 'observed' or 'dense', got '"
                          + config.panel_mode + "'");
    }

    // Aggregate counts over demographics and cells to (i, j, p, t).
    std::map<std::tuple<int, int, std::string, std::string>, long long> cells;
    std::set<int> dest_ids, res_ids;
    std::set<std::string> amenities, periods;
    for (const auto& r : records.records) {
        cells[{r.dest_cluster, r.res_cluster, r.amenity, r.period}] += r.count;
        dest_ids.insert(r.dest_cluster);
        res_ids.insert(r.res_cluster);
        amenities.insert(r.amenity);
        periods.insert(r.period);
    }
    if (config.panel_mode == "dense") {
        for (int i : dest_ids)
            for (int j : res_ids)
                for (const auto& p : amenities)
                    for (const auto& t : periods)
                        cells.try_emplace({i, j, p, t}, 0);
    }

    Panel panel;
    panel.rows.reserve(cells.size());
    for (const auto& [key, count] : cells) {
        const auto& [i, j, p, t] = key;
        if (config.log_mode == "log_positive" && count <= 0) continue;
        PanelRow row;
        row.dest_cluster = i;
        row.res_cluster = j;
        row.amenity = p;
        row.period = t;
        row.count = count;
        row.omega = omega.at(i, p, t);
        row.distance_km = i == j
            ? 0.0
            : haversine_km(centroid_of(centroids, i), centroid_of(centroids, j));
        row.interval = interval_of(row.distance_km);
        row.covid = config.periods.is_covid(t) ? 1 : 0;
        row.recovery = config.periods.is_recovery(t) ? 1 : 0;
        panel.rows.push_back(std::move(row));
    }

    // Standardization moments on this (build) sample.
    std::vector<double> y_raw, omega_raw, logdist_raw;
    y_raw.reserve(panel.rows.size());
    omega_raw.reserve(panel.rows.size());
    logdist_raw.reserve(panel.rows.size());
    for (const auto& r : panel.rows) {
        y_raw.push_back(config.log_mode == "log1p"
                        ? std::log1p(static_cast<double>(r.count))
                        : std::log(static_cast<double>(r.count)));
        omega_raw.push_back(r.omega);
        logdist_raw.push_back(std::log(r.distance_km + config.dist_offset_km));
    }

    auto& s = panel.standardization;
    s.sample_id = "build";
    s.log_mode = config.log_mode;
    s.dist_offset_km = config.dist_offset_km;
    s.y = compute_moments(y_raw, "y", s.sample_id);
    s.omega = compute_moments(omega_raw, "omega", s.sample_id);
    s.log_dist = compute_moments(logdist_raw, "log_dist", s.sample_id);

    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        panel.rows[r].y_std = (y_raw[r] - s.y.mean) / s.y.sd;
        panel.rows[r].omega_std = (omega_raw[r] - s.omega.mean) / s.omega.sd;
        panel.rows[r].log_dist_std = (logdist_raw[r] - s.log_dist.mean) / s.log_dist.sd;
    }
    return panel;
}

std::map<std::string, std::vector<PanelRow>> split_by_interval(const Panel& panel) {
    if (panel.rows.empty()) throw InvalidInputError("split_by_interval: empty panel");
    std::map<std::string, std::vector<PanelRow>> parts;
    for (const char* name : kDistanceIntervals) parts[name];
    for (const auto& row : panel.rows) parts.at(row.interval).push_back(row);
    return parts;
}

void write_panel_csv(const Panel& panel, const std::filesystem::path& path) {
    csv::Writer w(path, {"dest_cluster", "res_cluster", "amenity", "period", "count",
                         "omega", "distance_km", "interval", "covid", "recovery",
                         "y_std", "omega_std", "log_dist_std"});
    for (const auto& r : panel.rows) {
        w.row({csv::format_long(r.dest_cluster), csv::format_long(r.res_cluster),
               r.amenity, r.period, csv::format_long(r.count),
               csv::format_double(r.omega), csv::format_double(r.distance_km),
               r.interval, csv::format_long(r.covid), csv::format_long(r.recovery),
               csv::format_double(r.y_std), csv::format_double(r.omega_std),
               csv::format_double(r.log_dist_std)});
    }
}

Panel load_panel_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"dest_cluster", "res_cluster", "amenity", "period", "count",
                              "omega", "distance_km", "interval", "covid", "recovery",
                              "y_std", "omega_std", "log_dist_std"});
    Panel panel;
    while (auto row = reader.next()) {
        PanelRow r;
        r.dest_cluster = static_cast<int>(reader.as_long(*row, 0));
        r.res_cluster = static_cast<int>(reader.as_long(*row, 1));
        r.amenity = (*row)[2];
        r.period = (*row)[3];
        r.count = reader.as_long(*row, 4);
        r.omega = reader.as_double(*row, 5);
        r.distance_km = reader.as_double(*row, 6);
        r.interval = (*row)[7];
        r.covid = static_cast<int>(reader.as_long(*row, 8));
        r.recovery = static_cast<int>(reader.as_long(*row, 9));
        r.y_std = reader.as_double(*row, 10);
        r.omega_std = reader.as_double(*row, 11);
        r.log_dist_std = reader.as_double(*row, 12);
        panel.rows.push_back(std::move(r));
    }
    return panel;
}

void write_standardization_json(const Standardization& s, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["sample_id"] = s.sample_id;
    j["log_mode"] = s.log_mode;
    j["dist_offset_km"] = s.dist_offset_km;
    j["y"] = {{"mean", s.y.mean}, {"sd", s.y.sd}};
    j["omega"] = {{"mean", s.omega.mean}, {"sd", s.omega.sd}};
    j["log_dist"] = {{"mean", s.log_dist.mean}, {"sd", s.log_dist.sd}};
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot open output file: " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace conspace
