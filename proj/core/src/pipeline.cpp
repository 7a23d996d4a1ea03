#include "conspace/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "conspace/csv.hpp"
#include "conspace/typology.hpp"

namespace conspace {

namespace {

using nlohmann::ordered_json;

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    long long ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Run metadata sidecar; the only artifact that may carry timestamps.
void write_meta(const PipelineConfig& config, const std::string& stage,
                const StageTimer& timer, ordered_json extras) {
    ordered_json j;
    j["stage"] = stage;
    j["version"] = kVersion;
    j["timestamp_utc"] = utc_now();
    j["elapsed_ms"] = timer.ms();
    j["config"] = ordered_json::parse(config.to_json());
    for (auto& [key, value] : extras.items()) j[key] = std::move(value);
    std::filesystem::create_directories(config.out_dir);
    std::ofstream out(config.out_dir / ("meta_" + stage + ".json"));
    if (!out) throw InvalidInputError("cannot write metadata for stage " + stage);
    out << j.dump(2) << '\n';
}

void require_file(const std::filesystem::path& path, const std::string& role) {
    if (!std::filesystem::exists(path)) {
        throw InvalidInputError("missing " + role + " file: " + path.string());
    }
}

struct Inputs {
    std::vector<StorePoint> stores;
    CellRegistry cells;
    std::vector<AmenityCluster> clusters;
    std::unordered_map<std::string, int> membership;
    std::vector<TransactionRecord> transactions;
};

Inputs load_mapping_inputs(const PipelineConfig& config, bool with_transactions) {
    Inputs in;
    require_file(config.stores_path(), "store");
    require_file(config.cells_path(), "cell registry");
    require_file(config.out_dir / "clusters.csv", "cluster");
    require_file(config.out_dir / "membership.csv", "membership");
    in.stores = load_stores_csv(config.stores_path());
    in.cells = CellRegistry::load_csv(config.cells_path());
    in.clusters = load_clusters_csv(config.out_dir / "clusters.csv");
    in.membership = load_membership_csv(config.out_dir / "membership.csv");
    if (with_transactions) {
        require_file(config.transactions_path(), "transaction");
        in.transactions = load_transactions_csv(config.transactions_path());
    }
    return in;
}

MappedRecords mapped_records_of(const Inputs& in, const PipelineConfig& config,
                                CellClusterMap* map_out = nullptr) {
    StoreIndex index(in.stores);
    CellClusterMap map = map_cells_to_clusters(in.transactions, in.membership, index,
                                               in.cells, config.max_assign_km);
    MappedRecords mapped = apply_cell_map(in.transactions, map);
    if (map_out) *map_out = std::move(map);
    return mapped;
}

std::set<std::string> periods_of(const std::vector<TransactionRecord>& records) {
    std::set<std::string> periods;
    for (const auto& r : records) periods.insert(r.period);
    return periods;
}

}  // namespace

std::filesystem::path PipelineConfig::stores_path() const {
    return stores_file.empty() ? out_dir / "stores.csv" : stores_file;
}
std::filesystem::path PipelineConfig::cells_path() const {
    return cells_file.empty() ? out_dir / "cells.csv" : cells_file;
}
std::filesystem::path PipelineConfig::transactions_path() const {
    return transactions_file.empty() ? out_dir / "transactions.csv" : transactions_file;
}
std::filesystem::path PipelineConfig::profiles_path() const {
    return profiles_file.empty() ? out_dir / "profiles.csv" : profiles_file;
}

void PipelineConfig::validate() const {
    auto in_range = [](double v, double lo, double hi, const char* name) {
        if (!(v >= lo) || !(v <= hi)) {
            throw ConfigError(std::string(name) + " must be in [" + std::to_string(lo)
                              + ", " + std::to_string(hi) + "], got " + std::to_string(v));
        }
    };
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) {
            throw ConfigError(std::string(name) + " must be > 0, got " + std::to_string(v));
        }
    };
    positive(gamma, "gamma");
    positive(density_cutoff_km, "density_cutoff_km");
    positive(peak_radius_km, "peak_radius_km");
    positive(max_assign_km, "max_assign_km");
    positive(dist_offset_km, "dist_offset_km");
    positive(demean_tol, "demean_tol");
    positive(flow_split_km, "flow_split_km");
    in_range(space_edge_threshold, 0.0, 1.0, "space_edge_threshold");
    if (space_top_k < 1) throw ConfigError("space_top_k must be >= 1");
    if (demean_max_iter < 1) throw ConfigError("demean_max_iter must be >= 1");
    if (kmeans_k < 1 || kmeans_k > 26) throw ConfigError("kmeans_k must be in [1, 26]");
    if (kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be >= 1");
    if (log_mode != "log1p" && log_mode != "log_positive") {
        throw ConfigError("log_mode must be 'log1p' or 'log_positive'");
    }
    if (panel_mode != "observed" && panel_mode != "dense") {
        throw ConfigError("panel_mode must be 'observed' or 'dense'");
    }
    if (group_mode != "res_age_gender_area" && group_mode != "res_age_gender") {
        throw ConfigError("group_mode must be 'res_age_gender_area' or 'res_age_gender'");
    }
    for (const auto& [period, group] : period_group_overrides) {
        if (group != "pre_covid" && group != "covid" && group != "recovery") {
            throw ConfigError("period_group_overrides['" + period
                              + "'] must be pre_covid, covid or recovery");
        }
    }
    synth.validate();
}

PeriodGroups PipelineConfig::period_groups(const std::set<std::string>& periods) const {
    PeriodGroups groups = PeriodGroups::by_year(periods);
    for (const auto& [period, group] : period_group_overrides) {
        if (!periods.count(period)) continue;
        groups.pre_covid.erase(period);
        groups.covid.erase(period);
        groups.recovery.erase(period);
        if (group == "pre_covid") groups.pre_covid.insert(period);
        else if (group == "covid") groups.covid.insert(period);
        else groups.recovery.insert(period);
    }
    return groups;
}

namespace {

void apply_json(PipelineConfig& config, const nlohmann::json& j,
                const std::string& path) {
    for (const auto& [key, value] : j.items()) {
        if (key == "out_dir") config.out_dir = value.get<std::string>();
        else if (key == "stores_file") config.stores_file = value.get<std::string>();
        else if (key == "cells_file") config.cells_file = value.get<std::string>();
        else if (key == "transactions_file") config.transactions_file = value.get<std::string>();
        else if (key == "profiles_file") config.profiles_file = value.get<std::string>();
        else if (key == "gamma") config.gamma = value.get<double>();
        else if (key == "density_cutoff_km") config.density_cutoff_km = value.get<double>();
        else if (key == "peak_radius_km") config.peak_radius_km = value.get<double>();
        else if (key == "max_assign_km") config.max_assign_km = value.get<double>();
        else if (key == "group_mode") config.group_mode = value.get<std::string>();
        else if (key == "phi_baseline_periods") {
            config.phi_baseline_periods = value.get<std::vector<std::string>>();
        } else if (key == "space_edge_threshold") {
            config.space_edge_threshold = value.get<double>();
        } else if (key == "space_top_k") config.space_top_k = value.get<int>();
        else if (key == "log_mode") config.log_mode = value.get<std::string>();
        else if (key == "dist_offset_km") config.dist_offset_km = value.get<double>();
        else if (key == "panel_mode") config.panel_mode = value.get<std::string>();
        else if (key == "demean_tol") config.demean_tol = value.get<double>();
        else if (key == "demean_max_iter") config.demean_max_iter = value.get<int>();
        else if (key == "kmeans_k") config.kmeans_k = value.get<int>();
        else if (key == "kmeans_restarts") config.kmeans_restarts = value.get<int>();
        else if (key == "kmeans_seed") config.kmeans_seed = value.get<std::uint64_t>();
        else if (key == "flow_split_km") config.flow_split_km = value.get<double>();
        else if (key == "period_group_overrides") {
            for (const auto& [period, group] : value.items()) {
                config.period_group_overrides[period] = group.get<std::string>();
            }
        } else if (key == "synth") {
            auto& s = config.synth;
            for (const auto& [skey, sval] : value.items()) {
                if (skey == "seed") s.seed = sval.get<std::uint64_t>();
                else if (skey == "n_peaks") s.n_peaks = sval.get<int>();
                else if (skey == "stores_per_peak") s.stores_per_peak = sval.get<int>();
                else if (skey == "peak_spacing_km") s.peak_spacing_km = sval.get<double>();
                else if (skey == "store_scatter_sd_km") s.store_scatter_sd_km = sval.get<double>();
                else if (skey == "n_amenities") s.n_amenities = sval.get<int>();
                else if (skey == "n_residence_cells") s.n_residence_cells = sval.get<int>();
                else if (skey == "dests_per_group") s.dests_per_group = sval.get<int>();
                else if (skey == "age_bands") s.age_bands = sval.get<std::vector<std::string>>();
                else if (skey == "genders") s.genders = sval.get<std::vector<std::string>>();
                else if (skey == "periods") s.periods = sval.get<std::vector<std::string>>();
                else if (skey == "period_shifts") s.period_shifts = sval.get<std::vector<double>>();
                else if (skey == "cell_pitch_km") s.cell_pitch_km = sval.get<double>();
                else if (skey == "base_lat") s.base_lat = sval.get<double>();
                else if (skey == "base_lon") s.base_lon = sval.get<double>();
                else if (skey == "n_blocks") s.blocks.n_blocks = sval.get<int>();
                else if (skey == "within_intensity") s.blocks.within_intensity = sval.get<double>();
                else if (skey == "cross_intensity") s.blocks.cross_intensity = sval.get<double>();
                else if (skey == "beta0") s.truth.beta0 = sval.get<double>();
                else if (skey == "beta_omega") s.truth.beta_omega = sval.get<double>();
                else if (skey == "beta_dist") s.truth.beta_dist = sval.get<double>();
                else if (skey == "beta_interaction") s.truth.beta_interaction = sval.get<double>();
                else if (skey == "beta_covid") s.truth.beta_covid = sval.get<double>();
                else if (skey == "beta_recovery") s.truth.beta_recovery = sval.get<double>();
                else if (skey == "noise_sd") s.truth.noise_sd = sval.get<double>();
                else if (skey == "fe_sd") s.truth.fe_sd = sval.get<double>();
                else if (skey == "group_spec_weight") {
                    s.truth.group_spec_weight = sval.get<double>();
                } else if (skey == "x_density") s.truth.x_density = sval.get<double>();
                else {
                    throw ConfigError(path + ": unknown synth config key '" + skey + "'");
                }
            }
        } else {
            throw ConfigError(path + ": unknown config key '" + key + "'");
        }
    }
}

}  // namespace

PipelineConfig PipelineConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    PipelineConfig config;
    apply_json(config, j, path.string());
    return config;
}

std::string PipelineConfig::to_json() const {
    ordered_json j;
    j["out_dir"] = out_dir.string();
    j["stores_file"] = stores_file.string();
    j["cells_file"] = cells_file.string();
    j["transactions_file"] = transactions_file.string();
    j["profiles_file"] = profiles_file.string();
    j["gamma"] = gamma;
    j["density_cutoff_km"] = density_cutoff_km;
    j["peak_radius_km"] = peak_radius_km;
    j["max_assign_km"] = max_assign_km;
    j["group_mode"] = group_mode;
    j["phi_baseline_periods"] = phi_baseline_periods;
    j["space_edge_threshold"] = space_edge_threshold;
    j["space_top_k"] = space_top_k;
    j["log_mode"] = log_mode;
    j["dist_offset_km"] = dist_offset_km;
    j["panel_mode"] = panel_mode;
    j["demean_tol"] = demean_tol;
    j["demean_max_iter"] = demean_max_iter;
    j["kmeans_k"] = kmeans_k;
    j["kmeans_restarts"] = kmeans_restarts;
    j["kmeans_seed"] = kmeans_seed;
    j["flow_split_km"] = flow_split_km;
    j["period_group_overrides"] = period_group_overrides;
    j["synth"] = {
        {"seed", synth.seed},
        {"n_peaks", synth.n_peaks},
        {"stores_per_peak", synth.stores_per_peak},
        {"peak_spacing_km", synth.peak_spacing_km},
        {"store_scatter_sd_km", synth.store_scatter_sd_km},
        {"n_amenities", synth.n_amenities},
        {"n_residence_cells", synth.n_residence_cells},
        {"dests_per_group", synth.dests_per_group},
        {"age_bands", synth.age_bands},
        {"genders", synth.genders},
        {"periods", synth.periods},
        {"period_shifts", synth.period_shifts},
        {"cell_pitch_km", synth.cell_pitch_km},
        {"base_lat", synth.base_lat},
        {"base_lon", synth.base_lon},
        {"n_blocks", synth.blocks.n_blocks},
        {"within_intensity", synth.blocks.within_intensity},
        {"cross_intensity", synth.blocks.cross_intensity},
        {"beta0", synth.truth.beta0},
        {"beta_omega", synth.truth.beta_omega},
        {"beta_dist", synth.truth.beta_dist},
        {"beta_interaction", synth.truth.beta_interaction},
        {"beta_covid", synth.truth.beta_covid},
        {"beta_recovery", synth.truth.beta_recovery},
        {"noise_sd", synth.truth.noise_sd},
        {"fe_sd", synth.truth.fe_sd},
        {"group_spec_weight", synth.truth.group_spec_weight},
        {"x_density", synth.truth.x_density},
    };
    return j.dump(2);
}

std::vector<std::string> available_fit_specs() {
    return {"eq6_pooled", "eq6_precovid", "eq6_covid", "eq6_recovery", "eq_full",
            "eq7_interval_0", "eq7_interval_0_1", "eq7_interval_1_2", "eq7_interval_2_5",
            "eq7_interval_5_10", "eq7_interval_10_20", "eq7_interval_20plus",
            "eq7_type_A", "eq7_type_B", "eq7_type_C", "eq7_type_D", "eq7_type_E"};
}

namespace {

const std::map<std::string, std::string>& interval_suffixes() {
    static const std::map<std::string, std::string> m = {
        {"0", "0"},         {"0_1", "(0,1]"},   {"1_2", "(1,2]"},  {"2_5", "(2,5]"},
        {"5_10", "(5,10]"}, {"10_20", "(10,20]"}, {"20plus", ">20"}};
    return m;
}

// Resolve a named spec against the panel: selects the subsample and builds
// the regressor/FE lists.
struct ResolvedSpec {
    RegressionSpec spec;
    Panel sample;
};

ResolvedSpec resolve_spec(const PipelineConfig& config, const std::string& name,
                          const Panel& panel) {
    ResolvedSpec out;
    out.spec.name = name;
    out.spec.tol = config.demean_tol;
    out.spec.max_iter = config.demean_max_iter;
    out.sample.standardization = panel.standardization;

    const std::vector<std::string> fe_all = {"dest", "res", "amenity", "period"};
    const std::vector<std::string> fe_no_period = {"dest", "res", "amenity"};

    auto copy_rows = [&](auto&& keep) {
        for (const auto& row : panel.rows) {
            if (keep(row)) out.sample.rows.push_back(row);
        }
    };

    if (name == "eq6_pooled" || name == "eq_full") {
        out.spec.regressors = name == "eq_full"
            ? std::vector<std::string>{"omega", "log_dist", "omega_x_logdist",
                                       "omega_x_covid", "omega_x_recovery"}
            : std::vector<std::string>{"omega", "log_dist", "omega_x_logdist"};
        out.spec.fixed_effects = fe_all;
        copy_rows([](const PanelRow&) { return true; });
    } else if (name == "eq6_precovid" || name == "eq6_covid" || name == "eq6_recovery") {
        out.spec.regressors = {"omega", "log_dist", "omega_x_logdist"};
        if (name == "eq6_precovid") {
            out.spec.fixed_effects = fe_no_period;
            copy_rows([](const PanelRow& r) { return r.covid == 0 && r.recovery == 0; });
        } else if (name == "eq6_covid") {
            out.spec.fixed_effects = fe_all;
            copy_rows([](const PanelRow& r) { return r.covid == 1; });
        } else {
            out.spec.fixed_effects = fe_no_period;
            copy_rows([](const PanelRow& r) { return r.recovery == 1; });
        }
    } else if (name.rfind("eq7_interval_", 0) == 0) {
        const std::string suffix = name.substr(std::string("eq7_interval_").size());
        const auto it = interval_suffixes().find(suffix);
        if (it == interval_suffixes().end()) {
            throw InvalidInputError("unknown interval spec '" + name + "'");
        }
        const std::string& interval = it->second;
        // The 0 km model has no distance regressor: within the same cluster
        // the distance column is constant.
        out.spec.regressors = interval == "0"
            ? std::vector<std::string>{"omega", "omega_x_covid", "omega_x_recovery"}
            : std::vector<std::string>{"omega", "log_dist", "omega_x_covid",
                                       "omega_x_recovery"};
        out.spec.fixed_effects = fe_all;
        copy_rows([&](const PanelRow& r) { return r.interval == interval; });
    } else if (name.rfind("eq7_type_", 0) == 0) {
        const std::string suffix = name.substr(std::string("eq7_type_").size());
        if (suffix.size() != 1 || suffix[0] < 'A' || suffix[0] > 'Z') {
            throw InvalidInputError("unknown type spec '" + name + "'");
        }
        const auto types_path = config.out_dir / "types.csv";
        require_file(types_path, "cluster-type (run typology first)");
        const auto types = load_types_csv(types_path);
        const char type = suffix[0];
        out.spec.regressors = {"omega", "log_dist", "omega_x_covid", "omega_x_recovery"};
        out.spec.fixed_effects = fe_all;
        copy_rows([&](const PanelRow& r) {
            const auto it2 = types.find(r.dest_cluster);
            return it2 != types.end() && it2->second == type;
        });
    } else {
        std::string specs;
        for (const auto& s : available_fit_specs()) {
            if (!specs.empty()) specs += ", ";
            specs += s;
        }
        throw InvalidInputError("unknown fit spec '" + name + "'; available: " + specs);
    }

    if (out.sample.rows.empty()) {
        throw InvalidInputError("fit '" + name + "': empty subsample");
    }
    return out;
}

}  // namespace

void run_synth(const PipelineConfig& config) {
    StageTimer timer;
    config.synth.validate();
    const SynthWorld world = gen_world(config.synth);
    const SynthData data = gen_transactions(world, config.synth);
    write_synth_outputs(world, data, config.out_dir);
    write_meta(config, "synth", timer,
               {{"n_stores", world.stores.size()},
                {"n_cells", world.cells.size()},
                {"n_clusters", world.clusters.clusters.size()},
                {"n_residence_cells", world.residence_cells.size()},
                {"n_records", data.records.size()},
                {"n_groups", data.manifest.n_groups},
                {"max_rounding_error", data.manifest.max_rounding_error}});
}

void run_detect_clusters(const PipelineConfig& config) {
    StageTimer timer;
    require_file(config.stores_path(), "store");
    const auto stores = load_stores_csv(config.stores_path());
    StoreIndex index(stores);
    const DensityField field = effective_density(index, config.gamma, config.density_cutoff_km);
    const auto peaks = find_peaks(field, index, config.peak_radius_km);
    const ClusterAssignment assignment =
        assign_clusters(index, peaks, field, config.max_assign_km);

    std::filesystem::create_directories(config.out_dir);
    {
        csv::Writer w(config.out_dir / "density.csv", {"store_id", "effective_shops"});
        std::map<std::string, double> sorted(field.scores.begin(), field.scores.end());
        for (const auto& [id, score] : sorted) {
            w.row({id, csv::format_double(score)});
        }
    }
    write_clusters_csv(assignment.clusters, config.out_dir / "clusters.csv");
    write_membership_csv(assignment.clusters, config.out_dir / "membership.csv");
    {
        csv::Writer w(config.out_dir / "unassigned.csv", {"store_id"});
        for (const auto& id : assignment.unassigned) w.row({id});
    }

    double mean_radius = 0.0;
    for (const auto& c : assignment.clusters) mean_radius += c.radius_km;
    if (!assignment.clusters.empty()) {
        mean_radius /= static_cast<double>(assignment.clusters.size());
    }
    write_meta(config, "detect_clusters", timer,
               {{"n_stores", stores.size()},
                {"n_clusters", assignment.clusters.size()},
                {"n_unassigned", assignment.unassigned.size()},
                {"mean_cluster_radius_km", mean_radius},
                {"density_truncation_bound", field.truncation_bound}});
}

void run_build_space(const PipelineConfig& config) {
    StageTimer timer;
    Inputs in = load_mapping_inputs(config, true);
    CellClusterMap cell_map;
    const MappedRecords mapped = mapped_records_of(in, config, &cell_map);
    if (mapped.records.empty()) {
        throw InvalidInputError("build-space: no transaction maps to a cluster");
    }

    const std::set<std::string> periods = periods_of(in.transactions);
    const PeriodGroups groups = config.period_groups(periods);
    std::set<std::string> baseline(config.phi_baseline_periods.begin(),
                                   config.phi_baseline_periods.end());
    if (baseline.empty()) baseline = groups.pre_covid;
    if (baseline.empty()) baseline = periods;  // no pre-COVID periods at all

    std::set<std::string> amenity_set;
    for (const auto& r : mapped.records) amenity_set.insert(r.amenity);
    const std::vector<std::string> amenities(amenity_set.begin(), amenity_set.end());

    // Group-level counts over the baseline periods.
    std::map<std::string, std::map<std::string, long long>> group_counts;
    for (const auto& r : mapped.records) {
        if (!baseline.count(r.period)) continue;
        ConsumerGroupKey key{r.res_cell, r.age_band, r.gender, r.dest_cluster};
        std::string label = config.group_mode == "res_age_gender"
            ? r.res_cell + "|" + r.age_band + "|" + r.gender
            : key.to_label();
        group_counts[label][r.amenity] += r.count;
    }
    std::vector<std::string> group_labels;
    for (const auto& [label, counts] : group_counts) group_labels.push_back(label);
    LabeledMatrix group_matrix(group_labels, amenities);
    for (const auto& [label, counts] : group_counts) {
        for (const auto& [amenity, count] : counts) {
            group_matrix.add(label, amenity, static_cast<double>(count));
        }
    }
    const SpecializationMatrix group_rca = rca(group_matrix);
    const ProximityMatrix phi = proximity(group_rca);

    // Per-period cluster specialization and relatedness density.
    std::set<int> cluster_set;
    for (const auto& r : mapped.records) cluster_set.insert(r.dest_cluster);
    std::vector<std::string> cluster_labels;
    for (int c : cluster_set) cluster_labels.push_back(std::to_string(c));

    OmegaTable omega;
    for (const auto& period : periods) {
        LabeledMatrix cluster_matrix(cluster_labels, amenities);
        for (const auto& r : mapped.records) {
            if (r.period != period) continue;
            cluster_matrix.add(std::to_string(r.dest_cluster), r.amenity,
                               static_cast<double>(r.count));
        }
        const SpecializationMatrix cluster_rca = rca(cluster_matrix);
        const LabeledMatrix dens = relatedness_density(cluster_rca, phi);
        for (std::size_t i = 0; i < cluster_labels.size(); ++i) {
            for (std::size_t p = 0; p < amenities.size(); ++p) {
                omega.set(std::stoi(cluster_labels[i]), amenities[p], period,
                          dens.values()(static_cast<Eigen::Index>(i),
                                        static_cast<Eigen::Index>(p)));
            }
        }
    }

    // Node attributes: total counts over all periods and the dominant
    // large category among the amenity's stores.
    std::map<std::string, NodeStats> node_stats;
    for (const auto& r : mapped.records) {
        node_stats[r.amenity].total_count += static_cast<double>(r.count);
    }
    {
        std::map<std::string, std::map<std::string, int>> votes;
        for (const auto& s : in.stores) ++votes[s.category_small][s.category_large];
        for (auto& [amenity, stats] : node_stats) {
            const auto it = votes.find(amenity);
            if (it == votes.end()) continue;
            int best = -1;
            for (const auto& [large, n] : it->second) {
                if (n > best) {
                    best = n;
                    stats.large_category = large;
                }
            }
        }
    }

    const ConsumptionSpace space =
        build_consumption_space(phi, config.space_edge_threshold);
    write_consumption_space(space, node_stats, config.space_top_k,
                            config.out_dir / "proximity_edges.csv",
                            config.out_dir / "consumption_space.json",
                            config.out_dir / "pair_table.csv");
    omega.write_csv(config.out_dir / "omega.csv");

    write_meta(config, "build_space", timer,
               {{"n_groups", group_labels.size()},
                {"n_amenities", amenities.size()},
                {"n_clusters", cluster_labels.size()},
                {"baseline_periods", std::vector<std::string>(baseline.begin(), baseline.end())},
                {"group_mode", config.group_mode},
                {"dropped_records", mapped.dropped_records},
                {"unmapped_cells", mapped.unmapped_cells.size()}});
}

void run_build_panel(const PipelineConfig& config) {
    StageTimer timer;
    Inputs in = load_mapping_inputs(config, true);
    require_file(config.out_dir / "omega.csv", "omega (run build-space first)");
    const OmegaTable omega = OmegaTable::load_csv(config.out_dir / "omega.csv");

    CellClusterMap cell_map;
    const MappedRecords mapped = mapped_records_of(in, config, &cell_map);
    const std::set<std::string> periods = periods_of(in.transactions);

    PanelConfig panel_config;
    panel_config.log_mode = config.log_mode;
    panel_config.dist_offset_km = config.dist_offset_km;
    panel_config.panel_mode = config.panel_mode;
    panel_config.periods = config.period_groups(periods);

    const Panel panel = build_panel(mapped, omega, cluster_centroids(in.clusters),
                                    panel_config);
    write_panel_csv(panel, config.out_dir / "panel.csv");
    write_standardization_json(panel.standardization,
                               config.out_dir / "standardization.json");
    cell_map.write_csv(config.out_dir / "cell_map.csv");

    std::map<std::string, std::size_t> interval_counts;
    for (const auto& row : panel.rows) ++interval_counts[row.interval];
    ordered_json intervals;
    for (const char* name : kDistanceIntervals) {
        intervals[name] = interval_counts.count(name) ? interval_counts.at(name) : 0;
    }
    write_meta(config, "build_panel", timer,
               {{"n_rows", panel.rows.size()},
                {"dropped_records", mapped.dropped_records},
                {"unmapped_cells", mapped.unmapped_cells.size()},
                {"interval_counts", intervals},
                {"log_mode", config.log_mode},
                {"panel_mode", config.panel_mode}});
}

void run_fit(const PipelineConfig& config, const std::string& spec_name) {
    StageTimer timer;
    require_file(config.out_dir / "panel.csv", "panel (run build-panel first)");
    Panel panel = load_panel_csv(config.out_dir / "panel.csv");
    {
        std::ifstream in(config.out_dir / "standardization.json");
        if (in) {
            nlohmann::json j;
            in >> j;
            panel.standardization.log_mode = j.value("log_mode", "log1p");
            panel.standardization.dist_offset_km = j.value("dist_offset_km", 0.025);
        }
    }
    const ResolvedSpec resolved = resolve_spec(config, spec_name, panel);
    const FitResult result = fit(resolved.spec, resolved.sample);
    write_fit_json(result, config.out_dir / ("fit_" + spec_name + ".json"));
    {
        std::ofstream out(config.out_dir / ("fit_" + spec_name + ".txt"));
        out << format_fit_table(result);
    }
    ordered_json coefs;
    for (std::size_t c = 0; c < result.coef_names.size(); ++c) {
        coefs[result.coef_names[c]] = result.beta(static_cast<Eigen::Index>(c));
    }
    write_meta(config, "fit_" + spec_name, timer,
               {{"n_obs", result.n_obs},
                {"n_dropped_singletons", result.n_dropped_singletons},
                {"r2", result.r2},
                {"within_r2", result.within_r2},
                {"demean_iterations", result.demean_iterations},
                {"vcov_repaired", result.vcov_repaired},
                {"coefficients", coefs}});
}

void run_marginal(const PipelineConfig& config, const std::string& spec_name) {
    StageTimer timer;
    require_file(config.out_dir / "panel.csv", "panel (run build-panel first)");
    Panel panel = load_panel_csv(config.out_dir / "panel.csv");
    {
        std::ifstream in(config.out_dir / "standardization.json");
        if (in) {
            nlohmann::json j;
            in >> j;
            panel.standardization.log_mode = j.value("log_mode", "log1p");
            panel.standardization.dist_offset_km = j.value("dist_offset_km", 0.025);
        }
    }
    const ResolvedSpec resolved = resolve_spec(config, spec_name, panel);
    const FitResult result = fit(resolved.spec, resolved.sample);
    const MarginalCurve curve = marginal_effects(result);
    write_marginal_csv(curve, config.out_dir / ("marginal_" + spec_name + ".csv"));
    write_meta(config, "marginal_" + spec_name, timer,
               {{"grid_km", curve.distance_km}, {"n_obs", result.n_obs}});
}

void run_typology(const PipelineConfig& config) {
    StageTimer timer;
    require_file(config.profiles_path(), "profile");
    const auto profiles = load_profiles_csv(config.profiles_path());
    const TypologyResult typology = kmeans_typology(profiles, config.kmeans_k,
                                                    config.kmeans_seed,
                                                    config.kmeans_restarts);
    std::filesystem::create_directories(config.out_dir);
    write_types_csv(typology, config.out_dir / "types.csv");
    {
        csv::Writer w(config.out_dir / "typology_centroids.csv",
                      {"type", "floating_density", "working_density",
                       "residential_density"});
        for (Eigen::Index t = 0; t < typology.centroids.rows(); ++t) {
            w.row({std::string(1, static_cast<char>('A' + t)),
                   csv::format_double(typology.centroids(t, 0)),
                   csv::format_double(typology.centroids(t, 1)),
                   csv::format_double(typology.centroids(t, 2))});
        }
    }
    write_meta(config, "typology", timer,
               {{"n_profiles", profiles.size()},
                {"k", config.kmeans_k},
                {"wcss", typology.wcss},
                {"best_restart", typology.best_restart}});
}

void run_flows(const PipelineConfig& config) {
    StageTimer timer;
    Inputs in = load_mapping_inputs(config, true);
    require_file(config.out_dir / "types.csv", "cluster-type (run typology first)");
    const auto types = load_types_csv(config.out_dir / "types.csv");
    const MappedRecords mapped = mapped_records_of(in, config);
    const auto centroids = cluster_centroids(in.clusters);

    const std::set<std::string> periods = periods_of(in.transactions);
    const PeriodGroups groups = config.period_groups(periods);

    ordered_json totals;
    long long grand_total = 0;
    for (const auto& [group_name, group_periods] :
         std::vector<std::pair<std::string, const std::set<std::string>*>>{
             {"pre_covid", &groups.pre_covid},
             {"covid", &groups.covid},
             {"recovery", &groups.recovery}}) {
        if (group_periods->empty()) continue;
        const FlowNetwork net = build_flow_network(mapped.records, types, *group_periods,
                                                   group_name, centroids,
                                                   config.flow_split_km);
        write_flow_network_json(net, config.out_dir / ("flows_" + group_name + ".json"));
        totals[group_name] = net.total();
        grand_total += net.total();
    }
    write_meta(config, "flows", timer,
               {{"totals", totals},
                {"grand_total", grand_total},
                {"split_km", config.flow_split_km},
                {"dropped_records", mapped.dropped_records}});
}

void run_rank(const PipelineConfig& config) {
    StageTimer timer;
    Inputs in = load_mapping_inputs(config, true);
    const MappedRecords mapped = mapped_records_of(in, config);
    const DistanceRank ranking =
        distance_rank(mapped.records, cluster_centroids(in.clusters));
    write_distance_rank_csv(ranking, config.out_dir / "distance_rank.csv");
    {
        csv::Writer w(config.out_dir / "distance_rank_matrix.csv",
                      {"interval", "amenity", "X_value"});
        for (Eigen::Index d = 0; d < ranking.x.rows(); ++d) {
            for (Eigen::Index p = 0; p < ranking.x.cols(); ++p) {
                w.row({ranking.x.row_labels()[static_cast<std::size_t>(d)],
                       ranking.x.col_labels()[static_cast<std::size_t>(p)],
                       csv::format_double(ranking.x.values()(d, p))});
            }
        }
    }
    write_meta(config, "rank", timer,
               {{"n_records", mapped.records.size()},
                {"dropped_records", mapped.dropped_records}});
}

void run_all(const PipelineConfig& config) {
    StageTimer timer;
    run_detect_clusters(config);
    run_build_space(config);
    run_build_panel(config);
    run_typology(config);

    std::vector<std::string> fitted, skipped;
    for (const auto& name : available_fit_specs()) {
        try {
            run_fit(config, name);
            fitted.push_back(name);
        } catch (const InvalidInputError& e) {
            // Empty subsamples (an unused interval or type) are expected on
            // small inputs; everything else propagates.
            const std::string what = e.what();
            if (what.find("empty subsample") != std::string::npos) {
                skipped.push_back(name);
            } else {
                throw;
            }
        }
    }
    run_marginal(config, "eq6_pooled");
    run_marginal(config, "eq_full");
    run_flows(config);
    run_rank(config);
    write_meta(config, "run_all", timer,
               {{"fitted_specs", fitted}, {"skipped_specs", skipped}});
}

}  // namespace conspace
