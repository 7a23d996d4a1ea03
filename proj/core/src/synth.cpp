#include "conspace/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <tuple>
#include <set>

#include <nlohmann/json.hpp>

namespace conspace {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(tag)));
}

std::string zero_pad(long long v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

long long round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    if (frac > 0.5) return static_cast<long long>(f) + 1;
    if (frac < 0.5) return static_cast<long long>(f);
    const auto lo = static_cast<long long>(f);
    return lo % 2 == 0 ? lo : lo + 1;
}

// Local tangent-plane conversion used only to fabricate coordinates; all
// pipeline distances go through haversine.
struct LocalFrame {
    double lat0, lon0, coslat;
    GeoPoint at(double east_km, double north_km) const {
        return {lat0 + north_km / kKmPerDegreeLat,
                lon0 + east_km / (kKmPerDegreeLat * coslat)};
    }
};

struct CellGrid {
    double lat_min, lon_min, pitch_lat_deg, pitch_lon_deg;
    int rows, cols;

    std::string id_at(const GeoPoint& p) const {
        int r = static_cast<int>(std::floor((p.lat - lat_min) / pitch_lat_deg));
        int c = static_cast<int>(std::floor((p.lon - lon_min) / pitch_lon_deg));
        r = std::clamp(r, 0, rows - 1);
        c = std::clamp(c, 0, cols - 1);
        return "c" + zero_pad(r, 4) + "_" + zero_pad(c, 4);
    }
    GeoPoint centroid(int r, int c) const {
        return {lat_min + (r + 0.5) * pitch_lat_deg, lon_min + (c + 0.5) * pitch_lon_deg};
    }
};

}  // namespace

void SynthConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) {
            throw ConfigError(std::string("synth.") + name + " must be > 0, got "
                              + std::to_string(v));
        }
    };
    if (n_peaks < 1) throw ConfigError("synth.n_peaks must be >= 1");
    if (stores_per_peak < 1) throw ConfigError("synth.stores_per_peak must be >= 1");
    if (n_amenities < 2) throw ConfigError("synth.n_amenities must be >= 2");
    if (n_residence_cells < 1) throw ConfigError("synth.n_residence_cells must be >= 1");
    if (dests_per_group < 1) throw ConfigError("synth.dests_per_group must be >= 1");
    positive(peak_spacing_km, "peak_spacing_km");
    positive(store_scatter_sd_km, "store_scatter_sd_km");
    positive(cell_pitch_km, "cell_pitch_km");
    positive(truth.noise_sd, "truth.noise_sd");
    positive(gamma, "gamma");
    if (n_peaks > 1 && !(peak_spacing_km > 4.0 * store_scatter_sd_km)) {
        throw ConfigError("synth.peak_spacing_km must exceed 4 * store_scatter_sd_km ("
                          + std::to_string(4.0 * store_scatter_sd_km)
                          + ") for separability");
    }
    if (blocks.n_blocks < 1 || n_amenities % blocks.n_blocks != 0) {
        throw ConfigError("synth.n_amenities must be a positive multiple of blocks.n_blocks");
    }
    if (!(blocks.within_intensity > 0.0) || blocks.within_intensity > 1.0
        || blocks.cross_intensity < 0.0 || blocks.cross_intensity >= blocks.within_intensity) {
        throw ConfigError("synth.blocks intensities must satisfy "
                          "0 <= cross < within <= 1");
    }
    if (periods.empty() || periods.size() != period_shifts.size()) {
        throw ConfigError("synth.periods and synth.period_shifts must be nonempty and "
                          "of equal length");
    }
    if (age_bands.empty() || genders.empty()) {
        throw ConfigError("synth.age_bands and synth.genders must be nonempty");
    }
    if (!(truth.x_density > 0.0) || !(truth.x_density < 1.0)) {
        throw ConfigError("synth.truth.x_density must be in (0,1)");
    }
    if (!(truth.group_spec_weight > 1.0)) {
        throw ConfigError("synth.truth.group_spec_weight must be > 1");
    }
}

SynthWorld gen_world(const SynthConfig& config) {
    config.validate();
    SynthWorld world;

    const LocalFrame frame{config.base_lat, config.base_lon,
                           std::cos(config.base_lat * kPi / 180.0)};

    // Peaks on a jittered lattice.
    {
        auto rng = stream(config.seed, 0xA110C);
        const int cols = static_cast<int>(std::ceil(std::sqrt(config.n_peaks)));
        std::uniform_real_distribution<double> jitter(-0.1, 0.1);
        for (int k = 0; k < config.n_peaks; ++k) {
            const int r = k / cols;
            const int c = k % cols;
            const double east = (c + jitter(rng)) * config.peak_spacing_km;
            const double north = (r + jitter(rng)) * config.peak_spacing_km;
            world.peak_locations.push_back(frame.at(east, north));
        }
        for (int a = 0; a < config.n_peaks; ++a) {
            for (int b = a + 1; b < config.n_peaks; ++b) {
                const double d = haversine_km(world.peak_locations[a], world.peak_locations[b]);
                if (d <= 4.0 * config.store_scatter_sd_km) {
                    throw ConfigError("synth: realized peak distance " + std::to_string(d)
                                      + " km violates separability; lower the jitter or "
                                        "scatter sd");
                }
            }
        }
    }

    // Stores: first store of each peak sits exactly at the peak; the rest are
    // Gaussian-scattered, truncated at 2.5 sd so no store is an isolated
    // density peak of its own.
    {
        auto rng = stream(config.seed, 0x570BE5);
        std::normal_distribution<double> scatter(0.0, config.store_scatter_sd_km);
        const int id_width = static_cast<int>(
            std::to_string(config.n_peaks * config.stores_per_peak).size());
        int next_id = 0;
        for (int k = 0; k < config.n_peaks; ++k) {
            const GeoPoint& peak = world.peak_locations[static_cast<std::size_t>(k)];
            for (int s = 0; s < config.stores_per_peak; ++s) {
                GeoPoint loc = peak;
                if (s > 0) {
                    double east = 0.0, north = 0.0;
                    do {
                        east = scatter(rng);
                        north = scatter(rng);
                    } while (east * east + north * north
                             > 6.25 * config.store_scatter_sd_km * config.store_scatter_sd_km);
                    const double dlat = north / kKmPerDegreeLat;
                    const double dlon = east / (kKmPerDegreeLat
                                                * std::cos(peak.lat * kPi / 180.0));
                    loc = {peak.lat + dlat, peak.lon + dlon};
                }
                const int amenity = next_id % config.n_amenities;
                const int per_block = config.n_amenities / config.blocks.n_blocks;
                StorePoint store;
                store.store_id = "s" + zero_pad(next_id, id_width);
                store.location = loc;
                store.category_small = "a" + zero_pad(amenity, 2);
                store.category_large = "L" + std::to_string(amenity / per_block);
                world.store_to_peak[store.store_id] = k;
                world.stores.push_back(std::move(store));
                ++next_id;
            }
        }
    }

    // Cells tiled over the store bounding box plus margin, 50 m pitch.
    CellGrid grid;
    {
        double lat_min = 1e9, lat_max = -1e9, lon_min = 1e9, lon_max = -1e9;
        for (const auto& s : world.stores) {
            lat_min = std::min(lat_min, s.location.lat);
            lat_max = std::max(lat_max, s.location.lat);
            lon_min = std::min(lon_min, s.location.lon);
            lon_max = std::max(lon_max, s.location.lon);
        }
        const double margin_km = 0.5;
        grid.pitch_lat_deg = config.cell_pitch_km / kKmPerDegreeLat;
        grid.pitch_lon_deg = config.cell_pitch_km / (kKmPerDegreeLat * frame.coslat);
        grid.lat_min = lat_min - margin_km / kKmPerDegreeLat;
        grid.lon_min = lon_min - margin_km / (kKmPerDegreeLat * frame.coslat);
        const double lat_span = lat_max - grid.lat_min + margin_km / kKmPerDegreeLat;
        const double lon_span = lon_max - grid.lon_min
            + margin_km / (kKmPerDegreeLat * frame.coslat);
        grid.rows = static_cast<int>(std::ceil(lat_span / grid.pitch_lat_deg));
        grid.cols = static_cast<int>(std::ceil(lon_span / grid.pitch_lon_deg));
        for (int r = 0; r < grid.rows; ++r) {
            for (int c = 0; c < grid.cols; ++c) {
                world.cells.insert("c" + zero_pad(r, 4) + "_" + zero_pad(c, 4),
                                   grid.centroid(r, c));
            }
        }
    }

    // Detection with the pipeline defaults; the generated files must round-trip
    // through the real stages.
    StoreIndex index(world.stores);
    world.field = effective_density(index, config.gamma, config.density_cutoff_km);
    const auto peaks = find_peaks(world.field, index, config.peak_radius_km);
    world.clusters = assign_clusters(index, peaks, world.field, config.max_assign_km);

    if (static_cast<int>(world.clusters.clusters.size()) != config.n_peaks) {
        throw ConfigError("synth: detection found "
                          + std::to_string(world.clusters.clusters.size()) + " clusters for "
                          + std::to_string(config.n_peaks)
                          + " planted peaks; adjust spacing or scatter");
    }
    world.detected_cluster_of_peak.assign(static_cast<std::size_t>(config.n_peaks), -1);
    for (const auto& cluster : world.clusters.clusters) {
        const int planted = world.store_to_peak.at(cluster.peak_store);
        if (world.detected_cluster_of_peak[static_cast<std::size_t>(planted)] != -1) {
            throw ConfigError("synth: two detected peaks inside planted cluster "
                              + std::to_string(planted));
        }
        world.detected_cluster_of_peak[static_cast<std::size_t>(planted)] = cluster.cluster_id;
        world.cluster_dest_cell[cluster.cluster_id] =
            grid.id_at(index.store(index.position_of(cluster.peak_store)).location);
    }

    // Residence cells near the peaks, rejection-sampled so each maps inside
    // max_assign_km of an assigned store.
    {
        auto rng = stream(config.seed, 0xCE115);
        std::normal_distribution<double> scatter(0.0, 0.25);
        std::set<std::string> chosen;
        for (int n = 0; n < config.n_residence_cells; ++n) {
            const int peak = n % config.n_peaks;
            const GeoPoint& center = world.peak_locations[static_cast<std::size_t>(peak)];
            for (int attempt = 0; attempt < 1000; ++attempt) {
                const double east = scatter(rng);
                const double north = scatter(rng);
                const GeoPoint p{center.lat + north / kKmPerDegreeLat,
                                 center.lon + east / (kKmPerDegreeLat
                                                      * std::cos(center.lat * kPi / 180.0))};
                const std::string id = grid.id_at(p);
                if (chosen.count(id)) continue;
                const GeoPoint centroid = world.cells.at(id);
                const auto near = index.within_radius(centroid, 0.9 * config.max_assign_km);
                if (near.empty()) continue;
                chosen.insert(id);
                world.residence_cell_peak[id] = peak;
                break;
            }
        }
        if (static_cast<int>(chosen.size()) != config.n_residence_cells) {
            throw ConfigError("synth: could not place all residence cells; "
                              "grid too small or scatter too wide");
        }
        world.residence_cells.assign(chosen.begin(), chosen.end());
    }

    // Population profiles: five archetypes cycled over detected cluster ids.
    {
        auto rng = stream(config.seed, 0xF10A7);
        std::normal_distribution<double> noise(0.0, 60.0);
        static constexpr double kArchetypes[5][3] = {
            {9500.0, 8500.0, 400.0},   // A: dense commercial
            {6000.0, 5200.0, 2600.0},  // B: downtown
            {2100.0, 1600.0, 9200.0},  // C: residential-commercial
            {1500.0, 1100.0, 6400.0},  // D: residential-commercial
            {350.0, 280.0, 900.0},     // E: outskirts
        };
        for (const auto& cluster : world.clusters.clusters) {
            const int arch = (cluster.cluster_id - 1) % 5;
            ClusterProfile profile;
            profile.cluster_id = cluster.cluster_id;
            profile.floating_density = std::max(0.0, kArchetypes[arch][0] + noise(rng));
            profile.working_density = std::max(0.0, kArchetypes[arch][1] + noise(rng));
            profile.residential_density = std::max(0.0, kArchetypes[arch][2] + noise(rng));
            world.profiles.push_back(profile);
            world.planted_archetype[cluster.cluster_id] = static_cast<char>('A' + arch);
        }
    }
    return world;
}

namespace {

struct GroupRef {
    std::string res_cell;
    std::string age;
    std::string gender;
    int dest_cluster = 0;
    int res_cluster = 0;
    int block = 0;
};

}  // namespace

SynthData gen_transactions(const SynthWorld& world, const SynthConfig& config) {
    config.validate();
    SynthData data;
    auto& manifest = data.manifest;

    const int n_clusters = static_cast<int>(world.clusters.clusters.size());
    const int n_amenities = config.n_amenities;
    const int per_block = n_amenities / config.blocks.n_blocks;

    std::vector<std::string> amenity_codes;
    for (int p = 0; p < n_amenities; ++p) amenity_codes.push_back("a" + zero_pad(p, 2));
    std::vector<int> cluster_ids;
    for (const auto& c : world.clusters.clusters) cluster_ids.push_back(c.cluster_id);
    std::sort(cluster_ids.begin(), cluster_ids.end());
    std::map<int, int> cluster_pos;
    for (int i = 0; i < n_clusters; ++i) cluster_pos[cluster_ids[static_cast<std::size_t>(i)]] = i;

    const auto centroids = cluster_centroids(world.clusters.clusters);

    // Planted cluster specialization X, i.i.d. Bernoulli per (cluster, amenity);
    // empty rows/columns are patched so every RCA slice is well defined.
    std::vector<std::vector<int>> planted_x(static_cast<std::size_t>(n_clusters),
                                            std::vector<int>(static_cast<std::size_t>(n_amenities), 0));
    {
        auto rng = stream(config.seed, 0xB10CC);
        std::bernoulli_distribution coin(config.truth.x_density);
        for (auto& row : planted_x)
            for (auto& v : row) v = coin(rng) ? 1 : 0;
        for (int i = 0; i < n_clusters; ++i) {
            auto& row = planted_x[static_cast<std::size_t>(i)];
            if (std::accumulate(row.begin(), row.end(), 0) == 0) row[static_cast<std::size_t>(i % n_amenities)] = 1;
        }
        for (int p = 0; p < n_amenities; ++p) {
            int total = 0;
            for (const auto& row : planted_x) total += row[static_cast<std::size_t>(p)];
            if (total == 0) planted_x[static_cast<std::size_t>(p % n_clusters)][static_cast<std::size_t>(p)] = 1;
        }
    }

    // Consumer groups: every (residence cell, age, gender) family shops at its
    // own cluster plus dests_per_group-1 distinct remote clusters.
    const auto cell_map = map_cell_set_to_clusters(
        std::set<std::string>(world.residence_cells.begin(), world.residence_cells.end()),
        [&] {
            std::unordered_map<std::string, int> membership;
            for (const auto& c : world.clusters.clusters)
                for (const auto& id : c.members) membership[id] = c.cluster_id;
            return membership;
        }(),
        StoreIndex(world.stores), world.cells, config.max_assign_km);

    std::vector<GroupRef> groups;
    {
        auto rng = stream(config.seed, 0x6E0095);
        std::uniform_int_distribution<int> pick(0, n_clusters - 1);
        std::uniform_int_distribution<int> block_pick(0, config.blocks.n_blocks - 1);
        const int n_remote = std::min(config.dests_per_group - 1, n_clusters - 1);
        for (const auto& cell : world.residence_cells) {
            const auto it = cell_map.cell_to_cluster.find(cell);
            if (it == cell_map.cell_to_cluster.end()) {
                throw ConfigError("synth: residence cell '" + cell + "' failed to map");
            }
            const int home = it->second;
            for (const auto& age : config.age_bands) {
                for (const auto& gender : config.genders) {
                    std::set<int> dests{home};
                    while (static_cast<int>(dests.size()) < 1 + n_remote) {
                        dests.insert(cluster_ids[static_cast<std::size_t>(pick(rng))]);
                    }
                    for (int dest : dests) {
                        GroupRef g;
                        g.res_cell = cell;
                        g.age = age;
                        g.gender = gender;
                        g.dest_cluster = dest;
                        g.res_cluster = home;
                        g.block = block_pick(rng);
                        groups.push_back(std::move(g));
                    }
                }
            }
        }
    }
    manifest.n_groups = groups.size();

    // Planted group specialization patterns; these realize the co-purchase
    // blocks when the allocation below weights counts by group_spec_weight.
    std::vector<std::vector<int>> group_m(groups.size(),
                                          std::vector<int>(static_cast<std::size_t>(n_amenities), 0));
    {
        auto rng = stream(config.seed, 0x6E0075);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            bool any = false;
            for (int p = 0; p < n_amenities; ++p) {
                const bool in_block = p / per_block == groups[g].block;
                const double q = in_block ? config.blocks.within_intensity
                                          : config.blocks.cross_intensity;
                if (u(rng) < q) {
                    group_m[g][static_cast<std::size_t>(p)] = 1;
                    any = true;
                }
            }
            if (!any) group_m[g][static_cast<std::size_t>(groups[g].block * per_block)] = 1;
        }
    }

    // Planted proximity from the group patterns, via the production formula.
    SpecializationMatrix group_spec;
    group_spec.col_labels = amenity_codes;
    group_spec.row_labels.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        group_spec.row_labels.push_back("g" + std::to_string(g));
    }
    group_spec.binary.resize(static_cast<Eigen::Index>(groups.size()), n_amenities);
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (int p = 0; p < n_amenities; ++p)
            group_spec.binary(static_cast<Eigen::Index>(g), p) = group_m[g][static_cast<std::size_t>(p)];
    group_spec.rca = group_spec.binary;
    const ProximityMatrix phi_star = proximity(group_spec);

    {
        double within_sum = 0.0, cross_sum = 0.0;
        long long within_n = 0, cross_n = 0;
        for (int p = 0; p < n_amenities; ++p) {
            for (int q = p + 1; q < n_amenities; ++q) {
                if (p / per_block == q / per_block) {
                    within_sum += phi_star.phi(p, q);
                    ++within_n;
                } else {
                    cross_sum += phi_star.phi(p, q);
                    ++cross_n;
                }
            }
        }
        manifest.phi_within_mean = within_n ? within_sum / within_n : 0.0;
        manifest.phi_cross_mean = cross_n ? cross_sum / cross_n : 0.0;
    }

    // Planted relatedness density from X and phi*, via the production formula.
    SpecializationMatrix cluster_spec;
    cluster_spec.col_labels = amenity_codes;
    for (int i : cluster_ids) cluster_spec.row_labels.push_back(std::to_string(i));
    cluster_spec.binary.resize(n_clusters, n_amenities);
    for (int i = 0; i < n_clusters; ++i)
        for (int p = 0; p < n_amenities; ++p)
            cluster_spec.binary(i, p) = planted_x[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
    cluster_spec.rca = cluster_spec.binary;
    const LabeledMatrix omega_star = relatedness_density(cluster_spec, phi_star);

    // Panel universe: observed (dest, res) cluster pairs and their groups.
    std::map<std::pair<int, int>, std::vector<std::size_t>> pair_groups;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        pair_groups[{groups[g].dest_cluster, groups[g].res_cluster}].push_back(g);
    }

    // Fixed-effect draws, plus one pre-drawn noise value per universe row so
    // every generation round sees identical disturbances.
    std::vector<double> fe_dest(static_cast<std::size_t>(n_clusters));
    std::vector<double> fe_res(static_cast<std::size_t>(n_clusters));
    std::vector<double> fe_amenity(static_cast<std::size_t>(n_amenities));
    {
        auto rng = stream(config.seed, 0xFEFE);
        std::normal_distribution<double> draw(0.0, config.truth.fe_sd);
        for (auto& v : fe_dest) v = draw(rng);
        for (auto& v : fe_res) v = draw(rng);
        for (auto& v : fe_amenity) v = draw(rng);
    }
    const std::size_t n_universe =
        pair_groups.size() * static_cast<std::size_t>(n_amenities) * config.periods.size();
    std::vector<double> noise_draws(n_universe);
    {
        auto rng = stream(config.seed, 0x4015E);
        std::normal_distribution<double> noise(0.0, config.truth.noise_sd);
        for (auto& v : noise_draws) v = noise(rng);
    }

    auto logdist_of = [&](int i, int j) {
        const double d = i == j ? 0.0 : haversine_km(centroids.at(i), centroids.at(j));
        return std::log(d + config.dist_offset_km);
    };
    const PeriodGroups period_groups = PeriodGroups::by_year(
        std::set<std::string>(config.periods.begin(), config.periods.end()));
    std::vector<std::size_t> baseline_periods;
    for (std::size_t t = 0; t < config.periods.size(); ++t) {
        if (period_groups.pre_covid.count(config.periods[t])) baseline_periods.push_back(t);
    }
    if (baseline_periods.empty()) {
        for (std::size_t t = 0; t < config.periods.size(); ++t) baseline_periods.push_back(t);
    }

    // Relatedness density per period, K x P; the fixed-point below drives it
    // to agree with what the pipeline recomputes from the emitted counts.
    using OmegaField = std::vector<Eigen::MatrixXd>;
    OmegaField omega_current(config.periods.size(), omega_star.values());

    auto universe_moments = [&](const OmegaField& field) -> std::pair<Moments, Moments> {
        double om_sum = 0.0, om_ss = 0.0, ld_sum = 0.0, ld_ss = 0.0;
        const auto n = static_cast<double>(n_universe);
        for (int pass = 0; pass < 2; ++pass) {
            const double om_mean = om_sum / n;
            const double ld_mean = ld_sum / n;
            for (const auto& [pair, members] : pair_groups) {
                const double ld = logdist_of(pair.first, pair.second);
                const int i_pos = cluster_pos.at(pair.first);
                for (int p = 0; p < n_amenities; ++p) {
                    for (std::size_t t = 0; t < config.periods.size(); ++t) {
                        const double om = field[t](i_pos, p);
                        if (pass == 0) {
                            om_sum += om;
                            ld_sum += ld;
                        } else {
                            om_ss += (om - om_mean) * (om - om_mean);
                            ld_ss += (ld - ld_mean) * (ld - ld_mean);
                        }
                    }
                }
            }
        }
        const Moments om{om_sum / n, std::sqrt(om_ss / (n - 1.0))};
        const Moments ld{ld_sum / n, std::sqrt(ld_ss / (n - 1.0))};
        if (!(om.sd > 0.0) || !(ld.sd > 0.0)) {
            throw ConfigError("synth: degenerate omega or distance variation; "
                              "increase n_peaks or amenity blocks");
        }
        return {om, ld};
    };

    struct Generated {
        std::vector<TransactionRecord> records;
        std::vector<Eigen::MatrixXd> cluster_counts;  // per period, K x P
        Eigen::MatrixXd group_baseline;               // G x P
        Moments y_moments;
        double max_rounding_error = 0.0;
    };

    const auto& tr = config.truth;
    auto generate = [&](const OmegaField& field, const Moments& om_m,
                        const Moments& ld_m) -> Generated {
        Generated out;
        out.cluster_counts.assign(config.periods.size(),
                                  Eigen::MatrixXd::Zero(n_clusters, n_amenities));
        out.group_baseline =
            Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), n_amenities);
        double y_sum = 0.0, y_ss = 0.0;
        std::vector<double> y_values;
        std::size_t row_id = 0;
        std::vector<long long> alloc;
        std::vector<std::pair<double, std::size_t>> remainders;

        for (const auto& [pair, members] : pair_groups) {
            const int i = pair.first;
            const int j = pair.second;
            const int i_pos = cluster_pos.at(i);
            const int j_pos = cluster_pos.at(j);
            const double z_ld = (logdist_of(i, j) - ld_m.mean) / ld_m.sd;
            for (int p = 0; p < n_amenities; ++p) {
                for (std::size_t t = 0; t < config.periods.size(); ++t, ++row_id) {
                    const std::string& period = config.periods[t];
                    const double z_om = (field[t](i_pos, p) - om_m.mean) / om_m.sd;
                    const double covid = period_groups.is_covid(period) ? 1.0 : 0.0;
                    const double recovery = period_groups.is_recovery(period) ? 1.0 : 0.0;
                    const double mu = tr.beta0
                        + tr.beta_omega * z_om
                        + tr.beta_dist * z_ld
                        + tr.beta_interaction * z_om * z_ld
                        + tr.beta_covid * z_om * covid
                        + tr.beta_recovery * z_om * recovery
                        + fe_dest[static_cast<std::size_t>(i_pos)]
                        + fe_res[static_cast<std::size_t>(j_pos)]
                        + fe_amenity[static_cast<std::size_t>(p)]
                        + config.period_shifts[t]
                        + noise_draws[row_id];
                    const long long total =
                        std::max<long long>(0, round_half_even(std::expm1(mu)));
                    if (total > 0) {
                        const double y = std::log1p(static_cast<double>(total));
                        y_values.push_back(y);
                        out.max_rounding_error =
                            std::max(out.max_rounding_error, std::abs(y - mu));
                    }
                    out.cluster_counts[t](i_pos, p) += static_cast<double>(total);

                    // Largest-remainder allocation across the pair's groups.
                    double weight_sum = 0.0;
                    for (std::size_t g : members) {
                        weight_sum += group_m[g][static_cast<std::size_t>(p)]
                            ? tr.group_spec_weight : 1.0;
                    }
                    long long assigned = 0;
                    alloc.assign(members.size(), 0);
                    remainders.clear();
                    for (std::size_t m = 0; m < members.size(); ++m) {
                        const double w = group_m[members[m]][static_cast<std::size_t>(p)]
                            ? tr.group_spec_weight : 1.0;
                        const double quota = static_cast<double>(total) * w / weight_sum;
                        alloc[m] = static_cast<long long>(std::floor(quota));
                        assigned += alloc[m];
                        remainders.push_back({quota - std::floor(quota), m});
                    }
                    std::sort(remainders.begin(), remainders.end(),
                              [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
                    for (long long r = 0; r < total - assigned; ++r) {
                        ++alloc[remainders[static_cast<std::size_t>(r)].second];
                    }

                    const bool in_baseline =
                        std::find(baseline_periods.begin(), baseline_periods.end(), t)
                        != baseline_periods.end();
                    for (std::size_t m = 0; m < members.size(); ++m) {
                        if (alloc[m] == 0) continue;
                        if (in_baseline) {
                            out.group_baseline(static_cast<Eigen::Index>(members[m]), p)
                                += static_cast<double>(alloc[m]);
                        }
                        const auto& g = groups[members[m]];
                        TransactionRecord rec;
                        rec.period = period;
                        rec.res_cell = g.res_cell;
                        rec.dest_cell = world.cluster_dest_cell.at(i);
                        rec.amenity = amenity_codes[static_cast<std::size_t>(p)];
                        rec.age_band = g.age;
                        rec.gender = g.gender;
                        rec.count = alloc[m];
                        rec.amount = static_cast<double>(alloc[m]) * 12.5;
                        out.records.push_back(std::move(rec));
                    }
                }
            }
        }
        for (double y : y_values) y_sum += y;
        const double y_mean = y_sum / static_cast<double>(y_values.size());
        for (double y : y_values) y_ss += (y - y_mean) * (y - y_mean);
        out.y_moments = {y_mean,
                         std::sqrt(y_ss / static_cast<double>(y_values.size() - 1))};
        return out;
    };

    // Mirror of the pipeline's omega estimation (group RCA over the baseline
    // periods -> proximity; per-period cluster RCA -> relatedness density).
    // The estimate depends on the counts only through the binary RCA patterns.
    struct OmegaEstimate {
        OmegaField field;
        Eigen::MatrixXd group_pattern;
        std::vector<Eigen::MatrixXd> x_pattern;
    };
    auto estimate_omega = [&](const Generated& gen) -> OmegaEstimate {
        OmegaEstimate est;
        LabeledMatrix gcounts(group_spec.row_labels, amenity_codes);
        gcounts.values() = gen.group_baseline;
        const SpecializationMatrix gspec = rca(gcounts);
        est.group_pattern = gspec.binary;
        const ProximityMatrix phi_hat = proximity(gspec);
        for (std::size_t t = 0; t < config.periods.size(); ++t) {
            LabeledMatrix counts(cluster_spec.row_labels, amenity_codes);
            counts.values() = gen.cluster_counts[t];
            const SpecializationMatrix cspec = rca(counts);
            est.x_pattern.push_back(cspec.binary);
            est.field.push_back(relatedness_density(cspec, phi_hat).values());
        }
        return est;
    };

    // Fixed point: generate with the current omega, re-estimate it the way
    // the pipeline will, regenerate. Once the binary patterns repeat between
    // rounds the estimate equals the omega just used and the emitted data is
    // exactly consistent: the pipeline recovers the regressor truth.
    Generated gen;
    Moments om_m, ld_m;
    OmegaEstimate est;
    bool converged = false;
    int rounds = 0;
    constexpr int kMaxRounds = 4;
    for (int round = 0; round < kMaxRounds; ++round) {
        std::tie(om_m, ld_m) = universe_moments(omega_current);
        gen = generate(omega_current, om_m, ld_m);
        OmegaEstimate next = estimate_omega(gen);
        rounds = round + 1;
        if (round > 0 && next.group_pattern == est.group_pattern) {
            bool same = true;
            for (std::size_t t = 0; t < next.x_pattern.size(); ++t) {
                if (next.x_pattern[t] != est.x_pattern[t]) {
                    same = false;
                    break;
                }
            }
            if (same) {
                converged = true;
                est = std::move(next);
                break;
            }
        }
        est = std::move(next);
        if (round + 1 < kMaxRounds) omega_current = est.field;
    }
    manifest.omega_rounds = rounds;
    {
        double max_gap = 0.0;
        for (std::size_t t = 0; t < est.field.size(); ++t) {
            max_gap = std::max(max_gap,
                               (est.field[t] - omega_current[t]).cwiseAbs().maxCoeff());
        }
        manifest.omega_consistency_error = converged ? 0.0 : max_gap;
    }

    manifest.omega_moments = om_m;
    manifest.logdist_moments = ld_m;
    manifest.y_moments = gen.y_moments;
    manifest.max_rounding_error = gen.max_rounding_error;
    for (int i = 0; i < n_clusters; ++i) {
        for (int p = 0; p < n_amenities; ++p) {
            for (std::size_t t = 0; t < config.periods.size(); ++t) {
                data.planted_omega.set(cluster_ids[static_cast<std::size_t>(i)],
                                       amenity_codes[static_cast<std::size_t>(p)],
                                       config.periods[t], omega_current[t](i, p));
            }
        }
    }
    data.records = std::move(gen.records);
    std::sort(data.records.begin(), data.records.end(),
              [](const TransactionRecord& a, const TransactionRecord& b) {
                  return std::tie(a.period, a.res_cell, a.dest_cell, a.amenity,
                                  a.age_band, a.gender)
                       < std::tie(b.period, b.res_cell, b.dest_cell, b.amenity,
                                  b.age_band, b.gender);
              });

    manifest.seed = config.seed;
    manifest.truth = config.truth;
    manifest.periods = config.periods;
    manifest.peak_locations = world.peak_locations;
    manifest.store_to_peak = std::map<std::string, int>(world.store_to_peak.begin(),
                                                        world.store_to_peak.end());
    manifest.residence_cell_peak = world.residence_cell_peak;
    manifest.detected_cluster_of_peak = world.detected_cluster_of_peak;
    manifest.planted_archetype = world.planted_archetype;
    for (int p = 0; p < n_amenities; ++p) {
        manifest.amenity_block[amenity_codes[static_cast<std::size_t>(p)]] = p / per_block;
    }
    return data;
}

void write_manifest_json(const GroundTruthManifest& m, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["seed"] = m.seed;
    j["rounding_rule"] = m.rounding_rule;
    j["periods"] = m.periods;
    j["truth"] = {
        {"beta0", m.truth.beta0},
        {"beta_omega", m.truth.beta_omega},
        {"beta_dist", m.truth.beta_dist},
        {"beta_interaction", m.truth.beta_interaction},
        {"beta_covid", m.truth.beta_covid},
        {"beta_recovery", m.truth.beta_recovery},
        {"noise_sd", m.truth.noise_sd},
        {"fe_sd", m.truth.fe_sd},
        {"group_spec_weight", m.truth.group_spec_weight},
        {"x_density", m.truth.x_density},
    };
    j["omega_moments"] = {{"mean", m.omega_moments.mean}, {"sd", m.omega_moments.sd}};
    j["logdist_moments"] = {{"mean", m.logdist_moments.mean}, {"sd", m.logdist_moments.sd}};
    j["y_moments"] = {{"mean", m.y_moments.mean}, {"sd", m.y_moments.sd}};
    j["phi_within_mean"] = m.phi_within_mean;
    j["phi_cross_mean"] = m.phi_cross_mean;
    j["max_rounding_error"] = m.max_rounding_error;
    j["omega_consistency_error"] = m.omega_consistency_error;
    j["omega_rounds"] = m.omega_rounds;
    j["n_groups"] = m.n_groups;
    auto& peaks = j["peak_locations"] = nlohmann::ordered_json::array();
    for (const auto& p : m.peak_locations) peaks.push_back({{"lat", p.lat}, {"lon", p.lon}});
    j["detected_cluster_of_peak"] = m.detected_cluster_of_peak;
    auto& arch = j["planted_archetype"] = nlohmann::ordered_json::object();
    for (const auto& [id, type] : m.planted_archetype) {
        arch[std::to_string(id)] = std::string(1, type);
    }
    j["amenity_block"] = m.amenity_block;
    j["store_to_peak"] = m.store_to_peak;
    j["residence_cell_peak"] = m.residence_cell_peak;
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot open output file: " + path.string());
    out << j.dump(2) << '\n';
}

void write_synth_outputs(const SynthWorld& world, const SynthData& data,
                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_stores_csv(world.stores, out_dir / "stores.csv");
    world.cells.write_csv(out_dir / "cells.csv");
    write_transactions_csv(data.records, out_dir / "transactions.csv");
    write_profiles_csv(world.profiles, out_dir / "profiles.csv");
    data.planted_omega.write_csv(out_dir / "planted_omega.csv");
    write_manifest_json(data.manifest, out_dir / "manifest.json");
}

}  // namespace conspace
