#include "ctcalib/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ctcalib {

namespace {

using nlohmann::json;

struct Field {
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

template <typename T>
Field make_field(T RunConfig::* member) {
    return {[member](RunConfig& c, const json& j) { c.*member = j.get<T>(); },
            [member](const RunConfig& c) { return json(c.*member); }};
}

template <typename Group, typename T>
Field make_field(Group RunConfig::* group, T Group::* member) {
    return {[group, member](RunConfig& c, const json& j) { c.*group.*member = j.get<T>(); },
            [group, member](const RunConfig& c) { return json(c.*group.*member); }};
}

// One sorted table drives file loading, CLI overrides, and snapshots, so the
// three surfaces can never disagree about what a key means.
const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> r;
        r["dataset_dir"] = make_field(&RunConfig::dataset_dir);
        r["output_dir"] = make_field(&RunConfig::output_dir);
        r["run_dir"] = make_field(&RunConfig::run_dir);

        auto sim = &RunConfig::sim;
        r["sim.trajectory"] = make_field(sim, &RunConfig::Sim::trajectory);
        r["sim.mounting"] = make_field(sim, &RunConfig::Sim::mounting);
        r["sim.duration"] = make_field(sim, &RunConfig::Sim::duration);
        r["sim.imu_rate"] = make_field(sim, &RunConfig::Sim::imu_rate);
        r["sim.scan_period"] = make_field(sim, &RunConfig::Sim::scan_period);
        r["sim.azimuth_step_deg"] = make_field(sim, &RunConfig::Sim::azimuth_step_deg);
        r["sim.num_beams"] = make_field(sim, &RunConfig::Sim::num_beams);
        r["sim.max_range"] = make_field(sim, &RunConfig::Sim::max_range);
        r["sim.range_sigma"] = make_field(sim, &RunConfig::Sim::range_sigma);
        r["sim.gyro_sigma"] = make_field(sim, &RunConfig::Sim::gyro_sigma);
        r["sim.accel_sigma"] = make_field(sim, &RunConfig::Sim::accel_sigma);
        r["sim.gyro_walk"] = make_field(sim, &RunConfig::Sim::gyro_walk);
        r["sim.accel_walk"] = make_field(sim, &RunConfig::Sim::accel_walk);
        r["sim.time_offset"] = make_field(sim, &RunConfig::Sim::time_offset);
        r["sim.distortion"] = make_field(sim, &RunConfig::Sim::distortion);
        r["sim.cartesian"] = make_field(sim, &RunConfig::Sim::cartesian);
        r["sim.window"] = make_field(sim, &RunConfig::Sim::window);
        r["sim.num_windows"] = make_field(sim, &RunConfig::Sim::num_windows);
        r["sim.truth_seed"] = make_field(sim, &RunConfig::Sim::truth_seed);
        r["sim.noise_seed"] = make_field(sim, &RunConfig::Sim::noise_seed);

        auto init = &RunConfig::init;
        r["init.odometry"] = make_field(init, &RunConfig::Init::odometry);
        r["init.two_pass"] = make_field(init, &RunConfig::Init::two_pass);
        r["init.icp_stride"] = make_field(init, &RunConfig::Init::icp_stride);
        r["init.icp_max_iterations"] = make_field(init, &RunConfig::Init::icp_max_iterations);
        r["init.min_pair_angle"] = make_field(init, &RunConfig::Init::min_pair_angle);
        r["init.perturb_rot"] = make_field(init, &RunConfig::Init::perturb_rot);
        r["init.perturb_trans"] = make_field(init, &RunConfig::Init::perturb_trans);
        r["init.perturb_ext_rot"] = make_field(init, &RunConfig::Init::perturb_ext_rot);
        r["init.perturb_ext_trans"] = make_field(init, &RunConfig::Init::perturb_ext_trans);
        r["init.seed"] = make_field(init, &RunConfig::Init::seed);

        auto calib = &RunConfig::calib;
        r["calib.knot_dt"] = make_field(calib, &RunConfig::Calib::knot_dt);
        r["calib.segment_length"] = make_field(calib, &RunConfig::Calib::segment_length);
        r["calib.outer_iterations"] = make_field(calib, &RunConfig::Calib::outer_iterations);
        r["calib.inner_iterations"] = make_field(calib, &RunConfig::Calib::inner_iterations);
        r["calib.intrinsics_start"] = make_field(calib, &RunConfig::Calib::intrinsics_start);
        r["calib.raw_correction_start"] = make_field(calib, &RunConfig::Calib::raw_correction_start);
        r["calib.imu_intrinsics"] = make_field(calib, &RunConfig::Calib::imu_intrinsics);
        r["calib.lidar_intrinsics"] = make_field(calib, &RunConfig::Calib::lidar_intrinsics);
        r["calib.estimate_time_offset"] =
            make_field(calib, &RunConfig::Calib::estimate_time_offset);
        r["calib.tc_bound"] = make_field(calib, &RunConfig::Calib::tc_bound);
        r["calib.use_tsvd"] = make_field(calib, &RunConfig::Calib::use_tsvd);
        r["calib.tsvd_rel"] = make_field(calib, &RunConfig::Calib::tsvd_rel);
        r["calib.tsvd_abs"] = make_field(calib, &RunConfig::Calib::tsvd_abs);
        r["calib.huber_delta"] = make_field(calib, &RunConfig::Calib::huber_delta);
        r["calib.gyro_sigma"] = make_field(calib, &RunConfig::Calib::gyro_sigma);
        r["calib.accel_sigma"] = make_field(calib, &RunConfig::Calib::accel_sigma);
        r["calib.range_sigma"] = make_field(calib, &RunConfig::Calib::range_sigma);
        r["calib.min_incidence"] = make_field(calib, &RunConfig::Calib::min_incidence);
        r["calib.map_cell"] = make_field(calib, &RunConfig::Calib::map_cell);
        r["calib.map_planarity"] = make_field(calib, &RunConfig::Calib::map_planarity);
        r["calib.map_min_points"] = make_field(calib, &RunConfig::Calib::map_min_points);
        r["calib.assoc_gate"] = make_field(calib, &RunConfig::Calib::assoc_gate);
        r["calib.point_stride"] = make_field(calib, &RunConfig::Calib::point_stride);
        r["calib.track_mme"] = make_field(calib, &RunConfig::Calib::track_mme);
        r["calib.mme_radius"] = make_field(calib, &RunConfig::Calib::mme_radius);
        r["calib.mme_stride"] = make_field(calib, &RunConfig::Calib::mme_stride);

        auto seg = &RunConfig::segments;
        r["segments.length"] = make_field(seg, &RunConfig::Segments::length);
        r["segments.sigma_threshold"] = make_field(seg, &RunConfig::Segments::sigma_threshold);
        r["segments.top_n"] = make_field(seg, &RunConfig::Segments::top_n);
        r["segments.joint"] = make_field(seg, &RunConfig::Segments::joint);
        r["segments.probe_iterations"] = make_field(seg, &RunConfig::Segments::probe_iterations);
        r["segments.probe_stride"] = make_field(seg, &RunConfig::Segments::probe_stride);

        auto chk = &RunConfig::check;
        r["check.enabled"] = make_field(chk, &RunConfig::Check::enabled);
        r["check.pos_cm"] = make_field(chk, &RunConfig::Check::pos_cm);
        r["check.rot_deg"] = make_field(chk, &RunConfig::Check::rot_deg);
        r["check.tc_ms"] = make_field(chk, &RunConfig::Check::tc_ms);
        return r;
    }();
    return table;
}

void set_key(RunConfig& config, const std::string& key, const json& value) {
    auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
        it->second.set(config, value);
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

void flatten(const json& node, const std::string& prefix, RunConfig& config) {
    for (const auto& [name, value] : node.items()) {
        const std::string key = prefix.empty() ? name : prefix + "." + name;
        if (value.is_object()) {
            flatten(value, key, config);
        } else {
            set_key(config, key, value);
        }
    }
}

}  // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file '" + path + "' is not a JSON object");
    RunConfig config;
    flatten(doc, "", config);
    return config;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    json parsed = json::parse(value, nullptr, false);
    // Bare words (paths, enum names) are not valid JSON; take them verbatim.
    if (parsed.is_discarded()) parsed = json(value);
    set_key(config, key, parsed);
}

void validate(const RunConfig& config) {
    std::vector<std::string> errors;
    auto require = [&errors](bool ok, const std::string& message) {
        if (!ok) errors.push_back(message);
    };

    const auto& s = config.sim;
    require(s.trajectory == "sinusoid" || s.trajectory == "figure8" ||
                s.trajectory == "alternating",
            "sim.trajectory must be sinusoid, figure8, or alternating");
    require(s.mounting == "A" || s.mounting == "B" || s.mounting == "C",
            "sim.mounting must be A, B, or C");
    require(s.duration > 0, "sim.duration must be positive");
    require(s.imu_rate > 0, "sim.imu_rate must be positive");
    require(s.scan_period > 0, "sim.scan_period must be positive");
    require(s.azimuth_step_deg > 0, "sim.azimuth_step_deg must be positive");
    require(s.num_beams >= 1, "sim.num_beams must be at least 1");
    require(s.max_range > 0, "sim.max_range must be positive");
    require(s.range_sigma >= 0, "sim.range_sigma must be non-negative");
    require(s.gyro_sigma >= 0 && s.accel_sigma >= 0 && s.gyro_walk >= 0 && s.accel_walk >= 0,
            "sim noise densities must be non-negative");
    require(s.window > 0, "sim.window must be positive");
    require(s.num_windows >= 1, "sim.num_windows must be at least 1");

    const auto& i = config.init;
    require(i.odometry == "icp" || i.odometry == "perturbed_truth",
            "init.odometry must be icp or perturbed_truth");
    require(i.icp_stride >= 1, "init.icp_stride must be at least 1");
    require(i.icp_max_iterations >= 1, "init.icp_max_iterations must be at least 1");
    require(i.min_pair_angle >= 0, "init.min_pair_angle must be non-negative");
    require(i.perturb_rot >= 0 && i.perturb_trans >= 0 && i.perturb_ext_rot >= 0 &&
                i.perturb_ext_trans >= 0,
            "init perturbation sigmas must be non-negative");

    const auto& c = config.calib;
    require(c.knot_dt > 0, "calib.knot_dt must be positive");
    require(c.segment_length >= 0, "calib.segment_length must be non-negative");
    require(c.outer_iterations >= 1, "calib.outer_iterations must be at least 1");
    require(c.inner_iterations >= 1, "calib.inner_iterations must be at least 1");
    require(c.intrinsics_start >= 0, "calib.intrinsics_start must be non-negative");
    require(c.raw_correction_start >= 0, "calib.raw_correction_start must be non-negative");
    require(c.tc_bound > 0, "calib.tc_bound must be positive");
    require(c.tsvd_rel >= 0 && c.tsvd_abs >= 0, "calib TSVD thresholds must be non-negative");
    require(c.huber_delta > 0, "calib.huber_delta must be positive");
    require(c.gyro_sigma > 0 && c.accel_sigma > 0 && c.range_sigma > 0,
            "calib residual sigmas must be positive");
    require(c.min_incidence >= 0 && c.min_incidence < 1,
            "calib.min_incidence must be in [0, 1)");
    require(c.map_cell > 0, "calib.map_cell must be positive");
    require(c.map_planarity >= 0 && c.map_planarity < 1,
            "calib.map_planarity must be in [0, 1)");
    require(c.map_min_points >= 3, "calib.map_min_points must be at least 3");
    require(c.assoc_gate > 0, "calib.assoc_gate must be positive");
    require(c.point_stride >= 1, "calib.point_stride must be at least 1");
    require(c.mme_radius > 0, "calib.mme_radius must be positive");
    require(c.mme_stride >= 1, "calib.mme_stride must be at least 1");

    const auto& g = config.segments;
    require(g.length > 0, "segments.length must be positive");
    require(g.sigma_threshold >= 0, "segments.sigma_threshold must be non-negative");
    require(g.top_n >= 1, "segments.top_n must be at least 1");
    require(g.probe_iterations >= 1, "segments.probe_iterations must be at least 1");
    require(g.probe_stride >= 1, "segments.probe_stride must be at least 1");

    const auto& k = config.check;
    require(k.pos_cm > 0 && k.rot_deg > 0 && k.tc_ms > 0,
            "check thresholds must be positive");

    if (!errors.empty()) {
        std::ostringstream out;
        out << "invalid configuration:";
        for (const auto& e : errors) out << "\n  - " << e;
        throw ConfigError(out.str());
    }
}

std::string config_json(const RunConfig& config) {
    json doc = json::object();
    for (const auto& [key, field] : registry()) {
        json* node = &doc;
        size_t start = 0;
        for (size_t dot = key.find('.'); dot != std::string::npos;
             start = dot + 1, dot = key.find('.', start)) {
            node = &(*node)[key.substr(start, dot - start)];
        }
        (*node)[key.substr(start)] = field.get(config);
    }
    return doc.dump(2) + "\n";
}

void write_config_snapshot(const RunConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config snapshot '" + path + "'");
    out << config_json(config);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    keys.reserve(registry().size());
    for (const auto& [key, field] : registry()) keys.push_back(key);
    return keys;
}

}  // namespace ctcalib
