#include "ctcalib/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ctcalib {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + " '" + path + "'");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write", path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read", path);
    return in;
}

// 17 significant digits round-trip any double exactly.
std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) fail("expected a 3-vector in", path);
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json quat_json(const Quat& q) { return json::array({q.x(), q.y(), q.z(), q.w()}); }

Quat quat_from(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) fail("expected an x,y,z,w quaternion in", path);
    return Quat(j[3].get<double>(), j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json load_json(const std::string& path) {
    auto in = open_in(path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(std::string("malformed JSON (") + e.what() + ") in", path);
    }
    return doc;
}

}  // namespace

void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
    auto out = open_out(path);
    out << "t,wx,wy,wz,ax,ay,az\n";
    for (const auto& s : samples) {
        out << num(s.t) << ',' << num(s.gyro.x()) << ',' << num(s.gyro.y()) << ','
            << num(s.gyro.z()) << ',' << num(s.accel.x()) << ',' << num(s.accel.y()) << ','
            << num(s.accel.z()) << '\n';
    }
    if (!out) fail("write failed for", path);
}

std::vector<ImuSample> read_imu_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != "t,wx,wy,wz,ax,ay,az")
        fail("missing IMU CSV header in", path);
    std::vector<ImuSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ImuSample s;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &s.t, &s.gyro.x(),
                        &s.gyro.y(), &s.gyro.z(), &s.accel.x(), &s.accel.y(),
                        &s.accel.z()) != 7)
            fail("malformed IMU CSV row in", path);
        samples.push_back(s);
    }
    return samples;
}

void write_scans(const std::string& dir, const std::vector<LidarScan>& scans) {
    fs::create_directories(dir);
    auto index = open_out(dir + "/index.csv");
    index << "file,stamp,mode\n";
    for (size_t i = 0; i < scans.size(); ++i) {
        const LidarScan& scan = scans[i];
        char name[32];
        std::snprintf(name, sizeof(name), "scan_%05zu.csv", i);
        index << name << ',' << num(scan.stamp) << ','
              << (scan.cartesian ? "cartesian" : "raw") << '\n';
        auto out = open_out(dir + "/" + name);
        if (scan.cartesian) {
            out << "t,x,y,z\n";
            for (size_t k = 0; k < scan.xyz.size(); ++k) {
                out << num(scan.xyz_t[k]) << ',' << num(scan.xyz[k].x()) << ','
                    << num(scan.xyz[k].y()) << ',' << num(scan.xyz[k].z()) << '\n';
            }
        } else {
            out << "beam,t,range,azimuth\n";
            for (const auto& p : scan.raw) {
                out << p.beam << ',' << num(p.t) << ',' << num(p.range) << ','
                    << num(p.azimuth) << '\n';
            }
        }
        if (!out) fail("write failed for", dir + "/" + name);
    }
    if (!index) fail("write failed for", dir + "/index.csv");
}

std::vector<LidarScan> read_scans(const std::string& dir) {
    const std::string index_path = dir + "/index.csv";
    auto index = open_in(index_path);
    std::string line;
    if (!std::getline(index, line) || line != "file,stamp,mode")
        fail("missing scan index header in", index_path);

    std::vector<LidarScan> scans;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            fail("malformed scan index row in", index_path);
        const std::string file = line.substr(0, c1);
        const std::string mode = line.substr(c2 + 1);
        LidarScan scan;
        scan.stamp = std::strtod(line.c_str() + c1 + 1, nullptr);
        if (mode == "cartesian") {
            scan.cartesian = true;
        } else if (mode != "raw") {
            fail("unknown scan mode '" + mode + "' in", index_path);
        }

        const std::string path = dir + "/" + file;
        auto in = open_in(path);
        std::string row;
        if (!std::getline(in, row) ||
            row != (scan.cartesian ? "t,x,y,z" : "beam,t,range,azimuth"))
            fail("missing scan header in", path);
        while (std::getline(in, row)) {
            if (row.empty()) continue;
            if (scan.cartesian) {
                double t;
                Vec3 p;
                if (std::sscanf(row.c_str(), "%lf,%lf,%lf,%lf", &t, &p.x(), &p.y(), &p.z()) != 4)
                    fail("malformed scan row in", path);
                scan.xyz_t.push_back(t);
                scan.xyz.push_back(p);
            } else {
                RawLidarPoint p;
                if (std::sscanf(row.c_str(), "%d,%lf,%lf,%lf", &p.beam, &p.t, &p.range,
                                &p.azimuth) != 4)
                    fail("malformed scan row in", path);
                scan.raw.push_back(p);
            }
        }
        scans.push_back(std::move(scan));
    }
    if (scans.empty()) fail("no scans listed in", index_path);
    return scans;
}

std::vector<LidarBeamIntrinsics> LidarInfo::nominal_beams() const {
    std::vector<LidarBeamIntrinsics> beams(num_beams);
    for (int b = 0; b < num_beams; ++b) beams[b].phi_nominal = phi_nominal[b];
    return beams;
}

void write_lidar_info(const std::string& path, const LidarInfo& info) {
    json doc;
    doc["num_beams"] = info.num_beams;
    doc["phi_nominal"] = info.phi_nominal;
    open_out(path) << doc.dump(2) << '\n';
}

LidarInfo read_lidar_info(const std::string& path) {
    const json doc = load_json(path);
    LidarInfo info;
    try {
        info.num_beams = doc.at("num_beams").get<int>();
        info.phi_nominal = doc.at("phi_nominal").get<std::vector<double>>();
    } catch (const json::exception& e) {
        fail(std::string("bad beam geometry (") + e.what() + ") in", path);
    }
    if (info.num_beams <= 0 ||
        info.phi_nominal.size() != static_cast<size_t>(info.num_beams))
        fail("beam count does not match elevation list in", path);
    return info;
}

void write_ground_truth(const std::string& path, const GroundTruthFile& truth) {
    json doc;
    doc["trajectory"] = truth.trajectory;
    doc["mounting"] = truth.mounting;
    doc["time_offset"] = truth.time_offset;
    doc["degenerate_direction"] = vec3_json(truth.degenerate_direction);

    doc["extrinsics"]["q_imu_lidar"] = quat_json(truth.extrinsics.q_imu_lidar);
    doc["extrinsics"]["p_imu_lidar"] = vec3_json(truth.extrinsics.p_imu_lidar);

    json& imu = doc["imu"];
    imu["scale_gyro"] = vec3_json(truth.imu.scale_gyro);
    imu["misalign_gyro"] = vec3_json(truth.imu.misalign_gyro);
    imu["q_gyro_imu"] = quat_json(truth.imu.q_gyro_imu);
    imu["scale_accel"] = vec3_json(truth.imu.scale_accel);
    imu["misalign_accel"] = vec3_json(truth.imu.misalign_accel);
    imu["bias_gyro"] = vec3_json(truth.nav.bias_gyro);
    imu["bias_accel"] = vec3_json(truth.nav.bias_accel);
    imu["gravity"] = vec3_json(truth.nav.gravity);

    json beams = json::array();
    for (const auto& b : truth.beams) {
        beams.push_back({{"phi_nominal", b.phi_nominal},
                         {"delta_phi", b.delta_phi},
                         {"delta_theta", b.delta_theta},
                         {"vert_offset", b.vert_offset},
                         {"horiz_offset", b.horiz_offset},
                         {"scale", b.scale},
                         {"delta_rho", b.delta_rho}});
    }
    doc["beams"] = std::move(beams);

    json poses = json::array();
    for (size_t i = 0; i < truth.scan_stamps.size(); ++i) {
        poses.push_back({{"t", truth.scan_stamps[i]},
                         {"q", quat_json(truth.scan_imu_poses[i].q)},
                         {"p", vec3_json(truth.scan_imu_poses[i].p)}});
    }
    doc["scan_imu_poses"] = std::move(poses);

    open_out(path) << doc.dump(2) << '\n';
}

GroundTruthFile read_ground_truth(const std::string& path) {
    const json doc = load_json(path);
    GroundTruthFile truth;
    try {
        truth.trajectory = doc.value("trajectory", std::string());
        truth.mounting = doc.value("mounting", std::string());
        truth.time_offset = doc.at("time_offset").get<double>();
        truth.degenerate_direction = vec3_from(doc.at("degenerate_direction"), path);

        const json& ext = doc.at("extrinsics");
        truth.extrinsics.q_imu_lidar = quat_from(ext.at("q_imu_lidar"), path);
        truth.extrinsics.p_imu_lidar = vec3_from(ext.at("p_imu_lidar"), path);

        const json& imu = doc.at("imu");
        truth.imu.scale_gyro = vec3_from(imu.at("scale_gyro"), path);
        truth.imu.misalign_gyro = vec3_from(imu.at("misalign_gyro"), path);
        truth.imu.q_gyro_imu = quat_from(imu.at("q_gyro_imu"), path);
        truth.imu.scale_accel = vec3_from(imu.at("scale_accel"), path);
        truth.imu.misalign_accel = vec3_from(imu.at("misalign_accel"), path);
        truth.nav.bias_gyro = vec3_from(imu.at("bias_gyro"), path);
        truth.nav.bias_accel = vec3_from(imu.at("bias_accel"), path);
        truth.nav.gravity = vec3_from(imu.at("gravity"), path);

        for (const json& b : doc.at("beams")) {
            LidarBeamIntrinsics beam;
            beam.phi_nominal = b.at("phi_nominal").get<double>();
            beam.delta_phi = b.at("delta_phi").get<double>();
            beam.delta_theta = b.at("delta_theta").get<double>();
            beam.vert_offset = b.at("vert_offset").get<double>();
            beam.horiz_offset = b.at("horiz_offset").get<double>();
            beam.scale = b.at("scale").get<double>();
            beam.delta_rho = b.at("delta_rho").get<double>();
            truth.beams.push_back(beam);
        }

        for (const json& p : doc.at("scan_imu_poses")) {
            truth.scan_stamps.push_back(p.at("t").get<double>());
            truth.scan_imu_poses.emplace_back(quat_from(p.at("q"), path),
                                              vec3_from(p.at("p"), path));
        }
    } catch (const json::exception& e) {
        fail(std::string("bad ground truth (") + e.what() + ") in", path);
    }
    return truth;
}

}  // namespace ctcalib
