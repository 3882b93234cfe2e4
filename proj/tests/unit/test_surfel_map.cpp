#include <cmath>

#include "doctest.h"
#include "ctcalib/surfel_map.hpp"
#include "support/test_util.hpp"

using namespace ctcalib;

TEST_CASE("plane-likeness of canonical spectra") {
    CHECK(plane_likeness(Vec3(0, 1, 1)) == doctest::Approx(1.0));
    CHECK(plane_likeness(Vec3(1, 1, 1)) == doctest::Approx(0.0));
    CHECK(plane_likeness(Vec3(0, 0, 1)) == doctest::Approx(0.0));
    CHECK(plane_likeness(Vec3(0.01, 1, 1)) > 0.9);
}

namespace {

// Points on plane n.p + d = 0 spread inside one 0.5 m cell around base.
std::vector<Vec3> plane_patch(std::mt19937_64& rng, const Vec3& n, const Vec3& base, int count,
                              double noise, double extent = 0.2) {
    auto B = tangent_basis(n);
    std::uniform_real_distribution<double> u(-extent, extent);
    std::normal_distribution<double> g(0.0, noise);
    std::vector<Vec3> pts;
    for (int i = 0; i < count; ++i) {
        pts.push_back(base + u(rng) * B.col(0) + u(rng) * B.col(1) + g(rng) * n.normalized());
    }
    return pts;
}

}  // namespace

TEST_CASE("a noisy planar patch yields one surfel with the right normal") {
    std::mt19937_64 rng(41);
    const Vec3 n = Vec3(0.3, -0.2, 0.93).normalized();
    const Vec3 base(1.25, 1.25, 1.25);
    // Regular grid in the tangent plane: isotropic in-plane spread, so the
    // planarity of the fitted patch is limited only by the added noise.
    auto B = tangent_basis(n);
    std::normal_distribution<double> g(0.0, 0.001);
    std::vector<Vec3> pts;
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j) {
            const double a = -0.12 + 0.24 * i / 14.0;
            const double b = -0.12 + 0.24 * j / 14.0;
            pts.push_back(base + a * B.col(0) + b * B.col(1) + g(rng) * n);
        }
    SurfelMap map(0.5, 0.6, 20, 0.05);
    map.build(pts);
    REQUIRE(map.surfels().size() == 1);
    const Surfel& s = map.surfels()[0];
    CHECK(std::abs(std::abs(s.normal.dot(n)) - 1.0) < 1e-4);
    CHECK(s.planarity > 0.99);
    CHECK(s.d >= 0.0);
    CHECK(std::abs(s.distance(base)) < 1e-3);
    CHECK((s.closest_point() - s.d * s.normal).norm() == 0.0);
}

TEST_CASE("minimum point count is a strict gate") {
    std::mt19937_64 rng(42);
    const Vec3 base(0.25, 0.25, 0.25);
    {
        SurfelMap map(0.5, 0.6, 20, 0.05);
        map.build(plane_patch(rng, Vec3::UnitZ(), base, 19, 0.0));
        CHECK(map.surfels().empty());
    }
    {
        SurfelMap map(0.5, 0.6, 20, 0.05);
        map.build(plane_patch(rng, Vec3::UnitZ(), base, 20, 0.0));
        CHECK(map.surfels().size() == 1);
    }
}

TEST_CASE("association honours the distance gate") {
    std::mt19937_64 rng(43);
    const Vec3 base(0.25, 0.25, 0.25);
    SurfelMap map(0.5, 0.6, 20, 0.05);
    map.build(plane_patch(rng, Vec3::UnitZ(), base, 100, 0.0));
    REQUIRE(map.surfels().size() == 1);
    CHECK(map.associate(base + Vec3(0.0, 0.0, 0.049)) == 0);
    CHECK(map.associate(base + Vec3(0.0, 0.0, 0.051)) == -1);
}

TEST_CASE("neighbour-cell fallback associates points just across the boundary") {
    std::mt19937_64 rng(44);
    // Vertical plane x = 0.49, points inside cell [0, 0.5)^3.
    const Vec3 n = Vec3::UnitX();
    std::vector<Vec3> pts;
    std::uniform_real_distribution<double> u(0.05, 0.45);
    for (int i = 0; i < 100; ++i) pts.emplace_back(0.49, u(rng), u(rng));
    SurfelMap map(0.5, 0.6, 20, 0.05);
    map.build(pts);
    REQUIRE(map.surfels().size() == 1);
    CHECK(std::abs(std::abs(map.surfels()[0].normal.dot(n)) - 1.0) < 1e-9);
    // Query point lives in the next cell over (x > 0.5) but is 3 cm from the plane.
    CHECK(map.associate(Vec3(0.52, 0.25, 0.25)) == 0);
    // Too far even with fallback.
    CHECK(map.associate(Vec3(0.56, 0.25, 0.25)) == -1);
}

TEST_CASE("an empty cloud builds an empty map") {
    SurfelMap map(0.5, 0.6, 20, 0.05);
    map.build({});
    CHECK(map.surfels().empty());
    CHECK(map.associate(Vec3(0, 0, 0)) == -1);
}

TEST_CASE("non-planar cells produce no surfel") {
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<double> u(0.0, 0.49);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    SurfelMap map(0.5, 0.6, 20, 0.05);
    map.build(pts);
    CHECK(map.surfels().empty());
}
