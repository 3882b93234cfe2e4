#include <cmath>

#include "doctest.h"
#include "ctcalib/geometry.hpp"
#include "support/test_util.hpp"

using namespace ctcalib;
using testutil::quat_distance;
using testutil::random_quat;
using testutil::random_rotvec;
using testutil::random_vec3;

TEST_CASE("skew matches cross product on basis and random vectors") {
    std::mt19937_64 rng(11);
    const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
    CHECK((skew(ex) * ey - ez).norm() == doctest::Approx(0.0));
    CHECK((skew(ey) * ez - ex).norm() == doctest::Approx(0.0));
    CHECK((skew(ez) * ex - ey).norm() == doctest::Approx(0.0));
    for (int i = 0; i < 50; ++i) {
        Vec3 a = random_vec3(rng), b = random_vec3(rng);
        CHECK((skew(a) * b - a.cross(b)).norm() < 1e-14);
        CHECK((vee(skew(a)) - a).norm() == 0.0);
    }
}

TEST_CASE("so3_exp of half-turn about z") {
    Quat q = so3_exp(Vec3(0, 0, M_PI));
    CHECK(q.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q.y() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q.z() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(q.w()) < 1e-12);
}

TEST_CASE("so3_log of quarter-turn about z") {
    Quat q(std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4));
    Vec3 phi = so3_log(q);
    CHECK((phi - Vec3(0, 0, M_PI / 2)).norm() < 1e-12);
}

TEST_CASE("exp/log round trips") {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 200; ++i) {
        Vec3 phi = random_rotvec(rng, M_PI - 1e-6);
        CHECK((so3_log(so3_exp(phi)) - phi).norm() < 1e-12);
        Quat q = random_quat(rng);
        CHECK(quat_distance(so3_exp(so3_log(q)), q) < 1e-12);
    }
    // Tiny-angle branch.
    for (double a : {0.0, 1e-12, 1e-9, 1e-7}) {
        Vec3 phi(a, -0.5 * a, 0.25 * a);
        CHECK((so3_log(so3_exp(phi)) - phi).norm() < 1e-15 + 1e-6 * a);
    }
    // log returns the short representative.
    std::uniform_real_distribution<double> u(0.0, M_PI);
    for (int i = 0; i < 100; ++i) {
        CHECK(so3_log(random_quat(rng)).norm() <= M_PI + 1e-12);
    }
}

TEST_CASE("quat product matrices reproduce the Hamilton product") {
    std::mt19937_64 rng(13);
    CHECK((quat_left_matrix(Quat::Identity()) - Mat4::Identity()).norm() < 1e-15);
    CHECK((quat_right_matrix(Quat::Identity()) - Mat4::Identity()).norm() < 1e-15);
    for (int i = 0; i < 200; ++i) {
        Quat q1 = random_quat(rng), q2 = random_quat(rng);
        Vec4 direct = quat_vec4(q1 * q2);
        CHECK((quat_left_matrix(q1) * quat_vec4(q2) - direct).norm() < 1e-14);
        CHECK((quat_right_matrix(q2) * quat_vec4(q1) - direct).norm() < 1e-14);
        // Left and right multiplication commute.
        Mat4 lr = quat_left_matrix(q1) * quat_right_matrix(q2);
        Mat4 rl = quat_right_matrix(q2) * quat_left_matrix(q1);
        CHECK((lr - rl).norm() < 1e-14);
    }
}

TEST_CASE("right Jacobian matches finite differences") {
    std::mt19937_64 rng(14);
    const double h = 1e-6;
    for (int i = 0; i < 100; ++i) {
        Vec3 phi = random_rotvec(rng, 2.5);
        Mat3 Jr = so3_right_jacobian(phi);
        for (int k = 0; k < 3; ++k) {
            Vec3 d = h * Vec3::Unit(k);
            Vec3 num = so3_log(so3_exp(phi).conjugate() * so3_exp(phi + d)) / h;
            CHECK((num - Jr.col(k)).norm() < 1e-5);
        }
        CHECK((Jr * so3_right_jacobian_inv(phi) - Mat3::Identity()).norm() < 1e-9);
    }
}

TEST_CASE("hemisphere alignment and canonical representative") {
    std::mt19937_64 rng(15);
    for (int i = 0; i < 100; ++i) {
        Quat q = random_quat(rng), ref = random_quat(rng);
        Quat a = hemisphere_aligned(q, ref);
        CHECK(a.coeffs().dot(ref.coeffs()) >= 0.0);
        CHECK(quat_distance(a, q) < 1e-15);  // same rotation
        CHECK(canonical(q).w() >= 0.0);
    }
}

TEST_CASE("euler zyx round trip and composition order") {
    std::mt19937_64 rng(16);
    Vec3 rpy(0.1, -0.2, 0.3);
    Mat3 R = euler_zyx_to_matrix(rpy);
    Mat3 expected = (Eigen::AngleAxisd(0.3, Vec3::UnitZ()) *
                     Eigen::AngleAxisd(-0.2, Vec3::UnitY()) *
                     Eigen::AngleAxisd(0.1, Vec3::UnitX()))
                        .toRotationMatrix();
    CHECK((R - expected).norm() < 1e-14);
    for (int i = 0; i < 100; ++i) {
        Vec3 v(random_vec3(rng).x(), 1.4 * std::sin(i * 0.37), random_vec3(rng).z());
        Vec3 back = matrix_to_euler_zyx(euler_zyx_to_matrix(v));
        CHECK((euler_zyx_to_matrix(back) - euler_zyx_to_matrix(v)).norm() < 1e-10);
    }
}

TEST_CASE("pose composition, inverse, and action") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        Pose a(random_quat(rng), random_vec3(rng));
        Pose b(random_quat(rng), random_vec3(rng));
        Vec3 x = random_vec3(rng);
        CHECK(((a * b).act(x) - a.act(b.act(x))).norm() < 1e-12);
        Pose ia = a.inverse();
        CHECK(((a * ia).act(x) - x).norm() < 1e-12);
        CHECK((ia.act(a.act(x)) - x).norm() < 1e-12);
    }
}

TEST_CASE("tangent basis is orthonormal and orthogonal to the vector") {
    std::mt19937_64 rng(18);
    for (int i = 0; i < 50; ++i) {
        Vec3 n = random_vec3(rng);
        if (n.norm() < 1e-6) continue;
        auto B = tangent_basis(n);
        CHECK(std::abs(B.col(0).dot(B.col(1))) < 1e-12);
        CHECK(B.col(0).norm() == doctest::Approx(1.0));
        CHECK(B.col(1).norm() == doctest::Approx(1.0));
        CHECK(std::abs(B.col(0).dot(n.normalized())) < 1e-12);
        CHECK(std::abs(B.col(1).dot(n.normalized())) < 1e-12);
    }
}
