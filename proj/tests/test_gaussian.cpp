#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "psplat/checkpoint.hpp"
#include "psplat/gaussian.hpp"
#include "test_support.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

using namespace psplat;

namespace {

CameraPose axis_camera(int w, int h, double f) {
    CameraPose p;
    p.fx = p.fy = f;
    p.cx = 0.5 * w;
    p.cy = 0.5 * h;
    p.width = w;
    p.height = h;
    return p;
}

} // namespace

TEST_CASE("build_covariance identity and rotated cases") {
    CHECK(build_covariance(Vec3::Zero(), Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity(), 1e-15));

    const double half = std::numbers::pi / 4.0; // 90 degrees about z
    const Vec4 q(std::cos(half), 0.0, 0.0, std::sin(half));
    const Mat3 sigma = build_covariance(Vec3(std::log(2.0), 0.0, 0.0), q);
    Mat3 expect = Mat3::Zero();
    expect.diagonal() << 1.0, 4.0, 1.0;
    CHECK((sigma - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_covariance is symmetric positive definite and sign invariant") {
    Rng rng(42);
    std::uniform_real_distribution<double> s(-3.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 ls(s(rng), s(rng), s(rng));
        const Vec4 q = testing::random_quaternion(rng);
        const Mat3 a = build_covariance(ls, q);
        const Mat3 b = build_covariance(ls, -q);
        CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> es(a);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
        Vec3 expect = (2.0 * ls).array().exp();
        std::sort(expect.data(), expect.data() + 3);
        CHECK((es.eigenvalues() - expect).cwiseAbs().maxCoeff() <= 1e-9 * expect.maxCoeff());
    }
}

TEST_CASE("build_covariance rejects a zero quaternion") {
    CHECK_THROWS_AS(build_covariance(Vec3::Zero(), Vec4::Zero()), InvalidArgument);
    CHECK_THROWS_AS(quaternion_to_rotation(Vec4(0, 0, 0, std::nan(""))), InvalidArgument);
}

TEST_CASE("project_gaussian on the optical axis") {
    const CameraPose pose = axis_camera(64, 64, 100.0);
    Gaussian g;
    g.mu = Vec3(0, 0, 1);
    const auto s = project_gaussian(g, pose);
    REQUIRE(s);
    CHECK(s->mean.x() == doctest::Approx(32.0));
    CHECK(s->mean.y() == doctest::Approx(32.0));
    CHECK(s->depth == doctest::Approx(1.0));

    g.mu = Vec3(0, 0, 2); // isotropic unit covariance
    const auto s2 = project_gaussian(g, pose);
    REQUIRE(s2);
    CHECK(s2->cov(0, 0) == doctest::Approx(2500.3).epsilon(1e-12));
    CHECK(s2->cov(1, 1) == doctest::Approx(2500.3).epsilon(1e-12));
    CHECK(std::abs(s2->cov(0, 1)) < 1e-9);
}

TEST_CASE("project_gaussian culls at and behind the near plane") {
    const CameraPose pose = axis_camera(64, 64, 100.0);
    Gaussian g;
    g.mu = Vec3(0, 0, -1);
    CHECK_FALSE(project_gaussian(g, pose));
    g.mu = Vec3(0, 0, kNearPlane);
    CHECK_FALSE(project_gaussian(g, pose));
    g.mu = Vec3(0, 0, 2 * kNearPlane);
    CHECK(project_gaussian(g, pose));
}

TEST_CASE("projected splats have positive depth and positive-definite covariance") {
    Rng rng(5);
    const CameraPose pose = testing::look_at(Vec3(0.5, -3, 1), Vec3::Zero(), 48, 32, 40.0);
    GaussianCloud cloud = testing::random_cloud(rng, 300, 2.5, -6.0, 1.0);
    int emitted = 0;
    for (const auto& g : cloud.gaussians()) {
        const auto s = project_gaussian(g, pose);
        if (!s) continue;
        ++emitted;
        CHECK(s->depth > 0.0);
        CHECK(s->cov.determinant() > 0.0);
        CHECK(s->cov(0, 1) == s->cov(1, 0));
        CHECK((s->opacity > 0.0 && s->opacity < 1.0));
    }
    CHECK(emitted > 100);
}

TEST_CASE("activate applies sigmoid, exp and clamp") {
    Gaussian g;
    g.color = Vec3(1.5, -0.2, 0.7);
    const Activated a = activate(g);
    CHECK(a.opacity == 0.5);
    CHECK(a.scales == Vec3::Ones());
    CHECK(a.color == Vec3(1.0, 0.0, 0.7));
    double prev = 0.0;
    for (double x = -20.0; x <= 20.0; x += 0.5) {
        g.opacity_raw = x;
        const double o = activate(g).opacity;
        CHECK(o > prev);
        CHECK((o > 0.0 && o < 1.0));
        prev = o;
    }
    CHECK(logit(sigmoid(0.3)) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("camera pose validation") {
    CameraPose p = axis_camera(8, 8, 10.0);
    CHECK_NOTHROW(p.validate());
    p.world_to_camera(0, 0) = 1.001;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = axis_camera(8, 8, 10.0);
    p.fx = 0.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = axis_camera(8, 8, 10.0);
    p.width = 0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("cloud keeps parameters, moments and statistics aligned") {
    GaussianCloud cloud;
    for (int i = 0; i < 5; ++i) {
        Gaussian g;
        g.mu = Vec3(i, 0, 0);
        AdamMoments m;
        m.m[0] = i;
        cloud.push_back(g, m);
        cloud.stats(i).grad_accum = i;
        cloud.stats(i).views = 1;
    }
    cloud.keep({true, false, true, false, true});
    REQUIRE(cloud.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double orig = 2.0 * i;
        CHECK(cloud[i].mu.x() == orig);
        CHECK(cloud.moments(i).m[0] == orig);
        CHECK(cloud.stats(i).mean() == orig);
    }
    cloud.reset_stats();
    CHECK(cloud.stats(1).views == 0);
    CHECK_THROWS_AS(cloud.keep({true}), InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(9);
    GaussianCloud cloud = testing::random_cloud(rng, 17);
    const auto dir = testing::scratch_dir("checkpoint");
    save_checkpoint(cloud, dir / "model.ply");
    const GaussianCloud back = load_checkpoint(dir / "model.ply");
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        // stored as float32
        CHECK((back[i].mu - cloud[i].mu).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((back[i].rotation - cloud[i].rotation).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(std::abs(back[i].opacity_raw - cloud[i].opacity_raw) < 1e-6);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ply"), IoError);
}
