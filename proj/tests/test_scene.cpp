#include "gaussedit/scene.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace gaussedit;

namespace {

Vec4 axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized() * std::sin(angle / 2);
    return {std::cos(angle / 2), a.x(), a.y(), a.z()};
}

} // namespace

TEST(Covariance, IdentityRotationUnitScaleIsIdentity) {
    const Mat3 s = covariance_from(identity_quaternion(), Vec3(1, 1, 1));
    EXPECT_TRUE(s.isApprox(Mat3::Identity(), 1e-15));
}

TEST(Covariance, QuarterTurnAboutZSwapsAxes) {
    // diag(4, 1, 1) rotated by Rz(90 deg) is diag(1, 4, 1).
    const Mat3 s = covariance_from(axis_angle(Vec3::UnitZ(), kPi / 2), Vec3(2, 1, 1));
    const Mat3 expected = Vec3(1, 4, 1).asDiagonal();
    EXPECT_LT((s - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, RandomInputsAreSymmetricPsd) {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const Gaussian g = oracle::random_gaussian(rng);
        const Mat3 s = covariance_of(g);
        EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(s);
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9);
    }
}

TEST(Covariance, NonFiniteInputIsRejected) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        covariance_from(Vec4(nan, 0, 0, 0), Vec3(1, 1, 1));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
    }
    EXPECT_THROW(covariance_from(identity_quaternion(), Vec3(1, 0, 1)), Error);
}

TEST(EvalGaussian, ValueAtCenterIsOne) {
    EXPECT_DOUBLE_EQ(eval_gaussian(Mat3::Identity(), Vec3::Zero()), 1.0);
}

TEST(EvalGaussian, HandEvaluatedPoints) {
    EXPECT_NEAR(eval_gaussian(Mat3::Identity(), Vec3(1, 0, 0)), std::exp(-0.5), 1e-9);
    const Mat3 sigma = Vec3(4, 1, 1).asDiagonal();
    EXPECT_NEAR(eval_gaussian(sigma, Vec3(2, 0, 0)), std::exp(-0.5), 1e-9);
    EXPECT_NEAR(std::exp(-0.5), 0.6065, 1e-4);
}

TEST(EvalGaussian, MonotoneAlongRays) {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Gaussian g = oracle::random_gaussian(rng);
        const Vec3 dir(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        double prev = 1.0;
        for (int k = 1; k <= 20; ++k) {
            const double v = eval_gaussian(g, dir * (0.05 * k));
            EXPECT_LE(v, prev + 1e-15);
            prev = v;
        }
    }
}

TEST(EvalGaussian, InvariantUnderJointRotation) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        Gaussian g = oracle::random_gaussian(rng);
        const Vec3 x(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
        const Vec4 r = axis_angle(Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), 1.0), uniform(rng, 0, 2 * kPi));
        const Eigen::Quaterniond qr(r[0], r[1], r[2], r[3]);
        const Eigen::Quaterniond qg(g.rot[0], g.rot[1], g.rot[2], g.rot[3]);
        const Eigen::Quaterniond composed = qr * qg;
        Gaussian rotated = g;
        rotated.rot = {composed.w(), composed.x(), composed.y(), composed.z()};
        const Vec3 xr = rotation_from_quaternion(r) * x;
        EXPECT_NEAR(eval_gaussian(g, x), eval_gaussian(rotated, xr), 1e-9);
    }
}

TEST(EvalGaussian, SingularCovarianceAfterRegularizationFails) {
    EXPECT_THROW(eval_gaussian(Mat3::Zero(), Vec3(1, 0, 0)), Error);
}

TEST(Color, DegreeZeroActivationAndClamp) {
    EXPECT_DOUBLE_EQ(color_from_sh0(0.0), 0.5);
    EXPECT_DOUBLE_EQ(color_from_sh0(1.0), 0.5 + 0.28209479177387814);
    EXPECT_DOUBLE_EQ(color_from_sh0(10.0), 1.0);
    EXPECT_DOUBLE_EQ(color_from_sh0(-10.0), 0.0);
    EXPECT_NEAR(color_from_sh0(sh0_from_color(0.8)), 0.8, 1e-15);
}

TEST(Gaussian, ActivationsStayInDomain) {
    Gaussian g;
    g.opacity_logit = -30;
    EXPECT_GT(g.opacity(), 0.0);
    g.opacity_logit = 30;
    EXPECT_LE(g.opacity(), 1.0);
    g.log_scale = Vec3(-5, 0, 5);
    EXPECT_TRUE((g.scale().array() > 0).all());
}

TEST(GaussianScene, EditableSuffixBookkeeping) {
    GaussianScene scene(std::vector<Gaussian>(10));
    EXPECT_TRUE(scene.editable_range().empty());
    scene.set_editable_suffix(4);
    EXPECT_EQ(scene.editable_range(), (IndexRange{6, 10}));
    EXPECT_EQ(scene.frozen().size(), 6u);
    EXPECT_EQ(scene.editable().size(), 4u);
    EXPECT_THROW(scene.set_editable_suffix(11), Error);
}

TEST(GaussianScene, ValidateRejectsNonFinite) {
    std::vector<Gaussian> gs(2);
    gs[1].sh0[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(validate(GaussianScene(gs)), Error);
}
