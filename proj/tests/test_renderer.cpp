#include "gaussedit/renderer.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace gaussedit;
using oracle::naive_render;

namespace {

Camera axis_camera(int w, int h, double f) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    return cam;
}

Splat2D splat_at(const Vec2& mean, double opacity, const Vec3& color, double depth) {
    Splat2D s;
    s.mean2d = mean;
    s.cov2d = Mat2::Identity();
    s.opacity = opacity;
    s.color = color;
    s.depth = depth;
    return s;
}

bool gradient_close(double analytic, double numeric) {
    return std::abs(analytic - numeric) <= std::max(1e-3 * std::abs(numeric), 1e-6);
}

} // namespace

TEST(Project, OnAxisIsotropicGaussian) {
    const Camera cam = axis_camera(64, 64, 50.0);
    Gaussian g;
    g.mu = Vec3(0, 0, 5.0);
    g.log_scale = Vec3::Constant(std::log(0.2));
    const auto s = project(g, cam);
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->mean2d.x(), cam.cx, 1e-12);
    EXPECT_NEAR(s->mean2d.y(), cam.cy, 1e-12);
    const double v = std::pow(50.0 * 0.2 / 5.0, 2) + 0.3;
    EXPECT_NEAR(s->cov2d(0, 0), v, 1e-12);
    EXPECT_NEAR(s->cov2d(1, 1), v, 1e-12);
    EXPECT_NEAR(s->cov2d(0, 1), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(s->depth, 5.0);
}

TEST(Project, CullsBehindNearPlane) {
    Camera cam = axis_camera(32, 32, 30.0);
    cam.znear = 1.0;
    Gaussian g;
    g.mu = Vec3(0, 0, 0.5);
    EXPECT_FALSE(project(g, cam).has_value());
}

TEST(Project, CullsFootprintOutsideViewport) {
    const Camera cam = axis_camera(32, 32, 30.0);
    Gaussian g;
    g.mu = Vec3(100, 0, 5);
    g.log_scale = Vec3::Constant(std::log(0.01));
    EXPECT_FALSE(project(g, cam).has_value());
}

TEST(Project, RigidMotionOfWorldAndCameraIsInvisible) {
    Rng rng(5);
    const Camera cam = oracle::test_camera(32, 32);
    for (int i = 0; i < 50; ++i) {
        Gaussian g = oracle::random_gaussian(rng);
        const Vec4 qt = Vec4(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), 1.0).normalized();
        RigidTransform t{rotation_from_quaternion(qt), Vec3(uniform(rng, -3, 3), uniform(rng, -3, 3), 1.0)};
        Gaussian moved = g;
        moved.mu = t.apply(g.mu);
        const Eigen::Quaterniond composed =
            Eigen::Quaterniond(qt[0], qt[1], qt[2], qt[3]) * Eigen::Quaterniond(g.rot[0], g.rot[1], g.rot[2], g.rot[3]);
        moved.rot = {composed.w(), composed.x(), composed.y(), composed.z()};
        Camera moved_cam = cam;
        moved_cam.world_to_camera = cam.world_to_camera * t.inverse();
        const auto a = project(g, cam), b = project(moved, moved_cam);
        ASSERT_EQ(a.has_value(), b.has_value());
        if (!a) continue;
        EXPECT_LT((a->mean2d - b->mean2d).norm(), 1e-9);
        EXPECT_LT((a->cov2d - b->cov2d).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(a->depth, b->depth, 1e-9);
    }
}

TEST(CompositePixel, NoSplatsGivesBackground) {
    RenderSettings settings;
    settings.background = Vec3(0.1, 0.2, 0.3);
    EXPECT_EQ(composite_pixel({}, Vec2(0, 0), settings), settings.background);
}

TEST(CompositePixel, SingleHalfOpaqueRedSplat) {
    const std::vector<Splat2D> splats = {splat_at({0, 0}, 0.5, {1, 0, 0}, 1.0)};
    const Vec3 c = composite_pixel(splats, Vec2(0, 0));
    EXPECT_NEAR(c.x(), 0.5, 1e-15);
    EXPECT_EQ(c.y(), 0.0);
    EXPECT_EQ(c.z(), 0.0);
}

TEST(CompositePixel, SecondSplatIsClamped) {
    const std::vector<Splat2D> splats = {splat_at({0, 0}, 0.5, {1, 0, 0}, 1.0), splat_at({0, 0}, 1.0, {0, 1, 0}, 2.0)};
    const Vec3 c = composite_pixel(splats, Vec2(0, 0));
    EXPECT_NEAR(c.x(), 0.5, 1e-15);
    EXPECT_NEAR(c.y(), 0.495, 1e-15);
    EXPECT_EQ(c.z(), 0.0);
}

TEST(CompositePixel, UnsortedInputIsContractViolation) {
    RenderSettings settings;
    settings.check_order = true;
    const std::vector<Splat2D> splats = {splat_at({0, 0}, 0.5, {1, 0, 0}, 2.0), splat_at({0, 0}, 0.5, {0, 1, 0}, 1.0)};
    try {
        composite_pixel(splats, Vec2(0, 0), settings);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ContractViolation);
    }
}

TEST(Render, EditableOnlyWithEmptyRangeIsBackground) {
    Rng rng(1);
    GaussianScene scene = oracle::random_scene(rng, 5, 0);
    RenderSettings settings;
    settings.background = Vec3(0.25, 0.5, 0.75);
    const Camera cam = oracle::test_camera(16, 12);
    EXPECT_EQ(render(scene, cam, RenderSubset::EditableOnly, settings), Image(16, 12, settings.background));
}

TEST(Render, AllEqualsEditableOnlyWithoutFrozen) {
    Rng rng(2);
    const GaussianScene scene = oracle::random_scene(rng, 10, 10);
    const Camera cam = oracle::test_camera(32, 32);
    EXPECT_EQ(render(scene, cam, RenderSubset::All), render(scene, cam, RenderSubset::EditableOnly));
}

TEST(Render, MatchesNaiveOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng() % 16;
        const GaussianScene scene = oracle::random_scene(rng, n, rng() % (n + 1));
        const Camera cam = oracle::test_camera(32, 32, uniform(rng, 0, 360), uniform(rng, -20, 60));
        for (auto subset : {RenderSubset::All, RenderSubset::EditableOnly})
            EXPECT_LE(max_abs_difference(render(scene, cam, subset), naive_render(scene, cam, subset)), 1e-6);
    }
}

TEST(Render, TileSizeDoesNotChangeResult) {
    Rng rng(4);
    const GaussianScene scene = oracle::random_scene(rng, 30, 30);
    const Camera cam = oracle::test_camera(40, 24);
    RenderSettings a, b;
    a.tile_size = 16;
    b.tile_size = 5;
    EXPECT_LE(max_abs_difference(render(scene, cam, RenderSubset::All, a), render(scene, cam, RenderSubset::All, b)),
              1e-12);
}

TEST(Render, EqualDepthsBreakTiesByIndex) {
    Gaussian red, green;
    red.mu = green.mu = Vec3(0, 0, 4);
    red.sh0 = Vec3(sh0_from_color(1), sh0_from_color(0), sh0_from_color(0));
    green.sh0 = Vec3(sh0_from_color(0), sh0_from_color(1), sh0_from_color(0));
    red.opacity_logit = green.opacity_logit = 0.0;
    red.log_scale = green.log_scale = Vec3::Constant(std::log(0.3));
    const Camera cam = axis_camera(8, 8, 10.0);
    const Image rg = render(GaussianScene({red, green}), cam, RenderSubset::All);
    const Image gr = render(GaussianScene({green, red}), cam, RenderSubset::All);
    // Whichever comes first in storage is in front.
    EXPECT_GT(rg.pixel(4, 4).x(), rg.pixel(4, 4).y());
    EXPECT_GT(gr.pixel(4, 4).y(), gr.pixel(4, 4).x());
    EXPECT_EQ(rg, render(GaussianScene({red, green}), cam, RenderSubset::All));
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(6);
    const GaussianScene scene = oracle::random_scene(rng, 8, 5);
    const Camera cam = oracle::test_camera(16, 16);
    const SceneGradients g = render_backward(scene, cam, RenderSubset::All, Image(16, 16, 0.0));
    ASSERT_EQ(g.size(), 5u);
    for (const auto& gg : g)
        for (int k = 0; k < 14; ++k) EXPECT_EQ(oracle::parameter(gg, k), 0.0);
}

TEST(RenderBackward, Sh0MatchesFiniteDifferenceOnSingleGaussian) {
    Gaussian g;
    g.mu = Vec3(0.1, -0.05, 0.0);
    g.log_scale = Vec3::Constant(std::log(0.3));
    g.sh0 = Vec3(0.2, -0.4, 0.6);
    GaussianScene scene({g});
    scene.set_editable_suffix(1);
    const Camera cam = oracle::test_camera(16, 16);
    const Image ones(16, 16, 1.0);
    const auto loss = [&](const GaussianScene& s) {
        return oracle::weighted_sum(render(s, cam, RenderSubset::All), ones);
    };
    const SceneGradients grads = render_backward(scene, cam, RenderSubset::All, ones);
    for (int k = 10; k < 13; ++k) {
        const double fd = oracle::central_difference(scene, 0, k, 1e-4, loss);
        EXPECT_TRUE(gradient_close(oracle::parameter(grads[0], k), fd))
            << "k=" << k << " analytic=" << oracle::parameter(grads[0], k) << " fd=" << fd;
    }
}

TEST(RenderBackward, AllParametersMatchFiniteDifferences) {
    Rng rng(8);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t n = 1 + rng() % 8;
        const GaussianScene scene = oracle::random_scene(rng, n, 1 + rng() % n);
        const Camera cam = oracle::test_camera(16, 16, uniform(rng, 0, 360), uniform(rng, -10, 45));
        Image weights(16, 16);
        for (double& v : weights.data()) v = uniform(rng, -1, 1);
        const auto loss = [&](const GaussianScene& s) {
            return oracle::weighted_sum(render(s, cam, RenderSubset::All), weights);
        };
        const SceneGradients grads = render_backward(scene, cam, RenderSubset::All, weights);
        const auto range = scene.editable_range();
        for (std::size_t i = range.begin; i < range.end; ++i) {
            for (int k = 0; k < 14; ++k) {
                const double fd = oracle::central_difference(scene, i, k, 1e-5, loss);
                const double an = oracle::parameter(grads[i - range.begin], k);
                EXPECT_TRUE(gradient_close(an, fd)) << "trial " << trial << " gaussian " << i << " "
                                                    << oracle::parameter_class(k) << "[" << k << "] analytic=" << an
                                                    << " fd=" << fd;
            }
        }
    }
}

TEST(RenderBackward, RaisingOpacityOfOnlyRedSplatIncreasesRed) {
    Gaussian g;
    g.mu = Vec3(0, 0, 4);
    g.log_scale = Vec3::Constant(std::log(0.3));
    g.sh0 = Vec3(sh0_from_color(0.9), sh0_from_color(0.1), sh0_from_color(0.1));
    GaussianScene scene({g});
    scene.set_editable_suffix(1);
    const Camera cam = axis_camera(16, 16, 20.0);
    Image up(16, 16, 0.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) up.at(x, y, 0) = 1.0;
    const SceneGradients grads = render_backward(scene, cam, RenderSubset::All, up);
    EXPECT_GT(grads[0].d_opacity_logit, 0.0);
}

TEST(RenderBackward, FrozenGaussiansReceiveNoEntries) {
    Rng rng(9);
    const GaussianScene scene = oracle::random_scene(rng, 8, 3);
    const Camera cam = oracle::test_camera(16, 16);
    const SceneGradients g = render_backward(scene, cam, RenderSubset::All, Image(16, 16, 1.0));
    EXPECT_EQ(g.size(), 3u);
}

TEST(RenderBackward, NonFiniteUpstreamIsPropagationError) {
    Rng rng(10);
    const GaussianScene scene = oracle::random_scene(rng, 3, 3);
    const Camera cam = oracle::test_camera(8, 8);
    Image bad(8, 8, 0.0);
    bad.at(1, 1, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
        render_backward(scene, cam, RenderSubset::All, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Propagation);
    }
}
