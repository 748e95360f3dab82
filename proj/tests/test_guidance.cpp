#include "gaussedit/guidance.hpp"
#include "gaussedit/remote_guidance.hpp"
#include "support/mock_service.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gaussedit;

namespace {

Prompt stone_prompt() { return Prompt("A OBJECT stands on a stone", "V* horse", "horse"); }

Image gradient_image(int w, int h, double offset = 0.0) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.set(x, y, Vec3((x + 0.5) / w, (y + 0.5) / h, std::fmod(0.3 + offset + 0.01 * (x + y), 1.0)));
    return img;
}

GuidanceRequest single_request(const Image& img) {
    GuidanceRequest req;
    req.images = {img};
    req.prompt_text = "a red horse";
    req.timestep = 0.4;
    return req;
}

RemoteOptions fast_retry() {
    RemoteOptions o;
    o.max_attempts = 2;
    o.retry_backoff = std::chrono::milliseconds(1);
    o.connect_timeout = std::chrono::seconds(1);
    return o;
}

} // namespace

TEST(Prompt, SubstitutesObjectAndCategoryTerms) {
    const Prompt p = stone_prompt();
    EXPECT_EQ(substitute(p, TermMode::ObjectTerm), "A V* horse stands on a stone");
    EXPECT_EQ(substitute(p, TermMode::CategoryTerm), "A horse stands on a stone");
}

TEST(Prompt, EqualTermsGiveEqualStrings) {
    const Prompt p("a photo of OBJECT", "cat", "cat");
    EXPECT_EQ(substitute(p, TermMode::ObjectTerm), substitute(p, TermMode::CategoryTerm));
}

TEST(Prompt, PlaceholderMustAppearExactlyOnce) {
    EXPECT_THROW(Prompt("a horse on a stone", "V* horse", "horse"), Error);
    EXPECT_THROW(Prompt("OBJECT and OBJECT", "V* horse", "horse"), Error);
    EXPECT_THROW(Prompt("OBJECT", "", "horse"), Error);
}

TEST(Prompt, OnlyThePlaceholderChanges) {
    EXPECT_THROW(Prompt("OBJECTive OBJECT", "a", "b"), Error);
    const Prompt q("draw the OBJECT, then stop", "V* dog", "dog");
    const std::string s = substitute(q, TermMode::ObjectTerm);
    EXPECT_EQ(s, "draw the V* dog, then stop");
    EXPECT_EQ(substitute(q, TermMode::ObjectTerm), s);
}

TEST(Alternation, DefaultIsEvenSingleOddMulti) {
    const AlternationSchedule s;
    EXPECT_EQ(select_backend(0, s), Backend::SingleView);
    EXPECT_EQ(select_backend(1, s), Backend::MultiView);
    EXPECT_EQ(select_backend(2, s), Backend::SingleView);
}

TEST(Alternation, ThreeToOneUnrolls) {
    const AlternationSchedule s{3, 1};
    const Backend expected[] = {Backend::SingleView, Backend::SingleView, Backend::SingleView, Backend::MultiView};
    for (std::uint64_t i = 0; i < 40; ++i) EXPECT_EQ(select_backend(i, s), expected[i % 4]) << i;
}

TEST(Alternation, EveryWindowHasExactCounts) {
    for (const AlternationSchedule s : {AlternationSchedule{1, 1}, AlternationSchedule{3, 1}, AlternationSchedule{2, 5},
                                        AlternationSchedule{1, 0}, AlternationSchedule{0, 2}}) {
        const std::uint64_t period = s.single_view + s.multi_view;
        for (std::uint64_t start = 0; start < 3 * period; ++start) {
            std::uint64_t sv = 0;
            for (std::uint64_t i = start; i < start + period; ++i) sv += select_backend(i, s) == Backend::SingleView;
            EXPECT_EQ(sv, s.single_view);
        }
    }
    EXPECT_THROW(select_backend(0, AlternationSchedule{0, 0}), Error);
}

TEST(MockResidual, FixedPointAndGain) {
    const Image img = gradient_image(8, 6);
    const auto req = single_request(img);
    const auto same = mock_residual(req, img, 3.0);
    for (double v : same.residuals[0].data()) EXPECT_EQ(v, 0.0);
    const auto no_gain = mock_residual(req, gradient_image(8, 6, 0.2), 0.0);
    for (double v : no_gain.residuals[0].data()) EXPECT_EQ(v, 0.0);

    Image target(8, 6, 0.4), shifted(8, 6, 0.5);
    const auto r = mock_residual(single_request(shifted), target, 2.0).residuals[0];
    for (double v : r.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(MockResidual, ShapeMismatchIsArgumentError) {
    try {
        mock_residual(single_request(Image(8, 6)), Image(6, 8), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Argument);
    }
}

TEST(GuidanceRequest, ArityAndTimestepChecked) {
    GuidanceRequest req = single_request(Image(4, 4));
    req.backend = Backend::MultiView;
    EXPECT_THROW(req.validate(), Error);
    req.images.assign(4, Image(4, 4));
    EXPECT_NO_THROW(req.validate());
    req.timestep = 1.0;
    EXPECT_THROW(req.validate(), Error);
}

TEST(MockGuidance, Img2ImgModes) {
    const Image img = gradient_image(10, 10);
    MockGuidance echo(Image(10, 10, 1.0));
    EXPECT_EQ(echo.img2img(img, "p", 0.7, 1), img);

    MockGuidance blend(Image(10, 10, 1.0), {1.0, MockImg2Img::BlendToTarget});
    EXPECT_EQ(blend.img2img(img, "p", 0.0, 1), img);
    const Image half = blend.img2img(img, "p", 0.5, 1);
    EXPECT_NEAR(half.at(3, 4, 1), 0.5 * img.at(3, 4, 1) + 0.5, 1e-15);
}

TEST(MockGuidance, EmbeddingsAreDeterministic) {
    MockGuidance g;
    EXPECT_EQ(g.embed_text("a"), g.embed_text("a"));
    EXPECT_NE(g.embed_text("a").values, g.embed_text("b").values);
    const Image img = gradient_image(16, 16);
    EXPECT_EQ(g.embed_image(EmbedKind::ClipImage, img), g.embed_image(EmbedKind::ClipImage, img));
    EXPECT_EQ(g.embed_image(EmbedKind::DinoImage, img).dim(), g.embedding_dim());
    EXPECT_THROW(g.embed_image(EmbedKind::ClipText, img), Error);
}

TEST(RemoteGuidance, ResidualRoundTripThroughService) {
    const Image target = gradient_image(12, 9, 0.1);
    oracle::MockService service(MockGuidance(target, {2.0}));
    RemoteGuidance remote(service.url(), fast_retry());
    EXPECT_EQ(remote.health().status, "ok");

    const Image view = gradient_image(12, 9);
    const auto res = remote.residual(single_request(view));
    ASSERT_EQ(res.residuals.size(), 1u);
    ASSERT_TRUE(res.residuals[0].same_shape(view));
    // The view crosses the wire as 8-bit PNG, the residual as float32.
    for (std::size_t i = 0; i < view.data().size(); ++i)
        EXPECT_NEAR(res.residuals[0].data()[i], 2.0 * (view.data()[i] - target.data()[i]), 2.0 / 255 + 1e-6);
}

TEST(RemoteGuidance, MultiViewArity) {
    oracle::MockService service(MockGuidance(Image(8, 8, 0.5)));
    RemoteGuidance remote(service.url(), fast_retry());
    GuidanceRequest req = single_request(Image(8, 8));
    req.backend = Backend::MultiView;
    req.images.assign(4, Image(8, 8, 0.25));
    for (int i = 0; i < 4; ++i) req.view_poses.push_back({90.0 * i, 15.0, 2.0});
    const auto res = remote.residual(req);
    ASSERT_EQ(res.residuals.size(), 4u);
    for (const auto& r : res.residuals) EXPECT_NEAR(r.at(0, 0, 0), -0.25, 0.5 / 255);
}

TEST(RemoteGuidance, Img2ImgZeroStrengthEchoesWithinQuantization) {
    oracle::MockService service(MockGuidance{});
    RemoteGuidance remote(service.url(), fast_retry());
    const Image img = gradient_image(20, 14);
    const Image out = remote.img2img(img, "a horse", 0.0, 7);
    ASSERT_TRUE(out.same_shape(img));
    EXPECT_LE(max_abs_difference(out, img), 0.5 / 255 + 1e-12);
}

TEST(RemoteGuidance, EmbedIsDeterministicAndPersonalizeReturnsToken) {
    oracle::MockService service(MockGuidance{});
    RemoteGuidance remote(service.url(), fast_retry());
    const Embedding a = remote.embed_text("a"), b = remote.embed_text("a");
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(remote.embed_image(EmbedKind::DinoImage, gradient_image(8, 8)).dim(), 48u);
    const std::vector<Image> refs = {gradient_image(8, 8)};
    const auto p = remote.personalize(refs, "horse");
    EXPECT_EQ(p.token, "V*");
    EXPECT_EQ(p.adapter_id, remote.personalize(refs, "horse").adapter_id);
}

TEST(RemoteGuidance, WrongResidualShapeIsProtocolError) {
    oracle::MockService service(MockGuidance(Image(8, 8, 0.5)));
    service.set_fault(oracle::MockService::Fault::WrongResidualShape);
    RemoteGuidance remote(service.url(), fast_retry());
    try {
        remote.residual(single_request(Image(8, 8)));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Protocol);
    }
}

TEST(RemoteGuidance, MalformedRepliesAreProtocolErrors) {
    oracle::MockService service(MockGuidance{});
    RemoteGuidance remote(service.url(), fast_retry());
    for (auto fault : {oracle::MockService::Fault::MalformedJson, oracle::MockService::Fault::MissingField}) {
        service.set_fault(fault);
        try {
            remote.img2img(Image(4, 4), "p", 0.5, 0);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Protocol);
            EXPECT_FALSE(e.retryable());
        }
    }
}

TEST(RemoteGuidance, ModelErrorSurfacesVerbatim) {
    oracle::MockService service(MockGuidance{});
    service.set_fault(oracle::MockService::Fault::ModelError);
    RemoteGuidance remote(service.url(), fast_retry());
    try {
        remote.embed_text("x");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Model);
        EXPECT_STREQ(e.what(), "CUDA out of memory");
        EXPECT_EQ(e.exit_code(), ExitCode::Service);
    }
}

TEST(RemoteGuidance, UnreachableServiceIsRetryableTransportError) {
    RemoteGuidance remote("http://127.0.0.1:1", fast_retry());
    try {
        remote.embed_text("x");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Transport);
        EXPECT_TRUE(e.retryable());
    }
    EXPECT_THROW(RemoteGuidance("localhost:8000"), Error);
}
