#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mvembed/dataset.hpp"
#include "mvembed/models.hpp"
#include "mvembed/nn/checkpoint.hpp"
#include "mvembed/renderer.hpp"
#include "mvembed/view_select.hpp"
#include "support.hpp"

using namespace mvembed;
using testsupport::mini_encoder;

namespace {

std::vector<ViewStack> primitive_stacks(int k, int resolution, int per_class, std::vector<int>* labels) {
    std::vector<ViewStack> out;
    SynthSpec spec;
    spec.instances_per_class = per_class;
    spec.seed = 3;
    int label = 0;
    std::string last;
    for (const auto& m : generate_synthetic(spec)) {
        if (m.entry.class_label != last && !last.empty()) ++label;
        last = m.entry.class_label;
        const auto vs = render_turntable(normalize_mesh(m.mesh), m.entry.model_id, 30, resolution);
        out.push_back(select_representatives(vs, k, model_seed(m.entry.model_id, 1)));
        if (labels) labels->push_back(label);
    }
    return out;
}

// Shapes of batch-of-one activations in tape order, consecutive repeats removed.
std::vector<nn::Shape> activation_shapes(const nn::Tape<float>& t) {
    std::vector<nn::Shape> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& s = t.shape(nn::Var{i});
        if (s.size() == 4 && s[0] == 1 && (out.empty() || out.back() != s)) out.push_back(s);
    }
    return out;
}

} // namespace

TEST(Encoder, BlockLayoutDeskWidth) {
    EncoderConfig e;
    e.base_channels = 8;
    for (int b = 1; b <= 4; ++b) EXPECT_EQ(e.block_channels(b), 8 << b);
    EXPECT_EQ(e.bottom_size(), 4);
    EXPECT_EQ(e.flatten_dim(), 2048);
}

TEST(Encoder, FullWidthChannelsAndSpatialHalving) {
    EncoderConfig e;
    e.base_channels = 64;
    e.in_channels = 3;
    auto m = init_model<float>(ModelKind::Autoencoder, e, 0, 1);
    nn::Tape<float> t;
    const auto z = encoder_forward(t, m, t.constant(nn::Tensor<float>({1, 3, 64, 64})));
    const std::vector<nn::Shape> expect{{1, 3, 64, 64},   {1, 128, 64, 64}, {1, 128, 32, 32}, {1, 256, 32, 32},
                                        {1, 256, 16, 16}, {1, 512, 16, 16}, {1, 512, 8, 8},   {1, 1024, 8, 8},
                                        {1, 1024, 4, 4}};
    EXPECT_EQ(activation_shapes(t), expect);
    EXPECT_EQ(t.shape(z.bottleneck), (nn::Shape{1, 128}));
    EXPECT_EQ(m.params.at("enc.fc.w").value.shape(), (nn::Shape{1024 * 16, 128}));
}

TEST(Decoder, MirrorsEncoderShape) {
    for (int k : {2, 3, 4}) {
        auto m = init_model<float>(ModelKind::Combined, mini_encoder(k), 3, 2);
        nn::Tape<float> t;
        const auto z = encoder_forward(t, m, t.constant(nn::Tensor<float>({2, std::size_t(k), 16, 16})));
        EXPECT_EQ(t.shape(decoder_forward(t, m, z.bottleneck)), (nn::Shape{2, std::size_t(k), 16, 16}));
        EXPECT_EQ(t.shape(classifier_forward(t, m, z.bottleneck)), (nn::Shape{2, 3}));
    }
}

TEST(Decoder, ZeroOutputWeightsGiveBiasMap) {
    auto m = init_model<double>(ModelKind::Autoencoder, mini_encoder(2), 0, 4);
    m.params.at("dec.out.w").value.fill(0.0);
    m.params.at("dec.out.b").value = nn::Tensor<double>({2}, std::vector<double>{0.25, -0.5});
    std::mt19937_64 rng(1);
    nn::Tape<double> t;
    const auto z = encoder_forward(t, m, t.constant(testsupport::random_tensor<double>(rng, {1, 2, 16, 16})));
    const auto& y = t.value(decoder_forward(t, m, z.bottleneck));
    for (std::size_t i = 0; i < 256; ++i) {
        EXPECT_EQ(y[i], 0.25);
        EXPECT_EQ(y[256 + i], -0.5);
    }
}

TEST(Classifier, ZeroHeadGivesLogTwoLoss) {
    auto m = init_model<double>(ModelKind::Classification, mini_encoder(2), 2, 5);
    m.params.at("cls.fc.w").value.fill(0.0);
    std::mt19937_64 rng(2);
    nn::Tape<double> t;
    const auto z = encoder_forward(t, m, t.constant(testsupport::random_tensor<double>(rng, {3, 2, 16, 16})));
    const std::vector<int> labels{0, 1, 1};
    const auto l = nn::softmax_cross_entropy<double>(t, classifier_forward(t, m, z.bottleneck), labels);
    EXPECT_NEAR(t.value(l)[0], std::log(2.0), 1e-15);
}

TEST(Models, ParameterNamesPerKind) {
    const auto e = mini_encoder(2);
    const auto ae = init_model<float>(ModelKind::Autoencoder, e, 0, 1);
    const auto cls = init_model<float>(ModelKind::Classification, e, 4, 1);
    const auto comb = init_model<float>(ModelKind::Combined, e, 4, 1);
    EXPECT_TRUE(ae.params.contains("dec.b3.deconv.w"));
    EXPECT_FALSE(ae.params.contains("cls.fc.w"));
    EXPECT_FALSE(cls.params.contains("dec.fc.w"));
    EXPECT_EQ(comb.params.size(), ae.params.size() + 2);
    EXPECT_EQ(cls.params.at("enc.b2.conv1.w").value, ae.params.at("enc.b2.conv1.w").value);
    EXPECT_EQ(comb.params.at("dec.b1.deconv.w").value, ae.params.at("dec.b1.deconv.w").value);
    EXPECT_THROW(init_model<float>(ModelKind::Classification, e, 1, 1), ConfigError);
}

TEST(Models, GradientCheckEndToEnd) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        for (auto kind : {ModelKind::Autoencoder, ModelKind::Classification, ModelKind::Combined}) {
            auto m = init_model<double>(kind, mini_encoder(2), 3, seed);
            // nonzero biases exercise the bias paths too
            for (auto& p : m.params)
                if (p.value.rank() == 1)
                    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.05 * std::sin(double(i + seed));
            const auto batch = testsupport::random_tensor<double>(rng, {2, 2, 16, 16});
            const std::vector<int> labels{int(seed % 3), int((seed + 1) % 3)};
            const auto r = testsupport::model_gradcheck(m, batch, labels, rng, 1e-7L, 3);
            EXPECT_LT(r.max_rel_error, 1e-4) << to_string(kind) << " seed " << seed << ": " << r.worst;
            EXPECT_LE(r.kinks * 10, r.coords) << to_string(kind) << " seed " << seed;
        }
    }
}

TEST(Models, FromParamsRecoversLayout) {
    EncoderConfig e = mini_encoder(3);
    e.resolution = 32;
    e.bottleneck_dim = 12;
    auto m = init_model<float>(ModelKind::Combined, e, 5, 9);
    std::stringstream buf;
    nn::write_checkpoint(m.params, buf);
    const auto back = model_from_params(nn::read_checkpoint<float>(buf));
    EXPECT_EQ(back.kind, ModelKind::Combined);
    EXPECT_EQ(back.encoder, e);
    EXPECT_EQ(back.num_classes, 5);
}

TEST(Models, FromParamsRejectsForeignSets) {
    nn::ParameterSet<float> ps;
    ps.add("w", nn::Tensor<float>({2}));
    EXPECT_THROW(model_from_params(std::move(ps)), FormatError);
    auto m = init_model<float>(ModelKind::Autoencoder, mini_encoder(2), 0, 1);
    nn::ParameterSet<float> partial;
    for (const auto& p : m.params)
        if (p.name != "dec.b2.deconv.b") partial.add(p.name, p.value);
    EXPECT_THROW(model_from_params(std::move(partial)), FormatError);
}

class Training : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        labels_ = new std::vector<int>;
        stacks_ = new std::vector<ViewStack>(primitive_stacks(2, 16, 7, labels_));
    }
    static void TearDownTestSuite() {
        delete stacks_;
        delete labels_;
    }
    static std::vector<ViewStack>* stacks_;
    static std::vector<int>* labels_;
};
std::vector<ViewStack>* Training::stacks_ = nullptr;
std::vector<int>* Training::labels_ = nullptr;

TEST_F(Training, LambdaZeroCombinedMatchesAutoencoder) {
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.iterations = 15;
    cfg.adam.lr = 1e-3;
    cfg.lambda = 0.0;
    const auto e = mini_encoder(2);
    auto ae = train<float>(ModelKind::Autoencoder, *stacks_, *labels_, 6, cfg, e);
    auto comb = train<float>(ModelKind::Combined, *stacks_, *labels_, 6, cfg, e);
    EXPECT_EQ(ae.loss_curve, comb.loss_curve);
    for (const auto& p : ae.model.params) EXPECT_EQ(p.value, comb.model.params.at(p.name).value) << p.name;
}

TEST_F(Training, DeterministicPerSeed) {
    TrainConfig cfg;
    cfg.batch_size = 3;
    cfg.iterations = 10;
    const auto e = mini_encoder(2);
    auto a = train<float>(ModelKind::Combined, *stacks_, *labels_, 6, cfg, e);
    auto b = train<float>(ModelKind::Combined, *stacks_, *labels_, 6, cfg, e);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    for (const auto& p : a.model.params) EXPECT_EQ(p.value, b.model.params.at(p.name).value);
    cfg.seed = 2;
    auto c = train<float>(ModelKind::Combined, *stacks_, *labels_, 6, cfg, e);
    EXPECT_NE(a.loss_curve, c.loss_curve);
}

TEST_F(Training, AutoencoderLossFalls) {
    const auto e = mini_encoder(2);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        TrainConfig cfg;
        cfg.batch_size = 4;
        cfg.iterations = 200;
        cfg.adam.lr = 2e-3;
        cfg.seed = seed;
        auto r = train<float>(ModelKind::Autoencoder, *stacks_, *labels_, 6, cfg, e);
        double first = 0, last = 0;
        for (int i = 0; i < 20; ++i) {
            first += r.loss_curve[i];
            last += r.loss_curve[r.loss_curve.size() - 1 - i];
        }
        EXPECT_LE(last, 0.5 * first) << "seed " << seed;
    }
}

TEST_F(Training, ObserverSeesPreUpdateBottleneck) {
    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.iterations = 1;
    const auto e = mini_encoder(2);
    std::vector<float> seen;
    std::size_t which = 0;
    train<float>(ModelKind::Classification, *stacks_, *labels_, 6, cfg, e,
                 [&](std::size_t, std::span<const std::size_t> batch, const nn::Tensor<float>& z) {
                     which = batch[0];
                     seen.assign(z.data().begin(), z.data().end());
                 });
    auto fresh = init_model<float>(ModelKind::Classification, e, 6, cfg.seed);
    EXPECT_EQ(embed(fresh, (*stacks_)[which]).vector, seen);
}

TEST_F(Training, EmbedAllMatchesSingleEmbeds) {
    auto m = init_model<float>(ModelKind::Autoencoder, mini_encoder(2), 0, 3);
    const auto all = embed_all(m, *stacks_);
    ASSERT_EQ(all.size(), stacks_->size());
    for (std::size_t i = 0; i < all.size(); i += 5) {
        const auto one = embed(m, (*stacks_)[i]);
        EXPECT_EQ(one.model_id, all[i].model_id);
        for (std::size_t d = 0; d < one.vector.size(); ++d) EXPECT_NEAR(one.vector[d], all[i].vector[d], 1e-5);
        for (float v : one.vector) EXPECT_GE(v, 0.0f);
    }
}

TEST_F(Training, RejectsBadInput) {
    TrainConfig cfg;
    cfg.iterations = 1;
    cfg.batch_size = 1;
    const auto e = mini_encoder(2);
    EXPECT_THROW(train<float>(ModelKind::Autoencoder, std::span<const ViewStack>{}, {}, 0, cfg, e), TrainingError);
    std::vector<int> bad(labels_->size(), 0);
    bad[0] = 6;
    EXPECT_THROW(train<float>(ModelKind::Classification, *stacks_, bad, 6, cfg, e), TrainingError);
    EXPECT_THROW(train<float>(ModelKind::Autoencoder, *stacks_, *labels_, 6, cfg, mini_encoder(3)), ShapeError);
    cfg.iterations = 0;
    EXPECT_THROW(train<float>(ModelKind::Autoencoder, *stacks_, *labels_, 6, cfg, e), ConfigError);
}

TEST_F(Training, DivergenceAborts) {
    TrainConfig cfg;
    cfg.iterations = 2;
    cfg.batch_size = 1;
    cfg.abort_threshold = 1e-12;
    EXPECT_THROW(train<float>(ModelKind::Autoencoder, *stacks_, *labels_, 6, cfg, mini_encoder(2)), TrainingError);
}
