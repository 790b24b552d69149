// Class-balanced weights, pixel cross-entropy fixtures, OHEM selection and
// the main/aux composition.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "miniseg/loss.hpp"
#include "testing/helpers.hpp"

using namespace miniseg;
using testing::random_tensor;

namespace {

std::array<std::uint64_t, kNumClasses> counts_of(
    std::initializer_list<std::pair<std::size_t, std::uint64_t>> entries) {
    std::array<std::uint64_t, kNumClasses> c{};
    for (auto [cls, n] : entries) c[cls] = n;
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// class_balanced_weights
// ---------------------------------------------------------------------------

TEST_CASE("equal counts give unit weights; beta 0 gives unit weights") {
    std::array<std::uint64_t, kNumClasses> eq{};
    eq.fill(1234);
    ClassWeights w = class_balanced_weights(eq, 0.9999);
    for (double v : w.w) CHECK(v == doctest::Approx(1.0));

    auto uneven = counts_of({{0, 10}, {5, 99999}, {18, 3}});
    ClassWeights w0 = class_balanced_weights(uneven, 0.0);
    for (double v : w0.w) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("effective-number weights match the direct formula") {
    auto counts = counts_of({{0, 10}, {1, 1000}});
    const double beta = 0.999;
    ClassWeights w = class_balanced_weights(counts, beta);

    // direct evaluation
    const double raw0 = (1.0 - beta) / (1.0 - std::pow(beta, 10.0));
    const double raw1 = (1.0 - beta) / (1.0 - std::pow(beta, 1000.0));
    const double raw_absent = std::max(raw0, raw1);
    double mean = raw0 + raw1 + 17.0 * raw_absent;
    mean /= 19.0;
    CHECK(w.w[0] == doctest::Approx(raw0 / mean).epsilon(1e-12));
    CHECK(w.w[1] == doctest::Approx(raw1 / mean).epsilon(1e-12));
    CHECK(w.w[2] == doctest::Approx(raw_absent / mean).epsilon(1e-12));
    CHECK(w.w[0] > w.w[1]);  // rarer class weighs more

    double m = 0;
    for (double v : w.w) {
        CHECK(v > 0.0);
        m += v;
    }
    CHECK(m / 19.0 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("inverse-frequency mode and error paths") {
    auto counts = counts_of({{0, 100}, {1, 300}});
    ClassWeights w =
        class_balanced_weights(counts, 0.0, WeightMode::inverse_frequency);
    CHECK(w.w[0] / w.w[1] == doctest::Approx(3.0));

    std::array<std::uint64_t, kNumClasses> zeros{};
    CHECK_THROWS_AS(class_balanced_weights(zeros, 0.9), DataError);
    CHECK_THROWS_AS(class_balanced_weights(counts, 1.0), ConfigError);
}

// ---------------------------------------------------------------------------
// pixel_ce
// ---------------------------------------------------------------------------

TEST_CASE("uniform 19-class logits give ln(19) per pixel") {
    auto logits = Tensor<float>::zeros({19, 2, 2});
    LabelMap labels(2, 2);
    labels.ids = {0, 5, 18, 7};
    auto res = pixel_ce(logits, labels, {});
    for (float v : res.loss.values()) {
        CHECK(v == doctest::Approx(std::log(19.0)).epsilon(1e-6));
    }
    for (float p : res.true_class_prob) {
        CHECK(p == doctest::Approx(1.0 / 19).epsilon(1e-6));
    }
}

TEST_CASE("huge true-class logit drives the loss to zero") {
    auto logits = Tensor<float>::zeros({19, 1, 1});
    logits.data()[3] = 1000.0f;
    LabelMap labels(1, 1);
    labels.ids = {3};
    auto res = pixel_ce(logits, labels, {});
    CHECK(res.loss.data()[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(res.true_class_prob[0] == doctest::Approx(1.0));
}

TEST_CASE("two-class weighted fixture: 2 * -ln(e/(e+1)) = 0.62652") {
    auto logits = Tensor<float>::from_vector({2, 1, 1}, {1.0f, 0.0f});
    LabelMap labels(1, 1);
    labels.ids = {0};
    std::vector<float> w{2.0f, 1.0f};
    auto res = pixel_ce(logits, labels, w);
    CHECK(res.loss.data()[0] == doctest::Approx(0.62652).epsilon(1e-4));
}

TEST_CASE("scaling all class weights by 2 scales the loss exactly") {
    Rng rng(1);
    auto logits = random_tensor<float>({19, 3, 3}, rng, false, -2, 2);
    LabelMap labels(3, 3);
    for (auto& id : labels.ids) {
        id = static_cast<std::uint8_t>(rng.uniform_int(19));
    }
    std::vector<float> w1(19), w2(19);
    for (std::size_t c = 0; c < 19; ++c) {
        w1[c] = float(rng.uniform(0.25, 2.0));
        w2[c] = 2.0f * w1[c];
    }
    auto r1 = pixel_ce(logits, labels, w1);
    auto r2 = pixel_ce(logits, labels, w2);
    for (std::size_t i = 0; i < r1.loss.numel(); ++i) {
        CHECK(2.0f * r1.loss.data()[i] == r2.loss.data()[i]);
    }
}

TEST_CASE("out-of-range label ids are a data error") {
    auto logits = Tensor<float>::zeros({19, 1, 1});
    LabelMap labels(1, 1);
    labels.ids = {30};
    CHECK_THROWS_AS(pixel_ce(logits, labels, {}), DataError);
}

TEST_CASE("ignore pixels contribute no loss and no gradient") {
    Rng rng(2);
    auto vals = testing::random_values<float>(19 * 4, rng, -2, 2);
    auto logits = Tensor<float>::from_vector({19, 2, 2}, vals, true);
    LabelMap labels(2, 2);
    labels.ids = {4, kIgnoreIndex, 7, kIgnoreIndex};
    auto res = pixel_ce(logits, labels, {});
    CHECK(res.loss.data()[1] == 0.0f);
    CHECK(res.loss.data()[3] == 0.0f);
    CHECK(res.valid_mask == std::vector<std::uint8_t>{1, 0, 1, 0});

    backward(sum(res.loss));
    auto g = logits.grad();
    for (std::size_t c = 0; c < 19; ++c) {
        CHECK(g[c * 4 + 1] == 0.0f);
        CHECK(g[c * 4 + 3] == 0.0f);
    }

    // perturbing ignore-pixel logits changes nothing
    auto vals2 = vals;
    for (std::size_t c = 0; c < 19; ++c) {
        vals2[c * 4 + 1] += float(rng.uniform(-3, 3));
        vals2[c * 4 + 3] += float(rng.uniform(-3, 3));
    }
    auto logits2 = Tensor<float>::from_vector({19, 2, 2}, vals2);
    auto res2 = pixel_ce(logits2, labels, {});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(res.loss.data()[i] == res2.loss.data()[i]);
    }
}

TEST_CASE("pixel_ce gradient matches finite differences") {
    Rng rng(3);
    LabelMap labels(2, 3);
    labels.ids = {0, 2, 1, kIgnoreIndex, 2, 0};
    std::vector<double> w{1.3, 0.7, 1.0};
    std::vector<Tensor<double>> inputs{
        random_tensor<double>({3, 2, 3}, rng, true, -1.5, 1.5)};
    auto proj = testing::random_values<double>(6, rng);
    auto fn = [&](const std::vector<Tensor<double>>& v) {
        auto res = pixel_ce<double>(v[0], labels, w);
        return testing::project_to_scalar(res.loss, proj);
    };
    CHECK(testing::gradcheck(fn, inputs) < 1e-4);
}

// ---------------------------------------------------------------------------
// ohem_select
// ---------------------------------------------------------------------------

TEST_CASE("all confidences below thresh keep the whole valid mask") {
    std::vector<float> loss{1, 2, 3, 4};
    std::vector<float> conf{0.1f, 0.2f, 0.3f, 0.4f};
    std::vector<std::uint8_t> valid{1, 1, 0, 1};
    OhemConfig cfg;
    cfg.thresh = 0.5;
    cfg.min_kept = 2;
    auto keep = ohem_select<float>(loss, conf, valid, cfg);
    CHECK(keep == valid);
}

TEST_CASE("min_kept floors at the valid count") {
    const std::size_t n = 20;
    std::vector<float> loss(n, 1.0f), conf(n, 0.9f);
    std::vector<std::uint8_t> valid(n, 1);
    OhemConfig cfg;
    cfg.thresh = 0.5;
    cfg.min_kept = 10000;
    auto keep = ohem_select<float>(loss, conf, valid, cfg);
    CHECK(std::count(keep.begin(), keep.end(), 1) == 20);
}

TEST_CASE("hand-enumerated 6-pixel fixture") {
    std::vector<float> conf{0.9f, 0.9f, 0.9f, 0.4f, 0.9f, 0.9f};
    std::vector<float> loss{0.1f, 0.5f, 0.3f, 0.9f, 0.7f, 0.2f};
    std::vector<std::uint8_t> valid(6, 1);
    OhemConfig cfg;
    cfg.thresh = 0.5;
    cfg.min_kept = 3;
    auto keep = ohem_select<float>(loss, conf, valid, cfg);
    // pixel 3 is under thresh; pixels 4 and 1 carry the highest losses
    CHECK(keep == std::vector<std::uint8_t>{0, 1, 0, 1, 1, 0});
}

TEST_CASE("kept count law over random fixtures") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(64);
        std::vector<float> loss(n), conf(n);
        std::vector<std::uint8_t> valid(n);
        for (std::size_t i = 0; i < n; ++i) {
            loss[i] = float(rng.uniform(0, 5));
            conf[i] = float(rng.uniform(0, 1));
            valid[i] = rng.bernoulli(0.8) ? 1 : 0;
        }
        OhemConfig cfg;
        cfg.thresh = rng.uniform(0.05, 0.95);
        cfg.min_kept = 1 + rng.uniform_int(32);
        auto keep = ohem_select<float>(loss, conf, valid, cfg);

        std::size_t vcount = 0, under = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!valid[i]) {
                CHECK(keep[i] == 0);
                continue;
            }
            ++vcount;
            if (double(conf[i]) < cfg.thresh) {
                ++under;
                CHECK(keep[i] == 1);
            }
        }
        const std::size_t kept =
            std::count(keep.begin(), keep.end(), std::uint8_t{1});
        CHECK(kept == std::min(std::max(under, cfg.min_kept), vcount));
    }
}

// ---------------------------------------------------------------------------
// total_loss
// ---------------------------------------------------------------------------

TEST_CASE("absent aux means total = mean of kept main") {
    auto main_px = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4});
    std::vector<std::uint8_t> keep{1, 1, 1, 1};
    LossConfig cfg;
    TotalLoss<float> t = total_loss(main_px, keep, std::optional<Tensor<float>>{}, keep, cfg);
    CHECK(t.value.item() == doctest::Approx(2.5));
    CHECK_FALSE(t.zero_kept);
}

TEST_CASE("main 1.0 plus aux 0.5 at weight 0.4 gives 1.2") {
    auto main_px = Tensor<float>::full({1, 2}, 1.0f);
    auto aux_px = Tensor<float>::full({1, 2}, 0.5f);
    std::vector<std::uint8_t> all{1, 1};
    LossConfig cfg;
    TotalLoss<float> t = total_loss(main_px, all,
                                    std::optional<Tensor<float>>(aux_px), all,
                                    cfg);
    CHECK(t.value.item() == doctest::Approx(1.2));
}

TEST_CASE("crafted 4-pixel fixture with an OHEM mask") {
    auto main_px = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4});
    auto aux_px = Tensor<float>::from_vector({2, 2}, {0.5f, 0.5f, 1.5f, 1.5f});
    std::vector<std::uint8_t> keep{1, 0, 1, 0};
    std::vector<std::uint8_t> valid{1, 1, 1, 1};
    LossConfig cfg;
    TotalLoss<float> t = total_loss(main_px, keep,
                                    std::optional<Tensor<float>>(aux_px), valid,
                                    cfg);
    // 1.0 * (1+3)/2 + 0.4 * (0.5+0.5+1.5+1.5)/4 = 2.0 + 0.4 = 2.4
    CHECK(t.value.item() == doctest::Approx(2.4));
    CHECK(t.kept_count == 2);
}

TEST_CASE("zero kept pixels yield zero loss with the warning flag") {
    auto main_px = Tensor<float>::full({1, 2}, 3.0f);
    std::vector<std::uint8_t> none{0, 0};
    LossConfig cfg;
    TotalLoss<float> t = total_loss(main_px, none, std::optional<Tensor<float>>{}, none, cfg);
    CHECK(t.value.item() == 0.0f);
    CHECK(t.zero_kept);
}

TEST_CASE("total_loss backpropagates only through kept pixels") {
    auto main_px = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4}, true);
    std::vector<std::uint8_t> keep{1, 0, 1, 0};
    LossConfig cfg;
    TotalLoss<float> t = total_loss(main_px, keep, std::optional<Tensor<float>>{}, keep, cfg);
    backward(t.value);
    auto g = main_px.grad();
    CHECK(g[0] == doctest::Approx(0.5));
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == doctest::Approx(0.5));
    CHECK(g[3] == 0.0f);
}
