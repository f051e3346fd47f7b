#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsegnet/error.hpp"
#include "dsegnet/eval.hpp"
#include "test_util.hpp"

namespace dseg {
namespace {

Tensor<float> random_mask(Shape s, Rng& rng, double p) {
    Tensor<float> t(s);
    for (auto& v : t.data()) v = rng.bernoulli(p) ? 1.0f : 0.0f;
    return t;
}

TEST(Confusion, IdenticalMasksHaveNoErrors) {
    Rng rng(1);
    const auto g = random_mask(Shape{1, 1, 8, 8}, rng, 0.3);
    const auto c = confusion(g, g);
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
    EXPECT_EQ(c.total(), 64u);
}

TEST(Confusion, EightHitsTwoMissesTwoStrays) {
    Tensor<float> g(Shape{1, 1, 5, 5}), p(Shape{1, 1, 5, 5});
    for (std::size_t k = 0; k < 10; ++k) g[k] = 1;
    for (std::size_t k = 0; k < 8; ++k) p[k] = 0.9f;
    p[20] = p[21] = 0.7f;
    const auto c = confusion(p, g);
    EXPECT_EQ(c.tp, 8u);
    EXPECT_EQ(c.fp, 2u);
    EXPECT_EQ(c.fn, 2u);
    EXPECT_EQ(c.tn, 13u);
}

TEST(Confusion, ThresholdIsInclusive) {
    Tensor<float> g(Shape{1, 1, 1, 1}), p(Shape{1, 1, 1, 1});
    g[0] = 1;
    p[0] = 0.5f;
    EXPECT_EQ(confusion(p, g).tp, 1u);
}

TEST(Confusion, ShapeMismatchThrows) {
    EXPECT_THROW(confusion(Tensor<float>(Shape{1, 1, 4, 4}), Tensor<float>(Shape{1, 1, 4, 5})), DimensionError);
}

TEST(Metrics, WorkedExample) {
    const auto m = metrics_from_counts(ConfusionCounts{8, 2, 2, 13});
    EXPECT_NEAR(m.dsc, 0.8, 1e-7);
    EXPECT_NEAR(m.iou, 2.0 / 3.0, 1e-7);
    EXPECT_NEAR(m.recall, 0.8, 1e-7);
    EXPECT_NEAR(m.precision, 0.8, 1e-7);
}

TEST(Metrics, F2AtHalfPrecisionFullRecall) {
    // tp=1, fp=1, fn=0 gives P=0.5, R=1 up to eps.
    const auto m = metrics_from_counts(ConfusionCounts{1, 1, 0, 0});
    EXPECT_NEAR(m.f2, 2.5 / 3.0, 1e-6);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.4f", m.f2);
    EXPECT_STREQ(buf, "0.8333");
}

TEST(Metrics, IdenticalMasksScoreOne) {
    const auto m = metrics_from_counts(ConfusionCounts{50, 0, 0, 14});
    for (double v : {m.dsc, m.iou, m.recall, m.precision, m.f2}) EXPECT_NEAR(v, 1.0, 1e-6);
    EXPECT_NEAR(miou(ConfusionCounts{50, 0, 0, 14}, MiouMode::MeanOfClasses), 1.0, 1e-6);
}

TEST(Metrics, EmptyMasksScoreOne) {
    const auto m = metrics_from_counts(ConfusionCounts{0, 0, 0, 64});
    EXPECT_NEAR(m.dsc, 1.0, 1e-12);
    EXPECT_NEAR(m.iou, 1.0, 1e-12);
}

// Counts recomputed pixel by pixel, independent of confusion().
TEST(Metrics, BruteForceOn500Pairs) {
    Rng rng(2024);
    for (int t = 0; t < 500; ++t) {
        const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
        const Shape s{1, 1, h, w};
        const double pp = rng.uniform(), pg = rng.uniform();
        Tensor<float> prob(s);
        for (auto& v : prob.data()) v = rng.bernoulli(pp) ? static_cast<float>(rng.uniform(0.5, 1.0))
                                                          : static_cast<float>(rng.uniform(0.0, 0.4999));
        const auto gt = random_mask(s, rng, pg);
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t k = 0; k < prob.numel(); ++k) {
            const bool a = prob[k] >= 0.5f, b = gt[k] > 0.5f;
            tp += a && b;
            fp += a && !b;
            fn += !a && b;
        }
        const double e = 1e-7;
        const auto m = metrics_from_counts(confusion(prob, gt));
        const double dsc = (2 * tp + e) / (2 * tp + fp + fn + e);
        const double iou = (tp + e) / (tp + fp + fn + e);
        const double rec = (tp + e) / (tp + fn + e);
        const double pre = (tp + e) / (tp + fp + e);
        const double f2 = 5 * pre * rec / std::max(4 * pre + rec, e);
        ASSERT_NEAR(m.dsc, dsc, 1e-6) << t;
        ASSERT_NEAR(m.iou, iou, 1e-6) << t;
        ASSERT_NEAR(m.recall, rec, 1e-6) << t;
        ASSERT_NEAR(m.precision, pre, 1e-6) << t;
        ASSERT_NEAR(m.f2, f2, 1e-6) << t;
        ASSERT_NEAR(m.dsc, 2 * m.iou / (1 + m.iou), 1e-6) << t;
        ASSERT_LE(m.iou, m.dsc + 1e-12);
        ASSERT_LE(m.dsc, 1.0 + 1e-12);
    }
}

TEST(Metrics, MiouModes) {
    const ConfusionCounts c{8, 2, 2, 13};
    EXPECT_NEAR(miou(c, MiouMode::ForegroundPerImage), 8.0 / 12.0, 1e-7);
    EXPECT_NEAR(miou(c, MiouMode::MeanOfClasses), 0.5 * (8.0 / 12.0 + 13.0 / 17.0), 1e-7);
}

MetricsReport tiny_report() {
    MetricsReport r;
    r.rows.push_back(image_metrics("a", ConfusionCounts{8, 2, 2, 13}, MiouMode::ForegroundPerImage));
    r.rows.push_back(ImageMetrics{"b", 0.5, 0.25, 1.0, 0.125, 0.0625});
    summarize(r);
    return r;
}

TEST(Report, SummaryIsColumnMean) {
    const auto r = tiny_report();
    EXPECT_EQ(r.mean.id, "mean");
    EXPECT_NEAR(r.mean.dsc, (r.rows[0].dsc + 0.5) / 2, 1e-15);
    EXPECT_NEAR(r.mean.f2, (r.rows[0].f2 + 0.0625) / 2, 1e-15);
    MetricsReport empty;
    EXPECT_THROW(summarize(empty), ConfigError);
}

TEST(Report, CsvGolden) {
    const std::string expect =
        "id,dsc,miou,recall,precision,f2\n"
        "a,0.8000,0.6667,0.8000,0.8000,0.8000\n"
        "b,0.5000,0.2500,1.0000,0.1250,0.0625\n"
        "mean,0.6500,0.4583,0.9000,0.4625,0.4313\n";
    EXPECT_EQ(render_report(tiny_report(), "csv"), expect);
}

TEST(Report, MarkdownGolden) {
    auto r = tiny_report();
    r.complexity = Complexity{448, 1769472, 40.0};
    r.notes = {"note"};
    const std::string expect =
        "| id | DSC | mIoU | Recall | Precision | F2 |\n"
        "|---|---|---|---|---|---|\n"
        "| a | 0.8000 | 0.6667 | 0.8000 | 0.8000 | 0.8000 |\n"
        "| b | 0.5000 | 0.2500 | 1.0000 | 0.1250 | 0.0625 |\n"
        "| **mean** | 0.6500 | 0.4583 | 0.9000 | 0.4625 | 0.4313 |\n"
        "\nParameters: 0.0004 M, GMac: 0.0018, FPS: 40.0000\n"
        "\n- note\n";
    EXPECT_EQ(render_report(r, "markdown"), expect);
}

TEST(Report, UnknownFormatThrows) {
    EXPECT_THROW(render_report(tiny_report(), "xlsx"), ConfigError);
}

TEST(Report, EmitWritesFile) {
    const auto path = std::filesystem::temp_directory_path() / "dseg_report_test.csv";
    emit_report(tiny_report(), "csv", path.string());
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    EXPECT_EQ(ss.str(), render_report(tiny_report(), "csv"));
    std::filesystem::remove(path);
}

std::vector<SamplePair> pairs_of(std::size_t n, std::uint64_t seed) {
    SynthConfig sc;
    sc.seed = seed;
    std::vector<SamplePair> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(sc, i));
    return out;
}

TEST(Evaluate, SaturatedHeadOnFullMaskScoresOne) {
    DilatedSegNet<float> net(ModelConfig::desk(), 3);
    for (auto& p : net.registry().params()) {
        if (p.name == "head.weight") p.var->value.fill(0.0f);
        if (p.name == "head.bias") p.var->value.fill(30.0f);
    }
    auto pairs = pairs_of(1, 1);
    pairs[0].mask.fill(1.0f);
    const auto r = evaluate_dataset(net, pairs);
    ASSERT_EQ(r.rows.size(), 1u);
    for (double v : {r.mean.dsc, r.mean.miou, r.mean.recall, r.mean.precision, r.mean.f2}) EXPECT_NEAR(v, 1.0, 1e-6);
}

TEST(Evaluate, RowsMatchPredictAndMeansAverageRows) {
    DilatedSegNet<float> net(ModelConfig::desk(), 4);
    const auto pairs = pairs_of(5, 9);
    EvalOptions opt;
    opt.batch_size = 2;
    const auto r = evaluate_dataset(net, pairs, opt);
    ASSERT_EQ(r.rows.size(), 5u);
    double sum = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto pred = net.predict(pairs[i].image);
        const auto c = confusion(pred, pairs[i].mask);
        EXPECT_EQ(r.rows[i].id, pairs[i].id);
        EXPECT_NEAR(r.rows[i].dsc, metrics_from_counts(c).dsc, 1e-12);
        sum += r.rows[i].miou;
    }
    EXPECT_NEAR(r.mean.miou, sum / 5, 1e-12);
    ASSERT_FALSE(r.notes.empty());
    EXPECT_NE(r.notes[0].find("0.8957"), std::string::npos);
    EXPECT_NE(r.notes[0].find("0.8336"), std::string::npos);
}

TEST(Evaluate, EmptyDatasetThrows) {
    DilatedSegNet<float> net(ModelConfig::desk(), 4);
    EXPECT_THROW(evaluate_dataset(net, {}), ConfigError);
}

TEST(Fps, Arithmetic) {
    EXPECT_DOUBLE_EQ(fps_from(100, 2.5), 40.0);
    EXPECT_THROW(fps_from(100, 0.0), NumericError);
}

TEST(Fps, MedianOfRepetitions) {
    DilatedSegNet<float> net(ModelConfig::desk(), 4);
    const auto r = measure_fps(net, Shape{1, 3, 64, 64}, 5, 2, 3);
    ASSERT_EQ(r.repetitions.size(), 3u);
    auto s = r.repetitions;
    std::sort(s.begin(), s.end());
    EXPECT_EQ(r.fps, s[1]);
    EXPECT_GT(r.fps, 0.0);
}

}  // namespace
}  // namespace dseg
