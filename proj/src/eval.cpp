#include "dsegnet/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "dsegnet/error.hpp"
#include "dsegnet/training.hpp"

namespace dseg {

ImageMetrics image_metrics(const std::string& id, const ConfusionCounts& c, MiouMode mode) {
    const Metrics m = metrics_from_counts(c);
    return ImageMetrics{id, m.dsc, miou(c, mode), m.recall, m.precision, m.f2};
}

void summarize(MetricsReport& report) {
    if (report.rows.empty()) throw ConfigError("report: no images to summarize");
    ImageMetrics m;
    m.id = "mean";
    for (const auto& r : report.rows) {
        m.dsc += r.dsc;
        m.miou += r.miou;
        m.recall += r.recall;
        m.precision += r.precision;
        m.f2 += r.f2;
    }
    const auto n = static_cast<double>(report.rows.size());
    m.dsc /= n;
    m.miou /= n;
    m.recall /= n;
    m.precision /= n;
    m.f2 /= n;
    report.mean = m;
}

MetricsReport evaluate_dataset(DilatedSegNet<float>& model, const std::vector<SamplePair>& pairs,
                               const EvalOptions& options) {
    if (pairs.empty()) throw ConfigError("evaluate: empty dataset");
    NoGradGuard ng;
    MetricsReport report;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Tensor<float> images, masks;
    const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
    for (std::size_t b = 0; b < pairs.size(); b += bs) {
        const std::size_t e = std::min(pairs.size(), b + bs);
        make_batch(pairs, order, b, e, images, masks);
        const auto out = model.forward(make_leaf(images), Mode::Eval);
        for (std::size_t i = 0; i < e - b; ++i) {
            const auto c = confusion_at(out.mask->value, masks, i, options.threshold);
            report.rows.push_back(image_metrics(pairs[b + i].id, c, options.miou_mode));
        }
    }
    summarize(report);
    report.notes = reference_notes();
    return report;
}

std::vector<std::string> reference_notes() {
    return {"published Kvasir-SEG DSC 0.8957 mIoU 0.8336 (not reproducible here)",
            "published complexity 18.11 M params, 27.1 GMac, 33.68 FPS on an RTX 3090 (hardware-bound)"};
}

double fps_from(std::size_t passes, double seconds) {
    if (!(seconds > 0)) throw NumericError("fps: elapsed time must be positive");
    return static_cast<double>(passes) / seconds;
}

FpsResult measure_fps(DilatedSegNet<float>& model, const Shape& input, std::size_t passes, std::size_t warmup,
                      std::size_t repetitions) {
    if (passes == 0 || repetitions == 0) throw ConfigError("fps: passes and repetitions must be >= 1");
    const Shape one{1, input.c, input.h, input.w};
    Tensor<float> x(one);
    Rng rng(0);
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
    for (std::size_t i = 0; i < warmup; ++i) model.predict(x);
    FpsResult r;
    for (std::size_t k = 0; k < repetitions; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < passes; ++i) model.predict(x);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.repetitions.push_back(fps_from(passes, s));
    }
    std::vector<double> sorted = r.repetitions;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.fps = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return r;
}

namespace {

std::string f4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

std::string render_report(const MetricsReport& report, const std::string& format) {
    std::string out;
    auto cells = [](const ImageMetrics& r) {
        return std::vector<std::string>{f4(r.dsc), f4(r.miou), f4(r.recall), f4(r.precision), f4(r.f2)};
    };
    if (format == "csv") {
        out = "id,dsc,miou,recall,precision,f2\n";
        auto line = [&](const ImageMetrics& r) {
            out += r.id;
            for (const auto& c : cells(r)) out += "," + c;
            out += "\n";
        };
        for (const auto& r : report.rows) line(r);
        line(report.mean);
    } else if (format == "markdown") {
        out = "| id | DSC | mIoU | Recall | Precision | F2 |\n|---|---|---|---|---|---|\n";
        auto line = [&](const ImageMetrics& r, bool bold) {
            out += "| " + (bold ? "**" + r.id + "**" : r.id);
            for (const auto& c : cells(r)) out += " | " + c;
            out += " |\n";
        };
        for (const auto& r : report.rows) line(r, false);
        line(report.mean, true);
        if (report.complexity) {
            const auto& c = *report.complexity;
            out += "\nParameters: " + f4(static_cast<double>(c.params) / 1e6) + " M, GMac: " +
                   f4(static_cast<double>(c.macs) / 1e9) + ", FPS: " + f4(c.fps) + "\n";
        }
        if (!report.notes.empty()) {
            out += "\n";
            for (const auto& n : report.notes) out += "- " + n + "\n";
        }
    } else {
        throw ConfigError("report: unknown format '" + format + "' (expected csv or markdown)");
    }
    return out;
}

void emit_report(const MetricsReport& report, const std::string& format, const std::string& path) {
    const std::string text = render_report(report, format);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << text;
}

}  // namespace dseg
