#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsegnet/data.hpp"
#include "dsegnet/metrics.hpp"
#include "dsegnet/model.hpp"

namespace dseg {

struct ImageMetrics {
    std::string id;
    double dsc = 0, miou = 0, recall = 0, precision = 0, f2 = 0;
};

struct Complexity {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    double fps = 0;
};

struct MetricsReport {
    std::vector<ImageMetrics> rows;
    ImageMetrics mean;  // id "mean"; arithmetic mean of the rows
    std::optional<Complexity> complexity;
    std::vector<std::string> notes;  // reference figures and other metadata
};

struct EvalOptions {
    double threshold = 0.5;
    MiouMode miou_mode = MiouMode::ForegroundPerImage;
    std::size_t batch_size = 8;
};

ImageMetrics image_metrics(const std::string& id, const ConfusionCounts& c, MiouMode mode);

// Fills `mean` from `rows`. Throws ConfigError when rows is empty.
void summarize(MetricsReport& report);

// Eval-mode forward over every pair; per-image metrics and their means.
MetricsReport evaluate_dataset(DilatedSegNet<float>& model, const std::vector<SamplePair>& pairs,
                               const EvalOptions& options = {});

// Published figures kept for context; none of them is reproducible here.
std::vector<std::string> reference_notes();

double fps_from(std::size_t passes, double seconds);

struct FpsResult {
    double fps = 0;                  // median over repetitions
    std::vector<double> repetitions;
};

// Batch-1 eval-mode passes: `warmup` untimed, then `passes` timed, repeated
// `repetitions` times.
FpsResult measure_fps(DilatedSegNet<float>& model, const Shape& input, std::size_t passes = 100,
                      std::size_t warmup = 10, std::size_t repetitions = 3);

// format: "csv" or "markdown". Numbers carry 4 decimals.
void emit_report(const MetricsReport& report, const std::string& format, const std::string& path);
std::string render_report(const MetricsReport& report, const std::string& format);

}  // namespace dseg
