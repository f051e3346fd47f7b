// dsegnet command-line tool. Exit codes: 0 ok, 1 usage or configuration
// error, 2 runtime error. Errors are one line on stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dsegnet/config.hpp"
#include "dsegnet/error.hpp"
#include "dsegnet/eval.hpp"
#include "dsegnet/explain.hpp"
#include "dsegnet/gradsuite.hpp"
#include "dsegnet/netpbm.hpp"
#include "dsegnet/weights.hpp"

namespace fs = std::filesystem;
using namespace dseg;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags shared by every command that builds a RunConfig.
struct ConfigFlags {
    std::string preset;
    std::string config;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "Preset defaults: desk or paper");
        app->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override one config key (key=value); repeatable");
    }
};

// flags > config file > preset
RunConfig resolve(const ConfigFlags& f, const std::vector<std::pair<std::string, std::string>>& flag_values,
                  const std::string& fallback_config = "") {
    const std::string cfg_path = !f.config.empty() ? f.config : fallback_config;
    std::string preset = f.preset;
    if (preset.empty()) preset = cfg_path.empty() ? "desk" : preset_in_file(cfg_path, "desk");
    RunConfig c = RunConfig::for_preset(preset);
    if (!cfg_path.empty()) c.apply_file(cfg_path);
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : flag_values) c.set(k, v);
    c.validate();
    return c;
}

std::string weights_sidecar(const std::string& weights) {
    const auto p = fs::path(weights).parent_path() / "resolved.cfg";
    return fs::exists(p) ? p.string() : "";
}

DilatedSegNet<float> load_model(const RunConfig& c, const std::string& weights) {
    DilatedSegNet<float> net(c.model, c.model_seed);
    load_weights(net.registry(), weights);
    return net;
}

bool valid_extent(std::size_t v) { return v >= 64 && v % 32 == 0; }

// Image at a size the network accepts: native when valid, else the configured input.
Tensor<float> fit_input(const Tensor<float>& img, const RunConfig& c) {
    const Shape s = img.shape();
    if (valid_extent(s.h) && valid_extent(s.w)) return img;
    return resize(img, c.model.input_h, c.model.input_w, ResizeMode::Bilinear);
}

std::pair<std::size_t, std::size_t> parse_extent(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        std::size_t a = 0, b = 0;
        const std::size_t h = std::stoul(s.substr(0, x), &a), w = std::stoul(s.substr(x + 1), &b);
        if (a != x || b != s.size() - x - 1) throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::exception&) {
        throw UsageError("--input expects HxW (e.g. 256x256), got '" + s + "'");
    }
}

std::vector<std::string> ids_for(const std::string& data, const std::string& list_name) {
    const auto p = fs::path(data) / list_name;
    if (fs::exists(p)) return read_id_list(p.string());
    return read_id_list((fs::path(data) / "manifest.txt").string());
}

void print_config_line(const RunConfig& c) {
    std::printf("preset %s, input %zux%zu, dcp %s, cbam %s\n", c.model.preset.c_str(), c.model.input_h,
                c.model.input_w, c.model.use_dcp ? "on" : "off", c.model.use_cbam ? "on" : "off");
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"DilatedSegNet segmentation engine"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "Generate the synthetic blob dataset");
    ConfigFlags synth_cfg;
    synth_cfg.attach(synth);
    std::string synth_out;
    std::optional<std::size_t> synth_count;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of samples");
    synth->add_option("--seed", synth_seed, "Generator seed");

    // split
    auto* split = app.add_subcommand("split", "Split a manifest into train/val/test id lists");
    std::string manifest, ratios, split_preset, split_out;
    std::uint64_t split_seed = 42;
    split->add_option("--manifest", manifest, "manifest.txt with one id per line")->required()->check(CLI::ExistingFile);
    auto* ratio_opt = split->add_option("--ratios", ratios, "train,val,test fractions (e.g. 0.8,0.1,0.1)");
    split->add_option("--preset", split_preset, "Named split: kvasir (880/60/60)")->excludes(ratio_opt);
    split->add_option("--seed", split_seed, "Shuffle seed");
    split->add_option("--out", split_out, "Directory for train.txt/val.txt/test.txt (default: manifest directory)");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    ConfigFlags train_cfg;
    train_cfg.attach(train_cmd);
    std::string train_data, train_out;
    std::optional<std::size_t> epochs, batch;
    std::optional<double> lr;
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--data", train_data, "Dataset directory (images/, masks/, manifest.txt)")->required();
    train_cmd->add_option("--out", train_out, "Run directory")->required();
    train_cmd->add_option("--epochs", epochs, "Maximum epochs");
    train_cmd->add_option("--batch-size", batch, "Mini-batch size");
    train_cmd->add_option("--lr", lr, "Initial learning rate");
    train_cmd->add_option("--seed", train_seed, "Training seed");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset");
    ConfigFlags eval_cfg;
    eval_cfg.attach(eval_cmd);
    std::string eval_weights, eval_data, report_path, report_format, eval_ids;
    eval_cmd->add_option("--weights", eval_weights, "Weight file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--report", report_path, "Report path (.csv or .md)")->required();
    eval_cmd->add_option("--format", report_format, "csv or markdown (default: from the report extension)");
    eval_cmd->add_option("--ids", eval_ids, "Id list (default: test.txt in the dataset, else manifest.txt)");

    // infer
    auto* infer = app.add_subcommand("infer", "Predict a binary mask for one image");
    ConfigFlags infer_cfg;
    infer_cfg.attach(infer);
    std::string infer_weights, infer_image, mask_out;
    infer->add_option("--weights", infer_weights, "Weight file")->required()->check(CLI::ExistingFile);
    infer->add_option("--image", infer_image, "Input PPM")->required()->check(CLI::ExistingFile);
    infer->add_option("--mask-out", mask_out, "Output PGM")->required();

    // heatmap
    auto* heat = app.add_subcommand("heatmap", "Bottleneck activation heatmap and overlay");
    ConfigFlags heat_cfg;
    heat_cfg.attach(heat);
    std::string heat_weights, heat_image, heat_dir;
    double alpha = 0.4;
    heat->add_option("--weights", heat_weights, "Weight file")->required()->check(CLI::ExistingFile);
    heat->add_option("--image", heat_image, "Input PPM")->required()->check(CLI::ExistingFile);
    heat->add_option("--out-dir", heat_dir, "Output directory")->required();
    heat->add_option("--alpha", alpha, "Overlay opacity");

    // profile
    auto* profile = app.add_subcommand("profile", "Parameter count, MACs and FPS");
    ConfigFlags prof_cfg;
    prof_cfg.attach(profile);
    std::string input = "";
    std::size_t passes = 100, warmup = 10, repeats = 3;
    bool no_fps = false;
    profile->add_option("--input", input, "Input extent HxW (default: the preset input)");
    profile->add_option("--passes", passes, "Timed passes per repetition");
    profile->add_option("--warmup", warmup, "Untimed warmup passes");
    profile->add_option("--repeats", repeats, "Repetitions (median is reported)");
    profile->add_flag("--no-fps", no_fps, "Skip timing");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
    bool full = false;
    std::size_t seeds = 10;
    grad->add_flag("--full", full, "Include the full desk network");
    grad->add_option("--seeds", seeds, "Instances per suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    if (*synth) {
        std::vector<std::pair<std::string, std::string>> fv;
        if (synth_count) fv.emplace_back("synth_count", std::to_string(*synth_count));
        if (synth_seed) fv.emplace_back("synth_seed", std::to_string(*synth_seed));
        const RunConfig c = resolve(synth_cfg, fv);
        const auto ids = synth_generate(c.synth, synth_out);
        c.write_resolved((fs::path(synth_out) / "resolved.cfg").string());
        std::printf("wrote %zu samples (%zux%zu) to %s\n", ids.size(), c.synth.h, c.synth.w, synth_out.c_str());
    } else if (*split) {
        SplitSpec spec;
        if (split_preset == "kvasir") {
            spec = SplitSpec::kvasir(split_seed);
        } else if (!split_preset.empty()) {
            throw UsageError("--preset: unknown split preset '" + split_preset + "' (expected kvasir)");
        } else {
            double r[3] = {0.8, 0.1, 0.1};
            if (!ratios.empty()) {
                std::stringstream ss(ratios);
                std::string item;
                std::size_t i = 0;
                while (std::getline(ss, item, ',')) {
                    if (i == 3) throw UsageError("--ratios expects three values, got '" + ratios + "'");
                    try {
                        r[i++] = std::stod(item);
                    } catch (const std::exception&) {
                        throw UsageError("--ratios: bad number '" + item + "'");
                    }
                }
                if (i != 3) throw UsageError("--ratios expects three values, got '" + ratios + "'");
            }
            spec = SplitSpec::ratios(r[0], r[1], r[2], split_seed);
        }
        const auto s = split_ids(read_id_list(manifest), spec);
        const fs::path dir = split_out.empty() ? fs::path(manifest).parent_path() : fs::path(split_out);
        if (!dir.empty()) fs::create_directories(dir);
        write_id_list(s.train, (dir / "train.txt").string());
        write_id_list(s.val, (dir / "val.txt").string());
        write_id_list(s.test, (dir / "test.txt").string());
        std::printf("train %zu, val %zu, test %zu\n", s.train.size(), s.val.size(), s.test.size());
    } else if (*train_cmd) {
        std::vector<std::pair<std::string, std::string>> fv;
        if (epochs) fv.emplace_back("max_epochs", std::to_string(*epochs));
        if (batch) fv.emplace_back("batch_size", std::to_string(*batch));
        if (lr) {
            std::ostringstream o;
            o.precision(17);
            o << *lr;
            fv.emplace_back("lr", o.str());
        }
        if (train_seed) fv.emplace_back("seed", std::to_string(*train_seed));
        RunConfig c = resolve(train_cfg, fv);
        fs::create_directories(train_out);
        c.train.checkpoint_dir = train_out;
        c.write_resolved((fs::path(train_out) / "resolved.cfg").string());

        std::vector<std::string> train_ids, val_ids;
        const fs::path d(train_data);
        if (fs::exists(d / "train.txt") && fs::exists(d / "val.txt")) {
            train_ids = read_id_list((d / "train.txt").string());
            val_ids = read_id_list((d / "val.txt").string());
        } else {
            const auto s = split_ids(read_id_list((d / "manifest.txt").string()),
                                     SplitSpec::ratios(c.split_train, c.split_val, c.split_test, c.split_seed));
            train_ids = s.train;
            val_ids = s.val;
        }
        const auto tr = load_dataset(train_data, train_ids, c.model.input_h, c.model.input_w);
        const auto va = load_dataset(train_data, val_ids, c.model.input_h, c.model.input_w);
        print_config_line(c);
        std::printf("train %zu, val %zu, lr %g, batch %zu, max epochs %zu\n", tr.size(), va.size(), c.train.lr,
                    c.train.batch_size, c.train.max_epochs);
        DilatedSegNet<float> net(c.model, c.model_seed);
        const auto t0 = std::chrono::steady_clock::now();
        const auto h = train(net, tr, va, c.train, [&](const EpochLog& e) {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("epoch %3zu  train %.4f  val %.4f  dsc %.4f  lr %.3g  %6.1fs%s\n", e.epoch, e.train_loss,
                        e.val_loss, e.val_dsc, e.lr, s, e.improved ? "  *" : "");
            std::fflush(stdout);
        });
        write_history_csv(h, (fs::path(train_out) / "history.csv").string());
        std::printf("best epoch %zu: val loss %.4f, val dsc %.4f%s\n", h.best_epoch + 1, h.val_loss[h.best_epoch],
                    h.val_dsc[h.best_epoch], h.stopped_early ? " (stopped early)" : "");
        std::printf("checkpoint %s\n", (fs::path(train_out) / "best.dsgw").string().c_str());
    } else if (*eval_cmd) {
        const RunConfig c = resolve(eval_cfg, {}, weights_sidecar(eval_weights));
        auto net = load_model(c, eval_weights);
        const auto ids = eval_ids.empty() ? ids_for(eval_data, "test.txt") : read_id_list(eval_ids);
        const auto pairs = load_dataset(eval_data, ids, c.model.input_h, c.model.input_w);
        std::string format = report_format;
        if (format.empty()) {
            const auto ext = fs::path(report_path).extension().string();
            format = (ext == ".md" || ext == ".markdown") ? "markdown" : "csv";
        }
        auto report = evaluate_dataset(net, pairs, c.eval);
        emit_report(report, format, report_path);
        std::printf("%zu images: DSC %.4f  mIoU %.4f  Recall %.4f  Precision %.4f  F2 %.4f\n", report.rows.size(),
                    report.mean.dsc, report.mean.miou, report.mean.recall, report.mean.precision, report.mean.f2);
        for (const auto& n : report.notes) std::printf("reference: %s\n", n.c_str());
    } else if (*infer) {
        const RunConfig c = resolve(infer_cfg, {}, weights_sidecar(infer_weights));
        auto net = load_model(c, infer_weights);
        const auto img = read_ppm(infer_image);
        const Shape s = img.shape();
        auto prob = net.predict(fit_input(img, c));
        if (prob.shape().h != s.h || prob.shape().w != s.w) prob = resize(prob, s.h, s.w, ResizeMode::Bilinear);
        for (auto& v : prob.data()) v = v >= c.eval.threshold ? 1.0f : 0.0f;
        write_pgm(prob, mask_out);
        std::size_t fg = 0;
        for (float v : prob.data()) fg += v > 0.5f;
        std::printf("wrote %zux%zu mask to %s (%.2f%% foreground)\n", s.w, s.h, mask_out.c_str(),
                    100.0 * static_cast<double>(fg) / static_cast<double>(prob.numel()));
    } else if (*heat) {
        const RunConfig c = resolve(heat_cfg, {}, weights_sidecar(heat_weights));
        auto net = load_model(c, heat_weights);
        const auto img = fit_input(read_ppm(heat_image), c);
        const auto files = write_heatmap(net, img, fs::path(heat_image).stem().string(), heat_dir, alpha);
        std::printf("%s\n%s\n", files.heat.c_str(), files.overlay.c_str());
    } else if (*profile) {
        const RunConfig c = resolve(prof_cfg, {});
        std::size_t h = c.model.input_h, w = c.model.input_w;
        if (!input.empty()) std::tie(h, w) = parse_extent(input);
        const Shape shape{1, 3, h, w};
        check_model_input(shape);
        DilatedSegNet<float> net(c.model, c.model_seed);
        const auto params = count_params(net.registry());
        const auto macs = net.trace(shape).tally.total;
        print_config_line(c);
        std::printf("params: %.2f M (%llu)\n", static_cast<double>(params) / 1e6,
                    static_cast<unsigned long long>(params));
        std::printf("GMac: %.2f at %zux%zu\n", static_cast<double>(macs) / 1e9, h, w);
        if (!no_fps) {
            const auto f = measure_fps(net, shape, passes, warmup, repeats);
            std::printf("FPS: %.2f (batch 1, median of %zu x %zu passes, this CPU)\n", f.fps, repeats, passes);
        }
        std::printf("reference: published 18.11 M params, 27.1 GMac, 33.68 FPS on an RTX 3090\n");
    } else if (*grad) {
        SuiteOptions o;
        o.seeds = seeds;
        o.full_network = full;
        bool ok = true;
        run_grad_suites(o, [&](const SuiteResult& r) {
            ok = ok && r.pass();
            std::printf("%-4s %-20s %zu/%zu  max rel err %.2e (tol %.0e)\n", r.pass() ? "ok" : "FAIL", r.name.c_str(),
                        r.passed, r.instances, r.worst_rel, r.tol);
            if (!r.pass()) std::printf("     worst %s\n", r.worst.c_str());
            std::fflush(stdout);
        });
        if (!ok) throw NumericError("gradient check failed");
    }
    return 0;
}

int main(int argc, char** argv) {
    auto one_line = [](std::string s) {
        for (auto& ch : s)
            if (ch == '\n' || ch == '\r') ch = ' ';
        return s;
    };
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "error: dimension: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << one_line(e.what()) << "\n";
        return 2;
    }
}
