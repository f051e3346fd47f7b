#include "dsegnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "dsegnet/error.hpp"
#include "dsegnet/metrics.hpp"
#include "dsegnet/weights.hpp"

namespace dseg {

template <typename T>
static void check_loss_shapes(const char* name, const Var<T>& p, const Tensor<T>& g) {
    if (!(p->value.shape() == g.shape())) {
        throw DimensionError(std::string(name) + ": prediction " + p->value.shape().str() + " vs target " +
                             g.shape().str());
    }
}

template <typename T>
Var<T> dice_loss(const Var<T>& p, const Tensor<T>& g, double eps) {
    check_loss_shapes("dice_loss", p, g);
    double spg = 0, sp = 0, sg = 0;
    for (std::size_t k = 0; k < g.numel(); ++k) {
        const double pk = p->value[k], gk = g[k];
        spg += pk * gk;
        sp += pk;
        sg += gk;
    }
    const double num = 2 * spg + eps, den = sp + sg + eps;
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(1.0 - num / den));
    return make_result<T>(std::move(out), "dice_loss", {p}, [g, num, den](Node<T>& self) {
        const double up = static_cast<double>(self.grad[0]);
        Tensor<T> gin(g.shape());
        for (std::size_t k = 0; k < g.numel(); ++k) {
            gin[k] = static_cast<T>(up * -(2 * static_cast<double>(g[k]) * den - num) / (den * den));
        }
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& g, double clamp) {
    check_loss_shapes("bce_loss", p, g);
    const double lo = clamp, hi = 1.0 - clamp;
    const auto n = static_cast<double>(g.numel());
    double total = 0;
    for (std::size_t k = 0; k < g.numel(); ++k) {
        const double pk = std::clamp(static_cast<double>(p->value[k]), lo, hi), gk = g[k];
        total -= gk * std::log(pk) + (1 - gk) * std::log(1 - pk);
    }
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / n));
    return make_result<T>(std::move(out), "bce_loss", {p}, [g, lo, hi, n](Node<T>& self) {
        const double up = static_cast<double>(self.grad[0]) / n;
        const Tensor<T>& pv = self.inputs[0]->value;
        Tensor<T> gin(g.shape());
        for (std::size_t k = 0; k < g.numel(); ++k) {
            const double pk = pv[k], gk = g[k];
            if (pk < lo || pk > hi) continue;
            gin[k] = static_cast<T>(up * (-gk / pk + (1 - gk) / (1 - pk)));
        }
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> combined_loss(const Var<T>& p, const Tensor<T>& g, double w_dice, double w_bce) {
    const Var<T> d = dice_loss(p, g), b = bce_loss(p, g);
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(w_dice * static_cast<double>(d->value[0]) +
                                                    w_bce * static_cast<double>(b->value[0])));
    return make_result<T>(std::move(out), "combined_loss", {d, b}, [w_dice, w_bce](Node<T>& self) {
        const T up = self.grad[0];
        const T gd[] = {static_cast<T>(w_dice) * up};
        const T gb[] = {static_cast<T>(w_bce) * up};
        self.inputs[0]->accumulate(std::span<const T>(gd));
        self.inputs[1]->accumulate(std::span<const T>(gb));
    });
}

template <typename T>
Adam<T>::Adam(ParamRegistry<T>& reg, Options options) : opt_(options) {
    for (auto& p : reg.params()) {
        if (!p.trainable) continue;
        slots_.push_back(Slot{&p, Tensor<T>(p.var->value.shape()), Tensor<T>(p.var->value.shape())});
    }
}

template <typename T>
void Adam<T>::step(double lr) {
    for (const auto& s : slots_) {
        if (!s.param->var->has_grad()) continue;
        for (T g : s.param->var->grad.data()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("adam: non-finite gradient in parameter '" + s.param->name + "' at step " +
                                   std::to_string(t_ + 1));
            }
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    for (auto& s : slots_) {
        if (!s.param->var->has_grad()) continue;
        auto theta = s.param->var->value.data();
        const auto grad = s.param->var->grad.data();
        auto m = s.m.data();
        auto v = s.v.data();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const T g = grad[k];
            m[k] = b1 * m[k] + (T(1) - b1) * g;
            v[k] = b2 * v[k] + (T(1) - b2) * g * g;
            const double mh = static_cast<double>(m[k]) / bc1;
            const double vh = static_cast<double>(v[k]) / bc2;
            theta[k] = static_cast<T>(static_cast<double>(theta[k]) - lr * mh / (std::sqrt(vh) + opt_.eps));
        }
    }
}

PlateauScheduler::PlateauScheduler(double lr, PlateauConfig cfg)
    : cfg_(cfg), lr_(lr), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double val_loss) {
    if (val_loss < best_ - cfg_.min_delta) {
        best_ = val_loss;
        bad_ = 0;
    } else if (++bad_ >= cfg_.patience) {
        lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        bad_ = 0;
    }
    return lr_;
}

EarlyStopping::EarlyStopping(EarlyStopConfig cfg) : cfg_(cfg), best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopping::step(double val_loss) {
    improved_ = val_loss < best_ - cfg_.min_delta;
    if (improved_) {
        best_ = val_loss;
        bad_ = 0;
        return false;
    }
    return ++bad_ >= cfg_.patience;
}

void hflip(Tensor<float>& t) {
    const Shape& s = t.shape();
    for (std::size_t q = 0; q < s.n * s.c; ++q)
        for (std::size_t y = 0; y < s.h; ++y) {
            float* row = t.ptr() + q * s.plane() + y * s.w;
            std::reverse(row, row + s.w);
        }
}

void vflip(Tensor<float>& t) {
    const Shape& s = t.shape();
    for (std::size_t q = 0; q < s.n * s.c; ++q) {
        float* plane = t.ptr() + q * s.plane();
        for (std::size_t y = 0; y < s.h / 2; ++y)
            std::swap_ranges(plane + y * s.w, plane + (y + 1) * s.w, plane + (s.h - 1 - y) * s.w);
    }
}

Tensor<float> rotate(const Tensor<float>& t, double degrees, bool nearest) {
    const Shape& s = t.shape();
    Tensor<float> out(s);
    const double a = degrees * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cx = static_cast<double>(s.w) / 2, cy = static_cast<double>(s.h) / 2;
    const auto H = static_cast<long>(s.h), W = static_cast<long>(s.w);
    for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
            // Inverse-map the output pixel centre into the source.
            const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
            const double sx = ca * dx + sa * dy + cx, sy = -sa * dx + ca * dy + cy;
            for (std::size_t q = 0; q < s.n * s.c; ++q) {
                const float* src = t.ptr() + q * s.plane();
                float& dst = out.ptr()[q * s.plane() + y * s.w + x];
                if (nearest) {
                    const auto ix = static_cast<long>(std::floor(sx)), iy = static_cast<long>(std::floor(sy));
                    dst = (ix >= 0 && iy >= 0 && ix < W && iy < H) ? src[iy * W + ix] : 0.0f;
                    continue;
                }
                const double fx = sx - 0.5, fy = sy - 0.5;
                const auto x0 = static_cast<long>(std::floor(fx)), y0 = static_cast<long>(std::floor(fy));
                const double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
                auto tap = [&](long yy, long xx) {
                    return (xx >= 0 && yy >= 0 && xx < W && yy < H) ? static_cast<double>(src[yy * W + xx]) : 0.0;
                };
                const double v = (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                                 wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
                dst = static_cast<float>(v);
            }
        }
    }
    return out;
}

void augment(Tensor<float>& image, Tensor<float>& mask, Rng& rng, const AugmentConfig& cfg) {
    const Shape& s = image.shape();
    if (mask.shape().h != s.h || mask.shape().w != s.w) {
        throw DimensionError("augment: image " + s.str() + " vs mask " + mask.shape().str());
    }
    const bool do_h = rng.bernoulli(cfg.p);
    const bool do_v = rng.bernoulli(cfg.p);
    const bool do_r = rng.bernoulli(cfg.p);
    const double angle = rng.uniform(-cfg.max_degrees, cfg.max_degrees);
    const bool do_d = rng.bernoulli(cfg.p);
    if (cfg.hflip && do_h) {
        hflip(image);
        hflip(mask);
    }
    if (cfg.vflip && do_v) {
        vflip(image);
        vflip(mask);
    }
    if (cfg.rotate && do_r) {
        image = rotate(image, angle, false);
        mask = rotate(mask, angle, true);
    }
    if (cfg.dropout && do_d) {
        const std::size_t max_h = std::max<std::size_t>(1, s.h / 8), max_w = std::max<std::size_t>(1, s.w / 8);
        const auto holes = rng.range(1, static_cast<std::int64_t>(std::max<std::size_t>(1, cfg.max_holes)));
        for (std::int64_t k = 0; k < holes; ++k) {
            const auto hh = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(max_h)));
            const auto ww = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(max_w)));
            const auto y0 = static_cast<std::size_t>(rng.below(s.h - hh + 1));
            const auto x0 = static_cast<std::size_t>(rng.below(s.w - ww + 1));
            for (std::size_t q = 0; q < s.n * s.c; ++q)
                for (std::size_t y = y0; y < y0 + hh; ++y)
                    std::fill_n(image.ptr() + q * s.plane() + y * s.w + x0, ww, 0.0f);
        }
    }
}

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (plateau.patience == 0 || early_stop.patience == 0) throw ConfigError("train: patience must be >= 1");
    if (!(plateau.factor > 0 && plateau.factor < 1)) throw ConfigError("train: plateau factor must be in (0,1)");
    if (plateau.min_lr < 0) throw ConfigError("train: min_lr must be >= 0");
    if (w_dice < 0 || w_bce < 0) throw ConfigError("train: loss weights must be >= 0");
}

void make_batch(const std::vector<SamplePair>& data, const std::vector<std::size_t>& order, std::size_t begin,
                std::size_t end, Tensor<float>& images, Tensor<float>& masks) {
    const Shape is = data[order[begin]].image.shape(), ms = data[order[begin]].mask.shape();
    const std::size_t n = end - begin;
    images = Tensor<float>(Shape{n, is.c, is.h, is.w});
    masks = Tensor<float>(Shape{n, ms.c, ms.h, ms.w});
    for (std::size_t i = 0; i < n; ++i) {
        const SamplePair& s = data[order[begin + i]];
        if (!(s.image.shape() == is) || !(s.mask.shape() == ms)) {
            throw DimensionError("batch: sample '" + s.id + "' has shape " + s.image.shape().str() + "/" +
                                 s.mask.shape().str() + ", expected " + is.str() + "/" + ms.str());
        }
        std::copy(s.image.data().begin(), s.image.data().end(), images.ptr() + i * is.numel());
        std::copy(s.mask.data().begin(), s.mask.data().end(), masks.ptr() + i * ms.numel());
    }
}

ValidationResult validate(DilatedSegNet<float>& model, const std::vector<SamplePair>& data, const TrainConfig& cfg) {
    if (data.empty()) throw ConfigError("validate: empty dataset");
    NoGradGuard ng;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    ValidationResult r;
    Tensor<float> images, masks;
    for (std::size_t b = 0; b < data.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(data.size(), b + cfg.batch_size);
        make_batch(data, order, b, e, images, masks);
        const auto out = model.forward(make_leaf(images), Mode::Eval);
        const auto loss = combined_loss(out.mask, masks, cfg.w_dice, cfg.w_bce);
        r.loss += static_cast<double>(loss->value[0]) * static_cast<double>(e - b);
        for (std::size_t i = 0; i < e - b; ++i) r.dsc += metrics_from_counts(confusion_at(out.mask->value, masks, i)).dsc;
    }
    r.loss /= static_cast<double>(data.size());
    r.dsc /= static_cast<double>(data.size());
    return r;
}

namespace {

std::vector<Tensor<float>> snapshot(const ParamRegistry<float>& reg) {
    std::vector<Tensor<float>> out;
    for (const auto& p : reg.params()) out.push_back(p.var->value);
    return out;
}

void restore(ParamRegistry<float>& reg, const std::vector<Tensor<float>>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) reg.params()[i].var->value = values[i];
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

History train(DilatedSegNet<float>& model, const std::vector<SamplePair>& train_set,
              const std::vector<SamplePair>& val_set, const TrainConfig& cfg,
              const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) throw ConfigError("train: train and validation sets must be non-empty");
    const Shape expect{1, 3, model.config().input_h, model.config().input_w};
    for (const auto* set : {&train_set, &val_set}) {
        for (const auto& s : *set) {
            if (!(s.image.shape() == expect)) {
                throw DimensionError("train: sample '" + s.id + "' is " + s.image.shape().str() + ", model expects " +
                                     expect.str());
            }
        }
    }

    auto& reg = model.registry();
    Adam<float> adam(reg);
    PlateauScheduler plateau(cfg.lr, cfg.plateau);
    EarlyStopping stopper(cfg.early_stop);
    History h;
    std::vector<Tensor<float>> best = snapshot(reg);
    namespace fs = std::filesystem;
    if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

    std::vector<std::size_t> order(train_set.size());
    Tensor<float> images, masks;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = plateau.lr();
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle(derive_seed(cfg.seed, epoch, 0x5348));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

        double epoch_loss = 0;
        std::size_t step = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++step) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            make_batch(train_set, order, b, e, images, masks);
            if (cfg.augment) {
                const std::size_t plane3 = 3 * expect.plane(), plane1 = expect.plane();
                for (std::size_t i = 0; i < e - b; ++i) {
                    Tensor<float> img(expect), msk(Shape{1, 1, expect.h, expect.w});
                    std::copy_n(images.ptr() + i * plane3, plane3, img.ptr());
                    std::copy_n(masks.ptr() + i * plane1, plane1, msk.ptr());
                    Rng rng(derive_seed(cfg.seed, epoch + 1, order[b + i]));
                    augment(img, msk, rng, cfg.augmentation);
                    std::copy_n(img.ptr(), plane3, images.ptr() + i * plane3);
                    std::copy_n(msk.ptr(), plane1, masks.ptr() + i * plane1);
                }
            }
            const auto out = model.forward(make_leaf(images), Mode::Train);
            const auto loss = combined_loss(out.mask, masks, cfg.w_dice, cfg.w_bce);
            const double lv = static_cast<double>(loss->value[0]);
            if (!std::isfinite(lv)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                   std::to_string(step + 1));
            }
            reg.zero_grad();
            backward(loss);
            try {
                adam.step(lr);
            } catch (const NumericError& err) {
                throw NumericError("train: epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1) +
                                   ": " + err.what());
            }
            reg.zero_grad();
            epoch_loss += lv * static_cast<double>(e - b);
        }
        epoch_loss /= static_cast<double>(order.size());

        const ValidationResult v = validate(model, val_set, cfg);
        h.train_loss.push_back(epoch_loss);
        h.val_loss.push_back(v.loss);
        h.val_dsc.push_back(v.dsc);
        h.lr.push_back(lr);
        const bool stop = stopper.step(v.loss);
        if (stopper.improved()) {
            h.best_epoch = epoch;
            best = snapshot(reg);
            if (!cfg.checkpoint_dir.empty()) {
                save_weights(reg, (fs::path(cfg.checkpoint_dir) / "best.dsgw").string());
                std::ofstream side(fs::path(cfg.checkpoint_dir) / "best.cfg");
                side << "epoch = " << epoch + 1 << "\nlr = " << fmt(lr) << "\nbest_val_loss = " << fmt(v.loss)
                     << "\n";
            }
        }
        if (on_epoch) on_epoch(EpochLog{epoch + 1, epoch_loss, v.loss, v.dsc, lr, stopper.improved()});
        plateau.step(v.loss);
        if (stop) {
            h.stopped_early = true;
            break;
        }
    }
    restore(reg, best);
    reg.set_stats_ready(true);
    return h;
}

void write_history_csv(const History& h, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "epoch,train_loss,val_loss,val_dsc,lr\n";
    for (std::size_t i = 0; i < h.epochs(); ++i) {
        f << i + 1 << ',' << fmt(h.train_loss[i]) << ',' << fmt(h.val_loss[i]) << ',' << fmt(h.val_dsc[i]) << ','
          << fmt(h.lr[i]) << '\n';
    }
}

template Var<float> dice_loss(const Var<float>&, const Tensor<float>&, double);
template Var<double> dice_loss(const Var<double>&, const Tensor<double>&, double);
template Var<float> bce_loss(const Var<float>&, const Tensor<float>&, double);
template Var<double> bce_loss(const Var<double>&, const Tensor<double>&, double);
template Var<float> combined_loss(const Var<float>&, const Tensor<float>&, double, double);
template Var<double> combined_loss(const Var<double>&, const Tensor<double>&, double, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace dseg
