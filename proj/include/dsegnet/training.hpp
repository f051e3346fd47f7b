#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsegnet/data.hpp"
#include "dsegnet/model.hpp"
#include "dsegnet/rng.hpp"

namespace dseg {

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps) over the whole batch.
template <typename T>
Var<T> dice_loss(const Var<T>& p, const Tensor<T>& g, double eps = 1.0);

// Mean binary cross-entropy on probabilities clamped to [clamp, 1 - clamp].
// Clamped elements pass no gradient.
template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& g, double clamp = 1e-7);

template <typename T>
Var<T> combined_loss(const Var<T>& p, const Tensor<T>& g, double w_dice = 1.0, double w_bce = 1.0);

template <typename T>
class Adam {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit Adam(ParamRegistry<T>& reg) : Adam(reg, Options{}) {}
    Adam(ParamRegistry<T>& reg, Options options);

    // Applies one update from the current gradients. Parameters that received
    // no gradient are skipped. A non-finite gradient aborts the whole step
    // before anything is modified and names the parameter.
    void step(double lr);
    std::uint64_t steps() const { return t_; }

private:
    struct Slot {
        Parameter<T>* param;
        Tensor<T> m, v;
    };
    std::vector<Slot> slots_;
    Options opt_;
    std::uint64_t t_ = 0;
};

struct PlateauConfig {
    double factor = 0.1;
    std::size_t patience = 5;
    double min_lr = 1e-7;
    double min_delta = 1e-4;
};

// Reduce-on-plateau: an epoch improves when val < best - min_delta. After
// `patience` consecutive non-improving epochs lr is multiplied by factor
// (floored at min_lr) and the counter restarts.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, PlateauConfig cfg);
    double step(double val_loss);
    double lr() const { return lr_; }

private:
    PlateauConfig cfg_;
    double lr_;
    double best_;
    std::size_t bad_ = 0;
};

struct EarlyStopConfig {
    std::size_t patience = 20;
    double min_delta = 1e-4;
};

class EarlyStopping {
public:
    explicit EarlyStopping(EarlyStopConfig cfg);
    // Returns true when training should stop.
    bool step(double val_loss);
    bool improved() const { return improved_; }
    double best() const { return best_; }

private:
    EarlyStopConfig cfg_;
    double best_;
    std::size_t bad_ = 0;
    bool improved_ = false;
};

struct AugmentConfig {
    bool hflip = true;
    bool vflip = true;
    bool rotate = true;
    bool dropout = true;
    double p = 0.5;
    double max_degrees = 30.0;
    std::size_t max_holes = 8;
};

// Image (1,3,h,w) and mask (1,1,h,w) are transformed together; dropout only
// touches the image. Draw order is fixed so results depend only on the Rng.
void augment(Tensor<float>& image, Tensor<float>& mask, Rng& rng, const AugmentConfig& cfg);

// Building blocks of augment, exposed for tests.
void hflip(Tensor<float>& t);
void vflip(Tensor<float>& t);
// Rotation about the image centre; zero outside the source.
Tensor<float> rotate(const Tensor<float>& t, double degrees, bool nearest);

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 30;
    PlateauConfig plateau;
    EarlyStopConfig early_stop;
    std::uint64_t seed = 42;
    bool augment = true;
    AugmentConfig augmentation;
    double w_dice = 1.0;
    double w_bce = 1.0;
    // When set, best-val-loss weights go to <dir>/best.dsgw with a best.cfg sidecar.
    std::string checkpoint_dir;

    void validate() const;
};

struct History {
    std::vector<double> train_loss, val_loss, val_dsc, lr;
    std::size_t best_epoch = 0;  // 0-based
    bool stopped_early = false;

    std::size_t epochs() const { return train_loss.size(); }
};

struct EpochLog {
    std::size_t epoch;  // 1-based
    double train_loss, val_loss, val_dsc, lr;
    bool improved;
};

// Stacks samples [begin, end) of `order` into image and mask batches.
void make_batch(const std::vector<SamplePair>& data, const std::vector<std::size_t>& order, std::size_t begin,
                std::size_t end, Tensor<float>& images, Tensor<float>& masks);

struct ValidationResult {
    double loss = 0;
    double dsc = 0;  // mean per-image DSC at threshold 0.5
};

ValidationResult validate(DilatedSegNet<float>& model, const std::vector<SamplePair>& data, const TrainConfig& cfg);

// Mini-batch Adam training with per-epoch validation, plateau scheduling and
// early stopping on validation loss. The best-val-loss weights are restored
// into the model before returning.
History train(DilatedSegNet<float>& model, const std::vector<SamplePair>& train_set,
              const std::vector<SamplePair>& val_set, const TrainConfig& cfg,
              const std::function<void(const EpochLog&)>& on_epoch = {});

void write_history_csv(const History& h, const std::string& path);

}  // namespace dseg
