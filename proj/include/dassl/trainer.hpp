#pragma once
// Training orchestration with the gradient-routing rule:
//   ssl step        -> adapter + projector + predictor update, MIL frozen
//   supervised step -> MIL + adapter update, SSL heads untouched
//
// Schedules: ssl_then_sup (default), joint (per-epoch alternation with the
// SSL gradients weighted by ssl_weight), sup_only (frozen-feature baseline).
//
// All randomness is derived from (seed, phase, epoch, slide) tags rather
// than a consumed global stream, so resuming from a checkpoint reproduces
// the exact trajectory.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dassl/adapters.hpp"
#include "dassl/augment.hpp"
#include "dassl/bag.hpp"
#include "dassl/config.hpp"
#include "dassl/mil.hpp"
#include "dassl/optim.hpp"
#include "dassl/sampler.hpp"
#include "dassl/ssl_objective.hpp"

namespace dassl {

enum class Schedule { ssl_then_sup, joint, sup_only };

Schedule schedule_from_string(const std::string& s);
const char* schedule_name(Schedule s);

struct TrainConfig {
    Schedule schedule = Schedule::ssl_then_sup;
    int ssl_epochs = 10;
    int sup_epochs = 20;
    int batch_size = 8;
    double ssl_lr = 0.05;
    double ssl_momentum = 0.9;
    double sup_lr = 1e-4;
    double ssl_weight = 0.5;  // beta, joint schedule only
    uint64_t seed = 1;
    int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
};

struct PipelineConfig {
    bool tumor_filter = true;
    bool sampler_enabled = true;
    SamplerConfig sampler;      // seed field is the base sampling seed
    AugmentConfig augment;      // seed field is the base augmentation seed
    AdapterConfig adapter;      // input_dim filled from data at init
    SSLConfig ssl;              // embed_dim filled from data at init
    MilConfig mil;              // input_dim filled from data at init
    bool mil_class_weighting = true;
    TrainConfig train;
    std::string resolved_config_text;  // for logs and checkpoints
};

PipelineConfig pipeline_from_config(const Config& cfg);

struct ModelState {
    FeatureAdapter adapter;
    MilModel mil;
    SSLHeads heads;
    int feature_dim = 0;

    static ModelState init(const PipelineConfig& cfg, int feature_dim, uint64_t seed);

    TensorList ssl_params();  // adapter + heads
    TensorList sup_params();  // adapter + mil
    TensorList all_params();
};

struct Optimizers {
    SgdMomentum ssl;
    Adam sup;

    explicit Optimizers(const TrainConfig& cfg)
        : ssl(cfg.ssl_lr, cfg.ssl_momentum), sup(cfg.sup_lr) {}
};

struct TrainLogEntry {
    int epoch = 0;            // index within its phase
    std::string phase;        // "ssl" or "sup"
    LossReport loss;
    double wall_ms = 0.0;
};

// ---- checkpointing ---------------------------------------------------------

struct Checkpoint {
    std::string config_text;
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    int feature_dim = 0;
    int completed_steps = 0;  // phase-epochs finished in schedule order
    std::map<std::string, Eigen::MatrixXd> tensors;
    std::map<std::string, Eigen::MatrixXd> sgd_velocity;
    std::map<std::string, Adam::State> adam_state;
};

Checkpoint make_checkpoint(const ModelState& state, const Optimizers& opts,
                           const PipelineConfig& cfg, int completed_steps);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds model + optimizers from a checkpoint's embedded config.
struct RestoredRun {
    PipelineConfig cfg;
    ModelState state;
    Optimizers opts;
    int completed_steps = 0;
};
RestoredRun restore_run(const Checkpoint& ckpt);

// ---- training --------------------------------------------------------------

class Trainer {
public:
    explicit Trainer(const PipelineConfig& cfg) : cfg_(cfg) {}

    const PipelineConfig& config() const { return cfg_; }

    // One optimizer step on the DA-SSL loss over a batch of view pairs.
    // MIL parameters are never touched. loss_scale multiplies the gradients
    // (joint-schedule beta); the report is unscaled.
    LossReport ssl_step(const std::vector<ViewBatchItem>& batch, ModelState& state,
                        SgdMomentum& opt, double loss_scale = 1.0) const;

    // One optimizer step on the supervised loss for a single unpadded bag.
    // SSL head parameters are never touched.
    LossReport supervised_step(const Eigen::MatrixXd& x, int target, ModelState& state,
                               Adam& opt, const Eigen::Vector2d& class_weights,
                               Rng* mil_rng) const;

    // Runs the configured schedule over the given training bags (already
    // tumor/NaN filtered). Resumable via completed_steps from a checkpoint.
    using CheckpointHook = std::function<void(int completed_steps, const ModelState&,
                                              const Optimizers&)>;
    std::vector<TrainLogEntry> train(const std::vector<FeatureBag>& bags, ModelState& state,
                                     Optimizers& opts, int completed_steps = 0,
                                     const CheckpointHook& hook = nullptr) const;

    // Deterministic slide-level positive-class probability on the full bag.
    double predict_slide(const FeatureBag& bag, ModelState& state) const;

    // Inverse-frequency class weights normalized to mean 1, or (1,1) when
    // class weighting is disabled.
    Eigen::Vector2d class_weights_for(const std::vector<FeatureBag>& bags) const;

    // Total phase-epochs in schedule order; used for resume bookkeeping.
    int total_steps() const;
    // (phase, epoch-in-phase) for a schedule position.
    std::pair<std::string, int> step_at(int step_index) const;

private:
    LossReport run_ssl_epoch(const std::vector<FeatureBag>& bags, ModelState& state,
                             SgdMomentum& opt, int epoch, double loss_scale) const;
    LossReport run_sup_epoch(const std::vector<FeatureBag>& bags, ModelState& state,
                             Adam& opt, int epoch, const Eigen::Vector2d& weights) const;
    SSLConfig effective_ssl_cfg(const ModelState& state) const;

    PipelineConfig cfg_;
};

}  // namespace dassl
