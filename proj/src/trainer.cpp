#include "dassl/trainer.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include "dassl/error.hpp"

namespace dassl {

namespace {

constexpr uint64_t kSslOrderTag = 0x550Bu;
constexpr uint64_t kSupOrderTag = 0x5B0Bu;
constexpr uint64_t kSslSampleTag = 0x5A11u;
constexpr uint64_t kSupSampleTag = 0x5B11u;
constexpr uint64_t kViewTag = 0xA100u;
constexpr uint64_t kMilMaskTag = 0x3140u;

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

Schedule schedule_from_string(const std::string& s) {
    if (s == "ssl_then_sup") return Schedule::ssl_then_sup;
    if (s == "joint") return Schedule::joint;
    if (s == "sup_only") return Schedule::sup_only;
    fail(ErrorCode::bad_config, "unknown train.schedule: " + s);
}

const char* schedule_name(Schedule s) {
    switch (s) {
        case Schedule::ssl_then_sup: return "ssl_then_sup";
        case Schedule::joint:        return "joint";
        case Schedule::sup_only:     return "sup_only";
    }
    return "?";
}

PipelineConfig pipeline_from_config(const Config& cfg) {
    PipelineConfig p;
    p.tumor_filter = cfg.get_bool("filter.tumor_only");

    p.sampler_enabled = cfg.get_bool("sampler.enabled");
    p.sampler.G = static_cast<int>(cfg.get_int("sampler.G"));
    p.sampler.K = static_cast<int>(cfg.get_int("sampler.K"));
    p.sampler.pad_to_K = cfg.get_bool("sampler.pad_to_K");
    p.sampler.seed = static_cast<uint64_t>(cfg.get_int("sampler.seed"));

    p.augment.mask_enabled = cfg.get_bool("augment.mask_enabled");
    p.augment.mask_rate = cfg.get_double("augment.mask_rate");
    p.augment.feat_replace_enabled = cfg.get_bool("augment.feat_replace_enabled");
    p.augment.feat_replace_frac = cfg.get_double("augment.feat_replace_frac");
    p.augment.inst_replace_enabled = cfg.get_bool("augment.inst_replace_enabled");
    p.augment.inst_replace_rate = cfg.get_double("augment.inst_replace_rate");
    p.augment.noise_enabled = cfg.get_bool("augment.noise_enabled");
    p.augment.noise_sigma = cfg.get_double("augment.noise_sigma");
    p.augment.block_drop_enabled = cfg.get_bool("augment.block_drop_enabled");
    p.augment.block_drop_frac = cfg.get_double("augment.block_drop_frac");
    p.augment.dropout_enabled = cfg.get_bool("augment.dropout_enabled");
    p.augment.dropout_p = cfg.get_double("augment.dropout_p");
    p.augment.seed = static_cast<uint64_t>(cfg.get_int("augment.seed"));

    p.adapter.kind = adapter_kind_from_string(cfg.get_string("adapter.kind"));
    p.adapter.hidden_dim = static_cast<int>(cfg.get_int("adapter.hidden_dim"));
    p.adapter.kernel_size = static_cast<int>(cfg.get_int("adapter.kernel_size"));

    p.ssl.latent_dim = static_cast<int>(cfg.get_int("ssl.latent_dim"));
    p.ssl.lambda = cfg.get_double("ssl.lambda");
    p.ssl.cons_weight = cfg.get_double("ssl.cons_weight");

    p.mil.kind = mil_kind_from_string(cfg.get_string("mil.kind"));
    p.mil.n_branch = static_cast<int>(cfg.get_int("mil.n_branch"));
    p.mil.mask_rate = cfg.get_double("mil.mask_rate");
    p.mil.attn_hidden = static_cast<int>(cfg.get_int("mil.attn_hidden"));
    p.mil.diversity_coef = cfg.get_double("mil.diversity_coef");
    p.mil_class_weighting = cfg.get_bool("mil.class_weighting");

    p.train.schedule = schedule_from_string(cfg.get_string("train.schedule"));
    p.train.ssl_epochs = static_cast<int>(cfg.get_int("train.ssl_epochs"));
    p.train.sup_epochs = static_cast<int>(cfg.get_int("train.sup_epochs"));
    p.train.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
    p.train.ssl_lr = cfg.get_double("train.ssl_lr");
    p.train.ssl_momentum = cfg.get_double("train.ssl_momentum");
    p.train.sup_lr = cfg.get_double("train.sup_lr");
    p.train.ssl_weight = cfg.get_double("train.ssl_weight");
    p.train.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    p.train.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every"));

    require(p.train.ssl_epochs >= 0 && p.train.sup_epochs >= 0, ErrorCode::bad_config,
            "train: epochs must be >= 0");
    require(p.train.batch_size >= 1, ErrorCode::bad_config, "train: batch_size must be >= 1");
    require(p.train.ssl_lr > 0.0 && p.train.sup_lr > 0.0, ErrorCode::bad_config,
            "train: learning rates must be positive");
    require(p.train.ssl_weight >= 0.0, ErrorCode::bad_config, "train: ssl_weight must be >= 0");

    p.resolved_config_text = cfg.resolved_text();
    return p;
}

ModelState ModelState::init(const PipelineConfig& cfg, int feature_dim, uint64_t seed) {
    require(feature_dim >= 1, ErrorCode::bad_argument, "model init: feature_dim must be >= 1");
    ModelState s;
    s.feature_dim = feature_dim;

    AdapterConfig ad = cfg.adapter;
    ad.input_dim = feature_dim;
    s.adapter = FeatureAdapter::init(ad, mix_seed({seed, 1}));

    MilConfig mil = cfg.mil;
    mil.input_dim = feature_dim;
    s.mil = MilModel::init(mil, mix_seed({seed, 2}));

    SSLConfig ssl = cfg.ssl;
    ssl.embed_dim = feature_dim;
    s.heads = SSLHeads::init(ssl, mix_seed({seed, 3}));
    return s;
}

TensorList ModelState::ssl_params() {
    TensorList out = adapter.params();
    for (auto* t : heads.params()) out.push_back(t);
    return out;
}

TensorList ModelState::sup_params() {
    TensorList out = adapter.params();
    for (auto* t : mil.params()) out.push_back(t);
    return out;
}

TensorList ModelState::all_params() {
    TensorList out = adapter.params();
    for (auto* t : mil.params()) out.push_back(t);
    for (auto* t : heads.params()) out.push_back(t);
    return out;
}

// ---- checkpoint I/O ---------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'D', 'S', 'S', 'L', 'C', 'K', 'P', '1'};

void put_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_i64(std::ostream& out, int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    put_u64(out, static_cast<uint64_t>(m.rows()));
    put_u64(out, static_cast<uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
}

uint64_t get_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), ErrorCode::parse_error, "checkpoint truncated");
    return v;
}
int64_t get_i64(std::istream& in) {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), ErrorCode::parse_error, "checkpoint truncated");
    return v;
}
std::string get_string(std::istream& in) {
    const uint64_t n = get_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    require(in.good(), ErrorCode::parse_error, "checkpoint truncated");
    return s;
}
Eigen::MatrixXd get_matrix(std::istream& in) {
    const auto rows = static_cast<int64_t>(get_u64(in));
    const auto cols = static_cast<int64_t>(get_u64(in));
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    require(in.good(), ErrorCode::parse_error, "checkpoint truncated");
    return m;
}

}  // namespace

Checkpoint make_checkpoint(const ModelState& state, const Optimizers& opts,
                           const PipelineConfig& cfg, int completed_steps) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.resolved_config_text;
    ckpt.config_hash = fnv1a64(cfg.resolved_config_text);
    ckpt.seed = cfg.train.seed;
    ckpt.feature_dim = state.feature_dim;
    ckpt.completed_steps = completed_steps;
    // params() hands out mutable pointers; snapshotting only reads them
    auto& mutable_state = const_cast<ModelState&>(state);
    for (auto* t : mutable_state.all_params()) ckpt.tensors[t->name] = t->v;
    ckpt.sgd_velocity = opts.ssl.velocity();
    ckpt.adam_state = opts.sup.state();
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::io_failure, "cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put_string(out, ckpt.config_text);
    put_u64(out, ckpt.config_hash);
    put_u64(out, ckpt.seed);
    put_i64(out, ckpt.feature_dim);
    put_i64(out, ckpt.completed_steps);

    put_u64(out, ckpt.tensors.size());
    for (const auto& [name, m] : ckpt.tensors) {
        put_string(out, name);
        put_matrix(out, m);
    }
    put_u64(out, ckpt.sgd_velocity.size());
    for (const auto& [name, m] : ckpt.sgd_velocity) {
        put_string(out, name);
        put_matrix(out, m);
    }
    put_u64(out, ckpt.adam_state.size());
    for (const auto& [name, s] : ckpt.adam_state) {
        put_string(out, name);
        put_i64(out, s.t);
        put_matrix(out, s.m);
        put_matrix(out, s.v);
    }
    require(out.good(), ErrorCode::io_failure, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::io_failure, "cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.good() && std::memcmp(magic, kCkptMagic, sizeof(magic)) == 0,
            ErrorCode::parse_error, "not a checkpoint file: " + path);

    Checkpoint ckpt;
    ckpt.config_text = get_string(in);
    ckpt.config_hash = get_u64(in);
    ckpt.seed = get_u64(in);
    ckpt.feature_dim = static_cast<int>(get_i64(in));
    ckpt.completed_steps = static_cast<int>(get_i64(in));

    const uint64_t n_tensors = get_u64(in);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        const std::string name = get_string(in);
        ckpt.tensors[name] = get_matrix(in);
    }
    const uint64_t n_vel = get_u64(in);
    for (uint64_t i = 0; i < n_vel; ++i) {
        const std::string name = get_string(in);
        ckpt.sgd_velocity[name] = get_matrix(in);
    }
    const uint64_t n_adam = get_u64(in);
    for (uint64_t i = 0; i < n_adam; ++i) {
        const std::string name = get_string(in);
        Adam::State s;
        s.t = get_i64(in);
        s.m = get_matrix(in);
        s.v = get_matrix(in);
        ckpt.adam_state[name] = std::move(s);
    }
    require(ckpt.config_hash == fnv1a64(ckpt.config_text), ErrorCode::parse_error,
            "checkpoint config hash mismatch: " + path);
    return ckpt;
}

RestoredRun restore_run(const Checkpoint& ckpt) {
    const Config cfg = Config::from_text(ckpt.config_text, "<checkpoint>");
    const PipelineConfig pipeline = pipeline_from_config(cfg);
    RestoredRun run{pipeline, ModelState(), Optimizers(pipeline.train),
                    ckpt.completed_steps};
    run.state = ModelState::init(run.cfg, ckpt.feature_dim, run.cfg.train.seed);
    for (auto* t : run.state.all_params()) {
        const auto it = ckpt.tensors.find(t->name);
        require(it != ckpt.tensors.end(), ErrorCode::parse_error,
                "checkpoint missing tensor: " + t->name);
        require(it->second.rows() == t->v.rows() && it->second.cols() == t->v.cols(),
                ErrorCode::shape_mismatch, "checkpoint tensor shape mismatch: " + t->name);
        t->v = it->second;
    }
    run.opts.ssl.velocity() = ckpt.sgd_velocity;
    run.opts.sup.state() = ckpt.adam_state;
    return run;
}

// ---- training ---------------------------------------------------------------

LossReport Trainer::ssl_step(const std::vector<ViewBatchItem>& batch, ModelState& state,
                             SgdMomentum& opt, double loss_scale) const {
    TensorList params = state.ssl_params();
    zero_grads(params);
    const LossReport report =
        dassl_loss(batch, state.adapter, state.mil, state.heads, effective_ssl_cfg(state),
                   /*accumulate_grads=*/true);
    if (loss_scale != 1.0)
        for (auto* t : params) t->g *= loss_scale;
    opt.step(params);
    return report;
}

LossReport Trainer::supervised_step(const Eigen::MatrixXd& x, int target, ModelState& state,
                                    Adam& opt, const Eigen::Vector2d& class_weights,
                                    Rng* mil_rng) const {
    TensorList params = state.sup_params();
    zero_grads(params);

    FeatureAdapter::Workspace ad_ws;
    const Eigen::MatrixXd z = state.adapter.forward(x, ad_ws);
    const Mask mask(static_cast<size_t>(x.rows()), 1);

    MilModel::Workspace mil_ws;
    const MILOutput out = state.mil.forward(z, mask, /*training=*/true, mil_rng, mil_ws);
    const SupervisedLoss sl =
        supervised_loss(out, target, class_weights, cfg_.mil.diversity_coef);

    const Eigen::MatrixXd dz =
        state.mil.backward(sl.dlogits, Eigen::VectorXd(), sl.ddiversity, mil_ws, true);
    state.adapter.backward(dz, ad_ws, true);
    opt.step(params);

    LossReport report;
    report.l_sup = sl.value;
    report.l_total = sl.value;
    return report;
}

SSLConfig Trainer::effective_ssl_cfg(const ModelState& state) const {
    SSLConfig ssl = cfg_.ssl;
    ssl.embed_dim = state.feature_dim;
    return ssl;
}

LossReport Trainer::run_ssl_epoch(const std::vector<FeatureBag>& bags, ModelState& state,
                                  SgdMomentum& opt, int epoch, double loss_scale) const {
    const auto& tc = cfg_.train;
    const int total_epochs =
        tc.schedule == Schedule::joint ? tc.sup_epochs : tc.ssl_epochs;
    opt.set_lr(cosine_lr(tc.ssl_lr, epoch, total_epochs));

    std::vector<size_t> order(bags.size());
    for (size_t i = 0; i < bags.size(); ++i) order[i] = i;
    Rng order_rng(mix_seed({tc.seed, kSslOrderTag, static_cast<uint64_t>(epoch)}));
    order_rng.shuffle(order);

    LossReport sum;
    int steps = 0;
    std::vector<ViewBatchItem> batch;
    batch.reserve(static_cast<size_t>(tc.batch_size));

    auto flush = [&]() {
        if (batch.empty()) return;
        const LossReport r = ssl_step(batch, state, opt, loss_scale);
        sum.l_simsiam += r.l_simsiam;
        sum.l_cons += r.l_cons;
        sum.l_total += r.l_total;
        ++steps;
        batch.clear();
    };

    for (size_t pos = 0; pos < order.size(); ++pos) {
        const size_t mi = order[pos];
        SamplerConfig sc = cfg_.sampler;  // pad_to_K from config, true by default
        sc.seed = mix_seed({cfg_.sampler.seed, kSslSampleTag, static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(mi)});
        const SampledBag sampled = uniform_sample(bags[mi], sc);

        AugmentConfig ac = cfg_.augment;
        ac.seed = mix_seed({cfg_.augment.seed, kViewTag, static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(mi)});
        ViewPair views = make_views(sampled, ac);

        ViewBatchItem item;
        item.view1 = views.view1.cast<double>();
        item.view2 = views.view2.cast<double>();
        item.mask = views.valid_mask;
        batch.push_back(std::move(item));
        if (static_cast<int>(batch.size()) == tc.batch_size) flush();
    }
    flush();

    require(steps > 0, ErrorCode::bad_argument, "ssl epoch with no steps");
    LossReport mean;
    mean.l_simsiam = sum.l_simsiam / steps;
    mean.l_cons = sum.l_cons / steps;
    mean.l_total = sum.l_total / steps;
    return mean;
}

LossReport Trainer::run_sup_epoch(const std::vector<FeatureBag>& bags, ModelState& state,
                                  Adam& opt, int epoch,
                                  const Eigen::Vector2d& weights) const {
    const auto& tc = cfg_.train;
    std::vector<size_t> order(bags.size());
    for (size_t i = 0; i < bags.size(); ++i) order[i] = i;
    Rng order_rng(mix_seed({tc.seed, kSupOrderTag, static_cast<uint64_t>(epoch)}));
    order_rng.shuffle(order);

    double sum = 0.0;
    int steps = 0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
        const size_t mi = order[pos];
        Eigen::MatrixXd x;
        if (cfg_.sampler_enabled) {
            SamplerConfig sc = cfg_.sampler;
            sc.pad_to_K = false;  // supervised path uses variable-length bags
            sc.seed = mix_seed({cfg_.sampler.seed, kSupSampleTag,
                                static_cast<uint64_t>(epoch), static_cast<uint64_t>(mi)});
            x = uniform_sample(bags[mi], sc).features.cast<double>();
        } else {
            x = bags[mi].features.cast<double>();
        }
        Rng mil_rng(mix_seed({tc.seed, kMilMaskTag, static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(mi)}));
        const LossReport r =
            supervised_step(x, bags[mi].target, state, opt, weights, &mil_rng);
        sum += r.l_total;
        ++steps;
    }
    require(steps > 0, ErrorCode::bad_argument, "supervised epoch with no steps");
    LossReport mean;
    mean.l_sup = sum / steps;
    mean.l_total = sum / steps;
    return mean;
}

int Trainer::total_steps() const {
    switch (cfg_.train.schedule) {
        case Schedule::ssl_then_sup: return cfg_.train.ssl_epochs + cfg_.train.sup_epochs;
        case Schedule::joint:        return 2 * cfg_.train.sup_epochs;
        case Schedule::sup_only:     return cfg_.train.sup_epochs;
    }
    return 0;
}

std::pair<std::string, int> Trainer::step_at(int step_index) const {
    switch (cfg_.train.schedule) {
        case Schedule::ssl_then_sup:
            if (step_index < cfg_.train.ssl_epochs) return {"ssl", step_index};
            return {"sup", step_index - cfg_.train.ssl_epochs};
        case Schedule::joint:
            return {step_index % 2 == 0 ? "ssl" : "sup", step_index / 2};
        case Schedule::sup_only:
            return {"sup", step_index};
    }
    return {"sup", 0};
}

std::vector<TrainLogEntry> Trainer::train(const std::vector<FeatureBag>& bags,
                                          ModelState& state, Optimizers& opts,
                                          int completed_steps,
                                          const CheckpointHook& hook) const {
    require(!bags.empty(), ErrorCode::bad_argument, "train: empty training split");
    const auto& tc = cfg_.train;

    Eigen::Vector2d weights(1.0, 1.0);
    bool weights_ready = false;

    std::vector<TrainLogEntry> log;
    const int total = total_steps();
    for (int step = completed_steps; step < total; ++step) {
        const auto [phase, epoch] = step_at(step);
        const auto t0 = std::chrono::steady_clock::now();

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.phase = phase;
        if (phase == "ssl") {
            const double scale =
                cfg_.train.schedule == Schedule::joint ? tc.ssl_weight : 1.0;
            entry.loss = run_ssl_epoch(bags, state, opts.ssl, epoch, scale);
        } else {
            if (!weights_ready) {
                weights = class_weights_for(bags);
                weights_ready = true;
            }
            entry.loss = run_sup_epoch(bags, state, opts.sup, epoch, weights);
        }
        entry.wall_ms = elapsed_ms(t0);
        log.push_back(entry);

        if (hook && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0)
            hook(step + 1, state, opts);
    }
    return log;
}

double Trainer::predict_slide(const FeatureBag& bag, ModelState& state) const {
    const Eigen::MatrixXd x = bag.features.cast<double>();
    const Eigen::MatrixXd z = state.adapter.forward(x);
    const Mask mask(static_cast<size_t>(x.rows()), 1);
    const MILOutput out = state.mil.forward(z, mask);
    return positive_probability(out.logits);
}

Eigen::Vector2d Trainer::class_weights_for(const std::vector<FeatureBag>& bags) const {
    if (!cfg_.mil_class_weighting) return Eigen::Vector2d(1.0, 1.0);
    double n0 = 0, n1 = 0;
    for (const auto& b : bags) (b.target == 1 ? n1 : n0) += 1.0;
    require(n0 > 0 && n1 > 0, ErrorCode::bad_argument,
            "class weighting needs both classes in the training split");
    const double total = n0 + n1;
    const double inv0 = total / n0;
    const double inv1 = total / n1;
    const double norm = 2.0 / (inv0 + inv1);
    return Eigen::Vector2d(inv0 * norm, inv1 * norm);
}

}  // namespace dassl
