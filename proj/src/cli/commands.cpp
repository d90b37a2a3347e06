#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "physhdr/app.hpp"
#include "physhdr/checkpoint.hpp"
#include "physhdr/error.hpp"
#include "physhdr/hdr_io.hpp"
#include "physhdr/nn/image_tensor.hpp"
#include "physhdr/training.hpp"

namespace physhdr::app {

namespace fs = std::filesystem;
using nlohmann::json;

RunManifest::RunManifest(fs::path run_dir) : dir_(std::move(run_dir)), files_(json::array()) {
    fs::create_directories(dir_);
    const fs::path p = dir_ / "run_manifest.json";
    if (fs::exists(p)) {
        std::ifstream in(p);
        try {
            files_ = json::parse(in).at("files");
        } catch (const json::exception&) {
            files_ = json::array();
        }
    }
}

void RunManifest::add(const fs::path& file, const std::string& kind) {
    const std::string rel = fs::relative(file, dir_).generic_string();
    for (auto& f : files_)
        if (f.at("path") == rel) {
            f["kind"] = kind;
            flush();
            return;
        }
    files_.push_back({{"path", rel}, {"kind", kind}});
    flush();
}

void RunManifest::flush() const {
    const fs::path tmp = dir_ / "run_manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << json{{"files", files_}}.dump(2) << '\n';
    }
    fs::rename(tmp, dir_ / "run_manifest.json");
}

namespace {

std::vector<data::Sample> procedural_samples(const RunConfig& cfg) {
    std::vector<data::Sample> out;
    for (int i = 0; i < cfg.synthetic_count; ++i) {
        const auto norm = normalize_radiance(data::synthetic_scene(i + 1, cfg.image_size, cfg.image_size));
        char id[32];
        std::snprintf(id, sizeof id, "scene_%03d", i);
        out.push_back({id, data::simulate_ldr(norm.image, cfg.exposure), norm.image, norm.scale});
    }
    return out;
}

std::vector<data::Sample> load_split(const data::DatasetManifest& m, const RunConfig& cfg,
                                     std::vector<data::EntryError>& errors) {
    data::PairOptions opt;
    opt.height = cfg.image_size;
    opt.width = cfg.image_size;
    opt.shuffle = false;
    opt.seed = cfg.seed;
    std::vector<data::EntryError> errs;
    auto samples = data::load_pairs(m, opt, 0, &errs);
    errors.insert(errors.end(), errs.begin(), errs.end());
    if (samples.empty())
        throw IoError("dataset '" + m.name + "': 0 of " + std::to_string(m.size()) + " entries could be loaded (" +
                      std::to_string(errs.size()) + " errors" +
                      (errs.empty() ? std::string() : ", first: " + errs.front().path + ": " + errs.front().message) +
                      ")");
    return samples;
}

void append_line(const fs::path& path, const json& row) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    out << row.dump() << '\n';
}

// Keeps log rows up to and including `step`.
void truncate_log(const fs::path& path, std::int64_t step) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string line, kept;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            if (json::parse(line).at("step").get<std::int64_t>() > step) continue;
        } catch (const json::exception&) {
            continue;  // partial line from an interrupted run
        }
        kept += line + '\n';
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    out << kept;
}

std::vector<data::Sample> pick(const std::vector<data::Sample>& all, const std::vector<std::size_t>& order,
                               std::size_t begin, std::size_t end) {
    std::vector<data::Sample> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back(all[order[i]]);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

} // namespace

Datasets load_datasets(const RunConfig& cfg) {
    Datasets d;
    if (cfg.train_manifest.empty()) {
        auto all = procedural_samples(cfg);
        if (cfg.eval_split == "train") {
            d.train = all;
            d.test = std::move(all);
            return d;
        }
        const auto order = data::shuffled_indices(all.size(), cfg.seed);
        std::size_t n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * all.size()));
        n_train = std::clamp<std::size_t>(n_train, 1, all.size() > 1 ? all.size() - 1 : 1);
        std::vector<std::size_t> tr(order.begin(), order.begin() + n_train), te(order.begin() + n_train, order.end());
        std::sort(tr.begin(), tr.end());
        std::sort(te.begin(), te.end());
        for (auto i : tr) d.train.push_back(all[i]);
        for (auto i : te) d.test.push_back(all[i]);
        if (d.test.empty()) d.test = d.train;
        return d;
    }
    const auto train_m = data::load_manifest(cfg.train_manifest);
    data::DatasetManifest test_m;
    data::DatasetManifest use_train = train_m;
    if (!cfg.test_manifest.empty()) {
        test_m = data::load_manifest(cfg.test_manifest);
    } else {
        const auto split = data::split_dataset(train_m, {cfg.train_fraction, cfg.seed});
        use_train = split.train;
        test_m = split.test;
    }
    d.train = load_split(use_train, cfg, d.errors);
    if (cfg.eval_split == "train") d.test = d.train;
    else d.test = test_m.size() ? load_split(test_m, cfg, d.errors) : d.train;
    return d;
}

TrainSummary train(const RunConfig& cfg, const fs::path& run_dir) {
    cfg.validate();
    RunManifest manifest(run_dir);
    write_text(run_dir / "config.txt", cfg.to_text());
    manifest.add(run_dir / "config.txt", "config");

    const Datasets data = load_datasets(cfg);
    if (!data.errors.empty())
        std::clog << "warning: " << data.errors.size() << " dataset entries skipped (first: " << data.errors.front().path
                  << ": " << data.errors.front().message << ")\n";
    const auto provider = material::make_provider(cfg.material);

    training::TrainConfig tc;
    tc.lr = cfg.learning_rate;
    tc.weight_decay = cfg.weight_decay;
    tc.lambda_mat = cfg.lambda_mat;
    tc.rec_weight = cfg.rec_weight;
    tc.modules = cfg.trainable_modules();
    tc.validate();

    const fs::path log_path = run_dir / "train_log.jsonl";
    const fs::path ckpt_dir = run_dir / "checkpoints";
    std::unique_ptr<PhysHdrModel> model;
    std::optional<checkpoint::OptimizerState> opt_state;
    int start_epoch = 0;
    std::int64_t step = 0;

    if (!cfg.resume.empty()) {
        auto c = checkpoint::load(cfg.resume);
        if (json(c.model->config()) != json(cfg.model_config()))
            throw ConfigError("resume: checkpoint model config differs from the run configuration");
        model = std::move(c.model);
        opt_state = std::move(c.optimizer);
        start_epoch = c.meta.value("epoch", 0);
        step = c.meta.value("step", std::int64_t{0});
        if (!opt_state) throw CheckpointError("resume: checkpoint has no optimizer state");
        truncate_log(log_path, step);
    } else {
        std::ofstream(log_path, std::ios::trunc);
        model = std::make_unique<PhysHdrModel>(cfg.model_config(), cfg.seed);
        if (cfg.vae_steps > 0) {
            const fs::path vae_log = run_dir / "vae_log.jsonl";
            std::ofstream(vae_log, std::ios::trunc);
            nn::AdamW vopt(model->trainable({prefix::hdr_encoder, prefix::decoder}),
                           {cfg.vae_learning_rate, 0.9, 0.999, 1e-8, 0.0});
            const std::size_t n = data.train.size();
            const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
            for (int s = 0; s < cfg.vae_steps; ++s) {
                const auto order = data::shuffled_indices(n, mix_seed(cfg.seed, 7000000 + s));
                const auto batch = training::make_batch(*model, pick(data.train, order, 0, bs), *provider);
                const double l = training::vae_step(*model, vopt, batch);
                append_line(vae_log, {{"step", s + 1}, {"L_rec", l}});
            }
            manifest.add(vae_log, "log");
        }
        model->freeze_ldr_encoder();
    }
    manifest.add(log_path, "log");

    nn::AdamW opt(model->trainable(tc.modules), {tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
    if (opt_state) {
        checkpoint::restore(opt, *opt_state);
        opt.set_lr(tc.lr);
    }

    TrainSummary summary;
    auto save = [&](const fs::path& path, int epoch) {
        checkpoint::save(path, *model, &opt, {{"epoch", epoch}, {"step", step}, {"seed", cfg.seed}, {"config", cfg.to_text()}});
        manifest.add(path, "checkpoint");
    };

    const std::size_t n = data.train.size();
    const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
    bool first = true;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto order = data::shuffled_indices(n, mix_seed(cfg.seed, 1000000 + epoch));
        for (std::size_t b = 0; b < n; b += bs) {
            const auto batch = training::make_batch(*model, pick(data.train, order, b, std::min(n, b + bs)), *provider);
            ++step;
            const auto r = training::training_step(*model, opt, batch, tc, *provider, mix_seed(cfg.seed, step));
            append_line(log_path, {{"epoch", epoch + 1},
                                   {"step", step},
                                   {"L_d", r.l_d},
                                   {"L_mat", r.l_mat},
                                   {"L_full", r.l_full},
                                   {"L_rec", r.l_rec},
                                   {"grad_norm", r.grad_norm}});
            if (first) summary.first_l_full = r.l_full;
            first = false;
            summary.last_l_full = r.l_full;
            if (step % 100 == 0)
                std::clog << "epoch " << epoch + 1 << " step " << step << " L_full " << r.l_full << '\n';
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
            save(ckpt_dir / ("epoch_" + std::to_string(epoch + 1) + ".phck"), epoch + 1);
    }
    summary.checkpoint = run_dir / "model.phck";
    save(summary.checkpoint, std::max(cfg.epochs, start_epoch));
    summary.steps = step;
    summary.epochs = cfg.epochs;
    return summary;
}

void infer(const fs::path& checkpoint, const fs::path& ldr_path, const fs::path& out, int steps, std::uint64_t seed) {
    const auto c = checkpoint::load(checkpoint);
    if (!fs::exists(ldr_path)) throw IoError("LDR input " + ldr_path.string() + " does not exist");
    const LdrImage ldr = read_png(ldr_path);
    const HdrImage hdr = c.model->sample(ldr, steps, seed);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    RunManifest manifest(dir);
    write_rgbe_file(hdr, out);
    fs::path png = out;
    png.replace_extension(".png");
    write_png(reinhard_display(hdr), png);
    manifest.add(out, "hdr");
    manifest.add(png, "display");
}

metrics::MetricReport evaluate_model(const PhysHdrModel& model, const std::vector<data::Sample>& samples, int steps,
                                     std::uint64_t seed, const metrics::MetricConfig& mcfg, int batch_size) {
    if (samples.empty()) throw EvaluationError("evaluate: no samples");
    std::vector<metrics::Pair> pairs;
    const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
    for (std::size_t b = 0; b < samples.size(); b += bs) {
        std::vector<LdrImage> ldrs;
        const std::size_t end = std::min(samples.size(), b + bs);
        for (std::size_t i = b; i < end; ++i) ldrs.push_back(samples[i].ldr);
        const nn::Tensor out = model.sample(nn::to_tensor(ldrs), steps, mix_seed(seed, b));
        for (std::size_t i = b; i < end; ++i)
            pairs.push_back({samples[i].id, samples[i].hdr, nn::to_image(out, static_cast<int>(i - b))});
    }
    return metrics::evaluate(std::move(pairs), mcfg);
}

metrics::MetricReport eval(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& report_dir,
                           const RunConfig& cfg) {
    const auto c = checkpoint::load(checkpoint);
    RunConfig rc = cfg;
    rc.image_size = c.model->config().image_size;
    std::vector<data::EntryError> errors;
    const auto samples = load_split(data::load_manifest(manifest_path), rc, errors);
    const auto report =
        evaluate_model(*c.model, samples, cfg.sample_steps, cfg.sample_seed, cfg.metric_config(), cfg.batch_size);
    RunManifest manifest(report_dir);
    report.write_csv(report_dir / "metrics.csv");
    report.write_json(report_dir / "metrics.json");
    manifest.add(report_dir / "metrics.csv", "report");
    manifest.add(report_dir / "metrics.json", "report");
    return report;
}

} // namespace physhdr::app
