#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "physhdr/app.hpp"
#include "physhdr/error.hpp"

using namespace physhdr;

namespace {

struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "key = value config file");
        for (const auto& key : app::RunConfig::keys())
            options[key] = cmd->add_option("--" + key, values[key])->group("Config keys");
    }

    app::RunConfig resolve() const {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& key : app::RunConfig::keys())
            if (options.at(key)->count() > 0) overrides.emplace_back(key, values.at(key));
        std::optional<std::filesystem::path> f;
        if (!file.empty()) f = file;
        return app::resolve_config(f, overrides);
    }
};

void print_report(const metrics::MetricReport& r) {
    std::cout << "pairs " << r.ok_count << " ok, " << r.failed_count << " failed\n"
              << "psnr_db " << r.psnr_db.mean << " +- " << r.psnr_db.std << "\n"
              << "ssim " << r.ssim.mean << " +- " << r.ssim.std << "\n"
              << "perceptual " << r.perceptual.mean << " +- " << r.perceptual.std << "\n"
              << "vdp_q " << r.vdp_q.mean << " +- " << r.vdp_q.std << " [" << r.vdp_label << "]\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Single-image HDR reconstruction with a conditioned latent diffusion model"};
    cli.require_subcommand(1);

    auto* train = cli.add_subcommand("train", "Train a model into a run directory");
    ConfigFlags train_cfg;
    train_cfg.attach(train);
    std::string run_dir;
    train->add_option("--run-dir", run_dir, "Output directory")->required();

    auto* infer = cli.add_subcommand("infer", "Reconstruct HDR from one LDR PNG");
    std::string ckpt, input, output;
    int steps = 50;
    std::uint64_t seed = 0;
    infer->add_option("--checkpoint", ckpt)->required();
    infer->add_option("--input", input, "LDR PNG")->required();
    infer->add_option("--output", output, "RGBE output; a Reinhard PNG is written next to it")->required();
    infer->add_option("--steps", steps, "Sampling steps")->capture_default_str();
    infer->add_option("--seed", seed)->capture_default_str();

    auto* eval = cli.add_subcommand("eval", "Sample a test manifest and write metric reports");
    ConfigFlags eval_cfg;
    eval_cfg.attach(eval);
    std::string eval_ckpt, eval_manifest, report_dir;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--manifest", eval_manifest)->required();
    eval->add_option("--report-dir", report_dir)->required();

    auto* ablate = cli.add_subcommand("ablate", "Train and evaluate the conditioning ladder and the loss pair");
    ConfigFlags ablate_cfg;
    ablate_cfg.attach(ablate);
    std::string out_dir;
    ablate->add_option("--out-dir", out_dir)->required();

    auto* synth = cli.add_subcommand("synth-data", "Simulate LDR inputs for a folder of HDR images");
    std::string hdr_dir, manifest_out;
    std::vector<std::string> variants;
    app::SynthOptions synth_opt;
    synth->add_option("--hdr-dir", hdr_dir)->required();
    synth->add_option("--manifest", manifest_out, "Manifest to write; LDRs go to ldr/ beside it")->required();
    synth->add_option("--exposure", synth_opt.base_exposure, "Camera exposure")->capture_default_str();
    synth->add_option("--variants", variants, "Extra exposures as alpha[:beta]");
    synth->add_option("--generate", synth_opt.generate, "Write this many procedural scenes first");
    synth->add_option("--size", synth_opt.size, "Procedural scene size")->capture_default_str();
    synth->add_option("--seed", synth_opt.seed)->capture_default_str();

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorCategory::Config);
    }

    try {
        if (*train) {
            const auto s = app::train(train_cfg.resolve(), run_dir);
            std::cout << "trained " << s.steps << " steps, L_full " << s.first_l_full << " -> " << s.last_l_full
                      << "\ncheckpoint " << s.checkpoint.string() << "\n";
        } else if (*infer) {
            app::infer(ckpt, input, output, steps, seed);
            std::cout << "wrote " << output << "\n";
        } else if (*eval) {
            print_report(app::eval(eval_ckpt, eval_manifest, report_dir, eval_cfg.resolve()));
        } else if (*ablate) {
            const auto rows = app::ablate(ablate_cfg.resolve(), out_dir);
            for (const auto& r : rows) {
                std::cout << r.label << ": ";
                if (r.report && r.report->ok_count > 0)
                    std::cout << "psnr " << r.report->psnr_db.mean << " ssim " << r.report->ssim.mean
                              << " perceptual " << r.report->perceptual.mean << " vdp " << r.report->vdp_q.mean;
                else
                    std::cout << "failed: " << r.error;
                std::cout << "\n";
            }
        } else if (*synth) {
            for (const auto& v : variants) synth_opt.exposures.push_back(data::ExposureParams::parse(v));
            const auto m = app::synth_data(hdr_dir, manifest_out, synth_opt);
            std::cout << "wrote " << m.size() << " entries to " << manifest_out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
