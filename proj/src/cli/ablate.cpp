#include <fstream>
#include <iostream>
#include <sstream>

#include "physhdr/app.hpp"
#include "physhdr/checkpoint.hpp"
#include "physhdr/error.hpp"
#include "physhdr/hdr_io.hpp"

namespace physhdr::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Plan {
    std::string label;
    std::string group;
    std::string slug;
    RunConfig cfg;
};

std::vector<Plan> plan_rows(const RunConfig& base) {
    const std::vector<std::string> slugs{"baseline", "clip", "l_dep", "l_ill", "l_dep_fused_l_ill", "l_emb"};
    std::vector<Plan> out;
    const auto& rows = encoders::ladder();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        RunConfig c = base;
        c.set("ablation_row", rows[i].first);
        if (base.ladder_epochs > 0) c.epochs = base.ladder_epochs;
        out.push_back({rows[i].first, "ladder", slugs[i], c});
    }
    for (double lambda : {0.0, 0.2}) {
        RunConfig c = base;
        c.set("ablation_row", rows.back().first);
        c.lambda_mat = lambda;
        out.push_back({lambda == 0.0 ? kLossRowLd : kLossRowFull, "loss", lambda == 0.0 ? "loss_ld" : "loss_ld_lmat", c});
    }
    return out;
}

std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

} // namespace

std::vector<AblationRow> ablate(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (cfg.preset == "full") std::clog << "warning: ablating the full preset trains eight full-scale models\n";
    RunManifest manifest(out_dir);
    std::vector<AblationRow> rows;
    const auto plans = plan_rows(cfg);
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const Plan& p = plans[i];
        const fs::path dir = out_dir / "rows" / (std::to_string(i) + "_" + p.slug);
        fs::create_directories(dir);
        {
            std::ofstream snap(dir / "config.txt");
            snap << p.cfg.to_text();
        }
        manifest.add(dir / "config.txt", "config");
        AblationRow row{p.label, p.group, std::nullopt, ""};
        std::clog << "ablation row " << i + 1 << "/" << plans.size() << ": " << p.label << '\n';
        try {
            const auto summary = train(p.cfg, dir);
            manifest.add(summary.checkpoint, "checkpoint");
            const auto c = checkpoint::load(summary.checkpoint);
            const auto data = load_datasets(p.cfg);
            auto report = evaluate_model(*c.model, data.test, p.cfg.sample_steps, p.cfg.sample_seed,
                                         p.cfg.metric_config(), p.cfg.batch_size);
            report.write_csv(dir / "metrics.csv");
            report.write_json(dir / "metrics.json");
            manifest.add(dir / "metrics.csv", "report");
            manifest.add(dir / "metrics.json", "report");
            if (report.ok_count == 0) row.error = "every evaluation pair failed";
            row.report = std::move(report);
        } catch (const std::exception& e) {
            row.error = e.what();
            std::clog << "ablation row " << p.label << " failed: " << e.what() << '\n';
        }
        rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    csv << "label,group,psnr_db,ssim,perceptual,vdp_q,error\n";
    json table = json::array();
    for (const auto& r : rows) {
        csv << csv_field(r.label) << ',' << r.group;
        json j = {{"label", r.label}, {"group", r.group}};
        if (r.report && r.report->ok_count > 0) {
            const auto& m = *r.report;
            csv << ',' << csv_number(m.psnr_db.mean) << ',' << csv_number(m.ssim.mean) << ','
                << csv_number(m.perceptual.mean) << ',' << csv_number(m.vdp_q.mean);
            j["psnr_db"] = m.psnr_db.mean;
            j["ssim"] = m.ssim.mean;
            j["perceptual"] = m.perceptual.mean;
            j["vdp_q"] = m.vdp_q.mean;
            j["psnr_db_std"] = m.psnr_db.std;
            j["ssim_std"] = m.ssim.std;
            j["perceptual_std"] = m.perceptual.std;
            j["vdp_q_std"] = m.vdp_q.std;
            j["pairs"] = m.ok_count;
        } else {
            csv << ",,,,";
        }
        csv << ',' << csv_field(r.error) << '\n';
        if (!r.error.empty()) j["error"] = r.error;
        table.push_back(j);
    }
    std::string vdp_label, perceptual_label;
    for (const auto& r : rows)
        if (r.report) {
            vdp_label = r.report->vdp_label;
            perceptual_label = r.report->perceptual_label;
        }
    {
        std::ofstream out(out_dir / "ablation.csv");
        out << csv.str();
        std::ofstream js(out_dir / "ablation.json");
        js << json{{"rows", table}, {"providers", {{"perceptual", perceptual_label}, {"vdp", vdp_label}}}}.dump(2)
           << '\n';
    }
    manifest.add(out_dir / "ablation.csv", "report");
    manifest.add(out_dir / "ablation.json", "report");
    return rows;
}

data::DatasetManifest synth_data(const fs::path& hdr_dir, const fs::path& out_manifest, const SynthOptions& opt) {
    if (!(opt.base_exposure > 0.0)) throw ConfigError("synth-data: exposure must be > 0");
    fs::create_directories(hdr_dir);
    for (int i = 0; i < opt.generate; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d.hdr", i);
        write_rgbe_file(data::synthetic_scene(mix_seed(opt.seed, i), opt.size, opt.size), hdr_dir / name);
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(hdr_dir))
        if (e.is_regular_file() && e.path().extension() == ".hdr") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("synth-data: no .hdr files under " + hdr_dir.string());

    const fs::path root = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
    fs::create_directories(root / "ldr");
    RunManifest manifest(root);
    data::DatasetManifest m;
    m.name = out_manifest.stem().string();
    m.root = root;
    for (const auto& f : files) {
        const auto norm = normalize_radiance(read_rgbe_file(f));
        const LdrImage base = data::simulate_ldr(norm.image, opt.base_exposure);
        const std::string hdr_rel = fs::relative(f, root).generic_string();
        const std::string stem = f.stem().string();
        if (opt.exposures.empty()) {
            const fs::path out = root / "ldr" / (stem + ".png");
            write_png(base, out);
            m.entries.push_back({fs::relative(out, root).generic_string(), hdr_rel, std::nullopt});
            continue;
        }
        for (std::size_t k = 0; k < opt.exposures.size(); ++k) {
            const fs::path out = root / "ldr" / (stem + "_e" + std::to_string(k) + ".png");
            write_png(data::synth_exposure(base, opt.exposures[k]), out);
            m.entries.push_back({fs::relative(out, root).generic_string(), hdr_rel, opt.exposures[k].to_string()});
        }
    }
    data::save_manifest(m, out_manifest);
    manifest.add(out_manifest, "manifest");
    return m;
}

} // namespace physhdr::app
