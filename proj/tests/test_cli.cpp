#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "physhdr/app.hpp"
#include "physhdr/error.hpp"
#include "physhdr/hdr_io.hpp"
#include "test_util.hpp"

using namespace physhdr;
using app::RunConfig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<json> jsonl(const fs::path& p) {
    std::vector<json> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(json::parse(line));
    return rows;
}

// Small enough to train a few steps in well under a second.
RunConfig tiny_run() {
    RunConfig c = RunConfig::desk();
    for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
             {"image_size", "16"}, {"vae_base", "2"}, {"unet_base", "4"}, {"unet_mult", "1,1"}, {"cond_grid", "2"},
             {"cond_k", "2"}, {"cond_patch", "1"}, {"d_embed", "4"}, {"synthetic_count", "3"}, {"epochs", "3"},
             {"batch_size", "2"}, {"vae_steps", "2"}, {"checkpoint_every", "1"}, {"sample_steps", "3"},
             {"eval_split", "train"}, {"seed", "4"}})
        c.set(k, v);
    c.validate();
    return c;
}

} // namespace

TEST_CASE("full preset carries the full-scale training constants") {
    const RunConfig c = RunConfig::full();
    CHECK(c.epochs == 200);
    CHECK(c.batch_size == 10);
    CHECK(c.learning_rate == 1e-5);
    CHECK(c.lambda_mat == 0.2);
    CHECK(c.timesteps == 1000);
    CHECK(c.image_size == 512);
    CHECK(c.train_fraction == 0.8);
    CHECK(c.ablation_row == "+l_emb");
    const ModelConfig m = c.model_config();
    CHECK(json(m) == json(ModelConfig::full()));
    CHECK(m.schedule.beta_start == 1e-4);
    CHECK(m.schedule.beta_end == 2e-2);
    CHECK_NOTHROW(c.validate());
    CHECK(RunConfig::preset_named("full").to_text() == c.to_text());
}

TEST_CASE("desk preset validates and matches the desk model") {
    const RunConfig c = RunConfig::desk();
    CHECK_NOTHROW(c.validate());
    CHECK(c.image_size == 64);
    CHECK(c.lambda_mat == 0.2);
    CHECK(json(c.model_config()) == json(ModelConfig::desk()));
    CHECK_THROWS_AS(RunConfig::preset_named("huge"), ConfigError);
}

TEST_CASE("to_text round trips through the parser") {
    RunConfig a = RunConfig::desk();
    a.set("learning_rate", "3.5e-4");
    a.set("train_manifest", "data/train.txt");
    a.set("ablation_row", "+l_dep");
    RunConfig b = RunConfig::full();
    for (const auto& [k, v] : app::parse_config_text(a.to_text())) b.set(k, v);
    CHECK(b.items() == a.items());
    CHECK(b.to_text() == a.to_text());
}

TEST_CASE("config parser reports the offending line or key") {
    const auto ok = app::parse_config_text("# comment\n\nepochs = 5  \n  lambda_mat=0.1\n");
    REQUIRE(ok.size() == 2);
    CHECK(ok[0] == std::pair<std::string, std::string>{"epochs", "5"});
    CHECK(ok[1] == std::pair<std::string, std::string>{"lambda_mat", "0.1"});

    auto message = [](const std::string& text) {
        try {
            app::parse_config_text(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("epochs = 1\nnot a pair\n").find("line 2") != std::string::npos);
    CHECK(message("epochs = 1\nepochs = 2\n").find("duplicate key 'epochs'") != std::string::npos);
    CHECK(message("epoch = 1\n").find("unknown key 'epoch'") != std::string::npos);

    RunConfig c;
    CHECK_THROWS_WITH_AS(c.set("batch_size", "ten"), doctest::Contains("batch_size"), ConfigError);
    CHECK_THROWS_WITH_AS(c.set("batch_size", "10x"), doctest::Contains("batch_size"), ConfigError);
    CHECK_THROWS_WITH_AS(c.set("use_depth", "maybe"), doctest::Contains("use_depth"), ConfigError);
    CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
    c.batch_size = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_size"), ConfigError);
}

TEST_CASE("ablation_row drives the conditioning flags") {
    RunConfig c = RunConfig::desk();
    c.set("ablation_row", "baseline");
    CHECK_FALSE((c.use_clip_of_ldr || c.use_depth || c.use_illum || c.use_fusion || c.use_emb));
    c.set("ablation_row", "+l_dep⊕l_ill");
    CHECK(c.use_clip_of_ldr);
    CHECK(c.use_depth);
    CHECK(c.use_illum);
    CHECK(c.use_fusion);
    CHECK_FALSE(c.use_emb);
    CHECK_THROWS_AS(c.set("ablation_row", "+everything"), ConfigError);

    // a hand-edited flag without switching to custom is rejected
    c.set("use_emb", "true");
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("ablation_row"), ConfigError);
    c.set("ablation_row", "custom");
    c.set("use_emb", "true");
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("resolve_config applies preset, file, then flags") {
    testing::TempDir dir("cfg");
    {
        std::ofstream f(dir / "run.cfg");
        f << "preset = full\nepochs = 7\nlambda_mat = 0.5\n";
    }
    const RunConfig a = app::resolve_config(dir / "run.cfg", {{"lambda_mat", "0"}});
    CHECK(a.preset == "full");
    CHECK(a.image_size == 512);
    CHECK(a.epochs == 7);
    CHECK(a.lambda_mat == 0.0);

    const RunConfig b = app::resolve_config(dir / "run.cfg", {{"preset", "desk"}});
    CHECK(b.image_size == 64);
    CHECK(b.epochs == 7);

    CHECK(app::resolve_config(std::nullopt, {}).to_text() == RunConfig::desk().to_text());
    CHECK_THROWS_AS(app::resolve_config(dir / "missing.cfg", {}), IoError);
    CHECK_THROWS_WITH_AS(app::resolve_config(std::nullopt, {{"sample_steps", "5000"}}),
                         doctest::Contains("sample_steps"), ConfigError);
}

TEST_CASE("procedural datasets split deterministically") {
    RunConfig c = tiny_run();
    c.synthetic_count = 10;
    c.eval_split = "test";
    const auto a = app::load_datasets(c);
    const auto b = app::load_datasets(c);
    CHECK(a.train.size() == 8);
    CHECK(a.test.size() == 2);
    std::set<std::string> ids;
    for (const auto& s : a.train) ids.insert(s.id);
    for (const auto& s : a.test) CHECK(ids.count(s.id) == 0);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);
    CHECK(a.train[0].hdr.height() == 16);

    c.eval_split = "train";
    const auto t = app::load_datasets(c);
    CHECK(t.train.size() == 10);
    CHECK(t.test.size() == 10);
}

TEST_CASE("synth-data writes LDRs, exposure variants and a manifest") {
    testing::TempDir dir("synth");
    app::SynthOptions opt;
    opt.generate = 2;
    opt.size = 16;
    opt.exposures = {data::ExposureParams::parse("0.5"), data::ExposureParams::parse("2:1.2")};
    const auto m = app::synth_data(dir / "hdr", dir / "set" / "m.txt", opt);
    REQUIRE(m.size() == 4);
    CHECK(m.entries[1].exposure_tag == opt.exposures[1].to_string());
    CHECK(fs::exists(dir / "set" / m.entries[0].ldr));
    const auto back = data::load_manifest(dir / "set" / "m.txt");
    CHECK(back.size() == 4);
    CHECK(back.entries[3].hdr == m.entries[3].hdr);
    CHECK_THROWS_AS(app::synth_data(dir / "empty", dir / "x.txt", {}), IoError);
}

TEST_CASE("train, resume, infer and eval on a tiny run") {
    testing::TempDir dir("run");
    const RunConfig cfg = tiny_run();
    const auto s = app::train(cfg, dir / "r");
    CHECK(s.steps == 6);
    CHECK(std::isfinite(s.last_l_full));
    for (const char* f : {"config.txt", "train_log.jsonl", "vae_log.jsonl", "model.phck", "run_manifest.json",
                          "checkpoints/epoch_1.phck", "checkpoints/epoch_2.phck"})
        CHECK_MESSAGE(fs::exists(dir / "r" / f), f);
    CHECK_FALSE(fs::exists(dir / "r" / "checkpoints" / "epoch_3.phck"));
    const auto log = jsonl(dir / "r" / "train_log.jsonl");
    REQUIRE(log.size() == 6);
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].at("step") == static_cast<int>(i + 1));
        for (const char* k : {"L_d", "L_mat", "L_full", "L_rec", "grad_norm"}) CHECK(log[i].contains(k));
        CHECK(log[i].at("L_full").get<double>() ==
              doctest::Approx(log[i].at("L_d").get<double>() + 0.2 * log[i].at("L_mat").get<double>()));
    }
    const json files = json::parse(slurp(dir / "r" / "run_manifest.json")).at("files");
    std::set<std::string> listed;
    for (const auto& f : files) listed.insert(f.at("path"));
    CHECK(listed.size() == files.size());
    CHECK(listed.count("model.phck") == 1);

    SUBCASE("resume in place reproduces the log and drops rows past the checkpoint") {
        const std::string before = slurp(dir / "r" / "train_log.jsonl");
        {
            std::ofstream extra(dir / "r" / "train_log.jsonl", std::ios::app);
            extra << "{\"step\": 99, \"L_full\": 0}\n{\"step\": 10";  // stale row and a torn write
        }
        RunConfig r = cfg;
        r.resume = (dir / "r" / "checkpoints" / "epoch_1.phck").string();
        const auto s2 = app::train(r, dir / "r");
        CHECK(s2.steps == 6);
        CHECK(slurp(dir / "r" / "train_log.jsonl") == before);
    }

    SUBCASE("resume rejects a different model") {
        RunConfig r = cfg;
        r.resume = (dir / "r" / "model.phck").string();
        r.unet_base = 8;
        CHECK_THROWS_AS(app::train(r, dir / "r2"), ConfigError);
    }

    SUBCASE("infer is deterministic per seed") {
        const auto ldr = app::load_datasets(cfg).train.front().ldr;
        write_png(ldr, dir / "in.png");
        app::infer(dir / "r" / "model.phck", dir / "in.png", dir / "a.hdr", 3, 9);
        app::infer(dir / "r" / "model.phck", dir / "in.png", dir / "b.hdr", 3, 9);
        app::infer(dir / "r" / "model.phck", dir / "in.png", dir / "c.hdr", 3, 10);
        CHECK(slurp(dir / "a.hdr") == slurp(dir / "b.hdr"));
        CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
        CHECK(slurp(dir / "a.hdr") != slurp(dir / "c.hdr"));
        CHECK_THROWS_AS(app::infer(dir / "r" / "model.phck", dir / "none.png", dir / "d.hdr", 3, 9), IoError);
    }

    SUBCASE("eval writes both report formats") {
        app::SynthOptions opt;
        opt.generate = 2;
        opt.size = 16;
        app::synth_data(dir / "hdr", dir / "set" / "m.txt", opt);
        const auto rep = app::eval(dir / "r" / "model.phck", dir / "set" / "m.txt", dir / "rep", cfg);
        CHECK(rep.ok_count == 2);
        CHECK(slurp(dir / "rep" / "metrics.csv").rfind("id,psnr_db,ssim,perceptual,vdp_q\n", 0) == 0);
        const json j = json::parse(slurp(dir / "rep" / "metrics.json"));
        CHECK(j.at("rows").size() == 2);
    }
}

TEST_CASE("ablate emits six ladder rows and the loss pair with config snapshots") {
    testing::TempDir dir("ablate");
    RunConfig cfg = tiny_run();
    cfg.epochs = 1;
    cfg.ladder_epochs = 1;
    cfg.vae_steps = 0;
    cfg.checkpoint_every = 0;
    const auto rows = app::ablate(cfg, dir / "a");
    REQUIRE(rows.size() == 8);
    const std::vector<std::string> labels{"baseline",     "+CLIP",  "+l_dep",        "+l_ill",
                                          "+l_dep⊕l_ill", "+l_emb", app::kLossRowLd, app::kLossRowFull};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].label == labels[i]);
        CHECK(rows[i].group == (i < 6 ? "ladder" : "loss"));
        CHECK_MESSAGE(rows[i].error.empty(), rows[i].error);
        REQUIRE(rows[i].report.has_value());
    }
    const auto csv = slurp(dir / "a" / "ablation.csv");
    CHECK(csv.rfind("label,group,psnr_db,ssim,perceptual,vdp_q,error\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    CHECK(json::parse(slurp(dir / "a" / "ablation.json")).at("rows").size() == 8);

    std::set<std::string> row_dirs;
    for (const auto& e : fs::directory_iterator(dir / "a" / "rows")) row_dirs.insert(e.path().filename().string());
    CHECK(row_dirs.size() == 8);
    RunConfig loss_ld;
    for (const auto& [k, v] : app::read_config_file(dir / "a" / "rows" / "6_loss_ld" / "config.txt")) loss_ld.set(k, v);
    CHECK(loss_ld.lambda_mat == 0.0);
    CHECK(loss_ld.ablation_row == "+l_emb");
    RunConfig baseline;
    for (const auto& [k, v] : app::read_config_file(dir / "a" / "rows" / "0_baseline" / "config.txt")) baseline.set(k, v);
    CHECK(baseline.ablation_row == "baseline");
    CHECK_FALSE(baseline.use_depth);
}
