#include "doctest.h"
#include "helpers.hpp"
#include "mf/pipeline.hpp"
#include "mf/synth.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace mf;
namespace fs = std::filesystem;

namespace {

// Small synthetic run: the default plant with fewer personas and templates.
fs::path tiny_run(const std::string& name, const std::string& extra = "") {
    const auto dir = mf::test::scratch(name);
    write_file(dir / "plant.json", plant_spec_to_json(default_plant_spec()));
    write_file(dir / "run.json", R"({"plant_spec": "plant.json", "output_dir": "out", "seed": 3,
        "personas": 150, "templates": 2, "survey_size": 3000, "model_tag": "tiny")" + extra + "}");
    return dir;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    return out;
}

int run_cli(const std::string& args, std::string* err = nullptr) {
    const auto log = fs::temp_directory_path() / "mf_cli_stderr.txt";
    const std::string cmd = std::string(MF_CLI) + " " + args + " > /dev/null 2> " + log.string();
    const int rc = std::system(cmd.c_str());
    if (err) *err = read_file(log);
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("run config parsing, defaults and hashing") {
    const auto c = RunConfig::parse(R"({"model": "m.mfw", "tokenizer": "t.json", "country": "c.json"})", "/base");
    CHECK(c.seed == 7);
    CHECK(c.templates == 10);
    CHECK(c.entropy_threshold == 0.85);
    CHECK(c.fence == 2.5);
    CHECK(c.latent.floor == FloorRule::persona_min);
    CHECK(c.model_path() == fs::path("/base/m.mfw"));
    CHECK_THROWS_AS(c.survey_path(), InputError);

    auto moved = c;
    moved.output_dir = "elsewhere";
    moved.workers = 8;
    CHECK(moved.hash() == c.hash());
    moved.seed = 8;
    CHECK(moved.hash() != c.hash());

    CHECK_THROWS_AS(RunConfig::parse(R"({"model": "m", "norm": "zscore"})", "."), InputError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"model": "m", "personas": 0})", "."), InputError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"seed": 1})", "."), InputError);
    CHECK_THROWS_AS(RunConfig::parse("{", "."), InputError);
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.json"), InputError);
    CHECK(slug("CDU/CSU") == "CDU_CSU");
}

TEST_CASE("stages compose on synthetic outputs") {
    const auto dir = tiny_run("compose");
    auto cfg = RunConfig::load(dir / "run.json");
    cfg.output_dir = cfg.resolve(cfg.output_dir);
    cmd_synth(cfg);
    CHECK(load_model(cfg.stage_dir("synth") / "model.mfw").config().num_layers == 4);
    // The ground-truth file equals the generator table exactly.
    CHECK(read_file(cfg.stage_dir("synth") / "truth.csv") == distributions_to_csv(truth_tables([&] {
              auto s = default_plant_spec();
              s.seed = 3;
              return s;
          }())));

    cmd_probe(cfg);
    const auto metrics = read_csv(cfg.stage_dir("probes") / "metrics.csv");
    REQUIRE(metrics.rows.size() == 6);
    for (const auto& r : metrics.rows) CHECK(std::stod(r[metrics.column("f1")]) >= 0.96);

    cmd_select(cfg);
    const auto plant = read_file(cfg.stage_dir("synth") / "plant.json");
    for (const char* party : {"Aurora", "Bastion", "Cascade"}) {
        const auto sel = selection_from_json(read_file(cfg.stage_dir("selection") / ("selection_" + std::string(party) + ".json")));
        CHECK(sel.aligned.size() == 2);
        CHECK(sel.diametric.size() == 1);
    }
    cmd_forecast(cfg);
    for (const auto& t : distributions_from_csv(read_file(cfg.stage_dir("forecast") / "distributions.csv")))
        for (const auto& row : t.rows) {
            double s = 0;
            for (double v : row) s += v;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    cmd_evaluate(cfg);
    for (const char* f : {"distances.csv", "win_rates.csv", "entropy.csv", "gate.csv", "win_rates.svg", "summary.json",
                          "truth_errors.csv", "meta.json"})
        CHECK(fs::exists(cfg.stage_dir("evaluate") / f));
    const auto meta = read_file(cfg.stage_dir("evaluate") / "meta.json");
    CHECK(meta.find(cfg.hash()) != std::string::npos);
    CHECK(meta.find("\"seed\": 3") != std::string::npos);
}

TEST_CASE("J=1 and an empty selection") {
    const auto dir = tiny_run("j1", R"(, "fence": 1000.0)");
    auto cfg = RunConfig::load(dir / "run.json");
    cfg.output_dir = cfg.resolve(cfg.output_dir);
    cfg.templates = 1;
    cmd_synth(cfg);
    cmd_probe(cfg);
    cmd_select(cfg);
    const auto sel = selection_from_json(read_file(cfg.stage_dir("selection") / "selection_Aurora.json"));
    CHECK(sel.empty());
    CHECK_THROWS_AS(cmd_forecast(cfg), InputError);

    cfg.fence = 2.5;
    cmd_select(cfg);
    cmd_forecast(cfg);
    CHECK(read_file(cfg.stage_dir("forecast") / "personas.csv").size() > 0);
}

TEST_CASE("evaluate with no latent tables is an error") {
    const auto dir = tiny_run("norecords");
    auto cfg = RunConfig::load(dir / "run.json");
    cfg.output_dir = cfg.resolve(cfg.output_dir);
    cmd_synth(cfg);
    const auto country = load_country_config(cfg.country_path());
    std::vector<DistributionTable> only_prob;
    for (std::size_t k = 0; k < country.attributes.size(); ++k) {
        auto t = survey_distribution(cfg.survey_path(), country, k);
        t.source = Source::prob;
        only_prob.push_back(t);
    }
    write_file(cfg.stage_dir("forecast") / "distributions.csv", distributions_to_csv(only_prob));
    CHECK_THROWS_AS(cmd_evaluate(cfg), InputError);
}

TEST_CASE("latent equal to survey wins every cell") {
    const auto dir = tiny_run("perfect");
    auto cfg = RunConfig::load(dir / "run.json");
    cfg.output_dir = cfg.resolve(cfg.output_dir);
    cmd_synth(cfg);
    const auto country = load_country_config(cfg.country_path());
    std::vector<DistributionTable> tables;
    for (std::size_t k = 0; k < country.attributes.size(); ++k) {
        auto t = survey_distribution(cfg.survey_path(), country, k);
        t.source = Source::latent;
        tables.push_back(t);
        for (auto& row : t.rows) {
            std::fill(row.begin(), row.end(), 0.0);
            row[0] = 1.0;
        }
        t.source = Source::prob;
        tables.push_back(t);
    }
    write_file(cfg.stage_dir("forecast") / "distributions.csv", distributions_to_csv(tables));
    cmd_evaluate(cfg);
    const auto wr = read_csv(cfg.stage_dir("evaluate") / "win_rates.csv");
    CHECK(std::stod(wr.rows[0][wr.column("win_rate")]) == 1.0);
}

TEST_CASE("cli: exit codes and determinism") {
    const auto dir = tiny_run("cli");
    std::string err;
    const std::string probe_only = " --config " + (dir / "run.json").string() + " --out " + (dir / "p").string();
    REQUIRE(run_cli("synth" + probe_only) == 0);
    fs::remove(dir / "p" / "synth" / "probe_corpus.csv");
    CHECK(run_cli("probe" + probe_only, &err) == 2);
    CHECK(err.find((dir / "p" / "synth" / "probe_corpus.csv").string()) != std::string::npos);
    CHECK(run_cli("pipeline --config " + (dir / "missing.json").string()) == 2);
    CHECK(run_cli("pipeline --config " + (dir / "run.json").string() + " --norm zscore") == 2);
    CHECK(run_cli("frobnicate --config x") == 2);

    const std::string a = "pipeline --config " + (dir / "run.json").string() + " --out " + (dir / "a").string();
    const std::string b = "pipeline --config " + (dir / "run.json").string() + " --out " + (dir / "b").string() +
                          " --workers 3";
    REQUIRE(run_cli(a) == 0);
    REQUIRE(run_cli(b) == 0);
    const auto sa = snapshot(dir / "a"), sb = snapshot(dir / "b");
    CHECK(sa.size() == sb.size());
    for (const auto& [k, v] : sa) {
        CHECK_MESSAGE(sb.count(k), k);
        CHECK_MESSAGE((sb.count(k) && sb.at(k) == v), k);
    }
}
