#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "marl/checkpoint.hpp"
#include "marl/config.hpp"
#include "marl/harness.hpp"
#include "marl/metrics.hpp"
#include "marl/trainer.hpp"

using namespace marl;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "cannot read ", p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("marl_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Quick config used by the smoke-level harness tests.
std::string smoke_config(const std::string& out, const std::string& extra = "") {
    std::ostringstream os;
    os << "{\"allies\":2,\"enemies\":1,\"distractors\":1,\"episode_limit\":10,"
       << "\"batch_episodes\":2,\"buffer_capacity\":50,\"total_env_steps\":120,"
       << "\"eval_interval_episodes\":5,\"eval_episodes\":2,\"seeds\":[7],"
       << "\"mixer\":\"vdn\",\"out_dir\":\"" << out << "\"" << extra << "}";
    return os.str();
}

}  // namespace

TEST_CASE("parse_config: defaults, ranges, modes, unknown keys") {
    RunConfig def = parse_config_text("{}");
    CHECK(def.lambda == 1.0);
    CHECK(def.lr == 5e-4);
    CHECK(def.smoothing == 0.99);
    CHECK(def.gamma == 0.99);
    CHECK(def.epsilon.start == 1.0);
    CHECK(def.epsilon.end == 0.05);
    CHECK(def.epsilon.anneal_steps == 50000);
    CHECK(def.batch_episodes == 32);
    CHECK(def.target_sync_episodes == 200);
    CHECK(def.mixer == MixerKind::Monotonic);
    CHECK(def.ablation == AblationMode::S2RL);
    CHECK(def.seeds == std::vector<uint64_t>{0, 1, 2});

    CHECK_THROWS_AS(parse_config_text("{\"lambda\": -1}"), ValidationError);
    try {
        parse_config_text("{\"lambda\": -1, \"gamma\": 2, \"bogus\": 1}");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(e.fields.size() == 3);
        CHECK(e.fields[0].find("lambda") == 0);
        CHECK(e.fields[1].find("gamma") == 0);
        CHECK(e.fields[2].find("bogus") == 0);
    }

    RunConfig dense = parse_config_text("{\"mixer\":\"qmix\",\"ablation\":\"dense_only\"}");
    CHECK(dense.mixer == MixerKind::Monotonic);
    CHECK(dense.ablation == AblationMode::DenseOnly);
    CHECK(dense.lambda == 0.0);

    CHECK_THROWS_AS(parse_config_text("not json"), ParseError);
    CHECK_THROWS_AS(parse_config("/nonexistent/path.json"), FileNotFound);

    // resolved config round-trips
    RunConfig cfg = parse_config_text("{\"lambda\":0.5,\"seeds\":[9,10]}");
    RunConfig again = parse_config_text(resolved_config_json(cfg));
    CHECK(again.lambda == 0.5);
    CHECK(again.seeds == std::vector<uint64_t>{9, 10});
    CHECK(resolved_config_json(again) == resolved_config_json(cfg));
}

TEST_CASE("quartiles use linear interpolation between ranks") {
    Quartiles q = quartiles({3.0, 1.0, 2.0});
    CHECK(q.median == 2.0);
    CHECK(q.p25 == doctest::Approx(1.5));
    CHECK(q.p75 == doctest::Approx(2.5));
    q = quartiles({4.0});
    CHECK(q.median == 4.0);
    CHECK(q.p25 == 4.0);
}

TEST_CASE("metrics csv formatting is stable") {
    MetricsRow r;
    r.episode = 12;
    r.env_steps = 345;
    r.epsilon = 0.123456789123;
    r.test_win_rate = 1.0 / 3.0;
    const std::string line = metrics_csv_row(r);
    CHECK(line.substr(0, 7) == "12,345,");
    CHECK(line.find("0.123456789") != std::string::npos);
    CHECK(metrics_csv_header().find("wall_ms") == std::string::npos);
    CHECK(format_g9(0.0) == "0");
    CHECK(format_g9(2.0 / 3.0) == "0.666666667");
}

TEST_CASE("checkpoint round-trips bit exactly") {
    env::EnvConfig ecfg;
    ecfg.allies = 2;
    ecfg.enemies = 1;
    ecfg.distractors = 0;
    ecfg.episode_limit = 8;
    RunConfig cfg;
    cfg.env = ecfg;
    cfg.mixer = MixerKind::Monotonic;

    std::mt19937_64 rng(91);
    Learner L = Learner::init(learner_config(cfg), ecfg, rng);

    const fs::path dir = fresh_dir("ckpt");
    const std::string path = (dir / "model.bin").string();
    save_checkpoint(path, L, resolved_config_json(cfg));

    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.config.mixer == MixerKind::Monotonic);
    bool identical = true;
    int i = 0;
    L.agent.visit([&](const char*, const Tensor& t) {
        Tensor other;
        int j = 0;
        loaded.learner.agent.visit([&](const char*, const Tensor& u) {
            if (j == i) other = u.detached();
            ++j;
        });
        for (long k = 0; k < t.size(); ++k)
            if (t.data()[k] != other.data()[k]) identical = false;
        ++i;
    });
    CHECK(identical);

    // duplicated auxiliary mixer round-trips as well
    RunConfig cfg2 = cfg;
    cfg2.separate_aux_mixer = true;
    std::mt19937_64 rng2(17);
    Learner L2 = Learner::init(learner_config(cfg2), ecfg, rng2);
    const std::string path2 = (dir / "model_aux.bin").string();
    save_checkpoint(path2, L2, resolved_config_json(cfg2));
    LoadedCheckpoint loaded2 = load_checkpoint(path2);
    CHECK(loaded2.learner.cfg.separate_aux_mixer);
    CHECK(loaded2.learner.aux_mixer.kind == MixerKind::Monotonic);
    for (long k = 0; k < L2.aux_mixer.w1_w.size(); ++k)
        CHECK(loaded2.learner.aux_mixer.w1_w.data()[k] == L2.aux_mixer.w1_w.data()[k]);

    CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), FileNotFound);

    // corrupt the magic
    {
        std::ofstream bad((dir / "bad.bin").string(), std::ios::binary);
        bad << "NOTACKPT0000";
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "bad.bin").string()), CheckpointMismatch);
}

TEST_CASE("cmd_train smoke run: outputs, summary stats, byte determinism") {
    const fs::path dir = fresh_dir("train");
    RunConfig cfg = parse_config_text(smoke_config(dir.string()));
    CHECK(cmd_train(cfg, /*quiet=*/true) == 0);

    CHECK(fs::exists(dir / "config.json"));
    CHECK(fs::exists(dir / "7" / "metrics.csv"));
    CHECK(fs::exists(dir / "7" / "checkpoint.bin"));
    CHECK(fs::exists(dir / "summary.json"));

    const std::string metrics = read_file(dir / "7" / "metrics.csv");
    CHECK(metrics.find(metrics_csv_header()) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') >= 2);

    const std::string summary = read_file(dir / "summary.json");
    CHECK(summary.find("median") != std::string::npos);
    CHECK(summary.find("p25") != std::string::npos);
    CHECK(summary.find("p75") != std::string::npos);

    // rerun into a second directory: byte-identical metrics
    const fs::path dir2 = fresh_dir("train2");
    RunConfig cfg2 = parse_config_text(smoke_config(dir2.string()));
    CHECK(cmd_train(cfg2, true) == 0);
    CHECK(read_file(dir2 / "7" / "metrics.csv") == metrics);
}

TEST_CASE("inspect-attention dump obeys the weight invariants") {
    const fs::path dir = fresh_dir("inspect_src");
    RunConfig cfg = parse_config_text(smoke_config(dir.string()));
    REQUIRE(cmd_train(cfg, true) == 0);

    const fs::path out = fresh_dir("inspect_out");
    CHECK(cmd_inspect_attention((dir / "7" / "checkpoint.bin").string(), 3, 25, out.string(),
                                true) == 0);
    std::ifstream csv(out / "attention.csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "t,agent,entity,dense_weight,sparse_weight,entity_team,entity_distance");

    std::map<std::pair<long, int>, double> dense_sums, sparse_sums;
    std::string line;
    long rows = 0;
    while (std::getline(csv, line)) {
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        const long t = std::stol(field);
        std::getline(ls, field, ',');
        const int agent = std::stoi(field);
        std::getline(ls, field, ',');
        std::getline(ls, field, ',');
        const double dw = std::stod(field);
        std::getline(ls, field, ',');
        const double sw = std::stod(field);
        dense_sums[{t, agent}] += dw;
        sparse_sums[{t, agent}] += sw;
        CHECK(dw >= 0.0);
        CHECK(sw >= 0.0);
        ++rows;
    }
    CHECK(rows > 0);
    for (const auto& [key, sum] : dense_sums) CHECK(std::fabs(sum - 1.0) < 1e-6);
    for (const auto& [key, sum] : sparse_sums) CHECK(std::fabs(sum - 1.0) < 1e-6);

    CHECK(cmd_inspect_attention("/no/such/checkpoint.bin", 1, 5, out.string(), true) == 1);
}

TEST_CASE("cmd_ablate emits the full six-condition grid") {
    const fs::path dir = fresh_dir("ablate");
    // very small grid budget; two seeds to check row counts
    std::ostringstream os;
    os << "{\"allies\":2,\"enemies\":1,\"distractors\":1,\"episode_limit\":8,"
       << "\"batch_episodes\":2,\"buffer_capacity\":20,\"total_env_steps\":60,"
       << "\"eval_interval_episodes\":4,\"eval_episodes\":2,\"seeds\":[1,2],"
       << "\"out_dir\":\"" << dir.string() << "\"}";
    RunConfig cfg = parse_config_text(os.str());
    CHECK(cmd_ablate(cfg, true) == 0);

    std::ifstream csv(dir / "ablation.csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header.find("mixer,ablation,seed") == 0);

    std::map<std::string, int> rows_per_condition;
    std::string line;
    while (std::getline(csv, line)) {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        rows_per_condition[line.substr(0, second)] += 1;
        // dense_only rows carry zero auxiliary loss
        if (line.find("dense_only") != std::string::npos) {
            std::istringstream ls(line);
            std::string field;
            for (int i = 0; i < 8; ++i) std::getline(ls, field, ',');
            CHECK(std::stod(field) == 0.0);
        }
    }
    CHECK(rows_per_condition.size() == 6);
    for (const auto& [cond, count] : rows_per_condition) CHECK(count == 2);

    CHECK(fs::exists(dir / "vdn_s2rl" / "1" / "metrics.csv"));
    CHECK(fs::exists(dir / "qmix_sparse_only" / "2" / "metrics.csv"));
    CHECK(fs::exists(dir / "vdn_dense_only" / "config.json"));  // per-condition provenance
}
