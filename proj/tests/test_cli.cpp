#include <gtest/gtest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "nedcal/calibration_metrics.hpp"
#include "nedcal/embedding_store.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace nedcal;
using nedcal::test::make_set;
using nedcal::test::temp_dir;

namespace {

const fs::path kFixtures = fs::path(NEDCAL_SOURCE_DIR) / "data/fixtures";
const std::string kSupport = (kFixtures / "golden_support.jsonl").string();
const std::string kQuery = (kFixtures / "golden_query.jsonl").string();

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "nedcal");
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    const int code = cli::run(args);
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string f; std::getline(in, f, ',');) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Every file of `a` exists in `b` with identical bytes.
void expect_same_files(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        const auto other = b / e.path().filename();
        ASSERT_TRUE(fs::exists(other)) << other;
        EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path().filename();
        ++n;
    }
    EXPECT_GT(n, 1u);
}

}  // namespace

TEST(CliIngest, JsonlToBinaryRoundTrip) {
    const auto dir = temp_dir("cli_ingest");
    // Values exactly representable in float32, so the binary copy is lossless.
    const auto set = make_set({{0.5, -1.25}, {2.0, 0.125}, {-3.5, 4.0}, {1.0, 1.0}}, {"x", "y", "x", "y"});
    write_records(set, dir / "in.jsonl", FileFormat::jsonl);
    const auto r = run({"ingest", (dir / "in.jsonl").string(), "--to", "binary", "--out", (dir / "a").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto back = load_records(dir / "a" / "records.bin", FileFormat::binary);
    EXPECT_EQ(back.ids(), set.ids());
    EXPECT_EQ(back.labels(), set.labels());
    EXPECT_TRUE(std::ranges::equal(back.data(), set.data()));
    const auto summary = slurp(dir / "a" / "summary.txt");
    EXPECT_NE(summary.find("N 4\nm 2\nM 2\n"), std::string::npos) << summary;
    EXPECT_NE(summary.find("class x 2"), std::string::npos);
    EXPECT_NE(summary.find("intra_inter_ratio"), std::string::npos);

    // And back to text.
    const auto r2 = run({"ingest", (dir / "a" / "records.bin").string(), "--to", "jsonl", "--out",
                         (dir / "b").string()});
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(slurp(dir / "b" / "records.jsonl"), slurp(dir / "in.jsonl"));
}

TEST(CliIngest, MalformedLineSeventeen) {
    const auto dir = temp_dir("cli_line17");
    std::string text;
    for (int i = 0; i < 16; ++i)
        text += R"({"id": "p)" + std::to_string(i) + R"(", "label": "a", "vector": [1, 2]})" + "\n";
    text += R"({"id": "bad", "label": "a", "vector": [1, )" "\n";
    write(dir / "in.jsonl", text);
    const auto r = run({"ingest", (dir / "in.jsonl").string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, cli::kValidation);
    EXPECT_NE(r.err.find("line 17"), std::string::npos) << r.err;
}

TEST(CliIngest, MissingFileAndBadFlag) {
    const auto dir = temp_dir("cli_missing");
    EXPECT_EQ(run({"ingest", (dir / "nope.jsonl").string(), "--out", dir.string()}).code, cli::kValidation);
    EXPECT_EQ(run({"ingest", kSupport, "--to", "parquet", "--out", dir.string()}).code, cli::kValidation);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kValidation);
}

TEST(CliTune, SingletonClassExitsThreeWithHint) {
    const auto dir = temp_dir("cli_singleton");
    write_records(make_set({{0, 0}, {1, 0}, {5, 5}}, {"a", "a", "b"}), dir / "s.jsonl", FileFormat::jsonl);
    const auto r = run({"tune", "--support", (dir / "s.jsonl").string(), "--k", "1", "--out", dir.string()});
    EXPECT_EQ(r.code, cli::kTuning);
    EXPECT_NE(r.err.find("holdout"), std::string::npos) << r.err;
}

TEST(CliTune, DeterministicAndMatchesGolden) {
    const auto dir = temp_dir("cli_tune");
    const auto a = dir / "a", b = dir / "b", h1 = dir / "h1", h2 = dir / "h2";
    ASSERT_EQ(run({"tune", "--support", kSupport, "--k", "16", "--out", a.string()}).code, 0);
    ASSERT_EQ(run({"tune", "--support", kSupport, "--k", "16", "--out", b.string()}).code, 0);
    EXPECT_EQ(slurp(a / "tune.json"), slurp(b / "tune.json"));
    EXPECT_EQ(slurp(a / "nll_curve.csv"), slurp(b / "nll_curve.csv"));
    for (const auto& d : {h1, h2})
        ASSERT_EQ(run({"tune", "--support", kSupport, "--k", "16", "--mode", "holdout", "--fraction", "0.2", "--seed",
                       "7", "--out", d.string()})
                      .code,
                  0);
    EXPECT_EQ(slurp(h1 / "tune.json"), slurp(h2 / "tune.json"));

    const auto tuned = nlohmann::json::parse(slurp(a / "tune.json"));
    const auto golden = nlohmann::json::parse(slurp(kFixtures / "golden_values.json"));
    const double t = tuned.at("t_star"), g = golden["rules"]["ned"]["temperature"];
    EXPECT_NEAR(std::log(t / g), 0.0, tuned.at("log_tolerance").get<double>());
    EXPECT_EQ(lines(slurp(a / "nll_curve.csv")).size(), 33u);
}

TEST(CliEvaluate, OutputsAndGolden) {
    const auto dir = temp_dir("cli_eval");
    const auto r = run({"evaluate", "--support", kSupport, "--query", kQuery, "--rule", "ned", "--k", "16", "--scores",
                        "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"manifest.json", "predictions.csv", "report.json", "reliability.csv", "reliability.svg"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    const auto golden = nlohmann::json::parse(slurp(kFixtures / "golden_values.json"));
    EXPECT_NEAR(report.at("accuracy").get<double>(), golden["rules"]["ned"]["accuracy"].get<double>(), 1e-9);
    EXPECT_NEAR(report.at("ece").get<double>(), golden["rules"]["ned"]["ece"].get<double>(), 1e-9);

    const auto pred = lines(slurp(dir / "predictions.csv"));
    ASSERT_EQ(pred.size(), 151u);
    EXPECT_EQ(pred[0], "id,label,predicted,confidence,score_c0,score_c1,score_c2");

    // ECE recomposed from the exported bins equals the reported value to the last digit.
    const auto bins = read_reliability_csv(dir / "reliability.csv");
    EXPECT_EQ(ece_from_bins(bins), report.at("ece").get<double>());
}

TEST(CliEvaluate, NedAtKOneMatchesOneNn) {
    const auto dir = temp_dir("cli_k1");
    ASSERT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--rule", "ned", "--k", "1", "--temperature",
                   "1", "--out", (dir / "ned").string()})
                  .code,
              0);
    ASSERT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--rule", "1nn", "--out",
                   (dir / "one").string()})
                  .code,
              0);
    const auto a = lines(slurp(dir / "ned" / "predictions.csv"));
    const auto b = lines(slurp(dir / "one" / "predictions.csv"));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto fa = split(a[i]), fb = split(b[i]);
        EXPECT_EQ(fa[0], fb[0]);
        EXPECT_EQ(fa[2], fb[2]);
    }
}

TEST(CliEvaluate, ThreadCountDoesNotChangeOutput) {
    const auto dir = temp_dir("cli_threads");
    for (const char* t : {"1", "4"})
        ASSERT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--k", "16", "--scores", "--threads", t,
                       "--out", (dir / t).string()})
                      .code,
                  0);
    EXPECT_EQ(slurp(dir / "1" / "predictions.csv"), slurp(dir / "4" / "predictions.csv"));
    EXPECT_EQ(slurp(dir / "1" / "report.json"), slurp(dir / "4" / "report.json"));
}

TEST(CliEvaluate, ExitCodes) {
    const auto dir = temp_dir("cli_codes");
    write_records(make_set({{0, 0}, {1, 0}}, {"zz", "c0"}, SetRole::query), dir / "q.jsonl", FileFormat::jsonl);
    EXPECT_EQ(run({"evaluate", "--support", kSupport, "--query", (dir / "q.jsonl").string(), "--out", dir.string()})
                  .code,
              cli::kLabelMismatch);
    write_records(make_set({{0, 0}, {1, 0}}, {"c1", "c0"}, SetRole::query), dir / "q2.jsonl", FileFormat::jsonl);
    EXPECT_EQ(run({"evaluate", "--support", kSupport, "--query", (dir / "q2.jsonl").string(), "--out", dir.string()})
                  .code,
              cli::kValidation);  // dimension 2 against 4
    EXPECT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--rule", "svm", "--out", dir.string()}).code,
              cli::kValidation);
    EXPECT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--temperature", "-1", "--out", dir.string()})
                  .code,
              cli::kValidation);
}

TEST(CliEvaluate, TruthFileRelabelsById) {
    const auto dir = temp_dir("cli_truth");
    const auto query = load_records(kQuery, FileFormat::jsonl);
    // Truth file: every query gets label c0.
    std::vector<EmbeddingRecord> recs;
    for (std::size_t i = 0; i < query.size(); ++i) recs.push_back({query.id(i), {0.0}, 0});
    write_records(SupportSet::create(recs, query.label_space(), SetRole::query, 1), dir / "truth.jsonl",
                  FileFormat::jsonl);
    ASSERT_EQ(run({"evaluate", "--support", kSupport, "--query", kQuery, "--truth", (dir / "truth.jsonl").string(),
                   "--rule", "knn", "--k", "16", "--out", dir.string()})
                  .code,
              0);
    const auto pred = lines(slurp(dir / "predictions.csv"));
    for (std::size_t i = 1; i < pred.size(); ++i) EXPECT_EQ(split(pred[i])[1], "c0");
}

TEST(CliSweep, RowCounts) {
    const auto dir = temp_dir("cli_sweep");
    ASSERT_EQ(run({"sweep", "--support", kSupport, "--query", kQuery, "--sweep", "k", "--k", "1,2,4,8", "--rules",
                   "ned,knn,wknn-a,wknn-b", "--out", (dir / "k").string()})
                  .code,
              0);
    EXPECT_EQ(lines(slurp(dir / "k" / "sweep.csv")).size(), 17u);
    ASSERT_EQ(run({"sweep", "--support", kSupport, "--query", kQuery, "--sweep", "severity", "--perturb", "gaussian",
                   "--k", "8", "--out", (dir / "s").string()})
                  .code,
              0);
    const auto rows = lines(slurp(dir / "s" / "sweep.csv"));
    ASSERT_EQ(rows.size(), 26u);
    std::map<std::string, int> per_rule;
    for (std::size_t i = 1; i < rows.size(); ++i) ++per_rule[split(rows[i])[0]];
    EXPECT_EQ(per_rule.size(), 5u);
    for (const auto& [rule, n] : per_rule) EXPECT_EQ(n, 5) << rule;
}

TEST(CliSweep, FixtureMatchesGoldenCsv) {
    const auto dir = temp_dir("cli_sweep_golden");
    ASSERT_EQ(run({"sweep", "--support", kSupport, "--query", kQuery, "--sweep", "k", "--k", "4,16,64", "--out",
                   dir.string()})
                  .code,
              0);
    const auto got = lines(slurp(dir / "sweep.csv"));
    const auto want = lines(slurp(kFixtures / "golden_sweep_k.csv"));
    ASSERT_EQ(got.size(), want.size());
    EXPECT_EQ(got[0], want[0]);
    for (std::size_t i = 1; i < got.size(); ++i) {
        const auto g = split(got[i]), w = split(want[i]);
        ASSERT_EQ(g.size(), w.size());
        for (std::size_t c = 0; c < g.size(); ++c) {
            if (c < 3 || w[c].empty() || c == 6)
                EXPECT_EQ(g[c], w[c]) << i << ":" << c;
            else
                EXPECT_NEAR(std::stod(g[c]), std::stod(w[c]), 1e-9) << i << ":" << c;
        }
    }
}

TEST(CliReplay, EveryCommandReproducesByteForByte) {
    const auto dir = temp_dir("cli_replay");
    const std::string spec = (kFixtures / "golden_spec.json").string();
    const std::vector<std::vector<std::string>> commands = {
        {"synth", spec, "--to", "binary", "--n-support", "120", "--n-query", "60"},
        {"ingest", kSupport, "--to", "csv"},
        {"tune", "--support", kSupport, "--k", "8", "--mode", "holdout", "--seed", "3"},
        {"evaluate", "--support", kSupport, "--query", kQuery, "--rule", "wknn-b", "--k", "12", "--scores"},
        {"evaluate", "--support", kSupport, "--query", kQuery, "--k", "12"},
        {"sweep", "--support", kSupport, "--query", kQuery, "--k", "2,8", "--fixed-T"},
        {"sweep", "--support", kSupport, "--query", kQuery, "--sweep", "severity", "--perturb", "dropout", "--k", "8",
         "--severities", "1,3", "--seed", "9"},
    };
    for (std::size_t i = 0; i < commands.size(); ++i) {
        const auto first = dir / ("run" + std::to_string(i));
        const auto second = dir / ("replay" + std::to_string(i));
        auto args = commands[i];
        args.insert(args.end(), {"--out", first.string()});
        const auto r = run(args);
        ASSERT_EQ(r.code, 0) << commands[i][0] << ": " << r.err;
        const auto rr = run({"replay", (first / "manifest.json").string(), "--out", second.string(), "--threads", "3"});
        ASSERT_EQ(rr.code, 0) << rr.err;
        expect_same_files(first, second);
    }
}
