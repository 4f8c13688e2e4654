// Integration tests driving the ctn binary end to end.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctn/checkpoint.hpp"
#include "ctn/data.hpp"
#include "ctn/train.hpp"

#ifndef CTN_CLI_PATH
#error "CTN_CLI_PATH must point at the ctn binary"
#endif

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

fs::path work_dir() {
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() / "ctn_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

RunResult run(const std::string& args) {
    const auto out_file = work_dir() / "stdout.txt";
    const auto err_file = work_dir() / "stderr.txt";
    const std::string cmd = std::string(CTN_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2> " + err_file.string();
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

// One-time corpus: three synthetic sources + validation splits.
void make_corpus() {
    static bool done = false;
    if (done) return;
    done = true;
    const auto dir = work_dir();
    REQUIRE(run("gendata --generator two-patterns --num 80 --length 64 --noise 0.4 "
                "--seed 21 --out " + (dir / "tp").string()).exit_code == 0);
    REQUIRE(run("gendata --generator cbf --num 80 --length 64 --seed 22 --out " +
                (dir / "cbf").string()).exit_code == 0);
    REQUIRE(run("gendata --generator two-patterns --num 80 --length 96 --noise 0.8 "
                "--seed 23 --out " + (dir / "tpb").string()).exit_code == 0);
    std::ofstream manifest(dir / "manifest.json");
    manifest << R"({"datasets":[
      {"name":"tp","role":"source","train":"tp_TRAIN.tsv","test":"tp_TEST.tsv"},
      {"name":"tpb","role":"source","train":"tpb_TRAIN.tsv","test":"tpb_TEST.tsv"},
      {"name":"cbf","role":"source","train":"cbf_TRAIN.tsv","test":"cbf_TEST.tsv"},
      {"name":"vcbf","role":"validation","train":"cbf_TRAIN.tsv","test":"cbf_TEST.tsv"},
      {"name":"vtp","role":"validation","train":"tp_TRAIN.tsv","test":"tp_TEST.tsv"}
    ]})";
}

const std::string kTinyArch = " --blocks 2 --lengths 4,8 --filters-per-length 2 ";

}  // namespace

TEST_CASE("cli: gendata is byte-deterministic under a fixed seed") {
    const auto dir = work_dir();
    REQUIRE(run("gendata --generator two-patterns --num 40 --length 64 --seed 9 "
                "--out " + (dir / "detA").string()).exit_code == 0);
    REQUIRE(run("gendata --generator two-patterns --num 40 --length 64 --seed 9 "
                "--out " + (dir / "detB").string()).exit_code == 0);
    CHECK(slurp(dir / "detA_TRAIN.tsv") == slurp(dir / "detB_TRAIN.tsv"));
    CHECK(slurp(dir / "detA_TEST.tsv") == slurp(dir / "detB_TEST.tsv"));
    CHECK(slurp(dir / "detA_TRAIN_META.tsv") == slurp(dir / "detB_TRAIN_META.tsv"));

    // Different seed, different bytes.
    REQUIRE(run("gendata --generator two-patterns --num 40 --length 64 --seed 10 "
                "--out " + (dir / "detC").string()).exit_code == 0);
    CHECK(slurp(dir / "detA_TRAIN.tsv") != slurp(dir / "detC_TRAIN.tsv"));
}

TEST_CASE("cli: missing manifest exits 2 and names the path") {
    const auto r = run("pretrain --manifest /nowhere/missing.json --out " +
                       (work_dir() / "x").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("/nowhere/missing.json") != std::string::npos);
}

TEST_CASE("cli: pretrain writes per-epoch checkpoints, best marker, logs") {
    make_corpus();
    const auto dir = work_dir();
    const auto out = dir / "pre1";
    const auto r = run("pretrain --manifest " + (dir / "manifest.json").string() +
                       " --out " + out.string() + kTinyArch +
                       "--epochs 5 -n 2 -b 8 --val-epochs 2 --seed 31");
    REQUIRE(r.exit_code == 0);
    for (int e = 1; e <= 5; ++e) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ctn1", e);
        CHECK(fs::exists(out / name));
    }
    CHECK(fs::exists(out / "best.ctn1"));
    CHECK(fs::exists(out / "trace.tsv"));
    const std::string marker = slurp(out / "best.txt");
    CHECK(marker.find("best_epoch=") != std::string::npos);
    CHECK(marker.find("# ctn") != std::string::npos);  // reproducibility header

    // Epoch log has one row per epoch plus per-task loss columns.
    std::istringstream log(slurp(out / "epochs.tsv"));
    std::string line;
    int rows = 0;
    bool header_seen = false;
    while (std::getline(log, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            CHECK(line.find("val_loss_vcbf") != std::string::npos);
            CHECK(line.find("val_loss_vtp") != std::string::npos);
            continue;
        }
        ++rows;
    }
    CHECK(rows == 5);

    // The best checkpoint loads and carries all three source heads.
    ctn::CheckpointData ck = ctn::load_checkpoint((out / "best.ctn1").string());
    CHECK(ck.heads.size() == 3);
    CHECK(ck.model.num_blocks() == 2);
}

TEST_CASE("cli: pretrain rerun with the same seed reproduces best.ctn1 bytes") {
    make_corpus();
    const auto dir = work_dir();
    const auto r1 = run("pretrain --manifest " + (dir / "manifest.json").string() +
                        " --out " + (dir / "preA").string() + kTinyArch +
                        "--epochs 3 -n 2 -b 8 --val-epochs 2 --seed 55");
    const auto r2 = run("pretrain --manifest " + (dir / "manifest.json").string() +
                        " --out " + (dir / "preB").string() + kTinyArch +
                        "--epochs 3 -n 2 -b 8 --val-epochs 2 --seed 55");
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(dir / "preA" / "best.ctn1") == slurp(dir / "preB" / "best.ctn1"));
    // Different seed changes the artifact.
    const auto r3 = run("pretrain --manifest " + (dir / "manifest.json").string() +
                        " --out " + (dir / "preC").string() + kTinyArch +
                        "--epochs 3 -n 2 -b 8 --val-epochs 2 --seed 56");
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(dir / "preA" / "best.ctn1") != slurp(dir / "preC" / "best.ctn1"));
}

TEST_CASE("cli: finetune with full freeze reports conv arrays unchanged") {
    make_corpus();
    const auto dir = work_dir();
    REQUIRE(fs::exists(dir / "pre1" / "best.ctn1"));
    const auto r = run("finetune --checkpoint " + (dir / "pre1" / "best.ctn1").string() +
                       " --train " + (dir / "tp_TRAIN.tsv").string() + " --out " +
                       (dir / "ft_frozen").string() +
                       " --iterations 40 -b 8 --freeze-depth 2 --seed 5");
    REQUIRE(r.exit_code == 0);
    const std::string report = slurp(dir / "ft_frozen" / "report.tsv");
    CHECK(report.find("frozen_conv_unchanged") != std::string::npos);
    std::istringstream in(report);
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') last = line;
    CHECK(last.find("yes") != std::string::npos);
    CHECK(fs::exists(dir / "ft_frozen" / "adapted.ctn1"));
    CHECK(fs::exists(dir / "ft_frozen" / "trace.tsv"));
}

TEST_CASE("cli: eval prints exactly what evaluate() computes") {
    make_corpus();
    const auto dir = work_dir();
    const auto ckpt = dir / "ft_frozen" / "adapted.ctn1";
    REQUIRE(fs::exists(ckpt));
    const auto r = run("eval --checkpoint " + ckpt.string() + " --test " +
                       (dir / "tp_TEST.tsv").string());
    REQUIRE(r.exit_code == 0);

    ctn::CheckpointData ck = ctn::load_checkpoint(ckpt.string());
    REQUIRE(ck.heads.size() == 1);
    ctn::Dataset test =
        ctn::load_ucr_file((dir / "tp_TEST.tsv").string(), ctn::Delim::Tab);
    const double error = ctn::evaluate(ck.model, ck.heads[0], test);
    char expect[32];
    std::snprintf(expect, sizeof(expect), "%.6f\n", error);
    CHECK(r.out == expect);
}

TEST_CASE("cli: eval on a multi-head checkpoint requires --task") {
    make_corpus();
    const auto dir = work_dir();
    const auto ckpt = (dir / "pre1" / "best.ctn1").string();
    const auto r = run("eval --checkpoint " + ckpt + " --test " +
                       (dir / "tp_TEST.tsv").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("--task") != std::string::npos);

    const auto ok = run("eval --checkpoint " + ckpt + " --test " +
                        (dir / "tp_TEST.tsv").string() + " --task tp");
    CHECK(ok.exit_code == 0);
}

TEST_CASE("cli: relevance and occlude write headed reports") {
    make_corpus();
    const auto dir = work_dir();
    const auto ckpt = (dir / "ft_frozen" / "adapted.ctn1").string();
    const auto rel = run("relevance --checkpoint " + ckpt + " --data " +
                         (dir / "tp_TRAIN.tsv").string() + " --out " +
                         (dir / "rel.tsv").string() + " --plot-dir " +
                         (dir / "plots").string() + " --top 1");
    REQUIRE(rel.exit_code == 0);
    const std::string report = slurp(dir / "rel.tsv");
    CHECK(report.find("# ctn") != std::string::npos);
    CHECK(report.find("rank\tfilter_index") != std::string::npos);
    CHECK(report.find("# data.") != std::string::npos);
    CHECK(!fs::is_empty(dir / "plots"));

    const auto occ = run("occlude --checkpoint " + ckpt + " --data " +
                         (dir / "tp_TEST.tsv").string() + " --out " +
                         (dir / "occ.tsv").string() + " --summary " +
                         (dir / "occ_sum.tsv").string() + " --limit 2");
    REQUIRE(occ.exit_code == 0);
    CHECK(slurp(dir / "occ.tsv").find("sample\tt\tx\ts") != std::string::npos);
    CHECK(slurp(dir / "occ_sum.tsv").find("argmin_t") != std::string::npos);
}

TEST_CASE("cli: gradcheck passes and honors fault-free exit codes") {
    const auto r = run("gradcheck --seed 50");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("# pass=1") != std::string::npos);
    CHECK(r.out.find("block1.len2.w") != std::string::npos);
}

TEST_CASE("cli: corrupted checkpoint version exits 2") {
    make_corpus();
    const auto dir = work_dir();
    auto bytes = slurp(dir / "pre1" / "best.ctn1");
    bytes[4] = 42;  // version field
    const auto bad = dir / "bad.ctn1";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    const auto r = run("eval --checkpoint " + bad.string() + " --test " +
                       (dir / "tp_TEST.tsv").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("incompatible checkpoint version") != std::string::npos);
}

TEST_CASE("cli: config file supplies defaults, flags win") {
    const auto dir = work_dir();
    {
        std::ofstream cfg(dir / "grad.cfg");
        cfg << "[gradcheck]\nseed=50\nstep=1e-5\nseries-length=12\n";
    }
    const auto r = run("gradcheck --config " + (dir / "grad.cfg").string());
    CHECK(r.exit_code == 0);

    // Flag overrides the config file value (bad tolerance forces failure).
    const auto r2 = run("gradcheck --config " + (dir / "grad.cfg").string() +
                        " --tolerance 1e-12");
    CHECK(r2.exit_code == 1);

    // Unknown keys in the config file are rejected.
    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "[gradcheck]\nseed=50\nnot-an-option=3\n";
    }
    const auto r3 = run("gradcheck --config " + (dir / "bad.cfg").string());
    CHECK(r3.exit_code == 2);
}

TEST_CASE("cli: unknown flags are usage errors") {
    const auto r = run("eval --no-such-flag");
    CHECK(r.exit_code == 2);
}
