// Command-line front end: pretrain, finetune, eval, relevance, occlude,
// gendata, gradcheck. Config file (CLI11 TOML/INI format) plus flag
// overrides; flags win. Exit codes: 0 ok, 1 runtime/numeric failure,
// 2 usage/config/data error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "ctn/analysis.hpp"
#include "ctn/checkpoint.hpp"
#include "ctn/data.hpp"
#include "ctn/train.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using namespace ctn;

struct CommonOpts {
    uint64_t seed = 0;
    int threads = 0;  // 0 = library default
    std::string precision = "float64";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--seed", o.seed, "RNG seed")->capture_default_str();
    cmd->add_option("--threads", o.threads,
                    "worker threads (0 = runtime default, 1 = deterministic serial)")
        ->capture_default_str();
    cmd->add_option("--precision", o.precision, "compute precision")
        ->check(CLI::IsMember({"float32", "float64"}))
        ->capture_default_str();
}

void apply_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

Precision parse_precision(const std::string& s) {
    return s == "float32" ? Precision::F32 : Precision::F64;
}

struct ArchOpts {
    int blocks = 4;
    std::vector<int> lengths = {4, 8, 16, 32, 64};
    int filters_per_length = 33;
    std::vector<std::string> kinds;
};

void add_arch(CLI::App* cmd, ArchOpts& a) {
    cmd->add_option("--blocks", a.blocks, "number of convolutional blocks")
        ->capture_default_str();
    cmd->add_option("--lengths", a.lengths, "filter lengths, ascending")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--filters-per-length", a.filters_per_length,
                    "filters per length per block")
        ->capture_default_str();
    cmd->add_option("--kinds", a.kinds,
                    "block kinds (type1|type2), default alternates from type1")
        ->delimiter(',');
}

ArchConfig build_arch(const ArchOpts& a) {
    ArchConfig cfg;
    cfg.num_blocks = a.blocks;
    cfg.lengths = a.lengths;
    cfg.filters_per_length = a.filters_per_length;
    for (const auto& k : a.kinds) {
        if (k == "type1") cfg.kinds.push_back(BlockKind::Type1);
        else if (k == "type2") cfg.kinds.push_back(BlockKind::Type2);
        else throw config_error("unknown block kind '" + k + "' (type1|type2)");
    }
    return cfg;
}

Delim parse_delim(const std::string& s) {
    if (s == "tab") return Delim::Tab;
    if (s == "comma") return Delim::Comma;
    throw config_error("unknown delimiter '" + s + "' (tab|comma)");
}

// Every report opens with the same reproducibility block.
void write_header(std::ostream& out, const std::string& command, CLI::App* cmd,
                  const std::map<std::string, uint64_t>& data_hashes) {
    out << "# ctn " << kVersion << "\n";
    out << "# command=" << command << "\n";
    std::istringstream cfg(cmd->config_to_str(true, false));
    std::string line;
    while (std::getline(cfg, line))
        if (!line.empty()) out << "# config." << line << "\n";
    for (const auto& [name, hash] : data_hashes) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "0x%016llx",
                      static_cast<unsigned long long>(hash));
        out << "# data." << name << ".hash=" << buf << "\n";
    }
}

std::ofstream open_report(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write report: " + path);
    return out;
}

Dataset load_split(const std::string& path, Delim delim,
                   std::vector<std::string>& warnings) {
    Dataset d = load_ucr_file(path, delim, &warnings);
    return d;
}

// ---- gendata ----

struct GendataOpts {
    CommonOpts common;
    std::string generator = "two-patterns";
    int num = 800;
    int length = 128;
    double noise = 0.3;
    double w1_frac = 0.1, w2_frac = 0.1;
    double eta_std = 1.0, eps_std = 1.0;
    double train_fraction = 0.5;
    std::string out_prefix;
    std::string name;
    std::string delimiter = "tab";
};

int run_gendata(CLI::App* cmd, const GendataOpts& o) {
    Rng rng(o.common.seed);
    Dataset all;
    if (o.generator == "two-patterns") {
        all = gen_two_patterns(o.num, o.length, o.noise, rng, o.w1_frac, o.w2_frac);
    } else if (o.generator == "cbf") {
        all = gen_cbf(o.num, o.length, rng, o.eta_std, o.eps_std);
    } else {
        throw config_error("unknown generator '" + o.generator +
                           "' (two-patterns|cbf)");
    }
    if (!o.name.empty()) all.name = o.name;

    const int n_train =
        static_cast<int>(std::lround(o.train_fraction * static_cast<double>(o.num)));
    if (n_train < 1 || n_train >= o.num)
        throw config_error("train fraction leaves an empty split");

    Dataset train = all, test = all;
    train.split = "train";
    train.samples.assign(all.samples.begin(), all.samples.begin() + n_train);
    train.segments.assign(all.segments.begin(), all.segments.begin() + n_train);
    test.split = "test";
    test.samples.assign(all.samples.begin() + n_train, all.samples.end());
    test.segments.assign(all.segments.begin() + n_train, all.segments.end());

    const Delim delim = parse_delim(o.delimiter);
    const std::string train_path = o.out_prefix + "_TRAIN.tsv";
    const std::string test_path = o.out_prefix + "_TEST.tsv";
    write_ucr_file(train, train_path, delim);
    write_ucr_file(test, test_path, delim);
    write_segments_file(train, o.out_prefix + "_TRAIN_META.tsv");
    write_segments_file(test, o.out_prefix + "_TEST_META.tsv");

    std::map<std::string, uint64_t> hashes{{all.name + ".train", file_hash(train_path)},
                                           {all.name + ".test", file_hash(test_path)}};
    auto report = open_report(o.out_prefix + "_INFO.txt");
    write_header(report, "gendata", cmd, hashes);
    report << "name\tsamples\tlength\tclasses\n";
    report << all.name << '\t' << o.num << '\t' << o.length << '\t'
           << all.num_classes << '\n';
    std::cout << train_path << "\n" << test_path << "\n";
    return 0;
}

// ---- pretrain ----

struct PretrainOpts {
    CommonOpts common;
    ArchOpts arch;
    std::string manifest;
    std::string out_dir;
    int epochs = 200;
    int n = 5;
    int b = 16;
    double lr = 0.002;
    int val_epochs = 50;
    double val_lr = 0.002;
    int validate_every = 1;
    std::string reduction = "mean";
    bool no_replacement = false;
    bool serial_validation = false;
};

Reduction parse_reduction(const std::string& s) {
    if (s == "mean") return Reduction::Mean;
    if (s == "sum") return Reduction::Sum;
    throw config_error("unknown reduction '" + s + "' (mean|sum)");
}

int run_pretrain(CLI::App* cmd, const PretrainOpts& o) {
    const auto entries = load_manifest(o.manifest);
    std::filesystem::create_directories(o.out_dir);

    std::vector<Dataset> sources;
    std::vector<ValidationTask> validation;
    std::map<std::string, uint64_t> hashes;
    std::vector<std::string> warnings;
    uint64_t source_hash = 14695981039346656037ull;

    for (const auto& e : entries) {
        if (e.role == "source") {
            Dataset train = load_split(e.train_path, e.delim, warnings);
            train.name = e.name;
            hashes[e.name + ".train"] = file_hash(e.train_path);
            source_hash ^= hashes[e.name + ".train"];
            if (e.merge_splits && !e.test_path.empty()) {
                Dataset test =
                    load_ucr_file(e.test_path, e.delim, train.label_map, &warnings);
                hashes[e.name + ".test"] = file_hash(e.test_path);
                source_hash ^= hashes[e.name + ".test"];
                train.label_map = test.label_map;
                train.num_classes = test.num_classes;
                if (test.series_length != train.series_length)
                    throw data_error("source '" + e.name +
                                     "': train/test series lengths differ");
                for (auto& s : test.samples) train.samples.push_back(std::move(s));
                train.split = "train+test";
            }
            sources.push_back(std::move(train));
        } else if (e.role == "validation") {
            ValidationTask task;
            task.name = e.name;
            task.train = load_split(e.train_path, e.delim, warnings);
            task.test = load_ucr_file(e.test_path, e.delim, task.train.label_map,
                                      &warnings);
            task.train.name = e.name;
            task.test.name = e.name;
            hashes[e.name + ".train"] = file_hash(e.train_path);
            hashes[e.name + ".test"] = file_hash(e.test_path);
            validation.push_back(std::move(task));
        }
    }
    if (sources.empty())
        throw config_error("manifest has no source datasets: " + o.manifest);

    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    Rng rng(o.common.seed);
    Rng init_rng = rng.child(0xa5c3);
    CtnModel model =
        build_ctn(build_arch(o.arch), init_rng, parse_precision(o.common.precision));

    PretrainConfig cfg;
    cfg.max_train_epochs = o.epochs;
    cfg.batches_per_dataset = o.n;
    cfg.batch_size = o.b;
    cfg.lr = o.lr;
    cfg.max_val_epochs = o.val_epochs;
    cfg.val_lr = o.val_lr;
    cfg.validate_every = o.validate_every;
    cfg.seed = o.common.seed;
    cfg.reduction = parse_reduction(o.reduction);
    cfg.with_replacement = !o.no_replacement;
    cfg.parallel_validation = !o.serial_validation;

    PretrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& rec, CtnModel& m, std::vector<Head>& heads,
                         const AdamState& core) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ctn1", rec.epoch);
        std::map<std::string, AdamState> optim{{"core", core}};
        save_checkpoint((std::filesystem::path(o.out_dir) / name).string(), m, &heads,
                        &optim, o.common.seed, rec.epoch, source_hash);
    };

    auto result = pretrain(sources, validation, model, cfg, &hooks);

    // Machine-readable epoch log.
    {
        auto log = open_report((std::filesystem::path(o.out_dir) / "epochs.tsv").string());
        write_header(log, "pretrain", cmd, hashes);
        log << "epoch\tval_loss\tmodel_hash\tdiverged";
        for (const auto& v : validation) log << "\tval_loss_" << v.name;
        log << "\n";
        for (const auto& rec : result.records) {
            char hash[32];
            std::snprintf(hash, sizeof(hash), "0x%016llx",
                          static_cast<unsigned long long>(rec.model_hash));
            log << rec.epoch << '\t' << rec.val_loss << '\t' << hash << '\t'
                << (rec.diverged ? 1 : 0);
            for (size_t k = 0; k < validation.size(); ++k)
                log << '\t'
                    << (k < rec.per_dataset_loss.size()
                            ? std::to_string(rec.per_dataset_loss[k])
                            : "nan");
            log << "\n";
        }
    }
    // Training trace.
    {
        auto tr = open_report((std::filesystem::path(o.out_dir) / "trace.tsv").string());
        write_header(tr, "pretrain", cmd, hashes);
        tr << "epoch\titeration\tdataset\tloss\n";
        for (const auto& row : result.trace)
            tr << row.epoch << '\t' << row.iteration << '\t' << row.dataset << '\t'
               << row.loss << "\n";
    }
    // Best checkpoint + marker.
    const std::string best_path =
        (std::filesystem::path(o.out_dir) / "best.ctn1").string();
    save_checkpoint(best_path, result.best_model, &result.best_heads, nullptr,
                    o.common.seed,
                    result.best_epoch < 0 ? o.epochs : result.best_epoch, source_hash);
    {
        auto marker = open_report((std::filesystem::path(o.out_dir) / "best.txt").string());
        write_header(marker, "pretrain", cmd, hashes);
        marker << "best_epoch=" << result.best_epoch << "\n";
        marker << "best_val_loss=" << result.best_val_loss << "\n";
        marker << "checkpoint=best.ctn1\n";
        marker << "clamped_log_evals=" << result.clamped << "\n";
    }
    if (result.diverged) {
        std::cerr << "pretraining diverged (non-finite loss); stopped early\n";
        return 1;
    }
    std::cout << best_path << "\n";
    return 0;
}

// ---- finetune ----

struct FinetuneOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string train_path;
    std::string delimiter = "tab";
    std::string out_dir;
    int iterations = 12000;
    double lr = 2e-4;
    int b = 16;
    int freeze_depth = 0;
    int smooth_window = 50;
    int repeats = 1;
    std::string reduction = "mean";
};

int run_finetune(CLI::App* cmd, const FinetuneOpts& o) {
    CheckpointData ck = load_checkpoint(o.checkpoint);
    if (o.common.precision == "float32") ck.model.precision = Precision::F32;
    std::filesystem::create_directories(o.out_dir);

    std::vector<std::string> warnings;
    Dataset target = load_split(o.train_path, parse_delim(o.delimiter), warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    std::map<std::string, uint64_t> hashes{
        {target.name + ".train", file_hash(o.train_path)},
        {"checkpoint", file_hash(o.checkpoint)}};

    auto report = open_report(
        (std::filesystem::path(o.out_dir) / "report.tsv").string());
    write_header(report, "finetune", cmd, hashes);
    report << "run\tbest_iteration\tbest_loss\ttrain_error\tfrozen_conv_unchanged\t"
              "clamped\tdiverged\n";

    auto trace = open_report((std::filesystem::path(o.out_dir) / "trace.tsv").string());
    write_header(trace, "finetune", cmd, hashes);
    trace << "run\titeration\tloss\n";

    int rc = 0;
    for (int run = 0; run < o.repeats; ++run) {
        FinetuneConfig cfg;
        cfg.iterations = o.iterations;
        cfg.lr = o.lr;
        cfg.batch_size = o.b;
        cfg.freeze_depth = o.freeze_depth;
        cfg.smooth_window = o.smooth_window;
        cfg.reduction = parse_reduction(o.reduction);
        cfg.seed = o.repeats == 1 ? o.common.seed
                                  : Rng::mix(o.common.seed, static_cast<uint64_t>(run));

        auto result = finetune_target(ck.model, target, cfg);

        // Frozen conv arrays must come back bitwise identical.
        bool frozen_ok = true;
        {
            auto before = param_entries(ck.model);
            auto after = param_entries(result.model);
            for (size_t i = 0; i < before.size(); ++i)
                if (after[i].frozen) frozen_ok &= *before[i].values == *after[i].values;
        }

        const double train_error = evaluate(result.model, result.head, target);
        const double best_loss =
            result.best_iteration >= 0 ? result.loss_trace[result.best_iteration]
                                       : std::nan("");
        report << run << '\t' << result.best_iteration << '\t' << best_loss << '\t'
               << train_error << '\t' << (frozen_ok ? "yes" : "no") << '\t'
               << result.clamped << '\t' << (result.diverged ? 1 : 0) << "\n";
        for (size_t i = 0; i < result.loss_trace.size(); ++i)
            trace << run << '\t' << i << '\t' << result.loss_trace[i] << "\n";

        std::string name = o.repeats == 1 ? "adapted.ctn1"
                                          : "adapted_" + std::to_string(run) + ".ctn1";
        std::vector<Head> heads{result.head};
        save_checkpoint((std::filesystem::path(o.out_dir) / name).string(),
                        result.model, &heads, nullptr, cfg.seed, -1, ck.source_hash);
        if (result.diverged) rc = 1;
    }
    return rc;
}

// ---- eval ----

struct EvalOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string test_path;
    std::string train_path;  // optional: source of the label map
    std::string delimiter = "tab";
    std::string task;
    std::string report_path;
};

int run_eval(CLI::App* cmd, const EvalOpts& o) {
    CheckpointData ck = load_checkpoint(o.checkpoint);
    if (ck.heads.empty())
        throw config_error("checkpoint has no classifier heads: " + o.checkpoint);
    const Head* head = nullptr;
    if (o.task.empty()) {
        if (ck.heads.size() != 1)
            throw config_error("checkpoint has several heads; pick one with --task");
        head = &ck.heads[0];
    } else {
        for (const auto& h : ck.heads)
            if (h.task_name == o.task) head = &h;
        if (!head) throw config_error("no head named '" + o.task + "' in checkpoint");
    }

    std::vector<std::string> warnings;
    const Delim delim = parse_delim(o.delimiter);
    Dataset test;
    if (!o.train_path.empty()) {
        Dataset train = load_split(o.train_path, delim, warnings);
        test = load_ucr_file(o.test_path, delim, train.label_map, &warnings);
    } else {
        test = load_split(o.test_path, delim, warnings);
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    const double error = evaluate(ck.model, *head, test);
    std::printf("%.6f\n", error);

    if (!o.report_path.empty()) {
        std::map<std::string, uint64_t> hashes{
            {test.name + ".test", file_hash(o.test_path)},
            {"checkpoint", file_hash(o.checkpoint)}};
        auto report = open_report(o.report_path);
        write_header(report, "eval", cmd, hashes);
        report << "error_rate\tsamples\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", error);
        report << buf << '\t' << test.size() << "\n";
    }
    return 0;
}

// ---- relevance ----

struct RelevanceOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string data_path;
    std::string delimiter = "tab";
    std::string out_path;
    std::string plot_dir;
    int top = 5;
    int sample = 0;
};

int run_relevance(CLI::App* cmd, const RelevanceOpts& o) {
    CheckpointData ck = load_checkpoint(o.checkpoint);
    std::vector<std::string> warnings;
    Dataset data = load_split(o.data_path, parse_delim(o.delimiter), warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    const auto report = filter_relevance(ck.model, data);

    std::map<std::string, uint64_t> hashes{{data.name, file_hash(o.data_path)},
                                           {"checkpoint", file_hash(o.checkpoint)}};
    auto out = open_report(o.out_path);
    write_header(out, "relevance", cmd, hashes);
    out << "rank\tfilter_index\tlength\trelevance\tbias\tweights\n";
    for (size_t rank = 0; rank < report.entries.size(); ++rank) {
        const auto& e = report.entries[rank];
        out << rank << '\t' << e.filter_index << '\t' << e.length << '\t'
            << e.relevance << '\t' << e.bias << '\t';
        for (size_t i = 0; i < e.weights.size(); ++i) {
            if (i) out << ';';
            out << e.weights[i];
        }
        out << "\n";
    }

    if (!o.plot_dir.empty()) {
        std::filesystem::create_directories(o.plot_dir);
        if (o.sample < 0 || o.sample >= data.size())
            throw config_error("--sample out of range");
        const auto& x = data.samples[o.sample].values;
        const int n = std::min<int>(o.top, static_cast<int>(report.entries.size()));
        for (int r = 0; r < n; ++r) {
            const auto& e = report.entries[r];
            const auto map = activation_map(ck.model, e.filter_index, x);
            auto plot = open_report((std::filesystem::path(o.plot_dir) /
                                     ("filter_" + std::to_string(e.filter_index) +
                                      ".tsv"))
                                        .string());
            write_header(plot, "relevance", cmd, hashes);
            plot << "# filter_index=" << e.filter_index << "\n";
            plot << "# length=" << e.length << "\n";
            plot << "# argmax=" << map.argmax << "\n";
            // Overlay convention: the filter is drawn starting at
            // argmax - p_left on the series axis.
            plot << "# overlay_start=" << map.argmax - pad_left(e.length) << "\n";
            plot << "t\tx\tresponse\n";
            for (size_t t = 0; t < x.size(); ++t)
                plot << t << '\t' << x[t] << '\t' << map.response[t] << "\n";
        }
    }
    return 0;
}

// ---- occlude ----

struct OccludeOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string data_path;
    std::string delimiter = "tab";
    std::string out_path;
    std::string summary_path;
    std::string task;
    double window_fraction = 0.1;
    int stride = 1;
    int limit = 0;
};

int run_occlude(CLI::App* cmd, const OccludeOpts& o) {
    CheckpointData ck = load_checkpoint(o.checkpoint);
    if (ck.heads.empty())
        throw config_error("checkpoint has no classifier heads: " + o.checkpoint);
    const Head* head = nullptr;
    if (o.task.empty()) {
        if (ck.heads.size() != 1)
            throw config_error("checkpoint has several heads; pick one with --task");
        head = &ck.heads[0];
    } else {
        for (const auto& h : ck.heads)
            if (h.task_name == o.task) head = &h;
        if (!head) throw config_error("no head named '" + o.task + "' in checkpoint");
    }

    std::vector<std::string> warnings;
    Dataset data = load_split(o.data_path, parse_delim(o.delimiter), warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    const int n = o.limit > 0 ? std::min(o.limit, data.size()) : data.size();
    std::map<std::string, uint64_t> hashes{{data.name, file_hash(o.data_path)},
                                           {"checkpoint", file_hash(o.checkpoint)}};

    auto out = open_report(o.out_path);
    write_header(out, "occlude", cmd, hashes);
    out << "sample\tt\tx\ts\n";

    std::ofstream summary;
    if (!o.summary_path.empty()) {
        summary = open_report(o.summary_path);
        write_header(summary, "occlude", cmd, hashes);
        summary << "sample\tlabel\tpredicted\tbase_prob\targmin_t\tmin_s\n";
    }

    for (int i = 0; i < n; ++i) {
        const auto& x = data.samples[i].values;
        const auto trace =
            occlusion_sensitivity(ck.model, *head, x, o.window_fraction, o.stride);
        size_t pos = 0;
        for (size_t t = 0; t < x.size(); ++t) {
            out << i << '\t' << t << '\t' << x[t] << '\t';
            if (pos < trace.positions.size() &&
                trace.positions[pos] == static_cast<int>(t)) {
                out << trace.s[pos];
                ++pos;
            } else {
                out << "na";
            }
            out << "\n";
        }
        if (summary.is_open()) {
            size_t argmin = 0;
            for (size_t k = 1; k < trace.s.size(); ++k)
                if (trace.s[k] < trace.s[argmin]) argmin = k;
            summary << i << '\t' << data.samples[i].label << '\t'
                    << trace.predicted_class << '\t' << trace.base_prob << '\t'
                    << trace.positions[argmin] << '\t' << trace.s[argmin] << "\n";
        }
    }
    return 0;
}

// ---- gradcheck ----

struct GradcheckOpts {
    CommonOpts common;
    ArchOpts arch{2, {2, 4}, 2, {}};
    int batch_size = 2;
    int series_length = 16;
    int classes = 3;
    int freeze_depth = 0;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::string out_path;
};

int run_gradcheck(CLI::App* cmd, const GradcheckOpts& o) {
    // Verification always runs in double precision regardless of --precision.
    Rng rng(o.common.seed);
    CtnModel model = build_ctn(build_arch(o.arch), rng, Precision::F64);
    if (o.freeze_depth < 0 || o.freeze_depth > model.num_blocks())
        throw config_error("--freeze-depth out of range");
    for (int l = 0; l < o.freeze_depth; ++l) model.freeze_mask[l] = true;
    // Random BN shifts keep pre-ReLU values away from the kink, where central
    // differences are undefined.
    for (auto& block : model.blocks) {
        for (double& b : block.bn.beta) b = rng.uniform(0.05, 0.3);
        if (block.projection)
            for (double& b : block.projection->bn.beta) b = rng.uniform(0.05, 0.3);
    }
    Head head = make_head("gradcheck", o.classes, model.embedding_dim(), rng);

    std::vector<std::vector<double>> series(o.batch_size);
    std::vector<int> targets(o.batch_size);
    SeriesBatch batch;
    for (int i = 0; i < o.batch_size; ++i) {
        series[i].resize(o.series_length);
        for (double& v : series[i]) v = rng.gaussian();
        targets[i] = rng.uniform_int(0, o.classes - 1);
        batch.push_back(&series[i]);
    }

    const auto report =
        finite_diff_check(model, head, batch, targets, o.step, o.tolerance);

    auto print = [&](std::ostream& os) {
        os << "group\tmax_rel_err\tmax_abs_analytic\tfrozen\n";
        for (const auto& g : report.groups)
            os << g.name << '\t' << g.max_rel_err << '\t' << g.max_abs_analytic << '\t'
               << (g.frozen ? 1 : 0) << "\n";
        os << "# max_rel_err=" << report.max_rel_err << "\n";
        os << "# tolerance=" << report.tolerance << "\n";
        os << "# pass=" << (report.pass ? 1 : 0) << "\n";
    };
    print(std::cout);
    if (!o.out_path.empty()) {
        auto out = open_report(o.out_path);
        write_header(out, "gradcheck", cmd, {});
        out << "# precision=float64 (forced)\n";
        print(out);
    }
    return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ConvTimeNet training and analysis engine"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    // Config file values sit under a [subcommand] section; explicit flags win.
    app.set_config("--config", "", "config file (flag overrides win)");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.fallthrough();

    GendataOpts gd;
    auto* gendata = app.add_subcommand("gendata", "generate synthetic datasets");
    add_common(gendata, gd.common);
    gendata->add_option("--generator", gd.generator, "two-patterns|cbf")
        ->capture_default_str();
    gendata->add_option("--num", gd.num, "total samples")->capture_default_str();
    gendata->add_option("--length", gd.length, "series length T")->capture_default_str();
    gendata->add_option("--noise", gd.noise, "two-patterns noise stddev")
        ->capture_default_str();
    gendata->add_option("--w1-frac", gd.w1_frac, "first pattern width fraction")
        ->capture_default_str();
    gendata->add_option("--w2-frac", gd.w2_frac, "second pattern width fraction")
        ->capture_default_str();
    gendata->add_option("--eta-std", gd.eta_std, "cbf amplitude noise")
        ->capture_default_str();
    gendata->add_option("--eps-std", gd.eps_std, "cbf additive noise")
        ->capture_default_str();
    gendata->add_option("--train-fraction", gd.train_fraction, "train split fraction")
        ->capture_default_str();
    gendata->add_option("--out", gd.out_prefix, "output path prefix")->required();
    gendata->add_option("--name", gd.name, "dataset name override");
    gendata->add_option("--delimiter", gd.delimiter, "tab|comma")->capture_default_str();

    PretrainOpts pt;
    auto* pre = app.add_subcommand("pretrain", "multi-head pretraining (Algorithm 1)");
    add_common(pre, pt.common);
    add_arch(pre, pt.arch);
    pre->add_option("--manifest", pt.manifest, "dataset manifest (JSON)")->required();
    pre->add_option("--out", pt.out_dir, "output directory")->required();
    pre->add_option("--epochs", pt.epochs, "max training epochs")->capture_default_str();
    pre->add_option("--batches-per-dataset,-n", pt.n, "batches per dataset per epoch")
        ->capture_default_str();
    pre->add_option("--batch-size,-b", pt.b, "batch size")->capture_default_str();
    pre->add_option("--lr", pt.lr, "learning rate")->capture_default_str();
    pre->add_option("--val-epochs", pt.val_epochs, "validation fine-tune epochs")
        ->capture_default_str();
    pre->add_option("--val-lr", pt.val_lr, "validation fine-tune learning rate")
        ->capture_default_str();
    pre->add_option("--validate-every", pt.validate_every,
                    "validate every E epochs (Algorithm 1 uses 1)")
        ->capture_default_str();
    pre->add_option("--reduction", pt.reduction, "loss reduction (mean|sum)")
        ->capture_default_str();
    pre->add_flag("--no-replacement", pt.no_replacement,
                  "sample batches without replacement");
    pre->add_flag("--serial-validation", pt.serial_validation,
                  "run validation tasks serially");

    FinetuneOpts ft;
    auto* fin = app.add_subcommand("finetune", "adapt a checkpoint to a target task");
    add_common(fin, ft.common);
    fin->add_option("--checkpoint", ft.checkpoint, "input checkpoint")->required();
    fin->add_option("--train", ft.train_path, "target train split")->required();
    fin->add_option("--delimiter", ft.delimiter, "tab|comma")->capture_default_str();
    fin->add_option("--out", ft.out_dir, "output directory")->required();
    fin->add_option("--iterations", ft.iterations, "fine-tune iterations")
        ->capture_default_str();
    fin->add_option("--lr", ft.lr, "learning rate")->capture_default_str();
    fin->add_option("--batch-size,-b", ft.b, "batch size")->capture_default_str();
    fin->add_option("--freeze-depth", ft.freeze_depth,
                    "leading blocks with frozen conv weights")
        ->capture_default_str();
    fin->add_option("--smooth-window", ft.smooth_window,
                    "loss smoothing window for model selection (1 = raw)")
        ->capture_default_str();
    fin->add_option("--repeats", ft.repeats, "independent runs (report each)")
        ->capture_default_str();
    fin->add_option("--reduction", ft.reduction, "loss reduction (mean|sum)")
        ->capture_default_str();

    EvalOpts ev;
    auto* evl = app.add_subcommand("eval", "error rate of a checkpoint on a test set");
    add_common(evl, ev.common);
    evl->add_option("--checkpoint", ev.checkpoint, "input checkpoint")->required();
    evl->add_option("--test", ev.test_path, "test split")->required();
    evl->add_option("--train", ev.train_path,
                    "optional train split supplying the label map");
    evl->add_option("--delimiter", ev.delimiter, "tab|comma")->capture_default_str();
    evl->add_option("--task", ev.task, "head to use (multi-head checkpoints)");
    evl->add_option("--report", ev.report_path, "optional report file");

    RelevanceOpts rl;
    auto* rel = app.add_subcommand("relevance", "first-layer filter relevance");
    add_common(rel, rl.common);
    rel->add_option("--checkpoint", rl.checkpoint, "input checkpoint")->required();
    rel->add_option("--data", rl.data_path, "dataset to average over")->required();
    rel->add_option("--delimiter", rl.delimiter, "tab|comma")->capture_default_str();
    rel->add_option("--out", rl.out_path, "report file")->required();
    rel->add_option("--plot-dir", rl.plot_dir, "write activation overlays here");
    rel->add_option("--top", rl.top, "filters to plot")->capture_default_str();
    rel->add_option("--sample", rl.sample, "sample index for overlays")
        ->capture_default_str();

    OccludeOpts oc;
    auto* occ = app.add_subcommand("occlude", "occlusion sensitivity traces");
    add_common(occ, oc.common);
    occ->add_option("--checkpoint", oc.checkpoint, "input checkpoint")->required();
    occ->add_option("--data", oc.data_path, "dataset")->required();
    occ->add_option("--delimiter", oc.delimiter, "tab|comma")->capture_default_str();
    occ->add_option("--out", oc.out_path, "trace report file")->required();
    occ->add_option("--summary", oc.summary_path, "per-sample summary file");
    occ->add_option("--task", oc.task, "head to use (multi-head checkpoints)");
    occ->add_option("--window-fraction", oc.window_fraction, "window length / T")
        ->capture_default_str();
    occ->add_option("--stride", oc.stride, "window stride")->capture_default_str();
    occ->add_option("--limit", oc.limit, "max samples (0 = all)")->capture_default_str();

    GradcheckOpts gc;
    auto* grad = app.add_subcommand("gradcheck",
                                    "finite-difference gradient verification");
    add_common(grad, gc.common);
    add_arch(grad, gc.arch);
    grad->add_option("--batch-size,-b", gc.batch_size, "batch size")
        ->capture_default_str();
    grad->add_option("--series-length", gc.series_length, "series length T")
        ->capture_default_str();
    grad->add_option("--classes", gc.classes, "head classes")->capture_default_str();
    grad->add_option("--freeze-depth", gc.freeze_depth, "frozen leading blocks")
        ->capture_default_str();
    grad->add_option("--step", gc.step, "central difference step")
        ->capture_default_str();
    grad->add_option("--tolerance", gc.tolerance, "max relative error allowed")
        ->capture_default_str();
    grad->add_option("--out", gc.out_path, "optional report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (gendata->parsed()) {
            apply_threads(gd.common.threads);
            return run_gendata(gendata, gd);
        }
        if (pre->parsed()) {
            apply_threads(pt.common.threads);
            return run_pretrain(pre, pt);
        }
        if (fin->parsed()) {
            apply_threads(ft.common.threads);
            return run_finetune(fin, ft);
        }
        if (evl->parsed()) {
            apply_threads(ev.common.threads);
            return run_eval(evl, ev);
        }
        if (rel->parsed()) {
            apply_threads(rl.common.threads);
            return run_relevance(rel, rl);
        }
        if (occ->parsed()) {
            apply_threads(oc.common.threads);
            return run_occlude(occ, oc);
        }
        if (grad->parsed()) {
            apply_threads(gc.common.threads);
            return run_gradcheck(grad, gc);
        }
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dim_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
