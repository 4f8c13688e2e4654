#include "ctn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ctn {

bool z_normalize(std::vector<double>& values) {
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) {
        const double d = v - mean;
        var += d * d;
    }
    var /= n;
    if (var <= 0.0) {
        std::fill(values.begin(), values.end(), 0.0);
        return false;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (double& v : values) v = (v - mean) * inv;
    return true;
}

namespace {

std::vector<std::string> split_row(const std::string& line, Delim delim) {
    std::vector<std::string> out;
    const char sep = delim == Delim::Tab ? '\t' : ',';
    std::string field;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    out.push_back(field);
    // Trailing separators or padded fields produce empties; drop them.
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

double parse_num(const std::string& s, const std::string& where) {
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw data_error("non-numeric field '" + s + "' in " + where);
    }
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size()) throw data_error("non-numeric field '" + s + "' in " + where);
    return v;
}

Dataset load_rows(const std::string& path, Delim delim,
                  std::map<double, int> label_map, bool extend_map,
                  std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open dataset file: " + path);

    std::vector<double> raw_labels;
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_row(line, delim);
        if (fields.size() < 2)
            throw data_error(path + ":" + std::to_string(lineno) + ": too few fields");
        const std::string where = path + ":" + std::to_string(lineno);
        raw_labels.push_back(parse_num(fields[0], where));
        std::vector<double> vals(fields.size() - 1);
        for (size_t i = 1; i < fields.size(); ++i) vals[i - 1] = parse_num(fields[i], where);
        if (!rows.empty() && vals.size() != rows.front().size())
            throw data_error(path + ":" + std::to_string(lineno) + ": ragged row (" +
                             std::to_string(vals.size()) + " values, expected " +
                             std::to_string(rows.front().size()) + ")");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw data_error("empty dataset file: " + path);

    if (extend_map) {
        std::set<double> unknown;
        for (double lbl : raw_labels)
            if (!label_map.count(lbl)) unknown.insert(lbl);
        for (double lbl : unknown) {
            const int idx = static_cast<int>(label_map.size());
            label_map.emplace(lbl, idx);
            if (warnings)
                warnings->push_back(path + ": label " + std::to_string(lbl) +
                                    " not present in the training map; assigned index " +
                                    std::to_string(idx));
        }
    } else {
        std::set<double> seen(raw_labels.begin(), raw_labels.end());
        int idx = 0;
        for (double lbl : seen) label_map.emplace(lbl, idx++);
    }

    Dataset d;
    d.name = std::filesystem::path(path).stem().string();
    d.series_length = static_cast<int>(rows.front().size());
    d.num_classes = static_cast<int>(label_map.size());
    d.label_map = label_map;
    for (size_t i = 0; i < rows.size(); ++i) {
        TimeSeriesSample s;
        s.values = std::move(rows[i]);
        s.label = label_map.at(raw_labels[i]);
        if (!z_normalize(s.values)) {
            ++d.num_constant;
            if (warnings)
                warnings->push_back(path + ": constant series at row " +
                                    std::to_string(i + 1) + " normalized to zeros");
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace

Dataset load_ucr_file(const std::string& path, Delim delim,
                      std::vector<std::string>* warnings) {
    return load_rows(path, delim, {}, false, warnings);
}

Dataset load_ucr_file(const std::string& path, Delim delim,
                      std::map<double, int> label_map,
                      std::vector<std::string>* warnings) {
    return load_rows(path, delim, std::move(label_map), true, warnings);
}

void write_ucr_file(const Dataset& dataset, const std::string& path, Delim delim) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write dataset file: " + path);
    const char sep = delim == Delim::Tab ? '\t' : ',';
    char buf[40];
    for (const auto& s : dataset.samples) {
        out << s.label;
        for (double v : s.values) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << sep << buf;
        }
        out << '\n';
    }
    if (!out) throw data_error("write failed: " + path);
}

void write_segments_file(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write segments file: " + path);
    out << "sample\tlabel\tsegments\n";
    for (int i = 0; i < dataset.size(); ++i) {
        out << i << '\t' << dataset.samples[i].label << '\t';
        if (i < static_cast<int>(dataset.segments.size())) {
            const auto& segs = dataset.segments[i];
            for (size_t j = 0; j < segs.size(); ++j) {
                if (j) out << ';';
                out << segs[j].start << ',' << segs[j].len << ',' << segs[j].kind;
            }
        }
        out << '\n';
    }
}

std::vector<std::vector<Segment>> load_segments_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open segments file: " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<Segment>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string idx, label, segs;
        std::getline(ss, idx, '\t');
        std::getline(ss, label, '\t');
        std::getline(ss, segs, '\t');
        std::vector<Segment> row;
        std::stringstream seg_ss(segs);
        std::string one;
        while (std::getline(seg_ss, one, ';')) {
            Segment s;
            if (std::sscanf(one.c_str(), "%d,%d,%d", &s.start, &s.len, &s.kind) != 3)
                throw data_error("bad segment entry '" + one + "' in " + path);
            row.push_back(s);
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<std::vector<int>> sample_batches(const Dataset& dataset, int n, int b,
                                             Rng& rng, bool with_replacement) {
    if (n <= 0 || b <= 0) throw config_error("sample_batches: n and b must be positive");
    if (dataset.size() < 1) throw data_error("sample_batches: empty dataset");

    std::vector<std::vector<int>> batches(n, std::vector<int>(b));
    if (with_replacement) {
        for (auto& batch : batches)
            for (int& idx : batch) idx = rng.uniform_int(0, dataset.size() - 1);
        return batches;
    }

    // Whole shuffled passes, reshuffling whenever a pass is exhausted.
    std::vector<int> order(dataset.size());
    size_t pos = order.size();
    for (auto& batch : batches) {
        for (int& idx : batch) {
            if (pos == order.size()) {
                for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
                std::shuffle(order.begin(), order.end(), rng.engine());
                pos = 0;
            }
            idx = order[pos++];
        }
    }
    return batches;
}

namespace {

double draw_or_zero(Rng& rng, double stddev) {
    return stddev > 0.0 ? rng.gaussian(0.0, stddev) : 0.0;
}

// Linear ramp over a window: up goes -1 -> +1, down goes +1 -> -1.
double ramp(int j, int len, bool down) {
    const double v = len > 1 ? -1.0 + 2.0 * j / (len - 1) : 1.0;
    return down ? -v : v;
}

}  // namespace

Dataset gen_two_patterns(int num_samples, int T, double noise_std, Rng& rng,
                         double w1_frac, double w2_frac) {
    if (T < 40) throw config_error("gen_two_patterns: T must be at least 40");
    if (num_samples < 1) throw config_error("gen_two_patterns: need samples");
    const int w1 = std::max(1, static_cast<int>(std::lround(w1_frac * T)));
    const int w2 = std::max(1, static_cast<int>(std::lround(w2_frac * T)));
    if (w1 + w2 > T) throw config_error("gen_two_patterns: segments cannot fit");

    Dataset d;
    d.name = "two_patterns";
    d.num_classes = 4;
    d.series_length = T;
    for (int i = 0; i < 4; ++i) d.label_map.emplace(i, i);

    for (int i = 0; i < num_samples; ++i) {
        const int kind1 = rng.uniform_int(0, 1);
        const int kind2 = rng.uniform_int(0, 1);
        const int s1 = rng.uniform_int(0, T - w1 - w2);
        const int s2 = rng.uniform_int(s1 + w1, T - w2);

        TimeSeriesSample sample;
        sample.label = 2 * kind1 + kind2;
        sample.values.resize(T);
        for (int t = 0; t < T; ++t) sample.values[t] = draw_or_zero(rng, noise_std);
        for (int j = 0; j < w1; ++j) sample.values[s1 + j] += ramp(j, w1, kind1 == 1);
        for (int j = 0; j < w2; ++j) sample.values[s2 + j] += ramp(j, w2, kind2 == 1);
        z_normalize(sample.values);

        d.samples.push_back(std::move(sample));
        d.segments.push_back({{s1, w1, kind1}, {s2, w2, kind2}});
    }
    return d;
}

Dataset gen_cbf(int num_samples, int T, Rng& rng, double eta_std, double eps_std) {
    if (T < 32) throw config_error("gen_cbf: T must be at least 32");
    if (num_samples < 1) throw config_error("gen_cbf: need samples");

    Dataset d;
    d.name = "cbf";
    d.num_classes = 3;
    d.series_length = T;
    for (int i = 0; i < 3; ++i) d.label_map.emplace(i, i);

    const int a_lo = std::max(1, static_cast<int>(std::lround(0.05 * T)));
    const int a_hi = static_cast<int>(std::lround(0.25 * T));
    const int len_lo = static_cast<int>(std::lround(0.25 * T));
    const int len_hi = static_cast<int>(std::lround(0.60 * T));

    for (int i = 0; i < num_samples; ++i) {
        const int cls = rng.uniform_int(0, 2);  // 0 cylinder, 1 bell, 2 funnel
        const int a = rng.uniform_int(a_lo, a_hi);
        const int len = rng.uniform_int(len_lo, len_hi);
        const int b = std::min(a + len, T - 1);
        const double amp = 6.0 + draw_or_zero(rng, eta_std);

        TimeSeriesSample sample;
        sample.label = cls;
        sample.values.resize(T);
        for (int t = 0; t < T; ++t) {
            double v = draw_or_zero(rng, eps_std);
            if (t >= a && t < b) {
                if (cls == 0) v += amp;
                else if (cls == 1) v += amp * static_cast<double>(t - a) / (b - a);
                else v += amp * static_cast<double>(b - t) / (b - a);
            }
            sample.values[t] = v;
        }
        if (!z_normalize(sample.values)) ++d.num_constant;
        d.samples.push_back(std::move(sample));
        d.segments.push_back({{a, b - a, cls}});
    }
    return d;
}

// ---- manifest ----

namespace {

Delim parse_delim(const std::string& s) {
    if (s == "tab") return Delim::Tab;
    if (s == "comma") return Delim::Comma;
    throw config_error("manifest: unknown delimiter '" + s + "' (tab|comma)");
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw config_error("manifest parse error in " + path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("datasets") || !j["datasets"].is_array())
        throw config_error("manifest must be an object with a 'datasets' array");
    for (const auto& [key, _] : j.items())
        if (key != "datasets")
            throw config_error("manifest: unknown key '" + key + "'");

    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    std::vector<ManifestEntry> out;
    std::set<std::string> names;
    for (const auto& e : j["datasets"]) {
        ManifestEntry m;
        for (const auto& [key, val] : e.items()) {
            if (key == "name") m.name = val.get<std::string>();
            else if (key == "role") m.role = val.get<std::string>();
            else if (key == "train") m.train_path = resolve(val.get<std::string>());
            else if (key == "test") m.test_path = resolve(val.get<std::string>());
            else if (key == "delimiter") m.delim = parse_delim(val.get<std::string>());
            else if (key == "merge_splits") m.merge_splits = val.get<bool>();
            else throw config_error("manifest: unknown key '" + key + "'");
        }
        if (m.name.empty()) throw config_error("manifest: dataset entry without name");
        if (m.role != "source" && m.role != "validation" && m.role != "target")
            throw config_error("manifest: dataset '" + m.name +
                               "': role must be source|validation|target");
        if (m.train_path.empty())
            throw config_error("manifest: dataset '" + m.name + "' has no train path");
        if (m.role == "validation" && m.test_path.empty())
            throw config_error("manifest: validation dataset '" + m.name +
                               "' needs a test path");
        if (!names.insert(m.name).second)
            throw config_error("manifest: duplicate dataset name '" + m.name + "'");
        out.push_back(std::move(m));
    }
    return out;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file for hashing: " + path);
    uint64_t h = 14695981039346656037ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

}  // namespace ctn
