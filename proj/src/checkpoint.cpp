#include "ctn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace ctn {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'T', 'N', '1'};

std::string kind_name(BlockKind k) {
    return k == BlockKind::Type1 ? "type1" : "type2";
}

BlockKind parse_kind(const std::string& s) {
    if (s == "type1") return BlockKind::Type1;
    if (s == "type2") return BlockKind::Type2;
    throw data_error("checkpoint: unknown block kind '" + s + "'");
}

json arch_to_json(const ArchConfig& a) {
    json j;
    j["num_blocks"] = a.num_blocks;
    j["lengths"] = a.lengths;
    j["filters_per_length"] = a.filters_per_length;
    j["input_channels"] = a.input_channels;
    std::vector<std::string> kinds;
    for (auto k : a.resolved_kinds()) kinds.push_back(kind_name(k));
    j["kinds"] = kinds;
    return j;
}

ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    a.num_blocks = j.at("num_blocks").get<int>();
    a.lengths = j.at("lengths").get<std::vector<int>>();
    a.filters_per_length = j.at("filters_per_length").get<int>();
    a.input_channels = j.at("input_channels").get<int>();
    for (const auto& k : j.at("kinds")) a.kinds.push_back(parse_kind(k.get<std::string>()));
    return a;
}

void write_f32_array(std::ofstream& out, const std::vector<double>& v) {
    std::vector<float> f(v.size());
    for (size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
}

void read_f32_array(std::ifstream& in, std::vector<double>& v, size_t len) {
    std::vector<float> f(len);
    in.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(len * sizeof(float)));
    if (!in) throw data_error("checkpoint: truncated array payload");
    v.resize(len);
    for (size_t i = 0; i < len; ++i) v[i] = static_cast<double>(f[i]);
}

}  // namespace

void save_checkpoint(const std::string& path, CtnModel& model,
                     std::vector<Head>* heads,
                     const std::map<std::string, AdamState>* optimizers,
                     uint64_t rng_seed, int64_t epoch, uint64_t source_hash) {
    json header;
    header["arch"] = arch_to_json(model.arch);
    header["name"] = model.name;
    header["precision"] = model.precision == Precision::F32 ? "float32" : "float64";
    header["freeze_mask"] = std::vector<bool>(model.freeze_mask.begin(),
                                              model.freeze_mask.end());
    header["rng_seed"] = rng_seed;
    header["provenance"] = {{"epoch", epoch}, {"source_hash", source_hash}};

    json arrays = json::array();
    std::vector<const std::vector<double>*> payload;
    auto add = [&](const std::string& name, const std::vector<double>& v) {
        arrays.push_back({{"name", name}, {"len", v.size()}, {"dtype", "f32"}});
        payload.push_back(&v);
    };
    for (const auto& e : param_entries(model)) add(e.name, *e.values);
    for (const auto& e : stat_entries(model)) add(e.name, *e.values);

    json heads_json = json::array();
    if (heads) {
        for (auto& h : *heads) {
            heads_json.push_back({{"task", h.task_name}, {"classes", h.num_classes()}});
            for (const auto& e : param_entries(h)) add(e.name, *e.values);
        }
    }
    header["heads"] = heads_json;

    json optim_json = json::array();
    std::vector<std::vector<unsigned char>> optim_blobs;
    if (optimizers) {
        for (const auto& [owner, state] : *optimizers) {
            optim_blobs.push_back(serialize_adam(state));
            optim_json.push_back({{"owner", owner}, {"len", optim_blobs.back().size()}});
        }
    }
    header["optimizers"] = optim_json;
    header["arrays"] = arrays;

    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    const uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* v : payload) write_f32_array(out, *v);
    for (const auto& blob : optim_blobs)
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size()));
    if (!out) throw data_error("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw data_error("not a CTN1 checkpoint: " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion)
        throw data_error("incompatible checkpoint version " + std::to_string(version) +
                         " (supported: " + std::to_string(kCheckpointVersion) + ")");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw data_error("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(hs);
    } catch (const std::exception& e) {
        throw data_error(std::string("checkpoint: bad header: ") + e.what());
    }

    CheckpointData ck;
    const ArchConfig arch = arch_from_json(header.at("arch"));
    const Precision prec = header.at("precision").get<std::string>() == "float32"
                               ? Precision::F32
                               : Precision::F64;
    // Build with a throwaway init; every parameter is overwritten below.
    Rng rng(0);
    ck.model = build_ctn(arch, rng, Precision::F64);
    ck.model.precision = prec;
    ck.model.name = header.value("name", "ctn");
    const auto mask = header.at("freeze_mask").get<std::vector<bool>>();
    ck.model.freeze_mask.assign(mask.begin(), mask.end());
    ck.rng_seed = header.at("rng_seed").get<uint64_t>();
    ck.epoch = header.at("provenance").at("epoch").get<int64_t>();
    ck.source_hash = header.at("provenance").at("source_hash").get<uint64_t>();
    ck.model.seed = ck.rng_seed;

    for (const auto& h : header.at("heads")) {
        Head head;
        head.task_name = h.at("task").get<std::string>();
        const int k = h.at("classes").get<int>();
        head.weights = Mat(k, ck.model.embedding_dim());
        head.bias.assign(k, 0.0);
        ck.heads.push_back(std::move(head));
    }

    // Expected array walk mirrors the writer exactly.
    std::vector<ParamEntry> expected;
    for (auto& e : param_entries(ck.model)) expected.push_back(e);
    for (auto& e : stat_entries(ck.model)) expected.push_back(e);
    for (auto& h : ck.heads)
        for (auto& e : param_entries(h)) expected.push_back(e);

    const auto& arrays = header.at("arrays");
    if (arrays.size() != expected.size())
        throw data_error("checkpoint: array count mismatch (file " +
                         std::to_string(arrays.size()) + ", model " +
                         std::to_string(expected.size()) + ")");
    for (size_t i = 0; i < expected.size(); ++i) {
        const auto& a = arrays.at(i);
        if (a.at("name").get<std::string>() != expected[i].name)
            throw data_error("checkpoint: array order mismatch at '" +
                             a.at("name").get<std::string>() + "' (expected '" +
                             expected[i].name + "')");
        if (a.at("len").get<size_t>() != expected[i].values->size())
            throw data_error("checkpoint: shape mismatch for array '" +
                             expected[i].name + "'");
        read_f32_array(in, *expected[i].values, expected[i].values->size());
    }

    for (const auto& o : header.at("optimizers")) {
        const auto owner = o.at("owner").get<std::string>();
        const auto len = o.at("len").get<size_t>();
        std::vector<unsigned char> blob(len);
        in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(len));
        if (!in) throw data_error("checkpoint: truncated optimizer state");
        ck.optimizers.emplace(owner, deserialize_adam(blob));
    }
    return ck;
}

}  // namespace ctn
