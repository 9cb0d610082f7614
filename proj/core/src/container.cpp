#include "vesselgan/container.hpp"

#include <cstring>
#include <fstream>

#include "vesselgan/errors.hpp"
#include "vesselgan/rng.hpp"

namespace vgan {

using json = nlohmann::json;

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t payload_hash(const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : arrays) {
        h = fnv1a64(name, h);
        h = fnv1a64(t->data(), sizeof(double) * static_cast<std::size_t>(t->numel()), h);
    }
    return h;
}

}  // namespace

const Tensor* Container::find(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) return &t;
    }
    return nullptr;
}

void save_container(const std::filesystem::path& path, const char* magic8, json extra_meta,
                    const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    json meta = std::move(extra_meta);
    meta["format_version"] = 1;
    json arr = json::array();
    for (const auto& [name, t] : arrays) {
        arr.push_back({{"name", name}, {"shape", t->shape()}});
    }
    meta["arrays"] = arr;
    meta["payload_hash"] = hash_hex(payload_hash(arrays));

    const std::string meta_str = meta.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw WeightsFormatError("cannot open for writing: " + path.string());
    f.write(magic8, 8);
    const std::uint64_t len = meta_str.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& [name, t] : arrays) {
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(sizeof(double) * t->numel()));
    }
    if (!f) throw WeightsFormatError("write failed: " + path.string());
}

Container load_container(const std::filesystem::path& path, const char* magic8) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw WeightsFormatError("cannot open: " + path.string());
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, magic8, 8) != 0) {
        throw WeightsFormatError("bad magic in " + path.string());
    }
    std::uint64_t len = 0;
    if (!f.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (std::uint64_t(1) << 32)) {
        throw WeightsFormatError("bad metadata length in " + path.string());
    }
    std::string meta_str(len, '\0');
    if (!f.read(meta_str.data(), static_cast<std::streamsize>(len))) {
        throw WeightsFormatError("truncated metadata in " + path.string());
    }
    Container c;
    try {
        c.meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw WeightsFormatError("metadata parse error in " + path.string() + ": " + e.what());
    }
    if (!c.meta.contains("arrays") || !c.meta["arrays"].is_array()) {
        throw WeightsFormatError("metadata missing arrays list in " + path.string());
    }
    for (const auto& a : c.meta["arrays"]) {
        const std::string name = a.at("name").get<std::string>();
        const std::vector<int> shape = a.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        if (!f.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(sizeof(double) * t.numel()))) {
            throw WeightsFormatError("truncated payload for array '" + name + "' in " + path.string());
        }
        c.arrays.emplace_back(name, std::move(t));
    }
    std::vector<std::pair<std::string, const Tensor*>> views;
    views.reserve(c.arrays.size());
    for (const auto& [name, t] : c.arrays) views.emplace_back(name, &t);
    const std::string expect = c.meta.value("payload_hash", "");
    if (expect != hash_hex(payload_hash(views))) {
        throw ChecksumError("payload hash mismatch in " + path.string());
    }
    return c;
}

void save_checkpoint(Network& network, std::int64_t step, const std::filesystem::path& path) {
    const std::string spec_json = network.spec().to_json();
    json meta;
    meta["kind"] = "checkpoint";
    meta["spec"] = spec_json;
    meta["spec_hash"] = hash_hex(fnv1a64(spec_json));
    meta["step"] = step;
    std::vector<std::pair<std::string, const Tensor*>> views;
    for (const auto& [name, t] : network.arrays()) views.emplace_back(name, t);
    save_container(path, kCheckpointMagic, std::move(meta), views);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    Container c = load_container(path, kCheckpointMagic);
    const std::string spec_json = c.meta.at("spec").get<std::string>();
    const std::string stored_hash = c.meta.at("spec_hash").get<std::string>();
    if (stored_hash != hash_hex(fnv1a64(spec_json))) {
        throw ChecksumError("spec hash mismatch in " + path.string());
    }
    LoadedCheckpoint out;
    out.network = build_network(NetworkSpec::from_json(spec_json), 0);
    out.step = c.meta.value("step", std::int64_t(0));
    for (auto& [name, dst] : out.network->arrays()) {
        const Tensor* src = c.find(name);
        if (!src) throw WeightsFormatError("checkpoint missing array '" + name + "'");
        if (src->shape() != dst->shape()) {
            throw WeightsFormatError("checkpoint array '" + name + "' has shape " +
                                     src->shape_str() + ", expected " + dst->shape_str());
        }
        *dst = *src;
    }
    return out;
}

}  // namespace vgan
