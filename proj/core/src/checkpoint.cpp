#include "prer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "prer/error.hpp"

namespace prer {

namespace {

void put_le(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xff));
}

double get_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
    return std::bit_cast<double>(bits);
}

}  // namespace

void Checkpoint::add(const ParamRefs& refs) {
    for (const auto& r : refs) {
        const auto v = r.tensor->values();
        tensors.push_back({r.name, r.tensor->shape(), std::vector<double>(v.begin(), v.end())});
    }
}

const CheckpointEntry& Checkpoint::find(const std::string& name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.name == name; });
    if (it == tensors.end()) throw DataError("checkpoint has no tensor named '" + name + "'");
    return *it;
}

void Checkpoint::restore(const ParamRefs& refs) const {
    for (const auto& r : refs) {
        const auto& e = find(r.name);
        if (e.shape != r.tensor->shape())
            throw DataError("checkpoint tensor '" + r.name + "' has shape " + to_string(e.shape) + ", expected " +
                            to_string(r.tensor->shape()));
        auto dst = r.tensor->data();
        std::copy(e.values.begin(), e.values.end(), dst.begin());
    }
}

std::filesystem::path save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest) {
    std::filesystem::path blob = manifest;
    blob.replace_extension(".bin");

    nlohmann::json entries = nlohmann::json::array();
    std::vector<unsigned char> bytes;
    for (const auto& e : ckpt.tensors) {
        entries.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", "f64"}, {"offset", bytes.size()}});
        for (double v : e.values) put_le(bytes, v);
    }
    nlohmann::json doc = {{"format", kCheckpointFormat},
                          {"blob", blob.filename().string()},
                          {"byte_order", "little"},
                          {"blob_bytes", bytes.size()},
                          {"entries", entries},
                          {"int_arrays", ckpt.int_arrays},
                          {"meta", ckpt.meta}};

    if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
    std::ofstream bin(blob, std::ios::binary);
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!bin) throw DataError("cannot write checkpoint blob " + blob.string());
    std::ofstream js(manifest);
    js << doc.dump(2) << '\n';
    if (!js) throw DataError("cannot write checkpoint manifest " + manifest.string());
    return blob;
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest) {
    std::ifstream js(manifest);
    if (!js) throw DataError("cannot open checkpoint manifest " + manifest.string());
    nlohmann::json doc;
    try {
        js >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint manifest " + manifest.string() + " is not valid JSON: " + e.what());
    }
    if (doc.value("format", "") != kCheckpointFormat)
        throw DataError("checkpoint " + manifest.string() + " is not in " + kCheckpointFormat + " format");

    const auto blob = manifest.parent_path() / doc.at("blob").get<std::string>();
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) throw DataError("cannot open checkpoint blob " + blob.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    ckpt.meta = doc.value("meta", nlohmann::json::object());
    for (const auto& e : doc.at("entries")) {
        CheckpointEntry entry;
        entry.name = e.at("name").get<std::string>();
        entry.shape = e.at("shape").get<Shape>();
        if (e.at("dtype").get<std::string>() != "f64")
            throw DataError("checkpoint entry '" + entry.name + "' has unsupported dtype");
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t n = numel(entry.shape);
        if (offset + 8 * n > bytes.size())
            throw FormatError(bytes.size(), "checkpoint blob truncated while reading '" + entry.name + "'");
        entry.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) entry.values[k] = get_le(bytes.data() + offset + 8 * k);
        ckpt.tensors.push_back(std::move(entry));
    }
    if (doc.contains("int_arrays"))
        ckpt.int_arrays = doc.at("int_arrays").get<std::map<std::string, std::vector<std::int64_t>>>();
    return ckpt;
}

}  // namespace prer
