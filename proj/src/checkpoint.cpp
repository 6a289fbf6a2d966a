#include "chardiff/checkpoint.hpp"

#include <filesystem>

#include "chardiff/io.hpp"
#include "chardiff/nn.hpp"

namespace fs = std::filesystem;

namespace chardiff {

namespace {
constexpr const char* kFormat = "chardiff-ckpt-1";

std::string tensor_file(const std::string& name) { return "tensors/" + name + ".bin"; }
}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore& ps, const ordered_json& meta,
                     const std::map<std::string, const Tensor*>& extra) {
    fs::create_directories(fs::path(dir) / "tensors");
    ordered_json table = ordered_json::object();
    auto emit = [&](const std::string& name, const Tensor& t) {
        ordered_json entry;
        entry["shape"] = t.shape;
        entry["file"] = tensor_file(name);
        table[name] = entry;
        save_tensor_blob((fs::path(dir) / tensor_file(name)).string(), t);
    };
    for (const Param* p : ps.all()) emit(p->name, p->value);
    for (const auto& [name, t] : extra) emit(name, *t);

    ordered_json manifest;
    manifest["format"] = kFormat;
    manifest["meta"] = meta;
    manifest["tensors"] = table;
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

ordered_json load_checkpoint_manifest(const std::string& dir) {
    std::string path = (fs::path(dir) / "manifest.json").string();
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("corrupt checkpoint manifest at " + path + ": " + e.what());
    }
    if (!manifest.contains("format") || manifest["format"] != kFormat)
        throw std::runtime_error("unrecognized checkpoint format in " + path);
    if (!manifest.contains("tensors") || !manifest["tensors"].is_object())
        throw std::runtime_error("corrupt checkpoint manifest (no tensor table) at " + path);
    return manifest;
}

bool checkpoint_has_tensor(const ordered_json& manifest, const std::string& name) {
    return manifest["tensors"].contains(name);
}

Tensor load_checkpoint_tensor(const std::string& dir, const ordered_json& manifest,
                              const std::string& name) {
    if (!checkpoint_has_tensor(manifest, name))
        throw std::runtime_error("checkpoint missing tensor: " + name);
    const auto& entry = manifest["tensors"][name];
    std::vector<int> shape = entry["shape"].get<std::vector<int>>();
    std::string file = (fs::path(dir) / entry["file"].get<std::string>()).string();
    if (!fs::exists(file))
        throw std::runtime_error("checkpoint missing blob file for tensor: " + name);
    return load_tensor_blob(file, shape);
}

void load_checkpoint_params(const std::string& dir, const ordered_json& manifest,
                            ParamStore& ps) {
    for (Param* p : ps.all()) {
        Tensor t = load_checkpoint_tensor(dir, manifest, p->name);
        if (t.shape != p->value.shape)
            throw std::runtime_error("checkpoint tensor shape mismatch for " + p->name + ": " +
                                     shape_str(t.shape) + " vs " + shape_str(p->value.shape));
        p->value = std::move(t);
    }
}

std::string checkpoint_hash(const std::string& dir) {
    std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    uint64_t h = file_checksum(manifest_path);
    ordered_json manifest = load_checkpoint_manifest(dir);
    for (auto it = manifest["tensors"].begin(); it != manifest["tensors"].end(); ++it) {
        std::string file = (fs::path(dir) / it.value()["file"].get<std::string>()).string();
        h = fnv1a(&h, sizeof(h), file_checksum(file) ^ h);
    }
    return hex64(h);
}

}  // namespace chardiff
