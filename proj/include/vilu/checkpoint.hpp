#pragma once

// Checkpoint container: 8-byte magic, uint64 little-endian header length, a
// JSON header (config blob, tensor manifest with name/shape/dtype/offset,
// optional extra state), then raw little-endian tensor payloads.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vilu/network.hpp"

namespace vilu {

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'L', 'U', 'C', 'K', 'P', 'T'};

template <class T>
void save_checkpoint_tensors(const std::string& path,
                             const std::vector<std::pair<std::string, Tensor<T>>>& tensors,
                             const nlohmann::json& config,
                             const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["config"] = config;
    header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    header["extra"] = extra;
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest.push_back({{"name", name},
                            {"shape", t.shape()},
                            {"dtype", sizeof(T) == 4 ? "f32" : "f64"},
                            {"offset", offset}});
        offset += t.size() * sizeof(T);
    }
    header["tensors"] = manifest;
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot write " + path);
    f.write(kCheckpointMagic, 8);
    std::uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data().data()),
                std::streamsize(t.size() * sizeof(T)));
}

namespace detail {

inline nlohmann::json read_checkpoint_header(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    if (std::uint64_t(f.gcount()) != hlen)
        throw FormatError("checkpoint: truncated header in " + path);
    try {
        return nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: invalid header JSON: ") + e.what());
    }
}

}  // namespace detail

// Fills the given tensors by name; every file tensor must exist in the list
// with a matching shape and every listed tensor must be present in the file.
// Returns the header (config under "config", extra state under "extra").
template <class T>
nlohmann::json load_checkpoint_tensors(const std::string& path,
                                       std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    nlohmann::json header = detail::read_checkpoint_header(f, path);
    std::string want_dtype = sizeof(T) == 4 ? "f32" : "f64";
    if (header.at("dtype").get<std::string>() != want_dtype)
        throw FormatError("checkpoint: dtype " + header["dtype"].get<std::string>() +
                          " does not match requested " + want_dtype);
    std::streampos payload_base = f.tellg();
    std::size_t loaded = 0;
    for (const auto& e : header.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        Tensor<T>* t = nullptr;
        for (auto& [n, tt] : tensors)
            if (n == name) t = &tt;
        if (!t) throw FormatError("checkpoint: unknown tensor '" + name + "'");
        Shape shape = e.at("shape").get<Shape>();
        if (shape != t->shape())
            throw FormatError("checkpoint: shape mismatch for '" + name + "': file has " +
                              shape_str(shape) + ", expected " + shape_str(t->shape()));
        f.seekg(payload_base + std::streampos(e.at("offset").get<std::uint64_t>()));
        f.read(reinterpret_cast<char*>(t->mutable_data().data()),
               std::streamsize(t->size() * sizeof(T)));
        if (std::size_t(f.gcount()) != t->size() * sizeof(T))
            throw FormatError("checkpoint: truncated payload for '" + name + "'");
        ++loaded;
    }
    if (loaded != tensors.size())
        throw FormatError("checkpoint: file holds " + std::to_string(loaded) +
                          " tensors, expected " + std::to_string(tensors.size()));
    return header;
}

// ---- network convenience wrappers ----

template <class T>
void save_checkpoint(const std::string& path, const Network<T>& net,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    save_checkpoint_tensors(path, net.params, nlohmann::json(net.cfg), extra);
}

template <class T>
nlohmann::json load_checkpoint(const std::string& path, Network<T>& net) {
    return load_checkpoint_tensors(path, net.params).value("extra", nlohmann::json::object());
}

// Rebuilds the network described by the file's own config.
template <class T>
Network<T> load_checkpoint_network(const std::string& path, nlohmann::json* extra_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    nlohmann::json header = detail::read_checkpoint_header(f, path);
    f.close();
    NetworkConfig cfg = header.at("config").get<NetworkConfig>();
    Network<T> net = make_network<T>(cfg, /*seed=*/0, /*zero_down_proj=*/false);
    nlohmann::json extra = load_checkpoint(path, net);
    if (extra_out) *extra_out = extra;
    return net;
}

}  // namespace vilu
