#pragma once

// Minimal NRRD reader/writer: NRRD0004/0005 magic, types short/float/uchar,
// rank 2 or 3, axis-aligned space directions, little-endian, raw or gzip
// encoding. Anything outside this subset fails loudly. The sizes field is
// stored in the same order as Volume::dims (slowest axis first), matching
// what the writer emits.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vilu/volume.hpp"

namespace vilu {

enum class NrrdType { Short, Float, Uchar };
enum class NrrdEncoding { Raw, Gzip };

struct NrrdHeader {
    NrrdType type = NrrdType::Float;
    NrrdEncoding encoding = NrrdEncoding::Raw;
    std::vector<std::size_t> sizes;
    std::vector<double> spacing;
    std::vector<double> origin;
};

namespace detail {

inline std::vector<std::uint8_t> gzip_compress(const std::uint8_t* data, std::size_t len) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw FormatError("nrrd: deflateInit failed");
    std::vector<std::uint8_t> out(deflateBound(&zs, uLong(len)));
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = uInt(len);
    zs.next_out = out.data();
    zs.avail_out = uInt(out.size());
    int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw FormatError("nrrd: gzip compression failed");
    out.resize(zs.total_out);
    return out;
}

inline std::vector<std::uint8_t> gzip_decompress(const std::uint8_t* data, std::size_t len,
                                                 std::size_t expected) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("nrrd: inflateInit failed");
    std::vector<std::uint8_t> out(expected);
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = uInt(len);
    zs.next_out = out.data();
    zs.avail_out = uInt(out.size());
    int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END)
        throw FormatError("nrrd: gzip payload truncated or corrupt");
    return out;
}

inline std::size_t type_size(NrrdType t) {
    switch (t) {
        case NrrdType::Short: return 2;
        case NrrdType::Float: return 4;
        case NrrdType::Uchar: return 1;
    }
    return 0;
}

// Parse "(a,b,c)" style vectors; axis-aligned check happens at the caller.
inline std::vector<double> parse_vector(const std::string& s) {
    std::vector<double> v;
    std::string body = s;
    body.erase(std::remove_if(body.begin(), body.end(),
                              [](char c) { return c == '(' || c == ')'; }),
               body.end());
    std::replace(body.begin(), body.end(), ',', ' ');
    std::istringstream is(body);
    double x;
    while (is >> x) v.push_back(x);
    return v;
}

inline std::pair<NrrdHeader, std::vector<std::uint8_t>> read_nrrd_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("nrrd: cannot open " + path);
    std::string magic;
    std::getline(f, magic);
    if (!magic.empty() && magic.back() == '\r') magic.pop_back();
    if (magic != "NRRD0004" && magic != "NRRD0005")
        throw FormatError("nrrd: unsupported magic '" + magic + "' in " + path);
    NrrdHeader h;
    std::size_t dimension = 0;
    bool little = true;
    std::vector<std::vector<double>> directions;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) break;  // header/payload separator
        if (line[0] == '#') continue;
        auto colon = line.find(": ");
        if (colon == std::string::npos) throw FormatError("nrrd: malformed header line '" + line + "'");
        std::string key = line.substr(0, colon);
        std::string val = line.substr(colon + 2);
        if (key == "type") {
            if (val == "short") h.type = NrrdType::Short;
            else if (val == "float") h.type = NrrdType::Float;
            else if (val == "uchar" || val == "unsigned char") h.type = NrrdType::Uchar;
            else throw FormatError("nrrd: unsupported type '" + val + "'");
        } else if (key == "dimension") {
            dimension = std::stoul(val);
            if (dimension != 2 && dimension != 3)
                throw FormatError("nrrd: unsupported dimension " + val);
        } else if (key == "sizes") {
            std::istringstream is(val);
            std::size_t s;
            while (is >> s) h.sizes.push_back(s);
        } else if (key == "space directions") {
            std::istringstream is(val);
            std::string tok;
            while (is >> tok) directions.push_back(parse_vector(tok));
        } else if (key == "space origin") {
            h.origin = parse_vector(val);
        } else if (key == "endian") {
            little = (val == "little");
        } else if (key == "encoding") {
            if (val == "raw") h.encoding = NrrdEncoding::Raw;
            else if (val == "gzip" || val == "gz") h.encoding = NrrdEncoding::Gzip;
            else throw FormatError("nrrd: unsupported encoding '" + val + "'");
        }
        // other fields (space, kinds, ...) are ignored
    }
    if (!little) throw FormatError("nrrd: big-endian payloads are unsupported");
    if (dimension == 0 || h.sizes.size() != dimension)
        throw FormatError("nrrd: sizes/dimension mismatch in " + path);
    if (!directions.empty()) {
        if (directions.size() != dimension)
            throw FormatError("nrrd: space directions count mismatch");
        for (std::size_t i = 0; i < dimension; ++i) {
            for (std::size_t j = 0; j < directions[i].size(); ++j)
                if (i != j && directions[i][j] != 0.0)
                    throw FormatError("nrrd: non-axis-aligned space directions are unsupported");
            if (i >= directions[i].size() || directions[i][i] <= 0.0)
                throw FormatError("nrrd: non-axis-aligned space directions are unsupported");
            h.spacing.push_back(directions[i][i]);
        }
    } else {
        h.spacing.assign(dimension, 1.0);
    }
    if (h.origin.empty()) h.origin.assign(dimension, 0.0);

    std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
    std::size_t expected = type_size(h.type);
    for (auto s : h.sizes) expected *= s;
    if (h.encoding == NrrdEncoding::Gzip) {
        payload = gzip_decompress(payload.data(), payload.size(), expected);
    }
    if (payload.size() != expected)
        throw FormatError("nrrd: payload has " + std::to_string(payload.size()) +
                          " bytes, header promises " + std::to_string(expected));
    return {h, payload};
}

}  // namespace detail

inline Volume read_nrrd_volume(const std::string& path) {
    auto [h, payload] = detail::read_nrrd_raw(path);
    Volume v;
    v.dims = h.sizes;
    v.spacing = h.spacing;
    v.origin = h.origin;
    v.data.resize(v.voxels());
    switch (h.type) {
        case NrrdType::Float:
            std::memcpy(v.data.data(), payload.data(), payload.size());
            break;
        case NrrdType::Short: {
            const std::int16_t* p = reinterpret_cast<const std::int16_t*>(payload.data());
            for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = float(p[i]);
            break;
        }
        case NrrdType::Uchar:
            for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = float(payload[i]);
            break;
    }
    v.validate();
    return v;
}

inline LabelMap read_nrrd_labels(const std::string& path, int num_classes) {
    auto [h, payload] = detail::read_nrrd_raw(path);
    if (h.type == NrrdType::Float)
        throw FormatError("nrrd: label maps must use an integer type, got float in " + path);
    LabelMap l;
    l.dims = h.sizes;
    l.spacing = h.spacing;
    l.origin = h.origin;
    l.num_classes = num_classes;
    l.data.resize(l.voxels());
    if (h.type == NrrdType::Uchar) {
        std::copy(payload.begin(), payload.end(), l.data.begin());
    } else {
        const std::int16_t* p = reinterpret_cast<const std::int16_t*>(payload.data());
        for (std::size_t i = 0; i < l.data.size(); ++i) {
            if (p[i] < 0) throw LabelError("nrrd: negative label value in " + path);
            l.data[i] = std::uint8_t(p[i]);
        }
    }
    l.validate();
    return l;
}

namespace detail {

inline void write_nrrd_bytes(const std::string& path, const NrrdHeader& h,
                             const std::uint8_t* bytes, std::size_t len) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("nrrd: cannot write " + path);
    f << "NRRD0004\n";
    f << "type: " << (h.type == NrrdType::Short ? "short"
                      : h.type == NrrdType::Float ? "float" : "uchar")
      << "\n";
    f << "dimension: " << h.sizes.size() << "\n";
    f << "space: " << (h.sizes.size() == 3 ? "left-posterior-superior" : "right-anterior") << "\n";
    f << "sizes:";
    for (auto s : h.sizes) f << " " << s;
    f << "\n";
    f << "space directions:";
    for (std::size_t i = 0; i < h.sizes.size(); ++i) {
        f << " (";
        for (std::size_t j = 0; j < h.sizes.size(); ++j)
            f << (j ? "," : "") << (i == j ? h.spacing[i] : 0.0);
        f << ")";
    }
    f << "\n";
    f << "space origin: (";
    for (std::size_t i = 0; i < h.sizes.size(); ++i)
        f << (i ? "," : "") << (i < h.origin.size() ? h.origin[i] : 0.0);
    f << ")\n";
    f << "endian: little\n";
    f << "encoding: " << (h.encoding == NrrdEncoding::Gzip ? "gzip" : "raw") << "\n";
    f << "\n";
    if (h.encoding == NrrdEncoding::Gzip) {
        auto z = gzip_compress(bytes, len);
        f.write(reinterpret_cast<const char*>(z.data()), std::streamsize(z.size()));
    } else {
        f.write(reinterpret_cast<const char*>(bytes), std::streamsize(len));
    }
}

}  // namespace detail

inline void write_nrrd(const std::string& path, const Volume& v, NrrdType type = NrrdType::Float,
                       NrrdEncoding encoding = NrrdEncoding::Raw) {
    v.validate();
    NrrdHeader h;
    h.type = type;
    h.encoding = encoding;
    h.sizes = v.dims;
    h.spacing = v.spacing;
    h.origin = v.origin;
    if (type == NrrdType::Float) {
        detail::write_nrrd_bytes(path, h, reinterpret_cast<const std::uint8_t*>(v.data.data()),
                                 v.data.size() * 4);
    } else if (type == NrrdType::Short) {
        std::vector<std::int16_t> buf(v.data.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = std::int16_t(std::lrintf(v.data[i]));
        detail::write_nrrd_bytes(path, h, reinterpret_cast<const std::uint8_t*>(buf.data()),
                                 buf.size() * 2);
    } else {
        std::vector<std::uint8_t> buf(v.data.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = std::uint8_t(std::lrintf(v.data[i]));
        detail::write_nrrd_bytes(path, h, buf.data(), buf.size());
    }
}

inline void write_nrrd(const std::string& path, const LabelMap& l,
                       NrrdEncoding encoding = NrrdEncoding::Raw) {
    l.validate();
    NrrdHeader h;
    h.type = NrrdType::Uchar;
    h.encoding = encoding;
    h.sizes = l.dims;
    h.spacing = l.spacing;
    h.origin = l.origin;
    detail::write_nrrd_bytes(path, h, l.data.data(), l.data.size());
}

}  // namespace vilu
