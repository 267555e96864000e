#pragma once

// Scalar image grids with physical voxel spacing, and the aligned integer
// class grids. Rank 2 or 3; row-major with the fastest-varying axis last.

#include <cstdint>
#include <string>
#include <vector>

#include "vilu/errors.hpp"

namespace vilu {

struct Volume {
    std::vector<std::size_t> dims;     // rank 2: {H, W}; rank 3: {D, H, W}
    std::vector<float> data;           // dims product entries
    std::vector<double> spacing;       // mm per axis, aligned with dims
    std::vector<double> origin;        // physical offset, mm

    std::size_t voxels() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    void validate() const {
        if (dims.size() != 2 && dims.size() != 3)
            throw FormatError("volume: rank must be 2 or 3, got " + std::to_string(dims.size()));
        if (spacing.size() != dims.size()) throw FormatError("volume: spacing rank mismatch");
        for (auto s : spacing)
            if (!(s > 0)) throw FormatError("volume: spacing must be positive");
        if (data.size() != voxels()) throw FormatError("volume: data size mismatch");
    }
};

struct LabelMap {
    std::vector<std::size_t> dims;
    std::vector<std::uint8_t> data;
    std::vector<double> spacing;
    std::vector<double> origin;
    int num_classes = 2;

    std::size_t voxels() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    void validate() const {
        if (data.size() != voxels()) throw FormatError("label map: data size mismatch");
        for (auto v : data)
            if (int(v) >= num_classes)
                throw LabelError("label value " + std::to_string(int(v)) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
    }
};

struct Sample {
    Volume image;
    LabelMap label;
    std::string case_id;
    std::string split;  // train | val | test
};

}  // namespace vilu
