#pragma once

#include "ctnet/ctrnn.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace ctnet::ctrnn {

inline constexpr int kCheckpointVersion = 1;

/// Versioned JSON snapshot of a trained network; doubles round-trip exactly.
struct Checkpoint {
    Topology topology;
    Weights weights;
    std::uint64_t seed = 0;
    std::uint64_t update_count = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& cp);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ctnet::ctrnn
