#pragma once

#include <string>
#include <vector>

#include "man/arch.hpp"
#include "man/optim.hpp"

namespace man {

// Weight file (little-endian): magic "MANW", u32 version=1,
// u32 tensor_count, then per tensor u16 name_len, UTF-8 name, u8 rank,
// u32 dims[rank], u8 dtype (0 = f32), raw payload; footer CRC32 of all
// preceding bytes.
//
// Checkpoint: a weight file followed by an "OPTS" section carrying the
// Adam moments in the same tensor framing (names suffixed ".m"/".v"),
// u64 step, the 32-byte rng state, and its own trailing CRC32. The
// prefix of a checkpoint is itself a valid weight file.

void save_weights(ManModel& model, const std::string& path);

// Reads names/shapes only (cheap config sniffing).
std::vector<std::pair<std::string, Shape>> read_weight_inventory(const std::string& path);

// Fills an existing model; every tensor must match by name and shape or
// a DataError names the first offender.
void load_weights_into(ManModel& model, const std::string& path);

// Infers the architecture from the stored inventory and builds the model.
ManModel load_weights(const std::string& path, bool gelu_in_blocks = true);

void save_checkpoint(ManModel& model, const TrainState& st, const std::string& path);

// Loads parameters into the model and returns the restored train state.
TrainState load_checkpoint(ManModel& model, const std::string& path);

bool is_checkpoint_file(const std::string& path);

}  // namespace man
