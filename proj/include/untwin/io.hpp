#pragma once

#include <filesystem>

#include "untwin/twinning.hpp"

namespace untwin {

// history.bin: little-endian binary snapshot of a forward run (initial model,
// every round's global and local models, participant ids). Wall times are
// deliberately not stored, so identical runs produce identical bytes.
void save_history(const std::filesystem::path& path, const TwinHistory& history);
TwinHistory load_history(const std::filesystem::path& path);

// Single-model file: one ASCII manifest line ("model <arch-tag> <d> <bytes>")
// followed by the raw little-endian parameter doubles.
void save_model(const std::filesystem::path& path, const TwinModel& model);
TwinModel load_model(const std::filesystem::path& path);

}  // namespace untwin
