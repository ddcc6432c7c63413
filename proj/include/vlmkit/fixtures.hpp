#pragma once

#include <cstdint>
#include <filesystem>

namespace vlmkit::fixtures {

// Writes the bundled synthetic corpus: train/eval manifests, raster images,
// the 1,000-record curation fixture, the overfit set, and a toy run config.
// Deterministic for a fixed seed.
void generate_fixtures(const std::filesystem::path& dir, uint64_t seed = 42);

}  // namespace vlmkit::fixtures
