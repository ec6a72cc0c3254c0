#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "isvqa/qgen.hpp"

namespace isvqa {

inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json to_json(const GenConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a schema error.
GenConfig gen_config_from_json(const nlohmann::json& j);

/// JSON Lines: a header object {format_version, gen_config, pretrain, embed_features}
/// followed by one object per sample.
void write_dataset(std::ostream& out, const Dataset& ds, bool embed_features);
void save_dataset(const std::filesystem::path& path, const Dataset& ds, bool embed_features);

/// Features that were not embedded are regenerated from the header config.
Dataset read_dataset(std::istream& in, const std::string& source_name = "<stream>");
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace isvqa
