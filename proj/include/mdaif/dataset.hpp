#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mdaif/degrade.hpp"
#include "mdaif/image.hpp"

namespace mdaif {

struct DatasetItem {
  std::string id;
  degrade::Degradation label = degrade::Degradation::haze;
  ImageBuffer vi;     // degraded visible, 3 channels
  ImageBuffer ir;     // 1 channel
  ImageBuffer clean;  // clean visible reference, 3 channels
  std::string key() const { return degrade::to_string(label) + "/" + id; }
};

using Dataset = std::vector<DatasetItem>;

// Reads one split of a directory written by degrade::write_dataset.
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split);
Dataset select_split(const std::vector<degrade::Sample>& samples, const std::string& split);
Dataset filter_label(const Dataset& d, degrade::Degradation label);

}  // namespace mdaif
