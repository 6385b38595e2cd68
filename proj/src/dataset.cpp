#include "mdaif/dataset.hpp"

#include <fstream>

#include <json.hpp>

namespace mdaif {

Dataset load_dataset(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream in(dir / "index.json");
  if (!in) throw FormatError("no index.json in " + dir.string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  Dataset out;
  for (const auto& e : index) {
    if (e.at("split") != split) continue;
    DatasetItem item;
    item.id = e.at("id").get<std::string>();
    item.label = degrade::parse_degradation(e.at("degradation").get<std::string>());
    const auto sub = dir / e.at("dir").get<std::string>();
    item.vi = read_image(sub / (item.id + "_vi.ppm"));
    item.ir = read_image(sub / (item.id + "_ir.pgm"));
    item.clean = read_image(sub / (item.id + "_clean.ppm"));
    if (item.vi.channels != 3 || item.clean.channels != 3 || item.ir.channels != 1 ||
        !item.vi.same_size(item.ir) || !item.vi.same_size(item.clean))
      throw FormatError("inconsistent images for sample " + item.key());
    out.push_back(std::move(item));
  }
  if (out.empty()) throw FormatError("split '" + split + "' of " + dir.string() + " is empty");
  return out;
}

Dataset select_split(const std::vector<degrade::Sample>& samples, const std::string& split) {
  Dataset out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back({s.id, s.label, s.vi, s.ir, s.clean});
  return out;
}

Dataset filter_label(const Dataset& d, degrade::Degradation label) {
  Dataset out;
  for (const auto& item : d)
    if (item.label == label) out.push_back(item);
  return out;
}

}  // namespace mdaif
