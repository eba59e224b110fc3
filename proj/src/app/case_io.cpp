#include "fbd/case_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fbd/errors.hpp"
#include "fbd/nifti.hpp"

namespace fbd {

namespace fs = std::filesystem;

std::string sidecar_path(const std::string& nifti_path) {
  fs::path p(nifti_path);
  if (p.extension() == ".gz") p.replace_extension();
  p.replace_extension(".json");
  return p.string();
}

void write_tract_masks(const std::string& path, const TractMaskSet& tracts, const VolumeMeta& grid) {
  const auto n = grid.spatial_size();
  const auto count = tracts.masks.size();
  if (tracts.names.size() != count || tracts.present.size() != count) {
    throw DataError("tract mask set has inconsistent name/mask/present counts");
  }
  std::vector<std::uint8_t> all;
  all.reserve(count * static_cast<std::size_t>(n));
  for (const auto& m : tracts.masks) {
    if (static_cast<std::int64_t>(m.size()) != n) throw DataError("tract mask does not match the grid");
    all.insert(all.end(), m.begin(), m.end());
  }
  std::vector<std::int64_t> dims(grid.dims.begin(), grid.dims.begin() + 3);
  dims.push_back(static_cast<std::int64_t>(count));
  write_nifti(path, Volume::from_masks(dims, std::move(all), grid.voxel_size_mm));

  std::vector<int> present(tracts.present.begin(), tracts.present.end());
  std::vector<int> partial(tracts.partial.begin(), tracts.partial.end());
  if (partial.empty()) partial.assign(count, 0);
  const nlohmann::json side{{"names", tracts.names}, {"present", present}, {"partial", partial}};
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write '" + sidecar_path(path) + "'");
  out << side.dump(2) << "\n";
}

TractMaskSet read_tract_masks(const std::string& path, VolumeMeta* grid) {
  const Volume v = read_nifti(path);
  const auto& meta = v.meta();
  const auto n = meta.spatial_size();
  const auto count = meta.channels();
  const auto labels = v.to_labels();
  TractMaskSet t;
  for (std::int64_t c = 0; c < count; ++c) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const auto value = labels[static_cast<std::size_t>(c * n + i)];
      if (value != 0 && value != 1) throw DataError("tract mask '" + path + "' holds values other than 0 and 1");
      m[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value);
    }
    t.masks.push_back(std::move(m));
  }
  const auto side = sidecar_path(path);
  if (fs::exists(side)) {
    std::ifstream in(side);
    std::stringstream text;
    text << in.rdbuf();
    try {
      const auto j = nlohmann::json::parse(text.str());
      t.names = j.at("names").get<std::vector<std::string>>();
      for (int p : j.at("present").get<std::vector<int>>()) t.present.push_back(p != 0);
      for (int p : j.value("partial", std::vector<int>{})) t.partial.push_back(p != 0);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("tract sidecar '" + side + "': " + e.what());
    }
    if (static_cast<std::int64_t>(t.names.size()) != count || static_cast<std::int64_t>(t.present.size()) != count) {
      throw DataError("tract sidecar '" + side + "' lists " + std::to_string(t.names.size()) + " tracts, volume has " +
                      std::to_string(count));
    }
  } else {
    for (std::int64_t c = 0; c < count; ++c) t.names.push_back("tract_" + std::to_string(c + 1));
    t.present.assign(static_cast<std::size_t>(count), 1);
  }
  if (t.partial.size() != t.names.size()) t.partial.assign(t.names.size(), 0);
  if (grid) {
    *grid = meta;
    grid->dims.resize(3);
  }
  return t;
}

void write_case(const std::string& dir, const CaseData& data) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_nifti((d / "dti.nii").string(), data.dti.to_volume());
  write_nifti((d / "tissue.nii").string(), data.y_sg);
  write_nifti((d / "parcels.nii").string(), data.y_pc);
  write_tract_masks((d / "tracts.nii").string(), data.tracts, data.y_sg.meta());
}

CaseData read_case(const std::string& dir) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw IoError("case directory '" + dir + "' does not exist");
  CaseData c;
  c.dti = DtiVolume::from_volume(read_nifti((d / "dti.nii").string()));
  c.y_sg = read_nifti((d / "tissue.nii").string());
  c.y_pc = read_nifti((d / "parcels.nii").string());
  VolumeMeta grid;
  c.tracts = read_tract_masks((d / "tracts.nii").string(), &grid);
  if (!grid.same_grid(c.y_sg.meta())) throw DataError("tract masks in '" + dir + "' do not match the tissue grid");
  return c;
}

}  // namespace fbd
