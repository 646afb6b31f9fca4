#pragma once

// Loading image directories as LR/HR datasets.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "dmnet/metrics.hpp"
#include "dmnet/png_io.hpp"

namespace dmnet {

inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// `dir/HR` + `dir/LR` with matching file names, or a flat directory of HR
/// images whose LR side is synthesized bicubically after mod-cropping.
inline Dataset load_dataset(const std::string& dir, std::size_t scale) {
  namespace fs = std::filesystem;
  if (dir.empty()) throw ImageError("data directory not set");
  if (!fs::is_directory(dir)) throw ImageError("data directory '" + dir + "' does not exist");
  Dataset data;
  const fs::path hr_dir = fs::path(dir) / "HR", lr_dir = fs::path(dir) / "LR";
  if (fs::is_directory(hr_dir) && fs::is_directory(lr_dir)) {
    for (const auto& hp : list_pngs(hr_dir)) {
      const fs::path lp = lr_dir / hp.filename();
      if (!fs::exists(lp)) throw ImageError("no LR image for '" + hp.string() + "' (expected '" + lp.string() + "')");
      Tensor lr = read_png(lp.string());
      Tensor hr = mod_crop(read_png(hp.string()), scale);
      const Shape ls = lr.shape(), hs = hr.shape();
      if (hs.h != ls.h * scale || hs.w != ls.w * scale)
        throw ImageError("'" + hp.filename().string() + "': HR " + hs.str() + " is not x" + std::to_string(scale) +
                         " of LR " + ls.str());
      data.push_back({hp.filename().string(), lr, hr});
    }
  } else {
    for (const auto& p : list_pngs(dir)) {
      Tensor hr = read_png(p.string());
      if (hr.shape().h < scale || hr.shape().w < scale)
        throw ImageError("'" + p.string() + "' is smaller than the scale factor");
      data.push_back(make_pair_from_hr(p.filename().string(), hr, scale));
    }
  }
  if (data.empty()) throw ImageError("no PNG images in '" + dir + "'");
  return data;
}

}  // namespace dmnet
