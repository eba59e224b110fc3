#pragma once

// On-disk layout of one annotated case (a directory):
//   dti.nii       float32, 6 tensor components (xx, xy, xz, yy, yz, zz) in mm^2/s
//   tissue.nii    tissue labels
//   parcels.nii   parcel labels
//   tracts.nii    uint8 masks, one volume per tract
//   tracts.json   {"names": [...], "present": [...], "partial": [...]}

#include <string>

#include "fbd/annotation.hpp"
#include "fbd/dti.hpp"
#include "fbd/volume.hpp"

namespace fbd {

struct CaseData {
  DtiVolume dti;
  Volume y_sg;
  TractMaskSet tracts;
  Volume y_pc;
};

// Tract masks as one multi-volume NIfTI plus a JSON sidecar next to it
// (same path with the extension replaced by .json).
std::string sidecar_path(const std::string& nifti_path);
void write_tract_masks(const std::string& path, const TractMaskSet& tracts, const VolumeMeta& grid);
TractMaskSet read_tract_masks(const std::string& path, VolumeMeta* grid = nullptr);

void write_case(const std::string& dir, const CaseData& data);
CaseData read_case(const std::string& dir);

}  // namespace fbd
