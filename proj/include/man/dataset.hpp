#pragma once

#include <array>
#include <string>
#include <vector>

#include "man/rng.hpp"
#include "man/tensor.hpp"

namespace man {

// Aligned HR/LR pair; both tensors are (1,3,h,w) in [0,1] and the LR
// dims are exactly the HR dims divided by scale.
struct ImagePair {
    Tensor hr;
    Tensor lr;
    int scale = 0;
    std::string id;
};

enum class DatasetMode { HrOnly, PairedDirs };

struct DatasetIndex {
    std::vector<ImagePair> pairs;
    int scale = 0;
    DatasetMode mode = DatasetMode::HrOnly;
};

// The eight dihedral transforms, indexed t = 4*flip + rot: an optional
// horizontal flip followed by rot90 applied (t % 4) times (CCW).
Tensor transform_dihedral(const Tensor& x, int t);
int inverse_dihedral_rot(int t);  // exposed for tests
Tensor inverse_transform_dihedral(const Tensor& x, int t);

// Center-crops hr to a multiple of scale and synthesizes the LR side by
// antialiased bicubic downscaling.
ImagePair degrade(const Tensor& hr, int scale, const std::string& id = "");

// Uniformly random aligned crop; the HR patch sits at scale times the LR
// offset and is patch*scale square.
std::pair<Tensor, Tensor> sample_patch(const ImagePair& pair, int patch, Rng& rng);

// One of the 8 dihedral transforms applied identically to both patches.
// Patches must be square.
void augment_pair(Tensor& lr_patch, Tensor& hr_patch, Rng& rng);

struct PatchBatch {
    Tensor lr;  // (B,3,p,p)
    Tensor hr;  // (B,3,p*s,p*s)
    std::array<u8, 32> rng_state{};  // generator snapshot taken before sampling
};

PatchBatch sample_batch(const DatasetIndex& data, int batch, int patch, Rng& rng);

// Scans <root>/HR/*.png (falling back to <root>/*.png); HrOnly mode
// synthesizes LR via degrade, PairedDirs reads <root>/LRx{scale}/ files
// with matching stems.
DatasetIndex load_dataset(const std::string& root, int scale, DatasetMode mode);

}  // namespace man
