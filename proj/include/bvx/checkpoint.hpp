#ifndef BVX_CHECKPOINT_HPP
#define BVX_CHECKPOINT_HPP

#include "bvx/net_core.hpp"

#include <filesystem>
#include <iosfwd>

namespace bvx {

// Flat binary checkpoint:
//   int32 LE x5: input_dim, output_dim, width, head, activation
//   float64 LE:  W1 (row-major), b1, W2 (row-major), b2

void save_checkpoint(std::ostream& out, const MlpModel<double>& model);
MlpModel<double> load_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const MlpModel<double>& model);
MlpModel<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace bvx

#endif  // BVX_CHECKPOINT_HPP
