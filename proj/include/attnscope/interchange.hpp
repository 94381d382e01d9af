#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/tensor.hpp"
#include "attnscope/trace.hpp"

namespace attnscope {

/// Writes `t` as an NPY v1.0 file (descr '<f4', C order). The header is
/// space-padded so that magic + header is a multiple of 64 bytes.
void write_tensor(const TensorF32& t, const std::filesystem::path& path);

/// Reads an NPY v1.0 '<f4' C-order file. FormatError messages name the
/// offending field: "magic", "version", "header", "dtype", "fortran_order",
/// "shape" or "length".
TensorF32 read_tensor(const std::filesystem::path& path);

/// Encodes the bytes of an NPY file without touching the filesystem.
std::string encode_npy(const TensorF32& t);
TensorF32 decode_npy(const std::string& bytes);

void write_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix(const std::filesystem::path& path);

nlohmann::json config_to_json(const EncoderConfig& c);
/// Missing keys keep their defaults. Accepts "L"/"A" or "layers"/"heads".
EncoderConfig config_from_json(const nlohmann::json& j);

struct RunIssue {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::string message;
};

/// Checks every attention map of a run for row-stochasticity within `tol`
/// (entries >= -tol, |row sum - 1| <= tol). One issue per offending row.
std::vector<RunIssue> check_run(const RunTrace& run, double tol = 1e-4);

struct LoadOptions {
  /// Throw ValidationError on the first row-stochasticity violation instead of
  /// returning the run for the caller to inspect with check_run.
  bool strict = true;
  double stochastic_tol = 1e-4;
};

/// Writes manifest.json plus layer<L>/head<H>/{Q,K,V,S,Y}.npy,
/// layer<L>/{ln1,ln2,mlp}.npy, input.npy and (if present) weights/.
/// Throws ValidationError when the run shape disagrees with its config.
void save_run(const RunTrace& run, const std::filesystem::path& dir);

/// Inverse of save_run on f32-representable runs. Missing files raise
/// PersistenceError naming the file; shape mismatches raise ValidationError
/// naming layer and head.
RunTrace load_run(const std::filesystem::path& dir, const LoadOptions& options = {});

}  // namespace attnscope
