#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amnet/matrix.h"

namespace amnet {

struct Utterance {
  std::string id;
  Matrix features;          // frames x dim
  std::vector<int> labels;  // token ids in [1, vocab)
  std::vector<char> silent;  // per raw frame, synthetic data only
};

using Dataset = std::vector<Utterance>;

// Keeps every `downsample`-th frame (0, d, 2d, ...), then concatenates
// windows of `stack` consecutive kept frames whose starts advance by
// `stride`. Windows start at 0, stride, 2 stride, ... while the start is a
// valid kept frame; positions past the end are zero-filled.
//
// n input frames give m = ceil(n / downsample) kept frames and
// ceil(m / stride) output frames of width stack * dim.
Matrix frame_stack(const Matrix& features, std::size_t downsample, std::size_t stack,
                   std::size_t stride);
std::size_t stacked_frame_count(std::size_t frames, std::size_t downsample, std::size_t stride);

// Toy transduction task. Utterances alternate silence and content segments,
// starting and ending with silence. A content segment repeats a noisy copy
// of its token's prototype vector; silence frames are low-variance noise.
struct SyntheticTask {
  std::size_t labels = 5;  // non-blank tokens, ids 1..labels
  std::size_t dim = 8;
  std::size_t tokens_min = 3;
  std::size_t tokens_max = 5;
  std::size_t content_min = 12;  // raw frames per content segment
  std::size_t content_max = 18;
  double silence_fraction = 0.5;  // expected share of raw frames
  double content_noise = 0.3;
  double silence_noise = 0.05;
  std::uint64_t prototype_seed = 7;  // shared across splits

  void validate() const;
  // Prototype matrix (labels x dim), fixed by prototype_seed.
  Matrix prototypes() const;
};

Dataset generate_synthetic(const SyntheticTask& task, std::size_t count, std::uint64_t seed,
                           const std::string& id_prefix = "utt");

double silence_ratio(const Dataset& data);

// Feature file: uint64 frames, uint64 dim, then frames * dim float64, all
// little-endian, row-major. Labels live in a sidecar text file holding
// space-separated token ids.
void write_features(const std::filesystem::path& path, const Matrix& features);
Matrix read_features(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

// <dir>/<id>.feat and <dir>/<id>.lab per utterance.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
// Every *.feat in `dir` (sorted by name) with its .lab sidecar.
Dataset read_dataset(const std::filesystem::path& dir);

// Applies frame_stack to every utterance.
Dataset stack_dataset(const Dataset& data, std::size_t downsample, std::size_t stack,
                      std::size_t stride);

}  // namespace amnet
