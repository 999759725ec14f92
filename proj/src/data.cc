#include "amnet/data.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "amnet/error.h"

namespace amnet {

static_assert(std::endian::native == std::endian::little,
              "feature files are written in host order, which must be little-endian");

std::size_t stacked_frame_count(std::size_t frames, std::size_t downsample, std::size_t stride) {
  const std::size_t kept = (frames + downsample - 1) / downsample;
  return (kept + stride - 1) / stride;
}

Matrix frame_stack(const Matrix& features, std::size_t downsample, std::size_t stack,
                   std::size_t stride) {
  AMNET_REQUIRE(downsample >= 1 && stack >= 1 && stride >= 1,
                "frame_stack: factors must be at least 1");
  const std::size_t dim = features.cols();
  const std::size_t kept = (features.rows() + downsample - 1) / downsample;
  const std::size_t out_rows = stacked_frame_count(features.rows(), downsample, stride);
  Matrix out(out_rows, stack * dim);
  for (std::size_t o = 0; o < out_rows; ++o) {
    for (std::size_t j = 0; j < stack; ++j) {
      const std::size_t k = o * stride + j;
      if (k >= kept) break;
      const auto src = features.row_span(k * downsample);
      std::copy(src.begin(), src.end(), out.row_span(o).begin() + j * dim);
    }
  }
  return out;
}

void SyntheticTask::validate() const {
  AMNET_REQUIRE(labels >= 1, "synthetic task: need at least one token");
  AMNET_REQUIRE(dim >= 1, "synthetic task: dim must be positive");
  AMNET_REQUIRE(tokens_min >= 1 && tokens_min <= tokens_max,
                "synthetic task: need 1 <= tokens_min <= tokens_max");
  AMNET_REQUIRE(content_min >= 1 && content_min <= content_max,
                "synthetic task: need 1 <= content_min <= content_max");
  AMNET_REQUIRE(silence_fraction >= 0.0 && silence_fraction < 1.0,
                "synthetic task: silence fraction must lie in [0, 1)");
  AMNET_REQUIRE(content_noise >= 0.0 && silence_noise >= 0.0,
                "synthetic task: noise levels must be non-negative");
}

Matrix SyntheticTask::prototypes() const {
  std::mt19937_64 rng(prototype_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix p(labels, dim);
  for (double& v : p.data()) v = normal(rng);
  return p;
}

namespace {

constexpr std::size_t kMinSilence = 6;  // two kept frames at downsample 3

}  // namespace

Dataset generate_synthetic(const SyntheticTask& task, std::size_t count, std::uint64_t seed,
                           const std::string& id_prefix) {
  task.validate();
  const Matrix proto = task.prototypes();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n_tokens(task.tokens_min, task.tokens_max);
  std::uniform_int_distribution<std::size_t> content_len(task.content_min, task.content_max);
  std::uniform_int_distribution<int> token(1, static_cast<int>(task.labels));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Utterance u;
    std::ostringstream id;
    id << id_prefix << '_' << std::setw(5) << std::setfill('0') << i;
    u.id = id.str();

    const std::size_t U = n_tokens(rng);
    std::vector<std::size_t> lens(U);
    std::size_t content = 0;
    for (std::size_t k = 0; k < U; ++k) {
      u.labels.push_back(token(rng));
      content += lens[k] = content_len(rng);
    }
    // Silence split over U + 1 gaps, each at least kMinSilence frames.
    const double f = task.silence_fraction;
    const std::size_t gaps = U + 1;
    std::size_t silence = static_cast<std::size_t>(std::llround(content * f / (1.0 - f)));
    silence = std::max(silence, gaps * kMinSilence);
    std::vector<double> w(gaps);
    double wsum = 0.0;
    for (double& v : w) wsum += v = 0.5 + unit(rng);
    std::vector<std::size_t> gap(gaps, kMinSilence);
    const std::size_t spare = silence - gaps * kMinSilence;
    std::size_t given = 0;
    for (std::size_t g = 0; g + 1 < gaps; ++g) {
      const auto extra = static_cast<std::size_t>(static_cast<double>(spare) * w[g] / wsum);
      gap[g] += extra;
      given += extra;
    }
    gap.back() += spare - given;

    const std::size_t frames = content + silence;
    u.features = Matrix(frames, task.dim);
    u.silent.assign(frames, 0);
    std::size_t t = 0;
    auto emit_silence = [&](std::size_t n) {
      for (std::size_t j = 0; j < n; ++j, ++t) {
        for (double& v : u.features.row_span(t)) v = task.silence_noise * normal(rng);
        u.silent[t] = 1;
      }
    };
    for (std::size_t k = 0; k < U; ++k) {
      emit_silence(gap[k]);
      const auto p = proto.row_span(static_cast<std::size_t>(u.labels[k] - 1));
      for (std::size_t j = 0; j < lens[k]; ++j, ++t) {
        auto row = u.features.row_span(t);
        for (std::size_t d = 0; d < task.dim; ++d) row[d] = p[d] + task.content_noise * normal(rng);
      }
    }
    emit_silence(gap.back());
    out.push_back(std::move(u));
  }
  return out;
}

double silence_ratio(const Dataset& data) {
  std::size_t silent = 0, total = 0;
  for (const Utterance& u : data) {
    for (char s : u.silent) silent += s != 0;
    total += u.silent.size();
  }
  AMNET_REQUIRE(total > 0, "silence_ratio: dataset carries no silence annotation");
  return static_cast<double>(silent) / static_cast<double>(total);
}

void write_features(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream out(path, std::ios::binary);
  AMNET_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  const std::uint64_t header[2] = {features.rows(), features.cols()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(features.data().data()),
            static_cast<std::streamsize>(features.size() * sizeof(double)));
  AMNET_REQUIRE(out.good(), "write failed: " + path.string());
}

Matrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  AMNET_REQUIRE(in.good(), "cannot open " + path.string());
  std::uint64_t header[2] = {0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  AMNET_REQUIRE(in.gcount() == sizeof(header), path.string() + ": truncated header");
  AMNET_REQUIRE(header[1] > 0 && header[1] < (1u << 20), path.string() + ": implausible dim");
  AMNET_REQUIRE(header[0] < (1ull << 32), path.string() + ": implausible frame count");
  Matrix m(header[0], header[1]);
  const auto bytes = static_cast<std::streamsize>(m.size() * sizeof(double));
  in.read(reinterpret_cast<char*>(m.data().data()), bytes);
  AMNET_REQUIRE(in.gcount() == bytes, path.string() + ": truncated data");
  in.peek();
  AMNET_REQUIRE(in.eof(), path.string() + ": trailing bytes");
  AMNET_REQUIRE(m.all_finite(), path.string() + ": non-finite feature values");
  return m;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  AMNET_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < labels.size(); ++i) out << (i ? " " : "") << labels[i];
  out << '\n';
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  AMNET_REQUIRE(in.good(), "cannot open " + path.string());
  std::vector<int> labels;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    AMNET_REQUIRE(used == tok.size() && v > 0, path.string() + ": bad token id '" + tok + "'");
    labels.push_back(v);
  }
  return labels;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  for (const Utterance& u : data) {
    write_features(dir / (u.id + ".feat"), u.features);
    write_labels(dir / (u.id + ".lab"), u.labels);
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  AMNET_REQUIRE(std::filesystem::is_directory(dir), dir.string() + " is not a directory");
  std::vector<std::filesystem::path> feats;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".feat") feats.push_back(e.path());
  std::sort(feats.begin(), feats.end());
  Dataset out;
  for (const auto& f : feats) {
    Utterance u;
    u.id = f.stem().string();
    u.features = read_features(f);
    auto lab = f;
    lab.replace_extension(".lab");
    u.labels = read_labels(lab);
    out.push_back(std::move(u));
  }
  return out;
}

Dataset stack_dataset(const Dataset& data, std::size_t downsample, std::size_t stack,
                      std::size_t stride) {
  Dataset out;
  out.reserve(data.size());
  for (const Utterance& u : data) {
    Utterance s;
    s.id = u.id;
    s.labels = u.labels;
    s.features = frame_stack(u.features, downsample, stack, stride);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace amnet
