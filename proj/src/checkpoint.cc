#include "amnet/checkpoint.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "amnet/error.h"
#include "amnet/model_io.h"

namespace amnet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are written in host order, which must be little-endian");

constexpr char kMagic[8] = {'A', 'M', 'N', 'E', 'T', 'C', 'K', 'P'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    AMNET_REQUIRE(n <= buf_.size() - pos_, "checkpoint: truncated file");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

bool is_binary_mask(const Matrix& m) {
  for (double v : m.data())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                     TransducerModel& model) {
  TensorList tensors;
  model.collect(tensors);
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(model.encoder.kind() == EncoderKind::dense ? 0 : 1);
  const std::string cfg = format_config(config);
  w.pod<std::uint64_t>(cfg.size());
  w.str(cfg);
  w.pod<std::uint64_t>(tensors.size());
  for (const NamedTensor& t : tensors) {
    const Matrix& m = *t.matrix;
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.str(t.name);
    w.pod<std::uint8_t>(t.is_mask ? 1 : 0);
    w.pod<std::uint64_t>(m.rows());
    w.pod<std::uint64_t>(m.cols());
    if (t.is_mask) {
      AMNET_REQUIRE(is_binary_mask(m), "save_checkpoint: mask " + t.name + " is not binary");
      std::string bits((m.size() + 7) / 8, '\0');
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] != 0.0) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
      w.str(bits);
    } else {
      w.bytes(m.data().data(), m.size() * sizeof(double));
    }
  }
  w.pod<std::uint64_t>(fnv1a(w.buffer()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    AMNET_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    AMNET_REQUIRE(out.good(), "write failed: " + path.string());
  }
  std::ofstream manifest(path.string() + ".manifest");
  manifest << checkpoint_manifest(config, model);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  AMNET_REQUIRE(in.good(), "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  AMNET_REQUIRE(buf.size() >= sizeof(kMagic) + 8, "checkpoint: file too short");

  std::uint64_t stored_hash = 0;
  std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
  AMNET_REQUIRE(stored_hash == fnv1a(buf.substr(0, buf.size() - 8)),
                "checkpoint: checksum mismatch (corrupt file)");

  Reader r(buf);
  AMNET_REQUIRE(std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) == 0,
                "checkpoint: bad magic");
  const auto version = r.pod<std::uint32_t>();
  AMNET_REQUIRE(version == kCheckpointVersion,
                "checkpoint: unsupported version " + std::to_string(version));
  const auto kind = r.pod<std::uint32_t>();
  AMNET_REQUIRE(kind <= 1, "checkpoint: unknown encoder kind");
  const auto cfg_len = r.pod<std::uint64_t>();
  LoadedCheckpoint out{parse_config(r.str(cfg_len)), TransducerModel()};
  out.model = build_layout(out.config, kind == 0 ? EncoderKind::dense : EncoderKind::amortized);

  TensorList tensors;
  out.model.collect(tensors);
  std::map<std::string, NamedTensor*> by_name;
  for (NamedTensor& t : tensors) by_name[t.name] = &t;

  const auto count = r.pod<std::uint64_t>();
  AMNET_REQUIRE(count == tensors.size(), "checkpoint: tensor count does not match the model");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.pod<std::uint32_t>());
    auto it = by_name.find(name);
    AMNET_REQUIRE(it != by_name.end(), "checkpoint: unexpected tensor " + name);
    NamedTensor& t = *it->second;
    by_name.erase(it);
    const auto storage = r.pod<std::uint8_t>();
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    Matrix& m = *t.matrix;
    AMNET_REQUIRE(rows == m.rows() && cols == m.cols(),
                  "checkpoint: shape mismatch for " + name);
    AMNET_REQUIRE(storage == (t.is_mask ? 1 : 0), "checkpoint: storage mismatch for " + name);
    if (t.is_mask) {
      const char* bits = r.take((m.size() + 7) / 8);
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = (bits[k / 8] >> (k % 8)) & 1 ? 1.0 : 0.0;
    } else {
      std::memcpy(m.data().data(), r.take(m.size() * sizeof(double)), m.size() * sizeof(double));
      AMNET_REQUIRE(m.all_finite(), "checkpoint: non-finite values in " + name);
    }
  }
  AMNET_REQUIRE(r.pos() + 8 == buf.size(), "checkpoint: trailing bytes");
  return out;
}

std::string checkpoint_manifest(const ExperimentConfig& config, TransducerModel& model) {
  TensorList tensors;
  model.collect(tensors);
  std::ostringstream out;
  out << "amnet checkpoint v" << kCheckpointVersion << '\n';
  out << "experiment " << config.name << '\n';
  out << "encoder " << (model.encoder.kind() == EncoderKind::dense ? "dense" : "amortized") << '\n';
  out << "tensors " << tensors.size() << '\n';
  out << std::setprecision(10);
  for (const NamedTensor& t : tensors) {
    double sum = 0.0;
    for (double v : t.matrix->data()) sum += v;
    out << t.name << ' ' << (t.is_mask ? "mask" : "f64") << ' ' << t.matrix->rows() << 'x'
        << t.matrix->cols() << " sum=" << sum << '\n';
  }
  return out.str();
}

}  // namespace amnet
