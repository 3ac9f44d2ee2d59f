#include "prl/store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace prl {

namespace {

constexpr std::array<char, 4> kDatasetMagic{'P', 'R', 'L', 'D'};
constexpr std::array<char, 4> kCheckpointMagic{'P', 'R', 'L', 'M'};
constexpr std::size_t kCountOffset = 4 + 4 * 5;

// Little-endian encoding independent of host byte order.
class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <typename T>
  void uint(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string what) : data_(data), size_(size), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError(what_ + ": unexpected end of file");
  }
  template <typename T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::string str32() { return str(u32()); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomically(const std::filesystem::path& path, const std::vector<char>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_header(Writer& w, const DatasetHeader& h, std::uint64_t count) {
  w.bytes(kDatasetMagic.data(), 4);
  w.u32(kDatasetVersion);
  w.u32(h.frames);
  w.u32(h.height);
  w.u32(h.width);
  w.u32(h.horizon);
  w.u64(count);
  w.u32(static_cast<std::uint32_t>(h.games.size()));
  for (const auto& g : h.games) {
    w.u16(static_cast<std::uint16_t>(g.size()));
    w.bytes(g.data(), g.size());
  }
}

struct ParsedHeader {
  DatasetHeader header;
  std::uint64_t count = 0;
  std::size_t size = 0;
};

ParsedHeader read_header(Reader& r, const std::string& path) {
  if (r.str(4) != std::string(kDatasetMagic.data(), 4)) throw FormatError(path + ": not a dataset file (bad magic)");
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError(path + ": unsupported dataset version " + std::to_string(version));
  }
  ParsedHeader p;
  p.header.frames = r.u32();
  p.header.height = r.u32();
  p.header.width = r.u32();
  p.header.horizon = r.u32();
  p.count = r.u64();
  const auto games = r.u32();
  for (std::uint32_t i = 0; i < games; ++i) p.header.games.push_back(r.str(r.u16()));
  p.size = r.pos();
  return p;
}

void write_record(Writer& w, const TrainingCase& c) {
  w.u32(c.iteration);
  w.u16(c.game_id);
  w.bytes(c.observation.data(), c.observation.size());
  for (const auto& ctl : c.controls) {
    w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(ctl.shoot)));
    w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(ctl.horizontal)));
    w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(ctl.vertical)));
  }
  for (const auto& t : c.targets) {
    w.u8(static_cast<std::uint8_t>(t.died_by_now));
    w.u8(static_cast<std::uint8_t>(t.scored_clean));
  }
}

TrainingCase read_record(Reader& r, const DatasetHeader& h) {
  TrainingCase c;
  c.iteration = r.u32();
  c.game_id = r.u16();
  const std::string pixels = r.str(h.pixels());
  c.observation.assign(pixels.begin(), pixels.end());
  c.controls.resize(h.horizon);
  for (auto& ctl : c.controls) {
    ctl.shoot = static_cast<std::int8_t>(r.u8());
    ctl.horizontal = static_cast<std::int8_t>(r.u8());
    ctl.vertical = static_cast<std::int8_t>(r.u8());
  }
  c.targets.resize(h.horizon);
  for (auto& t : c.targets) {
    t.died_by_now = r.u8();
    t.scored_clean = r.u8();
  }
  return c;
}

}  // namespace

std::uint8_t quantize_pixel(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

double dequantize_pixel(std::uint8_t level) { return static_cast<double>(level) / 255.0; }

Observation TrainingCase::decoded(std::size_t frames, std::size_t height, std::size_t width) const {
  Observation obs{frames, height, width, std::vector<double>(observation.size())};
  std::transform(observation.begin(), observation.end(), obs.pixels.begin(), dequantize_pixel);
  return obs;
}

std::size_t DatasetHeader::record_size() const { return 4 + 2 + pixels() + 3 * horizon + 2 * horizon; }

void Dataset::validate(const TrainingCase& c) const {
  if (c.observation.size() != header_.pixels()) {
    throw FormatError("training case observation has " + std::to_string(c.observation.size()) +
                      " pixels, dataset expects " + std::to_string(header_.pixels()));
  }
  if (c.controls.size() != header_.horizon || c.targets.size() != header_.horizon) {
    throw FormatError("training case horizon " + std::to_string(c.controls.size()) + "/" +
                      std::to_string(c.targets.size()) + " does not match dataset horizon " +
                      std::to_string(header_.horizon));
  }
  if (c.game_id >= header_.games.size()) {
    throw FormatError("training case game id " + std::to_string(c.game_id) + " not in the game table");
  }
}

void Dataset::append(TrainingCase c) {
  validate(c);
  by_iteration_[c.iteration].push_back(cases_.size());
  cases_.push_back(std::move(c));
}

void Dataset::truncate(std::size_t count) {
  if (count >= cases_.size()) return;
  cases_.resize(count);
  by_iteration_.clear();
  for (std::size_t i = 0; i < cases_.size(); ++i) by_iteration_[cases_[i].iteration].push_back(i);
}

std::map<std::uint32_t, std::size_t> Dataset::iteration_counts() const {
  std::map<std::uint32_t, std::size_t> out;
  for (const auto& [tag, idx] : by_iteration_) out[tag] = idx.size();
  return out;
}

void create_dataset_file(const std::filesystem::path& path, const DatasetHeader& header) {
  Writer w;
  write_header(w, header, 0);
  write_file_atomically(path, w.buffer());
}

void append_cases(const std::filesystem::path& path, std::span<const TrainingCase> cases) {
  std::fstream file(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!file) throw FormatError("cannot open " + path.string());
  std::vector<char> head(4096);
  file.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(file.gcount()));
  file.clear();
  Reader r(head.data(), head.size(), path.string());
  const auto parsed = read_header(r, path.string());

  const Dataset shape_check(parsed.header);
  Writer w;
  for (const auto& c : cases) {
    shape_check.validate(c);
    write_record(w, c);
  }
  const auto end = parsed.size + parsed.count * parsed.header.record_size();
  file.seekp(static_cast<std::streamoff>(end));
  file.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  file.flush();
  if (!file) throw std::runtime_error("failed to append records to " + path.string());

  // The count is patched only once the records are on disk, so an
  // interrupted append leaves the previous count valid.
  Writer count;
  count.u64(parsed.count + cases.size());
  file.seekp(static_cast<std::streamoff>(kCountOffset));
  file.write(count.buffer().data(), 8);
  file.flush();
  if (!file) throw std::runtime_error("failed to update record count in " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes.data(), bytes.size(), path.string());
  const auto parsed = read_header(r, path.string());
  const auto needed = parsed.count * parsed.header.record_size();
  if (r.remaining() < needed) {
    throw FormatError(path.string() + ": truncated, header declares " + std::to_string(parsed.count) + " records");
  }
  Dataset ds(parsed.header);
  for (std::uint64_t i = 0; i < parsed.count; ++i) ds.append(read_record(r, parsed.header));
  return ds;
}

namespace {

void write_config(Writer& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.frame_stack));
  w.u32(static_cast<std::uint32_t>(c.frame_height));
  w.u32(static_cast<std::uint32_t>(c.frame_width));
  w.u32(static_cast<std::uint32_t>(c.latent_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden_dim));
  w.u32(static_cast<std::uint32_t>(c.unroll));
  w.u32(static_cast<std::uint32_t>(c.perception.size()));
  for (const auto& l : c.perception) {
    w.u32(static_cast<std::uint32_t>(l.channels));
    w.u32(static_cast<std::uint32_t>(l.kernel));
    w.u32(static_cast<std::uint32_t>(l.stride));
    w.u32(static_cast<std::uint32_t>(l.padding));
    w.u8(l.residual ? 1 : 0);
  }
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.frame_stack = r.u32();
  c.frame_height = r.u32();
  c.frame_width = r.u32();
  c.latent_dim = r.u32();
  c.hidden_dim = r.u32();
  c.unroll = r.u32();
  c.perception.resize(r.u32());
  for (auto& l : c.perception) {
    l.channels = r.u32();
    l.kernel = r.u32();
    l.stride = r.u32();
    l.padding = r.u32();
    l.residual = r.u8() != 0;
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExperimentCursor& cursor) {
  Writer w;
  w.bytes(kCheckpointMagic.data(), 4);
  w.u32(kCheckpointVersion);
  write_config(w, model.config());

  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str32(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u64(d);
    for (double v : p->value.data()) w.f64(v);
  }

  const auto stats = model.batch_norm_states();
  w.u32(static_cast<std::uint32_t>(2 * stats.size()));
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const std::string prefix = "perception.conv" + std::to_string(i);
    for (const auto& [suffix, values] :
         {std::pair{".running_mean", &stats[i]->running_mean}, std::pair{".running_var", &stats[i]->running_var}}) {
      w.str32(prefix + suffix);
      w.u64(values->size());
      for (double v : *values) w.f64(v);
    }
  }

  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str32(p->name);
    w.u64(p->step_count);
    w.u64(p->adam_m.size());
    for (double v : p->adam_m) w.f64(v);
    for (double v : p->adam_v) w.f64(v);
  }

  w.u32(cursor.iteration);
  w.u64(cursor.dataset_size);
  w.str32(cursor.rng_state);
  write_file_atomically(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.string();
  Reader r(bytes.data(), bytes.size(), where);
  if (r.str(4) != std::string(kCheckpointMagic.data(), 4)) throw FormatError(where + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version));
  const ModelConfig config = read_config(r);
  Model model(config, 0);

  std::map<std::string, Parameter*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  auto lookup = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(where + ": unknown parameter block '" + name + "'");
    return it->second;
  };

  const auto param_blocks = r.u32();
  for (std::uint32_t i = 0; i < param_blocks; ++i) {
    Parameter* p = lookup(r.str32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != p->value.shape()) {
      throw FormatError(where + ": parameter '" + p->name + "' has shape " + shape_string(shape) + ", model expects " +
                        shape_string(p->value.shape()));
    }
    for (double& v : p->value.data()) v = r.f64();
  }

  auto stats = model.batch_norm_states();
  const auto buffer_blocks = r.u32();
  for (std::uint32_t i = 0; i < buffer_blocks; ++i) {
    const std::string name = r.str32();
    const auto n = r.u64();
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    bool matched = false;
    for (std::size_t l = 0; l < stats.size() && !matched; ++l) {
      const std::string prefix = "perception.conv" + std::to_string(l);
      auto* target = name == prefix + ".running_mean" ? &stats[l]->running_mean
                     : name == prefix + ".running_var" ? &stats[l]->running_var
                                                       : nullptr;
      if (!target) continue;
      if (target->size() != n) throw FormatError(where + ": buffer '" + name + "' has the wrong length");
      *target = std::move(values);
      matched = true;
    }
    if (!matched) throw FormatError(where + ": unknown buffer block '" + name + "'");
  }

  const auto opt_blocks = r.u32();
  for (std::uint32_t i = 0; i < opt_blocks; ++i) {
    Parameter* p = lookup(r.str32());
    p->step_count = r.u64();
    const auto n = r.u64();
    if (n != p->value.numel()) throw FormatError(where + ": optimizer state for '" + p->name + "' has the wrong length");
    for (double& v : p->adam_m) v = r.f64();
    for (double& v : p->adam_v) v = r.f64();
  }

  ExperimentCursor cursor;
  cursor.iteration = r.u32();
  cursor.dataset_size = r.u64();
  cursor.rng_state = r.str32();
  return Checkpoint{std::move(model), std::move(cursor)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(path);
  const auto& got = ckpt.model.config();
  if (!(got == expected)) {
    throw IncompatibleError(path.string() + ": checkpoint model (latent " + std::to_string(got.latent_dim) + ", hidden " +
                            std::to_string(got.hidden_dim) + ", frames " + std::to_string(got.frame_height) + "x" +
                            std::to_string(got.frame_width) + ") does not match the requested configuration");
  }
  return ckpt;
}

}  // namespace prl
