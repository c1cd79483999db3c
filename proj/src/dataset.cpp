#include "pgrasp/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "pgrasp/rng.hpp"
#include "pgrasp/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace pgrasp {

Image quantize_image(const Image& img) {
  Image out;
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j)
      out(i, j) = static_cast<double>(static_cast<float>(img(i, j)));
  return out;
}

namespace {

struct PartCollection {
  std::vector<GraspRecord> records;
  CorpusStats stats;
  int divergences = 0;
};

PartCollection collect_part(const Part& part, const CollectConfig& config) {
  PartCollection out;
  const std::uint64_t part_seed = hash_seed(config.master_seed, part.part_id);
  Rng pose_rng(hash_seed(part_seed, 0));

  // Resting position jitters; orientation stays at zero because the part
  // generator already draws a uniform rotation phase per part.
  Pose pose;
  pose.x = pose_rng.uniform(-config.pose_jitter, config.pose_jitter);
  pose.y = pose_rng.uniform(-config.pose_jitter, config.pose_jitter);
  pose.theta = 0.0;

  const DepthImage full =
      render_full(part, pose, config.full_window, config.camera_height);
  const Rect bbox_world = bounding_box(part, pose);
  Rect bbox_rel;  // grasp coordinates are relative to the object center
  bbox_rel.min = bbox_world.min - pose.translation();
  bbox_rel.max = bbox_world.max - pose.translation();

  // One anchored height field covering the silhouette plus the widest patch.
  Rect cover = bbox_world;
  const double reach = config.patch_window * 0.75;
  cover.min -= Vec2(bbox_rel.width() * 0.5 + reach, bbox_rel.height() * 0.5 + reach);
  cover.max += Vec2(bbox_rel.width() * 0.5 + reach, bbox_rel.height() * 0.5 + reach);
  const HeightField field(part, pose, cover);

  int successes = 0;
  for (int k = 0; k < config.grasps_per_part; ++k) {
    const std::uint64_t grasp_seed = hash_seed(part_seed, static_cast<std::uint64_t>(k) + 1);
    const Grasp grasp = sample_grasp(bbox_rel, part.height, grasp_seed);
    GraspOutcome outcome;
    try {
      outcome = simulate_pinch(part, pose, grasp, config.physics);
    } catch (const SimulationDivergence&) {
      ++out.divergences;
      continue;
    }
    GraspRecord rec;
    rec.part_id = part.part_id;
    rec.pose = pose;
    rec.grasp = grasp;
    rec.success = outcome.success;
    rec.object_displacement = outcome.object_displacement;
    rec.grasp_displacement = outcome.success ? outcome.grasp_displacement : Displacement{};
    const DepthImage patch =
        render_grasp_patch(field, part.height, pose.translation() + Vec2(grasp.gx, grasp.gy),
                           grasp.gtheta, config.patch_window, config.camera_height);
    rec.ocfi = quantize_image(
        add_noise(full, config.noise_sigma, hash_seed(grasp_seed, 2)).pixels);
    rec.gcip = quantize_image(
        add_noise(patch, config.noise_sigma, hash_seed(grasp_seed, 3)).pixels);
    if (outcome.success) ++successes;
    out.records.push_back(std::move(rec));
  }

  out.stats.part_id = part.part_id;
  out.stats.success_rate =
      config.grasps_per_part > 0 ? static_cast<double>(successes) / config.grasps_per_part : 0.0;
  out.stats.longest_axis = bbox_of(part.outer_ring).diagonal();
  return out;
}

}  // namespace

CollectResult collect(const std::vector<Part>& corpus, const CollectConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("collect: empty corpus");
  std::vector<PartCollection> per_part(corpus.size());

  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) per_part[i] = collect_part(corpus[i], config);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1))
          per_part[i] = collect_part(corpus[i], config);
      });
    }
    for (auto& t : pool) t.join();
  }

  CollectResult result;
  int divergences = 0;
  for (auto& pc : per_part) {
    divergences += pc.divergences;
    result.stats.push_back(pc.stats);
    for (auto& r : pc.records) result.records.push_back(std::move(r));
  }
  result.manifest["master_seed"] = std::to_string(config.master_seed);
  result.manifest["grasps_per_part"] = std::to_string(config.grasps_per_part);
  result.manifest["parts"] = std::to_string(corpus.size());
  result.manifest["records"] = std::to_string(result.records.size());
  result.manifest["divergences"] = std::to_string(divergences);
  result.manifest["noise_sigma"] = std::to_string(config.noise_sigma);
  result.manifest["positives"] = std::to_string(static_cast<long>(std::count_if(
      result.records.begin(), result.records.end(), [](const auto& r) { return r.success; })));
  return result;
}

std::set<std::uint64_t> filter_corpus(const std::vector<CorpusStats>& stats) {
  std::set<std::uint64_t> retained;
  for (const CorpusStats& s : stats) {
    if (s.success_rate < 0.05 || s.success_rate > 0.40) continue;
    if (s.longest_axis < 0.02 || s.longest_axis > 0.15) continue;
    retained.insert(s.part_id);
  }
  return retained;
}

Split split_objectwise(const std::vector<std::uint64_t>& part_ids, double val_fraction,
                       std::uint64_t seed) {
  if (part_ids.size() < 2) throw std::invalid_argument("split requires at least 2 parts");
  std::vector<std::uint64_t> ids = part_ids;
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_index(i + 1)]);
  long val_count = std::lround(val_fraction * static_cast<double>(ids.size()));
  val_count = std::clamp(val_count, 1L, static_cast<long>(ids.size()) - 1);
  Split split;
  split.val.assign(ids.begin(), ids.begin() + val_count);
  split.train.assign(ids.begin() + val_count, ids.end());
  return split;
}

std::vector<GraspRecord> balance_for_gqn(const std::vector<GraspRecord>& records,
                                         std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < records.size(); ++i)
    (records[i].success ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw UnbalanceableData("balance_for_gqn: need at least one record of each class");
  auto& majority = pos.size() > neg.size() ? pos : neg;
  const std::size_t target = std::min(pos.size(), neg.size());
  Rng rng(seed);
  for (std::size_t i = majority.size() - 1; i > 0; --i)
    std::swap(majority[i], majority[rng.uniform_index(i + 1)]);
  majority.resize(target);
  std::vector<std::size_t> keep;
  keep.insert(keep.end(), pos.begin(), pos.end());
  keep.insert(keep.end(), neg.begin(), neg.end());
  std::sort(keep.begin(), keep.end());
  std::vector<GraspRecord> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(records[i]);
  return out;
}

std::vector<GraspRecord> successful_only(const std::vector<GraspRecord>& records) {
  std::vector<GraspRecord> out;
  for (const GraspRecord& r : records)
    if (r.success) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Container format

namespace {

constexpr char kDataMagic[4] = {'P', 'G', 'D', 'S'};
constexpr std::uint16_t kDataVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, std::size_t& offset, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in)
    throw CorruptFileError(std::string("truncated dataset while reading ") + what, offset);
  offset += sizeof(T);
  return v;
}

void write_image(std::ofstream& out, const Image& img) {
  float buf[kImageSize];
  for (int i = 0; i < kImageSize; ++i) {
    for (int j = 0; j < kImageSize; ++j) buf[j] = static_cast<float>(img(i, j));
    out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
  }
}

Image read_image(std::ifstream& in, std::size_t& offset) {
  Image img;
  float buf[kImageSize];
  for (int i = 0; i < kImageSize; ++i) {
    in.read(reinterpret_cast<char*>(buf), sizeof(buf));
    if (!in) throw CorruptFileError("truncated dataset image payload", offset);
    offset += sizeof(buf);
    for (int j = 0; j < kImageSize; ++j) img(i, j) = static_cast<double>(buf[j]);
  }
  return img;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<GraspRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
  out.write(kDataMagic, 4);
  write_pod(out, kDataVersion);
  write_pod(out, static_cast<std::uint64_t>(records.size()));
  for (const GraspRecord& r : records) {
    write_pod(out, r.part_id);
    write_pod(out, r.pose.x);
    write_pod(out, r.pose.y);
    write_pod(out, r.pose.theta);
    write_pod(out, r.grasp.gx);
    write_pod(out, r.grasp.gy);
    write_pod(out, r.grasp.gz);
    write_pod(out, r.grasp.gtheta);
    write_pod(out, static_cast<std::uint8_t>(r.success ? 1 : 0));
    for (double v : {r.object_displacement.dx, r.object_displacement.dy,
                     r.object_displacement.dz, r.object_displacement.dtheta})
      write_pod(out, v);
    for (double v : {r.grasp_displacement.dx, r.grasp_displacement.dy, r.grasp_displacement.dz,
                     r.grasp_displacement.dtheta})
      write_pod(out, v);
    write_image(out, r.ocfi);
    write_image(out, r.gcip);
  }
  if (!out) throw std::runtime_error("failed writing dataset: " + path);
}

std::vector<GraspRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDataMagic, 4) != 0)
    throw CorruptFileError("bad dataset magic", 0);
  offset += 4;
  const auto version = read_pod<std::uint16_t>(in, offset, "version");
  if (version != kDataVersion)
    throw CorruptFileError("unsupported dataset version", offset - sizeof(std::uint16_t));
  const auto count = read_pod<std::uint64_t>(in, offset, "record count");
  std::vector<GraspRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    GraspRecord r;
    r.part_id = read_pod<std::uint64_t>(in, offset, "part_id");
    r.pose.x = read_pod<double>(in, offset, "pose.x");
    r.pose.y = read_pod<double>(in, offset, "pose.y");
    r.pose.theta = read_pod<double>(in, offset, "pose.theta");
    r.grasp.gx = read_pod<double>(in, offset, "grasp.gx");
    r.grasp.gy = read_pod<double>(in, offset, "grasp.gy");
    r.grasp.gz = read_pod<double>(in, offset, "grasp.gz");
    r.grasp.gtheta = read_pod<double>(in, offset, "grasp.gtheta");
    const auto flag = read_pod<std::uint8_t>(in, offset, "success flag");
    if (flag > 1) throw CorruptFileError("invalid success flag", offset - 1);
    r.success = flag == 1;
    r.object_displacement.dx = read_pod<double>(in, offset, "dp.dx");
    r.object_displacement.dy = read_pod<double>(in, offset, "dp.dy");
    r.object_displacement.dz = read_pod<double>(in, offset, "dp.dz");
    r.object_displacement.dtheta = read_pod<double>(in, offset, "dp.dtheta");
    r.grasp_displacement.dx = read_pod<double>(in, offset, "dg.dx");
    r.grasp_displacement.dy = read_pod<double>(in, offset, "dg.dy");
    r.grasp_displacement.dz = read_pod<double>(in, offset, "dg.dz");
    r.grasp_displacement.dtheta = read_pod<double>(in, offset, "dg.dtheta");
    r.ocfi = read_image(in, offset);
    r.gcip = read_image(in, offset);
    records.push_back(std::move(r));
  }
  // Record count in the header must match the body exactly.
  char extra;
  in.read(&extra, 1);
  if (in) throw CorruptFileError("trailing bytes after the last record", offset);
  return records;
}

void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open manifest for writing: " + path);
  for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace {

constexpr char kPartsMagic[4] = {'P', 'G', 'P', 'C'};
constexpr std::uint16_t kPartsVersion = 1;

void write_ring(std::ofstream& out, const Ring& ring) {
  write_pod(out, static_cast<std::uint64_t>(ring.size()));
  for (const Vec2& v : ring) {
    write_pod(out, v.x());
    write_pod(out, v.y());
  }
}

Ring read_ring(std::ifstream& in, std::size_t& offset) {
  const auto n = read_pod<std::uint64_t>(in, offset, "ring size");
  if (n < 3 || n > 1'000'000) throw CorruptFileError("implausible ring size", offset - 8);
  Ring ring(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ring[i].x() = read_pod<double>(in, offset, "vertex x");
    ring[i].y() = read_pod<double>(in, offset, "vertex y");
  }
  return ring;
}

}  // namespace

void write_parts(const std::string& path, const std::vector<Part>& parts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open parts file for writing: " + path);
  out.write(kPartsMagic, 4);
  write_pod(out, kPartsVersion);
  write_pod(out, static_cast<std::uint64_t>(parts.size()));
  for (const Part& p : parts) {
    write_pod(out, p.part_id);
    write_pod(out, static_cast<std::uint8_t>(p.family));
    write_pod(out, p.height);
    write_ring(out, p.outer_ring);
    write_pod(out, static_cast<std::uint64_t>(p.holes.size()));
    for (const Ring& hole : p.holes) write_ring(out, hole);
  }
  if (!out) throw std::runtime_error("failed writing parts file: " + path);
}

std::vector<Part> read_parts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parts file: " + path);
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kPartsMagic, 4) != 0)
    throw CorruptFileError("bad parts magic", 0);
  offset += 4;
  const auto version = read_pod<std::uint16_t>(in, offset, "version");
  if (version != kPartsVersion)
    throw CorruptFileError("unsupported parts version", offset - sizeof(std::uint16_t));
  const auto count = read_pod<std::uint64_t>(in, offset, "part count");
  std::vector<Part> parts;
  parts.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Part p;
    p.part_id = read_pod<std::uint64_t>(in, offset, "part_id");
    const auto fam = read_pod<std::uint8_t>(in, offset, "family");
    if (fam > static_cast<std::uint8_t>(PartFamily::kEllipse))
      throw CorruptFileError("invalid part family", offset - 1);
    p.family = static_cast<PartFamily>(fam);
    p.height = read_pod<double>(in, offset, "height");
    p.outer_ring = read_ring(in, offset);
    const auto holes = read_pod<std::uint64_t>(in, offset, "hole count");
    if (holes > 1'000'000) throw CorruptFileError("implausible hole count", offset - 8);
    p.holes.resize(holes);
    for (std::uint64_t h = 0; h < holes; ++h) p.holes[h] = read_ring(in, offset);
    parts.push_back(std::move(p));
  }
  char extra;
  in.read(&extra, 1);
  if (in) throw CorruptFileError("trailing bytes after the last part", offset);
  return parts;
}

}  // namespace pgrasp
