// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nhp/synth.hpp"

namespace nhp {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

namespace {

constexpr int kManifestVersion = 1;

std::string subject_name(int index) {
  std::ostringstream os;
  os << "subject_" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

json mat_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Mat3 mat_from(const json& j) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

fs::path image_path(const fs::path& dir, const std::string& kind, const std::string& subject, int cam,
                    int t) {
  return dir / kind / subject / std::to_string(cam) / (std::to_string(t) + ".png");
}

fs::path verts_path(const fs::path& dir, const std::string& subject, int t) {
  return dir / "verts" / subject / (std::to_string(t) + ".bin");
}

}  // namespace

std::uint64_t subject_seed(std::uint64_t dataset_seed, int index) {
  return splitmix64(dataset_seed * 0x100000001B3ull + static_cast<std::uint64_t>(index) + 1);
}

CaptureSet generate_captures(const GenerateOptions& opts) {
  if (opts.subjects <= 0 || opts.frames <= 0 || opts.views <= 0) {
    throw std::invalid_argument("generate_captures: subjects, frames and views must be positive");
  }
  if (opts.resolution <= 0 || opts.resolution % 2 != 0) {
    throw std::invalid_argument("generate_captures: resolution must be positive and even");
  }
  CaptureSet set;
  set.cameras = ring_cameras(opts.views, opts.resolution);
  set.frames = opts.frames;
  for (int s = 0; s < opts.subjects; ++s) {
    SubjectCapture cap;
    cap.name = subject_name(s);
    cap.seed = subject_seed(opts.seed, s);
    const SubjectSpec spec = generate_subject(cap.seed);
    for (int t = 0; t < opts.frames; ++t) cap.frames.push_back(pose_subject(spec, t));
    cap.images.resize(set.cameras.size());
    cap.masks.resize(set.cameras.size());
    for (std::size_t c = 0; c < set.cameras.size(); ++c) {
      for (int t = 0; t < opts.frames; ++t) {
        auto gt = render_gt(cap.frames[static_cast<std::size_t>(t)], spec, set.cameras[c], {}, opts.threads);
        cap.images[c].push_back(std::move(gt.image));
        cap.masks[c].push_back(std::move(gt.mask));
      }
    }
    set.subjects.push_back(std::move(cap));
  }
  return set;
}

void write_vertices(const fs::path& path, const BodyFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto n = static_cast<std::uint32_t>(frame.vertices.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& v : frame.vertices) out.write(reinterpret_cast<const char*>(v.data()), 3 * sizeof(double));
  double pose[12];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose[r * 4 + c] = frame.pose.rotation(r, c);
    pose[r * 4 + 3] = frame.pose.translation[r];
  }
  out.write(reinterpret_cast<const char*>(pose), sizeof(pose));
  if (!out) throw IoError("failed writing " + path.string());
}

BodyFrame read_vertices(const fs::path& path, int t) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing vertex file " + path.string());
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in) throw IoError("truncated vertex file " + path.string());
  const auto expected = sizeof(n) + (static_cast<std::uintmax_t>(n) * 3 + 12) * sizeof(double);
  if (fs::file_size(path) != expected) {
    throw IoError("corrupt vertex file " + path.string() + ": size does not match vertex count " +
                  std::to_string(n));
  }
  BodyFrame frame;
  frame.t = t;
  frame.vertices.resize(n);
  for (auto& v : frame.vertices) in.read(reinterpret_cast<char*>(v.data()), 3 * sizeof(double));
  double pose[12];
  in.read(reinterpret_cast<char*>(pose), sizeof(pose));
  if (!in) throw IoError("truncated vertex file " + path.string());
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) frame.pose.rotation(r, c) = pose[r * 4 + c];
    frame.pose.translation[r] = pose[r * 4 + 3];
  }
  return frame;
}

void write_dataset(const CaptureSet& captures, const fs::path& dir) {
  json manifest;
  manifest["format"] = "nhp-dataset";
  manifest["version"] = kManifestVersion;
  manifest["frames"] = captures.frames;
  json cams = json::array();
  for (const auto& cam : captures.cameras) {
    cams.push_back({{"K", mat_json(cam.K)},
                    {"R", mat_json(cam.R)},
                    {"t", {cam.t.x(), cam.t.y(), cam.t.z()}},
                    {"width", cam.width},
                    {"height", cam.height}});
  }
  manifest["cameras"] = cams;
  json subjects = json::array();
  for (const auto& s : captures.subjects) subjects.push_back({{"name", s.name}, {"seed", s.seed}});
  manifest["subjects"] = subjects;

  fs::create_directories(dir);
  for (const auto& s : captures.subjects) {
    fs::create_directories(dir / "verts" / s.name);
    for (int t = 0; t < captures.frames; ++t) {
      write_vertices(verts_path(dir, s.name, t), s.frames[static_cast<std::size_t>(t)]);
    }
    for (int c = 0; c < captures.views(); ++c) {
      fs::create_directories(dir / "img" / s.name / std::to_string(c));
      fs::create_directories(dir / "mask" / s.name / std::to_string(c));
      for (int t = 0; t < captures.frames; ++t) {
        write_png(image_path(dir, "img", s.name, c, t), s.images[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)]);
        write_png(image_path(dir, "mask", s.name, c, t), s.masks[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)]);
      }
    }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << std::setprecision(17) << manifest.dump(2) << "\n";
}

CaptureSet read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("missing manifest " + mpath.string());
  CaptureSet set;
  try {
    const json manifest = json::parse(in);
    if (manifest.at("version").get<int>() != kManifestVersion) {
      throw IoError("unsupported manifest version in " + mpath.string());
    }
    set.frames = manifest.at("frames").get<int>();
    for (const auto& c : manifest.at("cameras")) {
      const auto& t = c.at("t");
      set.cameras.push_back(Camera::make(mat_from(c.at("K")), mat_from(c.at("R")),
                                         Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()),
                                         c.at("width").get<int>(), c.at("height").get<int>()));
    }
    for (const auto& s : manifest.at("subjects")) {
      SubjectCapture cap;
      cap.name = s.at("name").get<std::string>();
      cap.seed = s.at("seed").get<std::uint64_t>();
      set.subjects.push_back(std::move(cap));
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  for (auto& s : set.subjects) {
    for (int t = 0; t < set.frames; ++t) s.frames.push_back(read_vertices(verts_path(dir, s.name, t), t));
    s.images.resize(set.cameras.size());
    s.masks.resize(set.cameras.size());
    for (int c = 0; c < set.views(); ++c) {
      const Camera& cam = set.cameras[static_cast<std::size_t>(c)];
      for (int t = 0; t < set.frames; ++t) {
        Image img = read_png_rgb(image_path(dir, "img", s.name, c, t));
        Mask mask = read_png_gray(image_path(dir, "mask", s.name, c, t));
        if (img.width != cam.width || img.height != cam.height || mask.width != cam.width ||
            mask.height != cam.height) {
          throw IoError("image size mismatch for " + s.name + " camera " + std::to_string(c) +
                        " frame " + std::to_string(t));
        }
        for (auto& m : mask.values) m = m >= 0.5f ? 1.0f : 0.0f;
        s.images[static_cast<std::size_t>(c)].push_back(std::move(img));
        s.masks[static_cast<std::size_t>(c)].push_back(std::move(mask));
      }
    }
  }
  return set;
}

}  // namespace nhp
