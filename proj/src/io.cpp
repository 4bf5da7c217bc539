#include "gsshare/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace gsshare {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return f;
}

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png(const fs::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw Error(ErrorCode::InvalidArgument, "PNG output needs 1 or 3 channels");
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, "libpng write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8,
               img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(img.width()) * img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) row[x * img.channels() + c] = to_byte(img.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::Io, "libpng read failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  Image img(w, h, ch);
  std::vector<uint8_t> row(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) img.at(x, y, c) = row[x * ch + c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_pfm(const fs::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw Error(ErrorCode::InvalidArgument, "PFM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
  out << (img.channels() == 3 ? "PF" : "Pf") << "\n" << img.width() << " " << img.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width()) * img.channels());
  for (int y = img.height() - 1; y >= 0; --y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        row[x * img.channels() + c] = static_cast<float>(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Image read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();
  if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0)
    throw Error(ErrorCode::Io, "bad PFM header in " + path.string());
  if (scale > 0) throw Error(ErrorCode::Io, "big-endian PFM is not supported");
  const int ch = magic == "PF" ? 3 : 1;
  Image img(w, h, ch);
  std::vector<float> row(static_cast<size_t>(w) * ch);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
    if (!in) throw Error(ErrorCode::Io, "truncated PFM " + path.string());
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) img.at(x, y, c) = row[x * ch + c];
  }
  return img;
}

nlohmann::json pose_to_json(const CameraPose& pose) {
  const auto& k = pose.intrinsics;
  return {
      {"rotation_wxyz", {pose.rotation.w(), pose.rotation.x(), pose.rotation.y(), pose.rotation.z()}},
      {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
      {"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
      {"width", k.width}, {"height", k.height},
  };
}

CameraPose pose_from_json(const nlohmann::json& j) {
  try {
    CameraPose p;
    const auto& q = j.at("rotation_wxyz");
    p.rotation = Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                      q.at(3).get<double>());
    const auto& t = j.at("translation");
    p.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    p.intrinsics.fx = j.at("fx").get<double>();
    p.intrinsics.fy = j.at("fy").get<double>();
    p.intrinsics.cx = j.at("cx").get<double>();
    p.intrinsics.cy = j.at("cy").get<double>();
    p.intrinsics.width = j.at("width").get<int>();
    p.intrinsics.height = j.at("height").get<int>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad pose JSON: ") + e.what());
  }
}

void write_pose(const fs::path& path, const CameraPose& pose) {
  write_text(path, pose_to_json(pose).dump(2) + "\n");
}

CameraPose read_pose(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return pose_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Io, std::string("bad pose JSON: ") + e.what());
  }
}

void save_frames(const fs::path& dir, const std::vector<FrameRGBD>& frames) {
  fs::create_directories(dir);
  for (size_t i = 0; i < frames.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%04zu", i);
    write_png(dir / (std::string(stem) + ".png"), frames[i].color);
    write_pfm(dir / (std::string(stem) + ".pfm"), frames[i].depth);
    nlohmann::json j = pose_to_json(frames[i].pose);
    j["contributor_id"] = frames[i].contributor_id;
    write_text(dir / (std::string(stem) + ".json"), j.dump(2) + "\n");
  }
}

std::vector<FrameRGBD> load_frames(const fs::path& dir) {
  std::vector<fs::path> poses;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().stem().string().rfind("frame_", 0) == 0)
      poses.push_back(e.path());
  std::sort(poses.begin(), poses.end());
  std::vector<FrameRGBD> frames;
  for (const auto& p : poses) {
    std::ifstream in(p);
    const nlohmann::json j = nlohmann::json::parse(in);
    FrameRGBD f;
    f.pose = pose_from_json(j);
    f.contributor_id = j.value("contributor_id", 0);
    fs::path base = p;
    f.color = read_png(base.replace_extension(".png"));
    f.depth = read_pfm(base.replace_extension(".pfm"));
    f.validate();
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace gsshare
