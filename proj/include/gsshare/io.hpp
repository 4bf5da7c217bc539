#pragma once

// File formats: 8-bit PNG, 32-bit PFM, JSON poses and on-disk frame bundles.

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "gsshare/core.hpp"

namespace gsshare {

// Channels 1 or 3; values clamped to [0,1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Little-endian PFM ("Pf" for 1 channel, "PF" for 3), rows stored bottom-to-top.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

nlohmann::json pose_to_json(const CameraPose& pose);
CameraPose pose_from_json(const nlohmann::json& j);
void write_pose(const std::filesystem::path& path, const CameraPose& pose);
CameraPose read_pose(const std::filesystem::path& path);

// frame_NNNN.png / frame_NNNN.pfm / frame_NNNN.json inside `dir`.
void save_frames(const std::filesystem::path& dir, const std::vector<FrameRGBD>& frames);
std::vector<FrameRGBD> load_frames(const std::filesystem::path& dir);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gsshare
