#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace diffpad {

enum class Label { kBonafide, kAttack };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

struct ManifestEntry {
  std::string sample_id;
  std::string file_path;  // relative paths resolve against the manifest's directory
  Label label = Label::kBonafide;
  std::string pai_type;
  std::string subject_id;
  std::string device;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::filesystem::path resolve(const ManifestEntry& e) const;

  // Throws DuplicateId or MissingField (attack rows need pai_type).
  void validate() const;
};

inline constexpr std::string_view kManifestHeader =
    "sample_id,file_path,label,pai_type,subject_id,device";

// Parse errors carry the 1-based line number.
DatasetManifest parse_manifest(std::string_view text, std::filesystem::path base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Shuffles the distinct bona fide subjects with `seed` and moves the
// shortest prefix holding >= train_fraction of bona fide samples to train.
// Attacks always go to test. Throws MissingSubject, InvalidConfig.
std::pair<DatasetManifest, DatasetManifest> partition_by_subject(const DatasetManifest& m,
                                                                 double train_fraction,
                                                                 std::uint64_t seed);

}  // namespace diffpad
