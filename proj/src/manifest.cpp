#include "diffpad/manifest.hpp"

#include <algorithm>
#include <boost/tokenizer.hpp>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "diffpad/error.hpp"
#include "diffpad/io.hpp"

namespace diffpad {

namespace fs = std::filesystem;

std::string_view to_string(Label label) {
  return label == Label::kAttack ? "attack" : "bonafide";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "bonafide") return Label::kBonafide;
  if (text == "attack") return Label::kAttack;
  return std::nullopt;
}

fs::path DatasetManifest::resolve(const ManifestEntry& e) const {
  const fs::path p(e.file_path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const ManifestEntry& e : entries) {
    if (e.sample_id.empty()) throw Error(ErrorCode::kMissingField, "empty sample_id");
    if (!seen.insert(e.sample_id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate sample_id '" + e.sample_id + "'");
    }
    if (e.label == Label::kAttack && e.pai_type.empty()) {
      throw Error(ErrorCode::kMissingField, "attack sample '" + e.sample_id + "' has no pai_type");
    }
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep(std::string(), std::string(","), std::string("\"")));
  return {tok.begin(), tok.end()};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

DatasetManifest parse_manifest(std::string_view text, fs::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  std::unordered_set<std::string> seen;
  auto fail = [&](ErrorCode code, const std::string& msg) {
    throw Error(code, "line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kManifestHeader) fail(ErrorCode::kParseError, "unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    try {
      f = split_csv(line);
    } catch (const boost::escaped_list_error& e) {
      fail(ErrorCode::kParseError, e.what());
    }
    if (f.size() != 6) fail(ErrorCode::kParseError, "expected 6 fields, got " + std::to_string(f.size()));
    ManifestEntry e{f[0], f[1], Label::kBonafide, f[3], f[4], f[5]};
    if (e.sample_id.empty()) fail(ErrorCode::kMissingField, "empty sample_id");
    if (e.file_path.empty()) fail(ErrorCode::kMissingField, "empty file_path");
    const auto label = parse_label(f[2]);
    if (!label) fail(ErrorCode::kParseError, "label must be bonafide or attack, got '" + f[2] + "'");
    e.label = *label;
    if (e.label == Label::kAttack && e.pai_type.empty()) {
      fail(ErrorCode::kMissingField, "attack sample '" + e.sample_id + "' has no pai_type");
    }
    if (!seen.insert(e.sample_id).second) {
      fail(ErrorCode::kDuplicateId, "duplicate sample_id '" + e.sample_id + "'");
    }
    m.entries.push_back(std::move(e));
  }
  if (lineno == 0) throw Error(ErrorCode::kParseError, "line 1: missing header");
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const ManifestEntry& e : m.entries) {
    out += csv_field(e.sample_id) + ',' + csv_field(e.file_path) + ',' +
           std::string(to_string(e.label)) + ',' + csv_field(e.pai_type) + ',' +
           csv_field(e.subject_id) + ',' + csv_field(e.device) + '\n';
  }
  return out;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  write_file_atomic(path, format_manifest(m));
}

std::pair<DatasetManifest, DatasetManifest> partition_by_subject(const DatasetManifest& m,
                                                                 double train_fraction,
                                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "train_fraction must be in (0, 1)");
  }
  std::map<std::string, std::size_t> counts;
  std::size_t n_bona = 0;
  for (const ManifestEntry& e : m.entries) {
    if (e.label != Label::kBonafide) continue;
    if (e.subject_id.empty()) {
      throw Error(ErrorCode::kMissingSubject, "bona fide sample '" + e.sample_id + "' has no subject_id");
    }
    ++counts[e.subject_id];
    ++n_bona;
  }
  std::vector<std::string> subjects;
  for (const auto& [s, _] : counts) subjects.push_back(s);
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);

  std::set<std::string> train_subjects;
  std::size_t taken = 0;
  for (const std::string& s : subjects) {
    if (static_cast<double>(taken) >= train_fraction * static_cast<double>(n_bona)) break;
    train_subjects.insert(s);
    taken += counts[s];
  }

  DatasetManifest train, test;
  train.base_dir = test.base_dir = m.base_dir;
  for (const ManifestEntry& e : m.entries) {
    const bool to_train = e.label == Label::kBonafide && train_subjects.contains(e.subject_id);
    (to_train ? train : test).entries.push_back(e);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace diffpad
