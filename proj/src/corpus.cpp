#include "aegle/corpus.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace aegle {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CaseRecord
// ---------------------------------------------------------------------------

namespace {

std::string scalar_text(const Json& value) {
  if (value.is_string()) {
    return value.get<std::string>();
  }
  if (value.is_number() || value.is_boolean()) {
    return value.dump();
  }
  return {};
}

const std::vector<std::string>& known_case_keys() {
  static const std::vector<std::string> keys = {
      "schema",          "case_id",   "department",           "demographics", "gold_subjective",
      "gold_objective",  "gold_assessment", "gold_plan", "gold_diagnosis_label", "aliases",
      "unavailable_topics"};
  return keys;
}

Json sections_json(const std::vector<GoldSection>& sections) {
  Json out = Json::object();
  for (const auto& s : sections) {
    if (s.fields.empty()) {
      out[s.name] = s.text;
    } else {
      Json fields = Json::object();
      for (const auto& [k, v] : s.fields) {
        fields[k] = v;
      }
      out[s.name] = std::move(fields);
    }
  }
  return out;
}

std::vector<GoldSection> sections_from_json(const Json& doc, std::string_view where) {
  std::vector<GoldSection> out;
  if (doc.is_null()) {
    return out;
  }
  if (!doc.is_object()) {
    throw ValidationError(std::string(where) + " must be an object of sections");
  }
  for (const auto& [name, value] : doc.items()) {
    GoldSection s;
    s.name = name;
    if (value.is_string()) {
      s.text = value.get<std::string>();
    } else if (value.is_object()) {
      for (const auto& [field, text] : value.items()) {
        if (!text.is_string()) {
          throw ValidationError(std::string(where) + "." + name + "." + field + " must be text");
        }
        s.fields.emplace_back(field, text.get<std::string>());
      }
    } else {
      throw ValidationError(std::string(where) + "." + name + " must be text or an object of fields");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string department_id(std::string_view name) {
  std::string out;
  for (char c : trim(name)) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) != 0) {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') {
    out.pop_back();
  }
  return out;
}

void render_gold_sections(std::string& out, const std::vector<GoldSection>& sections) {
  for (const auto& s : sections) {
    std::string label = s.name;
    std::replace(label.begin(), label.end(), '_', ' ');
    out += "### " + label + "\n";
    if (s.fields.empty()) {
      out += s.text + "\n";
    }
    for (const auto& [k, v] : s.fields) {
      std::string field = k;
      std::replace(field.begin(), field.end(), '_', ' ');
      out += "- " + field + ": " + v + "\n";
    }
    out += "\n";
  }
}

}  // namespace

std::string CaseRecord::age() const {
  return demographics.is_object() && demographics.contains("age") ? scalar_text(demographics.at("age")) : "";
}

std::string CaseRecord::sex() const {
  if (!demographics.is_object()) {
    return {};
  }
  if (demographics.contains("sex")) {
    return scalar_text(demographics.at("sex"));
  }
  return demographics.contains("gender") ? scalar_text(demographics.at("gender")) : "";
}

std::string CaseRecord::gold_note() const {
  std::string out = "# Integrated Patient Note\n\n## S: Subjective\n\n";
  render_gold_sections(out, gold_subjective);
  out += "## O: Objective\n\n";
  render_gold_sections(out, gold_objective);
  out += "## A: Assessment\n\n" + gold_assessment + "\n\n## P: Plan\n\n" + gold_plan + "\n";
  return out;
}

void validate_case(const CaseRecord& record) {
  if (trim(record.case_id).empty()) {
    throw ValidationError("case_id is empty");
  }
  if (trim(record.department).empty()) {
    throw ValidationError("case " + record.case_id + ": department is empty");
  }
  if (trim(record.gold_diagnosis_label).empty()) {
    throw ValidationError("case " + record.case_id + ": gold_diagnosis_label is missing");
  }
  if (record.gold_subjective.empty()) {
    throw ValidationError("case " + record.case_id + ": gold_subjective is empty");
  }
  if (!record.demographics.is_object()) {
    throw ValidationError("case " + record.case_id + ": demographics must be an object");
  }
}

Json to_json(const CaseRecord& record) {
  Json out{{"schema", kCaseSchema},
           {"case_id", record.case_id},
           {"department", record.department},
           {"demographics", record.demographics},
           {"gold_subjective", sections_json(record.gold_subjective)},
           {"gold_objective", sections_json(record.gold_objective)},
           {"gold_assessment", record.gold_assessment},
           {"gold_plan", record.gold_plan},
           {"gold_diagnosis_label", record.gold_diagnosis_label},
           {"aliases", record.aliases},
           {"unavailable_topics", record.unavailable_topics}};
  for (const auto& [k, v] : record.extra.items()) {
    out[k] = v;
  }
  return out;
}

CaseRecord case_from_json(const Json& doc) {
  if (!doc.is_object()) {
    throw ValidationError("case record must be a JSON object");
  }
  if (const auto it = doc.find("schema"); it != doc.end() && *it != kCaseSchema) {
    throw ValidationError("unsupported case schema " + it->dump());
  }
  CaseRecord r;
  try {
    r.case_id = scalar_text(doc.value("case_id", Json()));
    r.department = doc.value("department", std::string());
    r.demographics = doc.value("demographics", Json::object());
    r.gold_subjective = sections_from_json(doc.value("gold_subjective", Json()), "gold_subjective");
    r.gold_objective = sections_from_json(doc.value("gold_objective", Json()), "gold_objective");
    r.gold_assessment = doc.value("gold_assessment", std::string());
    r.gold_plan = doc.value("gold_plan", std::string());
    r.gold_diagnosis_label = doc.value("gold_diagnosis_label", std::string());
    r.aliases = doc.value("aliases", std::vector<std::string>{});
    r.unavailable_topics = doc.value("unavailable_topics", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed case record: ") + e.what());
  }
  const auto& known = known_case_keys();
  for (const auto& [k, v] : doc.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      r.extra[k] = v;
    }
  }
  validate_case(r);
  return r;
}

CaseRecord case_from_clinicalbench(const Json& doc) {
  if (!doc.is_object()) {
    throw ValidationError("case record must be a JSON object");
  }
  const auto text = [&](std::initializer_list<const char*> keys) -> std::string {
    for (const char* k : keys) {
      if (const auto it = doc.find(k); it != doc.end()) {
        if (it->is_array()) {
          std::string joined;
          for (const auto& item : *it) {
            const auto s = trim(scalar_text(item));
            if (!s.empty()) joined += joined.empty() ? s : "; " + s;
          }
          return joined;
        }
        return trim(scalar_text(*it));
      }
    }
    return {};
  };

  CaseRecord r;
  r.case_id = text({"case_id", "id", "patient_id"});
  r.department = department_id(text({"department", "clinical_department"}));
  r.demographics = Json::object();
  if (auto age = text({"age"}); !age.empty()) r.demographics["age"] = age;
  if (auto sex = text({"sex", "gender"}); !sex.empty()) r.demographics["sex"] = sex;

  GoldSection basic{"basic_information", "", {}};
  if (auto cc = text({"chief_complaint", "main_complaint"}); !cc.empty()) {
    basic.fields.emplace_back("chief_complaint", cc);
  }
  if (!basic.fields.empty()) r.gold_subjective.push_back(std::move(basic));
  if (auto hpi = text({"history_of_present_illness", "present_illness"}); !hpi.empty()) {
    r.gold_subjective.push_back(GoldSection{"history_of_present_illness", hpi, {}});
  }
  std::string pmh;
  const auto append_labelled = [&](const char* label, const std::string& body) {
    if (!body.empty()) {
      pmh += (pmh.empty() ? "" : "\n") + std::string(label) + ": " + body;
    }
  };
  append_labelled("Past history", text({"past_medical_history", "past_history"}));
  append_labelled("Personal history", text({"personal_history"}));
  append_labelled("Family history", text({"family_history"}));
  if (!pmh.empty()) r.gold_subjective.push_back(GoldSection{"past_medical_history", pmh, {}});
  if (auto exam = text({"physical_examination", "physical_exam"}); !exam.empty()) {
    r.gold_objective.push_back(GoldSection{"physical_examination", exam, {}});
  }
  std::string aux = text({"auxiliary_examination", "auxiliary_examinations"});
  if (aux.empty()) {
    const auto lab = text({"laboratory_examination", "laboratory"});
    const auto img = text({"imaging_examination", "imaging"});
    aux = lab + (lab.empty() || img.empty() ? "" : "\n") + img;
  }
  if (!aux.empty()) r.gold_objective.push_back(GoldSection{"auxiliary_examination", aux, {}});

  r.gold_diagnosis_label = text({"gold_diagnosis_label", "diagnosis", "final_diagnosis"});
  if (const auto it = doc.find("diagnosis"); it != doc.end() && it->is_array() && !it->empty()) {
    r.gold_diagnosis_label = trim(scalar_text(it->front()));
  }
  const auto basis = text({"diagnostic_basis", "diagnosis_basis"});
  r.gold_assessment = r.gold_diagnosis_label + (basis.empty() ? "" : ". " + basis);
  r.gold_plan = text({"treatment", "treatment_plan", "treatment_principle"});
  if (const auto it = doc.find("aliases"); it != doc.end() && it->is_array()) {
    for (const auto& a : *it) r.aliases.push_back(scalar_text(a));
  }
  validate_case(r);
  return r;
}

CaseAdapter case_adapter_from_string(std::string_view name) {
  if (name == "aegle_native" || name == "native") return CaseAdapter::AegleNative;
  if (name == "clinicalbench_json" || name == "clinicalbench") return CaseAdapter::ClinicalBenchJson;
  throw ValidationError("unknown case adapter '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

std::map<std::string, int> LoadResult::department_histogram() const {
  std::map<std::string, int> h;
  for (const auto& c : cases) {
    ++h[c.department];
  }
  return h;
}

Json to_json(const DatasetManifest& manifest) {
  Json histogram = Json::object();
  for (const auto& [d, n] : manifest.department_histogram) histogram[d] = n;
  Json checksums = Json::object();
  for (const auto& [f, s] : manifest.checksums) checksums[f] = s;
  return Json{{"name", manifest.name},
              {"version", manifest.version},
              {"case_count", manifest.case_count},
              {"department_histogram", std::move(histogram)},
              {"checksums", std::move(checksums)}};
}

DatasetManifest dataset_manifest_from_json(const Json& doc) {
  DatasetManifest m;
  m.name = doc.value("name", std::string());
  m.version = doc.value("version", std::string());
  m.case_count = doc.value("case_count", 0);
  const Json histogram = doc.value("department_histogram", Json::object());
  for (const auto& [d, n] : histogram.items()) {
    m.department_histogram[d] = n.get<int>();
  }
  for (const auto& [f, s] : doc.at("checksums").items()) {
    m.checksums[f] = s.get<std::string>();
  }
  return m;
}

namespace {

void verify_checksums(const fs::path& dir, const std::map<std::string, std::string>& checksums) {
  for (const auto& [file, expected] : checksums) {
    const auto path = dir / file;
    if (!fs::exists(path)) {
      throw ChecksumMismatchError("manifest lists missing file " + path.string());
    }
    const auto actual = sha256_hex(read_file(path));
    if (actual != expected) {
      throw ChecksumMismatchError("checksum mismatch for " + path.string() + ": expected " + expected + ", found " +
                                  actual);
    }
  }
}

void ingest(const Json& doc, const std::string& source, CaseAdapter adapter, LoadResult& out,
            std::set<std::string>& ids) {
  try {
    CaseRecord r = adapter == CaseAdapter::AegleNative ? case_from_json(doc) : case_from_clinicalbench(doc);
    if (!ids.insert(r.case_id).second) {
      throw ValidationError("duplicate case_id " + r.case_id);
    }
    out.cases.push_back(std::move(r));
  } catch (const Error& e) {
    out.errors.push_back(LoadIssue{source, e.what()});
    spdlog::warn("{}: {}", source, e.what());
  }
}

void load_file(const fs::path& path, CaseAdapter adapter, LoadResult& out, std::set<std::string>& ids) {
  const auto name = path.filename().string();
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) {
        continue;
      }
      const auto source = name + ":" + std::to_string(lineno);
      try {
        ingest(Json::parse(line), source, adapter, out, ids);
      } catch (const nlohmann::json::parse_error& e) {
        out.errors.push_back(LoadIssue{source, std::string("invalid JSON: ") + e.what()});
      }
    }
    return;
  }
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    out.errors.push_back(LoadIssue{name, std::string("invalid JSON: ") + e.what()});
    return;
  }
  if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      ingest(doc[i], name + "[" + std::to_string(i) + "]", adapter, out, ids);
    }
  } else {
    ingest(doc, name, adapter, out, ids);
  }
}

}  // namespace

LoadResult load_cases(const fs::path& path, CaseAdapter adapter, const Roster& roster) {
  if (!fs::exists(path)) {
    throw ValidationError("dataset path does not exist: " + path.string());
  }
  LoadResult out;
  std::set<std::string> ids;
  if (fs::is_directory(path)) {
    const auto manifest_path = path / "manifest.json";
    if (fs::exists(manifest_path)) {
      verify_checksums(path, dataset_manifest_from_json(Json::parse(read_file(manifest_path))).checksums);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      const auto ext = entry.path().extension();
      if (entry.is_regular_file() && (ext == ".json" || ext == ".jsonl") && entry.path().filename() != "manifest.json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      load_file(f, adapter, out, ids);
    }
  } else {
    load_file(path, adapter, out, ids);
  }
  for (const auto& c : out.cases) {
    if (!roster.contains(c.department) &&
        std::find(out.extension_departments.begin(), out.extension_departments.end(), c.department) ==
            out.extension_departments.end()) {
      out.extension_departments.push_back(c.department);
      out.warnings.push_back("department '" + c.department + "' is outside the roster; registered as an extension");
      spdlog::warn("{}", out.warnings.back());
    }
  }
  return out;
}

DatasetManifest export_cases(const std::vector<CaseRecord>& cases, const fs::path& dir, const std::string& name,
                             const std::string& version) {
  if (fs::exists(dir)) {
    throw RunExistsError("refusing to overwrite existing directory " + dir.string());
  }
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = name;
  m.version = version;
  for (const auto& c : cases) {
    validate_case(c);
    const auto file = c.case_id + ".json";
    const auto body = to_json(c).dump(2) + "\n";
    write_file(dir / file, body);
    m.checksums[file] = sha256_hex(body);
    ++m.department_histogram[c.department];
    ++m.case_count;
  }
  write_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

std::vector<Json> read_jsonl(const fs::path& path) {
  std::vector<Json> out;
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot read " + path.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      out.push_back(Json::parse(line));
    }
  }
  return out;
}

Json export_run(const RunExport& run, const fs::path& out_dir) {
  if (!out_dir.parent_path().empty()) {
    fs::create_directories(out_dir.parent_path());
  }
  std::error_code ec;
  if (fs::exists(out_dir) || !fs::create_directory(out_dir, ec)) {
    throw RunExistsError("run directory " + out_dir.string() + " already exists; runs are never overwritten");
  }
  std::map<std::string, std::string> files;
  const auto emit = [&](const std::string& name, const std::string& body) {
    write_file(out_dir / name, body);
    files[name] = sha256_hex(body);
  };
  std::string jsonl;
  for (const auto& t : run.transcripts) {
    jsonl += canonical_dump(t) + "\n";
  }
  emit("transcripts.jsonl", jsonl);
  emit("config.json", run.config.dump(2) + "\n");
  if (run.reports) {
    emit("reports.json", run.reports->dump(2) + "\n");
    emit("reports.csv", run.reports_csv);
  }
  Json checksums = Json::object();
  for (const auto& [f, s] : files) checksums[f] = s;
  Json manifest{{"schema", kRunSchema},
                {"name", run.name},
                {"case_count", run.transcripts.size()},
                {"checksums", std::move(checksums)}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

LoadedRun load_run(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw ValidationError("no manifest.json in " + dir.string());
  }
  LoadedRun run;
  run.manifest = Json::parse(read_file(manifest_path));
  std::map<std::string, std::string> checksums;
  for (const auto& [f, s] : run.manifest.at("checksums").items()) {
    checksums[f] = s.get<std::string>();
  }
  verify_checksums(dir, checksums);
  run.transcripts = read_jsonl(dir / "transcripts.jsonl");
  run.config = Json::parse(read_file(dir / "config.json"));
  if (fs::exists(dir / "reports.json")) {
    run.reports = Json::parse(read_file(dir / "reports.json"));
  }
  return run;
}

}  // namespace aegle
