#include "tme/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace tme {

namespace {

bool is_missing_token(const std::string& s) {
  if (s.empty()) return true;
  if (s.size() != 3) return false;
  return std::tolower(static_cast<unsigned char>(s[0])) == 'n' &&
         std::tolower(static_cast<unsigned char>(s[1])) == 'a' &&
         std::tolower(static_cast<unsigned char>(s[2])) == 'n';
}

double parse_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end == begin || static_cast<std::size_t>(end - begin) != s.size() || errno == ERANGE)
    throw EngineError("cannot parse number '" + s + "' " + where);
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EngineError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::string text = read_text_file(path);
  // strip UTF-8 BOM
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
    text.erase(0, 3);

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;  // distinguishes a truly empty final line from a trailing newline
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field.push_back('"');
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        field.push_back(c);
        ++i;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        ++i;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        ++i;
        break;
      case '\r':
        ++i;  // swallowed; the newline (if any) ends the record
        break;
      case '\n':
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        field_started = false;
        ++i;
        break;
      default:
        field.push_back(c);
        field_started = true;
        ++i;
        break;
    }
  }
  if (in_quotes) throw EngineError("unterminated quoted field in " + path);
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void Manifest::validate() const {
  if (csv_path.empty()) throw EngineError("manifest: csv path is empty");
  if (id_column.empty() || image_column.empty() || target_column.empty())
    throw EngineError("manifest: id, image and target columns are all required");
  if (features.empty()) throw EngineError("manifest: at least one feature column is required");
  std::set<std::string> names{id_column, image_column, target_column};
  if (names.size() != 3) throw EngineError("manifest: id, image and target columns must differ");
  for (const auto& f : features) {
    if (!names.insert(f.name).second)
      throw EngineError("manifest: duplicate column role for '" + f.name + "'");
  }
}

Manifest read_manifest(const std::string& manifest_json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_json_path));
  } catch (const nlohmann::json::exception& e) {
    throw EngineError("manifest " + manifest_json_path + ": " + e.what());
  }
  static const std::set<std::string> known{"csv",      "id_column", "image_column",
                                           "target_column", "task", "features"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw EngineError("manifest " + manifest_json_path + ": unknown key '" + it.key() + "'");

  Manifest m;
  try {
    m.csv_path = j.at("csv").get<std::string>();
    m.id_column = j.at("id_column").get<std::string>();
    m.image_column = j.at("image_column").get<std::string>();
    m.target_column = j.at("target_column").get<std::string>();
    std::string task = j.at("task").get<std::string>();
    if (task == "classification")
      m.task = TaskKind::classification;
    else if (task == "regression")
      m.task = TaskKind::regression;
    else
      throw EngineError("manifest: task must be 'classification' or 'regression', got '" + task +
                        "'");
    for (const auto& f : j.at("features")) {
      FeatureSpec fs;
      fs.name = f.at("name").get<std::string>();
      std::string kind = f.at("kind").get<std::string>();
      if (kind == "numeric")
        fs.kind = ColumnKind::numeric;
      else if (kind == "categorical")
        fs.kind = ColumnKind::categorical;
      else
        throw EngineError("manifest: feature '" + fs.name + "' has unknown kind '" + kind + "'");
      m.features.push_back(std::move(fs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw EngineError("manifest " + manifest_json_path + ": " + e.what());
  }

  fs::path base = fs::path(manifest_json_path).parent_path();
  m.base_dir = base.empty() ? std::string(".") : base.string();
  if (!fs::path(m.csv_path).is_absolute()) m.csv_path = (base / m.csv_path).string();
  m.validate();
  return m;
}

LoadedDataset load_manifest(const Manifest& m) {
  m.validate();
  auto rows = read_csv(m.csv_path);
  if (rows.empty()) throw EngineError("csv is empty: " + m.csv_path);

  const auto& header = rows.front();
  auto col_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw EngineError("csv " + m.csv_path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_c = col_of(m.id_column);
  const std::size_t img_c = col_of(m.image_column);
  const std::size_t tgt_c = col_of(m.target_column);
  std::vector<std::size_t> feat_c;
  for (const auto& f : m.features) feat_c.push_back(col_of(f.name));
  const std::size_t width = header.size();
  const long d = static_cast<long>(feat_c.size());

  // First pass: distinct categorical values and class labels, coded by
  // sorted order so the coding does not depend on row order.
  std::vector<std::set<std::string>> cat_sets(static_cast<std::size_t>(d));
  std::set<std::string> label_set;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != width)
      throw EngineError("csv " + m.csv_path + ": row " + std::to_string(r + 1) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(width));
    for (long j = 0; j < d; ++j) {
      if (m.features[static_cast<std::size_t>(j)].kind != ColumnKind::categorical) continue;
      const std::string& cell = row[feat_c[static_cast<std::size_t>(j)]];
      if (!is_missing_token(cell)) cat_sets[static_cast<std::size_t>(j)].insert(cell);
    }
    if (m.task == TaskKind::classification) label_set.insert(row[tgt_c]);
  }

  LoadedDataset out;
  out.base_dir = m.base_dir;
  out.category_values.resize(static_cast<std::size_t>(d));
  std::vector<std::map<std::string, int>> cat_codes(static_cast<std::size_t>(d));
  for (long j = 0; j < d; ++j) {
    auto& vals = out.category_values[static_cast<std::size_t>(j)];
    vals.assign(cat_sets[static_cast<std::size_t>(j)].begin(),
                cat_sets[static_cast<std::size_t>(j)].end());
    for (std::size_t k = 0; k < vals.size(); ++k)
      cat_codes[static_cast<std::size_t>(j)][vals[k]] = static_cast<int>(k);
  }
  std::map<std::string, int> label_codes;
  if (m.task == TaskKind::classification) {
    out.class_labels.assign(label_set.begin(), label_set.end());
    for (std::size_t k = 0; k < out.class_labels.size(); ++k)
      label_codes[out.class_labels[k]] = static_cast<int>(k);
  }

  MultimodalDataset& ds = out.ds;
  ds.task = m.task;
  ds.n_classes = m.task == TaskKind::classification ? static_cast<int>(out.class_labels.size()) : 0;
  for (const auto& f : m.features) {
    ds.schema.names.push_back(f.name);
    ds.schema.kinds.push_back(f.kind);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = "at csv row " + std::to_string(r + 1);
    MultimodalSample s;
    s.id = row[id_c];
    s.image.path = row[img_c];
    fs::path img_abs = fs::path(m.base_dir) / s.image.path;
    if (!fs::exists(img_abs)) throw EngineError("image file not found: " + img_abs.string());

    s.tabular.values = Eigen::VectorXd::Zero(d);
    s.tabular.missing.assign(static_cast<std::size_t>(d), 0);
    for (long j = 0; j < d; ++j) {
      const std::string& cell = row[feat_c[static_cast<std::size_t>(j)]];
      if (is_missing_token(cell)) {
        s.tabular.values[j] = nan;
        s.tabular.missing[static_cast<std::size_t>(j)] = 1;
      } else if (m.features[static_cast<std::size_t>(j)].kind == ColumnKind::numeric) {
        s.tabular.values[j] =
            parse_double(cell, "in column '" + m.features[static_cast<std::size_t>(j)].name +
                                   "' " + where);
      } else {
        s.tabular.values[j] = cat_codes[static_cast<std::size_t>(j)].at(cell);
      }
    }

    const std::string& tcell = row[tgt_c];
    if (is_missing_token(tcell))
      throw EngineError("target value is missing " + where);
    if (m.task == TaskKind::classification)
      s.target = Target::cls(label_codes.at(tcell));
    else
      s.target = Target::reg(parse_double(tcell, "in target column " + where));
    ds.samples.push_back(std::move(s));
  }
  return out;
}

ImageArray load_image(const ImageRef& ref, const std::string& base_dir) {
  if (ref.loaded) return *ref.loaded;
  fs::path p = fs::path(ref.path).is_absolute() ? fs::path(ref.path)
                                                : fs::path(base_dir) / ref.path;
  return decode_image(p.string());
}

int Normalizer::local_code(long col, double stored) const {
  const auto& cm = code_map[static_cast<std::size_t>(col)];
  auto it = cm.find(static_cast<int>(std::lround(stored)));
  return it == cm.end() ? static_cast<int>(cm.size()) : it->second;
}

Normalizer fit_normalizer(const MultimodalDataset& ds, const std::vector<long>& train_indices) {
  Normalizer nz;
  nz.kinds = ds.schema.kinds;
  const long d = ds.d();
  nz.stats.resize(static_cast<std::size_t>(d));
  nz.code_map.resize(static_cast<std::size_t>(d));

  for (long j = 0; j < d; ++j) {
    std::vector<double> observed;
    for (long i : train_indices) {
      const auto& t = ds.samples[static_cast<std::size_t>(i)].tabular;
      if (!t.missing[static_cast<std::size_t>(j)]) observed.push_back(t.values[j]);
    }
    if (nz.kinds[static_cast<std::size_t>(j)] == ColumnKind::categorical) {
      std::set<int> codes;
      for (double v : observed) codes.insert(static_cast<int>(std::lround(v)));
      auto& cm = nz.code_map[static_cast<std::size_t>(j)];
      int next = 0;
      for (int c : codes) cm[c] = next++;
      // stats over the local codes so the in-context branch sees z-scores
      for (double& v : observed) v = cm.at(static_cast<int>(std::lround(v)));
    }
    auto& st = nz.stats[static_cast<std::size_t>(j)];
    const std::size_t n = observed.size();
    if (n == 0) {
      st.constant = true;
      continue;
    }
    double mean = 0.0;
    for (double v : observed) mean += v;
    mean /= static_cast<double>(n);
    st.mean = mean;
    if (n < 2) {
      st.constant = true;
      continue;
    }
    double ss = 0.0;
    for (double v : observed) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd > 0.0 && std::isfinite(sd))
      st.std = sd;
    else
      st.constant = true;
  }
  return nz;
}

Eigen::MatrixXd normalized_matrix(const MultimodalDataset& ds, const Normalizer& nz,
                                  const std::vector<long>& rows) {
  if (nz.d() != ds.d()) throw EngineError("normalizer schema does not match dataset");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<long>(rows.size()), ds.d());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& t = ds.samples[static_cast<std::size_t>(rows[r])].tabular;
    for (long j = 0; j < ds.d(); ++j) {
      if (t.missing[static_cast<std::size_t>(j)]) continue;  // stays 0; mask carries the fact
      const auto& st = nz.stats[static_cast<std::size_t>(j)];
      if (st.constant) continue;
      double v = t.values[j];
      if (nz.kinds[static_cast<std::size_t>(j)] == ColumnKind::categorical)
        v = nz.local_code(j, v);
      out(static_cast<long>(r), j) = (v - st.mean) / st.std;
    }
  }
  return out;
}

EncodedInputs encode_for_mlp(const MultimodalDataset& ds, const Normalizer& nz,
                             const std::vector<long>& rows) {
  if (nz.d() != ds.d()) throw EngineError("normalizer schema does not match dataset");
  EncodedInputs enc;
  for (long j = 0; j < ds.d(); ++j) {
    if (nz.kinds[static_cast<std::size_t>(j)] == ColumnKind::numeric)
      enc.numeric_cols.push_back(j);
    else
      enc.cat_cols.push_back(j);
  }
  enc.numeric =
      Eigen::MatrixXd::Zero(static_cast<long>(rows.size()), static_cast<long>(enc.numeric_cols.size()));
  enc.cat_codes.resize(enc.cat_cols.size());
  for (auto& v : enc.cat_codes) v.resize(rows.size());

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& t = ds.samples[static_cast<std::size_t>(rows[r])].tabular;
    for (long j = 0; j < ds.d(); ++j) {
      if (t.missing[static_cast<std::size_t>(j)])
        throw EngineError("feed-forward tabular branch requires imputed input; sample '" +
                          ds.samples[static_cast<std::size_t>(rows[r])].id +
                          "' has a missing cell in column '" +
                          ds.schema.names[static_cast<std::size_t>(j)] + "'");
    }
    for (std::size_t k = 0; k < enc.numeric_cols.size(); ++k) {
      long j = enc.numeric_cols[k];
      const auto& st = nz.stats[static_cast<std::size_t>(j)];
      enc.numeric(static_cast<long>(r), static_cast<long>(k)) =
          st.constant ? 0.0 : (t.values[j] - st.mean) / st.std;
    }
    for (std::size_t k = 0; k < enc.cat_cols.size(); ++k) {
      long j = enc.cat_cols[k];
      enc.cat_codes[k][r] = nz.local_code(j, t.values[j]);
    }
  }
  return enc;
}

namespace {

MedianImputer fit_imputer_impl(const MultimodalDataset& ds, const std::vector<long>& idx) {
  if (idx.empty()) throw EngineError("cannot fit imputer on an empty split");
  MedianImputer imp;
  imp.kinds = ds.schema.kinds;
  const long d = ds.d();
  imp.fill.assign(static_cast<std::size_t>(d), 0.0);
  for (long j = 0; j < d; ++j) {
    if (imp.kinds[static_cast<std::size_t>(j)] == ColumnKind::numeric) {
      std::vector<double> vals;
      for (long i : idx) {
        const auto& t = ds.samples[static_cast<std::size_t>(i)].tabular;
        if (!t.missing[static_cast<std::size_t>(j)]) vals.push_back(t.values[j]);
      }
      if (vals.empty()) {
        warn("imputer: column '" + ds.schema.names[static_cast<std::size_t>(j)] +
             "' has no observed training values; filling with 0");
        continue;
      }
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      imp.fill[static_cast<std::size_t>(j)] =
          (n % 2 == 1) ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    } else {
      // mode over observed codes; ties go to the code seen first
      std::map<int, std::pair<long, std::size_t>> counts;  // code -> {count, first seen}
      std::size_t order = 0;
      for (long i : idx) {
        const auto& t = ds.samples[static_cast<std::size_t>(i)].tabular;
        if (t.missing[static_cast<std::size_t>(j)]) continue;
        int c = static_cast<int>(std::lround(t.values[j]));
        auto [it, inserted] = counts.try_emplace(c, 0L, order);
        it->second.first++;
        ++order;
      }
      if (counts.empty()) {
        warn("imputer: column '" + ds.schema.names[static_cast<std::size_t>(j)] +
             "' has no observed training values; filling with the first category");
        continue;
      }
      int best = -1;
      long best_count = -1;
      std::size_t best_seen = 0;
      for (const auto& [code, cf] : counts) {
        if (cf.first > best_count || (cf.first == best_count && cf.second < best_seen)) {
          best = code;
          best_count = cf.first;
          best_seen = cf.second;
        }
      }
      imp.fill[static_cast<std::size_t>(j)] = best;
    }
  }
  return imp;
}

}  // namespace

MedianImputer fit_imputer(const MultimodalDataset& ds, const std::vector<long>& train_indices) {
  return fit_imputer_impl(ds, train_indices);
}

MedianImputer fit_imputer(const MultimodalDataset& ds) {
  std::vector<long> all(static_cast<std::size_t>(ds.n()));
  for (long i = 0; i < ds.n(); ++i) all[static_cast<std::size_t>(i)] = i;
  return fit_imputer_impl(ds, all);
}

MultimodalDataset apply_imputer(const MedianImputer& imp, const MultimodalDataset& ds) {
  if (imp.kinds != ds.schema.kinds)
    throw EngineError("imputer schema does not match dataset schema");
  MultimodalDataset out = ds;
  for (auto& s : out.samples) {
    for (long j = 0; j < out.d(); ++j) {
      if (!s.tabular.missing[static_cast<std::size_t>(j)]) continue;
      s.tabular.values[j] = imp.fill[static_cast<std::size_t>(j)];
      s.tabular.missing[static_cast<std::size_t>(j)] = 0;
    }
  }
  return out;
}

}  // namespace tme
