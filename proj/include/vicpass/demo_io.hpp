#pragma once

#include <filesystem>
#include <string>

#include "vicpass/demogen.hpp"
#include "vicpass/io_util.hpp"

namespace vicpass {

inline constexpr const char* kDemoFormat = "vicpass-demo";
inline constexpr int kDemoFormatVersion = 1;

// traj.csv -> traj.meta.json
inline std::filesystem::path demo_meta_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline std::string demo_csv_header(int n, bool truth) {
  std::string h = "t";
  for (const char* pre : {"x", "v", "a", "f"})
    for (int i = 1; i <= n; ++i) h += "," + std::string(pre) + std::to_string(i);
  if (truth)
    for (const char* pre : {"k", "d"})
      for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j) h += "," + std::string(pre) + std::to_string(i) + std::to_string(j);
  return h;
}

inline void save_demo(const Demonstration& demo, const std::filesystem::path& path) {
  const int n = demo.dim;
  const bool truth = demo.truth.has_value();
  std::string out = demo_csv_header(n, truth) + "\n";
  for (std::size_t r = 0; r < demo.samples.size(); ++r) {
    const auto& s = demo.samples[r];
    out += fmt_double(s.t);
    for (const VectorXd* v : {&s.x, &s.v, &s.a, &s.f})
      for (int i = 0; i < n; ++i) out += "," + fmt_double((*v)(i));
    if (truth)
      for (const auto* seq : {&demo.truth->stiffness, &demo.truth->damping})
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) out += "," + fmt_double((*seq)[r](i, j));
    out += "\n";
  }
  write_text(path, out);

  json meta = demo.meta;
  meta["format"] = kDemoFormat;
  meta["version"] = kDemoFormatVersion;
  meta["dim"] = n;
  meta["dt"] = demo.dt;
  meta["n_samples"] = demo.samples.size();
  meta["inertia"] = matrix_to_json(demo.inertia.matrix());
  meta["reference"] = demo.reference.to_json();
  meta["has_ground_truth"] = truth;
  write_json(demo_meta_path(path), meta);
}

inline Demonstration load_demo(const std::filesystem::path& path) {
  const auto meta_path = demo_meta_path(path);
  const json meta = read_json(meta_path);
  if (meta.value("format", "") != kDemoFormat) throw ParseError(meta_path.string(), 0, "not a demonstration metadata file");
  if (meta.value("version", 0) != kDemoFormatVersion)
    throw ParseError(meta_path.string(), 0, "unsupported demonstration format version");

  Demonstration d;
  d.dim = meta.at("dim").get<int>();
  d.dt = meta.at("dt").get<double>();
  d.inertia = SpdMatrix::checked(matrix_from_json(meta.at("inertia")));
  d.reference = SinusoidSignal::from_json(meta.at("reference"));
  d.meta = meta;
  const auto expected_rows = meta.at("n_samples").get<std::size_t>();
  const int n = d.dim;

  const CsvTable t = read_numeric_csv(path);
  const bool truth = t.header.size() == static_cast<std::size_t>(1 + 4 * n + 2 * n * n);
  const std::string want = demo_csv_header(n, truth);
  std::string got;
  for (std::size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
  if (got != want) throw ParseError(path.string(), 1, "unexpected header '" + got + "'");
  if (t.rows.size() != expected_rows)
    throw ParseError(path.string(), t.rows.size() + 2,
                     "truncated: expected " + std::to_string(expected_rows) + " rows, found " + std::to_string(t.rows.size()));

  if (truth) d.truth = GroundTruth{};
  d.samples.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    DemoSample s;
    s.t = row[0];
    std::size_t c = 1;
    for (VectorXd* v : {&s.x, &s.v, &s.a, &s.f}) {
      v->resize(n);
      for (int i = 0; i < n; ++i) (*v)(i) = row[c++];
    }
    d.samples.push_back(std::move(s));
    if (truth) {
      for (auto* seq : {&d.truth->stiffness, &d.truth->damping}) {
        MatrixXd m(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) m(i, j) = row[c++];
        try {
          seq->push_back(SpdMatrix::checked(m));
        } catch (const Error& e) {
          throw ParseError(path.string(), r + 2, e.what());
        }
      }
    }
  }
  return d;
}

}  // namespace vicpass
