#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rkdl/dataset.hpp"
#include "rkdl/tensor.hpp"

namespace rkdl {

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::vector<double>> read_numeric_csv(const std::string& path,
                                                         std::vector<std::string>& header) {
  std::ifstream in(path);
  require(bool(in), "read_csv", "cannot open " + path);
  std::string line;
  require(bool(std::getline(in, line)), "read_csv", path + " is empty");
  header = split_csv_line(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    require(cells.size() == header.size(), "read_csv",
            path + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                std::to_string(header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(cells[i].c_str(), &end);
      require(end != cells[i].c_str(), "read_csv", path + ": bad number '" + cells[i] + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

// Columns: t, x<i>_noisy per channel, x<i>_clean per channel. %.17g so values
// round-trip exactly.
inline void write_ode_csv(const std::string& path, const OdeDataset& ds) {
  std::ofstream out(path);
  detail::require(bool(out), "write_ode_csv", "cannot open " + path);
  const std::size_t d = ds.channels();
  out << "t";
  for (std::size_t c = 0; c < d; ++c) out << ",x" << c << "_noisy";
  for (std::size_t c = 0; c < d; ++c) out << ",x" << c << "_clean";
  out << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << detail::fmt_double(ds.times[i]);
    for (std::size_t c = 0; c < d; ++c) out << "," << detail::fmt_double(ds.noisy.at(i, c));
    for (std::size_t c = 0; c < d; ++c) out << "," << detail::fmt_double(ds.clean.at(i, c));
    out << "\n";
  }
}

inline OdeDataset read_ode_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_numeric_csv(path, header);
  detail::require(!header.empty() && header[0] == "t", "read_ode_csv",
                  path + ": first column must be t");
  detail::require(header.size() >= 3 && header.size() % 2 == 1, "read_ode_csv",
                  path + ": expected t plus noisy/clean channel pairs");
  const std::size_t d = (header.size() - 1) / 2;
  OdeDataset ds;
  ds.clean = Tensor({rows.size(), d});
  ds.noisy = Tensor({rows.size(), d});
  ds.times.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.times.push_back(rows[i][0]);
    for (std::size_t c = 0; c < d; ++c) {
      ds.noisy.at(i, c) = rows[i][1 + c];
      ds.clean.at(i, c) = rows[i][1 + d + c];
    }
  }
  ds.observed.resize(d);
  for (std::size_t c = 0; c < d; ++c) ds.observed[c] = c;
  ds.noise_sigma.assign(d, 0.0);
  return ds;
}

// Lattice rows in time-major order: t, zeta, u_noisy, u_clean.
inline void write_pde_csv(const std::string& path, const PdeDataset& ds) {
  std::ofstream out(path);
  detail::require(bool(out), "write_pde_csv", "cannot open " + path);
  out << "t,zeta,u_noisy,u_clean\n";
  const auto pts = ds.grid.points();
  for (std::size_t i = 0; i < ds.snapshots(); ++i)
    for (std::size_t j = 0; j < ds.grid.n; ++j)
      out << detail::fmt_double(ds.times[i]) << "," << detail::fmt_double(pts[j]) << ","
          << detail::fmt_double(ds.noisy.at(i, j)) << "," << detail::fmt_double(ds.clean.at(i, j))
          << "\n";
}

inline PdeDataset read_pde_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_numeric_csv(path, header);
  detail::require(header.size() == 4 && header[0] == "t" && header[1] == "zeta", "read_pde_csv",
                  path + ": expected columns t,zeta,u_noisy,u_clean");
  detail::require(!rows.empty(), "read_pde_csv", path + ": no data rows");
  std::size_t S = 1;
  while (S < rows.size() && rows[S][0] == rows[0][0]) ++S;
  detail::require(rows.size() % S == 0, "read_pde_csv", path + ": ragged lattice");
  const std::size_t T = rows.size() / S;
  PdeDataset ds;
  const double left = rows[0][1];
  const double spacing = S >= 2 ? rows[1][1] - rows[0][1] : 1.0;
  ds.grid = Grid1d{S, left, spacing * double(S)};
  ds.clean = Tensor({T, S});
  ds.noisy = Tensor({T, S});
  ds.times.reserve(T);
  for (std::size_t i = 0; i < T; ++i) {
    ds.times.push_back(rows[i * S][0]);
    for (std::size_t j = 0; j < S; ++j) {
      detail::require(rows[i * S + j][0] == ds.times[i], "read_pde_csv", path + ": ragged lattice");
      ds.noisy.at(i, j) = rows[i * S + j][2];
      ds.clean.at(i, j) = rows[i * S + j][3];
    }
  }
  return ds;
}

// FNV-1a over the raw bytes; used to fingerprint datasets in run metadata
inline std::uint64_t fnv1a_bytes(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t dataset_hash(const OdeDataset& ds) {
  std::uint64_t h = fnv1a_bytes(ds.times.data(), ds.times.size() * sizeof(double));
  h = fnv1a_bytes(ds.noisy.data(), ds.noisy.numel() * sizeof(double), h);
  h = fnv1a_bytes(ds.clean.data(), ds.clean.numel() * sizeof(double), h);
  return h;
}

inline std::uint64_t dataset_hash(const PdeDataset& ds) {
  std::uint64_t h = fnv1a_bytes(ds.times.data(), ds.times.size() * sizeof(double));
  h = fnv1a_bytes(ds.noisy.data(), ds.noisy.numel() * sizeof(double), h);
  h = fnv1a_bytes(ds.clean.data(), ds.clean.numel() * sizeof(double), h);
  return h;
}

}  // namespace rkdl
