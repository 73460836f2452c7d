#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "calma/core/types.hpp"

namespace calma {

inline Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: empty input");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      header.push_back(cell);
    }
  }
  if (header.size() < 2 || header.back() != "y") throw ValidationError("csv: header must be f0,...,f{d-1},y");
  for (std::size_t i = 0; i + 1 < header.size(); ++i)
    if (header[i] != "f" + std::to_string(i)) throw ValidationError("csv: unexpected column name " + header[i]);
  const std::size_t d = header.size() - 1;
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Point p;
    p.reserve(d);
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 1) throw ValidationError("csv: wrong column count on line " + std::to_string(lineno));
    try {
      for (std::size_t i = 0; i < d; ++i) p.push_back(std::stod(cells[i]));
      double y = std::stod(cells[d]);
      if (y != 0.0 && y != 1.0) throw ValidationError("csv: non-binary label on line " + std::to_string(lineno));
      ds.append(std::move(p), static_cast<int>(y));
    } catch (const std::invalid_argument&) {
      throw ValidationError("csv: unparsable number on line " + std::to_string(lineno));
    } catch (const std::out_of_range&) {
      throw ValidationError("csv: number out of range on line " + std::to_string(lineno));
    }
  }
  ds.validate();
  return ds;
}

inline Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return read_csv(in);
}

inline void write_csv(std::ostream& out, const Dataset& ds) {
  const std::size_t d = ds.dim();
  for (std::size_t i = 0; i < d; ++i) out << "f" << i << ",";
  out << "y\n";
  out.precision(17);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.x[r]) out << v << ",";
    out << ds.y[r] << "\n";
  }
}

inline void write_csv_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  write_csv(out, ds);
}

inline nlohmann::json distribution_to_json(const FiniteDistribution& d) {
  return {{"points", d.points}, {"mass", d.mass}, {"bayes", d.bayes}};
}

inline FiniteDistribution distribution_from_json(const nlohmann::json& j) {
  try {
    return FiniteDistribution(j.at("points").get<std::vector<Point>>(), j.at("mass").get<std::vector<double>>(),
                              j.at("bayes").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("distribution json: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace calma
