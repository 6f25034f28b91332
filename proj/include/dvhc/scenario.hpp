#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dvhc/controller.hpp"
#include "dvhc/core.hpp"

namespace dvhc {

/// Scenario description: which system and constraint family to run, which
/// orbit to stabilize, the design weights and the simulation protocol.
/// Physical quantities are SI, angles in radians.
struct Scenario {
  std::string system_name;
  std::map<std::string, double> system_params;

  Vec translation;          // direction of the constraint family
  double s_max = 1.0;       // certification range for the translation
  ThetaMode theta_mode = ThetaMode::GraphCoordinate;
  std::optional<double> tube_radius;
  bool retract_translated = true;

  double energy = 0.0;      // target orbit level
  int direction = +1;

  double kp = 100.0;
  double kd = 10.0;

  Mat Q = Mat::Identity(3, 3);
  double R = 1.0;

  double step = 1e-3;
  double t_final = 100.0;

  Vec q0, qd0;
  double s0 = 0.0, sd0 = 0.0;

  std::vector<double> portrait_energies;
  std::string out_dir;  // default output directory, overridable on the command line

  /// Canonical identity of everything the gain depends on.
  std::string canonical(const std::string& system_canonical) const {
    std::ostringstream os;
    char buf[64];
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g;", v);
      os << buf;
    };
    os << system_canonical << ";L=";
    for (int i = 0; i < translation.size(); ++i) put(translation[i]);
    os << "E0=";
    put(energy);
    os << "dir=" << direction << ";Q=";
    for (int r = 0; r < Q.rows(); ++r)
      for (int c = 0; c < Q.cols(); ++c) put(Q(r, c));
    os << "R=";
    put(R);
    return os.str();
  }

  std::string fingerprint(const std::string& system_canonical) const {
    const std::string s = canonical(system_canonical);
    // FNV-1a, 64 bit.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& text, int line,
                                             int column) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    if (tok == ",") continue;
    if (!tok.empty() && tok.back() == ',') tok.pop_back();
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParseError("not a number: '" + tok + "'", line, column);
    }
  }
  return out;
}

inline double parse_number(const std::string& text, int line, int column) {
  const auto v = parse_number_list(text, line, column);
  if (v.size() != 1)
    throw ParseError("expected a single number, got '" + text + "'", line, column);
  return v[0];
}

}  // namespace detail

/// Key/value scenario format with [section] headers, '#' or ';' comments and
/// whitespace-separated numeric lists.  Throws ParseError with a 1-based
/// line/column location on malformed input.
inline Scenario parse_scenario(std::istream& is) {
  Scenario sc;
  std::string line;
  std::string section;
  int lineno = 0;
  bool have_energy = false, have_translation = false;

  while (std::getline(is, line)) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::string body = line.substr(first, last - first + 1);
    const int col = static_cast<int>(first) + 1;

    if (body.front() == '[') {
      if (body.back() != ']')
        throw ParseError("unterminated section header", lineno, col);
      section = body.substr(1, body.size() - 2);
      const std::vector<std::string> known{
          "system", "vhc",        "orbit",     "constraint_gains",
          "weights", "integrator", "initial",   "output",
          "portrait"};
      bool ok = false;
      for (const auto& k : known) ok = ok || k == section;
      if (!ok) throw ParseError("unknown section [" + section + "]", lineno, col);
      continue;
    }

    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected 'key = value'", lineno, col);
    std::string key = body.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = body.substr(eq + 1);
    const auto vfirst = value.find_first_not_of(" \t");
    const int vcol = col + static_cast<int>(eq) + 1 +
                     (vfirst == std::string::npos ? 0 : static_cast<int>(vfirst));
    if (vfirst == std::string::npos)
      throw ParseError("missing value for '" + key + "'", lineno, vcol);
    value = value.substr(vfirst);
    value.erase(value.find_last_not_of(" \t") + 1);

    auto num = [&] { return detail::parse_number(value, lineno, vcol); };
    auto nums = [&] { return detail::parse_number_list(value, lineno, vcol); };

    if (section == "system") {
      if (key == "name")
        sc.system_name = value;
      else
        sc.system_params[key] = num();
    } else if (section == "vhc") {
      if (key == "translation") {
        const auto v = nums();
        sc.translation = Eigen::Map<const Vec>(v.data(), v.size());
        have_translation = true;
      } else if (key == "s_max") {
        sc.s_max = num();
      } else if (key == "theta_mode") {
        if (value == "graph")
          sc.theta_mode = ThetaMode::GraphCoordinate;
        else if (value == "nearest")
          sc.theta_mode = ThetaMode::NearestPoint;
        else
          throw ParseError("theta_mode must be 'graph' or 'nearest'", lineno, vcol);
      } else if (key == "tube_radius") {
        sc.tube_radius = num();
      } else if (key == "retract_translated") {
        if (value == "true" || value == "1")
          sc.retract_translated = true;
        else if (value == "false" || value == "0")
          sc.retract_translated = false;
        else
          throw ParseError("retract_translated must be a boolean", lineno, vcol);
      } else {
        throw ParseError("unknown key '" + key + "' in [vhc]", lineno, col);
      }
    } else if (section == "orbit") {
      if (key == "energy")
        sc.energy = num(), have_energy = true;
      else if (key == "direction")
        sc.direction = num() >= 0 ? +1 : -1;
      else
        throw ParseError("unknown key '" + key + "' in [orbit]", lineno, col);
    } else if (section == "constraint_gains") {
      if (key == "kp")
        sc.kp = num();
      else if (key == "kd")
        sc.kd = num();
      else
        throw ParseError("unknown key '" + key + "' in [constraint_gains]", lineno, col);
    } else if (section == "weights") {
      if (key == "Q") {
        const auto v = nums();
        if (v.size() == 3) {
          sc.Q = Mat::Zero(3, 3);
          sc.Q(0, 0) = v[0];
          sc.Q(1, 1) = v[1];
          sc.Q(2, 2) = v[2];
        } else if (v.size() == 9) {
          sc.Q = Mat(3, 3);
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) sc.Q(r, c) = v[3 * r + c];
        } else {
          throw ParseError("Q needs 3 diagonal or 9 full entries", lineno, vcol);
        }
      } else if (key == "R") {
        sc.R = num();
      } else {
        throw ParseError("unknown key '" + key + "' in [weights]", lineno, col);
      }
    } else if (section == "integrator") {
      if (key == "step")
        sc.step = num();
      else if (key == "t_final")
        sc.t_final = num();
      else
        throw ParseError("unknown key '" + key + "' in [integrator]", lineno, col);
    } else if (section == "initial") {
      if (key == "q") {
        const auto v = nums();
        sc.q0 = Eigen::Map<const Vec>(v.data(), v.size());
      } else if (key == "qdot") {
        const auto v = nums();
        sc.qd0 = Eigen::Map<const Vec>(v.data(), v.size());
      } else if (key == "s") {
        sc.s0 = num();
      } else if (key == "sdot") {
        sc.sd0 = num();
      } else {
        throw ParseError("unknown key '" + key + "' in [initial]", lineno, col);
      }
    } else if (section == "portrait") {
      if (key == "energies")
        sc.portrait_energies = nums();
      else
        throw ParseError("unknown key '" + key + "' in [portrait]", lineno, col);
    } else if (section == "output") {
      if (key == "directory")
        sc.out_dir = value;
      else
        throw ParseError("unknown key '" + key + "' in [output]", lineno, col);
    } else {
      throw ParseError("key outside any section", lineno, col);
    }
  }

  if (sc.system_name.empty())
    throw ParseError("missing [system] name", lineno, 1);
  if (!have_translation)
    throw ParseError("missing [vhc] translation", lineno, 1);
  if (!have_energy) throw ParseError("missing [orbit] energy", lineno, 1);
  if (sc.kp <= 0.0 || sc.kd <= 0.0)
    throw ParseError("constraint gains must be positive", lineno, 1);
  if (sc.step <= 0.0 || sc.t_final <= 0.0)
    throw ParseError("integrator step and t_final must be positive", lineno, 1);
  if (sc.s_max <= 0.0)
    throw ParseError("s_max must be positive", lineno, 1);
  if (sc.R <= 0.0) throw ParseError("R must be positive", lineno, 1);
  if (sc.translation.norm() == 0.0)
    throw ParseError("translation must be nonzero", lineno, 1);
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open scenario file: " + path);
  return parse_scenario(is);
}

}  // namespace dvhc
