#pragma once

// JSON model files:
//   {"p": 3,
//    "theta": [[i, j, v], ...],              // 0-based indices
//    "sigma": [..],
//    "phi": {"kind": "tanh", "scale": 1, "gain": 1, "L": 1, "Lprime": 1}
//           or an array of p such objects (per coordinate),
//    "init": {"kind": "point", "x0": [..]} | {"kind": "gaussian", "mean": [..], "sd": [..]},
//    "s_star": 3,
//    "unbounded_link": false,                  // optional
//    "constants": {"K1": 10, "K2": 0.1, "K3": 5, "K4": 0.05}}  // optional

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sparse_drift/model.hpp"

namespace sparse_drift {

using Json = nlohmann::json;

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

inline Vector vector_from_json(const Json& j) {
  require(j.is_array(), ErrorCode::kMalformedFile, "expected a numeric array");
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    require(j[k].is_number(), ErrorCode::kMalformedFile, "non-numeric array entry");
    out[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return out;
}

inline Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_to_json(m.row(r).transpose()));
  return out;
}

inline Matrix matrix_from_json(const Json& j) {
  require(j.is_array(), ErrorCode::kMalformedFile, "expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = vector_from_json(j[static_cast<std::size_t>(r)]);
    require(row.size() == cols, ErrorCode::kMalformedFile, "ragged matrix rows");
    out.row(r) = row.transpose();
  }
  return out;
}

inline Json triples_to_json(const std::vector<Triple>& triples) {
  Json out = Json::array();
  for (const auto& t : triples) out.push_back(Json::array({t.row, t.col, t.value}));
  return out;
}

inline std::vector<Triple> triples_from_json(const Json& j) {
  require(j.is_array(), ErrorCode::kMalformedFile, "theta must be an array of [i, j, v]");
  std::vector<Triple> out;
  for (const auto& t : j) {
    require(t.is_array() && t.size() == 3 && t[0].is_number_unsigned() && t[1].is_number_unsigned() &&
                t[2].is_number(),
            ErrorCode::kMalformedFile, "theta entry must be [i, j, v] with non-negative indices");
    out.push_back({t[0].get<std::size_t>(), t[1].get<std::size_t>(), t[2].get<double>()});
  }
  return out;
}

inline Json phi_component_to_json(const PhiComponent& c) {
  return Json{{"kind", to_string(c.kind)}, {"scale", c.scale}, {"gain", c.gain}};
}

inline PhiComponent phi_component_from_json(const Json& j) {
  require(j.is_object() && j.contains("kind"), ErrorCode::kMalformedFile, "phi needs a kind");
  PhiComponent c;
  c.kind = phi_kind_from_string(j.at("kind").get<std::string>());
  c.scale = j.value("scale", 1.0);
  c.gain = j.value("gain", 1.0);
  return c;
}

inline Json to_json(const PhiBasis& basis) {
  const auto& comps = basis.components();
  const bool shared = std::all_of(comps.begin(), comps.end(),
                                  [&](const PhiComponent& c) { return c == comps.front(); });
  Json out;
  if (shared) {
    out = phi_component_to_json(comps.front());
  } else {
    out = Json::object();
    Json arr = Json::array();
    for (const auto& c : comps) arr.push_back(phi_component_to_json(c));
    out["components"] = arr;
  }
  // Infinite bounds (unbounded link) are written as null.
  out["L"] = std::isfinite(basis.declared_bound()) ? Json(basis.declared_bound()) : Json(nullptr);
  out["Lprime"] = basis.declared_lipschitz();
  return out;
}

inline PhiBasis phi_basis_from_json(const Json& j, std::size_t p) {
  std::optional<double> bound, lipschitz;
  if (j.is_object()) {
    if (j.contains("L") && j["L"].is_number()) bound = j["L"].get<double>();
    if (j.contains("L") && j["L"].is_null()) bound = std::numeric_limits<double>::infinity();
    if (j.contains("Lprime") && j["Lprime"].is_number()) lipschitz = j["Lprime"].get<double>();
  }
  const Json* list = nullptr;
  if (j.is_array()) list = &j;
  if (j.is_object() && j.contains("components")) list = &j["components"];
  if (list) {
    require(list->size() == p, ErrorCode::kMalformedFile, "phi component list must have length p");
    std::vector<PhiComponent> comps;
    for (const auto& c : *list) comps.push_back(phi_component_from_json(c));
    return PhiBasis(std::move(comps), bound, lipschitz);
  }
  return PhiBasis(p, phi_component_from_json(j), bound, lipschitz);
}

inline Json to_json(const InitialLaw& init) {
  if (init.kind == InitialLaw::Kind::kPoint)
    return Json{{"kind", "point"}, {"x0", vector_to_json(init.mean)}};
  return Json{{"kind", "gaussian"}, {"mean", vector_to_json(init.mean)}, {"sd", vector_to_json(init.sd)}};
}

inline InitialLaw initial_law_from_json(const Json& j, std::size_t p) {
  if (j.is_null()) return InitialLaw::point(Vector::Zero(static_cast<Eigen::Index>(p)));
  const std::string kind = j.value("kind", std::string("point"));
  if (kind == "point") {
    if (!j.contains("x0")) return InitialLaw::point(Vector::Zero(static_cast<Eigen::Index>(p)));
    return InitialLaw::point(vector_from_json(j.at("x0")));
  }
  require(kind == "gaussian", ErrorCode::kMalformedFile, "init kind must be point or gaussian");
  return InitialLaw::gaussian(vector_from_json(j.at("mean")), vector_from_json(j.at("sd")));
}

inline Json to_json(const ModelSpec& spec) {
  const auto& k = spec.constants();
  return Json{{"p", spec.dimension()},
              {"theta", triples_to_json(spec.theta().triples())},
              {"sigma", vector_to_json(spec.sigma())},
              {"phi", to_json(spec.phi())},
              {"init", to_json(spec.init())},
              {"s_star", spec.s_star()},
              {"unbounded_link", spec.unbounded_link()},
              {"constants", {{"K1", k.theta_upper}, {"K2", k.theta_lower},
                             {"K3", k.sigma_upper}, {"K4", k.sigma_lower}}}};
}

inline ModelSpec model_from_json(const Json& j) {
  try {
    const auto p = j.at("p").get<std::size_t>();
    auto theta = SparseDrift::from_triples(p, triples_from_json(j.at("theta")));
    Vector sigma = vector_from_json(j.at("sigma"));
    PhiBasis phi = phi_basis_from_json(j.at("phi"), p);
    InitialLaw init = initial_law_from_json(j.contains("init") ? j["init"] : Json(), p);
    const std::size_t s_star = j.contains("s_star") ? j["s_star"].get<std::size_t>() : theta.max_row_support();
    ValidationConstants constants;
    if (j.contains("constants")) {
      const auto& c = j["constants"];
      constants.theta_upper = c.value("K1", constants.theta_upper);
      constants.theta_lower = c.value("K2", constants.theta_lower);
      constants.sigma_upper = c.value("K3", constants.sigma_upper);
      constants.sigma_lower = c.value("K4", constants.sigma_lower);
    }
    return ModelSpec(std::move(theta), std::move(sigma), std::move(phi), std::move(init), s_star,
                     constants, j.value("unbounded_link", false));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("model file: ") + e.what());
  }
}

/// FNV-1a over the canonical JSON dump; used for provenance only.
inline std::uint64_t fingerprint(const ModelSpec& spec) {
  const std::string text = to_json(spec).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path);
}

inline ModelSpec read_model(const std::string& path) { return model_from_json(read_json_file(path)); }

inline void write_model(const std::string& path, const ModelSpec& spec) { write_json_file(path, to_json(spec)); }

}  // namespace sparse_drift
