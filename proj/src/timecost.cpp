#include "fedgs/timecost.hpp"
#include "json_util.hpp"

#include <cmath>
#include <string>

namespace fedgs {

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidParams, what);
}

void positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) invalid(std::string(name) + " must be finite and > 0");
}

double rate(double bandwidth, double snr) { return bandwidth * std::log2(1.0 + snr); }

}  // namespace

void CostParams::validate() const {
  positive(S, "S");
  if (M < 1) invalid("M must be >= 1");
  if (L < 1) invalid("L must be >= 1");
  if (T < 1) invalid("T must be >= 1");
  positive(B_up_ext, "B_up_ext");
  positive(B_down_ext, "B_down_ext");
  positive(B_up_int, "B_up_int");
  positive(B_down_int, "B_down_int");
  positive(gamma_top, "gamma_top");
  positive(gamma_bs, "gamma_bs");
  positive(gamma_device, "gamma_device");
  positive(T_comp, "T_comp");
  if (!(T_select >= 0.0) || !std::isfinite(T_select)) invalid("T_select must be finite and >= 0");
}

bool CostParams::symmetric() const noexcept {
  return B_up_ext == B_down_ext && B_up_int == B_down_int && gamma_top == gamma_bs &&
         gamma_bs == gamma_device;
}

double comm_ext(const CostParams& p) {
  p.validate();
  const double bits = p.S * static_cast<double>(p.M);
  return bits / rate(p.B_up_ext, p.gamma_top) + bits / rate(p.B_down_ext, p.gamma_bs);
}

double comm_int(const CostParams& p) {
  p.validate();
  const double bits = p.S * static_cast<double>(p.L);
  return bits / rate(p.B_up_int, p.gamma_bs) + bits / rate(p.B_down_int, p.gamma_device);
}

double comm_ext_fedavg(const CostParams& p) {
  p.validate();
  const double bits = p.S * static_cast<double>(p.M) * static_cast<double>(p.L);
  return bits / rate(p.B_up_ext, p.gamma_top) + bits / rate(p.B_down_ext, p.gamma_device);
}

double total_fedgs(const CostParams& p) {
  return comm_ext(p) + static_cast<double>(p.T) * (p.T_select + comm_int(p) + p.T_comp);
}

double total_fedavg(const CostParams& p) {
  return comm_ext_fedavg(p) + static_cast<double>(p.T) * p.T_comp;
}

double simplified_fedgs(const CostParams& p) {
  p.validate();
  if (!p.symmetric()) invalid("simplified cost model needs symmetric links and one SNR");
  const double beta = std::log2(1.0 + p.gamma_top);
  const double M = static_cast<double>(p.M), L = static_cast<double>(p.L);
  return 2.0 * p.S * M / (beta * p.B_up_ext) +
         static_cast<double>(p.T) * (p.T_select + 2.0 * p.S * L / (beta * p.B_up_int) + p.T_comp);
}

double simplified_fedavg(const CostParams& p) {
  p.validate();
  if (!p.symmetric()) invalid("simplified cost model needs symmetric links and one SNR");
  const double beta = std::log2(1.0 + p.gamma_top);
  const double M = static_cast<double>(p.M), L = static_cast<double>(p.L);
  return 2.0 * p.S * M * L / (beta * p.B_up_ext) + static_cast<double>(p.T) * p.T_comp;
}

EfficiencyCondition efficiency_condition(std::uint64_t T, std::uint64_t M, std::uint64_t L,
                                         double B_int, double B_ext) {
  if (L < 2) invalid("efficiency condition needs L >= 2");
  if (M < 1) invalid("M must be >= 1");
  if (T < 1) invalid("T must be >= 1");
  positive(B_int, "B_int");
  positive(B_ext, "B_ext");
  EfficiencyCondition c;
  c.lhs = static_cast<double>(T) * static_cast<double>(L) /
          (static_cast<double>(M) * static_cast<double>(L - 1));
  c.rhs = B_int / B_ext;
  c.holds = c.lhs < c.rhs;
  return c;
}

CostReport cost_report(const CostParams& p, CostMode mode) {
  const EfficiencyCondition c = efficiency_condition(p.T, p.M, p.L, p.B_up_int, p.B_up_ext);
  CostReport r;
  r.T_comm_ext = comm_ext(p);
  r.T_comm_int = comm_int(p);
  if (mode == CostMode::General) {
    r.T_fedgs = total_fedgs(p);
    r.T_fedavg = total_fedavg(p);
  } else {
    r.T_fedgs = simplified_fedgs(p);
    r.T_fedavg = simplified_fedavg(p);
  }
  r.condition_lhs = c.lhs;
  r.condition_rhs = c.rhs;
  r.fedgs_faster = r.T_fedgs < r.T_fedavg;
  return r;
}

namespace {

double number(const nlohmann::json& doc, const char* key, bool required, double fallback = 0.0) {
  if (!doc.contains(key)) {
    if (required) invalid(std::string("missing field '") + key + "'");
    return fallback;
  }
  if (!doc[key].is_number()) invalid(std::string("field '") + key + "' must be a number");
  return doc[key].get<double>();
}

std::uint64_t count(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key)) invalid(std::string("missing field '") + key + "'");
  if (!is_count(doc[key])) {
    invalid(std::string("field '") + key + "' must be a non-negative integer");
  }
  return doc[key].get<std::uint64_t>();
}

}  // namespace

CostParams cost_params_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) invalid("cost parameters must be a JSON object");
  CostParams p;
  p.S = number(doc, "S", true);
  p.M = count(doc, "M");
  p.L = count(doc, "L");
  p.T = count(doc, "T");
  p.B_up_ext = number(doc, "B_up_ext", true);
  p.B_down_ext = number(doc, "B_down_ext", true);
  p.B_up_int = number(doc, "B_up_int", true);
  p.B_down_int = number(doc, "B_down_int", true);
  p.gamma_top = number(doc, "gamma_top", true);
  p.gamma_bs = number(doc, "gamma_bs", true);
  p.gamma_device = number(doc, "gamma_device", true);
  p.T_comp = number(doc, "T_comp", true);
  p.T_select = number(doc, "T_select", false);
  p.validate();
  return p;
}

nlohmann::json to_json(const CostParams& p) {
  return {{"S", p.S},
          {"M", p.M},
          {"L", p.L},
          {"T", p.T},
          {"B_up_ext", p.B_up_ext},
          {"B_down_ext", p.B_down_ext},
          {"B_up_int", p.B_up_int},
          {"B_down_int", p.B_down_int},
          {"gamma_top", p.gamma_top},
          {"gamma_bs", p.gamma_bs},
          {"gamma_device", p.gamma_device},
          {"T_comp", p.T_comp},
          {"T_select", p.T_select}};
}

CostReport cost_report_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) invalid("cost report must be a JSON object");
  CostReport r;
  r.T_comm_ext = number(doc, "T_comm_ext", true);
  r.T_comm_int = number(doc, "T_comm_int", true);
  r.T_fedgs = number(doc, "T_fedgs", true);
  r.T_fedavg = number(doc, "T_fedavg", true);
  r.condition_lhs = number(doc, "condition_lhs", true);
  r.condition_rhs = number(doc, "condition_rhs", true);
  if (!doc.contains("fedgs_faster") || !doc["fedgs_faster"].is_boolean()) {
    invalid("field 'fedgs_faster' must be a boolean");
  }
  r.fedgs_faster = doc["fedgs_faster"].get<bool>();
  return r;
}

nlohmann::json to_json(const CostReport& r) {
  return {{"T_comm_ext", r.T_comm_ext},
          {"T_comm_int", r.T_comm_int},
          {"T_fedgs", r.T_fedgs},
          {"T_fedavg", r.T_fedavg},
          {"condition_lhs", r.condition_lhs},
          {"condition_rhs", r.condition_rhs},
          {"fedgs_faster", r.fedgs_faster}};
}

}  // namespace fedgs
