#pragma once

#include <cstdint>

#include "fedgs/error.hpp"
#include "json.hpp"

namespace fedgs {

/// Link and compute parameters of the two-tier network. Bandwidths are in
/// bits/second, S in bits, times in seconds.
struct CostParams {
  double S = 0.0;
  std::uint64_t M = 1;
  std::uint64_t L = 1;
  std::uint64_t T = 1;
  double B_up_ext = 0.0;
  double B_down_ext = 0.0;
  double B_up_int = 0.0;
  double B_down_int = 0.0;
  double gamma_top = 0.0;
  double gamma_bs = 0.0;
  double gamma_device = 0.0;
  double T_comp = 0.0;
  double T_select = 0.0;

  /// Throws InvalidParams unless everything is finite and strictly positive
  /// (T_select may be zero).
  void validate() const;
  /// Equal up/down bandwidths on each tier and a single SNR everywhere.
  bool symmetric() const noexcept;

  friend bool operator==(const CostParams&, const CostParams&) = default;
};

/// External synchronization: M base-station models up to the top server and
/// the global model back down.
double comm_ext(const CostParams& p);
/// Internal synchronization: L device models up to the base station and the
/// group model back down.
double comm_int(const CostParams& p);
/// FedAvg synchronization: all ML device models over the external link.
double comm_ext_fedavg(const CostParams& p);

double total_fedgs(const CostParams& p);
double total_fedavg(const CostParams& p);

/// Closed forms for symmetric links (throws InvalidParams otherwise), with
/// beta = log2(1 + gamma):
///   fedgs  = 2SM/(beta B_ext) + T (T_select + 2SL/(beta B_int) + T_comp)
///   fedavg = 2SML/(beta B_ext) + T T_comp
double simplified_fedgs(const CostParams& p);
double simplified_fedavg(const CostParams& p);

struct EfficiencyCondition {
  double lhs = 0.0;  // TL / (M (L - 1))
  double rhs = 0.0;  // B_int / B_ext
  bool holds = false;
};

/// Throws InvalidParams for L < 2, M < 1, T < 1 or non-positive bandwidths.
EfficiencyCondition efficiency_condition(std::uint64_t T, std::uint64_t M, std::uint64_t L,
                                         double B_int, double B_ext);

enum class CostMode { General, Simplified };

struct CostReport {
  double T_comm_ext = 0.0;
  double T_comm_int = 0.0;
  double T_fedgs = 0.0;
  double T_fedavg = 0.0;
  double condition_lhs = 0.0;
  double condition_rhs = 0.0;
  bool fedgs_faster = false;

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// The condition uses the uplink bandwidths of each tier.
CostReport cost_report(const CostParams& p, CostMode mode = CostMode::General);

CostParams cost_params_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const CostParams& p);
CostReport cost_report_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const CostReport& r);

}  // namespace fedgs
