#pragma once

// Synthetic district heating network: one heat station with a hysteresis
// boiler, a pump station, four pipe units in a tree and two fan-coil
// consumers. Stands in for laboratory recordings; not a calibrated model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "hstgnn/data.hpp"
#include "hstgnn/nn.hpp"

namespace hstgnn {

/// Instantaneous thermal power mdot * c_p * (t_s - t_r), in watts.
inline double thermal_power(double mdot, double t_s, double t_r, double c_p) { return mdot * c_p * (t_s - t_r); }

/// Left-rectangle running sum: Q[t] = sum_{k <= t} power[k] * dt.
inline Vec accumulated_energy(const Vec& power, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("accumulated_energy: dt must be positive");
  Vec q(power.size());
  double acc = 0.0;
  for (Eigen::Index k = 0; k < power.size(); ++k) {
    acc += power(k) * dt;
    q(k) = acc;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

enum class NodeKind { HeatStation, PumpStation, Pipe, Consumer };

struct TopoNode {
  std::string name;
  NodeKind kind;
};

/// Directed supply edge; the return network carries the mirrored edge to -> from.
struct TopoEdge {
  int from;
  int to;
  int delay;          // transport delay in steps
  double resistance;  // bar / (l/min)^2, same on the mirrored return edge
};

/// What a sensor reads. `node` indexes TopologySpec::nodes where relevant.
enum class Signal {
  SupplyTemp,      // supply water temperature at node
  ReturnTemp,      // return water temperature at node
  SupplyPressure,  // absolute supply-side pressure at node
  ReturnPressure,  // absolute return-side pressure at node
  EdgeFlow,        // volumetric flow on the supply edge ending at node
  BoilerTank,
  BoilerTankLagged,
  BurnerLoopTemp,
  BurnerLoopFlow,
  StationAmbient,
  OutdoorAmbient,
  BoilerPressure,
  PumpInletPressure,
  PumpOutletPressure,
  RoomTemp,        // consumer index in `node`
  FanCoilAirTemp,  // consumer index in `node`
  SecondaryFlow,   // consumer index in `node`
};

struct SensorPlacement {
  SensorMeta meta;
  Signal signal;
  int node = -1;
};

struct TopologySpec {
  std::vector<TopoNode> nodes;
  std::vector<TopoEdge> supply_edges;
  std::vector<int> consumers;  // node ids of consumer units, in meter order
  std::vector<SensorPlacement> inputs;
  std::vector<SensorMeta> targets;  // per consumer: flow, inlet temperature, outlet temperature

  std::vector<TopoEdge> return_edges() const {
    std::vector<TopoEdge> r;
    for (const auto& e : supply_edges) r.push_back({e.to, e.from, e.delay, e.resistance});
    return r;
  }

  SensorNetworkSchema schema() const {
    std::vector<SensorMeta> s;
    for (const auto& p : inputs) s.push_back(p.meta);
    for (const auto& t : targets) s.push_back(t);
    return SensorNetworkSchema(std::move(s));
  }

  /// Supply parent of every node (-1 for the root).
  std::vector<int> parents() const {
    std::vector<int> p(nodes.size(), -1);
    for (const auto& e : supply_edges) p[static_cast<std::size_t>(e.to)] = e.from;
    return p;
  }

  /// Index of the supply edge entering `node`, or -1.
  int edge_into(int node) const {
    for (std::size_t k = 0; k < supply_edges.size(); ++k)
      if (supply_edges[k].to == node) return static_cast<int>(k);
    return -1;
  }

  /// True when the supply edges form a tree rooted at node 0 that spans all nodes.
  bool is_tree() const {
    const std::size_t n = nodes.size();
    if (supply_edges.size() + 1 != n) return false;
    std::vector<int> indeg(n, 0);
    for (const auto& e : supply_edges) {
      if (e.from < 0 || e.to < 0 || static_cast<std::size_t>(e.from) >= n || static_cast<std::size_t>(e.to) >= n)
        return false;
      ++indeg[static_cast<std::size_t>(e.to)];
    }
    if (indeg[0] != 0) return false;
    for (std::size_t v = 1; v < n; ++v)
      if (indeg[v] != 1) return false;
    // every node reaches the root
    const auto par = parents();
    for (std::size_t v = 0; v < n; ++v) {
      int u = static_cast<int>(v);
      std::size_t hops = 0;
      while (u != 0 && hops <= n) {
        u = par[static_cast<std::size_t>(u)];
        if (u < 0) return false;
        ++hops;
      }
      if (hops > n) return false;
    }
    return true;
  }
};

inline TopologySpec build_default_topology() {
  TopologySpec t;
  t.nodes = {{"HeatStation", NodeKind::HeatStation}, {"PumpStation", NodeKind::PumpStation},
             {"Pipe1_in", NodeKind::Pipe},           {"Pipe1_out", NodeKind::Pipe},
             {"Pipe2_in", NodeKind::Pipe},           {"Pipe2_out", NodeKind::Pipe},
             {"Pipe3_in", NodeKind::Pipe},           {"Pipe3_out", NodeKind::Pipe},
             {"Pipe4_in", NodeKind::Pipe},           {"Pipe4_out", NodeKind::Pipe},
             {"Consumer1", NodeKind::Consumer},      {"Consumer2", NodeKind::Consumer}};
  t.supply_edges = {{0, 1, 3, 0.0004}, {1, 2, 2, 0.0010}, {2, 3, 6, 0.0010}, {3, 4, 2, 0.0020},
                    {4, 5, 5, 0.0020}, {5, 10, 2, 0.0010}, {3, 6, 2, 0.0015}, {6, 7, 8, 0.0020},
                    {7, 8, 2, 0.0015}, {8, 9, 7, 0.0020}, {9, 11, 2, 0.0010}};
  t.consumers = {10, 11};

  auto in = [&](const std::string& id, SensorType k, Signal s, int node = -1) {
    const char* unit = k == SensorType::Temperature ? "degC" : (k == SensorType::Pressure ? "bar" : "l/min");
    t.inputs.push_back({{id, k, Role::Input, unit}, s, node});
  };
  using S = Signal;
  const auto T = SensorType::Temperature;
  const auto P = SensorType::Pressure;
  const auto F = SensorType::Flow;

  in("Boiler_T1", T, S::BoilerTank);
  in("Boiler_T2", T, S::ReturnTemp, 0);
  in("Boiler_T3", T, S::BoilerTankLagged);
  in("Boiler_T4", T, S::BurnerLoopTemp);
  in("Boiler_T5", T, S::StationAmbient);
  in("Boiler_T6", T, S::OutdoorAmbient);
  in("Boiler_dP2", P, S::BoilerPressure);
  in("Boiler_Q2_1", F, S::EdgeFlow, 1);
  in("Boiler_Q4_6", F, S::BurnerLoopFlow);

  const int pipe_in[4] = {2, 4, 6, 8};
  const int pipe_out[4] = {3, 5, 7, 9};
  const char* out_suffix[4] = {"2", "3", "2", "3"};
  for (int k = 0; k < 4; ++k) {
    const std::string u = std::to_string(k + 1);
    in("Pipe_T" + u + "_1", T, S::SupplyTemp, pipe_in[k]);
    in("Pipe_T" + u + "_" + out_suffix[k], T, S::SupplyTemp, pipe_out[k]);
  }
  for (int k = 0; k < 4; ++k) {
    const std::string u = std::to_string(k + 1);
    in("Pipe_P" + u + "_1", P, S::SupplyPressure, pipe_in[k]);
    in("Pipe_P" + u + "_" + out_suffix[k], P, S::SupplyPressure, pipe_out[k]);
  }
  in("Pipe_Q3_1", F, S::EdgeFlow, 3);
  in("Pipe_Q3_2", F, S::EdgeFlow, 5);
  in("Pipe_Q3_3", F, S::EdgeFlow, 7);
  in("Pipe_Q3_4", F, S::EdgeFlow, 9);

  in("Consumer_T_21", T, S::FanCoilAirTemp, 0);
  in("Consumer_T_22", T, S::RoomTemp, 0);
  in("Consumer_T_23", T, S::FanCoilAirTemp, 1);
  in("Consumer_T_24", T, S::RoomTemp, 1);
  in("Consumer_P_21", P, S::SupplyPressure, 10);
  in("Consumer_P_22", P, S::ReturnPressure, 10);
  in("Consumer_P_23", P, S::SupplyPressure, 11);
  in("Consumer_P_24", P, S::ReturnPressure, 11);
  in("Consumer_Q1_21", F, S::SecondaryFlow, 0);
  in("Consumer_Q1_22", F, S::SecondaryFlow, 1);

  in("Pump_T3_1", T, S::SupplyTemp, 1);
  in("Pump_T3_3", T, S::ReturnTemp, 1);
  in("Pump_P3_1", P, S::PumpInletPressure);
  in("Pump_P3_3", P, S::PumpOutletPressure);
  in("Pump_Q2_12", F, S::EdgeFlow, 2);

  for (int m = 1; m <= 2; ++m) {
    const std::string p = "SM" + std::to_string(m);
    t.targets.push_back({p + "_flow", F, Role::Target, "l/min"});
    t.targets.push_back({p + "_T_in", T, Role::Target, "degC"});
    t.targets.push_back({p + "_T_out", T, Role::Target, "degC"});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Operating conditions and configuration
// ---------------------------------------------------------------------------

enum class FanLevel { Max, MaxMinus1 };

struct OperatingCondition {
  FanLevel fan1 = FanLevel::Max;
  FanLevel fan2 = FanLevel::Max;
  double boiler_setpoint = 50.0;
  double hysteresis_band = 3.0;
  /// Multiplies both consumers' demand; 0 closes the valves and stops extraction.
  double demand_scale = 1.0;

  std::string label() const {
    auto f = [](FanLevel l) { return l == FanLevel::Max ? std::string("max") : std::string("max-1"); };
    return "fan1=" + f(fan1) + ";fan2=" + f(fan2);
  }
};

/// The four regimes, in dataset order: both max, both max-1, (max, max-1), (max-1, max).
inline std::vector<OperatingCondition> default_conditions() {
  return {{FanLevel::Max, FanLevel::Max},
          {FanLevel::MaxMinus1, FanLevel::MaxMinus1},
          {FanLevel::Max, FanLevel::MaxMinus1},
          {FanLevel::MaxMinus1, FanLevel::Max}};
}

struct NoiseStd {
  double temperature = 0.05;  // degC
  double pressure = 0.01;     // bar
  double flow = 0.05;         // l/min
};

struct SimConfig {
  Eigen::Index duration_steps = 20000;  // includes warm-up
  Eigen::Index warmup_steps = 900;
  Eigen::Index min_window = 16;
  double dt = 2.0;
  double c_p = 4186.0;
  double rho = 1.0;  // kg/l
  NoiseStd noise;
  std::uint64_t seed = 0;
};

/// Noise-free smart-meter series.
struct GroundTruth {
  struct Meter {
    Vec flow;    // l/min
    Vec t_in;    // degC
    Vec t_out;   // degC
    Vec power;   // W
    Vec energy;  // J
  };
  std::vector<Meter> meters;
};

/// Noise-free internal states, for diagnostics and property checks.
struct SimTrace {
  Vec total_flow;                 // pump flow, l/min
  std::vector<Vec> branch_flows;  // per consumer branch, l/min
  Vec tank_temp;                  // boiler tank (= supply leaving the heat station)
  std::vector<int> boiler_on;     // state during the step
  std::vector<int> boiler_switched_on;  // 1 where the burner turned on at this step
};

struct SimResult {
  TimeSeriesDataset dataset;
  GroundTruth truth;
  SimTrace trace;
};

namespace detail {

struct FanParams {
  double opening;   // valve opening relative to fully open
  double ua;        // fan-coil conductance, W/K
  double air_cap;   // air-side capacity rate, W/K
  double sec_flow;  // secondary loop flow, l/min
};

inline FanParams fan_params(FanLevel l) {
  return l == FanLevel::Max ? FanParams{1.0, 600.0, 1000.0, 6.0} : FanParams{0.75, 420.0, 750.0, 4.5};
}

/// Fixed-length FIFO delay line.
class DelayLine {
 public:
  DelayLine(int delay, double init) : buf_(static_cast<std::size_t>(std::max(delay, 1)), init) {}
  /// Pushes the current inlet value and returns the value that entered `delay` steps ago.
  double push(double v) {
    buf_.push_back(v);
    const double out = buf_.front();
    buf_.pop_front();
    return out;
  }

 private:
  std::deque<double> buf_;
};

}  // namespace detail

/// Runs the stepper for cfg.duration_steps and returns everything after the
/// warm-up span.
inline SimResult simulate(const TopologySpec& spec, const OperatingCondition& cond, const SimConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("simulate: dt must be positive");
  if (cfg.warmup_steps < 0) throw std::invalid_argument("simulate: warmup_steps must be >= 0");
  if (cfg.duration_steps <= cfg.warmup_steps + cfg.min_window)
    throw std::invalid_argument("simulate: duration_steps must exceed warmup_steps + window");
  if (!spec.is_tree()) throw std::invalid_argument("simulate: supply graph is not a tree rooted at node 0");
  if (spec.consumers.size() != 2) throw std::invalid_argument("simulate: expected two consumers");

  const std::size_t n_nodes = spec.nodes.size();
  const auto& edges = spec.supply_edges;
  const auto par = spec.parents();
  const double dt = cfg.dt;
  const double cp = cfg.c_p;

  // Branch membership: which consumer each edge feeds (-1 = common trunk).
  std::vector<int> edge_branch(edges.size(), -1);
  for (std::size_t c = 0; c < spec.consumers.size(); ++c) {
    int v = spec.consumers[c];
    while (v != 0) {
      const int e = spec.edge_into(v);
      if (edge_branch[static_cast<std::size_t>(e)] == -1) edge_branch[static_cast<std::size_t>(e)] = static_cast<int>(c);
      else edge_branch[static_cast<std::size_t>(e)] = -2;  // shared
      v = par[static_cast<std::size_t>(v)];
    }
  }
  for (auto& b : edge_branch)
    if (b == -2) b = -1;

  // Edges ordered by depth of their head node: parents are processed before children.
  std::vector<int> depth(n_nodes, 0);
  for (std::size_t v = 1; v < n_nodes; ++v)
    for (int u = static_cast<int>(v); u != 0; u = par[static_cast<std::size_t>(u)]) ++depth[v];
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return depth[static_cast<std::size_t>(edges[a].to)] < depth[static_cast<std::size_t>(edges[b].to)];
  });
  std::vector<int> n_children(n_nodes, 0);
  for (const auto& e : edges) ++n_children[static_cast<std::size_t>(e.from)];

  // Hydraulic constants.
  const double p_static = 3.5;  // pump inlet, bar
  const double pump_h0 = 7.2;   // shut-off head, bar
  const double pump_a = 0.004;  // bar / (l/min)^2
  const double r_boiler = 0.0006;
  const double valve_r0 = 0.15;
  double r_common = r_boiler;
  double r_branch_pipe[2] = {0.0, 0.0};
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const double r2 = 2.0 * edges[k].resistance;  // supply + mirrored return
    if (edge_branch[k] < 0) r_common += r2;
    else r_branch_pipe[edge_branch[k]] += r2;
  }

  // Thermal constants.
  const double tank_cap = 300.0 * cp;  // J/K
  const double heater_w = 25000.0;
  const double tank_loss_ua = 5.0;
  const double pipe_loss = 0.0005;  // fraction of excess over ambient lost per edge traversal
  const double mix = 0.6;           // first-order node mixing per step
  const double room_cap = 1.5e6;    // J/K
  const double room_ua_env = 1400.0;

  Rng process(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x5EEDULL);
  Rng meas(cfg.seed * 0xBF58476D1CE4E5B9ULL + 0xC0FFEEULL);

  const detail::FanParams fans[2] = {detail::fan_params(cond.fan1), detail::fan_params(cond.fan2)};

  // State.
  double tank = cond.boiler_setpoint - 0.5 * cond.hysteresis_band;
  double tank_lag = tank;
  double burner_loop = tank;
  bool on = false;
  std::vector<double> ts(n_nodes, 45.0), tr(n_nodes, 30.0);
  double room[2] = {22.0, 22.0};
  double demand_ar[2] = {0.0, 0.0};
  double outdoor_ar = 0.0, station_ar = 0.0;
  std::vector<detail::DelayLine> sup_lines, ret_lines;
  for (const auto& e : edges) {
    sup_lines.emplace_back(e.delay, 45.0);
    ret_lines.emplace_back(e.delay, 30.0);
  }
  const double phase = 2.0 * M_PI * process.uniform();

  const Eigen::Index total = cfg.duration_steps;
  const Eigen::Index kept = total - cfg.warmup_steps;
  const auto schema = spec.schema();
  SimResult res;
  res.dataset.schema = schema;
  res.dataset.sample_period = dt;
  res.dataset.condition_label = cond.label();
  res.dataset.values.resize(static_cast<Eigen::Index>(schema.sensors().size()), kept);
  res.truth.meters.resize(2);
  for (auto& m : res.truth.meters) {
    m.flow.resize(kept);
    m.t_in.resize(kept);
    m.t_out.resize(kept);
  }
  res.trace.total_flow.resize(kept);
  res.trace.branch_flows.assign(2, Vec(kept));
  res.trace.tank_temp.resize(kept);
  res.trace.boiler_on.resize(static_cast<std::size_t>(kept));
  res.trace.boiler_switched_on.resize(static_cast<std::size_t>(kept));

  std::vector<double> edge_flow(edges.size(), 0.0);
  std::vector<double> ps(n_nodes, p_static), pr(n_nodes, p_static);

  for (Eigen::Index step = 0; step < total; ++step) {
    // Ambient conditions: slow daily-like swing plus AR(1) drift.
    outdoor_ar = 0.999 * outdoor_ar + 0.02 * process.normal();
    station_ar = 0.999 * station_ar + 0.01 * process.normal();
    const double tsec = static_cast<double>(step) * dt;
    const double outdoor = 17.2 + 0.8 * std::sin(2.0 * M_PI * tsec / 24000.0 + phase) + outdoor_ar;
    const double station = 22.0 + 0.4 * std::sin(2.0 * M_PI * tsec / 18000.0 + phase) + station_ar;

    // Demand fluctuation around the fan level.
    double demand[2];
    for (int c = 0; c < 2; ++c) {
      demand_ar[c] = 0.995 * demand_ar[c] + 0.008 * process.normal();
      demand[c] = cond.demand_scale * std::clamp(1.0 + demand_ar[c], 0.7, 1.3);
    }

    // Hydraulics: pump curve H0 - aQ^2 against common trunk and two parallel branches.
    double q[2] = {0.0, 0.0};
    double inv_sqrt_r[2] = {0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
      const double opening = fans[c].opening * demand[c];
      if (opening > 0.0) {
        const double r = r_branch_pipe[c] + valve_r0 / (opening * opening);
        inv_sqrt_r[c] = 1.0 / std::sqrt(r);
      }
    }
    const double g = inv_sqrt_r[0] + inv_sqrt_r[1];
    const double delta = pump_h0 / (1.0 + (pump_a + r_common) * g * g);
    const double sd = std::sqrt(delta);
    for (int c = 0; c < 2; ++c) q[c] = sd * inv_sqrt_r[c];
    const double qt = q[0] + q[1];
    for (std::size_t k = 0; k < edges.size(); ++k) edge_flow[k] = edge_branch[k] < 0 ? qt : q[edge_branch[k]];

    // Pressures. Supply side from the pump outlet downstream; the suction edge 0->1 sits before the pump.
    const double head = pump_h0 - pump_a * qt * qt;
    ps[0] = p_static + edges[static_cast<std::size_t>(spec.edge_into(1))].resistance * qt * qt;
    ps[1] = p_static + head;
    pr[0] = ps[0] + r_boiler * qt * qt;
    for (std::size_t k : order) {
      const auto& e = edges[k];
      const double loss = e.resistance * edge_flow[k] * edge_flow[k];
      if (e.from != 0) ps[static_cast<std::size_t>(e.to)] = ps[static_cast<std::size_t>(e.from)] - loss;
      pr[static_cast<std::size_t>(e.to)] = pr[static_cast<std::size_t>(e.from)] + loss;
    }

    // Boiler hysteresis: on below setpoint - band, off at setpoint.
    const bool was_on = on;
    if (on && tank >= cond.boiler_setpoint) on = false;
    else if (!on && tank < cond.boiler_setpoint - cond.hysteresis_band) on = true;
    const bool switched_on = on && !was_on;

    // Supply transport: delayed, slightly cooled, first-order mixed at each node.
    ts[0] = tank;
    for (std::size_t k : order) {
      const auto& e = edges[k];
      const double arriving = sup_lines[k].push(ts[static_cast<std::size_t>(e.from)]);
      const double cooled = station + (arriving - station) * (1.0 - pipe_loss);
      ts[static_cast<std::size_t>(e.to)] += mix * (cooled - ts[static_cast<std::size_t>(e.to)]);
    }

    // Consumers.
    double t_out[2], extracted[2];
    for (int c = 0; c < 2; ++c) {
      const double t_in = ts[static_cast<std::size_t>(spec.consumers[c])];
      const double ua = fans[c].ua * demand[c];
      const double mcp = q[c] * cfg.rho / 60.0 * cp;
      if (ua <= 0.0) t_out[c] = t_in;
      else if (mcp <= 0.0) t_out[c] = room[c];
      else t_out[c] = room[c] + (t_in - room[c]) * std::exp(-ua / mcp);
      extracted[c] = thermal_power(q[c] * cfg.rho / 60.0, t_in, t_out[c], cp);
      tr[static_cast<std::size_t>(spec.consumers[c])] = t_out[c];
    }

    // Return transport, children before parents, flow-weighted mixing at junctions.
    std::vector<double> ret_in_sum(n_nodes, 0.0), ret_in_w(n_nodes, 0.0);
    std::vector<int> seen(n_nodes, 0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const std::size_t kk = *it;
      const auto& e = edges[kk];
      const double arriving = ret_lines[kk].push(tr[static_cast<std::size_t>(e.to)]);
      const double cooled = station + (arriving - station) * (1.0 - pipe_loss);
      const double w = edge_flow[kk] > 0.0 ? edge_flow[kk] : 1e-12;
      ret_in_sum[static_cast<std::size_t>(e.from)] += w * cooled;
      ret_in_w[static_cast<std::size_t>(e.from)] += w;
      if (++seen[static_cast<std::size_t>(e.from)] == n_children[static_cast<std::size_t>(e.from)]) {
        const std::size_t u = static_cast<std::size_t>(e.from);
        tr[u] += mix * (ret_in_sum[u] / ret_in_w[u] - tr[u]);
      }
    }

    // Boiler tank energy balance.
    const double mdot_total = qt * cfg.rho / 60.0;
    const double dq = (on ? heater_w : 0.0) + mdot_total * cp * (tr[0] - tank) - tank_loss_ua * (tank - station);
    tank += dt * dq / tank_cap;
    tank_lag += 0.05 * (tank - tank_lag);
    burner_loop += 0.1 * ((on ? tank + 1.0 : tank - 2.0) - burner_loop);

    // Rooms.
    double air[2];
    for (int c = 0; c < 2; ++c) {
      room[c] += dt * (extracted[c] - room_ua_env * (room[c] - outdoor)) / room_cap;
      air[c] = room[c] + (fans[c].air_cap > 0.0 ? extracted[c] / fans[c].air_cap : 0.0);
    }

    if (step < cfg.warmup_steps) continue;
    const Eigen::Index col = step - cfg.warmup_steps;

    auto read = [&](const SensorPlacement& sp) -> double {
      const std::size_t n = static_cast<std::size_t>(std::max(sp.node, 0));
      switch (sp.signal) {
        case Signal::SupplyTemp: return ts[n];
        case Signal::ReturnTemp: return tr[n];
        case Signal::SupplyPressure: return ps[n];
        case Signal::ReturnPressure: return pr[n];
        case Signal::EdgeFlow: return edge_flow[static_cast<std::size_t>(spec.edge_into(sp.node))];
        case Signal::BoilerTank: return tank;
        case Signal::BoilerTankLagged: return tank_lag;
        case Signal::BurnerLoopTemp: return burner_loop;
        case Signal::BurnerLoopFlow: return on ? 2.0 : 0.1;
        case Signal::StationAmbient: return station;
        case Signal::OutdoorAmbient: return outdoor;
        case Signal::BoilerPressure: return pr[0];
        case Signal::PumpInletPressure: return p_static;
        case Signal::PumpOutletPressure: return ps[1];
        case Signal::RoomTemp: return room[n];
        case Signal::FanCoilAirTemp: return air[n];
        case Signal::SecondaryFlow: return fans[n].sec_flow * std::sqrt(std::max(demand[n], 0.0));
      }
      return 0.0;
    };
    for (std::size_t s = 0; s < spec.inputs.size(); ++s) {
      const auto& sp = spec.inputs[s];
      double sd_noise = sp.meta.kind == SensorType::Temperature
                            ? cfg.noise.temperature
                            : (sp.meta.kind == SensorType::Pressure ? cfg.noise.pressure : cfg.noise.flow);
      const double noise = meas.normal();
      res.dataset.values(static_cast<Eigen::Index>(s), col) = read(sp) + sd_noise * noise;
    }
    Eigen::Index row = static_cast<Eigen::Index>(spec.inputs.size());
    for (int c = 0; c < 2; ++c) {
      const double t_in = ts[static_cast<std::size_t>(spec.consumers[c])];
      res.truth.meters[c].flow(col) = q[c];
      res.truth.meters[c].t_in(col) = t_in;
      res.truth.meters[c].t_out(col) = t_out[c];
      res.dataset.values(row++, col) = q[c];
      res.dataset.values(row++, col) = t_in;
      res.dataset.values(row++, col) = t_out[c];
    }
    res.trace.total_flow(col) = qt;
    res.trace.branch_flows[0](col) = q[0];
    res.trace.branch_flows[1](col) = q[1];
    res.trace.tank_temp(col) = ts[0];
    res.trace.boiler_on[static_cast<std::size_t>(col)] = on ? 1 : 0;
    res.trace.boiler_switched_on[static_cast<std::size_t>(col)] = switched_on ? 1 : 0;
  }

  for (auto& m : res.truth.meters) {
    m.power.resize(kept);
    for (Eigen::Index k = 0; k < kept; ++k) m.power(k) = thermal_power(m.flow(k) * cfg.rho / 60.0, m.t_in(k), m.t_out(k), cp);
    m.energy = accumulated_energy(m.power, dt);
  }
  return res;
}

/// Simulates the four regimes and writes `dir`/schema.csv plus data_1..4.csv.
/// Condition k uses seed cfg.seed + k.
inline std::vector<SimResult> export_benchmark(const std::filesystem::path& dir, const SimConfig& cfg,
                                               const TopologySpec& spec = build_default_topology()) {
  std::vector<SimResult> out;
  const auto conds = default_conditions();
  for (std::size_t k = 0; k < conds.size(); ++k) {
    SimConfig c = cfg;
    c.seed = cfg.seed + k;
    out.push_back(simulate(spec, conds[k], c));
    save_csv(out.back().dataset, dir, static_cast<int>(k + 1));
  }
  return out;
}

}  // namespace hstgnn
