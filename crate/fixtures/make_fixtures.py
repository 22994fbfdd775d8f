"""Writes the scenario fixtures used by tests and examples.

Run from the repository root: python3 fixtures/make_fixtures.py
"""

import json
import math
import os

HERE = os.path.dirname(os.path.abspath(__file__))
T = 24
DT = 3600.0
KWH = 1e-3  # $/kWh -> $/Wh


def profile(base, shape):
    return [round(base * s, 6) for s in shape]


# residential-looking daily shape, peak in the evening
LOAD_SHAPE = [0.62, 0.58, 0.55, 0.54, 0.56, 0.63, 0.75, 0.86, 0.92, 0.94, 0.95, 0.96,
              0.95, 0.93, 0.92, 0.93, 0.97, 1.00, 1.00, 0.98, 0.93, 0.85, 0.75, 0.67]
SOLAR = [max(0.0, math.sin(math.pi * (t - 6) / 13)) if 6 <= t <= 19 else 0.0 for t in range(T)]
HEAT_SHAPE = [1.15, 1.18, 1.20, 1.20, 1.18, 1.12, 1.05, 0.98, 0.92, 0.88, 0.85, 0.83,
              0.82, 0.82, 0.84, 0.87, 0.92, 0.98, 1.03, 1.07, 1.10, 1.12, 1.13, 1.14]
WATER_SHAPE = [0.55, 0.50, 0.48, 0.48, 0.55, 0.75, 1.05, 1.30, 1.30, 1.20, 1.10, 1.05,
               1.05, 1.00, 0.98, 1.00, 1.08, 1.20, 1.30, 1.25, 1.10, 0.95, 0.80, 0.66]
AMBIENT = [round(6.0 + 4.0 * math.sin(math.pi * (t - 9) / 12), 3) for t in range(T)]
TOU = [0.04] * 7 + [0.08] * 10 + [0.14] * 4 + [0.08] * 3


def feeder_37():
    """Slack E0, main feeder E1..E12, four laterals; 37 nodes, 36 lines."""
    lines = []
    for k in range(1, 13):
        lines.append(("E%d" % (k - 1), "E%d" % k, 0.0015, 0.002))
    laterals = [(3, range(13, 18)), (6, range(18, 24)), (9, range(24, 31)), (11, range(31, 37))]
    for root, ids in laterals:
        prev = "E%d" % root
        for n in ids:
            lines.append((prev, "E%d" % n, 0.004, 0.003))
            prev = "E%d" % n
    nodes = []
    for k in range(37):
        nid = "E%d" % k
        if k == 0:
            nodes.append({"id": nid, "p_load": [0.0] * T, "q_load": [0.0] * T})
            continue
        base = 0.045 + 0.02 * ((k * 7) % 5) / 4.0
        p = profile(base, LOAD_SHAPE)
        nodes.append({"id": nid, "p_load": p, "q_load": [round(0.4 * x, 6) for x in p]})
    return nodes, [
        {"id": "L%s_%s" % (a, b), "from": a, "to": b, "r": r, "x": x} for a, b, r, x in lines
    ]


def pv(node, cap):
    return {
        "id": "PV_" + node, "node": node,
        "p_min": [0.0] * T, "p_max": [round(cap * s, 6) for s in SOLAR],
        "q_min": [-0.1] * T, "q_max": [0.1] * T, "s_max": cap + 0.05,
        "cost_linear": 0.0, "cost_quadratic": 0.0,
    }


def fig1(prices=None, water_scale=1.0):
    nodes, lines = feeder_37()
    ders = [pv("E12", 0.3), pv("E28", 0.25), pv("E34", 0.3), {
        "id": "DG_E17", "node": "E17",
        "p_min": [0.0] * T, "p_max": [0.3] * T, "q_min": [-0.15] * T, "q_max": [0.15] * T,
        "cost_linear": 60.0, "cost_quadratic": 20.0,
    }]
    water = {
        "junctions": [
            {"id": "W2", "min_head": 15.0, "demand": [0.0] * T},
            {"id": "W4", "min_head": 20.0, "demand": profile(0.06 * water_scale, WATER_SHAPE)},
            {"id": "W5", "min_head": 18.0, "demand": profile(0.04 * water_scale, WATER_SHAPE)},
        ],
        "tanks": [{"id": "TK3", "inlet": "W3", "outlet": "W3'", "cross_section": 500.0,
                   "initial_head": 35.0, "min_head": 32.0, "terminal_min_head": 35.0}],
        "reservoirs": [{"id": "W1", "head": 25.0}],
        "pipes": [
            {"id": "V12", "from": "W1", "to": "W2", "kind": {"type": "valve"}, "max_flow": 0.4},
            {"id": "P23", "from": "W2", "to": "W3",
             "kind": {"type": "pump", "a": 150.0, "b": 10.0, "c": 40.0, "efficiency": 0.81},
             "max_flow": 0.3},
            {"id": "D34", "from": "W3'", "to": "W4", "kind": {"type": "plain", "friction": 200.0},
             "max_flow": 0.4},
            {"id": "D45", "from": "W4", "to": "W5", "kind": {"type": "plain", "friction": 300.0},
             "max_flow": 0.4},
        ],
    }
    heat = heat_net([("H2", 0.8e6), ("H3", 0.6e6), ("H4", 0.5e6), ("H5", 0.5e6)],
                    [("H1", "H2", 20000.0, 1.5e-4), ("H2", "H3", 40000.0, 1.2e-4),
                     ("H3", "H4", 40000.0, 1.0e-4), ("H3", "H5", 40000.0, 1.0e-4)])
    return scenario(nodes, lines, ders, water, heat, {"P23": "E22"}, {"H1": "E21"},
                    prices or [round(p * KWH, 8) for p in TOU])


def chp(cid="H1"):
    return {
        "id": cid,
        "points": [
            {"p": 0.2e6, "q": 0.05e6, "heat": 0.0, "cost": 20.0},
            {"p": 1.0e6, "q": 0.25e6, "heat": 0.0, "cost": 90.0},
            {"p": 0.8e6, "q": 0.2e6, "heat": 3.5e6, "cost": 130.0},
            {"p": 0.15e6, "q": 0.04e6, "heat": 3.0e6, "cost": 60.0},
        ],
        "supply_temp_min": 70.0, "supply_temp_max": 100.0,
        "pump": {"a": 30000.0, "b": 200.0, "c": 60.0, "efficiency": 0.81},
        "max_flow": 0.06,
    }


def heat_net(loads, pipes, slots=T, shape=HEAT_SHAPE, ambient=AMBIENT):
    return {
        "ambient": ambient[:slots],
        "chps": [chp()],
        "loads": [{"id": lid, "demand": profile(h, shape[:slots]), "return_temp_min": 30.0,
                   "return_temp_max": 60.0, "min_head_drop": 5.0, "max_flow": 0.05}
                  for lid, h in loads],
        "supply_pipes": [{"id": "S%s_%s" % (a, b), "from": a, "to": b, "friction": f, "xi": xi,
                          "max_flow": 0.05} for a, b, f, xi in pipes],
        "return_pipes": [{"id": "R%s_%s" % (b, a), "from": b, "to": a, "friction": f, "xi": xi,
                          "max_flow": 0.05} for a, b, f, xi in pipes],
    }


def scenario(nodes, lines, ders, water, heat, wp, hp, elec, slots=T, water_price=0.002):
    return {
        "schema_version": "1",
        "horizon": {"slot_count": slots, "slot_duration_s": DT},
        "power": {"s_base_va": 1e6, "slack": "E0", "nodes": nodes, "lines": lines, "ders": ders,
                  "pump_nodes": sorted(set(wp.values())), "chp_nodes": sorted(set(hp.values()))},
        "water": water,
        "heat": heat,
        "coupling": {"wp": wp, "hp": hp},
        "prices": {"electricity": elec, "water": [water_price] * slots},
    }


def micro():
    s = 2
    nodes = [{"id": "E0", "p_load": [0.0, 0.0]}, {"id": "E1", "p_load": [0.8, 1.1], "q_load": [0.3, 0.4]}]
    lines = [{"id": "L01", "from": "E0", "to": "E1", "r": 0.01, "x": 0.02}]
    water = {
        "junctions": [{"id": "W2", "min_head": 40.0, "demand": [0.05, 0.08]}],
        "reservoirs": [{"id": "W1", "head": 25.0}],
        "pipes": [{"id": "P12", "from": "W1", "to": "W2",
                   "kind": {"type": "pump", "a": 150.0, "b": 10.0, "c": 30.0, "efficiency": 0.81},
                   "max_flow": 0.2}],
    }
    heat = heat_net([("H2", 1.5e6)], [("H1", "H2", 20000.0, 1.5e-4)], slots=s,
                    shape=[1.0, 1.2], ambient=[8.0, 8.0])
    return scenario(nodes, lines, [], water, heat, {"P12": "E1"}, {"H1": "E1"},
                    [0.06 * KWH, 0.12 * KWH], slots=s)


def decoupled():
    s = 4
    nodes = [{"id": "E0"}, {"id": "E1", "p_load": [0.3, 0.4, 0.5, 0.35], "q_load": [0.1, 0.1, 0.2, 0.1]},
             {"id": "E2", "p_load": [0.2, 0.25, 0.3, 0.2], "q_load": [0.05, 0.1, 0.1, 0.05]}]
    lines = [{"id": "L01", "from": "E0", "to": "E1", "r": 0.01, "x": 0.02},
             {"id": "L12", "from": "E1", "to": "E2", "r": 0.02, "x": 0.02}]
    ders = [{"id": "DG_E2", "node": "E2", "p_min": [0.0] * s, "p_max": [0.2] * s,
             "q_min": [-0.1] * s, "q_max": [0.1] * s, "cost_linear": 70.0, "cost_quadratic": 30.0}]
    water = {
        "junctions": [{"id": "W2", "min_head": 30.0, "demand": [0.02, 0.03, 0.04, 0.03]}],
        "reservoirs": [{"id": "W1", "head": 50.0}],
        "pipes": [{"id": "D12", "from": "W1", "to": "W2", "kind": {"type": "plain", "friction": 500.0},
                   "max_flow": 0.2}],
    }
    heat = {"ambient": [10.0] * s}
    return scenario(nodes, lines, ders, water, heat, {}, {}, [0.05 * KWH, 0.08 * KWH, 0.12 * KWH, 0.06 * KWH],
                    slots=s)


def two_tier():
    # low price for the first 12 slots, high for the rest
    price = [0.04 * KWH] * 12 + [0.16 * KWH] * 12
    s = fig1(prices=price, water_scale=1.46)
    # the day's demand is about 92% of what the pump can move in the cheap
    # window, so it runs through the whole window; the tank starts empty and
    # carries the expensive half
    tank = s["water"]["tanks"][0]
    tank.update({"cross_section": 800.0, "initial_head": 32.0, "min_head": 32.0})
    tank.pop("terminal_min_head")
    return s


def infeasible_heat():
    s = micro()
    s["heat"]["loads"][0]["demand"] = [5.0e6, 5.5e6]
    return s


def write(name, doc):
    with open(os.path.join(HERE, name), "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    write("fig1_topology.json", fig1())
    write("micro.json", micro())
    write("decoupled.json", decoupled())
    write("two_tier_price.json", two_tier())
    write("infeasible_heat.json", infeasible_heat())
