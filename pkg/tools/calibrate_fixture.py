"""Calibration report for the IEEE 14-bus fixture.

Prints the player block of S next to the published values, the back-solved
G3 output, the equilibria before and after each fault scenario, the slack
output, the IUA step count and how fast PDA settles again after each fault.
"""

from pathlib import Path

import numpy as np

from gridgame.dynamics import SchemeConfig, check_conditions, run, run_sweep
from gridgame.faults import FaultEvent, post_fault_equilibrium
from gridgame.game import full_injection, loss_of_efficiency, solve_ne_direct, solve_potential, solve_team
from gridgame.grid import validate_sensitivity
from gridgame.powerflow import slack_injection
from gridgame.scenario import fixture_path, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

PUBLISHED_S = np.array(
    [
        [0.1212, 0.0371, 0.0349],
        [0.0371, 0.3850, 0.1471],
        [0.0349, 0.1471, 0.3909],
    ]
)
PUBLISHED_NE_MW = {
    "pre-fault": (55.1, 34.7, 27.9),
    "generator outage": (60.3, 47.8, 46.7),
    "microgrid shutdown": (62.6, 36.5, 0.0),
    "line trip": (57.9, 36.4, 16.4),
}


def mw(eq, spec):
    base = spec.net.base_mva
    return ", ".join(f"{bus}: {g * base:7.2f}" for bus, g in eq.p_gen_dict().items())


def main():
    spec, cfg, _, _ = load_scenario(fixture_path("ieee14.json"))
    base = spec.net.base_mva
    s_dd = spec.s.submatrix(spec.player_buses)

    print("player block of S (computed / published)")
    for row, ref in zip(s_dd, PUBLISHED_S):
        print("  " + "  ".join(f"{v:.4f}/{r:.4f}" for v, r in zip(row, ref)))
    print(f"max abs deviation: {np.max(np.abs(s_dd - PUBLISHED_S)):.4f}")
    print(f"sensitivity property violations: {len(validate_sensitivity(spec.s))}")
    report = check_conditions(spec, SchemeConfig("rua", tau=(0.65, 0.7, 0.8)))
    print(f"ratio_max={report.ratio_max:.3f} c1={report.c1:.3f} c2={report.c2:.3f}")
    print(f"G3 output (calibrated): {spec.net.bus(12).p_gen_fixed * base:.2f} MW")

    events = {
        "pre-fault": (),
        "generator outage": FaultEvent.generator_outage(19, 12),
        "microgrid shutdown": FaultEvent.microgrid_shutdown(19, 14),
        "line trip": FaultEvent.line_trip(19, 8, 14),
    }
    for label, ev in events.items():
        eq = post_fault_equilibrium(spec, ev)
        print(f"{label:>18}: {mw(eq, spec)}  published {PUBLISHED_NE_MW[label]}")

    ne = solve_ne_direct(spec)
    print(f"potential minimizer vs NE: {np.max(np.abs(solve_potential(spec).p_net - ne.p_net)):.2e} pu")
    print(f"team optimum vs NE: {np.max(np.abs(solve_team(spec).p_net - ne.p_net)):.2e} pu")
    print(f"loss of efficiency: {loss_of_efficiency(spec):.9f}")
    slack = slack_injection(spec.net, full_injection(spec, ne.p_net)) * base
    print(f"slack output at the NE: {slack:.3f} MW")
    iua = run(spec, cfg)
    print(f"IUA steps at delta={cfg.delta * base:g} MW: {iua.status.step} ({iua.status})")

    print("median re-convergence steps after the fault (PDA, seeds 0..99)")
    for name in (
        "ieee14_pda_generator_outage.json",
        "ieee14_pda_microgrid_shutdown.json",
        "ieee14_pda_line_trip.json",
    ):
        f_spec, f_cfg, timeline, _ = load_scenario(SCENARIOS / name)
        runs = run_sweep(f_spec, f_cfg, range(100), timeline=timeline, workers=-1)
        fault_step = timeline.events[0].at_step
        print(f"  {name}: {np.median([t.status.step - fault_step for t in runs]):.1f}")


if __name__ == "__main__":
    main()
