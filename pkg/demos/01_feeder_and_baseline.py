"""
The feeder behind the bundled scenarios, before any EV is controlled.

Builds the two-node, three-phase circuit of ``example1``, prints the
linearized sensitivity matrices, and shows where the EV-free evening load
pushes phase c below the lower voltage limit. Finally it estimates what one
7 kW charger does to each phase, including the cross-phase coupling that an
unbalanced model captures and a single-phase model would miss.

Run:  python demos/01_feeder_and_baseline.py
"""

import numpy as np

from ccadmm_ev import parse_scenario


def main():
    scn = parse_scenario("example1")
    sens = scn.sensitivity
    labels = [f"{n}:{ph}" for n, ph in scn.grid.supply_points]
    np.set_printoptions(precision=4, suppress=True)

    print(f"{scn.N} EVs on {scn.K} supply points {labels}, T={scn.T} steps of {scn.delta} h")
    print("\nR (ohm-like, rows/cols = supply points):")
    print(sens.R)
    print("X:")
    print(sens.X)

    base = np.sqrt(scn.envelope.baseline.reshape(scn.T, scn.K))
    hours = np.arange(scn.T) * scn.delta
    print("\nEV-free voltage magnitude (p.u.) every two hours:")
    print("  hour  " + "  ".join(f"{l:>7}" for l in labels))
    for t in range(0, scn.T, 4):
        flag = "  <- below 0.95" if base[t].min() < 0.95 else ""
        print(f"  {hours[t]:4.1f}  " + "  ".join(f"{v:7.4f}" for v in base[t]) + flag)

    low = np.argwhere(base < 0.95)
    if len(low):
        steps = sorted({int(t) for t, _ in low})
        print(f"\nlower-band violations at hours {hours[steps[0]]:.1f}-{hours[steps[-1]]:.1f} "
              f"on {sorted({labels[k] for _, k in low})}")

    # one EV on phase a charging at 7 kW for one step
    n = next(i for i, sp in enumerate(scn.grid.customers) if sp[1] == "a")
    dV = sens.D_n(n) * 7.0
    print(f"\n7 kW on EV {n} (phase a) shifts squared voltages by {dV} p.u.^2 "
          "(phases a, b, c)")


if __name__ == "__main__":
    main()
