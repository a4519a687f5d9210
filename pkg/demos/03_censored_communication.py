"""
Who talks when: the communication bitmap of a full-size scenario.

Runs one of the bundled 150-EV scenarios with and without censoring,
draws the S x N broadcast bitmap as text (one row per iteration, '#' for a
broadcast), and reports the communication fraction, the final voltage range
and the cost difference between the two runs. Results are also written as
CSV/JSON like ``ccadmm-ev run`` does.

A run takes a few minutes per mode on a laptop.

Run:  python demos/03_censored_communication.py [--scenario example2] [--out results]
"""

import argparse
import logging

import numpy as np

from ccadmm_ev import communication_fraction, emit_results, parse_scenario, run


def draw(bitmap, width=75):
    step = max(1, int(np.ceil(bitmap.shape[1] / width)))
    for k, row in enumerate(bitmap, start=1):
        cells = [row[i:i + step].any() for i in range(0, len(row), step)]
        print(f"{k:3d} " + "".join("#" if c else "." for c in cells) + f"  {int(row.sum()):3d}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--scenario", default="example1")
    ap.add_argument("--out", default=None, help="write result files under this directory")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    scn = parse_scenario(args.scenario)
    print(f"{scn.name}: N={scn.N}, S={scn.S}, graph {scn.comm.kind}, "
          f"gamma={scn.policy.gamma}, epsilon={scn.policy.epsilon}")

    def dots(k, ntx, resid):
        print(f"\r  iteration {k:2d}/{scn.S}  sent {ntx:3d}  residual {resid:.2e}", end="", flush=True)

    cens = run(scn, mode="censored", progress=dots)
    print()
    bench = run(scn, mode="benchmark", progress=dots)
    print("\n\nbroadcasts of the censored run (columns grouped by EV id):")
    draw(cens.bitmap)

    frac = communication_fraction(cens, bench)
    print(f"\ncensored run sent {cens.transmissions} of {bench.transmissions} messages ({frac:.1%})")
    for label, res in (("censored", cens), ("benchmark", bench)):
        v = np.sqrt(res.voltages)
        print(f"{label:>9}: cost {res.objective:.3f}, voltages {v.min():.4f}-{v.max():.4f} p.u., "
              f"final residual {res.residuals[-1]:.1e}")
    if args.out:
        emit_results(cens, f"{args.out}/{scn.name}-censored", scenario=scn, benchmark=bench)
        emit_results(bench, f"{args.out}/{scn.name}-benchmark", scenario=scn)
        print(f"result files written under {args.out}/")


if __name__ == "__main__":
    main()
