"""Tabulate capsule size against the progress coefficient for one snapshot.

For each xi the table lists the capsule radius, the segment length and the
ratio to the gap-safe radius sqrt(2 gap).  Optional --plot writes a PNG of a
2-D slice (needs matplotlib, which the package itself does not use).
"""

import argparse

import numpy as np

from blitzws.capsule import IterSnapshot, compute_capsule, teardrop_ball


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dist", type=float, default=1.0, help="distance between x and y")
    ap.add_argument("--gap", type=float, default=1.0)
    ap.add_argument("--plot", default=None, help="output PNG path")
    args = ap.parse_args()
    if args.dist**2 > 2 * args.gap:
        ap.error("need dist^2 <= 2 gap")

    snap = IterSnapshot.build(np.array([args.dist, 0.0]), np.zeros(2), args.gap)
    gap_safe = np.sqrt(2 * args.gap)
    print(f"{'xi':>8} {'radius':>10} {'segment':>10} {'radius/gap-safe':>16}")
    xis = np.logspace(-4, 0, 9)
    for xi in xis:
        cap = compute_capsule(snap, xi)
        seg = np.linalg.norm(cap.c2 - cap.c1)
        print(f"{xi:>8.1e} {cap.radius:>10.3e} {seg:>10.3e} {cap.radius / gap_safe:>16.3e}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6))
        t = np.linspace(0, 2 * np.pi, 200)
        for xi, color in zip((0.05, 0.3, 1.0), ("C0", "C1", "C2")):
            for beta in np.linspace(1e-3, 0.5 - 1e-3, 40):
                c, tau = teardrop_ball(snap, xi, beta)
                ax.plot(c[0] + tau * np.cos(t), c[1] + tau * np.sin(t), color=color, lw=0.3)
            cap = compute_capsule(snap, xi)
            ax.plot([cap.c1[0], cap.c2[0]], [cap.c1[1], cap.c2[1]], color=color, lw=2, label=f"xi={xi:g}")
        ax.plot(*np.c_[snap.y_prev, snap.x_prev], "k.")
        ax.set_aspect("equal")
        ax.legend()
        fig.savefig(args.plot, dpi=120)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
