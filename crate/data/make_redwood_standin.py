"""Regenerates redwood.csv, a synthetic stand-in for the redwood seedlings.

Matern cluster process on the unit square (parent intensity 24, mean 2.6
offspring per parent, cluster radius 0.08) with a hard core of 0.02: an
offspring closer than that to an earlier point is redrawn, up to 50 times,
then dropped. The pattern is conditioned on exactly 62 points by rejection.
Seeded, so the output is reproducible.
"""
import numpy as np

KAPPA, MU, RADIUS, HARD_CORE, N = 24.0, 2.6, 0.08, 0.02, 62
TRIES = 50


def draw(rng):
    # parents on an expanded window so clusters straddling the edge are kept
    lo, hi = -RADIUS, 1.0 + RADIUS
    area = (hi - lo) ** 2
    parents = rng.uniform(lo, hi, size=(rng.poisson(KAPPA * area), 2))
    pts = []
    for p in parents:
        for _ in range(rng.poisson(MU)):
            for _ in range(TRIES):
                rho = RADIUS * np.sqrt(rng.uniform())
                theta = rng.uniform(0, 2 * np.pi)
                q = p + rho * np.array([np.cos(theta), np.sin(theta)])
                if all(np.hypot(*(q - o)) >= HARD_CORE for o in pts):
                    pts.append(q)
                    break
    pts = np.array(pts).reshape(-1, 2)
    inside = (pts >= 0).all(axis=1) & (pts <= 1).all(axis=1)
    return pts[inside]


def main():
    rng = np.random.default_rng(20240501)
    while True:
        pts = draw(rng)
        if len(pts) == N:
            break
    with open("redwood.csv", "w") as f:
        f.write("x,y\n")
        for x, y in pts:
            f.write(f"{x:.4f},{y:.4f}\n")


if __name__ == "__main__":
    main()
