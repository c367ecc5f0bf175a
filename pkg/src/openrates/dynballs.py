"""Dynamical balls: cutoff radii, membership, measures and the triangle bound.

The cutoff is g_eps(x) = min(eps, d(x, S)) / 3.  A point y belongs to the
dynamical ball B(x, n, g_eps) iff d(f^i x, f^i y) < g_eps(f^i x) for all
0 <= i <= n and y survives to time n.  Ball masses are estimated by
importance sampling inside a linearization envelope around the orbit tube;
uniform phase-space sampling would waste exponentially many points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .systems import OpenSystem, torus_dist


@dataclass(frozen=True)
class BallSpec:
    center: object
    n: int
    mode: str = "g_eps"      # g_eps | star
    eps: float = 0.1
    gamma: float = 0.0


def g_cutoff(sys: OpenSystem, x, eps: float) -> float:
    """g_eps(x) = min(eps, d(x, S)) / 3."""
    return min(eps, sys.map.singularity_distance(x)) / 3.0


def _orbit(sys: OpenSystem, x, n: int):
    pts = [x]
    cur = x
    for _ in range(n):
        cur = sys.map.evaluate(cur)
        pts.append(cur)
    return pts


def ball_member(sys: OpenSystem, spec: BallSpec, y) -> bool:
    dim = sys.map.dimension
    ox = _orbit(sys, spec.center, spec.n)
    oy = _orbit(sys, y, spec.n)
    for i in range(spec.n + 1):
        d = float(torus_dist(ox[i], oy[i], dim))
        if spec.mode == "g_eps":
            if d >= g_cutoff(sys, ox[i], spec.eps):
                return False
        else:
            if d >= spec.eps * math.exp(-spec.gamma * i):
                return False
    if spec.mode == "g_eps":
        # membership requires y in M^n
        for p in oy:
            if sys.hole.contains(p):
                return False
    return True


# ---------------------------------------------------------------------------
# ball mass

class ZeroCountError(RuntimeError):
    pass


def _derivative_cocycle(sys: OpenSystem, orbit):
    """Products D f^i along the orbit, i = 0..n."""
    dim = sys.map.dimension
    Js = [np.eye(dim)]
    J = np.eye(dim)
    for p in orbit[:-1]:
        J = sys.map.derivative(p) @ J
        Js.append(J.copy())
    return Js


def _envelope(sys: OpenSystem, orbit, g_vals):
    """Sampling envelope containing the ball, from the linearized cocycle.

    1D: interval radius min_i g_i / |J_i|.  2D: rectangle in the right
    singular directions of the final cocycle with per-axis half-widths
    min_i g_i / sigma_k(J_i) evaluated on those axes.
    Exact for the piecewise-linear zoo (linearization is exact at ball
    scales); returns (directions, halfwidths, volume)."""
    dim = sys.map.dimension
    Js = _derivative_cocycle(sys, orbit)
    if dim == 1:
        r = min(g / abs(float(J[0, 0])) for g, J in zip(g_vals, Js))
        return np.eye(1), np.array([r]), 2.0 * r
    # axes from the final cocycle
    _, _, Vt = np.linalg.svd(Js[-1])
    axes = Vt.T  # columns are sampling directions
    widths = np.full(2, np.inf)
    for g, J in zip(g_vals, Js):
        stretch = np.linalg.norm(J @ axes, axis=0)
        widths = np.minimum(widths, g / stretch)
    vol = 4.0 * widths[0] * widths[1]
    return axes, widths, vol


def ball_measure(sys: OpenSystem, spec: BallSpec, samples: int = 20000,
                 rng: Optional[np.random.Generator] = None,
                 min_hits: int = 30):
    """Monte Carlo mass of the ball under Lebesgue, with stderr.

    Samples uniformly in the linearization envelope (an unbiased superset of
    the ball) and multiplies the hit fraction by the envelope volume.
    """
    if rng is None:
        rng = np.random.default_rng(1)
    dim = sys.map.dimension
    x = spec.center
    orbit = _orbit(sys, x, spec.n)
    if spec.mode == "g_eps":
        g_vals = [g_cutoff(sys, p, spec.eps) for p in orbit]
    else:
        g_vals = [spec.eps * math.exp(-spec.gamma * i)
                  for i in range(spec.n + 1)]
    axes, widths, vol = _envelope(sys, orbit, g_vals)

    u = rng.uniform(-1.0, 1.0, size=(samples, dim)) * widths[None, :]
    if dim == 1:
        ys = (np.asarray(x) + u[:, 0]) % 1.0
    else:
        ys = (np.asarray(x)[None, :] + u @ axes.T) % 1.0

    hits = _count_members(sys, orbit, g_vals, ys, spec)
    if hits < min_hits:
        raise ZeroCountError(
            f"only {hits} hits in the envelope; increase samples or eps")
    frac = hits / samples
    mass = vol * frac
    stderr = vol * math.sqrt(frac * (1.0 - frac) / samples)
    return mass, stderr


def _count_members(sys: OpenSystem, orbit, g_vals, ys, spec):
    dim = sys.map.dimension
    alive = np.ones(len(ys), dtype=bool)
    cur = ys
    for i, (p, g) in enumerate(zip(orbit, g_vals)):
        d = torus_dist(cur, p, dim)
        alive &= d < g
        if spec.mode == "g_eps":
            alive &= ~sys.hole.in_hole_many(cur)
        if not alive.any() or i == len(orbit) - 1:
            break
        cur = sys.map.step_many(cur)
    return int(np.count_nonzero(alive))


def ball_slope(sys: OpenSystem, center, eps: float, n_values,
               samples: int = 40000,
               rng: Optional[np.random.Generator] = None):
    """Decay slope -(1/n) log mass over a sweep of horizons.

    Returns (slope, [(n, mass), ...]); the volume estimate bounds the slope
    by the positive Lyapunov exponent sum."""
    if rng is None:
        rng = np.random.default_rng(2)
    rows = []
    for n in n_values:
        mass, _ = ball_measure(sys, BallSpec(center, n, "g_eps", eps),
                               samples=samples, rng=rng)
        rows.append((n, mass))
    ns = np.array([n for n, _ in rows], dtype=float)
    ys = np.array([-math.log(m) for _, m in rows])
    slope, _ = np.polyfit(ns, ys, 1)
    return float(slope), rows


# ---------------------------------------------------------------------------
# triangle estimate

def triangle_check(singularity_distance, n_triples: int, eps: float,
                   rng: Optional[np.random.Generator] = None,
                   adversarial: bool = False):
    """Sample triples with d(x,z) <= g(x), d(z,y) <= g(y); count violations of
    d(x,y) <= 3 g(x) and of the intermediate bound d(y,S) <= 2 d(x,S).

    Works on the interval with an arbitrary synthetic singularity-distance
    function; both counts must be zero.
    """
    if rng is None:
        rng = np.random.default_rng(3)

    def g(x):
        return min(eps, singularity_distance(x)) / 3.0

    violations = 0
    proof_violations = 0
    produced = 0
    while produced < n_triples:
        batch = min(n_triples - produced, 100_000)
        if adversarial:
            # concentrate x near the singularity set
            x = (rng.random(batch) ** 3) * eps * 3.0
            x = np.array([min(max(v, 1e-9), 1 - 1e-9) for v in x])
        else:
            x = rng.random(batch)
        gx = np.array([g(v) for v in x])
        z = x + rng.uniform(-1.0, 1.0, batch) * gx
        # propose y near z, accept if within g(y) of z
        prop = z + rng.uniform(-1.0, 1.0, batch) * 2.0 * gx
        gy = np.array([g(v) for v in prop])
        ok = np.abs(prop - z) <= gy
        x, z, y, gx = x[ok], z[ok], prop[ok], gx[ok]
        produced += len(x)
        violations += int(np.count_nonzero(np.abs(x - y) > 3.0 * gx + 1e-15))
        ds_x = np.array([singularity_distance(v) for v in x])
        ds_y = np.array([singularity_distance(v) for v in y])
        proof_violations += int(np.count_nonzero(ds_y > 2.0 * ds_x + 1e-15))
    return {"triples": produced, "violations": violations,
            "proof_violations": proof_violations}


# ---------------------------------------------------------------------------
# separated sets

def separated_set_size(sys: OpenSystem, candidates, n: int, eps: float) -> int:
    """Greedy maximal set of centers with pairwise disjoint (n, g_eps)-balls.

    Two balls are disjoint if at some step the orbits are farther apart than
    the sum of the cutoff radii.
    """
    dim = sys.map.dimension
    orbits = []
    gs = []
    for x in candidates:
        o = _orbit(sys, x, n)
        orbits.append(o)
        gs.append([g_cutoff(sys, p, eps) for p in o])
    kept = []
    for j in range(len(candidates)):
        ok = True
        for i in kept:
            disjoint = any(
                float(torus_dist(orbits[i][t], orbits[j][t], dim))
                > gs[i][t] + gs[j][t]
                for t in range(n + 1))
            if not disjoint:
                ok = False
                break
        if ok:
            kept.append(j)
    return len(kept)
