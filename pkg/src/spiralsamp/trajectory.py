"""Sampling trajectories in the frequency plane.

Three curve families are supported: the Archimedes spiral (optionally
rotated), concentric circles and equispaced parallel lines.  On top of the
curve evaluators this module provides arc-length quadrature clipped to a
square window, Beurling-gap estimation, greedy extraction of separated
subsets, the translated-window deviation from the vertical lattice
``eta*Z x R`` and a numerical check of the spiraling conditions.

Conventions
-----------
Spiral with rotation fraction ``theta0``::

    gamma(theta) = eta*theta * (cos 2pi(theta - theta0), sin 2pi(theta - theta0)),  theta >= 0

so that its crossings of the positive horizontal axis sit at
``x1 = eta*(k + theta0)``.  Rotating the plain spiral counter-clockwise by
``2*pi*a`` is the same curve with ``theta0 = (-a) mod 1``.

Circles are addressed by ``(ring, t)`` with ring ``k >= 1`` and angle
fraction ``t``; a single "global" parameter ``theta = (k-1) + t`` is also
accepted.  Lines are addressed by ``(ring, t)`` with ring ``k`` in Z and
``gamma = t*d + tau*k*d_perp``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ClassificationWindowError,
    EmptyWindowError,
    InsufficientWindowError,
    NormalizationError,
    ParameterDomainError,
)

__all__ = [
    "Kind",
    "ParametricTrajectory",
    "QuadratureSet",
    "SeparatedSet",
    "SpiralingReport",
    "GapEstimate",
    "make_trajectory",
    "speed_and_curvature",
    "arc_quadrature",
    "gap_estimate",
    "extract_separated",
    "translated_quadrature",
    "crossing_deviations",
    "weak_limit_deviation",
    "classify_spiraling",
    "ball_measure",
    "spiral_arclength",
    "write_quadrature_csv",
    "read_quadrature_csv",
]

GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
TWO_PI = 2.0 * math.pi


class Kind(str, Enum):
    SPIRAL = "spiral"
    CIRCLES = "circles"
    LINES = "lines"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, Kind):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "spiral": cls.SPIRAL,
            "archimedesspiral": cls.SPIRAL,
            "archimedes": cls.SPIRAL,
            "circles": cls.CIRCLES,
            "concentriccircles": cls.CIRCLES,
            "circle": cls.CIRCLES,
            "lines": cls.LINES,
            "parallellines": cls.LINES,
            "line": cls.LINES,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ParameterDomainError(f"unknown trajectory kind {value!r}") from None


# --------------------------------------------------------------------------
# curve evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricTrajectory:
    """An immutable description of one of the supported curves."""

    kind: Kind
    eta: float = 1.0
    theta0: float = 0.0
    direction: tuple = (0.0, 1.0)
    tau: float = 1.0
    k_max: int | None = None
    theta_max: float | None = None

    # spacing of consecutive turns/rings/lines
    @property
    def spacing(self) -> float:
        return self.tau if self.kind is Kind.LINES else self.eta

    @property
    def d_perp(self) -> np.ndarray:
        d1, d2 = self.direction
        return np.array([-d2, d1])

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "eta": self.eta}
        if self.kind is Kind.SPIRAL:
            out["theta0"] = self.theta0
            if self.theta_max is not None:
                out["theta_max"] = self.theta_max
        if self.kind is Kind.LINES:
            out["direction"] = list(self.direction)
            out["tau"] = self.tau
        if self.k_max is not None:
            out["k_max"] = self.k_max
        return out

    # -- parameter handling -------------------------------------------------
    def _split(self, theta, ring):
        theta = np.asarray(theta, dtype=float)
        if self.kind is Kind.SPIRAL:
            if np.any(theta < 0):
                raise ParameterDomainError("spiral parameter must be >= 0")
            if self.theta_max is not None and np.any(theta > self.theta_max):
                raise ParameterDomainError("parameter beyond theta_max")
            return None, theta
        if self.kind is Kind.CIRCLES:
            if np.any(theta < 0):
                raise ParameterDomainError("circle parameter must be >= 0")
            if ring is None:
                k = np.floor(theta) + 1.0
                t = theta - (k - 1.0)
            else:
                k = np.asarray(ring, dtype=float)
                t = theta
            if np.any(k < 1):
                raise ParameterDomainError("ring index must be >= 1")
            if self.k_max is not None and np.any(k > self.k_max):
                raise ParameterDomainError("ring index beyond k_max")
            return k, t
        k = np.zeros_like(theta) if ring is None else np.asarray(ring, dtype=float)
        if self.k_max is not None and np.any(np.abs(k) > self.k_max):
            raise ParameterDomainError("line index beyond k_max")
        return k, theta

    def position(self, theta, ring=None) -> np.ndarray:
        k, t = self._split(theta, ring)
        if self.kind is Kind.SPIRAL:
            ang = TWO_PI * (t - self.theta0)
            r = self.eta * t
            return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        if self.kind is Kind.CIRCLES:
            ang = TWO_PI * t
            r = self.eta * k
            return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        d = np.asarray(self.direction)
        return t[..., None] * d + (self.tau * k)[..., None] * self.d_perp

    def derivative(self, theta, ring=None) -> np.ndarray:
        k, t = self._split(theta, ring)
        if self.kind is Kind.SPIRAL:
            ang = TWO_PI * (t - self.theta0)
            c, s = np.cos(ang), np.sin(ang)
            e = self.eta
            return np.stack([e * c - TWO_PI * e * t * s, e * s + TWO_PI * e * t * c], axis=-1)
        if self.kind is Kind.CIRCLES:
            ang = TWO_PI * t
            r = TWO_PI * self.eta * k
            return np.stack([-r * np.sin(ang), r * np.cos(ang)], axis=-1)
        return np.broadcast_to(np.asarray(self.direction, float), t.shape + (2,)).copy()

    def second_derivative(self, theta, ring=None) -> np.ndarray:
        k, t = self._split(theta, ring)
        if self.kind is Kind.SPIRAL:
            ang = TWO_PI * (t - self.theta0)
            c, s = np.cos(ang), np.sin(ang)
            e = self.eta
            a = 2.0 * TWO_PI * e
            b = TWO_PI**2 * e * t
            return np.stack([-a * s - b * c, a * c - b * s], axis=-1)
        if self.kind is Kind.CIRCLES:
            ang = TWO_PI * t
            r = TWO_PI**2 * self.eta * k
            return np.stack([-r * np.cos(ang), -r * np.sin(ang)], axis=-1)
        return np.zeros(t.shape + (2,))

    def speed(self, theta, ring=None) -> np.ndarray:
        k, t = self._split(theta, ring)
        if self.kind is Kind.SPIRAL:
            return self.eta * np.hypot(1.0, TWO_PI * t)
        if self.kind is Kind.CIRCLES:
            return TWO_PI * self.eta * k
        return np.ones_like(t)

    def curvature(self, theta, ring=None) -> np.ndarray:
        k, t = self._split(theta, ring)
        if self.kind is Kind.SPIRAL:
            u2 = (TWO_PI * t) ** 2
            return (2.0 + u2) / (self.eta * (1.0 + u2) ** 1.5)
        if self.kind is Kind.CIRCLES:
            return 1.0 / (self.eta * k)
        return np.zeros_like(t)


def make_trajectory(kind, params: dict | None = None, **kwargs) -> ParametricTrajectory:
    """Validate parameters and build a trajectory.

    ``params`` and keyword arguments are merged (keywords win).  Recognised
    keys: ``eta, theta0, direction, tau, k_max, theta_max``.
    """
    kind = Kind.parse(kind)
    p = dict(params or {})
    p.update(kwargs)
    unknown = set(p) - {"eta", "theta0", "direction", "tau", "k_max", "theta_max"}
    if unknown:
        raise ParameterDomainError(f"unknown trajectory parameters {sorted(unknown)}")
    eta = float(p.get("eta", 1.0))
    if not (eta > 0 and math.isfinite(eta)):
        raise ParameterDomainError("eta must be positive", eta=eta)
    theta0 = float(p.get("theta0", 0.0))
    if not (0.0 <= theta0 < 1.0):
        raise ParameterDomainError("theta0 must lie in [0, 1)", theta0=theta0)
    tau = float(p.get("tau", eta if kind is Kind.LINES else 1.0))
    if not (tau > 0 and math.isfinite(tau)):
        raise ParameterDomainError("tau must be positive", tau=tau)
    direction = tuple(float(v) for v in p.get("direction", (0.0, 1.0)))
    if len(direction) != 2:
        raise ParameterDomainError("direction must have two components")
    if abs(math.hypot(*direction) - 1.0) > 1e-12:
        raise NormalizationError("direction must be a unit vector", norm=math.hypot(*direction))
    k_max = p.get("k_max")
    if k_max is not None:
        k_max = int(k_max)
        if k_max < 1:
            raise ParameterDomainError("k_max must be >= 1")
    theta_max = p.get("theta_max")
    if theta_max is not None:
        theta_max = float(theta_max)
        if theta_max <= 0:
            raise ParameterDomainError("theta_max must be positive")
    return ParametricTrajectory(kind, eta, theta0, direction, tau, k_max, theta_max)


def speed_and_curvature(traj: ParametricTrajectory, theta, ring=None):
    """Return ``(speed, curvature)`` at parameter ``theta`` (ring for circles/lines)."""
    return traj.speed(theta, ring), traj.curvature(theta, ring)


def spiral_arclength(eta: float, theta) -> np.ndarray:
    """Closed-form arc length of the spiral from 0 to ``theta``."""
    u = TWO_PI * np.asarray(theta, dtype=float)
    return eta / (2.0 * TWO_PI) * (u * np.sqrt(1.0 + u * u) + np.arcsinh(u))


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    """Weighted nodes discretising arc length on a windowed trajectory.

    ``theta``/``ring`` give the curve parameter of every node; ``extras``
    carries optional per-node arrays (lattice offsets for translated sets).
    """

    points: np.ndarray
    weights: np.ndarray
    window_radius: float
    source: dict
    theta: np.ndarray
    ring: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    def is_empty(self) -> bool:
        return len(self.weights) == 0


def _empty_quadrature(R, source) -> QuadratureSet:
    return QuadratureSet(np.zeros((0, 2)), np.zeros(0), R, source, np.zeros(0), np.zeros(0, dtype=np.int64))


def _clip_intervals(margin, piece, lo, hi, samples=256, iters=60):
    """Sub-intervals of ``[lo_i, hi_i]`` on which ``margin(piece, t) > 0``.

    Sign changes are located on a uniform sample grid and refined by
    vectorised bisection.  Returns arrays ``(piece, a, b)``.
    """
    piece = np.asarray(piece)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if piece.size == 0:
        return piece, lo, hi
    s = np.linspace(0.0, 1.0, samples)
    T = lo[:, None] + (hi - lo)[:, None] * s[None, :]
    P = np.broadcast_to(piece[:, None], T.shape)
    inside = margin(P, T) > 0
    flips = inside[:, 1:] != inside[:, :-1]
    ri, ci = np.nonzero(flips)
    a = T[ri, ci].copy()
    b = T[ri, ci + 1].copy()
    state_a = inside[ri, ci]
    pr = piece[ri]
    for _ in range(iters):
        m = 0.5 * (a + b)
        im = margin(pr, m) > 0
        same = im == state_a
        a = np.where(same, m, a)
        b = np.where(same, b, m)
    roots = 0.5 * (a + b)
    # assemble intervals row by row
    out_p, out_a, out_b = [], [], []
    order = np.lexsort((ci, ri))
    ri, roots = ri[order], roots[order]
    split = np.searchsorted(ri, np.arange(len(piece) + 1))
    for i in range(len(piece)):
        r = roots[split[i] : split[i + 1]]
        bounds = []
        if inside[i, 0]:
            bounds.append(lo[i])
        bounds.extend(r.tolist())
        if inside[i, -1]:
            bounds.append(hi[i])
        for j in range(0, len(bounds) - 1, 2):
            if bounds[j + 1] > bounds[j]:
                out_p.append(piece[i])
                out_a.append(bounds[j])
                out_b.append(bounds[j + 1])
    return np.asarray(out_p, dtype=piece.dtype), np.asarray(out_a, float), np.asarray(out_b, float)


def _panel_nodes(piece, a, b, max_speed, max_step):
    """Composite Gauss-Legendre nodes; every panel spans <= max_step of arc."""
    npan = np.maximum(1, np.ceil(max_speed * (b - a) / max_step - 1e-12)).astype(np.int64)
    pid = np.repeat(np.arange(len(a)), npan)
    start = np.repeat(np.cumsum(npan) - npan, npan)
    j = np.arange(pid.size) - start
    width = (b - a)[pid] / npan[pid]
    left = a[pid] + j * width
    half = 0.5 * width
    mid = left + half
    t = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    pc = np.repeat(piece[pid], GL_ORDER)
    return pc, t, w


def _window_margin(points, center, R):
    d = np.abs(points - np.asarray(center, float))
    return R - np.maximum(d[..., 0], d[..., 1])


def _spiral_pieces(traj, center, R, theta_range):
    if theta_range is not None:
        lo, hi = float(theta_range[0]), float(theta_range[1])
    elif traj.theta_max is not None and not math.isfinite(R):
        lo, hi = 0.0, traj.theta_max
    elif math.isfinite(R):
        reach = math.sqrt(2.0) * R + math.hypot(*center)
        hi = reach / traj.eta + 1.0
        if traj.theta_max is not None:
            hi = min(hi, traj.theta_max)
        lo = 0.0
    else:
        raise ParameterDomainError("an infinite window needs theta_range or theta_max")
    if lo < 0 or hi <= lo:
        raise ParameterDomainError("invalid spiral parameter range", theta_range=(lo, hi))
    edges = np.unique(np.concatenate([[lo, hi], np.arange(math.ceil(lo), math.floor(hi) + 1)]))
    edges = edges[(edges >= lo) & (edges <= hi)]
    return np.zeros(len(edges) - 1, dtype=np.int64), edges[:-1], edges[1:]


def _build_intervals(traj, R, center, theta_range):
    """Parameter intervals of the trajectory inside the open square window."""
    kind = traj.kind
    if kind is Kind.SPIRAL:
        piece, lo, hi = _spiral_pieces(traj, center, R, theta_range)
        if math.isfinite(R):
            piece, lo, hi = _clip_intervals(
                lambda p, t: _window_margin(traj.position(t), center, R), piece, lo, hi
            )
        return piece, lo, hi
    if kind is Kind.CIRCLES:
        if traj.k_max is not None:
            kmax = traj.k_max
        elif math.isfinite(R):
            kmax = int(math.floor((math.sqrt(2.0) * R + math.hypot(*center)) / traj.eta)) + 1
        else:
            raise ParameterDomainError("an infinite window needs k_max for circles")
        rings = np.arange(1, kmax + 1, dtype=np.int64)
        lo = np.zeros(len(rings))
        hi = np.ones(len(rings))
        if theta_range is not None:
            glo, ghi = theta_range
            lo = np.clip(glo - (rings - 1), 0.0, 1.0)
            hi = np.clip(ghi - (rings - 1), 0.0, 1.0)
            keep = hi > lo
            rings, lo, hi = rings[keep], lo[keep], hi[keep]
        if math.isfinite(R):
            rings, lo, hi = _clip_intervals(
                lambda p, t: _window_margin(traj.position(t, p), center, R), rings, lo, hi
            )
        return rings, lo, hi
    # parallel lines: exact segment clipping
    d = np.asarray(traj.direction, float)
    dp = traj.d_perp
    if traj.k_max is not None:
        kmax = traj.k_max
    elif math.isfinite(R):
        kmax = int(math.ceil((math.sqrt(2.0) * R + math.hypot(*center)) / traj.tau)) + 1
    else:
        raise ParameterDomainError("an infinite window needs k_max for lines")
    ks = np.arange(-kmax, kmax + 1, dtype=np.int64)
    lo = np.full(len(ks), -np.inf)
    hi = np.full(len(ks), np.inf)
    if theta_range is not None:
        lo[:] = theta_range[0]
        hi[:] = theta_range[1]
    if math.isfinite(R):
        for i in range(2):
            off = traj.tau * ks * dp[i] - center[i]
            if abs(d[i]) < 1e-300:
                bad = np.abs(off) >= R
                hi[bad] = -np.inf
                continue
            t1 = (-R - off) / d[i]
            t2 = (R - off) / d[i]
            lo = np.maximum(lo, np.minimum(t1, t2))
            hi = np.minimum(hi, np.maximum(t1, t2))
    if not (np.all(np.isfinite(lo[hi > lo])) and np.all(np.isfinite(hi[hi > lo]))):
        raise ParameterDomainError("an infinite window needs theta_range for lines")
    keep = hi > lo
    return ks[keep], lo[keep], hi[keep]


def _max_speed(traj, piece, a, b):
    if traj.kind is Kind.SPIRAL:
        return traj.eta * np.hypot(1.0, TWO_PI * np.maximum(np.abs(a), np.abs(b)))
    if traj.kind is Kind.CIRCLES:
        return TWO_PI * traj.eta * piece
    return np.ones_like(a)


def _nodes_from_intervals(traj, piece, a, b, max_step, R, source):
    if len(a) == 0:
        return _empty_quadrature(R, source)
    pc, t, w = _panel_nodes(piece, a, b, _max_speed(traj, piece, a, b), max_step)
    ring = None if traj.kind is Kind.SPIRAL else pc
    pts = traj.position(t, ring)
    wts = w * traj.speed(t, ring)
    order = np.lexsort((t, pc))
    return QuadratureSet(pts[order], wts[order], R, source, t[order], pc[order].astype(np.int64))


def arc_quadrature(
    traj: ParametricTrajectory,
    window_radius: float,
    max_step: float | None = None,
    theta_range=None,
    center=(0.0, 0.0),
) -> QuadratureSet:
    """Composite order-8 Gauss-Legendre quadrature of arc length in a window.

    The window is the open square ``center + (-R, R)^2``; ``R = inf`` means
    no clipping, in which case ``theta_range`` (or a truncation stored on
    the trajectory) bounds the parameter domain.  Each panel spans at most
    ``max_step`` of arc (default ``spacing/16``).  Nodes are sorted by
    ``(ring, theta)``.
    """
    R = float(window_radius)
    if not R > 0:
        raise ParameterDomainError("window radius must be positive", window_radius=R)
    if max_step is None:
        max_step = traj.spacing / 16.0
    if not max_step > 0:
        raise ParameterDomainError("max_step must be positive", max_step=max_step)
    center = (float(center[0]), float(center[1]))
    piece, a, b = _build_intervals(traj, R, center, theta_range)
    source = {
        "trajectory": traj.describe(),
        "center": list(center),
        "theta_range": None if theta_range is None else [float(v) for v in theta_range],
        "max_step": float(max_step),
    }
    return _nodes_from_intervals(traj, piece, a, b, float(max_step), R, source)


def ball_measure(q: QuadratureSet, x, r: float) -> float:
    """Quadrature estimate of the arc measure of ``B_r(x)``."""
    d = np.hypot(*(q.points - np.asarray(x, float)).T)
    return float(np.sum(q.weights[d < r]))


def write_quadrature_csv(q: QuadratureSet, path) -> None:
    """``theta,x,y,weight`` with 17 significant digits (circles use (k-1)+t)."""
    theta = q.theta
    if q.source.get("trajectory", {}).get("kind") == Kind.CIRCLES.value:
        theta = q.theta + (q.ring - 1)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("theta,x,y,weight\n")
        for t, (x, y), w in zip(theta, q.points, q.weights):
            fh.write(f"{t:.17g},{x:.17g},{y:.17g},{w:.17g}\n")


def read_quadrature_csv(path, window_radius=math.inf) -> QuadratureSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != ["theta", "x", "y", "weight"]:
        raise ParameterDomainError("unexpected quadrature CSV header")
    arr = np.array([[float(r[k]) for k in ("theta", "x", "y", "weight")] for r in rows]).reshape(-1, 4)
    return QuadratureSet(
        arr[:, 1:3].copy(), arr[:, 3].copy(), window_radius, {"file": str(path)},
        arr[:, 0].copy(), np.zeros(len(arr), dtype=np.int64),
    )


# --------------------------------------------------------------------------
# distance / gap
# --------------------------------------------------------------------------


class GapEstimate(NamedTuple):
    gap: float
    error_bar: float
    location: tuple


def _lipschitz_max(dist, origin, h, m, coarse_block, slack=1e-7):
    """Max of a 1-Lipschitz function over the mesh ``origin + h*(i, j)``.

    Branch and bound over dyadic blocks of mesh indices.  Blocks are
    evaluated at one representative mesh point; a block survives only if
    its value plus the Lipschitz radius can beat the best probe so far.  The
    result equals the max over the full ``m x m`` mesh.
    """
    b = 1
    while b * 2 <= coarse_block:
        b *= 2
    starts = np.arange(0, m, b)
    I0, J0 = np.meshgrid(starts, starts, indexing="ij")
    blocks = np.stack([I0.ravel(), J0.ravel()], axis=1)
    best, best_pt = -np.inf, None
    while True:
        ends = np.minimum(blocks + b, m)
        rep = (blocks + ends - 1) // 2
        rad = h * np.hypot(*np.maximum(rep - blocks, ends - 1 - rep).T)
        pts = origin + h * rep
        vals = dist(pts)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_pt = float(vals[i]), tuple(pts[i])
        if b == 1:
            return best, best_pt
        keep = vals + rad + slack >= best
        blocks = blocks[keep]
        b //= 2
        kids = np.concatenate(
            [blocks, blocks + [b, 0], blocks + [0, b], blocks + [b, b]], axis=0
        )
        blocks = kids[(kids[:, 0] < m) & (kids[:, 1] < m)]


def _curve_distance(traj, q: QuadratureSet, include_origin=False, chunk=1 << 18):
    """Distance-to-curve evaluator: nearest node plus one Newton step."""
    pts = q.points
    theta = q.theta
    ring = q.ring
    if include_origin:
        pts = np.vstack([pts, [[0.0, 0.0]]])
    tree = cKDTree(pts)
    norigin = len(q.points)
    ring_arg = None if traj.kind is Kind.SPIRAL else ring

    def dist(P):
        out = np.empty(len(P))
        for s in range(0, len(P), chunk):
            p = P[s : s + chunk]
            d0, idx = tree.query(p)
            res = d0.copy()
            on_curve = idx < norigin
            if np.any(on_curve):
                ii = idx[on_curve]
                pp = p[on_curve]
                th = theta[ii]
                rg = None if ring_arg is None else ring_arg[ii]
                g = traj.position(th, rg) - pp
                g1 = traj.derivative(th, rg)
                g2 = traj.second_derivative(th, rg)
                num = np.sum(g * g1, axis=1)
                den = np.sum(g1 * g1, axis=1) + np.sum(g * g2, axis=1)
                step = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
                th_new = th - step
                if traj.kind is not Kind.LINES:
                    th_new = np.maximum(th_new, 0.0)
                if traj.kind is Kind.SPIRAL and traj.theta_max is not None:
                    th_new = np.minimum(th_new, traj.theta_max)
                dn = np.hypot(*(traj.position(th_new, rg) - pp).T)
                res[on_curve] = np.minimum(d0[on_curve], dn)
            out[s : s + chunk] = res
        return out

    return dist


def gap_estimate(
    traj: ParametricTrajectory, window_radius: float, probe_mesh: float | None = None
) -> GapEstimate:
    """Largest distance from a probe mesh on ``[-R/2, R/2]^2`` to the curve.

    The probe mesh spacing defaults to ``spacing/100`` and is returned as the
    error bar.  For circles the degenerate ring ``k = 0`` (the origin) is part
    of the set, matching the convention that the ring index runs over the
    natural numbers including zero.
    """
    R = float(window_radius)
    s = traj.spacing
    h = s / 100.0 if probe_mesh is None else float(probe_mesh)
    if not (h > 0 and h <= s / 8.0 + 1e-15):
        raise ParameterDomainError("probe mesh must satisfy 0 < h <= spacing/8", probe_mesh=h)
    if not math.isfinite(R) or R / 2.0 < 1.5 * s:
        raise InsufficientWindowError(
            "window too small: fewer than 3 trajectory crossings in the probe region",
            window_radius=R,
            spacing=s,
        )
    q = arc_quadrature(traj, R, max_step=s / 16.0)
    dist = _curve_distance(traj, q, include_origin=traj.kind is Kind.CIRCLES)
    m = int(math.floor(R / h + 1e-9)) + 1
    origin = np.array([-R / 2.0, -R / 2.0])
    best, loc = _lipschitz_max(dist, origin, h, m, coarse_block=max(1, int(s / (4.0 * h))))
    return GapEstimate(best, h, loc)


# --------------------------------------------------------------------------
# separated subsets
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SeparatedSet:
    points: np.ndarray
    separation: float
    gap: float
    window_radius: float
    indices: np.ndarray


def _greedy_separated(P: np.ndarray, r: float) -> np.ndarray:
    cells: dict = {}
    kept = []
    r2 = r * r
    last = None
    for i in range(len(P)):
        x, y = P[i]
        if last is not None:
            dx, dy = x - last[0], y - last[1]
            if dx * dx + dy * dy < r2:
                continue
        cx, cy = int(math.floor(x / r)), int(math.floor(y / r))
        ok = True
        for ax in (cx - 1, cx, cx + 1):
            for ay in (cy - 1, cy, cy + 1):
                for j in cells.get((ax, ay), ()):
                    qx, qy = P[j]
                    if (qx - x) ** 2 + (qy - y) ** 2 < r2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            cells.setdefault((cx, cy), []).append(i)
            last = (x, y)
    return np.asarray(kept, dtype=np.int64)


def min_pairwise_distance(P: np.ndarray) -> float:
    if len(P) < 2:
        return math.inf
    d, _ = cKDTree(P).query(P, k=2)
    return float(np.min(d[:, 1]))


def point_set_gap(P: np.ndarray, window_radius: float, probe_mesh: float) -> float:
    """Covering radius of a finite set over ``[-R/2, R/2]^2`` (probe mesh)."""
    R = float(window_radius)
    if not math.isfinite(R):
        lo, hi = P.min(axis=0), P.max(axis=0)
        half = 0.5 * float(np.max(hi - lo))
        origin = 0.5 * (lo + hi) - half
        side = 2.0 * half
    else:
        origin = np.array([-R / 2.0, -R / 2.0])
        side = R
    tree = cKDTree(P)
    m = int(math.floor(side / probe_mesh + 1e-9)) + 1
    best, _ = _lipschitz_max(lambda X: tree.query(X)[0], origin, probe_mesh, m, coarse_block=16, slack=0.0)
    return best


def extract_separated(nodes: QuadratureSet, r: float, probe_mesh: float | None = None) -> SeparatedSet:
    """Greedy maximal ``r``-separated subset, scanning nodes in parameter order."""
    if not r > 0:
        raise ParameterDomainError("separation radius must be positive", r=r)
    if len(nodes) == 0:
        raise EmptyWindowError("no nodes to extract from")
    order = np.lexsort((nodes.theta, nodes.ring))
    P = nodes.points[order]
    kept = order[_greedy_separated(P, float(r))]
    pts = nodes.points[kept]
    h = r / 8.0 if probe_mesh is None else float(probe_mesh)
    gap = point_set_gap(pts, nodes.window_radius, h)
    return SeparatedSet(pts, min_pairwise_distance(pts), gap, nodes.window_radius, kept)


# --------------------------------------------------------------------------
# weak limits: translated windows
# --------------------------------------------------------------------------


def translation_vector(traj: ParametricTrajectory, n: int) -> np.ndarray:
    if traj.kind is Kind.SPIRAL:
        return np.array([traj.eta * (n + traj.theta0), 0.0])
    return np.array([traj.eta * n, 0.0])


def _local_crossings(traj, n, R):
    """Crossing pieces of (Gamma - y) near the origin, in local coordinates.

    For crossing ``k`` the spiral is written as ``theta = K + phi`` with
    ``K = k + theta0`` and ``|phi| < 1/4``; circles use ring ``k`` and angle
    fraction ``phi``.  All offsets are formed without subtracting large
    numbers, so translates with ``n ~ 1e12`` stay accurate.
    """
    eta = traj.eta
    spiral = traj.kind is Kind.SPIRAL
    th0 = traj.theta0 if spiral else 0.0
    span = int(math.ceil(R / eta)) + 2
    ks = np.arange(max(n - span, 1 if not spiral else 0), n + span + 1, dtype=np.int64)
    if traj.kind is Kind.CIRCLES and traj.k_max is not None:
        ks = ks[ks <= traj.k_max]
    K = ks + th0

    def delta(kk, phi):
        Kk = kk + th0
        out = -2.0 * eta * Kk * np.sin(math.pi * phi) ** 2
        if spiral:
            out = out + eta * phi * np.cos(TWO_PI * phi)
        return out

    def u2(kk, phi):
        r = eta * (kk + th0 + (phi if spiral else 0.0))
        return r * np.sin(TWO_PI * phi)

    def u1(kk, phi):
        return eta * (kk - n) + delta(kk, phi)

    # parameter half-range where |u2| < R, by fixed-point iteration
    def bound(sign):
        phi = np.zeros(len(K))
        for _ in range(50):
            rr = eta * (K + (phi if spiral else 0.0))
            phi = sign * np.arcsin(np.minimum(1.0, R / rr)) / TWO_PI
        return phi

    lo = np.maximum(bound(-1.0) * 1.001, -0.25)
    hi = np.minimum(bound(1.0) * 1.001, 0.25)
    if spiral:
        lo = np.maximum(lo, -K)
    margin = lambda kk, phi: R - np.maximum(np.abs(u1(kk, phi)), np.abs(u2(kk, phi)))
    piece, a, b = _clip_intervals(margin, ks, lo, hi, samples=65)
    return piece, a, b, delta, u1, u2


def _translated_global(traj, n, R, max_step):
    y = translation_vector(traj, n)
    q = arc_quadrature(traj, R, max_step=max_step, center=tuple(y))
    return q, y


def _use_local(traj, n, R):
    if traj.kind is Kind.LINES:
        return False
    y1 = translation_vector(traj, n)[0]
    return y1 - R > 2.0 * R + traj.eta


def translated_quadrature(
    traj: ParametricTrajectory, n: int, window_radius: float, max_step: float | None = None
) -> QuadratureSet:
    """Quadrature of ``(Gamma - y) ∩ (-R, R)^2`` with ``y`` the n-th translate.

    ``y = (eta*(n+theta0), 0)`` for spirals and ``(eta*n, 0)`` otherwise.  The
    returned points are already translated.  ``extras`` holds
    ``lattice_index``/``lattice_offset`` (nearest vertical lattice line and
    signed distance to it, computed without cancellation) and
    ``crossing_deviation`` (``x1 - eta*(k + theta0)``; NaN where undefined).
    """
    R = float(window_radius)
    if not (R > 0 and math.isfinite(R)):
        raise ParameterDomainError("window radius must be positive and finite")
    n = int(n)
    if n < 0:
        raise ParameterDomainError("translate index must be >= 0")
    eta = traj.eta
    step = traj.spacing / 16.0 if max_step is None else float(max_step)
    y = translation_vector(traj, n)
    source = {"trajectory": traj.describe(), "translate": [float(y[0]), float(y[1])], "n": n, "max_step": step}
    if _use_local(traj, n, R):
        piece, a, b, delta, u1, u2 = _local_crossings(traj, n, R)
        if len(a) == 0:
            raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
        spiral = traj.kind is Kind.SPIRAL
        th0 = traj.theta0 if spiral else 0.0
        if spiral:
            mspeed = eta * np.hypot(1.0, TWO_PI * (piece + th0 + np.maximum(np.abs(a), np.abs(b))))
        else:
            mspeed = TWO_PI * eta * piece.astype(float)
        pc, phi, w = _panel_nodes(piece, a, b, mspeed, step)
        if spiral:
            sp = eta * np.hypot(1.0, TWO_PI * (pc + th0 + phi))
        else:
            sp = TWO_PI * eta * pc.astype(float)
        dl = delta(pc, phi)
        pts = np.stack([u1(pc, phi), u2(pc, phi)], axis=1)
        li = (pc - n) + np.round(dl / eta).astype(np.int64)
        off = dl - eta * np.round(dl / eta)
        extras = {"lattice_index": li, "lattice_offset": off, "crossing_deviation": dl}
        source["local"] = True
        return QuadratureSet(pts, w * sp, R, source, phi, pc.astype(np.int64), extras)
    q, y = _translated_global(traj, n, R, step)
    if len(q) == 0:
        raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
    pts = q.points - y
    li = np.round(pts[:, 0] / eta).astype(np.int64)
    off = pts[:, 0] - eta * li
    dev = _global_crossing_deviation(traj, q)
    source["local"] = False
    return QuadratureSet(
        pts, q.weights, R, source, q.theta, q.ring,
        {"lattice_index": li, "lattice_offset": off, "crossing_deviation": dev},
    )


def _global_crossing_index(traj, theta, ring, points):
    if traj.kind is Kind.SPIRAL:
        k = np.round(theta - traj.theta0)
        valid = (np.abs(theta - traj.theta0 - k) < 0.25) & (k >= 1)
        return k.astype(np.int64), valid
    if traj.kind is Kind.CIRCLES:
        return ring.astype(np.int64), points[:, 0] > 0
    return ring.astype(np.int64), np.zeros(len(ring), dtype=bool)


def _global_crossing_deviation(traj, q):
    k, valid = _global_crossing_index(traj, q.theta, q.ring, q.points)
    th0 = traj.theta0 if traj.kind is Kind.SPIRAL else 0.0
    dev = q.points[:, 0] - traj.eta * (k + th0)
    return np.where(valid, dev, np.nan)


def crossing_deviations(traj: ParametricTrajectory, n: int, window_radius: float, samples: int = 65):
    """Per-crossing max ``|x1 - eta*(k+theta0)|`` over the translated window.

    Each clipped crossing is sampled at ``samples`` points including both
    endpoints.  Returns ``(k, deviation)`` arrays sorted by ``k``.
    """
    R = float(window_radius)
    n = int(n)
    s = np.linspace(0.0, 1.0, samples)
    if _use_local(traj, n, R):
        piece, a, b, delta, _, _ = _local_crossings(traj, n, R)
        if len(a) == 0:
            raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
        phi = a[:, None] + (b - a)[:, None] * s[None, :]
        dev = np.max(np.abs(delta(piece[:, None], phi)), axis=1)
        ks = piece
    else:
        if traj.kind is Kind.LINES:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        y = translation_vector(traj, n)
        piece, a, b = _build_intervals(traj, R, tuple(y), None)
        if len(a) == 0:
            raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
        t = (a[:, None] + (b - a)[:, None] * s[None, :]).ravel()
        rg = np.repeat(piece, samples)
        ring = None if traj.kind is Kind.SPIRAL else rg
        pts = traj.position(t, ring)
        k, valid = _global_crossing_index(traj, t, rg, pts)
        th0 = traj.theta0 if traj.kind is Kind.SPIRAL else 0.0
        dv = np.abs(pts[:, 0] - traj.eta * (k + th0))
        k, dv = k[valid], dv[valid]
        ks = np.unique(k)
        dev = np.array([dv[k == kk].max() for kk in ks])
    order = np.argsort(ks, kind="stable")
    ks, dev = ks[order], dev[order]
    # one crossing may be split into several clipped intervals
    uk, inv = np.unique(ks, return_inverse=True)
    out = np.zeros(len(uk))
    np.maximum.at(out, inv, dev)
    return uk, out


def weak_limit_deviation(traj: ParametricTrajectory, n: int, window_radius: float, samples: int = 65) -> float:
    """Max distance of ``(Gamma - y) ∩ (-R, R)^2`` to the lattice ``eta*Z x R``."""
    R = float(window_radius)
    n = int(n)
    eta = traj.eta
    s = np.linspace(0.0, 1.0, samples)
    if _use_local(traj, n, R):
        piece, a, b, delta, _, _ = _local_crossings(traj, n, R)
        if len(a) == 0:
            raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
        dl = delta(piece[:, None], a[:, None] + (b - a)[:, None] * s[None, :])
        return float(np.max(np.abs(dl - eta * np.round(dl / eta))))
    y = translation_vector(traj, n)
    piece, a, b = _build_intervals(traj, R, tuple(y), None)
    if len(a) == 0:
        raise EmptyWindowError("no trajectory piece inside the translated window", n=n)
    t = (a[:, None] + (b - a)[:, None] * s[None, :]).ravel()
    ring = None if traj.kind is Kind.SPIRAL else np.repeat(piece, samples)
    u1 = traj.position(t, ring)[:, 0] - y[0]
    return float(np.max(np.abs(u1 - eta * np.round(u1 / eta))))


def rate_translate_index(R: float, eps_prime: float, constant: float = 68.0) -> int:
    """Translate index ``ceil(C*R^2/eps')`` making the deviation < eps'."""
    return int(math.ceil(constant * R * R / eps_prime - 1e-9))


# --------------------------------------------------------------------------
# spiraling classification
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpiralingReport:
    alpha: float
    beta: float
    rho0: float
    eta_fit: float
    velocity: np.ndarray
    tau: float
    curvature_tail: float
    monotone_from: int | None
    k_values: np.ndarray
    residuals: dict


def _extrapolate(k, v, last=8):
    """Limit of ``v_k`` from a least-squares fit ``a + b/k + c/k^2`` on the tail.

    Returns ``(limit, residual)``; the residual is the max misfit on the tail.
    """
    k = np.asarray(k, float)[-last:]
    v = np.asarray(v, float)[-last:]
    deg = min(2, len(k) - 1)
    A = np.vander(1.0 / k, deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(coef[0]), float(np.max(np.abs(A @ coef - v))) if len(k) else 0.0


def _polar_piece(traj, k, psi):
    """Curve parameter/ring for polar angle ``k + psi`` (cone coordinates)."""
    if traj.kind is Kind.SPIRAL:
        return k + psi + traj.theta0, None
    return np.asarray(psi, float) % 1.0 + 0.0 * k, k


def classify_spiraling(
    traj: ParametricTrajectory, beta: float, alpha: float, k_range: Iterable[int]
) -> SpiralingReport:
    """Numerically estimate the spiraling parameters on the cone pieces ``k``.

    Polar angles are measured in turns; piece ``k`` is the part of the curve
    at polar angle ``k + psi`` with ``|psi - beta| <= alpha``.  Limits are
    taken by extrapolation on the last 8 tested ``k``.
    """
    if traj.kind is Kind.LINES:
        raise ParameterDomainError("parallel lines have no escape cone")
    if not (0.0 < alpha < 0.25):
        raise ParameterDomainError("alpha must lie in (0, 1/4)", alpha=alpha)
    ks = np.asarray(list(k_range), dtype=np.int64)
    if len(ks) < 3:
        raise ParameterDomainError("k_range must contain at least 3 indices")
    missing = []
    for k in ks:
        if traj.kind is Kind.SPIRAL:
            lo = k + beta - alpha + traj.theta0
            hi = k + beta + alpha + traj.theta0
            if lo < 0 or (traj.theta_max is not None and hi > traj.theta_max):
                missing.append(int(k))
        elif k < 1 or (traj.k_max is not None and k > traj.k_max):
            missing.append(int(k))
    if missing:
        raise ClassificationWindowError("trajectory pieces missing in the cone", missing=missing)

    kf = ks.astype(float)
    th, rg = _polar_piece(traj, kf, np.full(len(ks), beta))
    pos = traj.position(th, rg)
    eta_k = np.hypot(pos[:, 0], pos[:, 1])
    tang = traj.derivative(th, rg)
    tang = tang / np.hypot(tang[:, 0], tang[:, 1])[:, None]

    eta_fit, r_eta = _extrapolate(kf[1:], np.diff(eta_k))
    rho0, r_rho = _extrapolate(kf, eta_k - eta_fit * kf)
    d1, r_d1 = _extrapolate(kf, tang[:, 0])
    d2, r_d2 = _extrapolate(kf, tang[:, 1])
    vel = np.array([d1, d2])
    vel /= np.hypot(*vel)
    ell = np.array([math.cos(TWO_PI * beta), math.sin(TWO_PI * beta)])
    tau = eta_fit * math.sqrt(max(0.0, 1.0 - float(ell @ vel) ** 2))

    psi = np.linspace(beta - alpha, beta + alpha, 33)
    KK, PP = np.meshgrid(kf, psi, indexing="ij")
    th2, rg2 = _polar_piece(traj, KK, PP)
    kap = traj.curvature(th2, rg2)
    pos2 = traj.position(th2, rg2)
    rho = np.hypot(pos2[..., 0], pos2[..., 1])
    tail = kap[-min(8, len(ks)) :].max()
    inc = np.all(np.diff(rho, axis=0) > 0, axis=1)  # rho(psi+k) < rho(psi+k+1)
    bad = np.nonzero(~inc)[0]
    if len(bad) == 0:
        monotone_from = int(ks[0])
    elif bad[-1] == len(inc) - 1:
        monotone_from = None
    else:
        monotone_from = int(ks[bad[-1] + 1])
    return SpiralingReport(
        alpha=float(alpha),
        beta=float(beta),
        rho0=rho0,
        eta_fit=eta_fit,
        velocity=vel,
        tau=tau,
        curvature_tail=float(tail),
        monotone_from=monotone_from,
        k_values=ks,
        residuals={"eta": r_eta, "rho0": r_rho, "velocity": max(r_d1, r_d2), "curvature_by_k": kap.max(axis=1)},
    )
