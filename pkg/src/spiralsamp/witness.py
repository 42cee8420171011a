"""Adversarial witnesses: unit-norm functions whose spectra nearly vanish on a
spiral (or on concentric circles) sampled below the Nyquist rate.

Construction, in the transform convention of :mod:`spiralsamp.fourier`:

* ``g0(x) = 2 beta sin(pi x1/eta) phi(beta x)`` vanishes on the lattice lines
  ``eta Z x R``; its spectrum sits in two small diamonds.
* ``g = g0(. - y)`` where ``y`` is a translate for which the curve, seen
  from ``y``, hugs those lines inside a large window.
* ``f = g_hat o R(-pi/4)`` lives in ``[-1/2, 1/2]^2``.  Its transform is
  ``f_hat(xi) = g(-R(-pi/4) xi)``, so the samples of ``f_hat`` on ``A^eta``
  are the values of ``g`` on ``A^eta`` rotated by ``3 pi/4``.

The amplitude ``2 beta`` (rather than ``beta``) makes ``||f||_2 = 1`` with
``||phi||_2 = sqrt(2)/2``.  Sampled norms and the variation are computed from
closed forms: once ``|y|`` is large the phase of ``f`` cannot be resolved by
any desk-sized grid.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    ConstantViolationError,
    EnlargeGridError,
    NormalizationError,
    ParameterDomainError,
    ResolutionError,
    TruncationError,
)
from .fourier import Bump, GridFunction, _profile, _profile_spline, bessel_ensemble, default_bump
from .trajectory import (
    Kind,
    ParametricTrajectory,
    QuadratureSet,
    make_trajectory,
    rate_translate_index,
    translated_quadrature,
    translation_vector,
    weak_limit_deviation,
)

__all__ = [
    "WitnessSpec",
    "WitnessReport",
    "TranslateChoice",
    "AliasingSine",
    "eta_from_epsilon",
    "epsilon_from_eta",
    "beta_amplitude",
    "class_parameters",
    "class_lambda",
    "aligned_trajectory",
    "choose_translate",
    "build_witness",
    "witness_quadrature",
    "witness_sampled_norm",
    "witness_variation",
    "witness_cell_averages",
    "witness_checks",
    "aliasing_sine",
]

SQRT_HALF = math.sqrt(0.5)
RATE_CONSTANT = 68.0
C_GAMMA = 2.0 * RATE_CONSTANT
# f_hat on A^eta equals g on A^eta rotated by 3pi/4, i.e. offset 5/8 in the
# (theta - theta0) parametrisation
ALIGNED_THETA0 = 5.0 / 8.0
# the rate lemma is stated for deviations below 1/2 and windows R >= 1
EPS_PRIME_CAP = 0.499
# keeps a witness quadrature under ~1 GB
MAX_NODES = 2.0e7


def eta_from_epsilon(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise ParameterDomainError("undersampling factor must lie in (0, 1)", epsilon=epsilon)
    return (1.0 + epsilon) * SQRT_HALF


def epsilon_from_eta(eta: float) -> float:
    return eta / SQRT_HALF - 1.0


def beta_amplitude(eta: float) -> float:
    if not eta > SQRT_HALF:
        raise ParameterDomainError("witness needs eta > sqrt(2)/2", eta=eta)
    return min(0.5 / eta, SQRT_HALF - 0.5 / eta)


def class_parameters(zeta: float, lam: float, c1: float, beta: float) -> tuple[float, float]:
    """``(eps, R)`` of the class definition that make the sampled level ``zeta``."""
    if not zeta > 0:
        raise ParameterDomainError("zeta must be positive", zeta=zeta)
    a = 48.0 * math.pi * lam * c1 * c1 / (zeta * zeta)
    return 1.0 / a, math.log(a) ** 2 / beta


def aligned_trajectory(eta: float, kind="spiral") -> ParametricTrajectory:
    """The curve on which ``g`` must be small when ``f_hat`` is sampled on ``kind``."""
    k = Kind.parse(kind)
    if k is Kind.SPIRAL:
        return make_trajectory(k, eta=eta, theta0=ALIGNED_THETA0)
    if k is Kind.CIRCLES:
        return make_trajectory(k, eta=eta)
    raise ParameterDomainError("witnesses are built for spirals and circles only", kind=k.value)


@functools.lru_cache(maxsize=32)
def class_lambda(eta: float, kind="spiral", count: int = 100, seed: int = 0, window: float = 4.0) -> float:
    """Fitted ``lambda`` with ``eta*lambda >= ||F||^2_{L2(arc)} / ||F||_2^2``.

    The sup runs over a random ensemble of spectra supported in the disc of
    radius 2, sampled on the aligned curve.
    """
    traj = aligned_trajectory(eta, kind)
    ratios = bessel_ensemble(traj, 2.0, [window], count=count, seed=seed)[float(window)]
    return float(np.max(ratios) ** 2) / eta


class TranslateChoice(NamedTuple):
    y: np.ndarray
    n: int
    deviation: float
    eps_prime: float
    window: float


def choose_translate(traj: ParametricTrajectory, eps_class: float, r_class: float) -> TranslateChoice:
    """Translate putting ``(traj - y) ∩ (-R, R)^2`` within ``eta*eps_class`` of ``eta Z x R``.

    ``n = ceil(68 R^2 / (eta eps'))`` with ``eps' = eta*eps_class`` (capped
    below 1/2) and ``R = max(r_class, 1)``; the inclusion is then checked on
    the actual curve.
    """
    if not (eps_class > 0 and r_class > 0):
        raise ParameterDomainError("class parameters must be positive", eps_class=eps_class, r_class=r_class)
    eta = traj.eta
    R = max(float(r_class), 1.0)
    budget = eta * eps_class
    if traj.kind is Kind.LINES:
        dev = weak_limit_deviation(traj, 0, R)
        if not dev < budget:
            raise ConstantViolationError("lines are not on the lattice", deviation=dev, budget=budget)
        return TranslateChoice(np.zeros(2), 0, dev, budget, R)
    if not eta > SQRT_HALF:
        raise ParameterDomainError("translate rate needs eta > sqrt(2)/2", eta=eta)
    eps_prime = min(budget, EPS_PRIME_CAP)
    n = rate_translate_index(R, eta * eps_prime, RATE_CONSTANT)
    dev = weak_limit_deviation(traj, n, R)
    if not dev < eps_prime:
        raise ConstantViolationError(
            "translated curve leaves the lattice neighbourhood", deviation=dev, budget=eps_prime, n=n
        )
    return TranslateChoice(translation_vector(traj, n), n, dev, eps_prime, R)


@dataclass(frozen=True)
class WitnessSpec:
    eta: float
    epsilon: float
    zeta: float
    beta_amp: float
    lam: float
    c1: float
    eps_class: float
    r_class: float
    y: tuple
    n_translate: int
    kind: str
    theta0: float
    eps_prime: float
    window: float
    deviation: float
    c_gamma: float = C_GAMMA

    @property
    def y_norm(self) -> float:
        return math.hypot(*self.y)

    def to_dict(self) -> dict:
        return asdict(self) | {"y": list(self.y)}


def _witness_grid_needed(beta: float) -> int:
    # at least 16 cells across the half-width of each spectral diamond
    need = 16.0 / beta
    return 1 << max(6, math.ceil(math.log2(need)))


def witness_values(spec: WitnessSpec, bump: Bump, x1, x2) -> np.ndarray:
    """``f(x) = g_hat(R(-pi/4) x)`` in closed form."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    xi1 = (x1 + x2) * SQRT_HALF
    xi2 = (x2 - x1) * SQRT_HALF
    b = spec.beta_amp
    c = 0.5 / spec.eta
    D = bump.phi_hat((xi1 - c) / b, xi2 / b) - bump.phi_hat((xi1 + c) / b, xi2 / b)
    # y = (Y, 0); integer and fractional parts of the index keep the phase sane
    n = spec.n_translate
    th0 = spec.theta0 if spec.kind == Kind.SPIRAL.value else 0.0
    turns = np.mod(spec.eta * xi1 * n, 1.0) + spec.eta * th0 * xi1
    return np.exp(-2j * math.pi * turns) * D / (1j * b)


def build_witness(
    eta: float,
    zeta: float,
    bump: Bump | None = None,
    kind="spiral",
    n: int = 512,
    lam: float | None = None,
    translate: TranslateChoice | None = None,
) -> tuple[WitnessSpec, GridFunction]:
    """Witness ``f`` on ``[-1/2, 1/2]^2`` for the undersampled ``eta``."""
    bump = default_bump() if bump is None else bump
    beta = beta_amplitude(eta)
    eps = epsilon_from_eta(eta)
    if not 0.0 < eps < 1.0:
        raise ParameterDomainError("eta must equal (1+eps) sqrt(2)/2 with eps in (0, 1)", eta=eta)
    n = int(n)
    need = _witness_grid_needed(beta)
    if n < need or n & (n - 1):
        raise EnlargeGridError("witness grid too coarse for the spectral bumps", n=n, required_n=need)
    lam = class_lambda(round(eta, 15), Kind.parse(kind).value) if lam is None else float(lam)
    eps_class, r_class = class_parameters(zeta, lam, bump.c1, beta)
    reach = beta * max(r_class, 1.0)
    if reach > bump.grid.half_side:
        grow = 2 ** math.ceil(math.log2(reach / bump.grid.half_side))
        raise EnlargeGridError(
            "class window exceeds the synthesised bump grid",
            r_class=r_class,
            required_fft_size=int(bump.spec.fft_size * grow),
        )
    traj = aligned_trajectory(eta, kind)
    tc = choose_translate(traj, eps_class, r_class) if translate is None else translate
    spec = WitnessSpec(
        eta=float(eta),
        epsilon=float(eps),
        zeta=float(zeta),
        beta_amp=beta,
        lam=lam,
        c1=bump.c1,
        eps_class=eps_class,
        r_class=r_class,
        y=(float(tc.y[0]), float(tc.y[1])),
        n_translate=int(tc.n),
        kind=traj.kind.value,
        theta0=traj.theta0 if traj.kind is Kind.SPIRAL else 0.0,
        eps_prime=float(tc.eps_prime),
        window=float(tc.window),
        deviation=float(tc.deviation),
    )
    g = GridFunction(np.zeros((n, n), complex), 0.5)
    X1, X2 = g.coords()
    return spec, GridFunction(witness_values(spec, bump, X1, X2), 0.5)


# --------------------------------------------------------------------------
# sampled norm along the curve
# --------------------------------------------------------------------------


def tail_window(bump: Bump, beta: float, tol: float = 1e-8) -> float:
    """Radius beyond which ``|phi(beta x)| < tol * phi(0)``."""
    if bump.spec.gauge == "tensor":
        B = _profile_spline()
        s = np.arange(0.0, B.smax, 1.0 / 64.0)
        v = np.abs(B(s))
        env = np.maximum.accumulate(v[::-1])[::-1]
        hit = np.nonzero(env < tol * v[0])[0]
        s_star = s[hit[0]] if len(hit) else B.smax
        # |x| = r forces max(|x1+x2|, |x1-x2|)/2 >= r/2
        return 2.0 * s_star / beta
    X1, X2 = bump.grid.coords()
    r = np.hypot(X1, X2).ravel()
    v = np.abs(bump.grid.values.real).ravel()
    o = np.argsort(r)
    env = np.maximum.accumulate(v[o][::-1])[::-1]
    hit = np.nonzero(env < tol * v.max())[0]
    return (r[o][hit[0]] if len(hit) else bump.grid.half_side) / beta


def witness_quadrature(
    spec: WitnessSpec, bump: Bump | None = None, window: float | None = None, max_step: float | None = None
) -> QuadratureSet:
    """Nodes of ``(aligned curve - y)`` in a window past both ``r_class`` and the bump tail."""
    bump = default_bump() if bump is None else bump
    traj = aligned_trajectory(spec.eta, spec.kind)
    W = max(spec.window, tail_window(bump, spec.beta_amp)) if window is None else float(window)
    if max_step is None:
        y = spec.y_norm
        if y - W > 2.0 * W + spec.eta:
            # nearly straight crossings: resolve phi and the slow drift off the lattice
            max_step = min(0.5 / spec.beta_amp, 0.5 * spec.eta * y / W)
        else:
            max_step = 0.5 * spec.eta
    # curves a distance eta apart fill the square; 8 nodes per panel
    nodes = 8.0 * (2.0 * W) ** 2 / spec.eta / max_step
    if nodes > MAX_NODES:
        raise ResolutionError(
            "witness quadrature would need too many nodes; pass a smaller window",
            estimated_nodes=int(nodes),
            window=W,
            max_step=max_step,
        )
    return translated_quadrature(traj, spec.n_translate, W, max_step)


def witness_on_nodes(spec: WitnessSpec, bump: Bump, q: QuadratureSet) -> np.ndarray:
    """``g0`` at the translated nodes; the lattice offsets avoid cancellation."""
    li = q.extras["lattice_index"]
    off = q.extras["lattice_offset"]
    sign = 1.0 - 2.0 * (li & 1)
    b = spec.beta_amp
    s = sign * np.sin(math.pi * off / spec.eta)
    return 2.0 * b * s * bump.phi(b * q.points[:, 0], b * q.points[:, 1])


def witness_sampled_norm(spec: WitnessSpec, q: QuadratureSet, bump: Bump | None = None) -> float:
    """``||f_hat||_{L2(arc)}`` over the nodes of :func:`witness_quadrature`."""
    bump = default_bump() if bump is None else bump
    if q.source.get("n") != spec.n_translate:
        raise ParameterDomainError("quadrature was built for another translate", n=q.source.get("n"))
    v = witness_on_nodes(spec, bump, q)
    return float(math.sqrt(np.sum(q.weights * v * v)))


def witness_cell_averages(spec: WitnessSpec, bump: Bump | None = None, m: int = 9, tol: float = 1e-6) -> GridFunction:
    """Exact averages of ``f`` over the ``4^m`` dyadic cells of the square.

    ``∫_cell f = ∫ g(t) chi_cell^(R^T t) dt``; with ``t = y + R v`` this is a
    Fourier integral of ``g0(R v) S(a + v)`` (``S`` the cell's sinc factor,
    ``a = R^T y``) evaluated at every cell centre by one centred FFT.  The
    integrand is band-limited, so sampling it at spacing 1/2 is exact up to
    truncation at the bump tail (relative ``tol``).  Haar coefficients of
    the result are the true coefficients of ``f`` at scales ``< m``.
    """
    bump = default_bump() if bump is None else bump
    nc = 1 << int(m)
    h = 1.0 / nc
    dv = 0.5
    extent = tail_window(bump, spec.beta_amp, tol)
    r = 2 * max(1, math.ceil(extent / nc))
    L = 2 * r * nc
    v = (np.arange(L) - L // 2) * dv
    b = spec.beta_amp
    V1, V2 = np.meshgrid(v, v, indexing="ij")
    z1 = SQRT_HALF * (V1 + V2)
    z2 = SQRT_HALF * (V2 - V1)
    H = 2.0 * b * np.sin(math.pi * z1 / spec.eta) * bump.phi(b * z1, b * z2)
    del V1, V2, z1, z2
    a = SQRT_HALF * spec.y[0]
    S = np.sinc(h * (a + v))
    H = H * S[:, None] * S[None, :]
    J = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(H))) * dv * dv
    q = L // 2 + r * (np.arange(nc) - nc // 2) + r // 2
    J = J[np.ix_(q, q)]
    g = GridFunction(np.zeros((nc, nc)), 0.5)
    C1, C2 = g.coords()
    xi1 = SQRT_HALF * (C1 + C2)
    th0 = spec.theta0 if spec.kind == Kind.SPIRAL.value else 0.0
    turns = np.mod(spec.eta * xi1 * spec.n_translate, 1.0) + spec.eta * th0 * xi1
    return GridFunction(np.exp(-2j * math.pi * turns) * J, 0.5)


# --------------------------------------------------------------------------
# variation and sup
# --------------------------------------------------------------------------


def _profile_derivative(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    tm = t[m]
    out[m] = _profile(tm) * (-2.0 * tm / (1.0 - tm * tm) ** 2)
    return out


def _hat_and_grad(bump: Bump, m: int):
    """``phi_hat`` and ``|grad phi_hat|`` on a midpoint grid of the diamond.

    Coordinates ``s = u1 + u2``, ``t = u1 - u2`` run over ``(-1, 1)^2``; the
    returned weight includes ``du = ds dt / 2``.
    """
    s = -1.0 + (np.arange(m) + 0.5) * (2.0 / m)
    S, T = np.meshgrid(s, s, indexing="ij")
    w = 0.5 * (2.0 / m) ** 2
    if bump.spec.gauge == "tensor":
        bs, bt = _profile(S), _profile(T)
        ds, dt = _profile_derivative(S), _profile_derivative(T)
        ph = bump.scale * bs * bt
        grad = bump.scale * np.sqrt(2.0 * ((ds * bt) ** 2 + (bs * dt) ** 2))
        return ph, grad, w
    u1, u2 = 0.5 * (S + T), 0.5 * (S - T)
    h = 1e-6
    ph = bump.phi_hat(u1, u2)
    g1 = (bump.phi_hat(u1 + h, u2) - bump.phi_hat(u1 - h, u2)) / (2 * h)
    g2 = (bump.phi_hat(u1, u2 + h) - bump.phi_hat(u1, u2 - h)) / (2 * h)
    return ph, np.hypot(g1, g2), w


@functools.lru_cache(maxsize=8)
def _hat_moments(bump: Bump, m: int = 1024):
    ph, grad, w = _hat_and_grad(bump, m)
    return ph, grad, w, float(np.sum(np.abs(ph)) * w), float(np.sum(grad) * w)


def witness_variation(spec: WitnessSpec, bump: Bump | None = None, m: int = 1024) -> float:
    """``var(f) = ||grad f||_1`` in closed form.

    ``|grad f|^2 = (2 pi |y| |D| / beta)^2 + |grad D|^2 / beta^2`` pointwise,
    with ``D`` the difference of the two shifted bumps; substituting the
    bump's own coordinates leaves a smooth integral over the diamond.
    """
    bump = default_bump() if bump is None else bump
    ph, grad, w, _, _ = _hat_moments(bump, m)
    a = 2.0 * math.pi * spec.y_norm * spec.beta_amp
    return float(2.0 * np.sum(np.hypot(a * ph, grad)) * w)


def witness_variation_bound(spec: WitnessSpec, bump: Bump | None = None) -> float:
    """Leibniz bound ``4 pi |y| beta ||phi_hat||_1 + 2 ||grad phi_hat||_1``."""
    bump = default_bump() if bump is None else bump
    _, _, _, l1, gl1 = _hat_moments(bump)
    return 4.0 * math.pi * spec.y_norm * spec.beta_amp * l1 + 2.0 * gl1


def witness_sup(spec: WitnessSpec, bump: Bump | None = None) -> float:
    bump = default_bump() if bump is None else bump
    return bump.hat_sup / spec.beta_amp


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def var_rate(epsilon: float, zeta: float, c1: float) -> float:
    """``eps^-1 zeta^-2 L^4`` with ``L = max(1, ln(48 pi C1^2 / zeta^2))``."""
    L = max(1.0, math.log(48.0 * math.pi * c1 * c1 / (zeta * zeta)))
    return L**4 / (epsilon * zeta * zeta)


@dataclass(frozen=True)
class WitnessReport:
    eta: float
    epsilon: float
    zeta: float
    beta: float
    y: tuple
    norm2: float
    sampled_norm: float
    sampled_margin: float
    var: float
    sup: float
    window: float
    nodes: int
    bounds: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["y"] = list(self.y)
        d["pass"] = d.pop("passed")
        return d


def witness_checks(
    f: GridFunction, spec: WitnessSpec, q: QuadratureSet, bump: Bump | None = None, slack: float = 1.1
) -> WitnessReport:
    """Items (i)-(iv): norm, sampled level, variation and sup."""
    bump = default_bump() if bump is None else bump
    if q.window_radius < spec.r_class:
        raise TruncationError(
            "quadrature window is smaller than the class radius", window=q.window_radius, r_class=spec.r_class
        )
    norm2 = f.norm2()
    sn = witness_sampled_norm(spec, q, bump)
    margin = sn / math.sqrt(spec.eta)
    var = witness_variation(spec, bump)
    sup = max(witness_sup(spec, bump), f.sup())
    rate = var_rate(spec.epsilon, spec.zeta, spec.c1)
    bounds = {
        "norm2": 1.0,
        "sampled_margin": spec.zeta,
        "var_rate": rate,
        "var_explicit": witness_variation_bound(spec, bump),
        "sup_rate": 1.0 / spec.epsilon,
    }
    constants = {
        "var": var / (rate + 1.0),
        "sup": sup * spec.epsilon,
        "lambda": spec.lam,
        "c1": spec.c1,
        "c_gamma": spec.c_gamma,
    }
    passed = {
        "i": abs(norm2 - 1.0) <= 1e-6,
        "ii": margin <= slack * spec.zeta,
        "iii": var <= bounds["var_explicit"] * (1.0 + 1e-9),
        "iv": math.isfinite(constants["sup"]),
    }
    return WitnessReport(
        eta=spec.eta,
        epsilon=spec.epsilon,
        zeta=spec.zeta,
        beta=spec.beta_amp,
        y=spec.y,
        norm2=norm2,
        sampled_norm=sn,
        sampled_margin=margin,
        var=var,
        sup=sup,
        window=float(q.window_radius),
        nodes=len(q),
        bounds=bounds,
        constants=constants,
        passed=passed,
    )


# --------------------------------------------------------------------------
# exact aliasing on parallel lines
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AliasingSine:
    """``sin((pi/tau) <x, d_perp>)``: zero on every line ``t d + k tau d_perp``."""

    direction: tuple
    tau: float

    @property
    def d_perp(self) -> np.ndarray:
        d1, d2 = self.direction
        return np.array([-d2, d1])

    def __call__(self, x1, x2=None) -> np.ndarray:
        if x2 is None:
            p = np.asarray(x1, float)
            x1, x2 = p[..., 0], p[..., 1]
        dp = self.d_perp
        s = (np.asarray(x1, float) * dp[0] + np.asarray(x2, float) * dp[1]) / self.tau
        # sin(pi s) via the distance to the nearest integer keeps zeros exact
        k = np.round(s)
        return np.where(np.mod(k, 2) == 0, 1.0, -1.0) * np.sin(math.pi * (s - k))

    def grid(self, n: int, half_side: float) -> GridFunction:
        g = GridFunction(np.zeros((n, n)), half_side)
        X1, X2 = g.coords()
        return GridFunction(self(X1, X2).astype(complex), half_side)

    def sampled_norm(self, q: QuadratureSet) -> float:
        v = self(q.points)
        return float(math.sqrt(np.sum(q.weights * v * v)))

    @property
    def spectrum_segment(self) -> np.ndarray:
        """Endpoints ``±d_perp/(2 tau)`` of the (two-point) spectrum."""
        e = self.d_perp / (2.0 * self.tau)
        return np.stack([-e, e])


def aliasing_sine(d, tau: float) -> AliasingSine:
    d = tuple(float(v) for v in d)
    if len(d) != 2:
        raise ParameterDomainError("direction must be a 2-vector")
    if abs(math.hypot(*d) - 1.0) > 1e-12:
        raise NormalizationError("direction must be a unit vector", norm=math.hypot(*d))
    if not tau > 0:
        raise ParameterDomainError("spacing must be positive", tau=tau)
    return AliasingSine(d, float(tau))
