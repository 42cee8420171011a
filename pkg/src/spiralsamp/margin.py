"""Stability-margin experiments.

* Nyquist sweeps: smallest singular value of the weighted sampling matrix of
  a pixel basis on the spectrum square (or disc), for growing windows.
* BV margins: sampled norms of the witnesses against their variation.
* Sparse margins: the same witnesses pushed through N-term Haar
  thresholding and a scale cut.

Every margin here is an upper bound (a witness) or a finite-subspace lower
bound (a singular value); reports say which.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .errors import ConvergenceError, EnlargeGridError, ParameterDomainError, UnderdeterminedError
from .fourier import Bump, default_bump
from .trajectory import Kind, arc_quadrature, make_trajectory
from .wavelet import haar_analyze, haar_transform, nterm_threshold, project_scales
from .witness import (
    build_witness,
    class_lambda,
    eta_from_epsilon,
    witness_cell_averages,
    witness_checks,
    witness_quadrature,
)

__all__ = [
    "SigmaEstimate",
    "NyquistSweepRow",
    "MarginReport",
    "sigma_min_estimate",
    "pixel_basis",
    "pixel_rows",
    "nyquist_sweep",
    "write_sweep_csv",
    "loglog_slope",
    "margin_upper_bv",
    "margin_upper_sparse",
    "bv_summary",
    "sparse_summary",
    "write_margin_csv",
    "write_summary_json",
]

DENSE_LIMIT = 4096


# --------------------------------------------------------------------------
# singular values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaEstimate:
    sigma_min: float
    sigma_max: float
    residual_min: float = 0.0
    residual_max: float = 0.0
    method: str = "dense"
    iterations: int = 0

    def __iter__(self):
        yield self.sigma_min
        yield self.sigma_max


def _gram_operator(M):
    n = M.shape[1]
    return LinearOperator((n, n), matvec=lambda x: M.conj().T @ (M @ x), dtype=complex)


def _eig_residual(M, x, lam):
    x = x / np.linalg.norm(x)
    return float(np.linalg.norm(M.conj().T @ (M @ x) - lam * x))


def sigma_min_estimate(M, method: str = "auto", tol: float = 1e-6, max_iter: int = 500) -> SigmaEstimate:
    """Extreme singular values of ``M`` (rows = weighted samples, cols = basis).

    Dense SVD up to 4096 columns.  Beyond that, shift-invert Lanczos on the
    normal operator ``M^H M`` for the bottom and plain Lanczos for the top;
    residuals ``||M^H M x - s^2 x||`` are reported.
    """
    M = np.asarray(M)
    if M.ndim != 2:
        raise ParameterDomainError("matrix must be 2-D", shape=M.shape)
    rows, cols = M.shape
    if rows < cols:
        raise UnderdeterminedError("fewer weighted samples than basis elements", rows=rows, cols=cols)
    if method not in ("auto", "dense", "iterative"):
        raise ParameterDomainError("unknown method", method=method)
    if method == "dense" or (method == "auto" and cols <= DENSE_LIMIT):
        s = sla.svdvals(M)
        return SigmaEstimate(float(s[-1]), float(s[0]))
    G = _gram_operator(M)
    try:
        lmax, vmax = eigsh(G, k=1, which="LA", tol=tol, maxiter=max_iter)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("top singular value did not converge", iterations=max_iter) from exc
    lmax = float(lmax[0])
    # small shift keeps the factorisation definite when M is rank deficient
    delta = max(lmax, 1.0) * 1e-13
    Gd = M.conj().T @ M + delta * np.eye(cols)
    cho = sla.cho_factor(Gd)
    inv = LinearOperator((cols, cols), matvec=lambda x: sla.cho_solve(cho, x), dtype=complex)
    try:
        mu, vmin = eigsh(inv, k=1, which="LA", tol=tol, maxiter=max_iter)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("bottom singular value did not converge", iterations=max_iter) from exc
    lmin = max(1.0 / float(mu[0]) - delta, 0.0)
    return SigmaEstimate(
        math.sqrt(lmin),
        math.sqrt(lmax),
        _eig_residual(M, vmin[:, 0], lmin),
        _eig_residual(M, vmax[:, 0], lmax),
        "lanczos",
        max_iter,
    )


# --------------------------------------------------------------------------
# Nyquist sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NyquistSweepRow:
    eta: float
    diam_omega: float
    window: float
    sigma_min: float
    sigma_max: float
    n_basis: int
    rows: int = 0
    kind: str = "spiral"

    def csv_row(self) -> list:
        return [self.eta, self.diam_omega, self.window, self.n_basis, self.sigma_min, self.sigma_max]


def pixel_basis(omega: str = "square", diameter: float = math.sqrt(2.0), n_side: int = 32):
    """Centres and side of the orthonormal pixel basis on the spectrum set.

    The square of diameter ``D`` has side ``D/sqrt(2)``; for a disc the
    pixels of the circumscribed square whose centres lie inside are kept.
    """
    if omega == "square":
        side = diameter / math.sqrt(2.0)
    elif omega == "disc":
        side = diameter
    else:
        raise ParameterDomainError("omega must be 'square' or 'disc'", omega=omega)
    h = side / n_side
    ax = -0.5 * side + (np.arange(n_side) + 0.5) * h
    C1, C2 = np.meshgrid(ax, ax, indexing="ij")
    C = np.stack([C1.ravel(), C2.ravel()], axis=1)
    if omega == "disc":
        C = C[np.hypot(C[:, 0], C[:, 1]) <= 0.5 * diameter]
    return C, h


def pixel_rows(points, weights, centres, h) -> np.ndarray:
    """``sqrt(w_i) * (transform of pixel b at node i)`` for unit-norm pixels."""
    P = np.asarray(points, float)
    env = h * np.sinc(h * P[:, 0]) * np.sinc(h * P[:, 1]) * np.sqrt(weights)
    ph = np.exp(-2j * math.pi * (np.outer(P[:, 0], centres[:, 0]) + np.outer(P[:, 1], centres[:, 1])))
    return env[:, None] * ph


def _streamed_r(q, centres, h, chunk):
    # R factor of the stacked rows; same singular values, bounded memory
    R = None
    for s in range(0, len(q), chunk):
        A = pixel_rows(q.points[s : s + chunk], q.weights[s : s + chunk], centres, h)
        if R is not None:
            A = np.vstack([R, A])
        if A.shape[0] >= A.shape[1]:
            R = sla.qr(A, mode="r", overwrite_a=True, check_finite=False)[0][: A.shape[1]]
        else:
            R = A
    return R


def nyquist_sweep(
    etas,
    windows,
    n_side: int = 32,
    omega: str = "square",
    diameter: float = math.sqrt(2.0),
    kind="spiral",
    max_step: float = 0.5,
    theta0: float = 0.0,
    chunk: int = 4096,
) -> list[NyquistSweepRow]:
    """``sigma_min``/``sigma_max`` of the pixel sampling matrix per ``(eta, R)``.

    Windows are centred at the origin and nested, so each row adds samples
    to the previous one.
    """
    windows = [float(w) for w in windows]
    if any(b <= a for a, b in zip(windows, windows[1:])):
        raise ParameterDomainError("windows must be increasing", windows=windows)
    k = Kind.parse(kind)
    centres, h = pixel_basis(omega, diameter, n_side)
    nb = len(centres)
    out = []
    for eta in etas:
        params = {"eta": float(eta)} | ({"theta0": theta0} if k is Kind.SPIRAL else {})
        traj = make_trajectory(k, **params)
        for W in windows:
            q = arc_quadrature(traj, W, max_step=max_step)
            if len(q) < nb:
                raise UnderdeterminedError(
                    "window holds fewer samples than basis elements", eta=eta, window=W, rows=len(q), cols=nb
                )
            R = _streamed_r(q, centres, h, chunk)
            est = sigma_min_estimate(R)
            out.append(NyquistSweepRow(float(eta), diameter, W, est.sigma_min, est.sigma_max, nb, len(q), k.value))
    return out


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "diam", "window", "n_basis", "sigma_min", "sigma_max"])
        for r in rows:
            w.writerow([_fmt(v) for v in r.csv_row()])


# --------------------------------------------------------------------------
# margin reports
# --------------------------------------------------------------------------


@dataclass
class MarginReport:
    trajectory: dict
    class_params: dict
    margin_upper: float
    bound_value: float
    epsilon: float
    zeta: float
    kind: str = "upper bound (witness)"
    extras: dict = field(default_factory=dict)

    @property
    def cls(self) -> str:
        return "bv" if "W" in self.class_params else "sparse"

    @property
    def param(self) -> float:
        return self.class_params["W"] if self.cls == "bv" else self.class_params["N"]

    def csv_row(self) -> list:
        return [self.cls, self.param, self.margin_upper, self.bound_value, self.epsilon, self.zeta]

    def to_dict(self) -> dict:
        return asdict(self)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, float))
    ly = np.log(np.asarray(y, float))
    if len(lx) < 2 or np.ptp(lx) == 0:
        raise ParameterDomainError("need at least two distinct abscissae")
    return float(np.polyfit(lx, ly, 1)[0])


def _bv_shape(eps, W):
    t = eps * W
    return t**-0.5 * (math.log(t) ** 2 + 1.0)


def margin_upper_bv(
    epsilon: float, zeta_list, kind="spiral", bump: Bump | None = None, seed: int = 0
) -> list[MarginReport]:
    """One witness per ``zeta``; ``W`` is its variation, the margin its sampled norm.

    ``bound_value`` is ``C (eps W)^-1/2 (ln^2(eps W) + 1)`` with the smallest
    ``C`` that covers the whole sweep.
    """
    zetas = [float(z) for z in zeta_list]
    if any(b >= a for a, b in zip(zetas, zetas[1:])):
        raise ParameterDomainError("zeta values must be decreasing", zeta=zetas)
    bump = default_bump() if bump is None else bump
    eta = eta_from_epsilon(epsilon)
    k = Kind.parse(kind)
    lam = class_lambda(eta, k.value, seed=seed)
    bessel_cap = math.sqrt(eta * lam)
    out = []
    for z in zetas:
        spec, f = build_witness(eta, z, bump=bump, kind=k, lam=lam)
        q = witness_quadrature(spec, bump)
        rep = witness_checks(f, spec, q, bump)
        W = rep.var
        margin = rep.sampled_norm
        # class membership re-verified: the witness's variation is its budget
        if not W <= rep.bounds["var_explicit"] * (1 + 1e-9):
            raise ParameterDomainError("witness variation exceeds its budget", var=W)
        out.append(
            MarginReport(
                trajectory={"kind": k.value, "eta": eta, "window": rep.window},
                class_params={"W": W},
                margin_upper=margin,
                bound_value=math.nan,
                epsilon=float(epsilon),
                zeta=z,
                extras={
                    "level_bound": math.sqrt(eta) * z * 1.1,
                    "bessel_cap": bessel_cap,
                    "y_norm": spec.y_norm,
                    "r_class": spec.r_class,
                    "nodes": rep.nodes,
                    "witness_pass": dict(rep.passed),
                },
            )
        )
    C = max(r.margin_upper / _bv_shape(epsilon, r.param) for r in out)
    for r in out:
        r.bound_value = C * _bv_shape(epsilon, r.param)
        r.extras["C_fit"] = C
    return out


def bv_summary(reports) -> dict:
    W = [r.param for r in reports]
    m = [r.margin_upper for r in reports]
    return {
        "class": "bv",
        "slope": loglog_slope(W, m),
        "expected_slope": -0.5,
        "W_decades": float(np.log10(max(W) / min(W))),
        "C_fit": reports[0].extras.get("C_fit"),
        "level_ok": all(r.margin_upper <= r.extras["level_bound"] for r in reports),
        "bessel_ok": all(r.margin_upper <= r.extras["bessel_cap"] for r in reports),
        "nature": "upper bounds from explicit witnesses",
    }


def _sparse_scale(epsilon: float, N: int) -> int:
    return math.ceil(math.log2(N / epsilon))


def margin_upper_sparse(
    epsilon: float,
    n_list,
    kind="spiral",
    m: int = 9,
    window: float = 32.0,
    max_step: float = 0.5,
    bump: Bump | None = None,
    seed: int = 0,
) -> list[MarginReport]:
    """Witness with ``zeta = N^-1/6``, thresholded to ``N`` terms at scales ``<= J``.

    ``J = ceil(log2(N/eps))`` is capped at ``m - 1`` (the finest scale the
    ``2^m`` cell averages resolve); the cap is recorded.  A report is
    inconclusive when ``||f - f_NJ||_2 >= 1/2``.
    """
    bump = default_bump() if bump is None else bump
    eta = eta_from_epsilon(epsilon)
    k = Kind.parse(kind)
    traj = make_trajectory(k, eta=eta)
    q = arc_quadrature(traj, window, max_step=max_step)
    lam = class_lambda(eta, k.value, seed=seed)
    out = []
    for N in n_list:
        N = int(N)
        if N < 4:
            raise ParameterDomainError("N must be >= 4", N=N)
        zeta = N ** (-1.0 / 6.0)
        J_req = _sparse_scale(epsilon, N)
        J = min(J_req, m - 1)
        spec, _ = _witness_spec_only(eta, zeta, bump, k, lam)
        avg = witness_cell_averages(spec, bump, m=m)
        full = haar_analyze(avg, J=m - 1)
        fnj = project_scales(nterm_threshold(full, N), J)
        nnz = fnj.nonzero()
        scales = fnj.scales()
        member = nnz <= N and (not scales or max(scales) <= J)
        if not member:
            raise ParameterDomainError("thresholded function left the sparse class", N=N, nonzero=nnz)
        kept = fnj.energy()
        # f has unit norm; f_NJ is an orthogonal projection of it
        err = math.sqrt(max(1.0 - kept, 0.0))
        nrm = math.sqrt(kept)
        F = haar_transform(fnj, q.points)
        margin = float(math.sqrt(np.sum(q.weights * np.abs(F) ** 2)) / nrm) if nrm > 0 else math.nan
        out.append(
            MarginReport(
                trajectory={"kind": k.value, "eta": eta, "window": float(window)},
                class_params={"N": N, "J": J},
                margin_upper=margin,
                bound_value=math.nan,
                epsilon=float(epsilon),
                zeta=zeta,
                extras={
                    "J_requested": J_req,
                    "nonzero": nnz,
                    "member": member,
                    "approx_error": err,
                    "captured_energy": kept,
                    "grid_energy": avg.norm2() ** 2,
                    "inconclusive": err >= 0.5,
                    "y_norm": spec.y_norm,
                    "nodes": len(q),
                },
            )
        )
    ok = [r for r in out if math.isfinite(r.margin_upper)]
    if ok:
        K0 = max(r.margin_upper / _sparse_shape(epsilon, r.param) for r in ok)
        for r in out:
            r.bound_value = K0 * _sparse_shape(epsilon, r.param)
            r.extras["K0_fit"] = K0
    return out


def _sparse_shape(eps, N):
    return N ** (-1.0 / 6.0) / eps * math.log(N) ** 4


def _witness_spec_only(eta, zeta, bump, kind, lam):
    # the grid realisation is not used here; the smallest legal grid keeps it cheap
    try:
        return build_witness(eta, zeta, bump=bump, kind=kind, n=64, lam=lam)
    except EnlargeGridError as exc:
        need = exc.details.get("required_n")
        if need is None:
            raise
        return build_witness(eta, zeta, bump=bump, kind=kind, n=int(need), lam=lam)


def sparse_summary(reports, K: float | None = None) -> dict:
    """Slope of margin vs ``N`` and the ``N`` above which the error is below 1/2.

    The threshold is the first sweep point from which every error stays
    below 1/2; when none does it is extrapolated from the fitted error slope.
    """
    N = np.array([r.param for r in reports], float)
    m = np.array([r.margin_upper for r in reports])
    err = np.array([r.extras["approx_error"] for r in reports])
    good = ~np.array([r.extras["inconclusive"] for r in reports])
    thr = None
    for i in range(len(N)):
        if good[i:].all():
            thr = float(N[i])
            break
    err_slope = loglog_slope(N, np.maximum(err, 1e-300))
    if thr is None and err_slope < 0:
        lg = math.log10(N[-1]) + math.log10(0.5 / err[-1]) / err_slope
        thr = 10.0**lg if lg < 300 else None
    fin = np.isfinite(m) & (m > 0)
    return {
        "class": "sparse",
        "slope": loglog_slope(N[fin], m[fin]) if fin.sum() >= 2 else math.nan,
        "expected_slope_max": -1.0 / 6.0 + 0.1,
        "error_slope": err_slope,
        "N_threshold": thr,
        "threshold_observed": bool(thr is not None and thr <= N[-1]),
        "members": all(r.extras["member"] for r in reports),
        "inconclusive": int((~good).sum()),
        "K0_fit": reports[0].extras.get("K0_fit") if reports else None,
        "nature": "upper bounds from explicit witnesses",
    }


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_margin_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "param", "margin_upper", "bound_value", "epsilon", "zeta"])
        for r in reports:
            w.writerow([_fmt(v) for v in r.csv_row()])


def write_summary_json(summary: dict, reports, path) -> None:
    doc = {"summary": summary, "reports": [r.to_dict() for r in reports]}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)
