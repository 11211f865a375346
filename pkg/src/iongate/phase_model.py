"""Phases picked up by forced harmonic modes.

Functions here are unit-agnostic: pass ``hbar`` and consistent inputs
(the design objects work in natural units where ``hbar = 1``).  Forces are
callables that accept numpy arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import BoundaryViolation, QuadratureFailure

_GL_HI = np.polynomial.legendre.leggauss(32)
_GL_LO = np.polynomial.legendre.leggauss(20)
_GL_SHORT = np.polynomial.legendre.leggauss(6)


def wrap_phase(phi):
    """Map a phase onto ``[0, 2 pi)``."""
    return np.mod(phi, 2 * np.pi)


def _gl_panels(fn, edges, rule):
    """Integrate ``fn`` over every panel ``[edges[i], edges[i+1]]`` with a fixed rule."""
    x, w = rule
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b)[:, None] + half[:, None] * x[None, :]
    vals = fn(nodes)
    return half * (vals @ w)


def _duhamel_panels(f, Omega, edges):
    kernel = lambda s: np.exp(1j * Omega * s) * f(s)
    hi = _gl_panels(kernel, edges, _GL_HI)
    lo = _gl_panels(kernel, edges, _GL_LO)
    return hi, np.abs(hi - lo)


@dataclass(frozen=True)
class Trajectory:
    """Driven trajectory ``y(t)`` with complex quadrature ``z_g = Y + iP``.

    ``evaluate`` gives ``z_g`` at arbitrary times within ``[0, t_f]``.
    """

    t: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    Omega: float
    z0: complex
    hbar: float
    force: Callable
    cumulative: np.ndarray
    mode: str | None = None
    config: str | None = None

    @property
    def t_f(self) -> float:
        return float(self.t[-1])

    def evaluate(self, s):
        """Return ``(y, ydot, z_g)`` at times ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        idx = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, len(self.t) - 2)
        left = self.t[idx]
        x, w = _GL_HI
        half = 0.5 * (s - left)
        nodes = 0.5 * (s + left)[:, None] + half[:, None] * x[None, :]
        part = half * ((np.exp(1j * self.Omega * nodes) * self.force(nodes)) @ w)
        acc = self.cumulative[idx] + part
        z = np.exp(-1j * self.Omega * s) * (self.z0 + 1j / math.sqrt(2 * self.hbar * self.Omega) * acc)
        return _y_of(z, self.Omega, self.hbar), _ydot_of(z, self.Omega, self.hbar), z

    def endpoint_residual(self) -> float:
        """``|z_g(t_f) - e^{-i Omega t_f} z_g(0)|`` relative to the peak of the driven part."""
        drive = np.exp(-1j * self.Omega * self.t) * 1j / math.sqrt(2 * self.hbar * self.Omega) * self.cumulative
        peak = float(np.max(np.abs(drive)))
        return float(abs(drive[-1]) / peak) if peak > 0 else 0.0


def _y_of(z, Omega, hbar):
    return math.sqrt(2 * hbar / Omega) * z.real


def _ydot_of(z, Omega, hbar):
    return math.sqrt(2 * hbar * Omega) * z.imag


def solve_forced_oscillator(f: Callable, Omega: float, t_f: float, z0: complex = 0j,
                            n: int = 1024, hbar: float = 1.0, rtol: float = 1e-12,
                            max_refine: int = 8, mode: str | None = None,
                            config: str | None = None) -> Trajectory:
    """General solution of ``y'' + Omega^2 y = f`` in complex quadrature form.

    The Duhamel integral ``int_0^t e^{i Omega s} f(s) ds`` is accumulated
    panel by panel; the panel grid is doubled until two Gauss-Legendre
    orders agree to ``rtol`` of the largest partial integral.
    """
    if Omega <= 0:
        raise ValueError("Omega must be positive")
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    for _ in range(max_refine + 1):
        edges = np.linspace(0.0, t_f, n + 1)
        panels, err = _duhamel_panels(f, Omega, edges)
        cum = np.concatenate([[0.0], np.cumsum(panels)])
        scale = max(float(np.max(np.abs(cum))), float(np.sum(np.abs(panels))), 1e-300)
        if np.sum(err) <= rtol * scale:
            break
        n *= 2
    else:
        raise QuadratureFailure(f"Duhamel integral did not reach rtol={rtol} with {n} panels")
    z = np.exp(-1j * Omega * edges) * (z0 + 1j / math.sqrt(2 * hbar * Omega) * cum)
    return Trajectory(edges, _y_of(z, Omega, hbar), _ydot_of(z, Omega, hbar), Omega,
                      complex(z0), hbar, f, cum, mode, config)


def newton_oracle(f: Callable, Omega: float, t_f: float, y0: float = 0.0, v0: float = 0.0,
                  t_eval=None, rtol: float = 1e-12, atol: float | None = None):
    """Integrate ``y'' = f(t) - Omega^2 y`` with DOP853; returns ``(t, y, ydot)``."""
    if atol is None:
        # absolute floor set by the size of the forced response
        probe = np.linspace(0, t_f, 257)
        atol = 1e-14 * max(float(np.max(np.abs(f(probe)))) / Omega**2, abs(y0), abs(v0) / Omega, 1e-300)
    sol = integrate.solve_ivp(lambda t, s: (s[1], f(t) - Omega**2 * s[0]), (0.0, t_f), (y0, v0),
                              method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise QuadratureFailure(sol.message)
    return sol.t, sol.y[0], sol.y[1]


def _quad(fn, a, b, epsabs, epsrel=1e-13, points=None):
    val, err = integrate.quad(fn, a, b, epsabs=epsabs, epsrel=epsrel, limit=400, points=points)
    if err > max(epsabs, epsrel * abs(val)) * 100:
        raise QuadratureFailure(f"quadrature error estimate {err:.3g} exceeds tolerance")
    return val


def action_integral(traj: Trajectory, epsabs: float = 1e-12) -> float:
    """``G(t_f) = (1/2hbar) int (ydot^2 - Omega^2 y^2) dt``."""
    W = traj.Omega

    def integrand(s):
        y, yd, _ = traj.evaluate(s)
        return (yd**2 - W**2 * y**2) / (2 * traj.hbar)

    return _panel_quad(integrand, traj.t_f, epsabs)


def _panel_quad(fn, t_f, epsabs, n=64):
    """Adaptive Gauss-Kronrod over ``n`` equal panels (keeps each panel smooth)."""
    edges = np.linspace(0, t_f, n + 1)
    scalar = lambda s: float(np.asarray(fn(np.float64(s))).reshape(-1)[0])
    return sum(_quad(scalar, a, b, epsabs / n) for a, b in zip(edges[:-1], edges[1:]))


def lewis_riesenfeld_phase(n: int, Omega: float, traj: Trajectory | None, t_f: float | None = None,
                           epsabs: float = 1e-12) -> float:
    """``theta_n(t_f) = -(n + 1/2) Omega t_f - G(t_f)``; ``traj=None`` means no drive."""
    if traj is None:
        if t_f is None:
            raise ValueError("t_f required when no trajectory is given")
        return -(n + 0.5) * Omega * t_f
    return -(n + 0.5) * Omega * traj.t_f - action_integral(traj, epsabs)


def _boundary_check(alphas, alpha_dots, t_f, tol):
    probe = np.linspace(0.0, t_f, 513)
    for k, a in enumerate(alphas):
        vals = np.asarray(a(probe), dtype=float)
        peak = float(np.max(np.abs(vals)))
        if peak == 0:
            continue
        ends = [abs(vals[0]), abs(vals[-1])]
        if alpha_dots is not None:
            d = np.asarray(alpha_dots[k](np.array([0.0, t_f])), dtype=float)
            dpeak = float(np.max(np.abs(np.gradient(vals, probe))))
            ends += list(np.abs(d) * peak / max(dpeak, 1e-300))
        if max(ends) > tol * peak:
            raise BoundaryViolation(
                f"mode {k}: endpoint residual {max(ends) / peak:.3g} of peak exceeds {tol:g}"
            )


def gate_phase_single_integral(forces: Sequence[Callable], alphas: Sequence[Callable], t_f: float,
                               hbar: float = 1.0, alpha_dots: Sequence[Callable] | None = None,
                               boundary_tol: float = 1e-6, epsabs: float = 1e-12) -> float:
    """``phi = (1/2hbar) sum_j int_0^t_f f_j alpha_j dt`` (rad)."""
    _boundary_check(alphas, alpha_dots, t_f, boundary_tol)
    total = 0.0
    for f, a in zip(forces, alphas):
        total += _panel_quad(lambda s: f(s) * a(s), t_f, epsabs * 2 * hbar, n=16)
    return total / (2 * hbar)


def gate_phase_double_integral(forces: Sequence[Callable], Omegas: Sequence[float], t_f: float,
                               hbar: float = 1.0, form: str = "triangle",
                               epsabs: float = 1e-12, epsrel: float = 1e-11) -> float:
    """Phase from the force-force correlation, without solving for trajectories.

    ``form="triangle"`` integrates ``t'' < t'`` with kernel ``sin(W(t'-t''))/(2 hbar W)``;
    ``form="square"`` integrates the full square with ``sin(W|t'-t''|)/(4 hbar W)``.
    """
    if form not in ("triangle", "square"):
        raise ValueError("form must be 'triangle' or 'square'")
    total = 0.0
    for f, W in zip(forces, Omegas):
        scalar = lambda s, f=f: float(f(np.float64(s)))
        if form == "triangle":
            val, err = integrate.dblquad(
                lambda t2, t1: scalar(t1) * scalar(t2) * math.sin(W * (t1 - t2)),
                0.0, t_f, 0.0, lambda t1: t1, epsabs=epsabs, epsrel=epsrel)
            val /= 2 * hbar * W
        else:
            lower, e1 = integrate.dblquad(
                lambda t2, t1: scalar(t1) * scalar(t2) * math.sin(W * abs(t1 - t2)),
                0.0, t_f, 0.0, lambda t1: t1, epsabs=epsabs, epsrel=epsrel)
            upper, e2 = integrate.dblquad(
                lambda t2, t1: scalar(t1) * scalar(t2) * math.sin(W * abs(t1 - t2)),
                0.0, t_f, lambda t1: t1, t_f, epsabs=epsabs, epsrel=epsrel)
            val, err = (lower + upper) / (4 * hbar * W), e1 + e2
        if not np.isfinite(val):
            raise QuadratureFailure("double integral did not converge")
        total += val
    return total


@dataclass(frozen=True)
class QuadraturePath:
    """Dimensionless phase-space path in the lab and rotating frames."""

    t: np.ndarray
    X: np.ndarray
    P: np.ndarray
    X_r: np.ndarray
    P_r: np.ndarray

    def enclosed_area(self) -> float:
        """Signed shoelace area of the rotating-frame path (closed back to its start)."""
        x, p = self.X_r, self.P_r
        return 0.5 * float(np.sum(x * np.roll(p, -1) - np.roll(x, -1) * p))

    def max_radius(self) -> float:
        return float(np.max(np.hypot(self.X, self.P)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "X", "P", "X_r", "P_r"])
            for row in zip(self.t, self.X, self.P, self.X_r, self.P_r):
                w.writerow([f"{v:.17g}" for v in row])


def quadrature_path(t, alpha, alpha_dot, Omega: float, hbar: float = 1.0) -> QuadraturePath:
    t = np.asarray(t, dtype=float)
    X = math.sqrt(Omega / (2 * hbar)) * np.asarray(alpha, dtype=float)
    P = np.asarray(alpha_dot, dtype=float) / math.sqrt(2 * hbar * Omega)
    zr = np.exp(1j * Omega * t) * (X + 1j * P)
    return QuadraturePath(t, X, P, zr.real, zr.imag)


def _rotating_path(traj: Trajectory, n: int):
    """Rotating-frame ``z_r`` on ``n + 1`` uniform samples via short-panel Gauss-Legendre sums."""
    edges = np.linspace(0.0, traj.t_f, n + 1)
    kernel = lambda s: np.exp(1j * traj.Omega * s) * traj.force(s)
    acc = np.concatenate([[0.0], np.cumsum(_gl_panels(kernel, edges, _GL_SHORT))])
    return traj.z0 + 1j / math.sqrt(2 * traj.hbar * traj.Omega) * acc


def rotating_area(traj: Trajectory, per_period: int = 4096, tol: float = 1e-8,
                  max_samples: int = 1 << 24) -> float:
    """Shoelace area of the rotating-frame path, doubling samples until converged.

    Convergence is declared when a doubling changes the area by less than
    ``tol * max(1, |area|)``.
    """
    periods = traj.Omega * traj.t_f / (2 * np.pi)
    n = max(int(per_period * max(periods, 1.0)), per_period)
    prev = None
    while True:
        zr = _rotating_path(traj, n)
        x, p = zr.real, zr.imag
        area = 0.5 * float(np.sum(x * np.roll(p, -1) - np.roll(x, -1) * p))
        if prev is not None and abs(area - prev) < tol * max(1.0, abs(area)):
            return area
        if 2 * n > max_samples:
            raise QuadratureFailure("rotating-frame area did not converge")
        prev, n = area, 2 * n


@dataclass(frozen=True)
class PhaseBreakdown:
    total: float
    dynamical: float
    geometric: float
    area: float
    G: float

    def identity_residuals(self) -> dict[str, float]:
        return {
            "total+G": abs(self.total + self.G),
            "dyn-4A": abs(self.dynamical - 4 * self.area),
            "geo+2A": abs(self.geometric + 2 * self.area),
            "total-2A": abs(self.total - 2 * self.area),
            "total-(dyn+geo)": abs(self.total - self.dynamical - self.geometric),
        }


def phase_decomposition(f: Callable, Omega: float, t_f: float, z0: complex = 0j,
                        hbar: float = 1.0, epsabs: float = 1e-12) -> PhaseBreakdown:
    """Total, dynamical and geometric phases of one driven mode.

    The dynamical part uses the trajectory starting at ``z0``; the total
    phase uses the particular solution from rest.
    """
    particular = solve_forced_oscillator(f, Omega, t_f, 0j, hbar=hbar)
    general = particular if z0 == 0 else solve_forced_oscillator(f, Omega, t_f, z0, hbar=hbar)
    G = action_integral(particular, epsabs)
    dyn = _panel_quad(lambda s: f(s) * general.evaluate(s)[0], t_f, epsabs * hbar) / hbar
    area = rotating_area(general)
    total = -G
    return PhaseBreakdown(total, dyn, total - dyn, area, G)


def offset_sensitivity(alpha: Callable, delta_f: float, t_f: float, hbar: float = 1.0,
                       epsabs: float = 1e-14) -> float:
    """First-order phase shift ``(delta_f / 2hbar) int alpha dt`` from a constant force offset."""
    if delta_f == 0:
        return 0.0
    return delta_f / (2 * hbar) * _panel_quad(alpha, t_f, epsabs, n=16)


# -- design-level helpers (natural units) ----------------------------------

METHODS = ("single", "action", "double", "area")


def config_phase(design, config: str, method: str = "single") -> float:
    """Phase of one spin configuration of ``design`` by the chosen route."""
    modes = ("+", "-")
    w = design.mode_weights(config)
    tf = design.tau
    if method == "single":
        forces = [lambda s, m=m: design.mode_force(config, m, s) for m in modes]
        alphas = [lambda s, m=m: design.alpha(config, m, s) for m in modes]
        dots = [lambda s, m=m: design.alpha(config, m, s, 1) for m in modes]
        return gate_phase_single_integral(forces, alphas, tf, alpha_dots=dots)
    # the remaining routes are quadratic in the mode weight, so solve the drive once
    total = 0.0
    for m in modes:
        if w[m] == 0:
            continue
        total += w[m] ** 2 * _drive_phase(design, m, method)
    return total


def _drive_phase(design, mode, method):
    key = ("phase", mode, method)
    if key in design._cache:
        return design._cache[key]
    W = design.omega(mode)
    tf = design.tau
    f = design.drive
    if method == "action":
        val = -action_integral(solve_forced_oscillator(f, W, tf))
    elif method == "double":
        val = gate_phase_double_integral([f], [W], tf)
    elif method == "double_square":
        val = gate_phase_double_integral([f], [W], tf, form="square")
    elif method == "area":
        val = 2 * rotating_area(solve_forced_oscillator(f, W, tf))
    else:
        raise ValueError(f"unknown method {method!r}")
    design._cache[key] = val
    return val


def delta_phi(design, method: str = "single") -> float:
    """``phi(ud) + phi(du) - phi(uu) - phi(dd)`` by numerical quadrature."""
    signs = {"uu": -1, "ud": 1, "du": 1, "dd": -1}
    return sum(s * config_phase(design, c, method) for c, s in signs.items())
