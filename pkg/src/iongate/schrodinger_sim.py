"""Exact two-ion dynamics on a 2D position grid.

The wavefunction lives on absolute ion positions ``(x1, x2)`` in natural
units (see :meth:`IonPair.units`).  Real-time steps use a Strang split
``T/2, V(t + dt/2), T/2`` with spectral kinetic factors; consecutive
kinetic half steps are merged so each step costs two 2D FFTs.

The static potential is written relative to equilibrium,
``V0 = (d1^2 + d2^2)/2 + s^2 / (2 (1 + s/x0))`` with ``d_i = x_i - x_i0``
and ``s = d2 - d1``, which equals the Coulomb form minus ``E0`` but avoids
cancelling large numbers.
"""

from __future__ import annotations

import json
import math
import struct
import time as _time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .errors import (
    BoundaryLeak,
    GridMismatch,
    GridTooNarrow,
    NoConvergence,
    NormDrift,
)
from .force_design import CONFIGS, DELTA_SIGNS, GateDesign, _config
from .normal_modes import IonPair, equilibrium_config, ground_state_widths, mode_vectors

POTENTIAL_CAP = 1e6
SNAPSHOT_MAGIC = b"IGWF"
SNAPSHOT_VERSION = 1


# -- grid and state --------------------------------------------------------

@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid; extents in metres, ``length_unit`` converts to natural units."""

    n1: int
    n2: int
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    length_unit: float

    def __post_init__(self):
        for n in (self.n1, self.n2):
            if n < 2 or n & (n - 1):
                raise ValueError(f"grid sizes must be powers of two, got {n}")
        if not (self.x1_min < self.x1_max and self.x2_min < self.x2_max):
            raise ValueError("grid extents must be increasing")

    @property
    def dx1(self) -> float:
        return (self.x1_max - self.x1_min) / self.n1

    @property
    def dx2(self) -> float:
        return (self.x2_max - self.x2_min) / self.n2

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Natural-unit coordinates along each axis."""
        x1 = (self.x1_min + self.dx1 * np.arange(self.n1)) / self.length_unit
        x2 = (self.x2_min + self.dx2 * np.arange(self.n2)) / self.length_unit
        return x1, x2

    @property
    def cell(self) -> float:
        return self.dx1 * self.dx2 / self.length_unit**2

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        d1, d2 = self.dx1 / self.length_unit, self.dx2 / self.length_unit
        return 2 * np.pi * sfft.fftfreq(self.n1, d1), 2 * np.pi * sfft.fftfreq(self.n2, d2)

    def same_as(self, other: "Grid2D") -> bool:
        return (self.n1, self.n2) == (other.n1, other.n2) and np.allclose(
            [self.x1_min, self.x1_max, self.x2_min, self.x2_max, self.length_unit],
            [other.x1_min, other.x1_max, other.x2_min, other.x2_max, other.length_unit],
            rtol=1e-14, atol=0.0)


@dataclass
class WaveFunction2D:
    psi: np.ndarray
    grid: Grid2D
    config: str | None = None
    time: float = 0.0

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.cell))

    def normalized(self) -> "WaveFunction2D":
        return WaveFunction2D(self.psi / self.norm(), self.grid, self.config, self.time)

    def boundary_amplitude(self) -> float:
        """Largest edge amplitude relative to the peak."""
        a = np.abs(self.psi)
        edge = max(a[0].max(), a[-1].max(), a[:, 0].max(), a[:, -1].max())
        return float(edge / a.max())

    def moments(self) -> dict[str, float]:
        """Means and spreads of each ion position (natural units)."""
        x1, x2 = self.grid.axes()
        rho = np.abs(self.psi) ** 2 * self.grid.cell
        rho /= rho.sum()
        p1, p2 = rho.sum(axis=1), rho.sum(axis=0)
        m1, m2 = p1 @ x1, p2 @ x2
        return {"mean1": float(m1), "mean2": float(m2),
                "width1": float(np.sqrt(p1 @ (x1 - m1) ** 2)),
                "width2": float(np.sqrt(p2 @ (x2 - m2) ** 2))}


def write_snapshot(wf: WaveFunction2D, path) -> None:
    """Binary dump: ``b"IGWF"``, u32 version, u32 n1, u32 n2, 4 f64 extents (m),
    f64 time (s), then ``n1 * n2`` complex128 amplitudes (1/m, row-major over x1).
    All little-endian."""
    g = wf.grid
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<3I", SNAPSHOT_VERSION, g.n1, g.n2))
        fh.write(struct.pack("<5d", g.x1_min, g.x1_max, g.x2_min, g.x2_max, wf.time))
        fh.write((wf.psi / g.length_unit).astype("<c16").tobytes())


def read_snapshot(path, length_unit: float) -> WaveFunction2D:
    with open(path, "rb") as fh:
        if fh.read(4) != SNAPSHOT_MAGIC:
            raise ValueError("not a wavefunction snapshot")
        version, n1, n2 = struct.unpack("<3I", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        x1a, x1b, x2a, x2b, t = struct.unpack("<5d", fh.read(40))
        data = np.frombuffer(fh.read(), dtype="<c16").reshape(n1, n2)
    grid = Grid2D(n1, n2, x1a, x1b, x2a, x2b, length_unit)
    return WaveFunction2D(data.astype(complex) * length_unit, grid, None, t)


# -- forces ----------------------------------------------------------------

class ForceVariant(str, Enum):
    HOMOGENEOUS = "homogeneous"
    SINUSOIDAL = "sinusoidal"


@dataclass(frozen=True)
class ForceModel:
    """Spatial profile of the laser force.

    Homogeneous: potential ``F_i(t) x_i``.  Sinusoidal: potential
    ``F_i(t) sin(dk x_i) / dk``, i.e. force ``F_i(t) sin(dk x_i + pi/2)``.
    ``delta_k`` is in 1/m.
    """

    variant: ForceVariant = ForceVariant.HOMOGENEOUS
    delta_k: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", ForceVariant(self.variant))
        if self.variant is ForceVariant.SINUSOIDAL and self.delta_k <= 0:
            raise ValueError("sinusoidal forces need delta_k > 0")

    def profile(self, x_nat: np.ndarray, length_unit: float) -> np.ndarray:
        """Spatial factor multiplying ``F_i(t)`` in the potential (natural units)."""
        if self.variant is ForceVariant.HOMOGENEOUS:
            return x_nat
        k = self.delta_k * length_unit
        return np.sin(k * x_nat) / k


def delta_k_for_periods(ions: IonPair, periods: int) -> float:
    """Wavenumber (1/m) placing an integer number of periods between the equilibria."""
    if periods <= 0 or int(periods) != periods:
        raise ValueError("periods must be a positive integer")
    return 2 * np.pi * periods / equilibrium_config(ions).x0


def lamb_dicke_validity(design: GateDesign, delta_k: float, ions: IonPair | None = None
                        ) -> tuple[float, float]:
    """Return ``(dk / w) sqrt(hbar / (t_f m))`` and peak excursion over ``pi / dk``."""
    ions = design.ions if ions is None else ions
    if delta_k == 0:
        return 0.0, 0.0
    hbar = ions.constants.hbar
    ratio = delta_k / ions.omega1 * math.sqrt(hbar / (design.t_f * ions.m1))
    exc = max(_peak_excursions(design)) * ions.units().length
    return ratio, exc * delta_k / np.pi


# -- potential -------------------------------------------------------------

def _static_potential(grid: Grid2D, ions: IonPair) -> np.ndarray:
    geom = equilibrium_config(ions)
    ell = grid.length_unit
    x0 = geom.x0 / ell
    x1, x2 = grid.axes()
    d1 = x1 - geom.x1_0 / ell
    d2 = x2 - geom.x2_0 / ell
    s = d2[None, :] - d1[:, None]
    den = 1 + s / x0
    with np.errstate(divide="ignore", invalid="ignore"):
        coul = np.where(den > 1e-6, s**2 / (2 * den), POTENTIAL_CAP)
    v = 0.5 * (d1[:, None] ** 2 + d2[None, :] ** 2) + coul
    return np.minimum(v, POTENTIAL_CAP)


def _force_weights(design: GateDesign | None, config: str) -> tuple[float, float]:
    """``(k1, k2)`` with ``F_i(t) = k_i * design.drive(t)`` in natural units."""
    if design is None:
        return 0.0, 0.0
    s1, s2 = CONFIGS[config]
    mult = design.multipliers()
    ca, cb = design.base_coefficients
    return mult[1][s1] * ca, mult[2][s2] * cb


def build_potential(config, t: float, model: ForceModel, ions: IonPair, grid: Grid2D,
                    design: GateDesign | None = None, si: bool = False) -> np.ndarray:
    """Potential on the grid at natural time ``t`` in units of hbar*omega1 (J if ``si``)."""
    config = _config(config)
    v = _static_potential(grid, ions)
    k1, k2 = _force_weights(design, config)
    drive = float(design.drive(t)) if design is not None else 0.0
    x1, x2 = grid.axes()
    g1 = model.profile(x1, grid.length_unit)
    g2 = model.profile(x2, grid.length_unit)
    v = v + k1 * drive * g1[:, None] + k2 * drive * g2[None, :]
    return v * ions.units().energy if si else v


# -- grid sizing -----------------------------------------------------------

def _lab_displacements(design: GateDesign, config: str, t):
    b = design.basis
    mu = design.ions.mass_ratio
    ap, am = design.alpha(config, "+", t), design.alpha(config, "-", t)
    d1 = b.b_minus * ap - b.b_plus * am
    d2 = (-b.a_minus * ap + b.a_plus * am) / math.sqrt(mu)
    return d1, d2


def _peak_excursions(design: GateDesign | None, n: int = 2001) -> tuple[float, float]:
    if design is None:
        return 0.0, 0.0
    t = np.linspace(0, design.tau, n)
    p1 = p2 = 0.0
    for c in CONFIGS:
        d1, d2 = _lab_displacements(design, c, t)
        p1, p2 = max(p1, float(np.max(np.abs(d1)))), max(p2, float(np.max(np.abs(d2))))
    return p1, p2


def _peak_velocities(design: GateDesign | None, n: int = 2001) -> tuple[float, float]:
    if design is None:
        return 0.0, 0.0
    t = np.linspace(0, design.tau, n)
    b = design.basis
    mu = design.ions.mass_ratio
    v1 = v2 = 0.0
    for c in CONFIGS:
        ap, am = design.alpha(c, "+", t, 1), design.alpha(c, "-", t, 1)
        v1 = max(v1, float(np.max(np.abs(b.b_minus * ap - b.b_plus * am))))
        v2 = max(v2, float(np.max(np.abs((-b.a_minus * ap + b.a_plus * am) / math.sqrt(mu)))))
    return v1, v2


def _widths_natural(ions: IonPair, fock: int = 0) -> tuple[float, float]:
    w1, w2 = ground_state_widths(ions)
    ell = ions.units().length
    scale = math.sqrt(2 * fock + 1)
    return w1 / ell * scale, w2 / ell * scale


def make_grid(ions: IonPair, design: GateDesign | None = None, n: int = 256, n_sigma: float = 8.0,
              excursion_factor: float = 1.2, fock: int = 0, max_n: int = 4096,
              model: ForceModel | None = None) -> Grid2D:
    """Grid centred on the equilibria, sized for the ground-state width and the design excursion.

    Sinusoidal forces squeeze the packet, so they get two extra widths of margin.
    ``n`` is doubled until the grid resolves the peak momentum with the same margin.
    """
    if model is not None and model.variant is ForceVariant.SINUSOIDAL:
        n_sigma += 2.0
    geom = equilibrium_config(ions)
    ell = ions.units().length
    s1, s2 = _widths_natural(ions, fock)
    e1, e2 = _peak_excursions(design)
    h1 = n_sigma * s1 + excursion_factor * e1
    h2 = n_sigma * s2 + excursion_factor * e2
    v1, v2 = _peak_velocities(design)
    # momentum spreads of the (near-Gaussian) packet
    p1 = v1 + n_sigma / (2 * s1)
    p2 = ions.mass_ratio * v2 + n_sigma / (2 * s2)
    while n < max_n and (np.pi * n / (2 * h1) < excursion_factor * p1
                         or np.pi * n / (2 * h2) < excursion_factor * p2):
        n *= 2
    return Grid2D(n, n, geom.x1_0 - h1 * ell, geom.x1_0 + h1 * ell,
                  geom.x2_0 - h2 * ell, geom.x2_0 + h2 * ell, ell)


def check_grid(grid: Grid2D, ions: IonPair, design: GateDesign | None, n_sigma: float = 6.0,
               fock: int = 0) -> None:
    geom = equilibrium_config(ions)
    ell = grid.length_unit
    s1, s2 = _widths_natural(ions, fock)
    e1, e2 = _peak_excursions(design)
    need1 = (n_sigma * s1 + e1) * ell
    need2 = (n_sigma * s2 + e2) * ell
    if (geom.x1_0 - need1 < grid.x1_min or geom.x1_0 + need1 > grid.x1_max
            or geom.x2_0 - need2 < grid.x2_min or geom.x2_0 + need2 > grid.x2_max):
        raise GridTooNarrow(
            f"grid must cover equilibria +- ({need1:.3g} m, {need2:.3g} m) "
            f"(excursion plus {n_sigma:g} widths)"
        )


# -- propagators -----------------------------------------------------------

def _kinetic(grid: Grid2D, mass_ratio: float) -> np.ndarray:
    k1, k2 = grid.wavenumbers()
    return 0.5 * k1[:, None] ** 2 + 0.5 * k2[None, :] ** 2 / mass_ratio


def _apply(factor, psi, workers=None):
    return sfft.ifft2(factor * sfft.fft2(psi, norm="ortho", workers=workers), norm="ortho",
                      workers=workers)


def energy(wf: WaveFunction2D, ions: IonPair, V: np.ndarray | None = None) -> float:
    """Energy expectation (natural units) with the static potential unless ``V`` is given."""
    V = _static_potential(wf.grid, ions) if V is None else V
    psik = sfft.fft2(wf.psi, norm="ortho")
    kin = np.sum(np.abs(psik) ** 2 * _kinetic(wf.grid, ions.mass_ratio))
    pot = np.sum(np.abs(wf.psi) ** 2 * V)
    return float((kin + pot) * wf.grid.cell / wf.norm() ** 2)


def harmonic_ground_state(grid: Grid2D, ions: IonPair) -> WaveFunction2D:
    return fock_initial_state(grid, ions, 0)


@dataclass(frozen=True)
class GroundState:
    state: WaveFunction2D
    energy: float
    energies: tuple[float, ...]
    steps: int


def imaginary_time_ground_state(grid: Grid2D, ions: IonPair,
                                schedule: tuple[float, ...] = (0.04, 0.01, 0.0025),
                                rtol: float = 1e-12, max_steps: int = 50_000,
                                guess: WaveFunction2D | None = None) -> GroundState:
    """Relax a guess in imaginary time with a decreasing step schedule.

    Each stage runs until the relative energy change per step is below
    ``rtol``.  A step that would raise the energy ends its stage without
    being taken: the splitting's fixed point for that step size lies above
    the current state, so only a smaller step can improve it.  The recorded
    energies (natural units) therefore never increase.
    """
    wf = harmonic_ground_state(grid, ions) if guess is None else guess.normalized()
    V = _static_potential(grid, ions)
    T = _kinetic(grid, ions.mass_ratio)
    psi = wf.psi
    energies = [energy(wf, ions, V)]
    steps = 0
    for dtau in schedule:
        half = np.exp(-0.5 * dtau * T)
        pot = np.exp(-dtau * V)
        for _ in range(max_steps):
            trial = _apply(half, pot * _apply(half, psi))
            trial /= np.sqrt(np.sum(np.abs(trial) ** 2) * grid.cell)
            e = energy(WaveFunction2D(trial, grid), ions, V)
            change = e - energies[-1]
            if change >= rtol * abs(e):
                break
            psi = trial
            steps += 1
            energies.append(e)
            if abs(change) < rtol * abs(e):
                break
        else:
            raise NoConvergence(f"imaginary-time stage dtau={dtau} did not converge in {max_steps} steps")
    state = WaveFunction2D(psi, grid, None, 0.0)
    return GroundState(state, energies[-1], tuple(energies), steps)


def _hermite_functions(n_max: int, x: np.ndarray) -> np.ndarray:
    """Normalised oscillator eigenfunctions ``psi_0..psi_n`` for unit frequency."""
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi**-0.25 * np.exp(-0.5 * x**2)
    if n_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(2, n_max + 1):
        out[k] = np.sqrt(2.0 / k) * x * out[k - 1] - np.sqrt((k - 1) / k) * out[k - 2]
    return out


def fock_initial_state(grid: Grid2D, ions: IonPair, n_plus: int, n_minus: int = 0,
                       check: bool = True) -> WaveFunction2D:
    """Harmonic eigenstate ``|n_-, n_+>`` mapped to lab coordinates."""
    if n_plus < 0 or n_minus < 0:
        raise ValueError("occupation numbers must be non-negative")
    if check:
        check_grid(grid, ions, None, fock=max(n_plus, n_minus))
    geom = equilibrium_config(ions)
    b = mode_vectors(ions)
    w = ions.omega1
    Wp, Wm = b.Omega_plus / w, b.Omega_minus / w
    ell = grid.length_unit
    mu = ions.mass_ratio
    x1, x2 = grid.axes()
    s1 = (x1 - geom.x1_0 / ell)[:, None]
    s2 = math.sqrt(mu) * (x2 - geom.x2_0 / ell)[None, :]
    Xp = b.a_plus * s1 + b.b_plus * s2
    Xm = b.a_minus * s1 + b.b_minus * s2
    hp = _hermite_functions(n_plus, math.sqrt(Wp) * Xp)[n_plus] * Wp**0.25
    hm = _hermite_functions(n_minus, math.sqrt(Wm) * Xm)[n_minus] * Wm**0.25
    # Jacobian of (x1, x2) -> (X+, X-) is sqrt(mu)
    psi = (hp * hm * mu**0.25).astype(complex)
    return WaveFunction2D(psi, grid).normalized()


@dataclass
class Propagation:
    state: WaveFunction2D
    steps: int
    dt: float
    max_norm_drift: float
    max_boundary: float


def propagate_real_time(psi0: WaveFunction2D, design: GateDesign | None, model: ForceModel,
                        config, ions: IonPair | None = None, dt_divisor: int = 4096,
                        t_f: float | None = None, check_every: int = 64,
                        norm_tol: float = 1e-8, leak_tol: float = 1e-6,
                        workers: int | None = None) -> Propagation:
    """Evolve ``psi0`` under the full Hamiltonian for one spin configuration.

    ``t_f`` is natural time and defaults to the design duration;
    ``dt = t_f / dt_divisor``.
    """
    config = _config(config)
    ions = design.ions if ions is None else ions
    grid = psi0.grid
    if t_f is None:
        if design is None:
            raise ValueError("t_f required without a design")
        t_f = design.tau
    check_grid(grid, ions, design)
    nsteps = int(dt_divisor)
    dt = t_f / nsteps
    V0 = _static_potential(grid, ions)
    static = np.exp(-1j * dt * V0)
    T = _kinetic(grid, ions.mass_ratio)
    half, full = np.exp(-0.5j * dt * T), np.exp(-1j * dt * T)
    x1, x2 = grid.axes()
    g1 = model.profile(x1, grid.length_unit)
    g2 = model.profile(x2, grid.length_unit)
    mids = (np.arange(nsteps) + 0.5) * dt
    k1, k2 = _force_weights(design, config)
    drive = design.drive(mids) if design is not None else np.zeros(nsteps)
    f1, f2 = k1 * drive, k2 * drive
    norm0 = psi0.norm()
    psi = psi0.psi.astype(complex, copy=True)
    psi = _apply(half, psi, workers)
    drift = 0.0
    leak = 0.0
    for j in range(nsteps):
        psi *= static
        psi *= np.exp(-1j * dt * f1[j] * g1)[:, None]
        psi *= np.exp(-1j * dt * f2[j] * g2)[None, :]
        psi = _apply(full if j < nsteps - 1 else half, psi, workers)
        if (j + 1) % check_every == 0 or j == nsteps - 1:
            wf = WaveFunction2D(psi, grid)
            drift = max(drift, abs(wf.norm() - norm0))
            leak = max(leak, wf.boundary_amplitude())
            if drift > norm_tol:
                raise NormDrift(f"norm drifted by {drift:.3g} at step {j + 1}")
            if leak > leak_tol:
                raise BoundaryLeak(f"boundary amplitude {leak:.3g} at step {j + 1}; widen the grid")
    return Propagation(WaveFunction2D(psi, grid, config, t_f), nsteps, dt, drift, leak)


# -- analysis --------------------------------------------------------------

def overlap(psi0: WaveFunction2D, psif: WaveFunction2D) -> complex:
    if not psi0.grid.same_as(psif.grid):
        raise GridMismatch("wavefunctions live on different grids")
    return complex(np.vdot(psi0.psi, psif.psi) * psi0.grid.cell)


def overlap_and_phase(psi0: WaveFunction2D, psif: WaveFunction2D) -> tuple[complex, float, float]:
    """Return ``(S, |S|, arg S in [0, 2pi))``."""
    S = overlap(psi0, psif)
    return S, abs(S), float(np.mod(np.angle(S), 2 * np.pi))


def worst_case_infidelity(S, delta_phi: float) -> float:
    """``1 - |S|^2 cos^2(delta_phi - pi)``."""
    a = abs(S)
    if a > 1 + 1e-10:
        raise ValueError(f"|S| = {a} exceeds one")
    return float(1 - min(a, 1.0) ** 2 * math.cos(delta_phi - np.pi) ** 2)


def superposition_fidelity(weights, eps, deltas) -> tuple[float, float]:
    """Exact fidelity of a spin superposition and the worst-case lower bound.

    ``weights`` are ``|c_s|^2``; ``eps`` the motional overlaps and ``deltas``
    the phase errors per configuration.
    """
    w = np.asarray(weights, dtype=float)
    e = np.asarray(eps, dtype=float)
    d = np.asarray(deltas, dtype=float)
    w = w / w.sum()
    exact = abs(np.sum(w * e * np.exp(1j * d))) ** 2
    bound = float(np.min(e * np.cos(d)) ** 2)
    return float(exact), bound


def predicted_overlap_phase(design: GateDesign | None, config, ions: IonPair | None = None,
                            t_f: float | None = None, n_plus: int = 0) -> float:
    """Harmonic-model phase of ``<psi0|psi(t_f)>``, unwrapped (rad)."""
    from .phase_model import config_phase

    ions = design.ions if ions is None else ions
    b = mode_vectors(ions)
    w = ions.omega1
    tau = design.tau if t_f is None else t_f
    base = -((n_plus + 0.5) * b.Omega_plus + 0.5 * b.Omega_minus) / w * tau
    return base if design is None else base + config_phase(design, _config(config))


def _nearest_branch(value: float, target: float) -> float:
    return value + 2 * np.pi * round((target - value) / (2 * np.pi))


@dataclass
class SimResult:
    overlaps: dict[str, complex]
    phases: dict[str, float]
    predicted: dict[str, float]
    delta_phi: float
    delta_phi_wrapped: float
    infidelity: float
    meta: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    @property
    def abs_overlaps(self) -> dict[str, float]:
        return {k: abs(v) for k, v in self.overlaps.items()}

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "overlaps": {k: [v.real, v.imag] for k, v in self.overlaps.items()},
            "abs_overlaps": self.abs_overlaps,
            "phases_rad": self.phases,
            "predicted_phases_rad": self.predicted,
            "delta_phi_rad": self.delta_phi,
            "delta_phi_wrapped_rad": self.delta_phi_wrapped,
            "worst_case_infidelity": self.infidelity,
            "meta": self.meta,
        }
        if include_runtime:
            d["runtime_s"] = self.runtime_s
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


def differential_phase_experiment(design: GateDesign | None, model: ForceModel,
                                  initial: WaveFunction2D, ions: IonPair | None = None,
                                  configs: tuple[str, ...] | None = None, dt_divisor: int = 4096,
                                  t_f: float | None = None, n_plus: int = 0,
                                  target: float | None = None, workers: int | None = None,
                                  runner: Callable | None = None) -> SimResult:
    """Run the spin configurations and combine their overlap phases.

    With ``configs=("ud", "uu")`` (the equal-mass default) the result is
    ``2 [phi(ud) - phi(uu)]``; with all four it is
    ``phi(ud) + phi(du) - phi(uu) - phi(dd)``.  The value is moved onto the
    2 pi branch nearest ``target`` (default: the design's gamma).
    """
    ions = design.ions if ions is None else ions
    if configs is None:
        configs = ("ud", "uu") if ions.equal_masses else tuple(CONFIGS)
    start = _time.perf_counter()
    run = runner or (lambda c: propagate_real_time(initial, design, model, c, ions, dt_divisor, t_f,
                                                   workers=workers))
    overlaps, phases, predicted, meta_runs = {}, {}, {}, {}
    for c in configs:
        prop = run(c)
        S, _, ph = overlap_and_phase(initial, prop.state)
        overlaps[c] = S
        phases[c] = ph
        predicted[c] = float(np.mod(predicted_overlap_phase(design, c, ions, t_f, n_plus), 2 * np.pi))
        meta_runs[c] = {"steps": prop.steps, "dt_natural": prop.dt,
                        "max_norm_drift": prop.max_norm_drift, "max_boundary": prop.max_boundary}
    if set(configs) == set(CONFIGS):
        raw = sum(DELTA_SIGNS[c] * phases[c] for c in configs)
    elif set(configs) == {"ud", "uu"}:
        raw = 2 * (phases["ud"] - phases["uu"])
    else:
        raise ValueError("configs must be ('ud', 'uu') or all four")
    if target is None:
        target = design.gamma if design is not None else 0.0
    dphi = _nearest_branch(raw, target)
    anti = "ud" if "ud" in overlaps else configs[0]
    meta = {
        "grid": [initial.grid.n1, initial.grid.n2],
        "extents_m": [initial.grid.x1_min, initial.grid.x1_max, initial.grid.x2_min, initial.grid.x2_max],
        "force_model": model.variant.value,
        "delta_k_per_m": model.delta_k,
        "dt_divisor": dt_divisor,
        "runs": meta_runs,
    }
    return SimResult(overlaps, phases, predicted, float(dphi), float(np.mod(raw, 2 * np.pi)),
                     worst_case_infidelity(overlaps[anti], dphi), meta,
                     _time.perf_counter() - start)


def converged_experiment(design: GateDesign | None, model: ForceModel, initial: WaveFunction2D,
                         dt_divisor: int = 4096, tol: float = 1e-3, max_halvings: int = 4,
                         **kw) -> tuple[SimResult, float]:
    """Halve ``dt`` until the differential phase moves by less than ``tol``.

    Returns the finer result and the last change (rad).
    """
    prev = differential_phase_experiment(design, model, initial, dt_divisor=dt_divisor, **kw)
    for _ in range(max_halvings):
        dt_divisor *= 2
        cur = differential_phase_experiment(design, model, initial, dt_divisor=dt_divisor, **kw)
        change = abs(cur.delta_phi - prev.delta_phi)
        if change < tol:
            cur.meta["dt_change_rad"] = change
            return cur, change
        prev = cur
    raise NoConvergence(f"differential phase still changing by {change:.3g} rad at dt = t_f/{dt_divisor}")
