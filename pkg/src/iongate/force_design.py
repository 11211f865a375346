"""Inverse design of smooth state-dependent forces for two-ion phase gates.

The driven mode ``d`` follows a four-term odd-harmonic cosine trajectory
chosen so that it starts and ends at rest with vanishing force.  The
coefficient vector ``beta = (-5, 9, -5, 1)`` annihilates ``1, k**2, k**4``
over the harmonics ``k_n = (2n - 1) pi / t_f``; writing the ansatz as::

    alpha_d(t) = lam * sum_n beta_n (k_n**2 - Omega_o**2) cos(k_n t)

fixes ``a_0..a_3`` in terms of ``a_4`` and makes the response of the other
mode ``o`` to the same force close on itself as well.  The single remaining
amplitude ``lam`` is set by the target differential phase.

Internally everything is in natural units (hbar = m1 = omega1 = 1, see
:meth:`iongate.normal_modes.IonPair.units`); :class:`ForceProfile` converts
to newtons and seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import integrate

from .errors import (
    CriticalTimeProximity,
    DegenerateModes,
    DegenerateRatio,
    InvalidDuration,
    NonRealCoefficient,
    NonRealScaling,
    OutOfRange,
    QuadratureFailure,
)
from .normal_modes import (
    IonPair,
    NormalModeBasis,
    mode_force_matrix,
    mode_vectors,
)

BETA = np.array([-5.0, 9.0, -5.0, 1.0])
ODD = np.array([1.0, 3.0, 5.0, 7.0])
GUARD_BAND = 0.01

CONFIGS = {"uu": (1, 1), "ud": (1, -1), "du": (-1, 1), "dd": (-1, -1)}
# sign with which each configuration enters phi(ud) + phi(du) - phi(uu) - phi(dd)
DELTA_SIGNS = {"uu": -1, "ud": 1, "du": 1, "dd": -1}


class Variant(str, Enum):
    STRETCH = "stretch_ansatz"
    COM = "com_ansatz"
    PARALLEL_FIRST = "parallel_first"


# driven mode and reference spin configuration of each inversion scheme
_VARIANT_ROLES = {
    Variant.STRETCH: ("+", "ud"),
    Variant.COM: ("-", "ud"),
    Variant.PARALLEL_FIRST: ("+", "uu"),
}


def _config(config) -> str:
    if isinstance(config, str):
        if config not in CONFIGS:
            raise ValueError(f"unknown spin configuration {config!r}")
        return config
    for name, spins in CONFIGS.items():
        if tuple(config) == spins:
            return name
    raise ValueError(f"unknown spin configuration {config!r}")


@dataclass(frozen=True)
class AnsatzCoefficients:
    """Cosine coefficients ``a0..a4`` (kg^1/2 m) of the driven-mode trajectory."""

    a0: float
    a1: float
    a2: float
    a3: float
    a4: float
    applies_to_mode: str
    spin_config: str

    def as_tuple(self):
        return (self.a0, self.a1, self.a2, self.a3, self.a4)

    def boundary_residuals(self) -> tuple[float, float]:
        """Deviations from ``a1 = 2a3 + 5a4`` and ``a2 = -3a3 - 6a4``."""
        return (self.a1 - (2 * self.a3 + 5 * self.a4), self.a2 - (-3 * self.a3 - 6 * self.a4))


@dataclass(frozen=True)
class CriticalTimes:
    t1: float
    t2: float
    delta: float

    def __post_init__(self):
        if not 0 < self.t1 < self.t2:
            raise ValueError("critical times must satisfy 0 < t1 < t2")

    def as_tuple(self):
        return (self.t1, self.t2)


@dataclass(frozen=True)
class GateDesign:
    """Closed-form description of a designed gate.

    Methods without an ``_si`` suffix take and return natural units.
    ``ratio`` holds ``(c1, c2)`` and ``tilde_scale`` the factors relating the
    generic control functions to the base forces ``F_a``, ``F_b``.
    """

    ions: IonPair
    basis: NormalModeBasis
    t_f: float
    gamma: float
    coeffs: AnsatzCoefficients
    variant: Variant
    amplitude: float
    sign: int = 1
    ratio: tuple[float, float] = (-1.0, -1.0)
    tilde_scale: tuple[float, float] = (1.0, 1.0)
    scaling: float = 1.0
    critical: CriticalTimes | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- geometry of the scheme ------------------------------------------

    @property
    def tau(self) -> float:
        return self.t_f * self.ions.omega1

    @property
    def driven_mode(self) -> str:
        return _VARIANT_ROLES[self.variant][0]

    @property
    def other_mode(self) -> str:
        return "-" if self.driven_mode == "+" else "+"

    @property
    def reference_config(self) -> str:
        return _VARIANT_ROLES[self.variant][1]

    def omega(self, mode: str) -> float:
        return self.basis.frequency(mode) / self.ions.omega1

    @property
    def k(self) -> np.ndarray:
        return ODD * np.pi / self.tau

    @property
    def base_coefficients(self) -> tuple[float, float]:
        """``(c_a, c_b)`` with ``F_a = c_a f_d`` and ``F_b = c_b f_d``."""
        return _base_coefficients(self.ions, self.basis, self.variant)

    def multipliers(self) -> dict[int, dict[int, float]]:
        """``F_i(sigma) = multipliers()[i][sigma] * F_base_i`` for ion ``i``."""
        (c1, c2), (sa, sb) = self.ratio, self.tilde_scale
        return {1: {1: -c1 * sa, -1: -sa}, 2: {1: -c2 * sb, -1: -sb}}

    def mode_weights(self, config) -> dict[str, float]:
        """Mode forces of ``config`` as multiples of the drive shape ``f_d``."""
        key = ("w", _config(config))
        if key not in self._cache:
            s1, s2 = CONFIGS[_config(config)]
            mult = self.multipliers()
            ca, cb = self.base_coefficients
            lab = np.array([mult[1][s1] * ca, mult[2][s2] * cb])
            p = mode_force_matrix(_natural_pair(self.ions), self.basis_natural) @ lab
            self._cache[key] = {"+": float(p[0]), "-": float(p[1])}
        return self._cache[key]

    @property
    def basis_natural(self) -> NormalModeBasis:
        w = self.ions.omega1
        b = self.basis
        return replace(b, Omega_plus=b.Omega_plus / w, Omega_minus=b.Omega_minus / w,
                       lambda_plus=b.lambda_plus / w**2, lambda_minus=b.lambda_minus / w**2)

    # -- closed forms (natural units) ------------------------------------

    def _cos_coeffs(self, mode: str) -> np.ndarray:
        """Cosine coefficients of the zero-initial-condition response of ``mode`` to f_d."""
        partner = self.other_mode if mode == self.driven_mode else self.driven_mode
        return self.amplitude * BETA * (self.k**2 - self.omega(partner) ** 2)

    def drive_coeffs(self) -> np.ndarray:
        od, oo = self.omega(self.driven_mode), self.omega(self.other_mode)
        k2 = self.k**2
        return -self.amplitude * BETA * (k2 - oo**2) * (k2 - od**2)

    def drive(self, t, deriv: int = 0):
        """Drive shape ``f_d(t)``; every mode force is a multiple of it."""
        return _cos_series(self.drive_coeffs(), self.k, t, deriv)

    def mode_force(self, config, mode: str, t):
        return self.mode_weights(config)[mode] * self.drive(t)

    def alpha(self, config, mode: str, t, deriv: int = 0):
        """Mass-weighted trajectory of ``mode`` (or a time derivative)."""
        w = self.mode_weights(config)[mode]
        return w * _cos_series(self._cos_coeffs(mode), self.k, t, deriv)

    def base_forces(self, t):
        """``(F_a, F_b)`` from the cosine series."""
        ca, cb = self.base_coefficients
        f = self.drive(t)
        return ca * f, cb * f

    def config_forces(self, config, t):
        s1, s2 = CONFIGS[_config(config)]
        mult = self.multipliers()
        fa, fb = self.base_forces(t)
        return mult[1][s1] * fa, mult[2][s2] * fb

    def drive_integrals(self) -> dict[str, float]:
        """``J_j = int_0^tau f_d R_j dt`` for both modes, by cosine orthogonality."""
        fd = self.drive_coeffs()
        return {m: 0.5 * self.tau * float(np.sum(fd * self._cos_coeffs(m))) for m in ("+", "-")}

    def config_phase(self, config) -> float:
        """Analytic gate phase (rad) picked up by one spin configuration."""
        J = self.drive_integrals()
        w = self.mode_weights(config)
        return 0.5 * sum(w[m] ** 2 * J[m] for m in ("+", "-"))

    def analytic_delta_phi(self) -> float:
        return sum(DELTA_SIGNS[c] * self.config_phase(c) for c in CONFIGS)

    def f_tilde_integral(self) -> float:
        """Time integral of the c-number term for every configuration (all vanish by symmetry)."""
        return 0.0

    # -- SI conveniences --------------------------------------------------

    def alpha_si(self, config, mode, t, deriv: int = 0):
        u = self.ions.units()
        tn = np.asarray(t, dtype=float) / u.time
        return self.alpha(config, mode, tn, deriv) * u.mass_weighted_length / u.time**deriv

    def peak_amplitude(self, config, mode, n: int = 2001) -> float:
        t = np.linspace(0, self.tau, n)
        return float(np.max(np.abs(self.alpha(config, mode, t))))

    def to_dict(self) -> dict:
        a = self.coeffs
        return {
            "variant": self.variant.value,
            "m1_kg": self.ions.m1,
            "mass_ratio": self.ions.mass_ratio,
            "omega1_rad_s": self.ions.omega1,
            "t_f_s": self.t_f,
            "gamma_rad": self.gamma,
            "sign_branch": self.sign,
            "ansatz": {
                "mode": a.applies_to_mode,
                "spin_config": a.spin_config,
                "a": list(a.as_tuple()),
                "units": "kg^0.5 m",
            },
            "Omega_plus_rad_s": self.basis.Omega_plus,
            "Omega_minus_rad_s": self.basis.Omega_minus,
            "mode_vectors": {"a_plus": self.basis.a_plus, "a_minus": self.basis.a_minus,
                             "b_plus": self.basis.b_plus, "b_minus": self.basis.b_minus},
            "ratio_c1_c2": list(self.ratio),
            "tilde_scale": list(self.tilde_scale),
            "scaling_C": self.scaling,
            "critical_times_s": None if self.critical is None else list(self.critical.as_tuple()),
            "analytic_delta_phi_rad": self.analytic_delta_phi(),
        }


def _cos_series(coeffs, k, t, deriv=0):
    t = np.asarray(t, dtype=float)
    phase = np.multiply.outer(t, k)
    if deriv % 4 == 0:
        basis, sgn = np.cos(phase), 1.0
    elif deriv % 4 == 1:
        basis, sgn = np.sin(phase), -1.0
    elif deriv % 4 == 2:
        basis, sgn = np.cos(phase), -1.0
    else:
        basis, sgn = np.sin(phase), 1.0
    return sgn * basis @ (coeffs * k**deriv)


def _natural_pair(ions: IonPair) -> IonPair:
    return IonPair(1.0, ions.mass_ratio, 1.0, ions.constants)


def _base_coefficients(ions: IonPair, basis: NormalModeBasis, variant: Variant):
    """Solve for the lab forces that drive only mode ``d`` in the reference configuration."""
    mode, ref = _VARIANT_ROLES[variant]
    M = mode_force_matrix(_natural_pair(ions), basis)
    target = np.array([1.0, 0.0]) if mode == "+" else np.array([0.0, 1.0])
    F1, F2 = np.linalg.solve(M, target)
    s1, s2 = CONFIGS[ref]
    return float(F1 * s1), float(F2 * s2)


# -- critical times --------------------------------------------------------

def _quartic_factor(t_f, Op, Om):
    """Bracket ``2051 pi^4 + 11 t^4 Om^2 Op^2 - 119 pi^2 t^2 (Om^2 + Op^2)``."""
    pi2 = np.pi**2
    t2 = np.asarray(t_f, dtype=float) ** 2
    return 2051 * pi2**2 + 11 * t2**2 * Om**2 * Op**2 - 119 * pi2 * t2 * (Om**2 + Op**2)


def delta_function(t_f, ions: IonPair, basis: NormalModeBasis | None = None):
    """Denominator Delta(t_f) of the different-mass amplitude (1/s)."""
    basis = mode_vectors(ions) if basis is None else basis
    Op, Om = basis.Omega_plus, basis.Omega_minus
    t_f = np.asarray(t_f, dtype=float)
    return 6 * ions.mass_ratio * (Om**2 - Op**2) * t_f * _quartic_factor(t_f, Op, Om)


def critical_times(basis: NormalModeBasis) -> CriticalTimes | None:
    """Positive durations where the different-mass forces diverge.

    Returns ``None`` when Delta has no positive root besides zero
    (e.g. equal masses).
    """
    Op, Om = basis.Omega_plus, basis.Omega_minus
    if math.isclose(Op, Om, rel_tol=1e-14):
        raise DegenerateModes("Omega_plus == Omega_minus")
    d2 = 7 * (2023 * Om**4 - 8846 * Om**2 * Op**2 + 2023 * Op**4)
    if d2 < 0:
        return None
    delta = math.sqrt(d2)
    s = 119 * (Om**2 + Op**2)
    den = 22 * Om**2 * Op**2
    lo, hi = (s - delta) / den, (s + delta) / den
    if lo <= 0:
        return None
    return CriticalTimes(np.pi * math.sqrt(lo), np.pi * math.sqrt(hi), delta)


def _check_guard(t_f: float, crit: CriticalTimes | None, guard: float):
    if crit is None:
        return
    for tc in crit.as_tuple():
        if abs(t_f - tc) < guard * tc:
            raise CriticalTimeProximity(t_f, crit.as_tuple(), guard)


# -- paper closed forms ----------------------------------------------------

def a4_equal_mass(t_f, omega, gamma, hbar=1.0, sign=1):
    """Amplitude a4 for equal masses (any consistent units).

    Same structure as the published expression; the prefactor carries
    ``(t^2 w^2 - 49 pi^2)`` rather than ``3 (t^2 w^2 - 49 pi^2)``, which is
    what makes the resulting differential phase equal ``gamma``.
    """
    x2 = (t_f * omega) ** 2
    poly = -2051 * np.pi**4 + 476 * np.pi**2 * x2 - 33 * x2**2
    ratio = gamma / (-12 * t_f * omega**2 * -poly) * hbar
    if np.any(np.asarray(ratio) < 0):
        raise NonRealCoefficient("equal-mass designs need gamma < 0")
    return sign * (x2 - 49 * np.pi**2) * np.sqrt(ratio)


def delta_phi_equal_mass(a4, t_f, omega, hbar=1.0):
    x2 = (t_f * omega) ** 2
    num = 12 * a4**2 * t_f * omega**2 * (-2051 * np.pi**4 + 476 * np.pi**2 * x2 - 33 * x2**2)
    return num / (hbar * (x2 - 49 * np.pi**2) ** 2)


def a4_different_mass(t_f, ions: IonPair, basis: NormalModeBasis, gamma, hbar=1.0, sign=1):
    """Amplitude a4 of the stretch ansatz for unequal masses (SI by default units of inputs)."""
    mu = ions.mass_ratio
    Om = basis.Omega_minus
    D = delta_function(t_f, ions, basis)
    q = gamma * hbar * (1 + (mu - 1) * mu) / D
    if np.any(np.asarray(q) < 0):
        raise NonRealCoefficient("gamma and Delta(t_f) must share a sign")
    return sign * ((t_f * Om) ** 2 - 49 * np.pi**2) * np.sqrt(q)


def delta_phi_different_mass(a4, t_f, ions: IonPair, basis: NormalModeBasis, hbar=1.0):
    mu = ions.mass_ratio
    D = delta_function(t_f, ions, basis)
    return a4**2 * D / (hbar * (1 + (mu - 1) * mu) * ((t_f * basis.Omega_minus) ** 2 - 49 * np.pi**2) ** 2)


def g_coefficients(t_f, Omega_plus, Omega_minus):
    """``(g1, g2, g3)`` of the explicit force; symmetric in the two frequencies."""
    pi2 = np.pi**2
    t2 = t_f**2
    s = Omega_plus**2 + Omega_minus**2
    p = Omega_plus**2 * Omega_minus**2
    g1 = 3 * (401 * pi2**2 + t2**2 * p - 9 * pi2 * t2 * s)
    g2 = 4 * (-181 * pi2**2 - t2**2 * p + 19 * pi2 * t2 * s)
    g3 = (49 * pi2 - t2 * Omega_minus**2) * (49 * pi2 - t2 * Omega_plus**2)
    return g1, g2, g3


def _envelope(t, t_f):
    x = np.pi * np.asarray(t, dtype=float) / t_f
    return np.cos(x) * np.sin(x) ** 2


def _bracket(t, t_f, g):
    x = 2 * np.pi * np.asarray(t, dtype=float) / t_f
    return g[0] + g[1] * np.cos(x) + g[2] * np.cos(2 * x)


def equal_mass_force(t, ions: IonPair, t_f: float, gamma: float = -np.pi):
    """Explicit equal-mass force F(t) in newtons.

    The overall factor is ``2 sqrt(2 pi hbar m / 3) sqrt(-gamma / pi)``; the
    published formula omits the 1/sqrt(3), which would overshoot the maximum
    forces by sqrt(3) (see the Table I reproduction tests).
    """
    if gamma >= 0:
        raise NonRealCoefficient("equal-mass designs need gamma < 0")
    w, m, hbar = ions.omega1, ions.m1, ions.constants.hbar
    pi = np.pi
    x2 = (t_f * w) ** 2
    g1 = 3 * (401 * pi**4 - 36 * pi**2 * x2 + 3 * x2**2)
    g2 = -4 * (181 * pi**4 - 76 * pi**2 * x2 + 3 * x2**2)
    g3 = 2401 * pi**4 - 196 * pi**2 * x2 + 3 * x2**2
    den = t_f**2 * np.sqrt(t_f * w**2 * (2051 * pi**4 - 476 * pi**2 * x2 + 33 * x2**2))
    pref = 2 * np.sqrt(2 * pi * hbar * m / 3) * np.sqrt(-gamma / pi)
    return _bracket(t, t_f, (g1, g2, g3)) / den * pref * _envelope(t, t_f)


# -- force profile ---------------------------------------------------------

@dataclass(frozen=True)
class ForceProfile:
    """SI view of a design's forces.

    ``F_a(t) = prefactor_a * [g1 + g2 cos(2 pi t/t_f) + g3 cos(4 pi t/t_f)]
    * cos(pi t/t_f) sin^2(pi t/t_f)`` and likewise for ``F_b``.
    """

    design: GateDesign
    g: tuple[float, float, float]
    prefactor_a: float
    prefactor_b: float

    @property
    def t_f(self) -> float:
        return self.design.t_f

    def F_a(self, t):
        return self.prefactor_a * _bracket(t, self.t_f, self.g) * _envelope(t, self.t_f)

    def F_b(self, t):
        return self.prefactor_b * _bracket(t, self.t_f, self.g) * _envelope(t, self.t_f)

    def ion_force(self, ion: int, spin: int, t):
        """Force on ``ion`` (1 or 2) when its qubit is in ``spin`` (+1 up, -1 down)."""
        mult = self.design.multipliers()[ion][spin]
        return mult * (self.F_a(t) if ion == 1 else self.F_b(t))

    def config_forces(self, config, t):
        s1, s2 = CONFIGS[_config(config)]
        return self.ion_force(1, s1, t), self.ion_force(2, s2, t)

    def tilde_forces(self, t):
        sa, sb = self.design.tilde_scale
        return sa * self.F_a(t), sb * self.F_b(t)

    def zeros(self) -> np.ndarray:
        """All roots of ``F_a`` in ``[0, t_f]``."""
        g1, g2, g3 = self.g
        # bracket as a polynomial in c = cos(2 pi t / t_f): 2 g3 c^2 + g2 c + (g1 - g3)
        roots = np.roots([2 * g3, g2, g1 - g3]) if g3 != 0 else np.roots([g2, g1 - g3])
        out = [0.0, 0.5 * self.t_f, self.t_f]
        for r in roots:
            if abs(r.imag) < 1e-12 and -1 <= r.real <= 1:
                th = math.acos(r.real) / (2 * np.pi) * self.t_f
                out.extend([th, self.t_f - th])
        return np.unique(np.clip(out, 0.0, self.t_f))

    def max_abs(self, which: str = "a", n: int = 20001) -> float:
        """Maximum of |F_a| (or |F_b|), refined around the coarse peak."""
        from scipy.optimize import minimize_scalar

        fn = self.F_a if which == "a" else self.F_b
        t = np.linspace(0, self.t_f, n)
        v = np.abs(fn(t))
        i = int(np.argmax(v))
        lo, hi = t[max(i - 1, 0)], t[min(i + 1, n - 1)]
        res = minimize_scalar(lambda s: -abs(fn(s)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * self.t_f})
        return float(max(v[i], -res.fun))

    def sample(self, n: int):
        t = np.linspace(0.0, self.t_f, n)
        up1 = self.ion_force(1, 1, t)
        up2 = self.ion_force(2, 1, t)
        return t, up1, up2


def _profile(design: GateDesign) -> ForceProfile:
    u = design.ions.units()
    tau = design.tau
    Op, Om = design.omega("+"), design.omega("-")
    g = g_coefficients(tau, Op, Om)
    ca, cb = design.base_coefficients
    # f_d(t) = 8 lam / tau^4 * bracket * envelope
    scale = 8 * design.amplitude / tau**4 * u.force
    return ForceProfile(design, tuple(float(x) for x in g), ca * scale, cb * scale)


# -- designers -------------------------------------------------------------

def _build(ions: IonPair, t_f: float, gamma: float | None, variant: Variant, sign: int,
           guard: float, crit: CriticalTimes | None):
    if not t_f > 0:
        raise InvalidDuration(f"t_f must be positive, got {t_f}")
    basis = mode_vectors(ions)
    _check_guard(t_f, crit, guard)
    probe = GateDesign(ions, basis, t_f, 0.0, AnsatzCoefficients(0, 0, 0, 0, 0, "+", "ud"),
                       variant, amplitude=1.0, critical=crit)
    unit = probe.analytic_delta_phi()
    if gamma is None:
        gamma = math.copysign(np.pi, unit)
    if unit == 0 or gamma / unit < 0:
        raise NonRealCoefficient(
            f"gamma={gamma:+.6g} has the wrong sign for t_f={t_f:.6g} s "
            f"(Delta phi per unit amplitude is {unit:+.3g})"
        )
    lam = -sign * math.sqrt(gamma / unit)
    design = replace(probe, gamma=gamma, amplitude=lam, sign=sign, _cache={})
    mode, ref = _VARIANT_ROLES[variant]
    c = design._cos_coeffs(mode) * ions.units().mass_weighted_length
    coeffs = AnsatzCoefficients(0.0, *map(float, c), applies_to_mode=mode, spin_config=ref)
    design = replace(design, coeffs=coeffs, _cache={})
    return design, _profile(design)


def design_equal_mass(ions: IonPair, t_f: float, gamma: float = -np.pi, sign: int = 1):
    """Equal-mass gate with ``F_i = sigma_i F(t)``.

    Returns ``(GateDesign, ForceProfile)``.  ``gamma`` must be negative.
    """
    if not ions.equal_masses:
        raise ValueError("design_equal_mass needs mass_ratio == 1")
    if not t_f > 0:
        raise InvalidDuration(f"t_f must be positive, got {t_f}")
    if gamma >= 0:
        raise NonRealCoefficient("equal-mass designs need gamma < 0: the phase polynomial is "
                                 "negative for every t_f")
    return _build(ions, t_f, gamma, Variant.STRETCH, sign, GUARD_BAND, None)


def design_different_mass(ions: IonPair, t_f: float, gamma_magnitude: float = np.pi,
                          variant: Variant | str = Variant.STRETCH, sign: int = 1,
                          guard: float = GUARD_BAND, gamma: float | None = None):
    """Gate for ions of different mass with ``F1 = s1 F_a``, ``F2 = s2 F_b``.

    The sign of the phase follows Delta(t_f): ``-gamma_magnitude`` below the
    first critical time and above the second, ``+gamma_magnitude`` between
    them.  Passing a signed ``gamma`` overrides this and raises
    :class:`NonRealCoefficient` when the sign is inconsistent.
    """
    variant = Variant(variant)
    basis = mode_vectors(ions)
    crit = critical_times(basis) if not ions.equal_masses else None
    if gamma is None:
        if gamma_magnitude <= 0:
            raise ValueError("gamma_magnitude must be positive")
        d, _ = _build(ions, t_f, None, variant, sign, guard, crit)
        gamma = math.copysign(gamma_magnitude, d.gamma)
    return _build(ions, t_f, gamma, variant, sign, guard, crit)


def apply_force_ratio(design: GateDesign, c: float | None = None,
                      c1: float | None = None, c2: float | None = None):
    """Rescale a design for spin-up/spin-down force ratios other than -1.

    With ``F_i(up) = -c F~`` and ``F_i(down) = -F~``: for equal masses and a
    single ``c``, ``F~ = 2 F / (1 - c)``.  Otherwise (``c1``, ``c2``) the
    scaling ``C = 2 sqrt(-c1 / ((c1 - 1)(c2 - 1)))`` gives ``F~_a = -(C/c1) F_a``
    and ``F~_b = C F_b``.  The differential phase is unchanged.
    """
    if design.ratio != (-1.0, -1.0):
        raise ValueError("apply_force_ratio expects a base (c = -1) design")
    if c is not None and (c1 is not None or c2 is not None):
        raise ValueError("give either c or (c1, c2)")
    if c is not None and design.ions.equal_masses:
        if c == 1:
            raise DegenerateRatio("c = 1 gives identical forces for both spin states")
        s = 2.0 / (1.0 - c)
        new = replace(design, ratio=(float(c), float(c)), tilde_scale=(s, s), scaling=1.0, _cache={})
        return new, _profile(new)
    if c is not None:
        c1 = c2 = c
    if c1 is None or c2 is None:
        raise ValueError("c1 and c2 are both required")
    if c1 == 0 or c1 == 1 or c2 == 1:
        raise DegenerateRatio(f"invalid force ratios c1={c1}, c2={c2}")
    C2 = -4 * c1 / ((c1 - 1) * (c2 - 1))
    if C2 < 0:
        raise NonRealScaling(f"C^2 = {C2:.6g} < 0 for c1={c1}, c2={c2}")
    C = math.sqrt(C2)
    a = design.coeffs
    coeffs = replace(a, a0=C * a.a0, a1=C * a.a1, a2=C * a.a2, a3=C * a.a3, a4=C * a.a4)
    new = replace(design, ratio=(float(c1), float(c2)), tilde_scale=(-C / c1, C),
                  scaling=C, coeffs=coeffs, _cache={})
    return new, _profile(new)


def equal_mass_alphas(design: GateDesign, t):
    """``(alpha_+(ud; t), alpha_-(uu; t))`` in kg^1/2 m for an equal-mass design.

    Evaluated from the factorised closed forms rather than the cosine series.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > design.t_f * (1 + 1e-12)):
        raise OutOfRange("t must lie in [0, t_f]")
    u = design.ions.units()
    tau = design.tau
    tn = t / u.time
    x2 = tau**2
    s = np.pi * tn / tau
    common = 32 * design.amplitude / tau**2 * np.cos(s) * np.sin(s) ** 4
    # amplitude already absorbs a4 / (49 pi^2 - x^2)
    ap = (11 * np.pi**2 + x2 + (49 * np.pi**2 - x2) * np.cos(2 * s)) * common
    am = (11 * np.pi**2 + 3 * x2 + (49 * np.pi**2 - 3 * x2) * np.cos(2 * s)) * common
    return ap * u.mass_weighted_length, am * u.mass_weighted_length


def force_integral_proxy(profile: ForceProfile, which: str = "a", normalize_by: float | None = None,
                         epsrel: float = 1e-12) -> float:
    """``int_0^t_f |F(t)| dt`` (N s) by piecewise adaptive quadrature between sign changes."""
    fn = profile.F_a if which == "a" else profile.F_b
    pts = profile.zeros()
    total = 0.0
    err = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi - lo <= 0:
            continue
        val, e = integrate.quad(lambda s: abs(fn(s)), lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)
        total += val
        err += e
    if total > 0 and err > 1e-8 * total:
        raise QuadratureFailure(f"|F| integral error estimate {err:.3g} too large")
    if normalize_by:
        total /= normalize_by
    return total


def write_force_csv(profile: ForceProfile, path, n: int = 1001, header_lines=()) -> None:
    """Columns ``t_seconds, F1_up_newton, F2_up_newton``; ``#`` lines for metadata."""
    t, f1, f2 = profile.sample(n)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t_seconds,F1_up_newton,F2_up_newton\n")
        for row in zip(t, f1, f2):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def design_record(design: GateDesign, profile: ForceProfile | None = None) -> dict:
    rec = design.to_dict()
    profile = _profile(design) if profile is None else profile
    rec["force"] = {
        "g": list(profile.g),
        "prefactor_a_N": profile.prefactor_a,
        "prefactor_b_N": profile.prefactor_b,
        "max_abs_F_a_N": profile.max_abs("a"),
        "max_abs_F_b_N": profile.max_abs("b"),
    }
    return rec
