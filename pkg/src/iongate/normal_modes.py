"""Equilibrium geometry and axial normal modes of a two-ion crystal.

Ion 1 sits on the left (``x1 < x2``) and is the lighter one, so the mass
ratio ``mu = m2 / m1`` is always ``>= 1``.  Both ions feel the same spring
constant ``u0 = m1 * omega1**2 = m2 * omega2**2``.

Types carry SI values.  Numerical work elsewhere in the package happens in
the natural units returned by :meth:`IonPair.units` (hbar = m1 = omega1 = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import constants as sc

# mass numbers as used for the species presets; masses are taken as A * u
SPECIES_MASS_NUMBER = {
    "Be9": 9,
    "Mg24": 24,
    "Mg25": 25,
    "Ca40": 40,
    "Sr88": 88,
    "Ba138": 138,
}
SPECIES_ALIASES = {"Be": "Be9", "Mg": "Mg24", "Ca": "Ca40", "Sr": "Sr88", "Ba": "Ba138"}


def species_mass_amu(name: str | float) -> float:
    """Mass in atomic mass units for a preset name (``"Be"``, ``"Mg25"``) or a number."""
    if isinstance(name, (int, float)):
        return float(name)
    key = name.strip()
    try:
        return float(key)
    except ValueError:
        pass
    key = SPECIES_ALIASES.get(key, key)
    if key not in SPECIES_MASS_NUMBER:
        raise ValueError(f"unknown species {name!r}; known: {sorted(SPECIES_MASS_NUMBER)}")
    return float(SPECIES_MASS_NUMBER[key])


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    coulomb_constant: float = sc.e**2 / (4 * np.pi * sc.epsilon_0)
    atomic_mass_unit: float = sc.atomic_mass

    def __post_init__(self):
        if min(self.hbar, self.coulomb_constant, self.atomic_mass_unit) <= 0:
            raise ValueError("physical constants must be strictly positive")


CODATA = PhysicalConstants()


@dataclass(frozen=True)
class NaturalUnits:
    """Scales that make hbar, m1 and omega1 equal to one."""

    time: float
    length: float
    mass: float
    energy: float
    force: float

    @property
    def mass_weighted_length(self) -> float:
        return np.sqrt(self.mass) * self.length


@dataclass(frozen=True)
class IonPair:
    """Two ions in a common harmonic well.

    Parameters
    ----------
    m1 : float
        Mass of the left (lighter) ion in kg.
    mass_ratio : float
        ``m2 / m1``; kept exactly as supplied.
    omega1 : float
        Trap angular frequency felt by ion 1 (rad/s).
    """

    m1: float
    mass_ratio: float
    omega1: float
    constants: PhysicalConstants = field(default=CODATA, repr=False)

    def __post_init__(self):
        if self.m1 <= 0 or self.omega1 <= 0:
            raise ValueError("m1 and omega1 must be positive")
        if not self.mass_ratio >= 1.0:
            raise ValueError(
                f"mass_ratio={self.mass_ratio} < 1: the lighter ion must be ion 1 (left)"
            )

    @classmethod
    def from_amu(cls, m1_amu: float, m2_amu: float, omega1: float,
                 constants: PhysicalConstants = CODATA) -> "IonPair":
        return cls(m1_amu * constants.atomic_mass_unit, m2_amu / m1_amu, omega1, constants)

    @classmethod
    def from_species(cls, species1: str | float, species2: str | float | None = None,
                     freq_mhz: float = 2.0) -> "IonPair":
        """Build from preset names; ``freq_mhz`` is omega1 / 2pi in MHz."""
        a1 = species_mass_amu(species1)
        a2 = a1 if species2 is None else species_mass_amu(species2)
        return cls.from_amu(a1, a2, 2 * np.pi * freq_mhz * 1e6)

    @property
    def m2(self) -> float:
        return self.mass_ratio * self.m1

    @property
    def spring_constant(self) -> float:
        return self.m1 * self.omega1**2

    @property
    def omega2(self) -> float:
        return self.omega1 / np.sqrt(self.mass_ratio)

    @property
    def equal_masses(self) -> bool:
        return self.mass_ratio == 1.0

    def units(self) -> NaturalUnits:
        hbar = self.constants.hbar
        length = np.sqrt(hbar / (self.m1 * self.omega1))
        energy = hbar * self.omega1
        return NaturalUnits(time=1.0 / self.omega1, length=length, mass=self.m1,
                            energy=energy, force=energy / length)


@dataclass(frozen=True)
class EquilibriumGeometry:
    x1_0: float
    x2_0: float
    x0: float
    E0: float

    def __post_init__(self):
        if not self.x1_0 < self.x2_0:
            raise ValueError("equilibrium must satisfy x1_0 < x2_0")


@dataclass(frozen=True)
class NormalModeBasis:
    """Axial modes; ``+`` is the stretch mode and ``-`` the centre-of-mass-like one."""

    Omega_plus: float
    Omega_minus: float
    a_plus: float
    a_minus: float
    b_plus: float
    b_minus: float
    lambda_plus: float
    lambda_minus: float

    def frequency(self, mode: str) -> float:
        return self.Omega_plus if mode == "+" else self.Omega_minus

    def orthonormality_residuals(self) -> tuple[float, float, float]:
        ap, am, bp, bm = self.a_plus, self.a_minus, self.b_plus, self.b_minus
        return (
            max(abs(ap**2 + bp**2 - 1), abs(am**2 + bm**2 - 1)),
            abs(ap * am + bp * bm),
            abs(ap * bm - am * bp - 1),
        )


@dataclass(frozen=True)
class ModeForces:
    """Normal-mode forces (kg^1/2 m / s^2) and the c-number energy term (J)."""

    f_plus: Callable
    f_minus: Callable
    f_tilde: Callable


def coulomb_potential(x1, x2, ions: IonPair, geom: EquilibriumGeometry | None = None):
    """Static potential of both ions measured from its minimum (J)."""
    geom = equilibrium_config(ions) if geom is None else geom
    u0 = ions.spring_constant
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return 0.5 * u0 * (x1**2 + x2**2) + ions.constants.coulomb_constant / (x2 - x1) - geom.E0


def equilibrium_config(ions: IonPair) -> EquilibriumGeometry:
    half = np.cbrt(ions.constants.coulomb_constant / (4 * ions.spring_constant))
    x0 = 2 * half
    return EquilibriumGeometry(-half, half, x0, 0.75 * ions.spring_constant * x0**2)


def _eigen_pieces(mu: float) -> tuple[float, float]:
    root = np.sqrt(1 - 1 / mu + 1 / mu**2)
    return 1 + 1 / mu, root


def mode_frequencies(ions: IonPair) -> tuple[float, float]:
    """Return ``(Omega_plus, Omega_minus)`` in rad/s."""
    base, root = _eigen_pieces(ions.mass_ratio)
    w2 = ions.omega1**2
    return np.sqrt(w2 * (base + root)), np.sqrt(w2 * (base - root))


def mode_vectors(ions: IonPair) -> NormalModeBasis:
    mu = ions.mass_ratio
    base, root = _eigen_pieces(mu)
    vec = {}
    for sign, label in ((1, "+"), (-1, "-")):
        q = 1 - 1 / mu - sign * root
        a = np.sqrt(1 / (1 + q**2 * mu))
        vec[label] = (a, q * np.sqrt(mu) * a)
    w2 = ions.omega1**2
    lp, lm = w2 * (base + root), w2 * (base - root)
    return NormalModeBasis(
        Omega_plus=np.sqrt(lp), Omega_minus=np.sqrt(lm),
        a_plus=vec["+"][0], a_minus=vec["-"][0],
        b_plus=vec["+"][1], b_minus=vec["-"][1],
        lambda_plus=lp, lambda_minus=lm,
    )


def lab_to_modes(x1, x2, ions: IonPair, geom: EquilibriumGeometry,
                 basis: NormalModeBasis):
    """Lab positions (m) to mass-weighted mode coordinates (kg^1/2 m)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(x1 >= x2):
        raise ValueError("ion ordering violated: need x1 < x2")
    s1 = np.sqrt(ions.m1) * (x1 - geom.x1_0)
    s2 = np.sqrt(ions.m2) * (x2 - geom.x2_0)
    return basis.a_plus * s1 + basis.b_plus * s2, basis.a_minus * s1 + basis.b_minus * s2


def modes_to_lab(sx_plus, sx_minus, ions: IonPair, geom: EquilibriumGeometry,
                 basis: NormalModeBasis):
    sx_plus = np.asarray(sx_plus, dtype=float)
    sx_minus = np.asarray(sx_minus, dtype=float)
    x1 = (basis.b_minus * sx_plus - basis.b_plus * sx_minus) / np.sqrt(ions.m1) - geom.x0 / 2
    x2 = (-basis.a_minus * sx_plus + basis.a_plus * sx_minus) / np.sqrt(ions.m2) + geom.x0 / 2
    return x1, x2


def mode_force_matrix(ions: IonPair, basis: NormalModeBasis) -> np.ndarray:
    """Matrix ``M`` with ``(f_plus, f_minus) = M @ (F1, F2)``."""
    r1, r2 = 1 / np.sqrt(ions.m1), 1 / np.sqrt(ions.m2)
    return np.array([
        [-basis.b_minus * r1, basis.a_minus * r2],
        [basis.b_plus * r1, -basis.a_plus * r2],
    ])


def spin_forces_to_mode_forces(F1, F2, ions: IonPair, basis: NormalModeBasis,
                               geom: EquilibriumGeometry) -> ModeForces:
    """Project lab forces onto the modes.

    ``F1``/``F2`` may be callables of time or constants.
    """
    (m11, m12), (m21, m22) = mode_force_matrix(ions, basis)
    F1 = F1 if callable(F1) else _const(F1)
    F2 = F2 if callable(F2) else _const(F2)
    half = geom.x0 / 2
    return ModeForces(
        f_plus=lambda t: m11 * F1(t) + m12 * F2(t),
        f_minus=lambda t: m21 * F1(t) + m22 * F2(t),
        f_tilde=lambda t: half * (F2(t) - F1(t)),
    )


def _const(value):
    return lambda t: value * np.ones_like(np.asarray(t, dtype=float))


def ground_state_widths(ions: IonPair, basis: NormalModeBasis | None = None) -> tuple[float, float]:
    """Position spread (m) of each ion in the harmonic two-mode ground state."""
    basis = mode_vectors(ions) if basis is None else basis
    hbar = ions.constants.hbar
    vp = hbar / (2 * basis.Omega_plus)
    vm = hbar / (2 * basis.Omega_minus)
    var1 = (basis.b_minus**2 * vp + basis.b_plus**2 * vm) / ions.m1
    var2 = (basis.a_minus**2 * vp + basis.a_plus**2 * vm) / ions.m2
    return float(np.sqrt(var1)), float(np.sqrt(var2))
