"""
Physical parameters, unit conventions and thermal conversions.

Internally everything is dimensionless: hbar = k_B = 1 and every rate is a
multiple of the mechanical frequency omega_c (which is therefore 1).  Kelvin
only appears when a physical mechanical frequency ``omega_c_hz`` (in rad/s)
is attached to the parameter set.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

# CODATA-2018 exact values
HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K

# gamma, g << omega_c is checked against this fraction of omega_c
WEAK_COUPLING_FRACTION = 0.1


@dataclass(frozen=True)
class SystemParams:
    """Rates and bath occupations of the three-mode system.

    All rates are in units of the mechanical frequency.  ``kappa`` and
    ``gamma`` are amplitude decay rates, so the energy decay rates are
    ``2 * kappa`` and ``2 * gamma``.  ``omega_c_hz`` is an optional physical
    mechanical angular frequency in rad/s, used only for Kelvin conversion.
    """

    kappa: float
    gamma: float
    g: float
    n_b: float = 0.0
    n_c: float = 0.0
    delta: float = 1.0
    omega_c: float = 1.0
    omega_c_hz: float | None = None

    def replace(self, **changes: Any) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SystemParams":
        """Build from a mapping whose keys are exactly field names.

        Unknown keys raise ``ValueError``; missing required keys raise
        ``TypeError`` like the constructor would.
        """
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown parameter keys: {', '.join(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, source: str | Path) -> "SystemParams":
        text = Path(source).read_text() if isinstance(source, Path) else source
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise ValueError("; ".join(self.errors))


def validate(params: SystemParams) -> ValidationReport:
    """Check hard invariants and the soft validity conditions.

    Hard violations land in ``errors``.  ``warnings`` flags leaving the weak
    coupling regime (gamma or g not small against omega_c) and detuning away
    from the mechanical resonance.
    """
    errors: list[str] = []
    warnings: list[str] = []
    p = params
    for name in ("kappa", "gamma", "g", "n_b", "n_c", "delta", "omega_c"):
        if not math.isfinite(getattr(p, name)):
            errors.append(f"{name} must be finite")
    if not p.omega_c > 0:
        errors.append("omega_c must be positive")
    if not p.kappa > 0:
        errors.append("kappa must be positive")
    if not p.gamma > 0:
        errors.append("gamma must be positive")
    if not p.g >= 0:
        errors.append("g must be non-negative")
    if not p.n_b >= 0:
        errors.append("n_b must be non-negative")
    if not p.n_c >= 0:
        errors.append("n_c must be non-negative")
    if p.omega_c_hz is not None and not p.omega_c_hz > 0:
        errors.append("omega_c_hz must be positive when given")

    limit = WEAK_COUPLING_FRACTION * p.omega_c
    if p.gamma >= limit or p.g >= limit:
        warnings.append("weak-coupling regime violated (need gamma, g << omega_c)")
    if not math.isclose(p.delta, p.omega_c, rel_tol=1e-9):
        warnings.append("detuning delta differs from omega_c (off resonance)")
    return ValidationReport(tuple(errors), tuple(warnings))


def thermal_occupation(T: float, omega: float) -> float:
    """Bose-Einstein occupation of a mode at angular frequency ``omega`` (rad/s)."""
    if T < 0:
        raise ValueError("temperature must be non-negative")
    if not omega > 0:
        raise ValueError("omega must be positive")
    if T == 0:
        return 0.0
    x = HBAR * omega / (K_B * T)
    return 1.0 / math.expm1(x)


def effective_temperature(n: float, omega: float) -> float:
    """Temperature (K) of the Gibbs state with mean occupation ``n``."""
    if n < 0:
        raise ValueError("occupation must be non-negative")
    if not omega > 0:
        raise ValueError("omega must be positive")
    if n == 0:
        return 0.0
    return HBAR * omega / (K_B * math.log1p(1.0 / n))


def dimensionless_temperature(n: float) -> float:
    """Gibbs temperature for occupation ``n`` in units of hbar*omega_c/k_B."""
    if n < 0:
        raise ValueError("occupation must be non-negative")
    if n == 0:
        return 0.0
    return 1.0 / math.log1p(1.0 / n)


def report_temperature(n: float, params: SystemParams) -> float:
    """Kelvin when ``omega_c_hz`` is set, otherwise units of hbar*omega_c/k_B."""
    if params.omega_c_hz is None:
        return dimensionless_temperature(n)
    return effective_temperature(n, params.omega_c_hz)


ROOM_TEMPERATURE_OMEGA = 2 * math.pi * 1e6  # rad/s


def room_temperature(n_b: float = 0.0) -> SystemParams:
    """Membrane-like setting at 300 K and omega_c = 2 pi MHz.

    The mechanical occupation follows from the Planck law at 300 K, it is a
    derived default rather than a quoted number.
    """
    return SystemParams(
        kappa=0.2,
        gamma=1e-3,
        g=0.3e-5,
        n_b=n_b,
        n_c=thermal_occupation(300.0, ROOM_TEMPERATURE_OMEGA),
        omega_c_hz=ROOM_TEMPERATURE_OMEGA,
    )


QUANTUM_REGIME = SystemParams(kappa=0.1, gamma=0.01, g=0.006, n_b=1.0, n_c=1.0)
