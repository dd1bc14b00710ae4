"""Bound certificates assembled from risk and distance estimates.

Every bound has the shape ``R_sup <= (X - tau * col + a * Min + b * Max) / (1 - tau)``
for some leading term ``X`` and coefficients ``a, b``. A :class:`BoundReport`
keeps every input term with its provenance so the arithmetic can be audited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .pixel_model import GenerativeConfig, analytic_delta_mu, analytic_sigma

VACUOUS_TOL = 1e-12
CENTERING_TOL = 0.05


@dataclass
class Term:
    name: str
    value: float
    std_error: float | None = None
    provenance: str = "input"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "value": self.value, "provenance": self.provenance}
        if self.std_error is not None:
            d["std_error"] = self.std_error
        return d


def as_term(name: str, x: Any, provenance: str = "input") -> Term:
    """Accept a :class:`Term`, a bare number, a ``(value, std_error)`` pair or
    any object with ``value``/``std_error`` attributes."""
    if isinstance(x, Term):
        return Term(name, float(x.value), x.std_error, x.provenance)
    if isinstance(x, tuple):
        return Term(name, float(x[0]), float(x[1]), provenance)
    if hasattr(x, "value"):
        return Term(name, float(x.value), float(getattr(x, "std_error", 0.0)), provenance)
    return Term(name, float(x), None, provenance)


@dataclass
class BoundReport:
    theorem: str
    terms: list[Term]
    lhs: float | None
    rhs: float
    flags: dict[str, Any] = field(default_factory=dict)
    slack: float | None = field(init=False)

    def __post_init__(self) -> None:
        self.slack = None if self.lhs is None or not math.isfinite(self.rhs) else self.rhs - self.lhs

    def term(self, name: str) -> Term:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "theorem": self.theorem,
            "terms": [t.to_dict() for t in self.terms],
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "flags": dict(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)


REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["theorem", "terms", "lhs", "rhs", "slack", "flags"],
    "properties": {
        "theorem": {"type": "string"},
        "terms": {"type": "array", "items": {
            "type": "object",
            "required": ["name", "value", "provenance"],
            "properties": {"name": {"type": "string"}, "value": {"type": "number"},
                           "std_error": {"type": "number"}, "provenance": {"type": "string"}},
        }},
        "lhs": {"type": ["number", "null"]},
        "rhs": {"type": "number"},
        "slack": {"type": ["number", "null"]},
        "flags": {"type": "object"},
    },
}


def validate_report_dict(d: dict[str, Any]) -> None:
    """Minimal structural check against :data:`REPORT_SCHEMA`."""
    for key in REPORT_SCHEMA["required"]:
        if key not in d:
            raise ValueError(f"report is missing {key!r}")
    for i, t in enumerate(d["terms"]):
        for key in ("name", "value", "provenance"):
            if key not in t:
                raise ValueError(f"terms[{i}] is missing {key!r}")


def _assemble(theorem: str, lead: list[Term], tau: Term, col: Term, dist: list[tuple[Term, float]],
              lhs: Term | None, flags: dict[str, Any]) -> BoundReport:
    terms = lead + [tau, col] + [t for t, _ in dist]
    if lhs is not None:
        terms.append(lhs)
    flags = dict(flags)
    flags["vacuous"] = tau.value >= 1.0 - VACUOUS_TOL
    if flags["vacuous"]:
        rhs = math.inf
    else:
        inner = sum(t.value for t in lead) - tau.value * col.value + sum(coef * t.value for t, coef in dist)
        rhs = inner / (1.0 - tau.value)
    return BoundReport(theorem, terms, None if lhs is None else lhs.value, rhs, flags)


def bound_thm1(R_un: Any, tau: Any, col: Any, min_term: Any, max_term: Any, R_sup: Any = None,
               flags: dict[str, Any] | None = None) -> BoundReport:
    """Augmentation-aware bound with coefficient 5 on the max term."""
    return _assemble(
        "thm1", [as_term("R_un", R_un)], as_term("tau_K", tau), as_term("col_term", col),
        [(as_term("min_term", min_term), 1.0), (as_term("max_term", max_term), 5.0)],
        None if R_sup is None else as_term("R_sup", R_sup), flags or {},
    )


def bound_thm2(R_un: Any, tau: Any, col: Any, min_term: Any, max_term: Any, R_sup: Any = None,
               centering_residuals: list[float] | None = None, tol: float = CENTERING_TOL,
               flags: dict[str, Any] | None = None) -> BoundReport:
    """Improved bound (coefficient 1 on the max term), valid when views are
    centred on the original image. The centring flag is set only when the
    residuals were supplied and all fall below ``tol``."""
    flags = dict(flags or {})
    if centering_residuals is None or len(centering_residuals) == 0:
        flags.update(centering_checked=False, centering_ok=False, max_centering_residual=None)
    else:
        worst = float(max(centering_residuals))
        flags.update(centering_checked=True, centering_ok=worst <= tol, max_centering_residual=worst,
                     centering_tol=tol)
    return _assemble(
        "thm2", [as_term("R_un", R_un)], as_term("tau_K", tau), as_term("col_term", col),
        [(as_term("min_term", min_term), 1.0), (as_term("max_term", max_term), 1.0)],
        None if R_sup is None else as_term("R_sup", R_sup), flags,
    )


def concentration_term(B: float, n: int, delta: float) -> float:
    """``3 B sqrt(log(2 / delta) / (2 n))``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return 3.0 * B * math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def bound_thm3(R_hat: Any, rad: Any, R: float, B: float, n: int, delta: float, tau: Any, col: Any,
               min_term: Any, max_term: Any, R_sup: Any = None,
               flags: dict[str, Any] | None = None) -> BoundReport:
    """Generalisation version: empirical risk plus Rademacher and concentration terms."""
    rad_t = as_term("rademacher", rad)
    conc = concentration_term(B, n, delta)
    lead = [
        as_term("R_hat_un", R_hat),
        Term("complexity", 12.0 * R * rad_t.value / n, None if rad_t.std_error is None else 12.0 * R * rad_t.std_error / n,
             "12 R Rad / n"),
        Term("concentration", conc, None, "3 B sqrt(log(2/delta) / (2n))"),
    ]
    flags = dict(flags or {})
    flags.update(R=R, B=B, n=n, delta=delta)
    return _assemble(
        "thm3", lead, as_term("tau_K", tau), as_term("col_term", col),
        [(as_term("min_term", min_term), 1.0), (as_term("max_term", max_term), 5.0)],
        None if R_sup is None else as_term("R_sup", R_sup), flags,
    )


def bound_thm6(R_un: Any, tau: Any, col: Any, pixel_min: Any, pixel_max: Any, c_L: float, R_sup: Any = None,
               centering_ok: bool | None = None, lipschitz_estimated: bool = True,
               flags: dict[str, Any] | None = None) -> BoundReport:
    """Pixel-level bound: both distance terms scaled by the Lipschitz constant,
    max coefficient 1."""
    if c_L < 0:
        raise ValueError("c_L must be non-negative")
    pmin, pmax = as_term("pixel_min_term", pixel_min), as_term("pixel_max_term", pixel_max)
    flags = dict(flags or {})
    flags.update(c_L=c_L, centering_ok=centering_ok, lipschitz_is_lower_estimate=lipschitz_estimated)
    scaled = [
        (Term("c_L*pixel_min_term", c_L * pmin.value, None if pmin.std_error is None else c_L * pmin.std_error,
              pmin.provenance), 1.0),
        (Term("c_L*pixel_max_term", c_L * pmax.value, None if pmax.std_error is None else c_L * pmax.std_error,
              pmax.provenance), 1.0),
    ]
    return _assemble("thm6", [as_term("R_un", R_un)], as_term("tau_K", tau), as_term("col_term", col), scaled,
                     None if R_sup is None else as_term("R_sup", R_sup), flags)


def analytic_crop_bound(config: GenerativeConfig, semantics: list[int], offmax_count: int = 0,
                        with_color: bool = False) -> float:
    """Analytic bound on the min cross-image pixel distance of a crop.

    ``semantics`` lists the semantic ids present in the crop. The noise part is
    ``2 sigma`` (crop only) or ``sigma`` (crop and brightness), with ``sigma``
    the largest over the present semantics. With more than one semantic a bias
    ``sqrt(offmax_count) * max pairwise Delta mu`` is added.
    """
    if not semantics:
        raise ValueError("need at least one semantic")
    if offmax_count < 0:
        raise ValueError("offmax_count must be >= 0")
    sigma = max(analytic_sigma(config, s) for s in semantics)
    noise = sigma if with_color else 2.0 * sigma
    present = sorted(set(semantics))
    if len(present) < 2 or offmax_count == 0:
        return noise
    dmu = max(analytic_delta_mu(config, s, t) for i, s in enumerate(present) for t in present[i + 1:])
    return noise + math.sqrt(offmax_count * dmu**2)
