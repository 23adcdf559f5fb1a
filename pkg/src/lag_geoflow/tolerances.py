"""Numerical tolerances shared by all modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import InvalidInput


@dataclass(frozen=True)
class ToleranceProfile:
    """All numerical thresholds in one place.

    Every field can be overridden, e.g. ``DEFAULT.with_overrides(leaf_tol=1e-9)``
    or from the command line with ``--tol leaf_tol=1e-9``.
    """

    root_sep_rel: float = 1e-8
    root_sep_floor: float = 1e-10
    root_residual: float = 1e-10
    root_fprime: float = 1e-6
    newton_root_steps: int = 10
    seed_tol: float = 1e-8
    delta_branch: float = 1e-6
    branch_residual: float = 1e-12
    on_fiber: float = 1e-10
    endpoint_root: float = 1e-8
    positivity_floor: float = 1e-6
    special_tol: float = 1e-6
    mean_zero: float = 1e-9
    sing_radius: float = 1e-4
    leaf_tol: float = 1e-8
    trace_rtol: float = 1e-11
    trace_atol: float = 1e-13
    step_min: float = 1e-12
    chart_radius_factor: float = 0.25
    chart_enter: float = 0.8
    local_inverse_tol: float = 1e-12
    hit_tol: float = 1e-10
    z_compat: float = 0.2
    audit_fraction: float = 0.1
    domain_factor: float = 3.0
    cross_tol: float = 1e-4
    isometry_tol: float = 1e-4
    confinement_tol: float = 1e-6
    horizontal_tol: float = 1e-6

    def with_overrides(self, **kwargs) -> "ToleranceProfile":
        names = {f.name: f.type for f in fields(self)}
        clean = {}
        for key, val in kwargs.items():
            if key not in names:
                raise InvalidInput(f"unknown tolerance '{key}'")
            clean[key] = int(val) if names[key] in ("int", int) else float(val)
        return replace(self, **clean)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = ToleranceProfile()
