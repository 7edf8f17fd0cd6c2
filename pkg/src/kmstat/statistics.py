"""Kaplan-Meier V- and U-statistics, MMD against a fixed null, and their targets."""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import DegenerateWeightMass
from .models import require_continuous
from .operators import projection_phi, tail_expectation, OUTER_RTOL
from .survival import KaplanMeierFit, diagonal_term

_BLOCK = 2048


@dataclass(frozen=True)
class StatisticResult:
    value: float
    n: int
    n_events: int
    scaling_hint: Optional[str] = None
    components: dict = field(default_factory=dict)

    def to_dict(self):
        return {"value": self.value, "n": self.n, "n_events": self.n_events,
                "scaling_hint": self.scaling_hint, "components": dict(self.components)}


def _quadratic_form(x, w, kernel):
    """``w^T K w`` over the points ``x``, built in row blocks."""
    if x.size == 0:
        return 0.0
    factor = getattr(kernel, "factor", None)
    if factor is not None:
        return float(np.dot(w, factor(x))) ** 2
    total = 0.0
    for a in range(0, x.size, _BLOCK):
        block = kernel(x[a:a + _BLOCK, None], x[None, :])
        total += float(w[a:a + _BLOCK] @ (np.asarray(block, dtype=float) @ w))
    return total


def vstat(fit: KaplanMeierFit, kernel) -> float:
    """``sum_i sum_j W_i W_j K(X_i, X_j)`` over uncensored observations."""
    x, w = fit.event_support()
    return _quadratic_form(x, w, kernel)


def pair_mass(fit: KaplanMeierFit) -> float:
    """``sum_{i != j} W_i W_j = (sum W)^2 - sum W^2``."""
    _, w = fit.event_support()
    return float(np.sum(w)) ** 2 - float(np.sum(w * w))


def ustat(fit: KaplanMeierFit, kernel) -> float:
    """Off-diagonal version: ``(V - sum K(X_i, X_i) W_i^2) / sum_{i != j} W_i W_j``."""
    return ustat_result(fit, kernel).value


def ustat_result(fit: KaplanMeierFit, kernel) -> StatisticResult:
    v = vstat(fit, kernel)
    diag = diagonal_term(fit, kernel)
    mass = pair_mass(fit)
    if not mass > 0.0:
        raise DegenerateWeightMass(
            f"pair mass {mass!r} <= 0: the U-statistic needs at least two uncensored observations")
    return StatisticResult((v - diag) / mass, fit.n, fit.sample.n_events,
                           components={"vstat": v, "diagonal": diag, "pair_mass": mass})


def vstat_result(fit: KaplanMeierFit, kernel) -> StatisticResult:
    v = vstat(fit, kernel)
    return StatisticResult(v, fit.n, fit.sample.n_events,
                           components={"vstat": v, "diagonal": diagonal_term(fit, kernel),
                                       "pair_mass": pair_mass(fit)})


@lru_cache(maxsize=64)
def theta_limit(model, kernel, tau=np.inf) -> float:
    """Population target ``int_0^tau int_0^tau K(x, y) dF(x) dF(y)``."""
    require_continuous(model)
    phi = projection_phi(model, kernel, tau)
    exact_phi = kernel.phi_rule is not None and kernel.phi_rule(model, tau) is not None
    return float(tail_expectation(model, lambda s, idx: phi(s), [0.0], tau,
                                  rtol=1e-12 if exact_phi else OUTER_RTOL)[0])


def mmd2_result(fit: KaplanMeierFit, kernel, null_model) -> StatisticResult:
    require_continuous(null_model)
    v = vstat(fit, kernel)
    x, w = fit.event_support()
    phi0 = projection_phi(null_model, kernel)
    cross = float(np.dot(w, np.asarray(phi0(x), dtype=float))) if x.size else 0.0
    theta0 = theta_limit(null_model, kernel)
    return StatisticResult(v - 2.0 * cross + theta0, fit.n, fit.sample.n_events,
                           scaling_hint="n",
                           components={"vstat": v, "cross": cross, "theta_null": theta0})


def mmd2(fit: KaplanMeierFit, kernel, null_model) -> float:
    """Squared MMD between the Kaplan-Meier estimator and ``null_model``.

    ``V - 2 sum_i W_i phi0(X_i) + theta(F0)``, with ``phi0`` the projection of
    the kernel under the null.
    """
    return mmd2_result(fit, kernel, null_model).value


def mmd_kernel(kernel, null_model):
    """Kernel whose V-statistic is the squared MMD to ``null_model`` when the
    Kaplan-Meier mass is one: ``K(x, y) - phi0(x) - phi0(y) + theta(F0)``.

    Its projection under the null vanishes, and its transformed kernel is
    that of ``kernel`` because the forward operator removes functions of a
    single argument.
    """
    from .kernels import Kernel
    phi0 = projection_phi(null_model, kernel)
    theta0 = theta_limit(null_model, kernel)

    def func(x, y):
        return kernel(x, y) - phi0(x) - phi0(y) + theta0

    def phi_rule(model, tau):
        if model == null_model and (np.isinf(tau) or float(model.cdf(tau)) == 1.0):
            return lambda y: np.zeros(np.shape(y))
        return None

    def kprime_rule(model, tau):
        return kernel.kprime_rule(model, tau) if kernel.kprime_rule is not None else None

    return Kernel(f"mmd[{kernel.name}]", (kernel, null_model), func,
                  positive_definite=kernel.positive_definite, bounded=kernel.bounded,
                  phi_rule=phi_rule, kprime_rule=kprime_rule)
