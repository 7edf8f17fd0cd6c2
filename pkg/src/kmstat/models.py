"""Analytic survival/censoring model pairs and sampling of censored data.

Survival laws wrap a frozen :mod:`scipy.stats` distribution, so every
family scipy ships can be plugged in; only the exponential family has a
constructor and a spec string here. Censoring is described through its
survivor function ``1 - G`` plus an optional sampler.

Model spec strings (CLI)::

    exp:RATE      exponential survival, S(x) = exp(-RATE x)
    kg:GAMMA      Koziol-Green censoring, 1 - G = S**GAMMA  (kg:0 = none)
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy import stats

from .errors import (InvalidParameter, ModelNotContinuous, ModelNotSamplable,
                     QuadratureFailure)
from .survival import CensoredSample

_TINY = np.finfo(float).tiny


def make_rng(seed, *key):
    """Counter-based stream keyed by ``(seed, *key)``.

    Streams for different keys are independent, so replication ``k`` draws
    the same numbers whatever order or process it runs in.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(0 if rng is None else rng)


@dataclass(frozen=True)
class SurvivalModel:
    """Survival-time law ``F`` with ``S = 1 - F`` and ``Lambda = -log S``."""

    family: str
    params: tuple
    dist: Any = field(compare=False, repr=False)

    @property
    def continuous(self):
        return isinstance(getattr(self.dist, "dist", None), stats.rv_continuous)

    @property
    def tau(self):
        return float(self.dist.support()[1])

    @property
    def spec(self):
        if self.family == "exponential":
            return f"exp:{self.params[0]!r}"
        return f"{self.family}:{','.join(repr(p) for p in self.params)}"

    def cdf(self, x):
        return self.dist.cdf(x)

    def sf(self, x):
        return self.dist.sf(x)

    def logsf(self, x):
        return self.dist.logsf(x)

    def pdf(self, x):
        return self.dist.pdf(x)

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def ppf(self, p):
        return self.dist.ppf(p)

    def isf(self, q):
        return self.dist.isf(q)

    def quantile(self, p):
        return self.dist.ppf(p)

    def cumhaz(self, x):
        return -self.dist.logsf(x)

    def hazard(self, x):
        return np.exp(self.dist.logpdf(x) - self.dist.logsf(x))

    def mean(self):
        return float(self.dist.mean())


@dataclass(frozen=True)
class CensoringModel:
    """Censoring law ``G`` given by its survivor function ``1 - G``.

    For continuous laws the left limit ``1 - G(x-)`` equals ``1 - G(x)``.
    """

    name: str
    params: tuple
    survivor: Callable = field(compare=False, repr=False)
    sampler: Optional[Callable] = field(default=None, compare=False, repr=False)
    tau: float = np.inf
    continuous: bool = True
    log_survivor: Optional[Callable] = field(default=None, compare=False, repr=False)

    def cdf(self, x):
        return 1.0 - self.survivor(x)

    def logsurvivor(self, x):
        if self.log_survivor is not None:
            return self.log_survivor(x)
        with np.errstate(divide="ignore"):
            return np.log(self.survivor(x))

    def survivor_left(self, x):
        if not self.continuous:
            raise ModelNotContinuous("left limits of a discrete censoring law are not supported")
        return self.survivor(x)

    def sample(self, rng, n):
        if self.sampler is None:
            raise ModelNotSamplable(f"censoring model {self.name!r} has no sampler")
        return self.sampler(rng, n)


@dataclass(frozen=True)
class JointModel:
    """Survival law plus independent censoring; ``1 - H = (1 - G) S``."""

    survival: SurvivalModel
    censoring: CensoringModel

    @property
    def tau(self):
        return min(self.survival.tau, self.censoring.tau)

    @property
    def continuous(self):
        return self.survival.continuous and self.censoring.continuous

    @property
    def spec(self):
        return f"{self.survival.spec} {self.censoring.name}:{','.join(repr(p) for p in self.censoring.params)}"

    def weighted_pdf(self, x, power=1.0):
        """``f(x) / (1 - G(x))**power``, formed in logs so that neither factor
        under- or overflows on its own far in the tail."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            lw = self.survival.logpdf(x) - power * self.censoring.logsurvivor(x)
        return np.where(np.isnan(lw), 0.0, np.exp(lw))

    def observed_survivor(self, x):
        return self.censoring.survivor(x) * self.survival.sf(x)

    def event_probability(self):
        """``P(T <= C) = int (1 - G) dF``."""
        from .quadrature import integrate
        require_continuous(self.survival)
        m = self.survival
        hi = m.cdf(self.tau) if np.isfinite(self.tau) else 1.0
        return integrate(lambda u: self.censoring.survivor(m.ppf(u)), 0.0, hi)


def require_continuous(model):
    if not model.continuous:
        raise ModelNotContinuous(f"{model.family!r} is not a continuous model; "
                                 "quadrature-based operations need a density")


def exponential_model(rate) -> SurvivalModel:
    rate = float(rate)
    if not (rate > 0 and np.isfinite(rate)):
        raise InvalidParameter(f"exponential rate must be > 0, got {rate!r}")
    return SurvivalModel("exponential", (rate,), stats.expon(scale=1.0 / rate))


def no_censoring() -> CensoringModel:
    return CensoringModel("kg", (0.0,), survivor=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                          sampler=lambda rng, n: np.full(n, np.inf),
                          log_survivor=lambda x: np.zeros_like(np.asarray(x, dtype=float)))


def koziol_green(base: SurvivalModel, gamma) -> JointModel:
    """Proportional censoring ``1 - G = S**gamma``; ``gamma = 0`` means none."""
    gamma = float(gamma)
    if not (gamma >= 0 and np.isfinite(gamma)):
        raise InvalidParameter(f"Koziol-Green gamma must be >= 0, got {gamma!r}")
    if gamma == 0.0:
        return JointModel(base, no_censoring())

    def log_survivor(x):
        return gamma * base.logsf(x)

    def survivor(x):
        return np.exp(log_survivor(x))

    def sampler(rng, n):
        # S(C) = U**(1/gamma)
        u = rng.uniform(_TINY, 1.0, size=n)
        return base.isf(np.exp(np.log(u) / gamma))

    return JointModel(base, CensoringModel("kg", (gamma,), survivor, sampler, tau=base.tau,
                                           continuous=base.continuous, log_survivor=log_survivor))


def sample_censored(joint: JointModel, n, rng) -> CensoredSample:
    """Draw ``n`` pairs ``(min(T, C), T <= C)`` by inverse-CDF sampling."""
    n = int(n)
    if n < 1:
        raise InvalidParameter(f"sample size must be >= 1, got {n}")
    rng = as_generator(rng)
    u = rng.uniform(_TINY, 1.0, size=n)
    t = joint.survival.isf(u)
    c = joint.censoring.sample(rng, n)
    return CensoredSample.from_arrays(np.minimum(t, c), t <= c)


def _number(text, spec):
    try:
        return float(text)
    except ValueError:
        raise InvalidParameter(f"bad number {text!r} in spec {spec!r}") from None


def parse_model_spec(spec: str) -> SurvivalModel:
    """Parse ``exp:RATE``."""
    family, _, arg = spec.strip().partition(":")
    if family in ("exp", "exponential") and arg:
        return exponential_model(_number(arg, spec))
    raise InvalidParameter(f"unknown model spec {spec!r} (expected exp:RATE)")


def parse_censoring_spec(spec: str, base: SurvivalModel) -> JointModel:
    """Parse ``kg:GAMMA`` (or ``none``) against a survival model."""
    spec = spec.strip()
    if spec in ("none", ""):
        return koziol_green(base, 0.0)
    kind, _, arg = spec.partition(":")
    if kind == "kg" and arg:
        return koziol_green(base, _number(arg, spec))
    raise InvalidParameter(f"unknown censoring spec {spec!r} (expected kg:GAMMA)")


def format_censoring_spec(joint: JointModel) -> str:
    return f"kg:{joint.censoring.params[0]!r}"


# -- Conditions 1 and 2 as numerical diagnostics -----------------------------

@dataclass
class IntegralDiagnostic:
    name: str
    finite: bool
    value: float
    tail_increments: list

    def to_dict(self):
        return {"name": self.name, "finite": self.finite,
                "value": self.value if self.finite else None,
                "tail_increments": self.tail_increments}


@dataclass
class ConditionDiagnostic:
    condition: str
    parts: list

    @property
    def finite(self):
        return all(p.finite for p in self.parts)

    @property
    def value(self):
        return {p.name: (p.value if p.finite else None) for p in self.parts}

    def to_dict(self):
        return {"condition": self.condition, "finite": self.finite,
                "parts": [p.to_dict() for p in self.parts]}


def _tail_start(model):
    return float(model.isf(0.1))


def _single(joint, integrand, name):
    """Outer-only integral ``int_0^tau integrand(x) dx`` (density folded in)."""
    from .quadrature import integrate_tail_batch, integrate_batch
    tau = joint.tau
    if np.isfinite(tau):
        try:
            v, _ = integrate_batch(lambda x, i: integrand(x), [0.0], [tau], rtol=1e-10)
            return IntegralDiagnostic(name, True, float(v[0]), [])
        except QuadratureFailure:
            return IntegralDiagnostic(name, False, np.inf, [])
    res = integrate_tail_batch(lambda x, i: integrand(x), [0.0], _tail_start(joint.survival))
    return IntegralDiagnostic(name, bool(res.finite[0]), float(res.values[0]), res.evidence(0))


class _InnerDivergence(Exception):
    pass


def _double(joint, kernel, outer_power, inner_power, name):
    """``int int K(x,y)^2 dF(y) dF(x) / ((1-G(x))^p_o (1-G(y))^p_i)`` by iterated tail quadrature."""
    from .quadrature import integrate_tail_batch
    start = _tail_start(joint.survival)

    def inner(x):
        x = np.asarray(x, dtype=float)

        def g(y, idx):
            return kernel(x[idx], y) ** 2 * joint.weighted_pdf(y, inner_power)

        res = integrate_tail_batch(g, np.zeros(x.size), start, breaks=x[:, None],
                                   rtol=1e-10)
        if not np.all(res.finite):
            raise _InnerDivergence(res.evidence(int(np.flatnonzero(~res.finite)[0])))
        return res.values

    def outer(x):
        w = joint.weighted_pdf(x, outer_power)
        out = np.zeros_like(w)
        live = w > 0
        if np.any(live):
            out[live] = w[live] * inner(x[live])
        return out

    try:
        return _single(joint, outer, name)
    except _InnerDivergence as exc:
        return IntegralDiagnostic(name, False, np.inf, list(exc.args[0]))


def condition_check(joint: JointModel, kernel, which="Condition1", kprime=None) -> ConditionDiagnostic:
    """Evaluate the integrability conditions for the sqrt(n) or n regime.

    ``which`` is ``"Condition1"`` (non-degenerate, sqrt(n) scaling) or
    ``"Condition2"`` (degenerate, n scaling). Each part is integrated with
    geometric tail escalation and reported as finite (with its value) or
    divergent (with the non-settling tail increments).
    """
    from .operators import kprime as make_kprime
    require_continuous(joint.survival)
    if which not in ("Condition1", "Condition2"):
        raise InvalidParameter(f"which must be Condition1 or Condition2, got {which!r}")
    kp = kprime if kprime is not None else make_kprime(joint.survival, kernel, joint.tau)
    lsf = joint.survival.logsf

    if which == "Condition1":
        part_i = _double(joint, kernel, 1.0, 0.0, "i")

        def ii(x):
            # sqrt(S / (1 - G)) f = exp(log S / 2 + log(f / sqrt(1 - G)))
            return np.exp(0.5 * lsf(x)) * joint.weighted_pdf(x, 0.5) * np.abs(kp.diagonal(x))

        part_ii = _single(joint, ii, "ii")
    else:
        part_i = _double(joint, kernel, 1.0, 1.0, "i")
        # S(x) / (1 - H(x-)) = 1 / (1 - G(x)) for continuous laws
        part_ii = _single(joint, lambda x: np.abs(kp.diagonal(x)) * joint.weighted_pdf(x), "ii")
    return ConditionDiagnostic(which, [part_i, part_ii])
