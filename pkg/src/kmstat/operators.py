"""The forward operator, the projection and the transformed kernel.

All integrals against ``dF`` are computed after the substitution
``s = S^{-1}(S(x) q)``, which maps ``int_x^tau g dF / S(x)`` onto
``int_{q0}^1 g(s(q)) dq`` with ``q0 = S(tau)/S(x)``. Small ``q`` is the far
tail, so it keeps full relative precision, and an infinite ``tau`` needs
no truncation. Integrals that carry a censoring weight ``1/(1 - G)`` may
diverge; those run in ``x`` space with geometric tail escalation so that
divergence is detected rather than silently truncated.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DivergentIntegral, SingularSurvival
from .models import require_continuous
from .quadrature import integrate_batch, integrate_tail_batch

INNER_RTOL = 1e-9
OUTER_RTOL = 1e-8


def _logsf_tau(model, tau):
    if np.isinf(tau) or tau >= model.tau:
        return -np.inf
    return float(model.logsf(tau))


def tail_expectation(model, h, x, tau=np.inf, breaks=None, rtol=INNER_RTOL, atol=1e-13):
    """Batched ``(1/S(x_i)) int_{x_i}^tau h(s, i) dF(s)``.

    Parameters
    ----------
    model : SurvivalModel
    h : callable
        ``h(s, idx)`` vectorised; ``idx`` indexes the batch.
    x : array_like, shape (B,)
        Lower limits; ``S(x_i)`` must be positive.
    breaks : array_like, shape (B, k), optional
        Points in ``s`` where ``h(., i)`` has a kink.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    logsx = np.asarray(model.logsf(x), dtype=float).reshape(x.shape)
    if np.any(np.isneginf(logsx)):
        bad = x[np.isneginf(logsx)][0]
        raise SingularSurvival(f"S(x) = 0 at x = {bad!r}")
    q0 = np.exp(np.minimum(_logsf_tau(model, tau) - logsx, 0.0))
    qb = None
    if breaks is not None:
        b = np.asarray(breaks, dtype=float).reshape(x.size, -1)
        with np.errstate(invalid="ignore"):
            qb = np.where(b > x[:, None], np.exp(np.asarray(model.logsf(b)).reshape(b.shape)
                                                  - logsx[:, None]), np.nan)

    def g(q, idx):
        s = model.isf(np.exp(logsx[idx] + np.log(q)))
        return h(s, idx)

    vals, _ = integrate_batch(g, q0, np.ones_like(q0), breaks=qb, rtol=rtol, atol=atol)
    return vals


def forward_A(model, g: Callable, tau=np.inf, closed_form: Optional[Callable] = None) -> Callable:
    """Return ``x -> g(x) - (1/S(x)) int_x^tau g dF``.

    ``closed_form``, when given, is returned instead of the quadrature path.
    """
    if closed_form is not None:
        return closed_form

    def Ag(x):
        x_arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x_arr).ravel()
        tail = tail_expectation(model, lambda s, idx: g(s), flat, tau)
        out = (np.asarray(g(flat), dtype=float) - tail).reshape(x_arr.shape)
        return float(out) if out.ndim == 0 else out

    return Ag


def _pointwise(fn):
    def wrapped(y):
        y_arr = np.asarray(y, dtype=float)
        out = fn(np.atleast_1d(y_arr).ravel()).reshape(y_arr.shape)
        return float(out) if out.ndim == 0 else out
    return wrapped


def projection_phi(model, kernel, tau=np.inf) -> Callable:
    """``phi(y) = int_0^tau K(x, y) dF(x)`` as a vectorised function."""
    require_continuous(model)
    if kernel.phi_rule is not None:
        rule = kernel.phi_rule(model, tau)
        if rule is not None:
            return rule

    def phi(y):
        return tail_expectation(model, lambda s, idx: kernel(s, y[idx]), np.zeros_like(y), tau,
                                breaks=y[:, None])

    return _pointwise(phi)


@dataclass(frozen=True)
class TransformedKernel:
    """``K'(x, y) = (A_1 A_2 K)(x, y)`` for a kernel under a survival model."""

    kernel: object
    model: object
    tau: float = np.inf
    closed: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def is_closed_form(self):
        return self.closed is not None

    @property
    def provenance(self):
        return "closed-form" if self.closed is not None else "quadrature"

    def __call__(self, x, y):
        if self.closed is not None:
            return self.closed(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self.quadrature(x, y)

    def diagonal(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self(x, x), x.shape)

    def quadrature(self, x, y):
        """Four-term expansion by nested quadrature, batched over pairs."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        shape = x.shape
        xf, yf = x.ravel(), y.ravel()
        m, K, tau = self.model, self.kernel, self.tau

        t1 = K(xf, yf)
        t2 = tail_expectation(m, lambda s, i: K(s, yf[i]), xf, tau, breaks=yf[:, None])
        t3 = tail_expectation(m, lambda t, i: K(xf[i], t), yf, tau, breaks=xf[:, None])

        def inner(s, idx):
            return tail_expectation(m, lambda t, j: K(s[j], t), yf[idx], tau,
                                    breaks=s[:, None])

        t4 = tail_expectation(m, inner, xf, tau, breaks=yf[:, None], rtol=OUTER_RTOL)
        out = (t1 - t2 - t3 + t4).reshape(shape)
        return float(out) if out.ndim == 0 else out


def kprime(model, kernel, tau=np.inf) -> TransformedKernel:
    """Transformed kernel, closed form when the kernel registers one for ``model``."""
    require_continuous(model)
    closed = None
    if kernel.kprime_rule is not None:
        closed = kernel.kprime_rule(model, tau)
    return TransformedKernel(kernel, model, tau, closed)


class Regime(str, Enum):
    NON_DEGENERATE = "NonDegenerate"
    DEGENERATE_ZERO = "DegenerateZero"
    DEGENERATE_CONSTANT = "DegenerateConstant"

    @property
    def scaling(self):
        return "sqrt_n" if self is Regime.NON_DEGENERATE else "n"


@dataclass(frozen=True)
class RegimeClassification:
    regime: Regime
    var_phi: float
    phi_mean: float
    scale: float
    tol: float

    @property
    def scaling(self):
        return self.regime.scaling

    def to_dict(self):
        return {"regime": self.regime.value, "scaling": self.scaling,
                "var_phi": self.var_phi, "phi_mean": self.phi_mean,
                "scale": self.scale, "tol": self.tol}


def expectation(model, g, tau=None):
    """``int_0^tau g dF`` over the model (whole support by default)."""
    tau = model.tau if tau is None else tau
    return float(tail_expectation(model, lambda s, idx: g(s), [0.0], tau, rtol=OUTER_RTOL)[0])


def classify_regime(model, kernel, tau=np.inf, tol=1e-8) -> RegimeClassification:
    """Decide whether the projection is non-constant, zero or a nonzero constant.

    ``Var(phi)`` and ``E(phi)^2`` are compared with ``tol`` times a reference
    scale ``max(E phi^2, (E|K(T,T)|)^2)``. The second entry keeps quadrature
    noise in a vanishing projection from being read as variance.
    """
    phi = projection_phi(model, kernel, tau)
    mean = expectation(model, phi)
    second = expectation(model, lambda s: np.asarray(phi(s)) ** 2)
    diag = expectation(model, lambda s: np.abs(kernel.diagonal(s)))
    var = max(second - mean * mean, 0.0)
    scale = max(second, diag * diag)
    if scale == 0.0 or var <= tol * scale:
        if mean * mean <= tol * scale:
            regime = Regime.DEGENERATE_ZERO
        else:
            regime = Regime.DEGENERATE_CONSTANT
    else:
        regime = Regime.NON_DEGENERATE
    return RegimeClassification(regime, var, mean, scale, tol)


def weighted_integral(joint, integrand, what, rtol=OUTER_RTOL, inner_rtol=None):
    """``int_0^tau integrand(x) dx`` where the integrand may carry ``1/(1 - G)``.

    Raises :class:`DivergentIntegral` when the tail does not settle.
    """
    tau = joint.tau
    if np.isfinite(tau):
        vals, _ = integrate_batch(lambda x, i: integrand(x), [0.0], [tau], rtol=rtol)
        return float(vals[0])
    start = float(joint.survival.isf(0.1))
    res = integrate_tail_batch(lambda x, i: integrand(x), [0.0], start, rtol=rtol,
                               inner_rtol=inner_rtol)
    if not res.finite[0]:
        raise DivergentIntegral(f"{what} diverges: tail increments fail to decay",
                                res.evidence(0))
    return float(res.values[0])


def sigma2(joint, kernel) -> float:
    """Non-degenerate variance ``int (A phi)^2 / (1 - G) dF``.

    The sqrt(n)-scaled V-statistic has limiting variance ``4 * sigma2``.
    """
    m = joint.survival
    require_continuous(m)
    tau = joint.tau
    phi = projection_phi(m, kernel, tau)
    Aphi = forward_A(m, phi, tau)

    def integrand(x):
        w = joint.weighted_pdf(x)
        out = np.zeros_like(w)
        live = (w > 0) & (np.asarray(m.logsf(x)) > -np.inf)
        if np.any(live):
            out[live] = np.asarray(Aphi(x[live])) ** 2 * w[live]
        return out

    # A phi is itself a quadrature: keep the outer tolerance above its noise
    return weighted_integral(joint, integrand, "sigma^2", inner_rtol=OUTER_RTOL)
