"""Vectorised adaptive Gauss-Legendre quadrature.

Everything here works on *batches*: one call integrates ``B`` related
integrands at once. The integrand receives a flat array of abscissae and a
parallel array of batch indices, and must return the integrand values::

    def f(x, idx):
        return np.exp(-x * rates[idx])

Batching is what keeps the nested integrals in :mod:`kmstat.operators` and
:mod:`kmstat.nulldist` affordable: the inner integrals for every outer node
are resolved together in a single adaptive sweep.

Improper integrals over ``[a, inf)`` are handled by geometric truncation:
``[a, T]`` first, then the increments over ``[T, 2T]``, ``[2T, 4T]`` ...
until they settle relative to the running total. Increments that refuse to
decay for ``patience`` consecutive doublings are reported as divergence.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentIntegral, QuadratureFailure

ORDER = 16
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(ORDER)


def _as_batch(f):
    """Adapt a plain vectorised ``f(x)`` to the batched signature."""
    return lambda x, idx: f(x)


def _gauss(f, lo, hi, idx):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _NODES[None, :]
    vals = np.asarray(f(pts.ravel(), np.repeat(idx, ORDER)), dtype=float)
    vals = np.broadcast_to(vals, (pts.size,)).reshape(pts.shape)
    return half * (vals @ _WEIGHTS)


def _initial_panels(lo, hi, breaks):
    """Split each ``[lo_i, hi_i]`` at the breakpoints that fall strictly inside."""
    n = lo.size
    if breaks is None:
        return lo.copy(), hi.copy(), np.arange(n)
    breaks = np.asarray(breaks, dtype=float).reshape(n, -1)
    inside = (breaks > lo[:, None]) & (breaks < hi[:, None])
    cuts = np.where(inside, breaks, np.nan)
    edges = np.concatenate([lo[:, None], np.sort(cuts, axis=1), hi[:, None]], axis=1)
    # sorted NaNs sit at the end; push them to hi so they make empty panels
    edges = np.where(np.isnan(edges), hi[:, None], edges)
    edges = np.maximum.accumulate(edges, axis=1)
    p_lo = edges[:, :-1].ravel()
    p_hi = edges[:, 1:].ravel()
    p_idx = np.repeat(np.arange(n), edges.shape[1] - 1)
    keep = p_hi > p_lo
    return p_lo[keep], p_hi[keep], p_idx[keep]


def integrate_batch(f, lo, hi, *, breaks=None, rtol=1e-10, atol=1e-14,
                    max_depth=60, max_panels=200_000):
    """Integrate ``B`` integrands over their own finite intervals.

    Parameters
    ----------
    f : callable
        ``f(x, idx) -> values``, vectorised over both arguments.
    lo, hi : array_like, shape (B,)
        Integration limits; ``hi < lo`` is not supported.
    breaks : array_like, shape (B, k), optional
        Interior points where an integrand has a kink or jump. ``nan``
        entries and points outside ``(lo, hi)`` are ignored.
    rtol, atol : float
        Per-integrand error budget ``max(atol, rtol * |I|)``.
    max_panels : int
        Cap on simultaneously pending panels. Hitting it usually means the
        tolerance is below the noise level of an integrand that is itself
        computed by quadrature.

    Returns
    -------
    values, errors : ndarray, shape (B,)
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float),
                                 np.asarray(hi, dtype=float))
    lo = lo.ravel().copy()
    hi = hi.ravel().copy()
    n = lo.size
    values = np.zeros(n)
    errors = np.zeros(n)
    if n == 0:
        return values, errors
    if np.any(hi < lo) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise QuadratureFailure("integration limits must be finite with lo <= hi")

    p_lo, p_hi, p_idx = _initial_panels(lo, hi, breaks)
    coarse = _gauss(f, p_lo, p_hi, p_idx)
    width = np.where(hi > lo, hi - lo, 1.0)

    for _ in range(max_depth):
        if p_idx.size == 0:
            return values, errors
        mid = 0.5 * (p_lo + p_hi)
        both = _gauss(f, np.concatenate([p_lo, mid]), np.concatenate([mid, p_hi]),
                      np.concatenate([p_idx, p_idx]))
        left, right = both[: p_idx.size], both[p_idx.size:]
        fine = left + right
        if not np.all(np.isfinite(fine)):
            raise QuadratureFailure("integrand produced non-finite values")
        diff = np.abs(fine - coarse)

        estimate = values + np.bincount(p_idx, fine, minlength=n)
        budget = np.maximum(atol, rtol * np.abs(estimate))
        pending_err = np.bincount(p_idx, diff, minlength=n)
        elem_done = errors + pending_err <= budget
        # half the budget is shared out by width; the rest absorbs singular endpoints
        local_ok = diff <= 0.5 * budget[p_idx] * (p_hi - p_lo) / width[p_idx]
        # panels that can no longer be split in floating point are accepted as-is
        tiny = (mid <= p_lo) | (mid >= p_hi)
        accept = elem_done[p_idx] | local_ok | tiny

        values += np.bincount(p_idx[accept], fine[accept], minlength=n)
        errors += np.bincount(p_idx[accept], diff[accept], minlength=n)

        split = ~accept
        p_lo, p_hi, p_idx = (np.concatenate([p_lo[split], mid[split]]),
                             np.concatenate([mid[split], p_hi[split]]),
                             np.concatenate([p_idx[split], p_idx[split]]))
        coarse = np.concatenate([left[split], right[split]])
        if p_idx.size > max_panels:
            raise QuadratureFailure(f"more than {max_panels} pending panels; "
                                    "tolerance may be below the integrand's noise level")

    raise QuadratureFailure(f"adaptive quadrature did not converge in {max_depth} levels")


def integrate(f, a, b, *, breaks=(), rtol=1e-10, atol=1e-14):
    """Scalar convenience wrapper: integrate a vectorised ``f(x)`` over ``[a, b]``."""
    if b == a:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    brk = np.asarray([breaks], dtype=float) if len(breaks) else None
    val, _ = integrate_batch(_as_batch(f), [a], [b], breaks=brk, rtol=rtol, atol=atol)
    return sign * float(val[0])


@dataclass
class TailIntegral:
    """Outcome of a batch of geometric-truncation integrals over ``[a, inf)``."""

    values: np.ndarray
    finite: np.ndarray
    increments: list = field(default_factory=list)

    def evidence(self, i=0):
        """The tail-increment sequence observed for batch element ``i``."""
        return [float(inc[i]) for inc in self.increments if not np.isnan(inc[i])]


def integrate_tail_batch(f, lo, start, *, breaks=None, rtol=1e-8, atol=1e-14,
                         patience=6, max_doublings=64, inner_rtol=None):
    """Integrate ``B`` integrands over ``[lo_i, inf)`` by geometric truncation.

    ``start`` is the first truncation point ``T`` (shared by all elements and
    raised above ``lo`` where needed). Each doubling adds the integral over
    ``[T, 2T]``. An element *settles* once two consecutive increments are
    within ``max(atol, rtol * |I|)`` and ``T`` lies beyond its last
    breakpoint. It is declared *divergent* when its
    increment fails to shrink (ratio >= 0.99) for ``patience`` consecutive
    doublings, becomes non-finite, or ``max_doublings`` is exhausted.
    """
    lo = np.asarray(lo, dtype=float).ravel()
    n = lo.size
    qtol = rtol * 0.1 if inner_rtol is None else inner_rtol
    brk = None if breaks is None else np.asarray(breaks, dtype=float).reshape(n, -1)
    # an element may not settle before T has passed its breakpoints, where
    # its mass can start long after a stretch of negligible increments
    horizon = np.zeros(n) if brk is None else np.nanmax(
        np.where(np.isfinite(brk), brk, np.nan), axis=1, initial=0.0)
    T = float(start)
    T = max(T, 2.0 * float(np.max(lo, initial=0.0)), 1e-300)

    def sub(active):
        b = None if brk is None else brk[active]
        return (lambda x, idx: f(x, active[idx])), b

    first_hi = np.full(n, T)
    g, b = sub(np.arange(n))
    values, _ = integrate_batch(g, lo, first_hi, breaks=b, rtol=qtol, atol=atol * 1e-2)

    finite = np.zeros(n, dtype=bool)
    diverged = np.zeros(n, dtype=bool)
    quiet = np.zeros(n, dtype=int)
    stall = np.zeros(n, dtype=int)
    prev = np.full(n, np.nan)
    history = []

    for _ in range(max_doublings):
        active = np.flatnonzero(~finite & ~diverged)
        if active.size == 0:
            break
        inc = np.full(n, np.nan)
        g, b = sub(active)
        lo_k = np.maximum(lo[active], T)
        try:
            part, _ = integrate_batch(g, lo_k, np.full(active.size, 2.0 * T), breaks=b,
                                      rtol=qtol, atol=atol * 1e-2)
        except QuadratureFailure:
            # overflow far out in the tail is itself evidence of divergence
            part = np.full(active.size, np.inf)
        inc[active] = part
        history.append(inc)
        T *= 2.0

        bad = ~np.isfinite(part)
        values[active] = np.where(bad, values[active], values[active] + part)
        small = np.abs(part) <= np.maximum(atol, rtol * np.abs(values[active]))
        quiet[active] = np.where(small, quiet[active] + 1, 0)
        with np.errstate(invalid="ignore"):
            grows = (np.abs(part) >= 0.99 * np.abs(prev[active])) & ~small
        stall[active] = np.where(grows, stall[active] + 1, 0)
        prev[active] = part

        finite[active] = (quiet[active] >= 2) & (T >= horizon[active])
        diverged[active] = bad | (stall[active] >= patience)

    values = np.where(finite, values, np.inf)
    return TailIntegral(values=values, finite=finite, increments=history)


def integrate_tail(f, a, start, *, breaks=(), rtol=1e-8, atol=1e-14, patience=6):
    """Scalar version of :func:`integrate_tail_batch` for a plain ``f(x)``."""
    brk = np.asarray([breaks], dtype=float) if len(breaks) else None
    return integrate_tail_batch(_as_batch(f), [a], start, breaks=brk, rtol=rtol,
                                atol=atol, patience=patience)


def integrate_to_infinity(f, a, start, *, breaks=(), rtol=1e-8, atol=1e-14, what="integral"):
    """Like :func:`integrate_tail` but returns a float or raises :class:`DivergentIntegral`."""
    res = integrate_tail(f, a, start, breaks=breaks, rtol=rtol, atol=atol)
    if not res.finite[0]:
        raise DivergentIntegral(f"{what} does not settle: tail increments fail to decay",
                                res.evidence(0))
    return float(res.values[0])


def gauss_legendre_rule(n):
    """Nodes and weights of the ``n``-point rule on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
