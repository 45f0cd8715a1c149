"""Closed-form model of idle-drop failures on pooled directory connections.

A population of ``n_users`` independent users each fires requests at rate
``beta``; a request is *marked* (actually opens an LDAP connection to the
directory server) with probability ``xi``.  A bind fails when the gap
between two successive marked requests exceeds the server's idle timeout,
because the server has silently dropped the pooled connection in between.

Everything here is a pure function of its arguments.  All powers of
probabilities are taken in log space so populations of 10^5 and beyond
neither overflow the binomial coefficient nor underflow the result.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from enum import Enum

from .errors import InfeasibleTargetError

__all__ = [
    "ModelParams",
    "Expression",
    "SolverPolicy",
    "TimeoutSolution",
    "birth_rate",
    "state_probability",
    "failure_probability",
    "feasibility_bound",
    "solve_timeout_exact",
    "solve_timeout_large_n",
    "solve_timeout",
]

# Above this population the large-N approximation is indistinguishable from
# the exact inversion at operational precision, and much cheaper to explain.
DEFAULT_LARGE_N_THRESHOLD = 500


@dataclass(frozen=True)
class ModelParams:
    """Population, activity, and marking parameters.

    n_users:
        Number of distinct users generating requests through the proxy.
    beta:
        Per-user request rate, requests/second.
    xi:
        Probability that a request is marked, i.e. is translated into an
        LDAP connection (caching and unrestricted resources keep it < 1).
    """

    n_users: int
    beta: float
    xi: float

    def __post_init__(self) -> None:
        if isinstance(self.n_users, bool) or not isinstance(self.n_users, numbers.Integral):
            raise ValueError(f"n_users must be an integer, got {self.n_users!r}")
        if self.n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta!r}")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must lie in [0, 1], got {self.xi!r}")
        # normalize numpy scalars so downstream integer math is exact
        object.__setattr__(self, "n_users", int(self.n_users))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "xi", float(self.xi))


class Expression(Enum):
    """Which closed form produced a timeout."""

    EXACT = "exact"
    LARGE_N = "large-n"


@dataclass(frozen=True)
class SolverPolicy:
    """Chooses between the exact inversion and the large-population form.

    By default the exact expression is used up to ``large_n_threshold``
    users and the approximation above it; ``force`` overrides the
    dispatch entirely.
    """

    large_n_threshold: int = DEFAULT_LARGE_N_THRESHOLD
    force: Expression | None = None

    def __post_init__(self) -> None:
        if self.large_n_threshold < 1:
            raise ValueError("large_n_threshold must be >= 1")

    def select(self, n_users: int) -> Expression:
        if self.force is not None:
            return self.force
        if n_users <= self.large_n_threshold:
            return Expression.EXACT
        return Expression.LARGE_N


@dataclass(frozen=True)
class TimeoutSolution:
    """A solved idle timeout together with how it was obtained."""

    timeout_s: float
    target_eps: float
    expression: Expression
    feasibility_bound: float

    def __post_init__(self) -> None:
        if not (self.timeout_s > 0.0 and math.isfinite(self.timeout_s)):
            raise ValueError(f"timeout_s must be positive and finite, got {self.timeout_s!r}")
        if not self.target_eps > self.feasibility_bound:
            raise ValueError(
                f"target_eps {self.target_eps!r} does not exceed the feasibility "
                f"bound {self.feasibility_bound!r}; construction should have failed earlier"
            )


def _check_state_index(params: ModelParams, k: int) -> None:
    if isinstance(k, bool) or not isinstance(k, numbers.Integral):
        raise ValueError(f"state index must be an integer, got {k!r}")
    if not 0 <= k <= params.n_users:
        raise ValueError(f"state index {k} outside chain [0, {params.n_users}]")


def birth_rate(params: ModelParams, k: int) -> float:
    """Rate at which the observed request count leaves state ``k``.

    With ``k`` of the users already observed, the remaining ``n_users - k``
    idle users each fire at rate ``beta``, so the count advances at
    ``(n_users - k) * beta``.  The full-population state is absorbing.
    """
    _check_state_index(params, k)
    return (params.n_users - k) * params.beta


def state_probability(params: ModelParams, k: int, t: float) -> float:
    """Probability that exactly ``k`` users have fired a request in [0, t].

    Each user fires within ``t`` independently with probability
    ``1 - exp(-beta * t)``, so the observed count is binomial.  Evaluated
    through logs; the binomial coefficient is taken as an exact integer
    before its log so the result holds full double precision even for
    large populations.
    """
    _check_state_index(params, k)
    if not t >= 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    n = params.n_users
    p = -math.expm1(-params.beta * t)
    if p == 0.0:
        return 1.0 if k == 0 else 0.0
    log_pmf = math.log(math.comb(n, k)) - (n - k) * params.beta * t
    if k:
        log_pmf += k * math.log(p)
    return min(1.0, math.exp(log_pmf))


def failure_probability(params: ModelParams, timeout_s: float) -> float:
    """Probability that no marked request arrives within the idle window.

    A user fires in [0, timeout] with probability ``1 - exp(-beta*t)`` and
    the request is marked with probability ``xi``, so the window stays free
    of marked requests (and the next bind finds a dropped connection) with
    probability ``(1 - xi*(1 - exp(-beta*t))) ** n_users``.
"""
    if not timeout_s >= 0.0:
        raise ValueError(f"timeout_s must be >= 0, got {timeout_s!r}")
    n, beta, xi = params.n_users, params.beta, params.xi
    x = xi * -math.expm1(-beta * timeout_s)
    if x < 0.5:
        log_p = n * math.log1p(-x)
    else:
        # rewrite 1 - x as (1 - xi) + xi*exp(-beta*t): a sum of nonnegative
        # terms, so no cancellation even arbitrarily close to the floor
        survivor = (1.0 - xi) + xi * math.exp(-beta * timeout_s)
        if survivor == 0.0:
            return 0.0
        log_p = n * math.log(survivor)
    return min(1.0, math.exp(log_p))


def feasibility_bound(params: ModelParams) -> float:
    """Infimum of achievable failure probabilities: ``(1 - xi) ** n_users``.

    This is the failure probability left over when the timeout grows
    without bound; no target at or below it can be met.
    """
    if params.xi == 1.0:
        return 0.0
    return math.exp(params.n_users * math.log1p(-params.xi))


def _check_eps(eps: float) -> None:
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")


def solve_timeout_exact(params: ModelParams, eps: float) -> float:
    """Idle timeout achieving failure probability ``eps``, exact inversion.

    Solves ``(1 - xi*(1 - exp(-beta*t))) ** n_users = eps`` for ``t``.
    Raises :class:`InfeasibleTargetError` when ``eps`` does not strictly
    exceed the feasibility bound (the log argument leaves (0, 1] and no
    finite timeout exists), including the degenerate ``xi = 0`` case.
    """
    _check_eps(eps)
    n, beta, xi = params.n_users, params.beta, params.xi
    bound = feasibility_bound(params)
    if xi == 0.0 or eps <= bound:
        raise InfeasibleTargetError(eps, bound)
    c = math.log(eps) / n  # log of the required per-user survival level
    if c > -0.5:
        ratio = math.expm1(c) / xi  # in (-1, 0] when feasible
        if ratio <= -1.0:
            raise InfeasibleTargetError(eps, bound)
        return -math.log1p(ratio) / beta
    # aggressive targets: exp(c) is far below 1, so keep it at full relative
    # precision instead of flushing it against -1 inside expm1
    headroom = math.exp(c) - (1.0 - xi)
    if headroom <= 0.0:
        raise InfeasibleTargetError(eps, bound)
    return (math.log(xi) - math.log(headroom)) / beta


def solve_timeout_large_n(params: ModelParams, eps: float) -> float:
    """Large-population approximation of the timeout inversion.

    ``t = -log(eps) / (beta * xi * n_users)``; the first-order series of
    the exact inversion, accurate once the population dwarfs the target.
    """
    _check_eps(eps)
    if params.xi == 0.0:
        raise InfeasibleTargetError(eps, 1.0, "no request is ever marked")
    return -math.log(eps) / (params.beta * params.xi * params.n_users)


def solve_timeout(
    params: ModelParams,
    eps: float,
    policy: SolverPolicy | None = None,
) -> TimeoutSolution:
    """Solve for the idle timeout, dispatching per the policy.

    Records which expression produced the result and the feasibility bound
    for the inputs.  Infeasible targets raise regardless of the expression
    selected: the approximation cannot rescue an unattainable target.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    policy = policy if policy is not None else SolverPolicy()
    bound = feasibility_bound(params)
    if eps <= bound:
        raise InfeasibleTargetError(eps, bound)
    expression = policy.select(params.n_users)
    if expression is Expression.EXACT:
        timeout_s = solve_timeout_exact(params, eps)
    else:
        timeout_s = solve_timeout_large_n(params, eps)
    return TimeoutSolution(
        timeout_s=timeout_s,
        target_eps=eps,
        expression=expression,
        feasibility_bound=bound,
    )
