"""Double-spend success probability for an attacker holding hash-power fraction q.

Model: each new block is the attacker's with probability ``q`` and the honest
network's with probability ``p = 1 - q``. The merchant waits for ``z`` honest
confirmations; meanwhile the attacker has mined ``m`` blocks, distributed
negative-binomially. From a deficit of ``d = z - m`` the attacker must build a
strictly longer chain, which a biased random walk does with probability
``(q/p) ** (d + 1)`` (or 1 when already ahead).

Closed form::

    P(q, z) = 1 - sum_{m=0..z} C(m+z-1, m) p^z q^m (1 - (q/p)^(z-m+1))

evaluated as the equivalent sum of positive terms
``sum_{k<z} C(2z, k) p^k q^(2z-k) + sum_{m<=z} C(m+z-1, m) p^z q^m (q/p)^(z-m+1)``.

The Monte Carlo mode simulates the same block race directly and truncates
hopeless walks once the remaining catch-up probability is below 1e-12.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable

from . import race
from .errors import InvalidFraction

TRUNCATION = 1e-12


class Mode(str, enum.Enum):
    CLOSED_FORM = "closed-form"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class DoubleSpendQuery:
    attacker_fraction_q: float
    confirmations_z: int
    trials: int = 1_000_000

    def __post_init__(self) -> None:
        _check(self.attacker_fraction_q, self.confirmations_z)
        if self.trials <= 0:
            raise ValueError("trials must be positive")


def _check(q: float, z: int) -> None:
    if not 0.0 <= q < 1.0:
        raise InvalidFraction(f"attacker fraction must lie in [0, 1), got {q}")
    if z < 0:
        raise ValueError(f"confirmations must be non-negative, got {z}")


def closed_form(q: float, z: int) -> float:
    _check(q, z)
    p = 1.0 - q
    if q == 0.0:
        return 0.0
    if q >= p:
        return 1.0
    ratio = q / p
    if z == 0:
        return ratio
    # Both sums hold only positive terms, so small probabilities keep full
    # relative precision (1 - sum would cancel to rounding noise).
    log_p, log_q = math.log(p), math.log(q)
    # attacker already ahead: fewer than z honest blocks among the first 2z
    ahead = sum(math.exp(_log_comb(2 * z, k) + k * log_p + (2 * z - k) * log_q) for k in range(z))
    # attacker has m <= z blocks, then closes the remaining gap of z - m + 1
    behind = sum(math.exp(_log_comb(m + z - 1, m) + z * log_p + m * log_q + (z - m + 1) * math.log(ratio))
                 for m in range(z + 1))
    return min(1.0, ahead + behind)


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def nakamoto_poisson(q: float, z: int) -> float:
    """Nakamoto's Poisson approximation of the attacker's progress (reference only)."""
    _check(q, z)
    p = 1.0 - q
    if q >= p:
        return 1.0
    lam = z * q / p
    total = 1.0
    for k in range(z + 1):
        poisson = math.exp(-lam) * lam**k / math.factorial(k)
        total -= poisson * (1.0 - (q / p) ** (z - k))
    return min(1.0, max(0.0, total))


def walk_cutoff(q: float) -> int:
    """Smallest deficit D >= 1 at which ``(q/p)^(D+1)`` drops below the truncation level."""
    p = 1.0 - q
    if q == 0.0:
        return 1
    ratio = q / p
    return max(1, math.ceil(math.log(TRUNCATION) / math.log(ratio)) - 1)


@dataclass(frozen=True)
class MonteCarloEstimate:
    probability: float
    successes: int
    trials: int
    backend: str

    def standard_error(self, reference: float | None = None) -> float:
        """Binomial standard error, evaluated at ``reference`` when given."""
        p = self.probability if reference is None else reference
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.trials)


def monte_carlo(q: float, z: int, trials: int = 1_000_000, seed: int = 0, *,
                backend: str | None = None) -> MonteCarloEstimate:
    _check(q, z)
    if trials <= 0:
        raise ValueError("trials must be positive")
    if q >= 0.5:
        # symmetric or upward-drifting walk: the attacker catches up almost surely
        return MonteCarloEstimate(1.0, trials, trials, "analytic")
    kernel = race.race_successes if backend is None else race.backends()[backend]
    threshold = int(q * 2**53)
    hits = int(kernel(threshold, z, trials, seed & (2**64 - 1), walk_cutoff(q)))
    return MonteCarloEstimate(hits / trials, hits, trials, backend or race.BACKEND)


def double_spend_success(query: DoubleSpendQuery, mode: Mode | str = Mode.CLOSED_FORM, seed: int = 0) -> float:
    mode = Mode(mode)
    if mode is Mode.CLOSED_FORM:
        return closed_form(query.attacker_fraction_q, query.confirmations_z)
    return monte_carlo(query.attacker_fraction_q, query.confirmations_z, query.trials, seed).probability


@dataclass(frozen=True)
class TableRow:
    q: float
    z: int
    closed_form: float
    monte_carlo: float | None = None
    standard_error: float | None = None

    @property
    def z_score(self) -> float | None:
        if self.monte_carlo is None or not self.standard_error:
            return None
        return (self.monte_carlo - self.closed_form) / self.standard_error


def probability_table(qs: Iterable[float], zs: Iterable[int], mode: Mode | str = Mode.CLOSED_FORM,
                      trials: int = 1_000_000, seed: int = 0) -> list[TableRow]:
    mode = Mode(mode)
    zs = list(zs)
    rows = []
    for q in qs:
        for z in zs:
            exact = closed_form(q, z)
            if mode is Mode.MONTE_CARLO:
                est = monte_carlo(q, z, trials, seed)
                rows.append(TableRow(q, z, exact, est.probability, est.standard_error(exact)))
            else:
                rows.append(TableRow(q, z, exact))
    return rows


def format_table(rows: list[TableRow]) -> str:
    with_mc = any(r.monte_carlo is not None for r in rows)
    head = f"{'q':>6} {'z':>3} {'closed-form':>14}"
    if with_mc:
        head += f" {'monte-carlo':>14} {'z-score':>8}"
    lines = [head]
    for r in rows:
        line = f"{r.q:>6.3f} {r.z:>3d} {r.closed_form:>14.8f}"
        if with_mc:
            zs = r.z_score
            line += f" {r.monte_carlo:>14.8f} {'' if zs is None else format(zs, '.2f'):>8}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def table_csv(rows: list[TableRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["q", "z", "closed_form", "monte_carlo", "standard_error"])
    for r in rows:
        writer.writerow([r.q, r.z, repr(r.closed_form),
                         "" if r.monte_carlo is None else repr(r.monte_carlo),
                         "" if r.standard_error is None else repr(r.standard_error)])
    return buf.getvalue()
