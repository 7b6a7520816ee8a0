import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidDistributionError, InvalidInstanceError
from .score_distribution import UNIFORM, ScoreDistribution

logger = logging.getLogger(__name__)

# rank recurrence denominators: M = n + b - r, or the literal M = n + b
POPULATION = "population"
LITERAL = "literal"

Number = Union[float, np.ndarray]


@dataclass(frozen=True)
class WsspInstance:
    """
    One round of warm-starting selection.

    :param n: Number of candidates to be interviewed.
    :param b: Number of job positions.
    :param r: Number of positions empty at the start of the round.
    :param preselection: Scores of the b - r employees holding positions; stored sorted descending.
    :param dist: Distribution of the candidates' scores.
    """
    n: int
    b: int
    r: int
    preselection: Tuple[float, ...]
    dist: ScoreDistribution

    def __post_init__(self):
        object.__setattr__(self, "preselection",
                           tuple(sorted((float(s) for s in self.preselection), reverse=True)))
        if not 1 <= self.b <= self.n:
            raise InvalidInstanceError(f"Error: WsspInstance - need 1 <= b <= n, got b={self.b}, n={self.n}.")
        if not 0 <= self.r <= self.b:
            raise InvalidInstanceError(f"Error: WsspInstance - need 0 <= r <= b, got r={self.r}, b={self.b}.")
        if len(self.preselection) != self.b - self.r:
            raise InvalidInstanceError(
                f"Error: WsspInstance - preselection has {len(self.preselection)} scores, expected b - r = {self.b - self.r}.")
        for score in self.preselection:
            if not self.dist.contains(score):
                raise InvalidInstanceError(f"Error: WsspInstance - preselection score {score} is outside the support.")


def value_recurrence_step(v_next: Number, v_accept_best: Number, d: ScoreDistribution) -> Number:
    """
    One step of the generic recurrence: E[max(v_next, S + v_accept_best)],
    written as v_next + Z (F(Z) - 1) + integral_Z^beta s f(s) ds with Z = v_next - v_accept_best.
    An accept value of -inf means the accept branch does not exist, and v_next is returned.
    """
    v_next_arr = np.asarray(v_next, dtype=float)
    accept_arr = np.asarray(v_accept_best, dtype=float)
    absent = np.isneginf(accept_arr)
    z = np.where(absent, 0.0, v_next_arr - np.where(absent, 0.0, accept_arr))
    stepped = v_next_arr + z * (np.asarray(d.cdf(z)) - 1.0) + np.asarray(d.upper_partial_expectation(z))
    out = np.where(absent, v_next_arr, stepped)
    if np.ndim(v_next) == 0 and np.ndim(v_accept_best) == 0:
        return float(out)
    return out


def _uniform_layer(v_next: np.ndarray, v_accept_best: np.ndarray, lower: float, upper: float) -> np.ndarray:
    # an absent accept branch (-inf) makes z = +inf; the result is finite but not v_next there
    z = v_next - v_accept_best
    zc = np.minimum(np.maximum(z, lower), upper)
    quadratic = (zc * (zc - 2.0 * lower) + upper * upper) * (0.5 / (upper - lower))
    # max(z - upper, 0) - z
    return v_next + quadratic + np.maximum(-upper, -z)


def uniform_recurrence_step(v_next: Number, v_accept_best: Number, lower: float, upper: float) -> Number:
    """
    Closed-form step for scores uniform on [lower, upper]:
    V_j = V_{j+1} + (Z^2 - 2 lower Z + upper^2) / (2 (upper - lower)) - Z, with Z clamped into the support.
    Above the support the quadratic is continued by Z itself (the candidate is never taken).
    """
    if lower >= upper:
        raise InvalidDistributionError(
            f"Error: uniform_recurrence_step - need lower < upper, got {lower} >= {upper}.")
    v_next_arr = np.asarray(v_next, dtype=float)
    accept_arr = np.asarray(v_accept_best, dtype=float)
    out = np.where(np.isneginf(accept_arr), v_next_arr, _uniform_layer(v_next_arr, accept_arr, lower, upper))
    if np.ndim(v_next) == 0 and np.ndim(v_accept_best) == 0:
        return float(out)
    return out


def rank_recurrence_step(v_next: Number, v_accept_best: Number, population: int) -> Number:
    """
    Minimising step over absolute ranks uniform on {1..M}:
    V_j = V_{j+1} - (Z^2 - Z) / (2M), Z = V_{j+1} - v_accept_best clamped into [0, M].
    Past M the rank can no longer beat Z, so the step is continued linearly.
    An accept value of +inf means the accept branch does not exist.
    """
    v_next_arr = np.asarray(v_next, dtype=float)
    accept_arr = np.asarray(v_accept_best, dtype=float)
    absent = np.isposinf(accept_arr)
    z = np.where(absent, 0.0, v_next_arr - np.where(absent, 0.0, accept_arr))
    zc = np.clip(z, 0.0, population)
    stepped = v_next_arr - (zc * zc - zc) / (2.0 * population) - np.maximum(z - population, 0.0)
    out = np.where(absent, v_next_arr, stepped)
    if np.ndim(v_next) == 0 and np.ndim(v_accept_best) == 0:
        return float(out)
    return out


class _Continuations:
    """
    Accept continuations of one layer: fill[X, Y] = layer[X-1, Y], fire[X, Y] = layer[X, Y-1],
    ``absent`` where the move does not exist. Both are views into one framed buffer,
    reused from layer to layer.
    """
    def __init__(self, r: int, retained: int, absent: float):
        self._framed = np.full((r + 2, retained + 2), absent)
        self.fill = self._framed[:-1, 1:]
        self.fire = self._framed[1:, :-1]

    def load(self, layer: np.ndarray) -> "_Continuations":
        self._framed[1:, 1:] = layer
        return self


class _GridTable:
    """Shared indexing for the (j, X, Y) grids; j runs 1..n+1, row 0 is unused."""
    maximise = True

    def __init__(self, n: int, r: int, retained: int, values: np.ndarray):
        self.n = n
        self.r = r
        self.retained = retained
        values.flags.writeable = False
        self.values = values

    def _check(self, j: int, x: int, y: int, last: int) -> None:
        if not (1 <= j <= last and 0 <= x <= self.r and 0 <= y <= self.retained):
            raise IndexError(
                f"Error: {type(self).__name__} - state (j={j}, X={x}, Y={y}) is outside the grid "
                f"j in [1, {last}], X in [0, {self.r}], Y in [0, {self.retained}].")

    def value(self, j: int, x: int, y: int) -> float:
        self._check(j, x, y, self.n + 1)
        return float(self.values[j, x, y])

    def accept_value(self, j: int, x: int, y: int) -> float:
        """Best continuation after an accept at layer j: fill an empty position or fire one employee."""
        self._check(j, x, y, self.n + 1)
        options = []
        if x > 0:
            options.append(float(self.values[j, x - 1, y]))
        if y > 0:
            options.append(float(self.values[j, x, y - 1]))
        if not options:
            return -math.inf if self.maximise else math.inf
        return max(options) if self.maximise else min(options)

    def prefers_fill(self, j: int, x: int, y: int) -> bool:
        """Whether accepting candidate j should fill an empty position (ties fill)."""
        self._check(j, x, y, self.n)
        if x == 0:
            return False
        if y == 0:
            return True
        fill = float(self.values[j + 1, x - 1, y])
        fire = float(self.values[j + 1, x, y - 1])
        return fill >= fire if self.maximise else fill <= fire

    def threshold(self, j: int, x: int, y: int) -> float:
        raise NotImplementedError

    def rows(self) -> Iterator[Tuple[int, int, int, float, Optional[float]]]:
        """(j, X, Y, V, T) in lexicographic order; T is None on the terminal layer."""
        for j in range(1, self.n + 2):
            for x in range(self.r + 1):
                for y in range(self.retained + 1):
                    t = self.threshold(j, x, y) if j <= self.n else None
                    yield j, x, y, float(self.values[j, x, y]), t


class ValueTable(_GridTable):
    """
    Expected optimal reward V[j][X][Y] with X empty positions and Y positions held by
    preselected employees, before candidate j is interviewed.

    :param n: Number of candidates of the (remaining) horizon.
    :param r: Number of empty positions at j = 1.
    :param preselection: Scores of the retained employees, sorted descending.
    :param dist: Score distribution the table was built for.
    :param values: Grid of shape (n + 2, r + 1, len(preselection) + 1).
    :param instance: The instance the table solves, when built from one.
    """
    maximise = True

    def __init__(self, n: int, r: int, preselection: Sequence[float], dist: ScoreDistribution,
                 values: np.ndarray, instance: Optional[WsspInstance] = None):
        super().__init__(n, r, len(preselection), values)
        self.preselection = tuple(preselection)
        self.dist = dist
        self.instance = instance
        self.prefix = np.concatenate([[0.0], np.cumsum(self.preselection)])

    def threshold(self, j: int, x: int, y: int) -> float:
        """
        Score candidate j must strictly beat: V[j+1][X][Y] minus the best accept continuation.
        Negative in forced states, +inf when there is no capacity left.
        """
        self._check(j, x, y, self.n)
        if x == 0 and y == 0:
            return math.inf
        return float(self.values[j + 1, x, y]) - self.accept_value(j + 1, x, y)


class RankValueTable(_GridTable):
    """
    Expected sum of absolute ranks (1 is best) of the final selection, minimised.
    Infeasible states hold +inf.

    :param n: Number of candidates.
    :param b: Number of job positions.
    :param r: Number of initially empty positions.
    :param population: Rank scale M used by the recurrence.
    :param values: Grid of shape (n + 2, r + 1, b - r + 1).
    """
    maximise = False

    def __init__(self, n: int, b: int, r: int, population: int, values: np.ndarray):
        super().__init__(n, r, b - r, values)
        self.b = b
        self.population = population

    def threshold(self, j: int, x: int, y: int) -> float:
        """Absolute rank candidate j must strictly beat, clamped into [0, M]; +inf without capacity."""
        self._check(j, x, y, self.n)
        if x == 0 and y == 0:
            return math.inf
        raw = float(self.values[j + 1, x, y]) - self.accept_value(j + 1, x, y)
        if math.isnan(raw):
            # both continuations infeasible
            return float(self.population)
        return min(max(raw, 0.0), float(self.population))

    def relative_threshold(self, j: int, x: int, y: int) -> float:
        return relative_rank_threshold(self.threshold(j, x, y), j, self.n, self.b, self.r)


def _induct_values(n: int, r: int, preselection: Sequence[float], dist: ScoreDistribution,
                   closed_form: bool = True) -> np.ndarray:
    retained = len(preselection)
    prefix = np.concatenate([[0.0], np.cumsum(preselection)])
    values = np.zeros((n + 2, r + 1, retained + 1))
    mu = dist.mean
    use_uniform = closed_form and dist.kind == UNIFORM
    # terminal layer: every position must be held, so only X = 0 is feasible
    values[n + 1, 0] = prefix
    continuations = _Continuations(r, retained, -math.inf)
    for j in range(n, 0, -1):
        remaining = n - j + 1
        nxt = values[j + 1]
        moves = continuations.load(nxt)
        accept = np.maximum(moves.fill, moves.fire)
        if use_uniform:
            values[j] = _uniform_layer(nxt, accept, dist.lower, dist.upper)
            # no capacity: nothing to accept
            values[j, 0, 0] = nxt[0, 0]
        else:
            values[j] = value_recurrence_step(nxt, accept, dist)
        if remaining <= r:
            # X = remaining is a forced fill, larger X cannot be filled
            values[j, remaining] = remaining * mu + prefix
            values[j, remaining + 1:] = 0.0
    return values


def build_value_table(inst: WsspInstance, closed_form: bool = True) -> ValueTable:
    """
    Backward induction from j = n+1 down to 1 over the whole (X, Y) grid,
    including states the process cannot reach, since the accept branch reads them.

    :param inst: The instance to solve.
    :param closed_form: Use the closed-form step for uniform scores (the generic step otherwise).
    :return: The value table.
    """
    logger.debug(f"Building value table for n={inst.n}, b={inst.b}, r={inst.r}...")
    values = _induct_values(inst.n, inst.r, inst.preselection, inst.dist, closed_form)
    return ValueTable(inst.n, inst.r, inst.preselection, inst.dist, values, instance=inst)


def build_remaining_table(dist: ScoreDistribution, n_remaining: int, empty: int,
                          retained: Sequence[float]) -> ValueTable:
    """
    Table for the rest of a round: ``n_remaining`` candidates still to come, ``empty``
    positions to fill and the ``retained`` preselected scores still in place.
    Unlike a full instance, more positions than candidates are allowed here.
    """
    if n_remaining < 1:
        raise InvalidInstanceError(f"Error: build_remaining_table - no candidates left (n={n_remaining}).")
    if not 0 <= empty <= n_remaining:
        raise InvalidInstanceError(
            f"Error: build_remaining_table - cannot fill {empty} positions with {n_remaining} candidates.")
    retained = tuple(sorted((float(s) for s in retained), reverse=True))
    values = _induct_values(n_remaining, empty, retained, dist)
    return ValueTable(n_remaining, empty, retained, dist, values)


def acceptance_threshold(t: ValueTable, j: int, x: int, y: int) -> float:
    return t.threshold(j, x, y)


def rank_population(n: int, b: int, r: int, denominator: str = POPULATION) -> int:
    if denominator == POPULATION:
        return n + b - r
    if denominator == LITERAL:
        return n + b
    raise ValueError(f"Error: rank_population - unknown denominator '{denominator}'.")


def build_rank_value_table(n: int, b: int, r: int, denominator: str = POPULATION) -> RankValueTable:
    """
    Rank-based (no-information) table. The i-th best preselected employee is valued at
    its expected absolute rank i (M + 1) / (b - r + 1); a forced hire at (M + 1) / 2.

    :param denominator: "population" for M = n + b - r, "literal" for M = n + b.
    """
    if not 1 <= b <= n:
        raise InvalidInstanceError(f"Error: build_rank_value_table - need 1 <= b <= n, got b={b}, n={n}.")
    if not 0 <= r <= b:
        raise InvalidInstanceError(f"Error: build_rank_value_table - need 0 <= r <= b, got r={r}, b={b}.")
    population = rank_population(n, b, r, denominator)
    logger.debug(f"Building rank value table for n={n}, b={b}, r={r}, M={population}...")
    retained = b - r
    expected_ranks = np.arange(1, retained + 1) * (population + 1) / (retained + 1)
    prefix = np.concatenate([[0.0], np.cumsum(expected_ranks)])
    values = np.full((n + 2, r + 1, retained + 1), math.inf)
    values[n + 1, 0] = prefix
    continuations = _Continuations(r, retained, math.inf)
    # forced and infeasible rows see inf - inf before they are overwritten
    with np.errstate(invalid="ignore"):
        for j in range(n, 0, -1):
            remaining = n - j + 1
            nxt = values[j + 1]
            moves = continuations.load(nxt)
            values[j] = rank_recurrence_step(nxt, np.minimum(moves.fill, moves.fire), population)
            if remaining <= r:
                values[j, remaining] = remaining * (population + 1) / 2.0 + prefix
                values[j, remaining + 1:] = math.inf
    return RankValueTable(n, b, r, population, values)


def relative_rank_threshold(t_abs: float, j: int, n: int, b: int, r: int) -> float:
    """Relative-rank threshold after j + b - r of the n + b - r individuals have been seen."""
    if not 1 <= j <= n:
        raise IndexError(f"Error: relative_rank_threshold - j={j} is outside [1, {n}].")
    return (j + b - r) / (n + b - r) * t_abs


TABLE_HEADER = ("j", "X", "Y", "V", "T")


def _csv_number(value: Optional[float]) -> str:
    # blank for the terminal T and for infinite cells
    if value is None or math.isinf(value):
        return ""
    return f"{value:.6f}"


def table_to_csv(table: _GridTable) -> str:
    """
    Renders ``rows()`` as CSV in 6-decimal fixed point. Cells without a number are left blank:
    T on the terminal layer and with no capacity left, V of infeasible rank-table states.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for j, x, y, v, t in table.rows():
        writer.writerow([j, x, y, _csv_number(v), _csv_number(t)])
    return buffer.getvalue()


def write_table_csv(table: _GridTable, path: str) -> str:
    text = table_to_csv(table)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path
