import bisect
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, InsufficientDataError, UnknownPolicyError
from .score_distribution import DISCRETE, DistributionEstimator, ScoreDistribution
from .value_tables import (
    POPULATION,
    RankValueTable,
    ValueTable,
    WsspInstance,
    build_rank_value_table,
    build_remaining_table,
    build_value_table,
)

logger = logging.getLogger(__name__)

CCMDP = "ccmdp"
CCMDP_PARTIAL = "ccmdp-partial"
CCMDP_RANK = "ccmdp-rank"
MEAN = "mean"
CCM = "ccm"
CCM_STAR = "ccm-star"
RAND = "rand"
VALID_POLICY_SPECS = (CCMDP, CCMDP_PARTIAL, CCMDP_RANK, MEAN, "ccm:c=<int>", CCM_STAR, RAND)


@dataclass(frozen=True)
class SelectionState:
    """
    Live counters of a round before candidate j is interviewed.

    :param n: Number of candidates in the round.
    :param preselection: Preselected scores, sorted descending.
    :param j: Index of the next candidate (n + 1 once the round is over).
    :param x: Empty positions.
    :param y: Positions still held by preselected employees (always the y best ones).
    :param decisions: Decisions taken so far, 1 for a hire.
    :param hires: Scores of the hired candidates.
    """
    n: int
    preselection: Tuple[float, ...]
    j: int
    x: int
    y: int
    decisions: Tuple[int, ...] = ()
    hires: Tuple[float, ...] = ()

    @classmethod
    def initial(cls, inst: WsspInstance) -> "SelectionState":
        return cls(n=inst.n, preselection=inst.preselection, j=1, x=inst.r, y=len(inst.preselection))

    @property
    def retained(self) -> Tuple[bool, ...]:
        return tuple(i < self.y for i in range(len(self.preselection)))

    @property
    def has_capacity(self) -> bool:
        return self.x > 0 or self.y > 0

    @property
    def is_forced(self) -> bool:
        """Every remaining candidate is needed to fill the empty positions."""
        return 0 < self.x == self.n - self.j + 1

    @property
    def retained_scores(self) -> Tuple[float, ...]:
        return self.preselection[:self.y]

    @property
    def employees(self) -> Tuple[float, ...]:
        return self.retained_scores + self.hires


def apply_decision(state: SelectionState, accept: bool, score: float,
                   fill_preferred: bool = True) -> SelectionState:
    """
    Moves to the next candidate. An accepted candidate fills an empty position when one
    exists and filling is preferred, otherwise it takes the position of the worst
    retained preselected employee.

    :param state: State before candidate ``state.j``.
    :param accept: The decision for the candidate.
    :param score: The candidate's score.
    :param fill_preferred: Accept-branch preference (the table's argmax; fill-first without a table).
    :return: The state before candidate ``state.j + 1``.
    """
    if state.j > state.n:
        raise CapacityError(f"Error: apply_decision - the round is over (j={state.j}, n={state.n}).")
    if not accept:
        return replace(state, j=state.j + 1, decisions=state.decisions + (0,))
    if not state.has_capacity:
        raise CapacityError(f"Error: apply_decision - accept at j={state.j} with no capacity left (X=0, Y=0).")
    x, y = state.x, state.y
    if x > 0 and (fill_preferred or y == 0):
        x -= 1
    else:
        y -= 1
    return replace(state, j=state.j + 1, x=x, y=y,
                   decisions=state.decisions + (1,), hires=state.hires + (float(score),))


def _guard(state: SelectionState) -> Optional[bool]:
    # decisions every policy shares: no capacity rejects, forced fills accept
    if not state.has_capacity:
        return False
    if state.is_forced:
        return True
    return None


def ccmdp_decide(state: SelectionState, score: float, table: ValueTable) -> bool:
    """Accept iff the score strictly beats the table threshold for (j, X, Y)."""
    guarded = _guard(state)
    if guarded is not None:
        return guarded
    return score > table.threshold(state.j, state.x, state.y)


class RankMemory:
    """
    Sorted multiset of every score seen this round (preselection included),
    used to give a new score its relative rank.
    """
    def __init__(self, scores: Iterable[float] = ()):
        self._scores: List[float] = sorted(float(s) for s in scores)

    def __len__(self) -> int:
        return len(self._scores)

    def relative_rank(self, score: float) -> int:
        """1 + number of stored scores strictly larger than ``score``."""
        return 1 + len(self._scores) - bisect.bisect_right(self._scores, score)

    def insert(self, score: float) -> None:
        bisect.insort(self._scores, float(score))


def _rank_accepts(state: SelectionState, score: float, mem: RankMemory, rank_table: RankValueTable) -> bool:
    guarded = _guard(state)
    if guarded is not None:
        return guarded
    tau = rank_table.relative_threshold(state.j, state.x, state.y)
    return mem.relative_rank(score) < tau


def ccmdp_rank_decide(state: SelectionState, score: float, mem: RankMemory,
                      rank_table: RankValueTable) -> bool:
    """Accept iff the relative rank is strictly better (lower) than the relative-rank threshold."""
    accept = _rank_accepts(state, score, mem, rank_table)
    mem.insert(score)
    return accept


def ccmdp_partial_decide(state: SelectionState, score: float, est: DistributionEstimator,
                         mem: RankMemory, rank_table: RankValueTable) -> Tuple[bool, Optional[ValueTable]]:
    """
    Fits the known shape to everything observed so far and decides with a table for the
    rest of the round; falls back to the rank rule while the estimator cannot fit.
    The score is observed only after deciding.

    :return: The decision and the table it came from (None for the rank fallback or a guarded state).
    """
    table = None
    guarded = _guard(state)
    if guarded is not None:
        accept = guarded
    else:
        try:
            fitted = est.fit()
        except InsufficientDataError:
            accept = _rank_accepts(state, score, mem, rank_table)
        else:
            table = build_remaining_table(fitted, state.n - state.j + 1, state.x, state.retained_scores)
            accept = score > table.threshold(1, state.x, state.y)
    est.observe(score)
    mem.insert(score)
    return accept, table


def mean_decide(state: SelectionState, score: float, employees: Sequence[float]) -> bool:
    """Hire above the mean of the current employees; with nobody employed, hire."""
    guarded = _guard(state)
    if guarded is not None:
        return guarded
    if len(employees) == 0:
        return True
    return score > float(np.mean(employees))


def ccm_quantile_rank(b: int, c: int, n: int) -> int:
    # half-up rounding of b*c/n
    return max(1, int(math.floor(b * c / n + 0.5)))


def ccm_decide(state: SelectionState, score: float, c: int, learn_buffer: List[float], b: int) -> bool:
    """
    Cutoff rule: the first c candidates are rejected and remembered; afterwards a candidate
    is hired when strictly above the k-th best learning-phase score, k = max(1, round(b c / n)).
    """
    if state.j <= c:
        learn_buffer.append(float(score))
    guarded = _guard(state)
    if guarded is not None:
        return guarded
    if state.j <= c or not learn_buffer:
        return False
    k = min(ccm_quantile_rank(b, c, state.n), len(learn_buffer))
    threshold = sorted(learn_buffer, reverse=True)[k - 1]
    return score > threshold


def rand_decide(state: SelectionState, rng: np.random.Generator, b: int) -> bool:
    """Hire with probability b / n. One draw is consumed per candidate whatever the state."""
    u = rng.random()
    guarded = _guard(state)
    if guarded is not None:
        return guarded
    return bool(u < b / state.n)


@dataclass(frozen=True)
class PolicySpec:
    """
    :param kind: Policy name, see ``VALID_POLICY_SPECS``.
    :param c: Learning-phase length for "ccm" (None until resolved for "ccm-star").
    """
    kind: str
    c: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind == CCM and self.c is not None:
            return f"ccm:c={self.c}"
        return self.kind


def parse_policy(spec: str) -> PolicySpec:
    text = spec.strip().lower() if isinstance(spec, str) else ""
    if text in (CCMDP, CCMDP_PARTIAL, CCMDP_RANK, MEAN, CCM_STAR, RAND):
        return PolicySpec(kind=text)
    if text.startswith("ccm:c="):
        try:
            c = int(text[len("ccm:c="):])
        except ValueError:
            c = -1
        if c >= 0:
            return PolicySpec(kind=CCM, c=c)
    raise UnknownPolicyError(
        f"Error: parse_policy - unknown policy '{spec}'. Valid specs: {', '.join(VALID_POLICY_SPECS)}.")


class SelectionPolicy:
    """
    An online decision rule. ``start_round`` is called before each round, ``decide``
    once per candidate (policies only ever see the current score), ``prefers_fill``
    after an accept.
    """
    name = "policy"

    def start_round(self, inst: WsspInstance) -> None:
        self.inst = inst

    def decide(self, state: SelectionState, score: float) -> bool:
        raise NotImplementedError

    def prefers_fill(self, state: SelectionState) -> bool:
        return True


class CcmdpPolicy(SelectionPolicy):
    """Full information: one value table per round, built from the true distribution."""
    name = CCMDP

    def start_round(self, inst: WsspInstance) -> None:
        super().start_round(inst)
        self.table = build_value_table(inst)

    def decide(self, state: SelectionState, score: float) -> bool:
        return ccmdp_decide(state, score, self.table)

    def prefers_fill(self, state: SelectionState) -> bool:
        return self.table.prefers_fill(state.j, state.x, state.y)


class _RankTables:
    def __init__(self, denominator: str):
        self.denominator = denominator
        self._cache: Dict[Tuple[int, int, int], RankValueTable] = {}

    def get(self, n: int, b: int, r: int) -> RankValueTable:
        key = (n, b, r)
        if key not in self._cache:
            self._cache[key] = build_rank_value_table(n, b, r, self.denominator)
        return self._cache[key]


class RankCcmdpPolicy(SelectionPolicy):
    """No information: relative ranks against everything seen in the round."""
    name = CCMDP_RANK

    def __init__(self, rank_denominator: str = POPULATION):
        self._tables = _RankTables(rank_denominator)

    def start_round(self, inst: WsspInstance) -> None:
        super().start_round(inst)
        self.rank_table = self._tables.get(inst.n, inst.b, inst.r)
        self.memory = RankMemory(inst.preselection)

    def decide(self, state: SelectionState, score: float) -> bool:
        return ccmdp_rank_decide(state, score, self.memory, self.rank_table)

    def prefers_fill(self, state: SelectionState) -> bool:
        return self.rank_table.prefers_fill(state.j, state.x, state.y)


class PartialCcmdpPolicy(SelectionPolicy):
    """
    Partial information: the shape is known, parameters are learned from every score
    observed, across rounds. The estimator is seeded with the first round's preselection.

    :param shape: "uniform" or "exponential".
    :param rank_denominator: Rank scale of the cold-start fallback.
    """
    name = CCMDP_PARTIAL

    def __init__(self, shape: str, rank_denominator: str = POPULATION):
        self.estimator = DistributionEstimator(shape)
        self._tables = _RankTables(rank_denominator)
        self._seeded = False
        self._last_table: Optional[ValueTable] = None

    def start_round(self, inst: WsspInstance) -> None:
        super().start_round(inst)
        if not self._seeded:
            logger.debug(f"Seeding the {self.estimator.shape} estimator with {len(inst.preselection)} preselected score(s)...")
            self.estimator.observe_many(inst.preselection)
            self._seeded = True
        self.rank_table = self._tables.get(inst.n, inst.b, inst.r)
        self.memory = RankMemory(inst.preselection)

    def decide(self, state: SelectionState, score: float) -> bool:
        accept, self._last_table = ccmdp_partial_decide(state, score, self.estimator, self.memory, self.rank_table)
        return accept

    def prefers_fill(self, state: SelectionState) -> bool:
        if self._last_table is not None:
            return self._last_table.prefers_fill(1, state.x, state.y)
        return self.rank_table.prefers_fill(state.j, state.x, state.y)


class MeanPolicy(SelectionPolicy):
    """Hiring above the mean of the current employees."""
    name = MEAN

    def decide(self, state: SelectionState, score: float) -> bool:
        return mean_decide(state, score, state.employees)


class CcmPolicy(SelectionPolicy):
    """
    Cutoff rule with a learning phase of c candidates.

    :param c: Learning-phase length, 0 <= c <= n.
    """
    name = CCM

    def __init__(self, c: int):
        if c < 0:
            raise ValueError(f"Error: CcmPolicy - learning phase must be non-negative, got {c}.")
        self.c = c
        self.learn_buffer: List[float] = []

    def start_round(self, inst: WsspInstance) -> None:
        if self.c > inst.n:
            raise ValueError(f"Error: CcmPolicy - learning phase c={self.c} exceeds n={inst.n}.")
        super().start_round(inst)
        self.learn_buffer = []

    def decide(self, state: SelectionState, score: float) -> bool:
        return ccm_decide(state, score, self.c, self.learn_buffer, self.inst.b)


class RandPolicy(SelectionPolicy):
    """
    Hires at random with probability b / n.

    :param seed: Seed of the policy's own PCG64 stream.
    """
    name = RAND

    def __init__(self, seed: int = 0):
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def decide(self, state: SelectionState, score: float) -> bool:
        return rand_decide(state, self.rng, self.inst.b)


def make_policy(spec: PolicySpec, dist: ScoreDistribution, seed: int = 0,
                rank_denominator: str = POPULATION) -> SelectionPolicy:
    """
    Builds a fresh policy for one replicate.

    :param spec: Parsed policy spec; "ccm-star" must already be resolved to a ccm spec.
    :param dist: True score distribution (the partial policy only uses its shape).
    :param seed: Seed for the random policy.
    """
    if spec.kind == CCMDP:
        return CcmdpPolicy()
    if spec.kind == CCMDP_PARTIAL:
        if dist.kind == DISCRETE:
            raise UnknownPolicyError("Error: make_policy - ccmdp-partial needs a uniform or exponential shape.")
        return PartialCcmdpPolicy(dist.kind, rank_denominator)
    if spec.kind == CCMDP_RANK:
        return RankCcmdpPolicy(rank_denominator)
    if spec.kind == MEAN:
        return MeanPolicy()
    if spec.kind == CCM and spec.c is not None:
        return CcmPolicy(spec.c)
    if spec.kind == RAND:
        return RandPolicy(seed)
    raise UnknownPolicyError(f"Error: make_policy - cannot build policy '{spec.label}' (ccm-star needs a resolved c).")
