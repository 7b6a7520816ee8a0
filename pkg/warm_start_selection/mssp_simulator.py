import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, InvalidInstanceError
from .score_distribution import GENERATOR_ID, ScoreDistribution
from .selection_policies import (
    CCM,
    CCM_STAR,
    PolicySpec,
    SelectionPolicy,
    SelectionState,
    apply_decision,
    make_policy,
    parse_policy,
)
from .value_tables import LITERAL, POPULATION, WsspInstance

logger = logging.getLogger(__name__)

REPORT_HEADER = ("policy", "round", "mean_regret", "std", "stderr", "replicates")
# spawn keys separating the measured replicates from the CCM* pilot runs
MAIN_STREAM = 0
PILOT_STREAM = 1


@dataclass(frozen=True)
class RoundResult:
    """
    Outcome of one round.

    :param decisions: 1 for every hired candidate, in arrival order.
    :param retained: Whether each preselected employee (sorted descending) kept the position.
    :param reward: Online reward, retained preselected scores plus hired scores.
    :param offline_reward: Best reward reachable with the whole round known in advance.
    :param regret: |offline_reward - reward|.
    :param selection: The b scores holding positions at the end.
    """
    decisions: Tuple[int, ...]
    retained: Tuple[bool, ...]
    reward: float
    offline_reward: float
    regret: float
    selection: Tuple[float, ...]


def run_round(inst: WsspInstance, stream: Sequence[float], policy: SelectionPolicy) -> RoundResult:
    """
    Interviews the candidates in order, letting the policy decide on each one.

    :param inst: The round's instance.
    :param stream: The n candidate scores, in arrival order.
    :param policy: The decision rule; ``start_round`` is called here.
    :return: The round's result.
    """
    if len(stream) != inst.n:
        raise InvalidInstanceError(f"Error: run_round - stream has {len(stream)} scores, expected n={inst.n}.")
    policy.start_round(inst)
    state = SelectionState.initial(inst)
    for score in stream:
        score = float(score)
        accept = bool(policy.decide(state, score))
        fill_preferred = policy.prefers_fill(state) if accept else True
        state = apply_decision(state, accept, score, fill_preferred)
    if state.x != 0 or len(state.employees) != inst.b:
        raise CapacityError(
            f"Error: run_round - policy '{policy.name}' left {state.x} position(s) empty at the end of the round.")
    reward = sum(state.retained_scores) + sum(state.hires)
    offline = offline_reward(inst.preselection, stream, inst.b, inst.r)
    if reward > offline + 1e-9:
        raise RuntimeError(f"Error: run_round - online reward {reward} exceeds the offline reward {offline}.")
    return RoundResult(decisions=state.decisions, retained=state.retained, reward=reward,
                       offline_reward=offline, regret=abs(offline - reward), selection=state.employees)


def offline_reward(preselection: Sequence[float], candidates: Sequence[float], b: int, r: int) -> float:
    """
    Best total over selections of b scores from preselection and candidates that hold at
    least r candidates: take the top b, then swap the best unused candidates in for the
    worst chosen preselected scores until r candidates are in.
    """
    if len(candidates) < r:
        raise InvalidInstanceError(f"Error: offline_reward - {len(candidates)} candidates cannot fill r={r} positions.")
    if len(preselection) + len(candidates) < b:
        raise InvalidInstanceError(f"Error: offline_reward - fewer than b={b} scores available.")
    pre = sorted((float(s) for s in preselection), reverse=True)
    cand = sorted((float(s) for s in candidates), reverse=True)
    merged = sorted([(s, 0) for s in pre] + [(s, 1) for s in cand], key=lambda t: t[0], reverse=True)[:b]
    chosen_pre = sorted(s for s, is_candidate in merged if not is_candidate)
    chosen_cand = [s for s, is_candidate in merged if is_candidate]
    unused = cand[len(chosen_cand):]
    while len(chosen_cand) < r:
        chosen_pre.pop(0)
        chosen_cand.append(unused.pop(0))
    return sum(chosen_pre) + sum(chosen_cand)


def aggregate(regrets: Sequence[float]) -> Tuple[float, float, float]:
    """
    Mean, population standard deviation and standard error, accumulated in the given
    (replicate-index) order.
    """
    values = np.asarray(regrets, dtype=float)
    if values.size == 0:
        raise ValueError("Error: aggregate - need at least one replicate.")
    mean = float(values.mean())
    std = float(values.std(ddof=0))
    return mean, std, std / float(np.sqrt(values.size))


@dataclass(frozen=True)
class MsspConfig:
    """
    Multi-round simulation settings.

    :param rounds: Number of chained rounds K.
    :param population: Size N of the fixed population of job-seekers.
    :param n: Candidates interviewed per round.
    :param b: Job positions.
    :param r: Resignations per round (and empty positions in round 1).
    :param dist: Score distribution of the population.
    :param policies: Policy spec strings, one report block each.
    :param replicates: Independent replicates per policy.
    :param seed: Master seed; replicate i uses seed XOR i.
    :param processes: Worker processes for replicates (1 runs in-process).
    :param pilot_replicates: Replicates per grid point of the CCM* search.
    :param ccm_grid: Learning-phase lengths tried by the CCM* search.
    :param rank_denominator: "population" (M = n + b - r) or "literal" (M = n + b).
    """
    rounds: int = 10
    population: int = 10000
    n: int = 100
    b: int = 5
    r: int = 0
    dist: ScoreDistribution = field(default_factory=ScoreDistribution.uniform)
    policies: Tuple[str, ...] = ("ccmdp",)
    replicates: int = 500
    seed: int = 0
    processes: int = 1
    pilot_replicates: int = 20
    ccm_grid: Tuple[int, ...] = tuple(range(5, 55, 5))
    rank_denominator: str = POPULATION

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "ccm_grid", tuple(self.ccm_grid))
        self.validate()

    def validate(self) -> None:
        if self.rounds < 1:
            raise InvalidInstanceError(f"Error: MsspConfig - rounds must be at least 1, got {self.rounds}.")
        if self.replicates < 1:
            raise InvalidInstanceError(f"Error: MsspConfig - replicates must be at least 1, got {self.replicates}.")
        if not 0 <= self.r <= self.b:
            raise InvalidInstanceError(f"Error: MsspConfig - need 0 <= r <= b, got r={self.r}, b={self.b}.")
        if not 1 <= self.b <= self.n:
            raise InvalidInstanceError(f"Error: MsspConfig - need 1 <= b <= n, got b={self.b}, n={self.n}.")
        if self.n + self.b > self.population:
            raise InvalidInstanceError(
                f"Error: MsspConfig - population N={self.population} cannot supply n={self.n} candidates "
                f"beside b={self.b} employees.")
        if not self.policies:
            raise InvalidInstanceError("Error: MsspConfig - at least one policy is required.")
        for spec in self.policies:
            parse_policy(spec)
        duplicates = sorted({spec for spec in self.policies if self.policies.count(spec) > 1})
        if duplicates:
            raise InvalidInstanceError(f"Error: MsspConfig - duplicate policy '{duplicates[0]}'; each policy runs once.")
        if self.processes < 1:
            raise InvalidInstanceError(f"Error: MsspConfig - processes must be at least 1, got {self.processes}.")
        if self.pilot_replicates < 1:
            raise InvalidInstanceError("Error: MsspConfig - pilot_replicates must be at least 1.")
        if self.rank_denominator not in (POPULATION, LITERAL):
            raise InvalidInstanceError(f"Error: MsspConfig - unknown rank denominator '{self.rank_denominator}'.")


@dataclass
class ReplicateOutcome:
    regrets: np.ndarray
    selection_sums: np.ndarray


@dataclass
class MsspReport:
    """
    Per (policy, round) regret statistics plus the raw per-replicate matrices.

    :param rows: (policy, round, mean, std, stderr, replicates) tuples, policies in config order.
    :param regrets: Policy label -> array (replicates, rounds) of regrets.
    :param selection_sums: Policy label -> array (replicates, rounds) of final-selection totals.
    :param metadata: Config echo, seed, generator id and resolved CCM* learning phase.
    """
    rows: List[Tuple[str, int, float, float, float, int]]
    regrets: Dict[str, np.ndarray]
    selection_sums: Dict[str, np.ndarray]
    metadata: Dict[str, object]

    def mean_regret(self, policy: str) -> np.ndarray:
        return np.array([row[2] for row in self.rows if row[0] == policy])

    def stderr(self, policy: str) -> np.ndarray:
        return np.array([row[4] for row in self.rows if row[0] == policy])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for policy, k, mean, std, stderr, count in self.rows:
            writer.writerow([policy, k, f"{mean:.6f}", f"{std:.6f}", f"{stderr:.6f}", count])
        return buffer.getvalue()


def write_report_csv(report: MsspReport, path: str) -> str:
    text = report.to_csv()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def _replicate_seeds(master_seed: int, replicate_index: int, stream_key: int) -> List[np.random.SeedSequence]:
    root = np.random.SeedSequence(master_seed ^ replicate_index, spawn_key=(stream_key,))
    return root.spawn(3)


def run_replicate(cfg: MsspConfig, spec: PolicySpec, replicate_index: int,
                  stream_key: int = MAIN_STREAM) -> ReplicateOutcome:
    """
    One MSSP replicate: a fixed population, K chained rounds, r resignations between rounds.
    Policies run with the same index share the population and the sampling stream.
    """
    population_seq, process_seq, policy_seq = _replicate_seeds(cfg.seed, replicate_index, stream_key)
    population = cfg.dist.sample_stream(int(population_seq.generate_state(1)[0]), cfg.population)
    rng = np.random.Generator(np.random.PCG64(process_seq))
    policy = make_policy(spec, cfg.dist, seed=int(policy_seq.generate_state(1)[0]),
                         rank_denominator=cfg.rank_denominator)
    everyone = np.arange(cfg.population)
    employees = rng.choice(cfg.population, size=cfg.b - cfg.r, replace=False)
    regrets = np.zeros(cfg.rounds)
    sums = np.zeros(cfg.rounds)
    for k in range(cfg.rounds):
        if k > 0:
            # resigned employees go back to the population
            stay = np.sort(rng.choice(cfg.b, size=cfg.b - cfg.r, replace=False))
            employees = employees[stay]
        pool = np.setdiff1d(everyone, employees, assume_unique=True)
        candidates = rng.choice(pool, size=cfg.n, replace=False)
        order = np.argsort(-population[employees], kind="stable")
        employees = employees[order]
        inst = WsspInstance(cfg.n, cfg.b, cfg.r, tuple(population[employees]), cfg.dist)
        result = run_round(inst, population[candidates], policy)
        hired = candidates[np.asarray(result.decisions, dtype=bool)]
        employees = np.concatenate([employees[np.asarray(result.retained, dtype=bool)], hired])
        regrets[k] = result.regret
        sums[k] = sum(result.selection)
    logger.debug(f"Finished replicate {replicate_index} for policy '{spec.label}'.")
    return ReplicateOutcome(regrets=regrets, selection_sums=sums)


def _replicate_job(args) -> ReplicateOutcome:
    return run_replicate(*args)


def _run_replicates(cfg: MsspConfig, spec: PolicySpec, count: int, stream_key: int) -> List[ReplicateOutcome]:
    jobs = [(cfg, spec, i, stream_key) for i in range(count)]
    if cfg.processes == 1:
        return [_replicate_job(job) for job in jobs]
    # map keeps replicate-index order whatever the completion order
    with Pool(processes=cfg.processes) as pool:
        return pool.map(_replicate_job, jobs)


def select_ccm_learning_phase(cfg: MsspConfig) -> int:
    """
    CCM*: the learning-phase length from ``cfg.ccm_grid`` with the lowest mean regret over
    pilot replicates (a stream disjoint from the measured replicates). Ties keep the shorter phase.
    """
    grid = [c for c in cfg.ccm_grid if 0 <= c <= cfg.n] or [0]
    logger.info(f"Selecting CCM learning phase over {len(grid)} candidates...")
    best_c, best_regret = grid[0], np.inf
    for c in grid:
        outcomes = _run_replicates(cfg, PolicySpec(kind=CCM, c=c), cfg.pilot_replicates, PILOT_STREAM)
        regret = float(np.mean([o.regrets.mean() for o in outcomes]))
        logger.debug(f"Pilot regret for c={c}: {regret:.6f}")
        if regret < best_regret:
            best_c, best_regret = c, regret
    logger.info(f"Selected CCM learning phase c={best_c}.")
    return best_c


def run_mssp(cfg: MsspConfig) -> MsspReport:
    """
    Runs every configured policy over ``cfg.replicates`` replicates and aggregates the
    regret per round.

    :param cfg: The simulation settings.
    :return: The report, deterministic for a fixed master seed.
    """
    rows = []
    regrets: Dict[str, np.ndarray] = {}
    sums: Dict[str, np.ndarray] = {}
    ccm_star: Optional[int] = None
    for label in cfg.policies:
        spec = parse_policy(label)
        if spec.kind == CCM_STAR:
            if ccm_star is None:
                ccm_star = select_ccm_learning_phase(cfg)
            spec = PolicySpec(kind=CCM, c=ccm_star)
        logger.info(f"Running {cfg.replicates} replicate(s) for policy '{label}'...")
        outcomes = _run_replicates(cfg, spec, cfg.replicates, MAIN_STREAM)
        matrix = np.vstack([o.regrets for o in outcomes])
        regrets[label] = matrix
        sums[label] = np.vstack([o.selection_sums for o in outcomes])
        for k in range(cfg.rounds):
            mean, std, stderr = aggregate(matrix[:, k])
            rows.append((label, k + 1, mean, std, stderr, cfg.replicates))
    config_echo = asdict(cfg)
    config_echo["dist"] = cfg.dist.spec_string()
    metadata = {"config": config_echo, "seed": cfg.seed, "generator": GENERATOR_ID, "ccm_star_c": ccm_star}
    return MsspReport(rows=rows, regrets=regrets, selection_sums=sums, metadata=metadata)
