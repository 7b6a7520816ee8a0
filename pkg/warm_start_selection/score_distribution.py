import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, InvalidDistributionError

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
EXPONENTIAL = "exponential"
DISCRETE = "discrete"
KINDS = (UNIFORM, EXPONENTIAL, DISCRETE)
# named in report metadata so that streams can be regenerated elsewhere
GENERATOR_ID = "numpy.random.PCG64"

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _as_output(values: np.ndarray, like) -> Union[float, np.ndarray]:
    # scalars in, scalars out
    if np.ndim(like) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class ScoreDistribution:
    """
    Immutable model of the candidates' score distribution.
    Use the ``uniform``, ``exponential`` and ``discrete`` constructors rather than the raw fields.

    :param kind: One of "uniform", "exponential" or "discrete".
    :param lower: Lower support bound alpha (uniform only; 0 for exponential, smallest atom for discrete).
    :param upper: Upper support bound beta (inf for exponential, largest atom for discrete).
    :param rate: Rate lambda of the exponential kind.
    :param atoms: (value, probability) pairs of the discrete kind, values strictly ascending.
    """
    kind: str
    lower: float = 0.0
    upper: float = math.inf
    rate: float = 0.0
    atoms: Tuple[Tuple[float, float], ...] = ()
    _frozen: object = field(default=None, init=False, repr=False, compare=False)
    _values: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _cumulative: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _tail_sums: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidDistributionError(f"Error: ScoreDistribution - unknown kind '{self.kind}'.")
        if self.kind == UNIFORM:
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise InvalidDistributionError("Error: ScoreDistribution - uniform bounds must be finite.")
            if self.lower >= self.upper:
                raise InvalidDistributionError(
                    f"Error: ScoreDistribution - uniform needs lower < upper, got {self.lower} >= {self.upper}.")
            if self.lower < 0:
                raise InvalidDistributionError("Error: ScoreDistribution - support must be non-negative.")
        elif self.kind == EXPONENTIAL:
            if not (self.rate > 0 and math.isfinite(self.rate)):
                raise InvalidDistributionError(
                    f"Error: ScoreDistribution - exponential rate must be positive, got {self.rate}.")
            object.__setattr__(self, "lower", 0.0)
            object.__setattr__(self, "upper", math.inf)
        else:
            self._init_discrete()

    def _init_discrete(self):
        if not self.atoms:
            raise InvalidDistributionError("Error: ScoreDistribution - discrete needs at least one atom.")
        values = np.array([float(v) for v, _ in self.atoms])
        probs = np.array([float(p) for _, p in self.atoms])
        if np.any(probs <= 0):
            raise InvalidDistributionError("Error: ScoreDistribution - discrete probabilities must be positive.")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidDistributionError(
                f"Error: ScoreDistribution - discrete probabilities sum to {probs.sum()!r}, not 1.")
        if np.any(np.diff(values) <= 0):
            raise InvalidDistributionError("Error: ScoreDistribution - discrete values must be strictly ascending.")
        if values[0] < 0:
            raise InvalidDistributionError("Error: ScoreDistribution - support must be non-negative.")
        # tail_sums[i] = sum of v*p over atoms i..end, with a trailing 0
        tail = np.concatenate([np.cumsum((values * probs)[::-1])[::-1], [0.0]])
        object.__setattr__(self, "lower", float(values[0]))
        object.__setattr__(self, "upper", float(values[-1]))
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_cumulative", np.cumsum(probs))
        object.__setattr__(self, "_tail_sums", tail)

    # ---- constructors ----
    @classmethod
    def uniform(cls, lower: float = 0.0, upper: float = 1.0) -> "ScoreDistribution":
        return cls(kind=UNIFORM, lower=float(lower), upper=float(upper))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "ScoreDistribution":
        return cls(kind=EXPONENTIAL, rate=float(rate))

    @classmethod
    def discrete(cls, atoms: Iterable[Tuple[float, float]]) -> "ScoreDistribution":
        return cls(kind=DISCRETE, atoms=tuple((float(v), float(p)) for v, p in atoms))

    # ---- evaluation ----
    @property
    def is_closed_form(self) -> bool:
        return self.kind in (UNIFORM, EXPONENTIAL)

    def _scipy(self):
        # frozen on first use: fitted distributions that only feed the uniform table step never need it
        if self._frozen is None:
            if self.kind == UNIFORM:
                frozen = stats.uniform(loc=self.lower, scale=self.upper - self.lower)
            else:
                frozen = stats.expon(scale=1.0 / self.rate)
            object.__setattr__(self, "_frozen", frozen)
        return self._frozen

    def cdf(self, x: ArrayLike) -> Union[float, np.ndarray]:
        """
        F_S extended to all reals: 0 below the support, 1 above it.
        The discrete kind uses the right-continuous step form.
        """
        xs = np.asarray(x, dtype=float)
        if self.kind == DISCRETE:
            idx = np.searchsorted(self._values, xs, side="right")
            cum = np.concatenate([[0.0], self._cumulative])
            out = np.minimum(cum[idx], 1.0)
        else:
            out = self._scipy().cdf(xs)
        return _as_output(np.asarray(out, dtype=float), x)

    def density(self, x: ArrayLike) -> Union[float, np.ndarray]:
        """f_S on all reals. Atoms of the discrete kind carry no density, so it is 0 there."""
        xs = np.asarray(x, dtype=float)
        if self.kind == DISCRETE:
            out = np.zeros_like(xs)
        else:
            out = self._scipy().pdf(xs)
        return _as_output(np.asarray(out, dtype=float), x)

    @property
    def mean(self) -> float:
        if self.kind == UNIFORM:
            return 0.5 * (self.lower + self.upper)
        if self.kind == EXPONENTIAL:
            return 1.0 / self.rate
        return float(self._tail_sums[0])

    def upper_partial_expectation(self, z: ArrayLike) -> Union[float, np.ndarray]:
        """
        Integral of s f_S(s) over (max(z, alpha), beta], in closed form for every kind.
        Equals the mean below the support and 0 above it. For the discrete kind an
        atom sitting exactly at z is excluded (it belongs to F_S(z)).

        :param z: Lower integration limit, any real (scalar or array).
        :return: Partial expectation, same shape as z.
        """
        zs = np.asarray(z, dtype=float)
        if self.kind == UNIFORM:
            zc = np.clip(zs, self.lower, self.upper)
            # (beta - zc)/(beta - alpha) is exactly 1.0 at zc = alpha, so the mean comes back exactly
            out = 0.5 * (self.upper + zc) * ((self.upper - zc) / (self.upper - self.lower))
        elif self.kind == EXPONENTIAL:
            zc = np.maximum(zs, 0.0)
            out = (zc + 1.0 / self.rate) * np.exp(-self.rate * zc)
        else:
            idx = np.searchsorted(self._values, zs, side="right")
            out = self._tail_sums[idx]
        return _as_output(np.asarray(out, dtype=float), z)

    def ppf(self, u: ArrayLike) -> Union[float, np.ndarray]:
        """Quantile function used for inverse-transform sampling, u in [0, 1)."""
        us = np.asarray(u, dtype=float)
        if self.kind == DISCRETE:
            idx = np.searchsorted(self._cumulative, us, side="right")
            out = self._values[np.minimum(idx, len(self._values) - 1)]
        else:
            out = self._scipy().ppf(us)
        return _as_output(np.asarray(out, dtype=float), u)

    def contains(self, x: float) -> bool:
        if self.kind == DISCRETE:
            return bool(np.any(np.isclose(self._values, x, rtol=0.0, atol=1e-12)))
        return self.lower <= x <= self.upper

    def sample_stream(self, seed: int, count: int) -> np.ndarray:
        """
        Draws ``count`` scores by inverse transform from a PCG64 generator seeded with ``seed``.
        The same (distribution, seed, count) always gives the same stream.
        """
        if count < 0:
            raise ValueError(f"Error: sample_stream - count must be non-negative, got {count}.")
        rng = np.random.Generator(np.random.PCG64(seed))
        return np.asarray(self.ppf(rng.random(count)), dtype=float).reshape(count)

    def spec_string(self) -> str:
        """The ``--dist`` form of this distribution; ``parse_distribution`` reads it back."""
        return format_distribution(self)


# module-level forms of the distribution operations
def eval_cdf(d: ScoreDistribution, x: ArrayLike) -> Union[float, np.ndarray]:
    return d.cdf(x)


def density(d: ScoreDistribution, x: ArrayLike) -> Union[float, np.ndarray]:
    return d.density(x)


def mean(d: ScoreDistribution) -> float:
    return d.mean


def upper_partial_expectation(d: ScoreDistribution, z: ArrayLike) -> Union[float, np.ndarray]:
    return d.upper_partial_expectation(z)


def sample_stream(d: ScoreDistribution, seed: int, count: int) -> np.ndarray:
    return d.sample_stream(seed, count)


class DistributionEstimator:
    """
    Running estimator for the partial-information regime: the shape is known,
    the parameters are learned from observed scores.
    Only (count, min, max, sum) is kept, so the fit does not depend on observation order.

    :param shape: "uniform" or "exponential".
    """
    def __init__(self, shape: str = UNIFORM):
        if shape not in (UNIFORM, EXPONENTIAL):
            raise InvalidDistributionError(
                f"Error: DistributionEstimator - shape must be uniform or exponential, not '{shape}'.")
        self.shape = shape
        self._count = 0
        self._minimum = math.inf
        self._maximum = -math.inf
        self._total = 0.0

    @property
    def count(self) -> int:
        return self._count

    @property
    def minimum(self) -> float:
        return self._minimum

    @property
    def maximum(self) -> float:
        return self._maximum

    @property
    def total(self) -> float:
        return self._total

    def observe(self, score: float) -> None:
        score = float(score)
        self._count += 1
        self._minimum = min(self._minimum, score)
        self._maximum = max(self._maximum, score)
        self._total += score

    def observe_many(self, scores: Iterable[float]) -> None:
        for score in scores:
            self.observe(score)

    def fit(self) -> ScoreDistribution:
        """
        Uniform: range-expansion estimator, clamped to a non-negative support.
        Exponential: maximum-likelihood rate m / sum.
        """
        m = self._count
        if m < 2:
            raise InsufficientDataError(f"Error: fit - insufficient data, {m} observation(s), need at least 2.")
        if self.shape == UNIFORM:
            spread = (self._maximum - self._minimum) / (m - 1)
            if spread <= 0:
                raise InsufficientDataError("Error: fit - insufficient data, observations do not span an interval.")
            upper = self._maximum + spread
            lower = max(0.0, self._minimum - spread)
            logger.debug(f"Fitted uniform on [{lower:.4f}, {upper:.4f}] from {m} observations.")
            return ScoreDistribution.uniform(lower, upper)
        if self._total <= 0:
            raise InsufficientDataError("Error: fit - insufficient data, observed scores sum to zero.")
        logger.debug(f"Fitted exponential rate {m / self._total:.4f} from {m} observations.")
        return ScoreDistribution.exponential(m / self._total)


def fit(est: DistributionEstimator) -> ScoreDistribution:
    return est.fit()


def parse_distribution(spec: str) -> ScoreDistribution:
    """
    Parses ``uniform:<a>,<b>``, ``exp:<rate>`` or ``discrete:<v1>:<p1>,<v2>:<p2>,...``.
    """
    if not isinstance(spec, str) or ":" not in spec:
        raise InvalidDistributionError(f"Error: parse_distribution - cannot parse '{spec}'.")
    name, _, body = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == UNIFORM:
            parts = body.split(",")
            if len(parts) != 2:
                raise InvalidDistributionError(f"Error: parse_distribution - uniform needs 2 bounds in '{spec}'.")
            return ScoreDistribution.uniform(float(parts[0]), float(parts[1]))
        if name in ("exp", EXPONENTIAL):
            return ScoreDistribution.exponential(float(body))
        if name == DISCRETE:
            atoms = []
            for item in body.split(","):
                value, _, prob = item.partition(":")
                atoms.append((float(value), float(prob)))
            return ScoreDistribution.discrete(atoms)
    except InvalidDistributionError:
        raise
    except ValueError as e:
        raise InvalidDistributionError(f"Error: parse_distribution - cannot parse '{spec}'.") from e
    raise InvalidDistributionError(f"Error: parse_distribution - unknown distribution '{name}' in '{spec}'.")


def format_distribution(d: ScoreDistribution) -> str:
    if d.kind == UNIFORM:
        return f"uniform:{d.lower!r},{d.upper!r}"
    if d.kind == EXPONENTIAL:
        return f"exp:{d.rate!r}"
    return "discrete:" + ",".join(f"{v!r}:{p!r}" for v, p in d.atoms)
