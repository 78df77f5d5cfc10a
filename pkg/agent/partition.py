"""
Adaptive dyadic cover of [0,1]^d.

Every leaf owns the observations that fall in its box and a kernel ridge
regressor fitted to them only. A leaf of side rho splits into 2^d equal
children as soon as rho^-alpha < N + 1.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from agent.errors import ConfigurationError, InvalidInputError
from agent.kernels import KernelSpec, PointsLike, as_points
from agent.regression import KernelRidgeRegressor, Prediction

logger = logging.getLogger(__name__)

MAX_DEPTH = 40


@dataclass
class CoverElement:
    """One dyadic box [lower, lower + side)^d of the cover."""
    lower: np.ndarray
    depth: int
    regressor: Optional[KernelRidgeRegressor]
    observation_ids: List[int] = field(default_factory=list)
    children: Optional[List["CoverElement"]] = None

    @property
    def side(self) -> float:
        return 2.0 ** (-self.depth)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def obs_count(self) -> int:
        return len(self.observation_ids)

    def capacity(self, alpha: float) -> float:
        """rho^-alpha for this element."""
        return 2.0 ** (self.depth * alpha)

    def child_index(self, point: np.ndarray) -> int:
        # a coordinate on the midpoint goes to the upper half
        upper = point >= self.lower + 0.5 * self.side
        return int(np.dot(upper, 1 << np.arange(point.shape[0])))


@dataclass(frozen=True)
class CoverStats:
    leaf_count: int
    ever_created_count: int
    depth_histogram: Dict[int, int]

    @property
    def max_depth(self) -> int:
        return max(self.depth_histogram) if self.depth_histogram else 0


class CoverTree:
    """
    Dyadic partition of [0,1]^dimension with a regressor per leaf.

    Args:
        dimension: joint state-action dimension d
        alpha: splitting exponent
        spec: kernel for the leaf regressors
        lam: ridge parameter for the leaf regressors
        split: when False the root never splits and the tree is a single
            global regressor (the non-partitioned baseline)
    """

    def __init__(self, dimension: int, alpha: float, spec: KernelSpec, lam: float,
                 split: bool = True):
        if int(dimension) != dimension or dimension < 1:
            raise InvalidInputError(f"dimension must be a positive integer, got {dimension}")
        if not alpha > 0.0:
            raise InvalidInputError(f"alpha must be positive, got {alpha}")
        if spec.dimension != dimension:
            raise InvalidInputError(
                f"kernel dimension {spec.dimension} does not match tree dimension {dimension}")
        self.logger = logging.getLogger(__name__)
        self.dimension = int(dimension)
        self.alpha = float(alpha)
        self.spec = spec
        self.lam = float(lam)
        self.split = split
        self.root = CoverElement(lower=np.zeros(self.dimension), depth=0,
                                 regressor=KernelRidgeRegressor(spec, lam))
        self.leaf_count = 1
        self.ever_created_count = 1
        self._next_id = 0
        self._points: List[np.ndarray] = []
        self._values: List[float] = []

    def _check_domain(self, points: np.ndarray):
        if points.size and (points.min() < 0.0 or points.max() > 1.0):
            raise InvalidInputError("points must lie in [0, 1]^d")

    def _descend(self, point: np.ndarray) -> CoverElement:
        node = self.root
        while node.children is not None:
            node = node.children[node.child_index(point)]
        return node

    def locate(self, z: PointsLike) -> CoverElement:
        point = as_points(z, self.dimension)
        if point.shape[0] != 1:
            raise InvalidInputError("locate expects a single point")
        self._check_domain(point)
        return self._descend(point[0])

    def record(self, z: PointsLike, y: float, observation_id: Optional[int] = None) -> int:
        """
        Store an observation in its leaf, then split until every leaf is within capacity.

        Returns:
            The observation id, which indexes the target vector in ``refit_targets``.
        """
        point = as_points(z, self.dimension)
        if point.shape[0] != 1:
            raise InvalidInputError("record expects a single point")
        self._check_domain(point)
        if observation_id is None:
            observation_id = self._next_id
        if observation_id != len(self._points):
            raise InvalidInputError(
                f"observation ids must be consecutive; expected {len(self._points)}, got {observation_id}")
        self._next_id = observation_id + 1
        self._points.append(point[0].copy())
        self._values.append(float(y))

        leaf = self._descend(point[0])
        leaf.regressor.observe(point[0], y)
        leaf.observation_ids.append(observation_id)
        if self.split:
            self._maintain(leaf)
        return observation_id

    def _violates(self, element: CoverElement) -> bool:
        return element.capacity(self.alpha) < element.obs_count + 1

    def _maintain(self, element: CoverElement):
        pending = [element]
        while pending:
            node = pending.pop()
            if self._violates(node):
                pending.extend(self._split(node))

    def _split(self, element: CoverElement) -> List[CoverElement]:
        if element.depth + 1 > MAX_DEPTH:
            raise ConfigurationError(
                "agent.alpha",
                f"cover depth would exceed {MAX_DEPTH} with alpha={self.alpha}; "
                "the splitting exponent is too small for this run length")
        half = 0.5 * element.side
        children = []
        for index in range(2 ** self.dimension):
            bits = (index >> np.arange(self.dimension)) & 1
            children.append(CoverElement(lower=element.lower + half * bits,
                                         depth=element.depth + 1, regressor=None))
        for obs_id in element.observation_ids:
            children[element.child_index(self._points[obs_id])].observation_ids.append(obs_id)
        for child in children:
            ids = child.observation_ids
            child.regressor = KernelRidgeRegressor(self.spec, self.lam)
            if ids:
                child.regressor.fit(np.array([self._points[i] for i in ids]),
                                    [self._values[i] for i in ids])
        element.children = children
        element.regressor = None
        element.observation_ids = []
        self.leaf_count += len(children) - 1
        self.ever_created_count += len(children)
        self.logger.debug(f"split element at depth {element.depth} into {len(children)} children")
        return children

    def query(self, z: PointsLike) -> Prediction:
        return self.locate(z).regressor.predict(z)

    def query_many(self, queries: PointsLike) -> Tuple[np.ndarray, np.ndarray]:
        """Means and standard deviations for a batch, each from its own leaf."""
        queries = as_points(queries, self.dimension)
        self._check_domain(queries)
        means = np.zeros(queries.shape[0])
        stddevs = np.zeros(queries.shape[0])
        groups: Dict[int, Tuple[CoverElement, List[int]]] = {}
        for row, point in enumerate(queries):
            leaf = self._descend(point)
            groups.setdefault(id(leaf), (leaf, []))[1].append(row)
        for leaf, rows in groups.values():
            mean, stddev = leaf.regressor.predict_many(queries[rows])
            means[rows] = mean
            stddevs[rows] = stddev
        return means, stddevs

    def refit_targets(self, targets: Sequence[float]):
        """Replace the target of every observation; ``targets[i]`` belongs to id i."""
        values = np.asarray(targets, dtype=float).reshape(-1)
        if values.shape[0] != len(self._points):
            raise InvalidInputError(
                f"expected {len(self._points)} targets, got {values.shape[0]}")
        self._values = list(values)
        for leaf in self.leaves():
            if leaf.observation_ids:
                leaf.regressor.refit_targets(values[leaf.observation_ids])

    def leaves(self) -> Iterator[CoverElement]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.children is None:
                yield node
            else:
                stack.extend(reversed(node.children))

    def cover_stats(self) -> CoverStats:
        histogram = Counter(leaf.depth for leaf in self.leaves())
        return CoverStats(leaf_count=self.leaf_count,
                          ever_created_count=self.ever_created_count,
                          depth_histogram=dict(sorted(histogram.items())))

    def max_capacity_ratio(self) -> float:
        """Largest N / rho^-alpha over the leaves; at most 1 after maintenance."""
        return max((leaf.obs_count / leaf.capacity(self.alpha) for leaf in self.leaves()),
                   default=0.0)

    @property
    def num_observations(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        """Recorded points in id order, shape (n, dimension)."""
        if not self._points:
            return np.zeros((0, self.dimension))
        return np.array(self._points)

    @property
    def targets(self) -> np.ndarray:
        return np.array(self._values, dtype=float)
