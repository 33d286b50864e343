"""Datasets, coefficient trees and the TSVC design matrix."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyLeaf, InvalidIndex, SchemaMismatch
from .glm import Family, resolve_family

SCALES = ("continuous", "ordinal", "binary")


@dataclass(frozen=True)
class Column:
    name: str
    values: np.ndarray
    scale: str = "continuous"


@dataclass(frozen=True)
class Dataset:
    """Immutable column-oriented observation matrix plus response."""

    columns: tuple
    response: np.ndarray
    response_name: str = "y"

    def __post_init__(self):
        cols = tuple(self.columns)
        y = np.asarray(self.response, dtype=float)
        if y.ndim != 1 or y.size < 1:
            raise DataError("response must be a non-empty vector")
        if not np.all(np.isfinite(y)):
            raise DataError("missing or non-finite values in response")
        fixed = []
        seen = set()
        for col in cols:
            values = np.asarray(col.values, dtype=float)
            if values.shape != y.shape:
                raise DataError(f"column {col.name!r} has length {values.size}, expected {y.size}")
            if col.scale not in SCALES:
                raise DataError(f"column {col.name!r}: unknown scale {col.scale!r}")
            if not np.all(np.isfinite(values)):
                raise DataError(f"missing or non-finite values in column {col.name!r}")
            if col.scale == "binary" and not np.all((values == 0) | (values == 1)):
                raise DataError(f"binary column {col.name!r} must contain only 0/1")
            if col.name in seen:
                raise DataError(f"duplicate column name {col.name!r}")
            seen.add(col.name)
            values.setflags(write=False)
            fixed.append(Column(col.name, values, col.scale))
        y.setflags(write=False)
        object.__setattr__(self, "columns", tuple(fixed))
        object.__setattr__(self, "response", y)

    @classmethod
    def from_arrays(cls, X, y, names=None, scales=None, response_name="y") -> "Dataset":
        """Build from a 2-D array; scales default to binary for 0/1 columns."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be two-dimensional")
        p = X.shape[1]
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
        if scales is None:
            scales = [
                "binary" if np.all((X[:, j] == 0) | (X[:, j] == 1)) else "continuous"
                for j in range(p)
            ]
        cols = tuple(Column(names[j], X[:, j], scales[j]) for j in range(p))
        return cls(cols, y, response_name)

    @property
    def n(self) -> int:
        return self.response.size

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    @property
    def scales(self) -> list:
        return [c.scale for c in self.columns]

    @cached_property
    def X(self) -> np.ndarray:
        if not self.columns:
            return np.empty((self.n, 0))
        out = np.column_stack([c.values for c in self.columns])
        out.setflags(write=False)
        return out

    def column(self, j: int) -> np.ndarray:
        self.check_index(j)
        return self.columns[j].values

    def check_index(self, j: int) -> None:
        if not isinstance(j, (int, np.integer)) or not 0 <= j < self.p:
            raise InvalidIndex(f"column index {j} out of range for p={self.p}")

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidIndex(f"no column named {name!r}") from None

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        cols = tuple(Column(c.name, c.values[rows], c.scale) for c in self.columns)
        return Dataset(cols, self.response[rows], self.response_name)

    def replace_column(self, j: int, values) -> "Dataset":
        self.check_index(j)
        cols = list(self.columns)
        cols[j] = Column(cols[j].name, np.asarray(values, dtype=float), cols[j].scale)
        return Dataset(tuple(cols), self.response, self.response_name)


@dataclass(frozen=True)
class Branch:
    modifier: int
    split_point: float
    side: str  # "le" or "gt"

    def __post_init__(self):
        if self.side not in ("le", "gt"):
            raise ValueError(f"side must be 'le' or 'gt', got {self.side!r}")


@dataclass(frozen=True)
class Region:
    """Conjunction of threshold conditions; empty means every row."""

    branches: tuple = ()

    def __post_init__(self):
        keys = [(b.modifier, b.split_point) for b in self.branches]
        if len(set(keys)) != len(keys):
            raise DataError("region repeats a (modifier, split point) pair")

    def extend(self, modifier: int, split_point: float, side: str) -> "Region":
        return Region(self.branches + (Branch(int(modifier), float(split_point), side),))

    def indicator(self, data) -> np.ndarray:
        X = data.X if isinstance(data, Dataset) else np.asarray(data)
        out = np.ones(X.shape[0], dtype=bool)
        for b in self.branches:
            if not 0 <= b.modifier < X.shape[1]:
                raise InvalidIndex(f"modifier index {b.modifier} out of range")
            if not np.isfinite(b.split_point):
                raise DataError("split point must be finite")
            col = X[:, b.modifier]
            out &= (col <= b.split_point) if b.side == "le" else (col > b.split_point)
        return out

    def modifiers(self) -> set:
        return {b.modifier for b in self.branches}


def region_indicator(region: Region, data) -> np.ndarray:
    """0/1 membership vector of ``region``."""
    return region.indicator(data).astype(float)


@dataclass
class TreeNode:
    id: int
    region: Region
    modifier: int | None = None
    split_point: float | None = None
    left: int | None = None
    right: int | None = None
    coefficient: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class CoefficientTree:
    """Binary tree over the coefficient of one predictor.

    Node 0 is the root; children get consecutive ids in creation order, so
    the ids double as a stable leaf ordering for the design matrix.
    """

    predictor: int
    nodes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nodes:
            self.nodes = {0: TreeNode(0, Region())}

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def leaves(self) -> list:
        return [node for _, node in sorted(self.nodes.items()) if node.is_leaf]

    def leaf_ids(self) -> list:
        return [node.id for node in self.leaves()]

    def internal(self) -> list:
        return [node for _, node in sorted(self.nodes.items()) if not node.is_leaf]

    def modifiers(self) -> set:
        return {node.modifier for node in self.internal()}

    @property
    def n_splits(self) -> int:
        return len(self.internal())

    def split(self, node_id: int, modifier: int, split_point: float) -> "CoefficientTree":
        """Return a new tree with leaf ``node_id`` split at ``modifier <= split_point``."""
        if modifier == self.predictor:
            raise InvalidIndex("a predictor cannot modify its own coefficient")
        node = self.nodes.get(node_id)
        if node is None or not node.is_leaf:
            raise InvalidIndex(f"node {node_id} is not a leaf of tree {self.predictor}")
        tree = copy.deepcopy(self)
        parent = tree.nodes[node_id]
        left_id = max(tree.nodes) + 1
        right_id = left_id + 1
        split_point = float(split_point)
        tree.nodes[left_id] = TreeNode(left_id, parent.region.extend(modifier, split_point, "le"))
        tree.nodes[right_id] = TreeNode(right_id, parent.region.extend(modifier, split_point, "gt"))
        parent.modifier = int(modifier)
        parent.split_point = split_point
        parent.left, parent.right = left_id, right_id
        parent.coefficient = None
        for n in tree.nodes.values():
            if n.is_leaf:
                n.coefficient = None
        return tree

    def leaf_indicators(self, data) -> np.ndarray:
        """``(n, Q)`` 0/1 matrix, one column per leaf."""
        return np.column_stack([leaf.region.indicator(data) for leaf in self.leaves()]).astype(float)

    def coefficient_at(self, data) -> np.ndarray:
        """Row-wise coefficient tr_j(x_i), evaluated by walking the tree."""
        X = data.X if isinstance(data, Dataset) else np.asarray(data)
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            node = self.root
            while not node.is_leaf:
                go_left = X[i, node.modifier] <= node.split_point
                node = self.nodes[node.left if go_left else node.right]
            out[i] = node.coefficient
        return out


@dataclass
class ModelStructure:
    """Model terms without coefficients: which predictors have trees, which are linear."""

    p: int
    trees: dict = field(default_factory=dict)
    linear: tuple = ()

    @classmethod
    def linear_model(cls, p: int, exclude: Iterable[int] = ()) -> "ModelStructure":
        exclude = set(exclude)
        return cls(p, {}, tuple(j for j in range(p) if j not in exclude))

    def excluded(self) -> tuple:
        used = set(self.trees) | set(self.linear)
        return tuple(j for j in range(self.p) if j not in used)

    def modifiers(self) -> set:
        out = set()
        for tree in self.trees.values():
            out |= tree.modifiers()
        return out

    def split(self, j: int, node_id: int, modifier: int, split_point: float) -> "ModelStructure":
        tree = self.trees.get(j)
        if tree is None:
            if j not in self.linear:
                raise InvalidIndex(f"predictor {j} is not in the model")
            tree = CoefficientTree(j)
        trees = dict(self.trees)
        trees[j] = tree.split(node_id, modifier, split_point)
        linear = tuple(k for k in self.linear if k != j)
        return ModelStructure(self.p, trees, linear)

    def drop_linear(self, drop: Iterable[int]) -> "ModelStructure":
        drop = set(drop)
        return ModelStructure(self.p, dict(self.trees), tuple(k for k in self.linear if k not in drop))

    def check(self) -> None:
        V, L = set(self.trees), set(self.linear)
        if V & L:
            raise DataError("a predictor is both split and linear")
        if not (V | L) <= set(range(self.p)):
            raise InvalidIndex("structure references unknown predictors")
        for j, tree in self.trees.items():
            if j in tree.modifiers():
                raise DataError(f"predictor {j} modifies its own coefficient")
        if not self.modifiers() <= V | L:
            raise DataError("an effect modifier lost its main effect")


def build_design(structure: ModelStructure, data: Dataset, allow_empty: bool = False):
    """Assemble the TSVC design matrix.

    Column order: intercept, then the leaves of each tree (predictors in
    ascending order, leaves by node id), then the linear terms.  The
    returned column map holds ``("intercept",)``, ``("leaf", j, node_id)``
    or ``("linear", j)`` for every column.
    """
    X = data.X
    cols = [np.ones(data.n)]
    cmap = [("intercept",)]
    for j in sorted(structure.trees):
        tree = structure.trees[j]
        xj = X[:, j]
        for leaf in tree.leaves():
            ind = leaf.region.indicator(X)
            if not allow_empty and not ind.any():
                raise EmptyLeaf(f"leaf {leaf.id} of tree {j} contains no rows")
            cols.append(xj * ind)
            cmap.append(("leaf", j, leaf.id))
    for j in sorted(structure.linear):
        cols.append(X[:, j].astype(float))
        cmap.append(("linear", j))
    return np.column_stack(cols), cmap


@dataclass
class SplitRecord:
    iteration: int
    predictor: int
    node_id: int
    modifier: int
    split_point: float
    t_obs: float
    p_value: float
    accepted: bool
    deviance: float | None = None


@dataclass
class TsvcModel:
    """Fitted tree-structured varying-coefficient model."""

    intercept: float
    trees: dict
    linear: dict
    excluded: frozenset
    family: Family
    names: list
    scales: list
    response_name: str = "y"
    deviance: float = float("nan")
    aic: float = float("nan")
    split_history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.names)

    def structure(self) -> ModelStructure:
        return ModelStructure(self.p, dict(self.trees), tuple(sorted(self.linear)))

    def modifiers(self) -> set:
        return self.structure().modifiers()

    def modifiers_of(self, j: int) -> set:
        tree = self.trees.get(j)
        return tree.modifiers() if tree is not None else set()

    def coefficient_vector(self, column_map) -> np.ndarray:
        out = []
        for entry in column_map:
            if entry[0] == "intercept":
                out.append(self.intercept)
            elif entry[0] == "leaf":
                out.append(self.trees[entry[1]].nodes[entry[2]].coefficient)
            else:
                out.append(self.linear[entry[1]])
        return np.asarray(out, dtype=float)

    def check_schema(self, data: Dataset) -> None:
        if data.names != list(self.names):
            raise SchemaMismatch(
                f"data columns {data.names} do not match model columns {list(self.names)}"
            )

    def linear_predictor(self, data: Dataset) -> np.ndarray:
        self.check_schema(data)
        X, cmap = build_design(self.structure(), data, allow_empty=True)
        return X @ self.coefficient_vector(cmap)

    def check_invariants(self) -> None:
        V, L, E = set(self.trees), set(self.linear), set(self.excluded)
        if (V & L) or (V & E) or (L & E):
            raise DataError("V, L and excluded overlap")
        if V | L | E != set(range(self.p)):
            raise DataError("V, L and excluded do not cover all predictors")
        self.structure().check()


def predict(model: TsvcModel, data: Dataset, kind: str = "response") -> np.ndarray:
    """Fitted means (``kind="response"``) or linear predictor (``kind="link"``)."""
    eta = model.linear_predictor(data)
    if kind == "link":
        return eta
    return model.family.linkinv(model.family.clip_eta(eta))


def predict_arrays(model: TsvcModel, X) -> np.ndarray:
    data = Dataset.from_arrays(X, np.zeros(np.asarray(X).shape[0]), model.names, model.scales)
    return predict(model, data)
