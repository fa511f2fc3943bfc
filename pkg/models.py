"""
Tree data model: splits, surrogate splits, nodes, trees and growth parameters.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from exceptions import ArgumentError

EXHAUSTIVE = "exhaustive"
EXTRA = "extra"
SPLIT_MODES = (EXHAUSTIVE, EXTRA)


@dataclass(frozen=True)
class Split:
    """
    Binary rule on one variable.

    Numeric: left iff x <= threshold. Categorical: left iff the level code is in
    left_levels. Missing values are never routed by a Split itself.
    """
    variable: int
    decrease: float = 0.0
    threshold: Optional[float] = None
    left_levels: Optional[FrozenSet[int]] = None

    @property
    def is_categorical(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        """Boolean left/right assignment for observed values of the split variable"""
        if self.is_categorical:
            return np.isin(values.astype(np.int64), np.fromiter(self.left_levels, dtype=np.int64))
        return values <= self.threshold

    def describe(self, names=None) -> str:
        name = names[self.variable] if names is not None else f"x{self.variable}"
        if self.is_categorical:
            return f"{name} in {{{', '.join(str(c) for c in sorted(self.left_levels))}}}"
        return f"{name} <= {self.threshold!r}"

    def __repr__(self):
        return f"<Split {self.describe()} decrease={self.decrease:.6g}>"


@dataclass(frozen=True)
class Surrogate:
    """Surrogate split with its weighted agreement with the primary routing"""
    split: Split
    agreement: float
    reverse: bool = False

    @property
    def variable(self) -> int:
        return self.split.variable

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        left = self.split.goes_left(values)
        return ~left if self.reverse else left


@dataclass(frozen=True)
class Node:
    """One tree node; a leaf when it carries no primary split"""
    id: int
    depth: int
    weight: float
    prediction: float
    impurity: float
    error: float
    proportions: Optional[Tuple[float, ...]] = None
    split: Optional[Split] = None
    competing: Tuple[Split, ...] = ()
    surrogates: Tuple[Surrogate, ...] = ()
    left: Optional[int] = None
    right: Optional[int] = None
    majority_left: bool = True
    rows: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def routing_rules(self) -> Iterator:
        """Primary split first, then surrogates in rank order"""
        yield self.split
        yield from self.surrogates


@dataclass(frozen=True)
class TreeParams:
    """
    Growth parameters.

    min_node_size: nodes with total (weighted) size below it are not split.
    mtry: candidate variables drawn per node (None = all).
    split_mode: "exhaustive" or "extra" (randomized thresholds).
    n_thresholds: random thresholds drawn per variable in extra mode.
    max_surrogates: surrogate splits kept per node (0 = none).
    """
    min_node_size: int = 5
    min_child_size: float = 1.0
    mtry: Optional[int] = None
    split_mode: str = EXHAUSTIVE
    n_thresholds: int = 1
    max_surrogates: int = 0
    keep_competing: bool = True
    keep_rows: bool = True
    max_exhaustive_levels: int = 12

    def __post_init__(self):
        if self.min_node_size < 1:
            raise ArgumentError(f"min_node_size must be at least 1, got {self.min_node_size}")
        if self.split_mode not in SPLIT_MODES:
            raise ArgumentError(f"Unknown split mode '{self.split_mode}'")
        if self.n_thresholds < 1:
            raise ArgumentError(f"n_thresholds must be at least 1, got {self.n_thresholds}")
        if self.mtry is not None and self.mtry < 1:
            raise ArgumentError(f"mtry must be at least 1, got {self.mtry}")
        if self.max_surrogates < 0:
            raise ArgumentError("max_surrogates cannot be negative")


@dataclass(frozen=True, eq=False)
class Tree:
    """
    Binary tree stored as an id -> Node mapping rooted at node 0.

    ``n_train`` is the total training weight every node error is divided by.
    """
    nodes: Dict[int, Node]
    classification: bool
    n_classes: int
    p: int
    n_train: float
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def walk(self, node_id: int = 0) -> Iterator[Node]:
        """Preorder traversal (node, left subtree, right subtree)"""
        stack = [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self, node_id: int = 0) -> List[Node]:
        return [node for node in self.walk(node_id) if node.is_leaf]

    def internal_ids(self) -> FrozenSet[int]:
        return frozenset(node.id for node in self.nodes.values() if not node.is_leaf)

    @property
    def leaf_count(self) -> int:
        return sum(1 for node in self.nodes.values() if node.is_leaf)

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes.values())

    def split_variables(self) -> List[int]:
        """Distinct variables used by primary splits, sorted"""
        return sorted({node.split.variable for node in self.nodes.values() if not node.is_leaf})

    def training_error(self) -> float:
        """Sum of leaf errors: the normalised training error of the tree"""
        return float(sum(node.error for node in self.leaves()))

    def subtree(self, internal: Iterable[int]) -> "Tree":
        """
        Pruned subtree sharing this tree's root.

        Nodes in ``internal`` keep their split when reachable from the root
        through kept internal nodes; every other reachable node becomes a leaf.
        """
        internal = set(internal)
        nodes = {}
        stack = [0]
        while stack:
            node = self.nodes[stack.pop()]
            if not node.is_leaf and node.id in internal:
                nodes[node.id] = node
                stack.extend((node.left, node.right))
            elif node.is_leaf:
                nodes[node.id] = node
            else:
                nodes[node.id] = replace(node, split=None, competing=(), surrogates=(), left=None, right=None)
        return replace(self, nodes=nodes)

    def root_only(self) -> "Tree":
        return self.subtree(())

    def same_structure(self, other: "Tree") -> bool:
        """Identical node ids, splits, children and leaf predictions"""
        if set(self.nodes) != set(other.nodes):
            return False
        for node_id, node in self.nodes.items():
            twin = other.nodes[node_id]
            if (node.split, node.left, node.right) != (twin.split, twin.left, twin.right):
                return False
            if node.prediction != twin.prediction or node.weight != twin.weight:
                return False
        return True
