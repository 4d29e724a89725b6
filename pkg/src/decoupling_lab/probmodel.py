"""Finite filtration trees, adapted sequences, and decoupled tangent pairs.

A probability model is a tree of innovation draws: level n has a finite
alphabet of innovation values with strictly positive probabilities, a node at
depth n is a prefix (j_1, ..., j_n) of alphabet indices, and the sigma-algebra
F_n is generated by the depth-n nodes.  Nodes are encoded mixed-radix: the
children of node u at level n are u * a_n + j.

An adapted sequence is stored as one increment table per level: entry
table[u, j] is the increment d_n on the event "history u, innovation j".
Because the table row is indexed by the *parent* node, the decoupled tangent
copy needs no extra data: replaying the same table with a fresh independent
innovation index gives e_n(w, w~) = table[u_{n-1}(w), j_n(w~)], which has the
same conditional law as d_n given F_{n-1} and is conditionally independent
across n given the full first-coordinate path.

Everything here is exact: expectations are finite sums over paths or over
(path, path) pairs of the product space, guarded by JOINT_LIMIT.  A sampling
routine with counter-based streams covers models too large to enumerate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, reduce

import numpy as np

from . import rng
from .spaces import Space, format_space, parse_space

# Hard ceiling on exact product-space enumeration (outcome pairs).
JOINT_LIMIT = 10_000_000


class EnumerationError(RuntimeError):
    """Exact enumeration would exceed JOINT_LIMIT outcomes."""


class ModelError(ValueError):
    pass


def _value_tuple(value):
    if isinstance(value, (int, float)):
        return float(value)
    return tuple(float(v) for v in value)


def _negate(value):
    if isinstance(value, float):
        return -value
    return tuple(-v for v in value)


@dataclass(frozen=True)
class Level:
    """One innovation level: a finite alphabet with probabilities.

    probs_exact optionally carries the same probabilities as Fractions, which
    switches tangency verification to exact rational arithmetic.
    """

    values: tuple
    probs: tuple
    probs_exact: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(_value_tuple(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise ModelError("values and probs must be non-empty and aligned")
        if any(p <= 0 for p in self.probs):
            raise ModelError("probabilities must be strictly positive")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ModelError("probabilities must sum to one")
        if self.probs_exact is not None:
            exact = tuple(Fraction(p) for p in self.probs_exact)
            if len(exact) != len(self.values) or sum(exact) != 1:
                raise ModelError("exact probabilities must match and sum to one")
            object.__setattr__(self, "probs_exact", exact)

    @property
    def size(self) -> int:
        return len(self.values)


class FiltrationTree:
    """Depth-N innovation tree; F_0 is trivial, atoms of F_n are depth-n nodes."""

    def __init__(self, levels):
        self.levels = tuple(levels)
        if not self.levels:
            raise ModelError("tree needs depth >= 1")

    @property
    def depth(self) -> int:
        return len(self.levels)

    @cached_property
    def sizes(self) -> tuple[int, ...]:
        return tuple(level.size for level in self.levels)

    @cached_property
    def _counts(self) -> tuple[int, ...]:
        # _counts[n] = number of depth-n nodes
        counts = [1]
        for a in self.sizes:
            counts.append(counts[-1] * a)
        return tuple(counts)

    def num_nodes(self, n: int) -> int:
        return self._counts[n]

    @property
    def path_count(self) -> int:
        return self._counts[self.depth]

    def stride(self, n: int) -> int:
        # paths sharing a depth-n node form a contiguous block of this length
        return self.path_count // self._counts[n]

    def nodes_at(self, n: int) -> np.ndarray:
        """Depth-n node id of every path, shape (path_count,)."""
        return np.arange(self.path_count, dtype=np.int64) // self.stride(n)

    def level_pick(self, n: int) -> np.ndarray:
        """Level-n innovation index of every path (n >= 1)."""
        return self.nodes_at(n) % self.sizes[n - 1]

    def ancestor(self, node_ids: np.ndarray, n: int, k: int) -> np.ndarray:
        """Depth-k ancestors of depth-n node ids (k <= n)."""
        factor = self._counts[n] // self._counts[k]
        return np.asarray(node_ids, dtype=np.int64) // factor

    def level_probs(self, n: int) -> np.ndarray:
        return np.array(self.levels[n - 1].probs, dtype=float)

    @cached_property
    def path_probs(self) -> np.ndarray:
        probs = np.ones(1)
        for level in self.levels:
            probs = np.multiply.outer(probs, np.array(level.probs)).reshape(-1)
        return probs

    def node_probs(self, n: int) -> np.ndarray:
        probs = np.ones(1)
        for level in self.levels[:n]:
            probs = np.multiply.outer(probs, np.array(level.probs)).reshape(-1)
        return probs

    @property
    def exact(self) -> bool:
        return all(level.probs_exact is not None for level in self.levels)

    def node_probs_exact(self, n: int) -> list[Fraction]:
        probs = [Fraction(1)]
        for level in self.levels[:n]:
            probs = [p * q for p in probs for q in level.probs_exact]
        return probs

    def node_histories(self, n: int) -> list[tuple]:
        """Innovation-value histories of depth-n nodes, in node-id order."""
        histories = [()]
        for level in self.levels[:n]:
            histories = [h + (v,) for h in histories for v in level.values]
        return histories


def paley_walsh(depth: int, exact: bool = False) -> FiltrationTree:
    """Dyadic Rademacher tree: +-1 innovations, probability 1/2 each."""
    half = (Fraction(1, 2), Fraction(1, 2)) if exact else None
    return FiltrationTree([Level((1.0, -1.0), (0.5, 0.5), half) for _ in range(depth)])


def symmetric_three_point(depth: int, scale: float = math.sqrt(3.0),
                          center_mass: float = 2.0 / 3.0) -> FiltrationTree:
    """Symmetric three-point innovations; defaults match Gaussian moments to order 5."""
    side = (1.0 - center_mass) / 2.0
    level = Level((-scale, 0.0, scale), (side, center_mass, side))
    return FiltrationTree([level for _ in range(depth)])


class AdaptedSequence:
    """An X-valued adapted sequence on a filtration tree.

    tables[n-1] has shape (num_nodes(n-1), a_n, dim): the level-n increment as
    a function of the parent node (all predictable data) and the innovation.
    """

    def __init__(self, tree: FiltrationTree, space: Space, tables):
        self.tree = tree
        self.space = space
        self.tables = tuple(np.asarray(t, dtype=float) for t in tables)
        if len(self.tables) != tree.depth:
            raise ModelError("one increment table per level required")
        for n, table in enumerate(self.tables, start=1):
            want = (tree.num_nodes(n - 1), tree.sizes[n - 1], space.dim)
            if table.shape != want:
                raise ModelError(f"level {n} table has shape {table.shape}, want {want}")

    @classmethod
    def from_rule(cls, tree: FiltrationTree, space: Space, rule) -> "AdaptedSequence":
        """Build tables from rule(n, history, innovation_value) -> vector."""
        tables = []
        for n in range(1, tree.depth + 1):
            level = tree.levels[n - 1]
            histories = tree.node_histories(n - 1)
            table = np.zeros((len(histories), level.size, space.dim))
            for u, history in enumerate(histories):
                for j, value in enumerate(level.values):
                    table[u, j] = np.asarray(rule(n, history, value), dtype=float)
            tables.append(table)
        return cls(tree, space, tables)

    @classmethod
    def from_multipliers(cls, tree: FiltrationTree, space: Space, multipliers) -> "AdaptedSequence":
        """d_n = xi_n * v_n with a multiplier vector per depth-(n-1) node.

        Innovations must be scalar; multipliers[n-1] has shape
        (num_nodes(n-1), dim).
        """
        if len(multipliers) != tree.depth:
            raise ModelError("need one multiplier array per level")
        tables = []
        for n in range(1, tree.depth + 1):
            level = tree.levels[n - 1]
            values = np.array(level.values, dtype=float)
            if values.ndim != 1:
                raise ModelError("multiplier sequences need scalar innovations")
            mult = np.asarray(multipliers[n - 1], dtype=float)
            if mult.shape != (tree.num_nodes(n - 1), space.dim):
                raise ModelError(f"multiplier {n} has shape {mult.shape}")
            tables.append(values[None, :, None] * mult[:, None, :])
        return cls(tree, space, tables)

    @property
    def depth(self) -> int:
        return self.tree.depth

    @property
    def dim(self) -> int:
        return self.space.dim

    def increments(self, n: int) -> np.ndarray:
        """Level-n increments by depth-n node, shape (num_nodes(n), dim)."""
        return self.tables[n - 1].reshape(-1, self.dim)

    def path_increments(self, n: int) -> np.ndarray:
        return self.increments(n)[self.tree.nodes_at(n)]

    @cached_property
    def partial_sums(self) -> np.ndarray:
        """f_0..f_N per path, shape (path_count, depth+1, dim)."""
        out = np.zeros((self.tree.path_count, self.depth + 1, self.dim))
        for n in range(1, self.depth + 1):
            out[:, n] = out[:, n - 1] + self.path_increments(n)
        return out

    @property
    def terminal(self) -> np.ndarray:
        return self.partial_sums[:, self.depth]

    @cached_property
    def increment_norms(self) -> np.ndarray:
        """||d_n|| per path, shape (path_count, depth+1); column 0 is zero."""
        out = np.zeros((self.tree.path_count, self.depth + 1))
        for n in range(1, self.depth + 1):
            out[:, n] = self.space.norms(self.path_increments(n))
        return out

    @cached_property
    def f_star_levels(self) -> np.ndarray:
        return np.maximum.accumulate(self.space.norms(self.partial_sums), axis=1)

    @property
    def f_star(self) -> np.ndarray:
        return self.f_star_levels[:, self.depth]

    @cached_property
    def d_star_levels(self) -> np.ndarray:
        return np.maximum.accumulate(self.increment_norms, axis=1)

    @property
    def d_star(self) -> np.ndarray:
        return self.d_star_levels[:, self.depth]

    def node_d_star(self, n: int) -> np.ndarray:
        """Running max of increment norms as a depth-n node function."""
        out = np.zeros(1)
        for m in range(1, n + 1):
            norms = self.space.norms(self.increments(m))
            out = np.maximum(np.repeat(out, self.tree.sizes[m - 1]), norms)
        return out

    def terminal_moment(self, p: float) -> float:
        return float(self.tree.path_probs @ self.space.norms(self.terminal) ** p)

    def window(self, k: int, l: int) -> "AdaptedSequence":
        """Keep increments with k < n <= l, zero elsewhere."""
        if not (0 <= k <= l <= self.depth):
            raise ModelError(f"bad window ({k}, {l}]")
        tables = [t if k < n <= l else np.zeros_like(t)
                  for n, t in enumerate(self.tables, start=1)]
        return AdaptedSequence(self.tree, self.space, tables)

    def stopped(self, remain: "StoppingRule") -> "AdaptedSequence":
        """Increments 1{tau >= n} d_n (stopped sequence)."""
        keep = remain.keep_masks()
        tables = [t * keep[n - 1][:, None, None]
                  for n, t in enumerate(self.tables, start=1)]
        return AdaptedSequence(self.tree, self.space, tables)

    def started(self, remain: "StoppingRule") -> "AdaptedSequence":
        """Increments 1{tau < n} d_n (started sequence)."""
        keep = remain.keep_masks()
        tables = [t * (1.0 - keep[n - 1][:, None, None])
                  for n, t in enumerate(self.tables, start=1)]
        return AdaptedSequence(self.tree, self.space, tables)

    def is_conditionally_symmetric(self, tol: float = 1e-12) -> bool:
        """True when every conditional increment law is negation-invariant."""
        for n in range(1, self.depth + 1):
            probs = self.tree.level_probs(n)
            for row in self.tables[n - 1]:
                masses: dict[bytes, float] = {}
                for vec, p in zip(row, probs):
                    key = (vec + 0.0).tobytes()
                    masses[key] = masses.get(key, 0.0) + p
                for vec, p in zip(row, probs):
                    key = (-vec + 0.0).tobytes()
                    masses[key] = masses.get(key, 0.0) - p
                if any(abs(m) > tol for m in masses.values()):
                    return False
        return True


def sequence_spec(seq: AdaptedSequence) -> dict:
    """Plain-data description of a sequence, suitable for JSON round trips."""
    levels = []
    for level in seq.tree.levels:
        entry = {
            "values": [list(v) if isinstance(v, tuple) else v for v in level.values],
            "probs": list(level.probs),
        }
        if level.probs_exact is not None:
            entry["probs_exact"] = [
                f"{p.numerator}/{p.denominator}" for p in level.probs_exact
            ]
        levels.append(entry)
    return {
        "space": format_space(seq.space),
        "levels": levels,
        "tables": [t.tolist() for t in seq.tables],
    }


def sequence_from_spec(spec: dict) -> AdaptedSequence:
    """Rebuild a sequence from the output of sequence_spec."""
    levels = []
    for entry in spec["levels"]:
        exact = entry.get("probs_exact")
        levels.append(
            Level(
                tuple(tuple(v) if isinstance(v, list) else v for v in entry["values"]),
                tuple(entry["probs"]),
                tuple(Fraction(s) for s in exact) if exact is not None else None,
            )
        )
    return AdaptedSequence(
        FiltrationTree(levels), parse_space(spec["space"]), spec["tables"]
    )


class StoppingRule:
    """A stopping time as stop/continue decisions on tree nodes.

    decisions[n] is a boolean array over depth-n nodes; tau is the first depth
    whose decision along the path is True (tree depth + 1 when none is).
    Decisions at depth n read only the depth-n history, so tau is a genuine
    stopping time by construction.
    """

    def __init__(self, tree: FiltrationTree, decisions):
        self.tree = tree
        self.decisions = [np.asarray(d, dtype=bool).reshape(tree.num_nodes(n))
                          for n, d in enumerate(decisions)]
        if len(self.decisions) != tree.depth + 1:
            raise ModelError("need decisions for depths 0..N")

    @classmethod
    def from_rule(cls, tree: FiltrationTree, rule) -> "StoppingRule":
        """rule(n, history) -> bool, evaluated on every node."""
        decisions = []
        for n in range(tree.depth + 1):
            decisions.append([bool(rule(n, h)) for h in tree.node_histories(n)])
        return cls(tree, decisions)

    @classmethod
    def never(cls, tree: FiltrationTree) -> "StoppingRule":
        return cls(tree, [np.zeros(tree.num_nodes(n), dtype=bool)
                          for n in range(tree.depth + 1)])

    def stopped_by(self, n: int) -> np.ndarray:
        """1{tau <= n} as a depth-n node function."""
        out = np.zeros(1, dtype=bool)
        for m in range(n + 1):
            if m > 0:
                out = np.repeat(out, self.tree.sizes[m - 1])
            out = out | self.decisions[m]
        return out

    def keep_masks(self) -> list[np.ndarray]:
        """Per level n, 1{tau >= n} as a float array over depth-(n-1) nodes."""
        masks = []
        for n in range(1, self.tree.depth + 1):
            masks.append((~self.stopped_by(n - 1)).astype(float))
        return masks

    def tau(self) -> np.ndarray:
        """Stopping depth per path; depth+1 encodes 'never stopped'."""
        out = np.full(self.tree.path_count, self.tree.depth + 1, dtype=np.int64)
        for n in range(self.tree.depth, -1, -1):
            hit = self.decisions[n][self.tree.nodes_at(n)]
            out[hit] = n
        return out


class TangentPair:
    """An adapted sequence together with its tangent copy.

    mode "decoupled" is the canonical construction (same increment tables,
    independent innovation coordinate); mode "copy" replays the whole sequence
    on the second coordinate (a full independent copy, which is *not* a
    decoupled tangent sequence once predictable data varies) and exists so the
    verifiers have something to reject.
    """

    def __init__(self, seq: AdaptedSequence, mode: str = "decoupled"):
        if mode not in ("decoupled", "copy"):
            raise ModelError(f"unknown tangent mode {mode!r}")
        self.seq = seq
        self.mode = mode

    @property
    def tree(self) -> FiltrationTree:
        return self.seq.tree

    @property
    def space(self) -> Space:
        return self.seq.space

    def joint_outcomes(self) -> int:
        return self.tree.path_count ** 2

    def require_enumerable(self, budget: int = JOINT_LIMIT):
        if self.joint_outcomes() > budget:
            raise EnumerationError(
                f"{self.joint_outcomes()} joint outcomes exceed budget {budget}")


def decouple(seq: AdaptedSequence) -> TangentPair:
    """The decoupled tangent pair of an adapted sequence."""
    return TangentPair(seq, "decoupled")


def independent_copy(seq: AdaptedSequence) -> TangentPair:
    """A full independent copy posing as a tangent sequence (for negative tests)."""
    return TangentPair(seq, "copy")


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    gap: float
    detail: str = ""


def _merge_law(vectors, probs):
    masses: dict[bytes, object] = {}
    for vec, p in zip(vectors, probs):
        key = (np.asarray(vec) + 0.0).tobytes()
        masses[key] = masses.get(key, 0 * p) + p
    return masses


def _law_gap(law_a: dict, law_b: dict) -> float:
    keys = set(law_a) | set(law_b)
    return max(float(abs(law_a.get(k, 0) - law_b.get(k, 0))) for k in keys)


def verify_tangency(pair: TangentPair, tol: float = 1e-12,
                    exact: bool | None = None) -> CheckResult:
    """Check L(e_n | F_inf) = L(d_n | F_{n-1}) on every atom, every level.

    The conditional law of d_n on a depth-(n-1) atom is read off the increment
    table row; the conditional law of e_n given a full path is rebuilt from the
    pair's mode.  Laws are compared as finite measures on exact value labels.
    With exact=True (default on trees built with exact rational probabilities)
    masses are Fractions and the comparison is exact.
    """
    seq, tree = pair.seq, pair.tree
    if exact is None:
        exact = tree.exact
    worst = 0.0
    for n in range(1, tree.depth + 1):
        if exact:
            level_probs = tree.levels[n - 1].probs_exact
        else:
            level_probs = tree.levels[n - 1].probs
        table = seq.tables[n - 1]
        d_laws = [_merge_law(row, level_probs) for row in table]
        if pair.mode == "decoupled":
            # e-law given a path with depth-(n-1) prefix u is the same table row
            # replayed with a fresh innovation; compare per prefix.
            for u in range(tree.num_nodes(n - 1)):
                e_law = _merge_law(table[u], level_probs)
                worst = max(worst, _law_gap(d_laws[u], e_law))
        else:
            # full copy: e-law given any path is the unconditional law of d_n
            node_probs = (tree.node_probs_exact(n) if exact
                          else tree.node_probs(n))
            e_law = _merge_law(seq.increments(n), node_probs)
            for u in range(tree.num_nodes(n - 1)):
                worst = max(worst, _law_gap(d_laws[u], e_law))
    return CheckResult(worst <= tol, worst, "tangency")


def _factorization_gap(level_masses, joint_keys, joint_masses) -> float:
    """Max gap between a joint law and the product of its marginals.

    level_masses: per level, mass of each distinct value id; the joint law is
    compared on the dense grid of all id combinations (guarded by callers).
    """
    shape = tuple(len(m) for m in level_masses)
    product = reduce(np.multiply.outer, level_masses).reshape(-1)
    joint = np.zeros(len(product))
    flat = np.ravel_multi_index(joint_keys, shape)
    np.add.at(joint, flat, joint_masses)
    return float(np.max(np.abs(joint - product)))


def verify_conditional_independence(pair: TangentPair, tol: float = 1e-12) -> CheckResult:
    """Check that the joint law of (e_1..e_N) given F_inf is the product of
    its conditional marginals, atom by atom, by enumeration."""
    seq, tree = pair.seq, pair.tree
    depth = tree.depth
    worst = 0.0
    if pair.mode == "decoupled":
        # the conditional law given a path depends on its depth-(N-1) prefix
        pair.require_enumerable()
        for u in range(tree.num_nodes(depth - 1)):
            level_ids, level_masses = [], []
            grid = 1
            for n in range(1, depth + 1):
                anc = tree.ancestor(np.array([u]), depth - 1, n - 1)[0]
                row = seq.tables[n - 1][anc]
                keys = [(vec + 0.0).tobytes() for vec in row]
                uniq = sorted(set(keys))
                index = {k: i for i, k in enumerate(uniq)}
                ids = np.array([index[k] for k in keys])
                masses = np.zeros(len(uniq))
                np.add.at(masses, ids, tree.level_probs(n))
                level_ids.append(ids)
                level_masses.append(masses)
                grid *= len(uniq)
            if grid > JOINT_LIMIT:
                raise EnumerationError("factorization grid too large")
            # enumerate the second coordinate: outcome (j_1..j_N) with product mass
            combos = np.array(list(itertools.product(*[range(a) for a in tree.sizes])))
            joint_masses = tree.path_probs
            joint_keys = tuple(level_ids[n][combos[:, n]] for n in range(depth))
            worst = max(worst, _factorization_gap(level_masses, joint_keys,
                                                  joint_masses))
    else:
        # full copy: the law given any path is the law of (d_1..d_N); one check
        pair.require_enumerable()
        level_masses = []
        grid = 1
        per_path_ids = []
        for n in range(1, depth + 1):
            vecs = seq.path_increments(n)
            keys = [(vec + 0.0).tobytes() for vec in vecs]
            uniq = sorted(set(keys))
            index = {k: i for i, k in enumerate(uniq)}
            ids = np.array([index[k] for k in keys])
            masses = np.zeros(len(uniq))
            np.add.at(masses, ids, tree.path_probs)
            level_masses.append(masses)
            per_path_ids.append(ids)
            grid *= len(uniq)
        if grid > JOINT_LIMIT:
            raise EnumerationError("factorization grid too large")
        worst = _factorization_gap(level_masses, tuple(per_path_ids),
                                   tree.path_probs)
    return CheckResult(worst <= tol, worst, "conditional independence")


def davis_split(pair: TangentPair) -> tuple[TangentPair, TangentPair]:
    """Split into small-increment and large-increment parts.

    Level n keeps d_n in the small part when ||d_n|| <= 2 d*_{n-1} (so the
    small part is predictably dominated); level 1 goes entirely to the large
    part.  The tangent copies split with the same indicator evaluated on the
    copy's own increment norm against the first coordinate's d*_{n-1}, which
    is exactly what replaying the split tables does.
    """
    seq = pair.seq
    small_tables, big_tables = [], []
    for n in range(1, seq.depth + 1):
        table = seq.tables[n - 1]
        if n == 1:
            small_tables.append(np.zeros_like(table))
            big_tables.append(table.copy())
            continue
        bound = 2.0 * seq.node_d_star(n - 1)  # per parent node
        norms = seq.space.norms(table)        # (parents, a_n)
        keep = (norms <= bound[:, None]).astype(float)[:, :, None]
        small_tables.append(table * keep)
        big_tables.append(table * (1.0 - keep))
    small = AdaptedSequence(seq.tree, seq.space, small_tables)
    big = AdaptedSequence(seq.tree, seq.space, big_tables)
    return TangentPair(small, pair.mode), TangentPair(big, pair.mode)


def joint_blocks(pair: TangentPair, budget: int = JOINT_LIMIT,
                 block_rows: int | None = None):
    """Iterate the product space in blocks of first-coordinate paths.

    Yields (omega_slice, stats) where stats has per-(omega, omega~) arrays:
    g_terminal (rows, paths, dim), e_star and g_star (rows, paths).
    """
    pair.require_enumerable(budget)
    seq, tree = pair.seq, pair.tree
    paths = tree.path_count
    dim = seq.dim
    if block_rows is None:
        block_rows = max(1, min(paths, 2_000_000 // max(1, paths * dim)))
    picks = [tree.level_pick(n) for n in range(1, tree.depth + 1)]
    for start in range(0, paths, block_rows):
        stop = min(start + block_rows, paths)
        rows = stop - start
        g = np.zeros((rows, paths, dim))
        e_star = np.zeros((rows, paths))
        g_star = np.zeros((rows, paths))
        for n in range(1, tree.depth + 1):
            if pair.mode == "decoupled":
                parents = tree.ancestor(tree.nodes_at(tree.depth)[start:stop],
                                        tree.depth, n - 1)
                rows_ids = parents[:, None] * tree.sizes[n - 1] + picks[n - 1][None, :]
                inc = seq.increments(n)[rows_ids]
            else:
                inc = np.broadcast_to(seq.path_increments(n)[None, :, :],
                                      (rows, paths, dim))
            g = g + inc
            e_star = np.maximum(e_star, seq.space.norms(inc))
            g_star = np.maximum(g_star, seq.space.norms(g))
        yield slice(start, stop), {"g_terminal": g, "e_star": e_star, "g_star": g_star}


def g_terminal_moment(pair: TangentPair, p: float) -> float:
    """E ||g_N||^p by full product-space enumeration."""
    seq, tree = pair.seq, pair.tree
    total = 0.0
    probs = tree.path_probs
    for rows, stats in joint_blocks(pair):
        weights = probs[rows][:, None] * probs[None, :]
        total += float(np.sum(weights * seq.space.norms(stats["g_terminal"]) ** p))
    return total


def sign_randomized_moment(seq: AdaptedSequence, p: float) -> float:
    """E || sum_k eps_k d_k ||^p over independent Rademacher signs, exact."""
    n = seq.depth
    combos = seq.tree.path_count * 2 ** n
    if combos > JOINT_LIMIT:
        raise EnumerationError(f"{combos} sign-path combinations exceed budget")
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
    total = np.zeros((2 ** n, seq.tree.path_count, seq.dim))
    for m in range(1, n + 1):
        total += signs[:, m - 1][:, None, None] * seq.path_increments(m)[None, :, :]
    norms = seq.space.norms(total) ** p
    return float(norms.mean(axis=0) @ seq.tree.path_probs)


@dataclass(frozen=True)
class SampleBatch:
    """Monte Carlo draws from the joint law of a tangent pair."""

    f_terminal: np.ndarray
    g_terminal: np.ndarray
    f_star: np.ndarray
    d_star: np.ndarray
    e_star: np.ndarray
    seed: int

    @property
    def count(self) -> int:
        return len(self.f_star)


def sample_paths(pair: TangentPair, count: int, seed: int) -> SampleBatch:
    """Draw (f_N, g_N, f*, d*, e*) replicas.

    Replica r is deterministic given (seed, r): draws come from the stream of
    chunk r // rng.CHUNK, with the fixed order "all first-coordinate levels,
    then all second-coordinate levels" inside a chunk.
    """
    seq, tree = pair.seq, pair.tree
    dim, depth = seq.dim, tree.depth
    f_terminal = np.zeros((count, dim))
    g_terminal = np.zeros((count, dim))
    f_star = np.zeros(count)
    d_star = np.zeros(count)
    e_star = np.zeros(count)
    for start, stop, gen in rng.chunk_streams(seed, "sample-paths", count):
        rows = stop - start
        picks = [gen.choice(tree.sizes[n - 1], size=rows, p=tree.level_probs(n))
                 for n in range(1, depth + 1)]
        picks_t = [gen.choice(tree.sizes[n - 1], size=rows, p=tree.level_probs(n))
                   for n in range(1, depth + 1)]
        f = np.zeros((rows, dim))
        g = np.zeros((rows, dim))
        fs = np.zeros(rows)
        ds = np.zeros(rows)
        es = np.zeros(rows)
        node = np.zeros(rows, dtype=np.int64)
        node_t = np.zeros(rows, dtype=np.int64)
        for n in range(1, depth + 1):
            child = node * tree.sizes[n - 1] + picks[n - 1]
            child_t = node_t * tree.sizes[n - 1] + picks_t[n - 1]
            d_inc = seq.increments(n)[child]
            if pair.mode == "decoupled":
                e_inc = seq.increments(n)[node * tree.sizes[n - 1] + picks_t[n - 1]]
            else:
                e_inc = seq.increments(n)[child_t]
            f += d_inc
            g += e_inc
            fs = np.maximum(fs, seq.space.norms(f))
            ds = np.maximum(ds, seq.space.norms(d_inc))
            es = np.maximum(es, seq.space.norms(e_inc))
            node, node_t = child, child_t
        sl = slice(start, stop)
        f_terminal[sl], g_terminal[sl] = f, g
        f_star[sl], d_star[sl], e_star[sl] = fs, ds, es
    return SampleBatch(f_terminal, g_terminal, f_star, d_star, e_star, seed)


# ---------------------------------------------------------------------------
# randomized model builders (shared by CLI suites, tests, acceptance runs)

MULT_ALPHABET = (1.0, -1.0, 2.0, -2.0, 0.5, -0.5)


def random_tree(gen: np.random.Generator, max_depth: int, max_alphabet: int = 3,
                symmetric: bool = True) -> FiltrationTree:
    depth = int(gen.integers(1, max_depth + 1))
    levels = []
    for _ in range(depth):
        if symmetric:
            if max_alphabet >= 3 and gen.random() < 0.5:
                scale = float(gen.choice([1.0, math.sqrt(3.0), 2.0]))
                center = float(gen.choice([0.5, 2.0 / 3.0]))
                side = (1.0 - center) / 2.0
                levels.append(Level((-scale, 0.0, scale), (side, center, side)))
            else:
                levels.append(Level((1.0, -1.0), (0.5, 0.5)))
        else:
            a, b = sorted(gen.choice([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0],
                                     size=2, replace=False))
            pi = float(gen.uniform(0.2, 0.8))
            levels.append(Level((float(a), float(b)), (pi, 1.0 - pi)))
    return FiltrationTree(levels)


def random_multiplier_sequence(gen: np.random.Generator, tree: FiltrationTree,
                               space: Space) -> AdaptedSequence:
    """Random predictable multiplier rule; conditionally symmetric whenever the
    innovation alphabets are symmetric."""
    multipliers = []
    for n in range(1, tree.depth + 1):
        mult = gen.choice(MULT_ALPHABET, size=(tree.num_nodes(n - 1), space.dim))
        multipliers.append(mult)
    return AdaptedSequence.from_multipliers(tree, space, multipliers)


def random_general_sequence(gen: np.random.Generator, tree: FiltrationTree,
                            space: Space) -> AdaptedSequence:
    """Multiplier rule plus a predictable drift; generally not symmetric."""
    base = random_multiplier_sequence(gen, tree, space)
    tables = []
    for n in range(1, tree.depth + 1):
        drift = gen.choice((0.0, 0.5, -0.5, 1.0), size=(tree.num_nodes(n - 1), 1, space.dim))
        tables.append(base.tables[n - 1] + drift)
    return AdaptedSequence(tree, space, tables)


def random_pair(gen: np.random.Generator, space: Space, max_depth: int,
                max_alphabet: int = 3, symmetric: bool = True) -> TangentPair:
    tree = random_tree(gen, max_depth, max_alphabet, symmetric=symmetric)
    if symmetric:
        seq = random_multiplier_sequence(gen, tree, space)
    else:
        seq = random_general_sequence(gen, tree, space)
    return decouple(seq)
