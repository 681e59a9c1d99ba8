"""Tree-structured collective learning for plan selection.

Agents sit in a balanced binary tree. Each iteration runs a bottom-up pass,
where every agent re-selects its plan against the best estimate of everyone
else's choices and forwards its subtree aggregate to its parent, followed by
a top-down pass that broadcasts the root's total so every agent holds the same
global aggregate. A new round of selections is kept only if the root-evaluated
global cost does not increase.
"""

from __future__ import annotations

import csv
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class EmptyTree(ValueError):
    pass


@dataclass
class Tree:
    """Complete binary tree stored in level order: position i has children 2i+1 and 2i+2."""

    order: list[int]

    def __len__(self) -> int:
        return len(self.order)

    @property
    def root(self) -> int:
        return self.order[0]

    def position(self, agent: int) -> int:
        return self.order.index(agent)

    def parent(self, agent: int) -> int | None:
        pos = self.position(agent)
        return None if pos == 0 else self.order[(pos - 1) // 2]

    def children(self, agent: int) -> list[int]:
        pos = self.position(agent)
        return [self.order[c] for c in (2 * pos + 1, 2 * pos + 2) if c < len(self.order)]

    def depth(self) -> int:
        return max(0, len(self.order).bit_length() - 1)

    def leaf_depths(self) -> list[int]:
        return [(pos + 1).bit_length() - 1 for pos in range(len(self.order)) if 2 * pos + 1 >= len(self.order)]

    def edges(self) -> list[tuple[int, int]]:
        return [(self.order[(p - 1) // 2], self.order[p]) for p in range(1, len(self.order))]


def build_tree(agents: Sequence[int], positions: Sequence[Sequence[float]] | np.ndarray) -> Tree:
    """Balanced tree with agents closest to the swarm centroid nearest the root."""
    if len(agents) < 1:
        raise EmptyTree("need at least one agent")
    pts = np.asarray(positions, dtype=float).reshape(len(agents), -1)
    centroid = pts.mean(axis=0)
    dist = np.round(np.linalg.norm(pts - centroid, axis=1), 9)
    ranked = sorted(range(len(agents)), key=lambda i: (dist[i], agents[i]))
    return Tree(order=[int(agents[i]) for i in ranked])


def inject_failure(tree: Tree, agent: int) -> Tree:
    """Remove ``agent``; the last node in level order (deepest, rightmost leaf) takes its place."""
    if agent not in tree.order:
        raise KeyError(f"agent {agent} is not in the tree")
    if len(tree) == 1:
        raise EmptyTree("removing the only node leaves an empty tree")
    order = list(tree.order)
    pos = order.index(agent)
    last = order.pop()
    if pos < len(order):
        order[pos] = last
    return Tree(order=order)


class Mailbox:
    """In-process stand-in for the tree transport; counts every message sent."""

    def __init__(self) -> None:
        self._inbox: dict[int, list[tuple[int, np.ndarray]]] = defaultdict(list)
        self.sent = 0

    def send(self, src: int, dst: int, payload: np.ndarray) -> None:
        self._inbox[dst].append((src, payload))
        self.sent += 1

    def receive(self, dst: int) -> list[tuple[int, np.ndarray]]:
        return self._inbox.pop(dst, [])


def rmse(aggregate: np.ndarray, target: np.ndarray) -> float:
    diff = aggregate.astype(float) - target
    return float(np.sqrt(np.mean(diff * diff)))


def local_cost(own: np.ndarray, energy: float, others_sum: np.ndarray, target: np.ndarray, beta: float) -> float:
    """Mismatch of (own + others) against the target traded against the plan's energy."""
    if own.shape != others_sum.shape or own.shape != target.shape:
        raise ValueError("occupancy, aggregate and target shapes must agree")
    return (1.0 - beta) * rmse(own + others_sum, target) + beta * energy


def _candidate_costs(cands: np.ndarray, energies: np.ndarray, others: np.ndarray, target: np.ndarray,
                     beta: float) -> np.ndarray:
    diff = cands + (others - target)[None, :]
    mismatch = np.sqrt(np.mean(diff * diff, axis=1))
    return (1.0 - beta) * mismatch + beta * energies


@dataclass
class Candidates:
    """Flattened occupancy matrices (L, N*S) and plan energies (L,) of one agent."""

    occupancy: np.ndarray
    energy: np.ndarray

    def __post_init__(self) -> None:
        self.occupancy = np.asarray(self.occupancy)
        self.energy = np.asarray(self.energy, dtype=float)
        if self.occupancy.ndim != 2 or len(self.occupancy) != len(self.energy) or len(self.energy) == 0:
            raise ValueError("candidates need a non-empty (L, N*S) occupancy stack and L energies")


@dataclass
class SelectionResult:
    selected: dict[int, int]
    global_sum: np.ndarray  # flattened (N*S,)
    others: dict[int, np.ndarray]
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)  # iteration, rmse, energy, cost
    messages: list[int] = field(default_factory=list)
    sums_after_broadcast: list[np.ndarray] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.trace[-1][3]


def global_cost(total: np.ndarray, mean_energy: float, target: np.ndarray, beta: float) -> float:
    return (1.0 - beta) * rmse(total, target) + beta * mean_energy


def run_collective_selection(
    tree: Tree,
    candidates: Mapping[int, Candidates],
    target: np.ndarray,
    beta: float,
    iterations: int = 40,
    keep_sums: bool = False,
) -> SelectionResult:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    target = np.asarray(target, dtype=float).ravel()
    width = target.shape[0]
    zero = np.zeros(width, dtype=np.int64)
    agents = list(tree.order)
    for u in agents:
        if candidates[u].occupancy.shape[1] != width:
            raise ValueError(f"agent {u}: candidate width differs from target")

    n_agents = len(agents)
    selected: dict[int, int] = {}
    sub_occ: dict[int, np.ndarray] = {u: zero for u in agents}
    sub_energy: dict[int, float] = {u: 0.0 for u in agents}
    total, total_energy = zero, 0.0
    best_cost = np.inf
    result = SelectionResult(selected={}, global_sum=zero, others={})
    mailbox = Mailbox()

    for it in range(iterations):
        sent_before = mailbox.sent
        proposal: dict[int, int] = {}
        new_occ: dict[int, np.ndarray] = {}
        new_energy: dict[int, float] = {}
        approved: dict[int, bool] = {}
        estimate = np.inf
        for pos in range(n_agents - 1, -1, -1):
            u = agents[pos]
            replies = {src: payload for src, payload in mailbox.receive(u)}
            kids = [agents[c] for c in (2 * pos + 1, 2 * pos + 2) if c < n_agents]
            outside = total - sub_occ[u]
            outside_e = total_energy - sub_energy[u]
            cand = candidates[u]
            best = None
            # the parent may keep any child's previous subtree instead of its fresh proposal
            for accept in itertools.product((True, False), repeat=len(kids)):
                if it == 0 and not all(accept):
                    continue
                others, others_e = outside, outside_e
                for c, ok in zip(kids, accept):
                    occ_c, e_c = replies[c] if ok else (sub_occ[c], sub_energy[c])
                    others, others_e = others + occ_c, others_e + e_c
                k = int(np.argmin(_candidate_costs(cand.occupancy, cand.energy, others, target, beta)))
                est = global_cost(others + cand.occupancy[k], (others_e + cand.energy[k]) / n_agents, target, beta)
                if best is None or est < best[0]:
                    best = (est, accept, k, others - outside, others_e - outside_e)
            assert best is not None
            estimate, accept, k, kid_occ, kid_e = best
            approved.update(zip(kids, accept))
            proposal[u] = k
            new_occ[u] = kid_occ + cand.occupancy[k]
            new_energy[u] = kid_e + float(cand.energy[k])
            if pos > 0:
                mailbox.send(u, agents[(pos - 1) // 2], (new_occ[u], new_energy[u]))
        root = agents[0]
        accepted = {root: estimate <= best_cost}
        if accepted[root]:
            best_cost = estimate
            total, total_energy = new_occ[root], new_energy[root]

        # top-down: each parent forwards the root total and whether the child's change stands
        for pos in range(n_agents):
            u = agents[pos]
            if pos > 0:
                ((_, (_, accepted[u])),) = mailbox.receive(u)
            if accepted[u]:
                selected[u] = proposal[u]
                sub_occ[u], sub_energy[u] = new_occ[u], new_energy[u]
            for c in (2 * pos + 1, 2 * pos + 2):
                if c < n_agents:
                    child = agents[c]
                    mailbox.send(u, child, (total, accepted[u] and approved[child]))
        result.messages.append(mailbox.sent - sent_before)
        if keep_sums:
            result.sums_after_broadcast.append(total.copy())
        mean_sel = float(np.mean([candidates[u].energy[selected[u]] for u in agents]))
        result.trace.append((it + 1, rmse(total, target), mean_sel, global_cost(total, mean_sel, target, beta)))

    result.selected = selected
    result.global_sum = total
    result.others = {u: total - candidates[u].occupancy[selected[u]] for u in agents}
    return result


def brute_force_optimum(candidates: Mapping[int, Candidates], target: np.ndarray, beta: float = 0.0) -> float:
    """Exhaustive minimum of the global cost over every joint selection (small instances only)."""
    target = np.asarray(target, dtype=float).ravel()
    agents = sorted(candidates)
    best = np.inf
    for combo in itertools.product(*(range(len(candidates[u].energy)) for u in agents)):
        total = sum(candidates[u].occupancy[k] for u, k in zip(agents, combo))
        mean_e = float(np.mean([candidates[u].energy[k] for u, k in zip(agents, combo)]))
        best = min(best, global_cost(np.asarray(total), mean_e, target, beta))
    return best


TRACE_HEADER = ["iteration", "global_rmse", "global_energy"]


def write_trace(path: str | Path, trace: Sequence[tuple[int, float, float, float]], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append or fh.tell() == 0:
            w.writerow(TRACE_HEADER)
        for it, r, e, _ in trace:
            w.writerow([it, repr(r), repr(e)])
