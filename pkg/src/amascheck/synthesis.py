"""Strategy synthesis: depth-first search with epistemic backtracking, and
a prefix-partitioned parallel driver on top of it.

The sequential search walks the outcome region of a partially bound
strategy.  Whenever expansion touches a state where a coalition member has
an unbound observation class, the class is bound on the spot (first choice
first) and the decision goes on a stack.  A violated path objective pops
the stack chronologically: the most recent decision is advanced to its next
option, everything bound after it is discarded, and the region is rebuilt.
The enumeration therefore covers every assignment of choices to the
observation classes the search can reach, which is exactly the space
verify_exact quantifies over, so the verdicts agree.

The parallel driver splits the work by strategy prefixes: deterministic
stretches of the model from the root up to the first branching state.  A
worker constrained to a prefix only considers strategies that either keep
the prefix executable or refuse to schedule its branch entirely.  For
single-agent coalitions those constraint sets cover the full strategy
space; with two or more members a strategy can straddle prefixes (each
member admits a different branch event, so nothing is scheduled), and one
unconstrained worker is kept to cover the gap.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import DeadlineExceeded, EPSILON, Model
from .logic import (
    _SatContext,
    coalition_indices,
    path_spec,
    root_set,
    strategy_to_json,
    validate_formula,
)

DEFAULT_BUDGET = 100_000_000

_WHITE, _GRAY, _BLACK = 0, 1, 2


@dataclass
class SynthesisResult:
    outcome: str                 # "true" | "none" | "budget"
    witness: Optional[dict]      # agent -> observation -> sorted events
    nodes: int = 0
    decisions: int = 0
    revisions: int = 0
    workers: int = 1

    @property
    def verdict(self) -> Optional[bool]:
        if self.outcome == "true":
            return True
        if self.outcome == "none":
            return False
        return None


@dataclass(frozen=True)
class StrategyPrefix:
    """A deterministic stretch of the model: events from the root through
    states with a single enabled non-epsilon event, except that the final
    event may be one branch of several."""

    steps: tuple     # ((state_id, event), ...)
    end_state: int

    def extended(self, state, event, succ):
        return StrategyPrefix(self.steps + ((state, event),), succ)


class _Cancelled(Exception):
    pass


class _BudgetExceeded(Exception):
    pass


@dataclass
class _Decision:
    key: tuple            # (agent_idx, view)
    options: tuple        # filtered choices, in repertoire order
    index: int = 0


@dataclass
class PartialStrategy:
    """The searcher's working state: the bound observation classes, the
    decision stack that produced them, and the frontier of global states
    still to be expanded under the current bindings."""

    bindings: dict = field(default_factory=dict)   # (agent, view) -> choice
    stack: list = field(default_factory=list)      # [_Decision]
    frontier: list = field(default_factory=list)

    def to_sigma(self):
        sigma = {}
        for (i, view), choice in self.bindings.items():
            sigma.setdefault(i, {})[view] = choice
        return sigma


class _Searcher:
    """One depth-first synthesis run over a fixed model, coalition, path
    objective, mode, and variant, optionally constrained by a prefix."""

    def __init__(self, model: Model, idxs, kind, p_mask, q_mask, variant,
                 roots, budget, deadline, constraint=None, cancel=None):
        self.model = model
        self.idxs = tuple(idxs)
        self.kind = kind
        self.p_mask = p_mask
        self.q_mask = q_mask
        self.variant = variant
        self.roots = tuple(sorted(roots))
        self.budget = budget
        self.deadline = deadline
        self.cancel = cancel
        self.nodes = 0
        self.decisions = 0
        self.revisions = 0
        self.partial = PartialStrategy()

        amas = model.amas
        # per state: the coalition members that have a repertoire there,
        # and the transition list with its coalition owners
        self._members = []
        self._events = []
        for g in range(len(model)):
            locals_ = model.states[g][0]
            mem = tuple(i for i in self.idxs
                        if amas.agents[i].choices_at(locals_[i]))
            self._members.append(mem)
            evs = []
            for e, succ in model.trans[g].items():
                if e == EPSILON:
                    evs.append((e, succ, True, ()))
                else:
                    owners = tuple(i for i in amas.owners[e] if i in self.idxs)
                    evs.append((e, succ, False, owners))
            self._events.append(evs)

        # prefix constraint: (agent, view) -> [(required event, events the
        # agent owns among those enabled at the prefix state)]
        self._constraint = {}
        if constraint is not None:
            for g, e in constraint.steps:
                locals_ = model.states[g][0]
                for i in amas.owners.get(e, ()):
                    if i not in self.idxs:
                        continue
                    if not amas.agents[i].choices_at(locals_[i]):
                        continue
                    own_enabled = frozenset(
                        e2 for e2, _s, is_eps, _o in self._events[g]
                        if not is_eps and i in amas.owners[e2])
                    key = (i, model.agent_view(g, i))
                    self._constraint.setdefault(key, []).append(
                        (e, own_enabled))

    # -- bookkeeping

    def _tick(self):
        self.nodes += 1
        if self.nodes > self.budget:
            raise _BudgetExceeded()
        if self.cancel is not None and self.cancel.is_set():
            raise _Cancelled()
        if self.deadline is not None and self.nodes % 1024 == 0:
            if time.monotonic() > self.deadline:
                raise DeadlineExceeded("synthesis")

    def _allowed_options(self, i, view):
        local = view[0]
        choices = self.model.amas.agents[i].choices_at(local)
        rules = self._constraint.get((i, view))
        if not rules:
            return tuple(choices)
        out = []
        for c in choices:
            ok = True
            for e, own_enabled in rules:
                if e not in c and c & own_enabled:
                    ok = False
                    break
            if ok:
                out.append(c)
        return tuple(out)

    def _bind_state(self, g) -> bool:
        """Bind every unbound coalition observation class at g.  Returns
        False when a class has no options left under the prefix rules."""
        for i in self._members[g]:
            key = (i, self.model.agent_view(g, i))
            if key in self.partial.bindings:
                continue
            options = self._allowed_options(i, key[1])
            if not options:
                return False
            self.partial.stack.append(_Decision(key, options))
            self.partial.bindings[key] = options[0]
            self.decisions += 1
        return True

    def _admitted(self, g):
        """(real successor list, epsilon successor or None) under the
        current bindings, already filtered by the outcome variant."""
        bindings = self.partial.bindings
        view = self.model.agent_view
        real = []
        eps = None
        for e, succ, is_eps, owners in self._events[g]:
            if is_eps:
                eps = succ
                continue
            ok = True
            for i in owners:
                choice = bindings.get((i, view(g, i)))
                if choice is not None and e not in choice:
                    ok = False
                    break
            if ok:
                real.append(succ)
        if self.variant == "react" and real:
            eps = None
        return real, eps

    # -- region expansion under the current bindings

    def _expand(self) -> bool:
        """True when every path from every root satisfies the objective
        under the current (lazily extended) bindings."""
        kind = self.kind
        p_mask, q_mask = self.p_mask, self.q_mask
        color = {}
        stack = self.partial.frontier
        stack.clear()

        for root in self.roots:
            if color.get(root) == _BLACK:
                continue
            stack.append((root, None))
            while stack:
                g, it = stack[-1]
                if it is None:
                    self._tick()
                    if color.get(g) == _BLACK:
                        stack.pop()
                        continue
                    if kind == "F" and p_mask >> g & 1:
                        color[g] = _BLACK
                        stack.pop()
                        continue
                    if kind == "U":
                        if q_mask >> g & 1:
                            color[g] = _BLACK
                            stack.pop()
                            continue
                        if not p_mask >> g & 1:
                            return False
                    if kind == "G" and not p_mask >> g & 1:
                        return False
                    if not self._bind_state(g):
                        return False
                    real, eps = self._admitted(g)
                    if eps is not None and kind in ("F", "U"):
                        # a permitted stall before the goal never reaches it
                        return False
                    color[g] = _GRAY
                    it = iter(real)
                    stack[-1] = (g, it)
                advanced = False
                for succ in it:
                    c = color.get(succ)
                    if c == _BLACK:
                        continue
                    if c == _GRAY:
                        if kind in ("F", "U"):
                            return False
                        continue
                    stack.append((succ, None))
                    advanced = True
                    break
                else:
                    color[g] = _BLACK
                    stack.pop()
                if advanced:
                    continue
        return True

    # -- chronological backtracking over the decision stack

    def run(self) -> SynthesisResult:
        try:
            while True:
                if self._expand():
                    sigma = self.partial.to_sigma()
                    return SynthesisResult(
                        outcome="true",
                        witness=strategy_to_json(self.model, sigma),
                        nodes=self.nodes,
                        decisions=self.decisions,
                        revisions=self.revisions,
                    )
                stack = self.partial.stack
                while stack and stack[-1].index + 1 >= len(stack[-1].options):
                    dec = stack.pop()
                    del self.partial.bindings[dec.key]
                if not stack:
                    return SynthesisResult(
                        outcome="none", witness=None, nodes=self.nodes,
                        decisions=self.decisions, revisions=self.revisions)
                dec = stack[-1]
                dec.index += 1
                self.partial.bindings[dec.key] = dec.options[dec.index]
                self.revisions += 1
        except _BudgetExceeded:
            return SynthesisResult(
                outcome="budget", witness=None, nodes=self.nodes,
                decisions=self.decisions, revisions=self.revisions)


def _prepare(model, agents, path, mode, variant):
    if mode not in ("objective", "subjective"):
        raise ValueError(f"unknown mode {mode!r}")
    if variant not in ("std", "react"):
        raise ValueError(f"unknown variant {variant!r}")
    kind, p, q = path_spec(path)
    for part in (p, q) if q is not None else (p,):
        validate_formula(part)
    ctx = _SatContext(model, mode, variant, 1, None)
    p_mask = 0
    for g in ctx.sat(p):
        p_mask |= 1 << g
    q_mask = None
    if q is not None:
        q_mask = 0
        for g in ctx.sat(q):
            q_mask |= 1 << g
    idxs = coalition_indices(model, agents)
    roots = root_set(model, idxs, mode)
    return idxs, kind, p_mask, q_mask, roots


def dfs_synthesize(model: Model, agents, path, mode: str = "objective",
                   variant: str = "std", budget: int = DEFAULT_BUDGET,
                   deadline: Optional[float] = None) -> SynthesisResult:
    """Depth-first strategy synthesis with chronological revision of
    observation-class bindings.  Complete over positional uniform
    strategies: "true" and "none" match exact enumeration, "budget" means
    the node budget ran out first."""
    idxs, kind, p_mask, q_mask, roots = _prepare(model, agents, path,
                                                 mode, variant)
    searcher = _Searcher(model, idxs, kind, p_mask, q_mask, variant,
                         roots, budget, deadline)
    return searcher.run()


def generate_prefixes(model: Model, roots, limit: int) -> list:
    """Deterministic work-splitting prefixes from the first root.

    A pending prefix whose end state has exactly one enabled non-epsilon
    event is extended in place; one with several splits into one result
    prefix per branch event, unless the split would push the total past
    the limit, in which case the prefix joins the result unsplit; one with
    no events (or one that closed a cycle) is finished.  Whatever is still
    pending at the end joins the result, so the output never exceeds the
    limit and every strategy is consistent with at least one prefix."""
    if limit < 1:
        raise ValueError("limit must be positive")
    root = sorted(roots)[0]
    pending = deque([StrategyPrefix((), root)])
    result = []
    while pending and len(result) + len(pending) <= limit:
        pr = pending.popleft()
        g = pr.end_state
        events = sorted(e for e in model.trans[g] if e != EPSILON)
        if not events:
            result.append(pr)
        elif len(events) == 1:
            succ = model.trans[g][events[0]]
            seen = {root} | {s for s, _e in pr.steps}
            if succ in seen:
                result.append(pr)
            else:
                pending.append(pr.extended(g, events[0], succ))
        elif len(result) + len(pending) + len(events) > limit:
            result.append(pr)
        else:
            for e in events:
                result.append(pr.extended(g, e, model.trans[g][e]))
    result.extend(pending)
    return result


def parallel_synthesize(model: Model, agents, path, mode: str = "objective",
                        variant: str = "std", workers: int = 1,
                        budget: int = DEFAULT_BUDGET,
                        deadline: Optional[float] = None) -> SynthesisResult:
    """Prefix-partitioned synthesis: each worker runs the sequential search
    restricted to strategies consistent with its prefixes, the first
    witness wins, and everyone else is cancelled cooperatively."""
    if workers < 1:
        raise ValueError("workers must be positive")
    if workers == 1:
        out = dfs_synthesize(model, agents, path, mode, variant, budget,
                             deadline)
        out.workers = 1
        return out

    idxs, kind, p_mask, q_mask, roots = _prepare(model, agents, path,
                                                 mode, variant)
    if len(idxs) <= 1:
        jobs = list(generate_prefixes(model, roots, workers))
    else:
        # one unconstrained job covers strategies that straddle prefixes
        jobs = [None] + list(generate_prefixes(model, roots, workers - 1))

    lanes = [[] for _ in range(min(workers, len(jobs)))]
    for k, job in enumerate(jobs):
        lanes[k % len(lanes)].append(job)

    cancel = threading.Event()
    lock = threading.Lock()
    state = {"witness": None, "budget": False, "error": None,
             "nodes": 0, "decisions": 0, "revisions": 0}

    def run_lane(lane):
        try:
            for job in lane:
                if cancel.is_set():
                    return
                searcher = _Searcher(model, idxs, kind, p_mask, q_mask,
                                     variant, roots, budget, deadline,
                                     constraint=job, cancel=cancel)
                try:
                    res = searcher.run()
                finally:
                    with lock:
                        state["nodes"] += searcher.nodes
                        state["decisions"] += searcher.decisions
                        state["revisions"] += searcher.revisions
                if res.outcome == "true":
                    with lock:
                        if state["witness"] is None:
                            state["witness"] = res.witness
                    cancel.set()
                    return
                if res.outcome == "budget":
                    with lock:
                        state["budget"] = True
        except _Cancelled:
            pass
        except BaseException as exc:  # surfaced to the caller, never dropped
            with lock:
                if state["error"] is None:
                    state["error"] = exc
            cancel.set()

    threads = [threading.Thread(target=run_lane, args=(lane,))
               for lane in lanes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if state["error"] is not None:
        raise state["error"]
    if state["witness"] is not None:
        outcome = "true"
    elif state["budget"]:
        outcome = "budget"
    else:
        outcome = "none"
    return SynthesisResult(
        outcome=outcome, witness=state["witness"], nodes=state["nodes"],
        decisions=state["decisions"], revisions=state["revisions"],
        workers=len(lanes))
