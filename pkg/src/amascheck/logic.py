"""Formulas and their evaluation on explicit models.

State formulas combine variable atoms with boolean connectives, individual
knowledge, and coalition operators whose body is a single temporal layer
(eventually, always, until) over coalition-free state formulas.  Coalitions
quantify over uniform positional strategies: each member picks one choice per
observation (its local state plus its own variables), and the formula holds
when some such strategy makes the temporal body true on every outcome path.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Optional

from .core import EPSILON, Model, ModelError


class FormulaError(Exception):
    """Formula outside the supported fragment, or malformed."""


class StrategySpaceError(Exception):
    """The strategy space exceeds the configured enumeration cap."""


# ---------------------------------------------------------------------------
# abstract syntax

class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Formula):
    value: bool


@dataclass(frozen=True)
class Atom(Formula):
    var: str
    value: object  # int or bool


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Know(Formula):
    agent: str
    body: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    sub: Formula


@dataclass(frozen=True)
class Always(Formula):
    sub: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Coalition(Formula):
    agents: tuple
    path: Formula  # Eventually | Always | Until


_TEMPORAL = (Eventually, Always, Until)


def validate_formula(f: Formula) -> None:
    """Reject formulas outside the supported fragment.

    Coalition operators cannot nest (not even through knowledge), knowledge
    bodies are purely boolean or epistemic, and temporal operators appear only
    directly under a coalition.
    """

    def state(f, under_coalition, under_know):
        if isinstance(f, (Const, Atom)):
            return
        if isinstance(f, Not):
            return state(f.sub, under_coalition, under_know)
        if isinstance(f, (And, Or, Implies)):
            state(f.left, under_coalition, under_know)
            state(f.right, under_coalition, under_know)
            return
        if isinstance(f, Know):
            return state(f.body, under_coalition, True)
        if isinstance(f, _TEMPORAL):
            raise FormulaError(
                "temporal operators are only allowed directly under a coalition")
        if isinstance(f, Coalition):
            if under_coalition:
                raise FormulaError(
                    "coalition operators cannot nest: the supported fragment "
                    "fixes one strategic modality per formula, so a coalition "
                    "inside another coalition's objective has no meaning here")
            if under_know:
                raise FormulaError(
                    "knowledge bodies cannot contain coalitions: knowledge "
                    "takes only boolean and epistemic arguments in this "
                    "fragment")
            if not isinstance(f.path, _TEMPORAL):
                raise FormulaError(
                    "coalition body must be eventually, always, or until")
            for sub in _path_parts(f.path):
                state(sub, True, under_know)
            return
        raise FormulaError(f"unknown formula node {f!r}")

    state(f, False, False)


def _path_parts(path):
    if isinstance(path, Until):
        return (path.left, path.right)
    return (path.sub,)


def path_spec(path):
    """Normalize a temporal layer to (kind, hold_formula, target_formula)."""
    if isinstance(path, Eventually):
        return ("F", path.sub, None)
    if isinstance(path, Always):
        return ("G", path.sub, None)
    if isinstance(path, Until):
        return ("U", path.left, path.right)
    raise FormulaError(f"not a temporal layer: {path!r}")


def formula_to_str(f: Formula) -> str:
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        v = f.value
        if isinstance(v, bool):
            v = "true" if v else "false"
        return f"{f.var}={v}"
    if isinstance(f, Not):
        return f"!{_paren(f.sub)}"
    if isinstance(f, And):
        return f"({formula_to_str(f.left)} & {formula_to_str(f.right)})"
    if isinstance(f, Or):
        return f"({formula_to_str(f.left)} | {formula_to_str(f.right)})"
    if isinstance(f, Implies):
        return f"({formula_to_str(f.left)} -> {formula_to_str(f.right)})"
    if isinstance(f, Know):
        return f"K_{f.agent} {_paren(f.body)}"
    if isinstance(f, Eventually):
        return f"F {_paren(f.sub)}"
    if isinstance(f, Always):
        return f"G {_paren(f.sub)}"
    if isinstance(f, Until):
        return f"({formula_to_str(f.left)} U {formula_to_str(f.right)})"
    if isinstance(f, Coalition):
        return f"<<{','.join(f.agents)}>> {formula_to_str(f.path)}"
    raise FormulaError(f"unknown formula node {f!r}")


def _paren(f):
    s = formula_to_str(f)
    if isinstance(f, (Atom, Const, Not, Know)):
        return s
    return s if s.startswith("(") else f"({s})"


def formula_agents(f: Formula) -> set:
    """Names of agents mentioned by coalition or knowledge operators."""
    out = set()

    def walk(f):
        if isinstance(f, Coalition):
            out.update(f.agents)
            walk(f.path)
        elif isinstance(f, Know):
            out.add(f.agent)
            walk(f.body)
        elif isinstance(f, (Not, Eventually, Always)):
            walk(f.sub)
        elif isinstance(f, (And, Or, Implies, Until)):
            walk(f.left)
            walk(f.right)

    walk(f)
    return out


def formula_vars(f: Formula) -> set:
    out = set()

    def walk(f):
        if isinstance(f, Atom):
            out.add(f.var)
        elif isinstance(f, (Not, Eventually, Always)):
            walk(f.sub)
        elif isinstance(f, Know):
            walk(f.body)
        elif isinstance(f, (And, Or, Implies, Until)):
            walk(f.left)
            walk(f.right)
        elif isinstance(f, Coalition):
            walk(f.path)

    walk(f)
    return out


# ---------------------------------------------------------------------------
# strategies

def strategy_views(model: Model, agent_idx: int):
    """All observations of an agent across the model, with available choices.

    Returns a sorted list of (view, choices); views whose local state offers
    no choice are omitted (the agent owns nothing to restrict there).
    """
    amas = model.amas
    views = {}
    for g in range(len(model)):
        v = model.agent_view(g, agent_idx)
        if v not in views:
            views[v] = amas.agents[agent_idx].choices_at(v[0])
    return sorted(((v, c) for v, c in views.items() if c), key=lambda x: repr(x[0]))


def admitted_events(model: Model, g: int, sigma, variant: str):
    """Events at g compatible with the strategy sigma ({agent_idx: {view: choice}}).

    The self-loop at an undeadlocked state always survives under the standard
    variant; the reactive variant suppresses it whenever a real event remains.
    """
    amas = model.amas
    real = []
    has_eps = False
    for e in model.trans[g]:
        if e == EPSILON:
            has_eps = True
            continue
        ok = True
        for i in amas.owners[e]:
            mp = sigma.get(i)
            if mp is None:
                continue
            ch = mp.get(model.agent_view(g, i))
            if ch is not None and e not in ch:
                ok = False
                break
        if ok:
            real.append(e)
    if has_eps and (variant == "std" or not real):
        return real + [EPSILON]
    return real


def outcome_graph(model: Model, roots, sigma, variant: str = "std"):
    """Forward closure of the strategy-restricted transition relation.

    Returns {state: tuple((event, successor))} over all states reachable from
    the roots once non-admitted events are pruned.
    """
    succ = {}
    stack = list(dict.fromkeys(roots))
    seen = set(stack)
    while stack:
        g = stack.pop()
        row = []
        for e in admitted_events(model, g, sigma, variant):
            s2 = model.trans[g][e]
            row.append((e, s2))
            if s2 not in seen:
                seen.add(s2)
                stack.append(s2)
        succ[g] = tuple(row)
    return succ


def holds_on_all_paths(succ, roots, kind, p_in, q_in=None) -> bool:
    """Check a single temporal layer on every maximal path of a closed graph.

    succ maps each node to its successors ((event, node) pairs or bare nodes);
    every node must have at least one successor, so all maximal paths are
    infinite.  p_in and q_in are membership callables.
    """

    def nexts(g):
        for x in succ[g]:
            yield x[1] if isinstance(x, tuple) else x

    if kind == "G":
        seen = set()
        stack = [g for g in roots]
        while stack:
            g = stack.pop()
            if g in seen:
                continue
            seen.add(g)
            if not p_in(g):
                return False
            stack.extend(nexts(g))
        return True

    if kind == "F":
        stop = p_in
        bad = None
    elif kind == "U":
        stop = q_in
        bad = lambda g: not p_in(g)
    else:
        raise FormulaError(f"unknown temporal kind {kind!r}")

    # explore the stop-avoiding region; any lasso inside it is a counterexample
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {}
    for r in roots:
        if stop(r) or color.get(r) == BLACK:
            continue
        stack = [(r, None)]
        while stack:
            g, it = stack[-1]
            if it is None:
                if bad is not None and bad(g):
                    return False
                color[g] = GRAY
                it = iter(list(nexts(g)))
                stack[-1] = (g, it)
            advanced = False
            for s2 in it:
                if stop(s2):
                    continue
                c = color.get(s2, WHITE)
                if c == GRAY:
                    return False
                if c == WHITE:
                    stack.append((s2, None))
                    advanced = True
                    break
            if not advanced:
                color[g] = BLACK
                stack.pop()
    return True


# ---------------------------------------------------------------------------
# whole-model evaluation under a fixed strategy

def _succ_lists(model: Model, sigma, variant: str):
    return [
        [model.trans[g][e] for e in admitted_events(model, g, sigma, variant)]
        for g in range(len(model))
    ]


def _preds_of(succs, n):
    preds = [[] for _ in range(n)]
    for g, row in enumerate(succs):
        for s in row:
            preds[s].append(g)
    return preds


def _prune_live(core_set, succs, preds):
    """Largest subset of core_set in which every state keeps a successor
    inside the subset (states admitting an infinite stay in core_set)."""
    live = set(core_set)
    cnt = {g: sum(1 for s in succs[g] if s in live) for g in live}
    queue = [g for g, c in cnt.items() if c == 0]
    while queue:
        x = queue.pop()
        if x not in live:
            continue
        live.discard(x)
        for p in preds[x]:
            if p in live:
                cnt[p] -= 1
                if cnt[p] == 0:
                    queue.append(p)
    return live


def allpaths_sat(model: Model, sigma, variant, kind, p_set, q_set=None) -> set:
    """States from which every strategy-admitted path satisfies the layer."""
    n = len(model)
    succs = _succ_lists(model, sigma, variant)
    preds = _preds_of(succs, n)
    universe = range(n)
    if kind == "G":
        bad = {g for g in universe if g not in p_set}
        stack = list(bad)
        while stack:
            x = stack.pop()
            for p in preds[x]:
                if p not in bad:
                    bad.add(p)
                    stack.append(p)
        return {g for g in universe if g not in bad}
    if kind == "F":
        live = _prune_live({g for g in universe if g not in p_set}, succs, preds)
        return {g for g in universe if g not in live}
    if kind == "U":
        hold = p_set
        target = q_set
        live = _prune_live(
            {g for g in universe if g in hold and g not in target}, succs, preds)
        viol = {g for g in universe if g not in hold and g not in target} | live
        stack = list(viol)
        while stack:
            x = stack.pop()
            for p in preds[x]:
                if p not in viol and p not in target:
                    viol.add(p)
                    stack.append(p)
        return {g for g in universe if g not in viol}
    raise FormulaError(f"unknown temporal kind {kind!r}")


# ---------------------------------------------------------------------------
# exact verification by strategy enumeration

def subjective_roots(model: Model, agent_idxs):
    """Per-state root sets: everything some coalition member cannot tell apart."""
    classes = []
    for i in agent_idxs:
        by_view = {}
        for g in range(len(model)):
            by_view.setdefault(model.agent_view(g, i), []).append(g)
        classes.append(by_view)

    def roots(g):
        out = set()
        for i, by_view in zip(agent_idxs, classes):
            out.update(by_view[model.agent_view(g, i)])
        return out

    return roots


def subjective_initial_set(model: Model, agent_idxs) -> frozenset:
    """The initial states plus everything some coalition member considers
    possible there.  Subjective verification quantifies paths from this set,
    and the reducing builder seeds its search from it."""
    roots = subjective_roots(model, agent_idxs)
    out = set(model.initial)
    for g in model.initial:
        out |= roots(g)
    return frozenset(out)


def root_set(model: Model, agent_idxs, mode: str) -> frozenset:
    if mode == "subjective":
        return subjective_initial_set(model, agent_idxs)
    return frozenset(model.initial)


def view_key(model: Model, agent_idx: int, view) -> str:
    """Readable rendering of an observation, for witness output."""
    amas = model.amas
    names = [amas.all_vars[p] for p in amas.agent_vars(agent_idx)]
    parts = [str(view[0])]
    for name, val in zip(names, view[1:]):
        parts.append(f"{name}={'?' if val is None else val}")
    return ";".join(parts)


def strategy_to_json(model: Model, sigma) -> dict:
    out = {}
    for i, mp in sigma.items():
        name = model.amas.agents[i].name
        out[name] = {
            view_key(model, i, v): sorted(ch) for v, ch in sorted(
                mp.items(), key=lambda kv: repr(kv[0]))
        }
    return out


@dataclass
class ExactResult:
    verdict: bool
    per_initial: dict
    sat: frozenset
    witness: Optional[dict] = None
    strategies_checked: int = 0
    strategy_space: int = 0


class _SatContext:
    """Bottom-up satisfaction-set evaluator.

    Coalition subformulas are decided once for the whole model: a single
    strategy must win from every root (the initial states, or their epistemic
    neighborhood in subjective mode), and the node then contributes either all
    states or none to the enclosing boolean structure.
    """

    def __init__(self, model, mode, variant, strategy_cap, deadline):
        self.model = model
        self.mode = mode
        self.variant = variant
        self.strategy_cap = strategy_cap
        self.deadline = deadline
        self.memo = {}
        self.witness = None
        self.strategies_checked = 0
        self.strategy_space = 0

    def _tick(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            from .core import DeadlineExceeded
            raise DeadlineExceeded("exact verification")

    def sat(self, f) -> frozenset:
        got = self.memo.get(f)
        if got is not None:
            return got
        out = self._compute(f)
        self.memo[f] = out
        return out

    def _compute(self, f) -> frozenset:
        model = self.model
        universe = range(len(model))
        if isinstance(f, Const):
            return frozenset(universe) if f.value else frozenset()
        if isinstance(f, Atom):
            from .core import value_eq
            if f.var not in model.amas.var_index:
                raise FormulaError(f"unknown variable {f.var!r} in formula")
            vi = model.amas.var_index[f.var]
            return frozenset(
                g for g in universe if value_eq(model.states[g][1][vi], f.value))
        if isinstance(f, Not):
            return frozenset(universe) - self.sat(f.sub)
        if isinstance(f, And):
            return self.sat(f.left) & self.sat(f.right)
        if isinstance(f, Or):
            return self.sat(f.left) | self.sat(f.right)
        if isinstance(f, Implies):
            return (frozenset(universe) - self.sat(f.left)) | self.sat(f.right)
        if isinstance(f, Know):
            body = self.sat(f.body)
            i = model.amas.name_index.get(f.agent)
            if i is None:
                raise FormulaError(f"unknown agent {f.agent!r} in formula")
            by_view = {}
            for g in universe:
                by_view.setdefault(model.agent_view(g, i), []).append(g)
            out = set()
            for cls in by_view.values():
                if all(g in body for g in cls):
                    out.update(cls)
            return frozenset(out)
        if isinstance(f, Coalition):
            return self._coalition(f)
        raise FormulaError(f"cannot evaluate {f!r} as a state formula")

    def _coalition(self, f: Coalition) -> frozenset:
        model = self.model
        idxs = coalition_indices(model, f.agents)
        roots = root_set(model, idxs, self.mode)
        verdict, sigma = self._search(f, idxs, roots)
        if verdict:
            if self.witness is None:
                self.witness = strategy_to_json(model, sigma)
            return frozenset(range(len(model)))
        return frozenset()

    def _search(self, f: Coalition, idxs, roots):
        """First strategy (in enumeration order) winning from every root."""
        model = self.model
        self._tick()
        kind, p, q = path_spec(f.path)
        p_set = self.sat(p)
        q_set = self.sat(q) if q is not None else None

        domain = []  # (agent_idx, view, options)
        space = 1
        for i in idxs:
            for v, opts in strategy_views(model, i):
                domain.append((i, v, opts))
                space *= len(opts)
                if space > self.strategy_cap:
                    raise StrategySpaceError(
                        f"strategy space exceeds cap ({self.strategy_cap})")
        self.strategy_space = max(self.strategy_space, space)

        for picks in itertools.product(*(range(len(o)) for _, _, o in domain)):
            self.strategies_checked += 1
            if self.strategies_checked % 64 == 0:
                self._tick()
            sigma = {i: {} for i in idxs}
            for (i, v, opts), k in zip(domain, picks):
                sigma[i][v] = opts[k]
            win = allpaths_sat(model, sigma, self.variant, kind, p_set, q_set)
            if all(r in win for r in roots):
                return True, sigma
        return False, None


def coalition_indices(model: Model, agents) -> tuple:
    idxs = []
    for name in agents:
        i = model.amas.name_index.get(name)
        if i is None:
            raise FormulaError(f"unknown agent {name!r} in coalition")
        idxs.append(i)
    return tuple(idxs)


def coalition_holds_per_state(model: Model, f: Coalition, mode: str = "objective",
                              variant: str = "std", strategy_cap: int = 1_000_000,
                              deadline: Optional[float] = None) -> frozenset:
    """States where the coalition formula holds under per-state semantics:
    at g the roots are g itself (objective) or everything some member
    confuses with g (subjective), and a strategy may be picked per state."""
    validate_formula(f)
    if not isinstance(f, Coalition):
        raise FormulaError("per-state coalition evaluation needs a coalition root")
    ctx = _SatContext(model, mode, variant, strategy_cap, deadline)
    idxs = coalition_indices(model, f.agents)
    kind, p, q = path_spec(f.path)
    p_set = ctx.sat(p)
    q_set = ctx.sat(q) if q is not None else None

    domain = []
    space = 1
    for i in idxs:
        for v, opts in strategy_views(model, i):
            domain.append((i, v, opts))
            space *= len(opts)
            if space > strategy_cap:
                raise StrategySpaceError(
                    f"strategy space exceeds cap ({strategy_cap})")

    if mode == "subjective":
        roots = subjective_roots(model, idxs)
    else:
        roots = lambda g: (g,)

    remaining = set(range(len(model)))
    sat = set()
    for picks in itertools.product(*(range(len(o)) for _, _, o in domain)):
        ctx._tick()
        sigma = {i: {} for i in idxs}
        for (i, v, opts), k in zip(domain, picks):
            sigma[i][v] = opts[k]
        win = allpaths_sat(model, sigma, variant, kind, p_set, q_set)
        for g in list(remaining):
            if all(r in win for r in roots(g)):
                sat.add(g)
                remaining.discard(g)
        if not remaining:
            break
    return frozenset(sat)


def verify_exact(model: Model, formula: Formula, mode: str = "objective",
                 variant: str = "std", strategy_cap: int = 1_000_000,
                 deadline: Optional[float] = None) -> ExactResult:
    """Decide a formula on every initial state by exhaustive uniform-strategy
    enumeration.  Sound and complete within the supported fragment."""
    validate_formula(formula)
    _require_total(model)
    if mode not in ("objective", "subjective"):
        raise ValueError(f"unknown mode {mode!r}")
    if variant not in ("std", "react"):
        raise ValueError(f"unknown variant {variant!r}")
    ctx = _SatContext(model, mode, variant, strategy_cap, deadline)
    sat = ctx.sat(formula)
    per_initial = {g: (g in sat) for g in model.initial}
    verdict = all(per_initial.values())
    return ExactResult(
        verdict=verdict,
        per_initial=per_initial,
        sat=sat,
        witness=ctx.witness if verdict else None,
        strategies_checked=ctx.strategies_checked,
        strategy_space=ctx.strategy_space,
    )


def _require_total(model: Model):
    for g, row in enumerate(model.trans):
        if not row:
            raise ModelError(
                f"state {g} has no outgoing transition; verification requires "
                "the undeadlocked model")


def eval_state_formula(model: Model, g: int, formula: Formula,
                       mode: str = "objective", variant: str = "std",
                       strategy_cap: int = 1_000_000) -> bool:
    """Truth value of a state formula at one state.  Coalition subformulas
    keep their whole-model reading (strategies win from the initial roots)."""
    validate_formula(formula)
    ctx = _SatContext(model, mode, variant, strategy_cap, None)
    return g in ctx.sat(formula)
