"""Partial-order reduction for asynchronous multi-agent models.

The reducer explores a subset of each state's enabled events (an "ample set")
and still preserves the verdicts of coalition formulas whose agents and atoms
are declared up front.  Visibility is checked syntactically over the agent
templates: an event is invisible when no agent of interest owns it and no
transition labeled with it writes an observed variable.  That check is
stronger than the semantic definition (a write may be a no-op at runtime),
which keeps it sound.

Ample sets come from the classical safe-agent rule.  An agent is safe at one
of its local states when every event it could take from there is owned by it
alone, is invisible, and touches only variables that no other agent reads or
writes.  The third condition is what makes deferred events commute with the
rest of the system even though guards may read shared variables.  Cycles are
handled with the usual stack proviso: if an ample successor is already on the
DFS stack, the state is fully expanded instead.

States that carry an epsilon self-loop keep it in the reduced model; epsilon
is never part of an ample set and never triggers the stack proviso, since
epsilon-only cycles do not defer anybody's events.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

from .core import (
    EPSILON,
    Amas,
    BuildConfig,
    Model,
    ModelError,
    DeadlineExceeded,
    StateLimitExceeded,
    guard_vars,
    state_has_epsilon,
    successors_of,
)
from .logic import formula_agents, formula_vars, validate_formula


# ---------------------------------------------------------------------------
# event classification

class ReductionContext:
    """Visibility and independence data for one reduction run.

    A is the set of agents whose behavior the formula observes (coalition
    members plus every agent under a knowledge operator); PV the set of
    variables whose values it observes.  Events are split into visible and
    invisible, and two events are dependent when they share an owner or are
    both visible.
    """

    def __init__(self, amas: Amas, agents, observed_vars):
        self.amas = amas
        names = frozenset(agents)
        unknown = names - set(amas.name_index)
        if unknown:
            raise ModelError(f"unknown agents in reduction context: {sorted(unknown)}")
        self.agent_names = names
        self.agent_idxs = frozenset(amas.name_index[n] for n in names)
        self.observed_vars = frozenset(observed_vars)

        writers = _writes_by_event(amas)
        visible = set()
        for e, own in amas.owners.items():
            if self.agent_idxs.intersection(own):
                visible.add(e)
            elif writers.get(e, frozenset()) & self.observed_vars:
                visible.add(e)
        self.visible = frozenset(visible)
        self.invisible = frozenset(set(amas.owners) - visible) | {EPSILON}

        self.touchers = _touchers(amas)
        self.safe_locals = self._compute_safe_locals()

    def is_visible(self, event) -> bool:
        return event in self.visible

    def dependent(self, a, b) -> bool:
        """Whether two events may not commute: shared owner, or both visible.

        Epsilon is independent of everything, itself included.
        """
        if a == EPSILON or b == EPSILON:
            return False
        owners = self.amas.owners
        if set(owners[a]) & set(owners[b]):
            return True
        return a in self.visible and b in self.visible

    def _compute_safe_locals(self):
        """Per (agent index, local state): may that agent supply an ample set.

        Requires every locally available event to be solely owned, invisible,
        and confined to variables nobody else reads or writes.
        """
        amas = self.amas
        safe = {}
        for i, agent in enumerate(amas.agents):
            mine = frozenset((i,))
            for l in agent.states:
                ok = True
                has_events = False
                for (src, e), t in agent.transitions.items():
                    if src != l:
                        continue
                    has_events = True
                    if amas.owners[e] != (i,) or e in self.visible:
                        ok = False
                        break
                    touched = set(guard_vars(t.guard)) if t.guard is not None else set()
                    for var, uv in t.updates:
                        touched.add(var)
                        if uv.kind == "read":
                            touched.add(uv.var)
                    if any(self.touchers.get(v, mine) != mine for v in touched):
                        ok = False
                        break
                safe[(i, l)] = ok and has_events
        return safe


def _writes_by_event(amas: Amas) -> dict:
    """Event name -> set of variables some transition with that label assigns."""
    out: dict = {}
    for agent in amas.agents:
        for t in agent.transitions.values():
            if t.updates:
                out.setdefault(t.event, set()).update(var for var, _uv in t.updates)
    return {e: frozenset(vs) for e, vs in out.items()}


def _touchers(amas: Amas) -> dict:
    """Variable -> set of agent indices whose transitions read or write it."""
    out: dict = {}
    for i, agent in enumerate(amas.agents):
        for t in agent.transitions.values():
            touched = set(guard_vars(t.guard)) if t.guard is not None else set()
            for var, uv in t.updates:
                touched.add(var)
                if uv.kind == "read":
                    touched.add(uv.var)
            for v in touched:
                out.setdefault(v, set()).add(i)
    return {v: frozenset(ix) for v, ix in out.items()}


def classify_events(amas: Amas, agents, observed_vars) -> ReductionContext:
    """Build the visibility/independence context for a reduction run."""
    return ReductionContext(amas, agents, observed_vars)


def context_for_formula(amas: Amas, formula, extra_vars=()) -> ReductionContext:
    """Derive the reduction context a formula needs.

    The agent set is taken from the formula itself (coalition members plus
    knowledge agents), so the caller cannot accidentally under-approximate
    it; extra observed variables may only be added on top of the atoms.
    """
    validate_formula(formula)
    agents = formula_agents(formula)
    observed = set(formula_vars(formula)) | set(extra_vars)
    return ReductionContext(amas, agents, observed)


# ---------------------------------------------------------------------------
# ample-set selection

@dataclass
class AmpleDecision:
    """Expansion choice at one state, kept for diagnostics and audits."""

    state_id: int
    events: tuple
    fully_expanded: bool
    reason: str  # "safe-agent", "C2" (no safe agent), or "C3" (stack proviso)


def select_ample(state, ctx: ReductionContext, dfs_stack) -> AmpleDecision:
    """Choose which events to follow from a state.

    state is a global (locals, store) pair and dfs_stack a set of such pairs
    currently on the search path.  Returns the enabled events of the
    lowest-indexed safe agent when that is sound here, otherwise everything.
    The epsilon loop is never included; the caller always follows it.
    """
    succs = successors_of(ctx.amas, state)
    return _select(state, ctx, dfs_stack, succs)


def _select(state, ctx: ReductionContext, dfs_stack, succs) -> AmpleDecision:
    locals_ = state[0]
    all_events = tuple(e for e, _s in succs)
    for i in range(len(ctx.amas.agents)):
        if not ctx.safe_locals.get((i, locals_[i])):
            continue
        mine = [(e, s) for e, s in succs if ctx.amas.owners[e] == (i,)]
        if not mine:
            continue
        if any(s in dfs_stack for _e, s in mine):
            return AmpleDecision(-1, all_events, True, "C3")
        return AmpleDecision(-1, tuple(e for e, _s in mine), False, "safe-agent")
    return AmpleDecision(-1, all_events, True, "C2")


# ---------------------------------------------------------------------------
# reducing builder

def reduce(amas: Amas, initial=None, ctx: ReductionContext = None,
           config: BuildConfig | None = None, stats: dict | None = None) -> Model:
    """Explore the undeadlocked model under ample-set reduction.

    initial may hold several seed states; for subjective verification pass
    every state the observing agents cannot tell apart from a real initial
    state (computed on the full model).  The result is a Model whose states
    and transitions are subsets of the full model's, with identical epsilon
    flags on the surviving states.

    When a stats dict is given it receives ample/full expansion counts and
    the list of per-state decisions.
    """
    if ctx is None:
        raise ModelError("reduce needs a ReductionContext")
    if EPSILON in amas.owners:
        raise ModelError(f"{EPSILON} is reserved and cannot appear in any alphabet")
    if initial is None:
        initial = [amas.initial_state()]
    cfg = config or BuildConfig()
    owners = amas.owners

    ids: dict = {}
    states: list = []
    trans: list = []
    eps: list = []
    on_stack: set = set()
    decisions: list = []
    ample_count = 0
    full_count = 0
    expanded = 0

    def intern(st):
        g = ids.get(st)
        if g is None:
            if len(states) >= cfg.max_states:
                raise StateLimitExceeded(f"more than {cfg.max_states} reachable states")
            g = len(states)
            ids[st] = g
            states.append(st)
            trans.append(None)
            eps.append(False)
        return g

    for seed in initial:
        intern(seed)
    roots = tuple(ids[st] for st in initial)

    for root in roots:
        if trans[root] is not None:
            continue
        # frames: [state id, edge list, next edge index]
        stack = [[root, None, 0]]
        on_stack.add(states[root])
        while stack:
            frame = stack[-1]
            g = frame[0]
            if frame[1] is None:
                expanded += 1
                if cfg.deadline is not None and expanded % cfg.check_every == 0:
                    if time.monotonic() > cfg.deadline:
                        raise DeadlineExceeded("reduced model construction")
                succs = successors_of(amas, states[g])
                decision = _select(states[g], ctx, on_stack, succs)
                decision.state_id = g
                decisions.append(decision)
                if decision.fully_expanded:
                    full_count += 1
                    chosen = succs
                else:
                    ample_count += 1
                    keep = set(decision.events)
                    chosen = [(e, s) for e, s in succs if e in keep]
                chosen = sorted(chosen, key=lambda es: (min(owners[es[0]]), es[0]))
                row = {}
                for e, st2 in chosen:
                    row[e] = intern(st2)
                if state_has_epsilon(amas, states[g], [e for e, _s in succs]):
                    eps[g] = True
                    row[EPSILON] = g
                trans[g] = row
                frame[1] = chosen
            else:
                chosen = frame[1]
                advanced = False
                while frame[2] < len(chosen):
                    _e, st2 = chosen[frame[2]]
                    frame[2] += 1
                    if trans[ids[st2]] is None and st2 not in on_stack:
                        stack.append([ids[st2], None, 0])
                        on_stack.add(st2)
                        advanced = True
                        break
                if not advanced:
                    stack.pop()
                    on_stack.discard(states[g])

    if stats is not None:
        stats["ample_states"] = ample_count
        stats["full_states"] = full_count
        stats["decisions"] = decisions
    return Model(amas, states, ids, roots, trans, eps, undeadlocked=True)


# ---------------------------------------------------------------------------
# stuttering-equivalence oracle (test-only)

def stuttering_equiv_oracle(m1: Model, m2: Model, agents, observed_vars,
                            max_states: int = 200) -> bool:
    """Decide whether two models' initial states admit the same paths up to
    stuttering of unobserved steps.

    A state's label is the valuation of the observed variables plus the local
    states of the named agents.  The check is the standard divergence-aware
    partition refinement: blocks split on which other blocks a state can exit
    to after an internal walk, and on whether it can walk internally forever.
    Intended for tests on small models only; larger inputs are rejected.
    """
    if len(m1) > max_states or len(m2) > max_states:
        raise ModelError(f"stuttering oracle capped at {max_states} states")

    nodes = []
    succ = []
    labels = []
    inits = ([], [])
    for side, m in enumerate((m1, m2)):
        names = sorted(agents)
        jix = []
        for n in names:
            if n not in m.amas.name_index:
                raise ModelError(f"unknown agent {n!r} in stuttering oracle")
            jix.append(m.amas.name_index[n])
        vpos = [(v, m.amas.var_index.get(v)) for v in sorted(observed_vars)]
        base = len(nodes)
        for g in range(len(m)):
            locals_, store = m.states[g]
            lab = (
                tuple(None if p is None else store[p] for _v, p in vpos),
                tuple(locals_[j] for j in jix),
            )
            nodes.append((side, g))
            labels.append(lab)
            succ.append(tuple(sorted({base + s for s in m.trans[g].values()})))
        for g in m.initial:
            inits[side].append(base + g)

    n = len(nodes)
    block = {}
    by_label = {}
    for u in range(n):
        bid = by_label.setdefault(labels[u], len(by_label))
        block[u] = bid

    while True:
        groups: dict = {}
        for u in range(n):
            groups.setdefault(block[u], []).append(u)
        next_id = len(groups)
        changed = False
        for bid, members in groups.items():
            if len(members) == 1:
                continue
            inside = set(members)
            internal = {u: [w for w in succ[u] if w in inside] for u in members}
            diverging = _internal_divergers(members, internal)
            sigs = {}
            for u in members:
                reach = _internal_reach(u, internal)
                ext = set()
                div = False
                for w in reach:
                    if w in diverging:
                        div = True
                    for x in succ[w]:
                        if x not in inside:
                            ext.add(block[x])
                sigs.setdefault((frozenset(ext), div), []).append(u)
            if len(sigs) > 1:
                changed = True
                for key in sorted(sigs, key=lambda k: (sorted(k[0]), k[1]))[1:]:
                    for u in sigs[key]:
                        block[u] = next_id
                    next_id += 1
        if not changed:
            break

    left = {block[u] for u in inits[0]}
    right = {block[u] for u in inits[1]}
    return left == right


def _internal_reach(u, internal) -> set:
    out = {u}
    todo = [u]
    while todo:
        w = todo.pop()
        for x in internal[w]:
            if x not in out:
                out.add(x)
                todo.append(x)
    return out


def _internal_divergers(members, internal) -> set:
    """States lying on a cycle of the block-internal subgraph."""
    index = {}
    low = {}
    on = set()
    order: list = []
    out = set()
    for root in members:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = len(index)
                order.append(v)
                on.add(v)
            if pi < len(internal[v]):
                work[-1] = (v, pi + 1)
                w = internal[v][pi]
                if w not in index:
                    work.append((w, 0))
                elif w in on:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    p = work[-1][0]
                    low[p] = min(low[p], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = order.pop()
                        on.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    if len(comp) > 1 or v in internal[v]:
                        out.update(comp)
    return out
