"""Fixpoint approximation of coalition formulas.

Exact verification enumerates uniform strategies, which explodes quickly.
This module brackets the answer between two cheap fixpoints instead:

* an upper bound that plays with perfect information (choices may differ
  freely between states, uniformity is ignored), and
* a lower bound that only counts a state as won when one classwise-constant
  choice assignment works uniformly across everything the coalition might
  confuse with it.

If every root lands in the lower set the formula holds; if some root falls
outside the upper set it fails; anything else is Unknown.

State sets are plain integer bitmasks: bit g set means state id g is in.

Epsilon handling differs between the bounds on purpose.  The lower bound
treats the epsilon self-loop as a successor like any other, so a state that
can stall only counts as winning an eventuality if the stall itself is
already winning; that keeps the bound below both outcome variants.  The
upper bound ignores epsilon whenever some real event is admitted, matching
the reactive variant where a stall is only taken when nothing else can
happen; that keeps the bound above both variants.
"""

from __future__ import annotations

import itertools
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .core import EPSILON, DeadlineExceeded, Model
from .logic import (
    Coalition,
    FormulaError,
    _SatContext,
    coalition_indices,
    path_spec,
    root_set,
    validate_formula,
)

# A component whose choice-assignment space exceeds this is never certified
# by the lower bound.  Soundness is unaffected; the bound just stays smaller.
ASSIGNMENT_CAP = 4096


@dataclass(frozen=True)
class TriVerdict:
    """Three-valued answer with the two bound sets that produced it.

    value is True when every root is inside the lower set, False when some
    root is outside the upper set, and None when the bounds do not decide.
    """

    value: Optional[bool]
    lower: int
    upper: int
    iterations: int

    @property
    def lower_size(self) -> int:
        return self.lower.bit_count()

    @property
    def upper_size(self) -> int:
        return self.upper.bit_count()

    @property
    def label(self) -> str:
        if self.value is True:
            return "true"
        if self.value is False:
            return "false"
        return "unknown"


def states_to_mask(states) -> int:
    mask = 0
    for g in states:
        mask |= 1 << g
    return mask


def mask_to_states(mask: int) -> list:
    out = []
    g = 0
    while mask:
        if mask & 1:
            out.append(g)
        mask >>= 1
        g += 1
    return out


# ---------------------------------------------------------------------------
# per-state machinery for the perfect-information bound

class _PerfectStep:
    """Precompiled one-step data: for every state, the coalition's local
    choice products and the transition list annotated with which product
    slots must admit each event."""

    def __init__(self, model: Model, idxs):
        amas = model.amas
        self.model = model
        self.idxs = tuple(idxs)
        self.slot_of = {i: k for k, i in enumerate(self.idxs)}
        n = len(model)
        self.choices = []   # per state: tuple of choice tuples, one per slot
        self.events = []    # per state: list of (succ, is_eps, slot_requirements)
        for g in range(n):
            locals_ = model.states[g][0]
            per_slot = []
            for i in self.idxs:
                opts = amas.agents[i].choices_at(locals_[i])
                if opts:
                    per_slot.append((i, tuple(opts)))
            self.choices.append(tuple(per_slot))
            evs = []
            for e, succ in model.trans[g].items():
                if e == EPSILON:
                    evs.append((succ, True, ()))
                    continue
                req = tuple(i for i in amas.owners[e] if i in self.slot_of)
                evs.append((succ, False, tuple((i, e) for i in req)))
            self.events.append(evs)

    def state_ok(self, g: int, zmask: int) -> bool:
        """Whether some coalition choice vector at g admits a nonempty set
        of events whose successors all lie in zmask, counting epsilon only
        when no real event is admitted."""
        evs = self.events[g]
        slots = self.choices[g]
        for picks in itertools.product(*(opts for _, opts in slots)):
            chosen = {i: ch for (i, _), ch in zip(slots, picks)}
            real = []
            eps_succ = None
            for succ, is_eps, req in evs:
                if is_eps:
                    eps_succ = succ
                    continue
                if all(e in chosen[i] for i, e in req):
                    real.append(succ)
            if real:
                if all(zmask >> s & 1 for s in real):
                    return True
            elif eps_succ is not None and zmask >> eps_succ & 1:
                return True
        return False


def pre_perfect(model: Model, agents, zmask: int) -> int:
    """States from which the coalition can force the next state into zmask
    when each member may pick its choice per state (no uniformity)."""
    idxs = _as_indices(model, agents)
    step = _PerfectStep(model, idxs)
    out = 0
    for g in range(len(model)):
        if step.state_ok(g, zmask):
            out |= 1 << g
    return out


def _as_indices(model: Model, agents):
    if all(isinstance(a, int) for a in agents):
        return tuple(agents)
    return coalition_indices(model, agents)


def _predecessors(model: Model):
    preds = [[] for _ in range(len(model))]
    for g in range(len(model)):
        for succ in model.trans[g].values():
            if succ != g:
                preds[succ].append(g)
    return preds


def _tick(deadline, counter):
    counter += 1
    if deadline is not None and counter % 1024 == 0:
        if time.monotonic() > deadline:
            raise DeadlineExceeded("approximation fixpoint")
    return counter


def _mu_perfect(model, step, preds, seeds_mask, gate_mask=None, deadline=None):
    """Least fixpoint Z = seeds ∪ (gate ∩ pre(Z)) by worklist over
    predecessors.  gate_mask=None means no gate (plain eventually)."""
    z = seeds_mask
    iterations = 0
    ticks = 0
    queue = deque(mask_to_states(seeds_mask))
    in_queue = set(queue)
    while queue:
        ticks = _tick(deadline, ticks)
        s = queue.popleft()
        in_queue.discard(s)
        for g in preds[s]:
            if z >> g & 1:
                continue
            if gate_mask is not None and not gate_mask >> g & 1:
                continue
            if step.state_ok(g, z):
                z |= 1 << g
                iterations += 1
                if g not in in_queue:
                    queue.append(g)
                    in_queue.add(g)
    return z, iterations


def _nu_perfect(model, step, preds, p_mask, deadline=None):
    """Greatest fixpoint Z = p ∩ pre(Z) by cascading removals."""
    z = p_mask
    iterations = 0
    ticks = 0
    queue = deque(mask_to_states(p_mask))
    in_queue = set(queue)
    while queue:
        ticks = _tick(deadline, ticks)
        g = queue.popleft()
        in_queue.discard(g)
        if not z >> g & 1:
            continue
        if step.state_ok(g, z):
            continue
        z &= ~(1 << g)
        iterations += 1
        for p in preds[g]:
            if z >> p & 1 and p not in in_queue:
                queue.append(p)
                in_queue.add(p)
    return z, iterations


# ---------------------------------------------------------------------------
# classwise machinery for the uniform lower bound

class _Component:
    __slots__ = ("states", "domain", "requirements", "events", "space", "asg")

    def __init__(self):
        self.states = []
        self.domain = []        # list of (agent, view) keys with options
        self.requirements = {}  # state -> list of (event, succ, is_eps, domain slots)
        self.events = {}
        self.space = 1
        self.asg = None         # committed choice assignment, once one certifies


class _UniformStep:
    """Precompiled classwise data.  States are grouped into connected
    components of the union of the coalition members' indistinguishability
    relations; a component is certified only as a whole, under one choice
    assignment per member view, so the certifying choices always assemble
    into a single uniform strategy."""

    def __init__(self, model: Model, idxs):
        amas = model.amas
        self.model = model
        self.idxs = tuple(idxs)
        n = len(model)

        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra

        for i in self.idxs:
            by_view = {}
            for g in range(n):
                by_view.setdefault(model.agent_view(g, i), []).append(g)
            for members in by_view.values():
                for g in members[1:]:
                    union(members[0], g)

        comp_of = {}
        self.components = []
        self.comp_index = [0] * n
        for g in range(n):
            r = find(g)
            c = comp_of.get(r)
            if c is None:
                c = len(self.components)
                comp_of[r] = c
                self.components.append(_Component())
            self.comp_index[g] = c
            self.components[c].states.append(g)

        for comp in self.components:
            slot_index = {}
            options = []
            for g in comp.states:
                locals_ = model.states[g][0]
                for i in self.idxs:
                    opts = amas.agents[i].choices_at(locals_[i])
                    if not opts:
                        continue
                    key = (i, model.agent_view(g, i))
                    if key not in slot_index:
                        slot_index[key] = len(options)
                        options.append(tuple(opts))
                        comp.domain.append(key)
                        comp.space *= len(opts)
            for g in comp.states:
                evs = []
                for e, succ in model.trans[g].items():
                    if e == EPSILON:
                        evs.append((e, succ, True, ()))
                        continue
                    slots = []
                    for i in amas.owners[e]:
                        key = (i, model.agent_view(g, i))
                        if key in slot_index:
                            slots.append(slot_index[key])
                    evs.append((e, succ, False, tuple(slots)))
                comp.requirements[g] = evs
            comp.events = {(i, v): opts
                           for (i, v), opts in zip(comp.domain, options)}

    def component_ok(self, comp: _Component, members, zmask: int,
                     gate_mask=None) -> bool:
        """Whether one choice assignment over the component's member views
        lets every state in `members` take a step that stays inside zmask.
        Epsilon counts as a successor like any other.  gate_mask restricts
        which states may serve as intermediate steps (the until payload)."""
        if not members:
            return True
        if comp.space > ASSIGNMENT_CAP:
            return False
        if gate_mask is not None:
            for g in members:
                if not gate_mask >> g & 1:
                    return False
        option_lists = [comp.events[key] for key in comp.domain]
        for picks in itertools.product(*option_lists):
            ok = True
            for g in members:
                admitted = 0
                inside = True
                for e, succ, is_eps, slots in comp.requirements[g]:
                    if not is_eps and any(e not in picks[s] for s in slots):
                        continue
                    admitted += 1
                    if not zmask >> succ & 1:
                        inside = False
                        break
                if not admitted or not inside:
                    ok = False
                    break
            if ok:
                return True
        return False


def pre_uniform(model: Model, agents, zmask: int) -> int:
    """States whose whole confusion component can uniformly step into zmask.

    Stronger than pre_perfect: one choice per member view must work for
    every state of the component at once, and the epsilon self-loop, where
    present, must land in zmask like any other successor."""
    idxs = _as_indices(model, agents)
    step = _UniformStep(model, idxs)
    out = 0
    for comp in step.components:
        if step.component_ok(comp, comp.states, zmask):
            out |= states_to_mask(comp.states)
    return out


def _state_step_ok(comp, g, picks, target_mask) -> bool:
    """Whether state g, under the component assignment `picks`, admits at
    least one event and every admitted successor lies in target_mask.  The
    epsilon self-loop counts as a successor like any other."""
    admitted = False
    for e, succ, is_eps, slots in comp.requirements[g]:
        if not is_eps and any(e not in picks[s] for s in slots):
            continue
        admitted = True
        if not target_mask >> succ & 1:
            return False
    return admitted


def _assignments(comp):
    if comp.asg is not None:
        return (comp.asg,)
    if comp.space > ASSIGNMENT_CAP:
        return ()
    return itertools.product(*(comp.events[key] for key in comp.domain))


def _inner_mu(comp, picks, candidates, z, gate_mask):
    """Largest subset of `candidates` that provably reaches z under one
    fixed assignment: states join in rounds, each round stepping only into
    z or into previous rounds, so plays strictly descend toward z."""
    won = 0
    while True:
        base = z | won
        added = 0
        for g in candidates:
            if (won | added) >> g & 1:
                continue
            if _state_step_ok(comp, g, picks, base):
                added |= 1 << g
        if not added:
            return won
        won |= added


def _inner_nu(comp, picks, members, members_mask, z):
    """Largest subset of the component's share of z that one fixed
    assignment keeps inside z forever: failing states are shed until the
    remainder only steps into survivors or out into the rest of z."""
    w = members_mask
    outside = z & ~members_mask
    changed = True
    while changed:
        changed = False
        target = outside | w
        for g in members:
            if w >> g & 1 and not _state_step_ok(comp, g, picks, target):
                w &= ~(1 << g)
                changed = True
    return w


def _mu_uniform(model, step, preds, seeds_mask, gate_mask=None, deadline=None):
    """Least fixpoint of the uniform reachability lower bound.

    Each component commits to the first assignment that certifies any of
    its states, so every certified state across all iterations is backed
    by the same classwise-constant choices."""
    z = seeds_mask
    iterations = 0
    ticks = 0
    queue = deque(range(len(step.components)))
    in_queue = set(queue)
    while queue:
        ticks = _tick(deadline, ticks)
        c = queue.popleft()
        in_queue.discard(c)
        comp = step.components[c]
        candidates = [g for g in comp.states
                      if not z >> g & 1
                      and (gate_mask is None or gate_mask >> g & 1)]
        if not candidates:
            continue
        best = 0
        best_picks = None
        for picks in _assignments(comp):
            won = _inner_mu(comp, picks, candidates, z, gate_mask)
            if won.bit_count() > best.bit_count():
                best, best_picks = won, picks
        if not best:
            continue
        if comp.asg is None:
            comp.asg = best_picks
        z |= best
        iterations += 1
        touched = set()
        for g in mask_to_states(best):
            for p in preds[g]:
                touched.add(step.comp_index[p])
        for c2 in touched:
            if c2 not in in_queue:
                queue.append(c2)
                in_queue.add(c2)
    return z, iterations


def _nu_uniform(model, step, preds, p_mask, deadline=None):
    """Greatest fixpoint of the uniform invariance lower bound, with the
    same one-assignment-per-component discipline as _mu_uniform."""
    z = p_mask
    iterations = 0
    ticks = 0
    queue = deque(range(len(step.components)))
    in_queue = set(queue)
    while queue:
        ticks = _tick(deadline, ticks)
        c = queue.popleft()
        in_queue.discard(c)
        comp = step.components[c]
        members = [g for g in comp.states if z >> g & 1]
        if not members:
            continue
        members_mask = states_to_mask(members)
        best = 0
        best_picks = None
        for picks in _assignments(comp):
            w = _inner_nu(comp, picks, members, members_mask, z)
            if w.bit_count() > best.bit_count():
                best, best_picks = w, picks
        if best and comp.asg is None:
            comp.asg = best_picks
        dropped = members_mask & ~best
        if not dropped:
            continue
        z &= ~dropped
        iterations += 1
        touched = set()
        for g in mask_to_states(dropped):
            for p in preds[g]:
                touched.add(step.comp_index[p])
        for c2 in touched:
            if c2 not in in_queue:
                queue.append(c2)
                in_queue.add(c2)
    return z, iterations


# ---------------------------------------------------------------------------
# the three-valued verifier

def approximate_verify(model: Model, formula, mode: str = "objective",
                       deadline: Optional[float] = None) -> TriVerdict:
    """Bracket a coalition formula between the uniform lower bound and the
    perfect-information upper bound and read the verdict off the roots.

    deadline is a time.monotonic() value; crossing it raises DeadlineExceeded.
    """
    validate_formula(formula)
    if not isinstance(formula, Coalition):
        raise FormulaError(
            "approximation needs a coalition formula at the top level")
    if mode not in ("objective", "subjective"):
        raise ValueError(f"unknown mode {mode!r}")
    if deadline is not None and time.monotonic() > deadline:
        raise DeadlineExceeded("approximation fixpoint")
    kind, p, q = path_spec(formula.path)

    ctx = _SatContext(model, mode, "std", 1, None)
    p_mask = states_to_mask(ctx.sat(p))
    q_mask = states_to_mask(ctx.sat(q)) if q is not None else None

    idxs = coalition_indices(model, formula.agents)
    preds = _predecessors(model)
    perfect = _PerfectStep(model, idxs)
    uniform = _UniformStep(model, idxs)

    if kind == "F":
        upper, it_u = _mu_perfect(model, perfect, preds, p_mask, deadline=deadline)
        lower, it_l = _mu_uniform(model, uniform, preds, p_mask, deadline=deadline)
    elif kind == "G":
        upper, it_u = _nu_perfect(model, perfect, preds, p_mask, deadline=deadline)
        lower, it_l = _nu_uniform(model, uniform, preds, p_mask, deadline=deadline)
    elif kind == "U":
        upper, it_u = _mu_perfect(model, perfect, preds, q_mask,
                                  gate_mask=p_mask, deadline=deadline)
        lower, it_l = _mu_uniform(model, uniform, preds, q_mask,
                                  gate_mask=p_mask, deadline=deadline)
    else:
        raise FormulaError(f"unsupported path objective {kind!r}")

    roots = root_set(model, idxs, mode)
    value: Optional[bool]
    if any(not upper >> g & 1 for g in roots):
        value = False
    elif all(lower >> g & 1 for g in roots):
        value = True
    else:
        value = None
    return TriVerdict(value=value, lower=lower, upper=upper,
                      iterations=max(it_u, it_l))
