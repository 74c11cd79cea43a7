"""Asynchronous multi-agent models and their explicit global state graphs.

An agent is a local automaton with a repertoire of choices (sets of events it
can select), guarded transitions, and a slice of the shared variable store it
owns.  Agents synchronize on events owned by several of them; a global
transition fires an event when every owner can take it locally.  States where
some joint selection of choices enables nothing receive an explicit epsilon
self-loop so that every maximal path is infinite.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Optional

EPSILON = "ε"


class ModelError(Exception):
    """Malformed agent system or inconsistent transition data."""


class StateLimitExceeded(ModelError):
    """State-space exploration hit the configured cap."""


class DeadlineExceeded(Exception):
    """Cooperative wall-clock timeout triggered during a long build or search."""


# ---------------------------------------------------------------------------
# guards and updates

class Guard:
    """Base class for precondition expressions over the variable store."""

    __slots__ = ()


@dataclass(frozen=True)
class GLit(Guard):
    value: bool


@dataclass(frozen=True)
class GCmp(Guard):
    var: str
    op: str  # one of == != < <= > >=
    value: object  # int or bool literal


@dataclass(frozen=True)
class GNot(Guard):
    sub: Guard


@dataclass(frozen=True)
class GAnd(Guard):
    left: Guard
    right: Guard


@dataclass(frozen=True)
class GOr(Guard):
    left: Guard
    right: Guard


def guard_vars(g: Guard) -> frozenset:
    if isinstance(g, GCmp):
        return frozenset((g.var,))
    if isinstance(g, GNot):
        return guard_vars(g.sub)
    if isinstance(g, (GAnd, GOr)):
        return guard_vars(g.left) | guard_vars(g.right)
    return frozenset()


_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _eval_guard_struct(g: Guard, lookup) -> bool:
    if isinstance(g, GLit):
        return g.value
    if isinstance(g, GCmp):
        return _CMP[g.op](lookup(g.var), g.value)
    if isinstance(g, GNot):
        return not _eval_guard_struct(g.sub, lookup)
    if isinstance(g, GAnd):
        return _eval_guard_struct(g.left, lookup) and _eval_guard_struct(g.right, lookup)
    if isinstance(g, GOr):
        return _eval_guard_struct(g.left, lookup) or _eval_guard_struct(g.right, lookup)
    raise ModelError(f"unknown guard node {g!r}")


@dataclass(frozen=True)
class UpdateValue:
    """Right-hand side of an assignment: a literal, or ?var (copy the
    pre-transition value of another variable)."""

    kind: str  # "lit" or "read"
    value: object = None
    var: str = ""

    @staticmethod
    def lit(v) -> "UpdateValue":
        return UpdateValue("lit", value=v)

    @staticmethod
    def read(var: str) -> "UpdateValue":
        return UpdateValue("read", var=var)


@dataclass(frozen=True)
class LocalTransition:
    event: str
    source: str
    target: str
    guard: Optional[Guard] = None
    updates: tuple = ()  # tuple of (var_name, UpdateValue)


# ---------------------------------------------------------------------------
# agents and systems

class LocalAgent:
    """One agent template instance: automaton, repertoire, owned variables.

    The repertoire maps each local state to a tuple of choices; a choice is a
    frozenset of events.  An event has a local transition from a state iff it
    belongs to some choice at that state.
    """

    def __init__(self, name, init_state, transitions, repertoire, variables=()):
        self.name = name
        self.init_state = init_state
        self.transitions = {}
        states = {init_state}
        events = set()
        for t in transitions:
            key = (t.source, t.event)
            if key in self.transitions:
                raise ModelError(
                    f"agent {name}: duplicate transition for event {t.event!r} at state {t.source!r}")
            self.transitions[key] = t
            states.add(t.source)
            states.add(t.target)
            events.add(t.event)
        self.states = tuple(sorted(states))
        self.events = tuple(sorted(events))
        self.repertoire = {l: tuple(choices) for l, choices in repertoire.items()}
        self.variables = frozenset(variables)
        self._check_repertoire()

    def _check_repertoire(self):
        if EPSILON in self.events:
            raise ModelError(f"agent {self.name}: {EPSILON} is a reserved event name")
        for l in self.states:
            choices = self.repertoire.get(l, ())
            in_choices = set()
            for c in choices:
                if not c:
                    raise ModelError(f"agent {self.name}: empty choice at state {l!r}")
                in_choices |= c
            outgoing = {e for (s, e) in self.transitions if s == l}
            if in_choices != outgoing:
                raise ModelError(
                    f"agent {self.name}: repertoire at {l!r} covers {sorted(in_choices)} "
                    f"but transitions define {sorted(outgoing)}")

    def choices_at(self, local_state):
        return self.repertoire.get(local_state, ())

    def available(self, local_state):
        """Events with a local transition from this state, guard-agnostic."""
        return tuple(e for (s, e) in self.transitions if s == local_state)


class Amas:
    """A closed system of agents with a shared (but ownership-partitioned)
    variable store."""

    def __init__(self, agents, persistent=None, reduction_vars=(), all_persistent=False):
        self.agents = tuple(agents)
        if len({a.name for a in self.agents}) != len(self.agents):
            raise ModelError("duplicate agent names")
        self.name_index = {a.name: i for i, a in enumerate(self.agents)}
        owners: dict = {}
        for i, a in enumerate(self.agents):
            for e in a.events:
                owners.setdefault(e, []).append(i)
        self.owners = {e: tuple(ix) for e, ix in owners.items()}
        seen_vars: dict = {}
        for a in self.agents:
            for v in a.variables:
                if v in seen_vars and seen_vars[v] != a.name:
                    raise ModelError(f"variable {v!r} claimed by {seen_vars[v]} and {a.name}")
                seen_vars[v] = a.name
        extra = set()
        for a in self.agents:
            for t in a.transitions.values():
                for var, uv in t.updates:
                    extra.add(var)
                    if uv.kind == "read":
                        extra.add(uv.var)
                if t.guard is not None:
                    extra |= guard_vars(t.guard)
        self.all_vars = tuple(sorted(set(seen_vars) | extra))
        self.var_index = {v: i for i, v in enumerate(self.all_vars)}
        self.var_owner = {}
        for v in self.all_vars:
            owner = seen_vars.get(v)
            if owner is None:
                # fall back to longest agent-name prefix, if any
                best = None
                for a in self.agents:
                    if v.startswith(a.name + "_"):
                        if best is None or len(a.name) > len(best):
                            best = a.name
                owner = best
            self.var_owner[v] = owner
        if all_persistent:
            self.persistent = frozenset(self.all_vars)
        else:
            self.persistent = frozenset(persistent or ())
        unknown = self.persistent - set(self.all_vars)
        if unknown:
            raise ModelError(f"persistent names unknown: {sorted(unknown)}")
        self.reduction_vars = tuple(reduction_vars)
        self._own_positions = {}
        for i, a in enumerate(self.agents):
            pos = tuple(self.var_index[v] for v in self.all_vars
                        if self.var_owner[v] == a.name)
            self._own_positions[i] = pos
        self._compile()

    def agent_vars(self, i) -> tuple:
        """Store positions owned by agent i (sorted by variable name)."""
        return self._own_positions[i]

    def _compile(self):
        """Precompute per (agent, local state) the executable transition data."""
        vi = self.var_index
        self.avail = {}
        self.avail_map = {}
        self._keep = tuple(v in self.persistent for v in self.all_vars)
        self._store_stable = all(self._keep)
        for i, a in enumerate(self.agents):
            for l in a.states:
                entries = []
                for e in a.available(l):
                    t = a.transitions[(l, e)]
                    gfn = self._compile_guard(t.guard, vi)
                    ups = tuple(
                        (vi[var], uv.kind == "read", vi[uv.var] if uv.kind == "read" else uv.value)
                        for var, uv in t.updates)
                    entries.append((e, gfn, t.target, ups))
                entries.sort(key=lambda x: x[0])
                self.avail[(i, l)] = tuple(entries)
                self.avail_map[(i, l)] = {e: (gfn, tgt, ups)
                                          for e, gfn, tgt, ups in entries}

    @staticmethod
    def _compile_guard(g, vi):
        if g is None:
            return None
        read = tuple(vi[v] for v in sorted(guard_vars(g)))

        def fn(store, _g=g, _read=read, _vi=vi):
            for p in _read:
                if store[p] is None:
                    return False
            return _eval_guard_struct(_g, lambda v: store[_vi[v]])

        return fn

    def initial_state(self):
        locals_ = tuple(a.init_state for a in self.agents)
        store = (None,) * len(self.all_vars)
        return (locals_, store)

    def shared_events(self):
        return tuple(e for e, own in self.owners.items() if len(own) > 1)


# ---------------------------------------------------------------------------
# successor computation (shared by the full builder and the reducing builder)

def successors_of(amas: Amas, state) -> list:
    """All enabled global transitions from an explicit state, sorted by event.

    Returns a list of (event, next_state).  A shared event is enabled iff
    every owner has a guard-true local transition for it; its updates from all
    owners are merged, and conflicting writes are an error.
    """
    locals_, store = state
    out = []
    seen = set()
    keep = amas._keep
    for i in range(len(amas.agents)):
        for e, _gfn, _tgt, _ups in amas.avail[(i, locals_[i])]:
            if e in seen:
                continue
            seen.add(e)
            own = amas.owners[e]
            new_locals = list(locals_)
            writes = {}
            ok = True
            for j in own:
                entry = amas.avail_map[(j, locals_[j])].get(e)
                if entry is None:
                    ok = False
                    break
                gfn2, tgt2, ups2 = entry
                if gfn2 is not None and not gfn2(store):
                    ok = False
                    break
                new_locals[j] = tgt2
                for pos, is_read, payload in ups2:
                    val = store[payload] if is_read else payload
                    if pos in writes and writes[pos] != val:
                        raise ModelError(
                            f"event {e!r}: conflicting writes to "
                            f"{amas.all_vars[pos]!r} ({writes[pos]!r} vs {val!r})")
                    writes[pos] = val
            if not ok:
                continue
            if not writes and amas._store_stable:
                new_store = store
            else:
                new_store = tuple(
                    writes[p] if p in writes else (store[p] if keep[p] else None)
                    for p in range(len(store)))
            out.append((e, (tuple(new_locals), new_store)))
    out.sort(key=lambda x: x[0])
    return out


def state_has_epsilon(amas: Amas, state, enabled_events=None) -> bool:
    """True iff some joint selection of choices enables no event at all.

    Only owners of currently enabled events matter: other agents' selections
    cannot unblock anything.
    """
    locals_, _store = state
    if enabled_events is None:
        enabled_events = [e for e, _s in successors_of(amas, state)]
    enabled = frozenset(e for e in enabled_events if e != EPSILON)
    if not enabled:
        return True
    owner_of = amas.owners
    relevant = sorted({i for e in enabled for i in owner_of[e]})
    # restrict every choice to the enabled events it admits
    admits = []
    for i in relevant:
        choices = amas.agents[i].choices_at(locals_[i])
        admits.append(tuple(frozenset(e for e in c if e in enabled) for c in choices))

    # fast path out: some agent enables a solely-owned event under every choice
    for k, i in enumerate(relevant):
        if admits[k] and all(
                any(len(owner_of[e]) == 1 for e in adm) for adm in admits[k]):
            return False
    # fast path in: every relevant agent can pick a fully blind choice
    if all(any(not adm for adm in adms) for adms in admits):
        return True

    pos = {i: k for k, i in enumerate(relevant)}
    owner_ks = {e: frozenset(pos[i] for i in owner_of[e]) for e in enabled}
    last_owner = {e: max(ks) for e, ks in owner_ks.items()}
    n = len(relevant)

    def search(k, alive):
        # alive: enabled events not yet blocked by a processed owner
        if not alive:
            return True
        if k == n:
            return False
        for adm in admits[k]:
            nxt = set()
            fail = False
            for e in alive:
                if e in adm or k not in owner_ks[e]:
                    if last_owner[e] == k:
                        fail = True  # all owners admitted it: enabled after all
                        break
                    nxt.add(e)
            if not fail and search(k + 1, nxt):
                return True
        return False

    return search(0, set(enabled))


# ---------------------------------------------------------------------------
# explicit models

@dataclass
class BuildConfig:
    max_states: int = 2_000_000
    deadline: Optional[float] = None  # time.monotonic() value
    check_every: int = 2048


class Model:
    """Explicit global state graph.  States are (locals, store) pairs interned
    to integer ids; transitions map event names to successor ids."""

    def __init__(self, amas: Amas, states, ids, initial, trans, eps, undeadlocked):
        self.amas = amas
        self.states = states
        self.ids = ids
        self.initial = tuple(initial)
        self.trans = trans
        self.eps = eps
        self.undeadlocked = undeadlocked
        self._views = {}

    # -- basic accessors

    def __len__(self):
        return len(self.states)

    @property
    def num_transitions(self):
        return sum(len(t) for t in self.trans)

    @property
    def epsilon_states(self):
        return [g for g, f in enumerate(self.eps) if f]

    def enabled(self, g) -> tuple:
        """Events with a transition from g, epsilon included where present."""
        return tuple(self.trans[g].keys())

    def succ(self, g, event):
        return self.trans[g][event]

    def store_value(self, g, var):
        return self.states[g][1][self.amas.var_index[var]]

    def agent_view(self, g, i):
        """Agent i's observation at g: its local state plus its own variables."""
        cache = self._views.get(i)
        if cache is None:
            pos = self.amas.agent_vars(i)
            cache = []
            for locals_, store in self.states:
                cache.append((locals_[i],) + tuple(store[p] for p in pos))
            self._views[i] = cache
        return cache[g]

    def indistinguishable(self, g, g2, J) -> bool:
        """Whether two states agree on every agent in J (names or indices)."""
        for j in J:
            i = j if isinstance(j, int) else self.amas.name_index[j]
            if self.agent_view(g, i) != self.agent_view(g2, i):
                return False
        return True

    def choice_map_of(self, choice_vector):
        """Validate a dict agent_name -> frozenset(choice) against repertoires."""
        out = {}
        for name, choice in choice_vector.items():
            i = self.amas.name_index[name]
            out[i] = frozenset(choice)
        return out

    def enabled_by_choices(self, g, choice_vector) -> tuple:
        """Events enabled at g and admitted by the given agents' choices.

        choice_vector maps agent name (or index) to the choice (set of events)
        that agent selected; agents absent from the vector are unconstrained.
        The epsilon loop, where present, is always admitted.
        """
        amas = self.amas
        sel = {}
        for key, choice in choice_vector.items():
            i = key if isinstance(key, int) else amas.name_index[key]
            fs = frozenset(choice)
            if fs not in amas.agents[i].choices_at(self.states[g][0][i]):
                raise ModelError(
                    f"agent {amas.agents[i].name}: {sorted(fs)} is not a choice at "
                    f"state {self.states[g][0][i]!r}")
            sel[i] = fs
        out = []
        for e in self.trans[g]:
            if e == EPSILON:
                out.append(e)
                continue
            if all(e in sel[i] for i in amas.owners[e] if i in sel):
                out.append(e)
        return tuple(out)

    # -- serialization

    def dump(self, fp):
        amas = self.amas
        doc = {
            "agents": [
                {
                    "name": a.name,
                    "init": a.init_state,
                    "states": list(a.states),
                    "variables": sorted(a.variables),
                }
                for a in amas.agents
            ],
            "variables": list(amas.all_vars),
            "persistent": sorted(amas.persistent),
            "states": [
                {"id": g, "locals": list(locals_), "store": [_enc(v) for v in store]}
                for g, (locals_, store) in enumerate(self.states)
            ],
            "transitions": [
                {"from": g, "event": e, "to": s}
                for g in range(len(self.states))
                for e, s in sorted(self.trans[g].items())
                if e != EPSILON
            ],
            "initial": list(self.initial),
            "epsilon_states": self.epsilon_states,
            "undeadlocked": self.undeadlocked,
        }
        json.dump(doc, fp, ensure_ascii=False, indent=1)

    @staticmethod
    def load(fp, amas: Amas) -> "Model":
        """Rebuild a dumped model; the owning Amas supplies semantics."""
        doc = json.load(fp)
        states = [
            (tuple(s["locals"]), tuple(_dec(v) for v in s["store"]))
            for s in sorted(doc["states"], key=lambda s: s["id"])
        ]
        ids = {st: g for g, st in enumerate(states)}
        trans = [dict() for _ in states]
        for t in doc["transitions"]:
            trans[t["from"]][t["event"]] = t["to"]
        eps = [False] * len(states)
        for g in doc["epsilon_states"]:
            eps[g] = True
            trans[g][EPSILON] = g
        return Model(amas, states, ids, tuple(doc["initial"]), trans, eps,
                     undeadlocked=doc.get("undeadlocked", True))


def _enc(v):
    if v is None:
        return None
    if isinstance(v, bool):
        return v
    return int(v)


def _dec(v):
    return v


def _explore(amas: Amas, initial, config: BuildConfig, add_epsilon: bool) -> Model:
    if EPSILON in amas.owners:
        raise ModelError(f"{EPSILON} is reserved and cannot appear in any alphabet")
    if initial is None:
        initial = [amas.initial_state()]
    cfg = config or BuildConfig()
    ids = {}
    states = []
    trans = []
    eps = []
    work = []
    for st in initial:
        if st not in ids:
            ids[st] = len(states)
            states.append(st)
            trans.append(None)
            eps.append(False)
            work.append(ids[st])
    qi = 0
    while qi < len(work):
        g = work[qi]
        qi += 1
        if cfg.deadline is not None and qi % cfg.check_every == 0:
            if time.monotonic() > cfg.deadline:
                raise DeadlineExceeded("model construction")
        succs = successors_of(amas, states[g])
        row = {}
        for e, st2 in succs:
            s2 = ids.get(st2)
            if s2 is None:
                if len(states) >= cfg.max_states:
                    raise StateLimitExceeded(
                        f"more than {cfg.max_states} reachable states")
                s2 = len(states)
                ids[st2] = s2
                states.append(st2)
                trans.append(None)
                eps.append(False)
                work.append(s2)
            row[e] = s2
        if add_epsilon and state_has_epsilon(amas, states[g], list(row.keys())):
            eps[g] = True
            row[EPSILON] = g
        trans[g] = row
    initial_ids = tuple(ids[st] for st in initial)
    return Model(amas, states, ids, initial_ids, trans, eps, undeadlocked=add_epsilon)


def build_iis(amas: Amas, initial=None, config: BuildConfig | None = None) -> Model:
    """Interleave the agents into the plain global model (no epsilon loops)."""
    return _explore(amas, initial, config, add_epsilon=False)


def build_undeadlocked(amas: Amas, initial=None, config: BuildConfig | None = None) -> Model:
    """Global model with epsilon self-loops at states where some joint choice
    selection would otherwise enable nothing."""
    return _explore(amas, initial, config, add_epsilon=True)


def value_eq(val, literal) -> bool:
    """Atom comparison, keeping bool and int apart (True is not 1 here)."""
    if val is None:
        return False
    if isinstance(literal, bool) or isinstance(val, bool):
        return val is literal
    return val == literal
