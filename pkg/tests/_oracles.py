"""Independent reference implementations used to pin expected test values.

Everything here recomputes semantics from first principles with deliberately
different algorithms than the package: guard evaluation by AST walking,
enabledness by direct per-owner lookup, blocking-selection detection by full
choice products, path objectives by enumerating walks to their first repeated
state, and a literal hand-coded product for the small voting benchmark.
"""

from itertools import product

from amascheck.core import EPSILON

_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_guard(guard, read):
    """Evaluate a guard comparison; any unset operand makes it false."""
    if guard is None:
        return True
    value = read(guard.var)
    if value is None:
        return False
    return _CMP[guard.op](value, guard.value)


def brute_enabled(amas, state):
    """All enabled global transitions of `state`, recomputed directly.

    For every event in the system, checks each owner for a guard-true
    transition out of its current local state, merges the owners' updates,
    and applies the frame rule to untouched variables.  Returns a sorted
    list of (event, successor) pairs.
    """
    locals_, store = state
    index = amas.var_index

    def read(var):
        return store[index[var]]

    out = []
    for event in sorted(amas.owners):
        owners = amas.owners[event]
        moved = list(locals_)
        writes = {}
        ok = True
        for i in owners:
            tr = amas.agents[i].transitions.get((locals_[i], event))
            if tr is None or not eval_guard(tr.guard, read):
                ok = False
                break
            moved[i] = tr.target
            for var, uv in tr.updates:
                value = read(uv.var) if uv.kind == "read" else uv.value
                slot = index[var]
                if slot in writes and writes[slot] != value:
                    ok = False
                    break
                writes[slot] = value
            if not ok:
                break
        if not ok:
            continue
        next_store = []
        for slot, old in enumerate(store):
            if slot in writes:
                next_store.append(writes[slot])
            elif amas.all_vars[slot] in amas.persistent:
                next_store.append(old)
            else:
                next_store.append(None)
        out.append((event, (tuple(moved), tuple(next_store))))
    return out


def brute_blocked(amas, state):
    """True if some full selection of one choice per agent admits no event.

    This is the exhaustive definition of when the undeadlocked model adds a
    silent self-loop.  Cost is the product of all repertoire sizes, so keep
    it to systems with a handful of agents.
    """
    locals_, _ = state
    enabled = [e for e, _ in brute_enabled(amas, state)]
    if not enabled:
        return True
    menus = []
    for i, agent in enumerate(amas.agents):
        choices = agent.choices_at(locals_[i])
        menus.append(choices if choices else (frozenset(),))
    for selection in product(*menus):
        admitted = False
        for event in enabled:
            if all(event in selection[i] for i in amas.owners[event]):
                admitted = True
                break
        if not admitted:
            return True
    return False


def _walk_ok(walk, kind, p_set, q_set):
    """Check one ultimately periodic path, given as a walk whose last entry
    repeats an earlier one.  Positions past the repeat revisit walk states,
    so scanning the walk itself is complete for F, G, and U."""
    body = walk[:-1]
    if kind == "G":
        return all(s in p_set for s in body)
    if kind == "F":
        return any(s in p_set for s in body)
    if kind == "U":
        for s in body:
            if s in q_set:
                return True
            if s not in p_set:
                return False
        return False
    raise ValueError(f"unknown objective kind {kind!r}")


def walks_satisfy(succ, roots, kind, p_set, q_set=None):
    """Whether every infinite path from every root meets the objective.

    Enumerates all walks up to their first repeated state; a finite total
    graph violates F/G/U only if some such lasso does.  Exponential in the
    graph, so callers should stay below roughly a dozen states.
    """

    def explore(walk, on_walk):
        here = walk[-1]
        nexts = succ[here]
        if not nexts:
            raise ValueError("walk oracle requires a total graph")
        for t in nexts:
            walk.append(t)
            if t in on_walk:
                good = _walk_ok(walk, kind, p_set, q_set)
            else:
                on_walk.add(t)
                good = explore(walk, on_walk)
                on_walk.discard(t)
            walk.pop()
            if not good:
                return False
        return True

    return all(explore([r], {r}) for r in roots)


def model_succ_lists(model, variant="std"):
    """Successor lists of a built model as plain id lists, replaying the
    silent-loop visibility rule for the chosen strategy flavor."""
    succ = []
    for sid, row in enumerate(model.trans):
        outs = []
        for event, target in row.items():
            if event == EPSILON and variant == "react" and len(row) > 1:
                continue
            outs.append(target)
        succ.append(sorted(set(outs)))
    return succ


def asv_hand_product():
    """The one-voter two-candidate benchmark product, built from literal
    tables.  Returns (states, transitions, blocked_states, can_force_punish)
    where states are (voter_local, coercer_local, frozenset of true vars).

    Derivation: the voter picks a candidate (2 branches), then shows or
    withholds the receipt (2 branches each, synchronized with the coercer's
    receive step), then the coercer punishes or not (2 branches each), and
    the pair parks in a self-loop.  That is 1 + 2 + 4 + 8 = 15 states and
    2 + 4 + 8 + 8 = 22 transitions, none of them blocked.
    """
    voter = {
        ("q0", "vote_1_1"): ("q1", ("voted_1_1",)),
        ("q0", "vote_1_2"): ("q2", ("voted_1_2",)),
        ("q1", "gv_1_1"): ("q1_g", ()),
        ("q1", "ng_1"): ("q1_n", ()),
        ("q2", "gv_1_2"): ("q2_g", ()),
        ("q2", "ng_1"): ("q2_n", ()),
        ("q1_g", "pun_1"): ("q1_g", ()),
        ("q1_g", "npun_1"): ("q1_g", ()),
        ("q1_n", "pun_1"): ("q1_n", ()),
        ("q1_n", "npun_1"): ("q1_n", ()),
        ("q2_g", "pun_1"): ("q2_g", ()),
        ("q2_g", "npun_1"): ("q2_g", ()),
        ("q2_n", "pun_1"): ("q2_n", ()),
        ("q2_n", "npun_1"): ("q2_n", ()),
    }
    coercer = {
        ("r1", "gv_1_1"): ("g1", ()),
        ("r1", "gv_1_2"): ("n1", ()),
        ("r1", "ng_1"): ("n1", ()),
        ("g1", "pun_1"): ("p1", ("punished_1",)),
        ("g1", "npun_1"): ("np1", ()),
        ("n1", "pun_1"): ("p1", ("punished_1",)),
        ("n1", "npun_1"): ("np1", ()),
        ("p1", "pun_1"): ("p1", ("punished_1",)),
        ("np1", "npun_1"): ("np1", ()),
    }
    shared = {"gv_1_1", "gv_1_2", "ng_1", "pun_1", "npun_1"}
    solo = {"vote_1_1", "vote_1_2"}

    def step(state):
        vl, cl, true_vars = state
        out = []
        for event in sorted(shared | solo):
            v_tr = voter.get((vl, event))
            if v_tr is None:
                continue
            if event in shared:
                c_tr = coercer.get((cl, event))
                if c_tr is None:
                    continue
            else:
                c_tr = (cl, ())
            nxt = (v_tr[0], c_tr[0],
                   true_vars | frozenset(v_tr[1]) | frozenset(c_tr[1]))
            out.append((event, nxt))
        return out

    init = ("q0", "r1", frozenset())
    states = [init]
    seen = {init}
    edges = []
    frontier = [init]
    while frontier:
        state = frontier.pop()
        for event, nxt in step(state):
            edges.append((state, event, nxt))
            if nxt not in seen:
                seen.add(nxt)
                states.append(nxt)
                frontier.append(nxt)

    # The coercer forces punishment from any state where it still gets to
    # decide: before the product parks in an unpunished self-loop.
    can_force = {s for s in states
                 if "punished_1" in s[2] or s[1] in ("r1", "g1", "n1")}
    return states, edges, set(), can_force


def var_owner_name(agent_names, declared, var):
    """Which agent observes a variable: its declaration, else the longest
    agent-name prefix before an underscore, else nobody."""
    if var in declared:
        return declared[var]
    best = None
    for name in agent_names:
        if var.startswith(name + "_") and (best is None
                                           or len(name) > len(best)):
            best = name
    return best


def view_of(model, agent_idx, state):
    """An agent's observation of a global state: its local state plus the
    values of the variables it owns, recomputed from name prefixes."""
    amas = model.amas
    names = [a.name for a in amas.agents]
    me = names[agent_idx]
    declared = {}
    for a in amas.agents:
        for v in a.variables:
            declared[v] = a.name
    locals_, store = state
    mine = []
    for slot, var in enumerate(amas.all_vars):
        if var_owner_name(names, declared, var) == me:
            mine.append((var, store[slot]))
    return (locals_[agent_idx], tuple(sorted(mine)))


def knowledge_states(model, agent_idx, fact_states):
    """States where the agent knows the fact: every state it cannot
    distinguish from the current one is a fact state."""
    classes = {}
    for sid, state in enumerate(model.states):
        classes.setdefault(view_of(model, agent_idx, state), []).append(sid)
    known = set()
    for members in classes.values():
        if all(sid in fact_states for sid in members):
            known.update(members)
    return known
