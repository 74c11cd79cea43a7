"""Formula validation, strategy semantics, and the exact verifier."""

import random
import time

import pytest

from amascheck.core import (
    EPSILON,
    Amas,
    BuildConfig,
    DeadlineExceeded,
    LocalAgent,
    LocalTransition,
    ModelError,
    StateLimitExceeded,
    UpdateValue,
    build_iis,
    build_undeadlocked,
)
from amascheck.logic import (
    And,
    Atom,
    Coalition,
    Const,
    Eventually,
    Always,
    FormulaError,
    Implies,
    Know,
    Not,
    Or,
    StrategySpaceError,
    Until,
    admitted_events,
    coalition_holds_per_state,
    eval_state_formula,
    formula_agents,
    formula_vars,
    holds_on_all_paths,
    outcome_graph,
    path_spec,
    root_set,
    strategy_views,
    subjective_roots,
    validate_formula,
    verify_exact,
)

from _oracles import knowledge_states, walks_satisfy
from _random_models import (
    random_amas,
    random_coalition_formula,
    strategy_space_size,
)


def _agent(name, init, transitions, repertoire, variables=()):
    return LocalAgent(name, init, tuple(transitions), repertoire, variables)


def _small_models(rng, count, max_states=200, **kw):
    out = []
    while len(out) < count:
        amas = random_amas(rng, **kw)
        try:
            model = build_undeadlocked(
                amas, config=BuildConfig(max_states=max_states))
        except (StateLimitExceeded, ModelError):
            continue
        out.append(model)
    return out


# -- validation of the supported fragment


P = Atom("A1_v", 1)
Q = Atom("A1_w", 2)


@pytest.mark.parametrize("formula", [
    P,
    Not(P),
    And(P, Or(Q, Const(True))),
    Know("A1", P),
    Know("A1", Know("A2", Not(P))),
    Coalition(("A1",), Eventually(P)),
    Coalition(("A1", "A2"), Always(Implies(P, Know("A2", Q)))),
    Coalition(("A1",), Until(P, Q)),
    Coalition((), Eventually(P)),
    Coalition(("A1",), Until(Const(False), P)),
])
def test_supported_formulas_validate(formula):
    validate_formula(formula)


@pytest.mark.parametrize("formula", [
    Eventually(P),
    Always(P),
    Until(P, Q),
    Coalition(("A1",), P),
    Coalition(("A1",), Eventually(Coalition(("A2",), Always(P)))),
    Coalition(("A1",), Eventually(Eventually(P))),
    Know("A1", Eventually(P)),
    Know("A1", Coalition(("A2",), Eventually(P))),
    Coalition(("A1",), Always(Coalition(("A1",), Eventually(P)))),
    Not(Eventually(P)),
])
def test_unsupported_formulas_rejected(formula):
    with pytest.raises(FormulaError):
        validate_formula(formula)


def test_path_spec_normalization():
    assert path_spec(Eventually(P)) == ("F", P, None)
    assert path_spec(Always(P)) == ("G", P, None)
    assert path_spec(Until(P, Q)) == ("U", P, Q)
    with pytest.raises(FormulaError):
        path_spec(P)


def test_formula_agents_and_vars():
    f = Coalition(("A1", "A2"),
                  Always(Implies(Atom("x_v", 1), Know("A3", Atom("y_w", 2)))))
    assert formula_agents(f) == {"A1", "A2", "A3"}
    assert formula_vars(f) == {"x_v", "y_w"}


# -- strategy bookkeeping


def test_strategy_views_cover_choiceful_views(asv_model):
    model = asv_model
    for idx, agent in enumerate(model.amas.agents):
        rows = strategy_views(model, idx)
        seen = {model.agent_view(g, idx) for g in range(len(model))}
        for view, choices in rows:
            assert view in seen
            assert choices == agent.choices_at(view[0])
            assert len(choices) >= 1
        uncovered = [v for v in seen
                     if agent.choices_at(v[0]) and v not in dict(rows)]
        assert uncovered == []


def _two_sided_coin():
    """Two agents co-owning two events; mismatched picks block everything."""
    a = _agent("A1", "s0",
               [LocalTransition("go1", "s0", "s1"),
                LocalTransition("go2", "s0", "s2")],
               {"s0": (frozenset({"go1"}), frozenset({"go2"}))})
    b = _agent("A2", "t0",
               [LocalTransition("go1", "t0", "t1"),
                LocalTransition("go2", "t0", "t2")],
               {"t0": (frozenset({"go1"}), frozenset({"go2"}))})
    return Amas((a, b), all_persistent=True)


def test_admitted_events_variant_rule():
    model = build_undeadlocked(_two_sided_coin())
    root = model.initial[0]
    assert model.eps[root]

    agree = {0: {model.agent_view(root, 0): frozenset({"go1"})},
             1: {model.agent_view(root, 1): frozenset({"go1"})}}
    assert admitted_events(model, root, agree, "std") == ["go1", EPSILON]
    assert admitted_events(model, root, agree, "react") == ["go1"]

    clash = {0: {model.agent_view(root, 0): frozenset({"go1"})},
             1: {model.agent_view(root, 1): frozenset({"go2"})}}
    assert admitted_events(model, root, clash, "std") == [EPSILON]
    assert admitted_events(model, root, clash, "react") == [EPSILON]

    free = {}
    assert admitted_events(model, root, free, "react") == ["go1", "go2"]


def test_outcome_graph_restricts_to_admitted():
    model = build_undeadlocked(_two_sided_coin())
    root = model.initial[0]
    agree = {0: {model.agent_view(root, 0): frozenset({"go1"})},
             1: {model.agent_view(root, 1): frozenset({"go1"})}}
    graph = outcome_graph(model, [root], agree, "react")
    assert set(graph) == {root, model.trans[root]["go1"]}
    events = [e for e, _ in graph[root]]
    assert events == ["go1"]


# -- path objectives against the walk-enumeration oracle


def test_holds_on_all_paths_matches_walk_oracle():
    rng = random.Random(20260819)
    cases = 0
    disagreements = []
    while cases < 300:
        n = rng.randint(2, 8)
        succ = [sorted({rng.randrange(n)
                        for _ in range(rng.randint(1, 2))}) for _ in range(n)]
        p = {g for g in range(n) if rng.random() < 0.5}
        q = {g for g in range(n) if rng.random() < 0.4}
        roots = [0]
        for kind in ("F", "G", "U"):
            got = holds_on_all_paths(succ, roots, kind, p.__contains__,
                                     q.__contains__ if kind == "U" else None)
            want = walks_satisfy(succ, roots, kind, p,
                                 q if kind == "U" else None)
            if got != want:
                disagreements.append((succ, kind, sorted(p), sorted(q)))
            cases += 1
    assert not disagreements


def test_path_objective_edge_cases():
    def has(*members):
        return frozenset(members).__contains__

    chain = [[1], [1]]
    assert holds_on_all_paths(chain, [0], "F", has(1))
    assert not holds_on_all_paths(chain, [0], "G", has(1))
    assert holds_on_all_paths(chain, [0], "G", has(0, 1))
    # target of an until counts at position zero, the hold side is not needed
    assert holds_on_all_paths(chain, [0], "U", has(), has(0))
    assert holds_on_all_paths(chain, [0], "U", has(0), has(1))
    assert not holds_on_all_paths(chain, [0], "U", has(), has(1))
    loop = [[0]]
    assert not holds_on_all_paths(loop, [0], "F", has())
    assert holds_on_all_paths(loop, [0], "G", has(0))


# -- epistemic operator against the view-class oracle


def test_know_matches_view_class_oracle():
    rng = random.Random(1618)
    for model in _small_models(rng, 12):
        amas = model.amas
        if not amas.all_vars:
            continue
        for idx, agent in enumerate(amas.agents):
            var = rng.choice(amas.all_vars)
            value = rng.choice([True, 1, 2])
            atom = Atom(var, value)
            fact = {g for g in range(len(model))
                    if eval_state_formula(model, g, atom)}
            want = knowledge_states(model, idx, fact)
            got = {g for g in range(len(model))
                   if eval_state_formula(model, g, Know(agent.name, atom))}
            assert got == want


def test_eval_state_formula_booleans(asv_model):
    model = asv_model
    root = model.initial[0]
    t = Const(True)
    f = Const(False)
    assert eval_state_formula(model, root, t)
    assert not eval_state_formula(model, root, f)
    assert eval_state_formula(model, root, Implies(f, t))
    assert eval_state_formula(model, root, Not(Atom("punished_1", True)))
    with pytest.raises(FormulaError):
        eval_state_formula(model, root, Atom("no_such_var", 1))
    with pytest.raises(FormulaError):
        eval_state_formula(model, root, Know("Nobody", t))


# -- root selection


def test_objective_roots_are_initial(asv_model):
    assert root_set(asv_model, (1,), "objective") == frozenset(
        asv_model.initial)


def test_subjective_roots_close_under_member_views():
    rng = random.Random(99)
    for model in _small_models(rng, 10):
        n_agents = len(model.amas.agents)
        coalition = tuple(range(rng.randint(1, n_agents)))
        roots = root_set(model, coalition, "subjective")
        assert set(model.initial) <= roots
        want = set(model.initial)
        for g in range(len(model)):
            for init in model.initial:
                if any(model.agent_view(g, i) == model.agent_view(init, i)
                       for i in coalition):
                    want.add(g)
        assert roots == want
        closure = subjective_roots(model, coalition)
        for init in model.initial:
            assert closure(init) <= roots


def test_subjective_roots_empty_coalition(asv_model):
    assert root_set(asv_model, (), "subjective") == frozenset(
        asv_model.initial)


# -- exact verification on the hand-understood benchmark


def _verdict(model, formula, mode="objective", variant="std"):
    return verify_exact(model, formula, mode=mode, variant=variant).verdict


def test_exact_verdicts_on_voting_benchmark(asv_model):
    model = asv_model
    punished = Atom("punished_1", True)
    voted1 = Atom("voted_1_1", True)
    for mode in ("objective", "subjective"):
        for variant in ("std", "react"):
            # the coercer can always punish
            assert _verdict(model, Coalition(("Coercer1",),
                                             Eventually(punished)),
                            mode, variant)
            # the voter alone cannot prevent punishment
            assert not _verdict(model, Coalition(("Voter1",),
                                                 Always(Not(punished))),
                                mode, variant)
            # together they can avoid it
            assert _verdict(model, Coalition(("Voter1", "Coercer1"),
                                             Always(Not(punished))),
                            mode, variant)
            # the coercer cannot force a particular vote
            assert not _verdict(model, Coalition(("Coercer1",),
                                                 Eventually(And(punished,
                                                                voted1))),
                                mode, variant)
            # the coercer cannot learn the vote by itself
            assert not _verdict(model, Coalition(("Coercer1",),
                                                 Eventually(
                                                     Know("Coercer1",
                                                          voted1))),
                                mode, variant)
            # a compliant voter can make the vote known
            assert _verdict(model, Coalition(("Voter1",),
                                             Eventually(Know("Coercer1",
                                                             voted1))),
                            mode, variant)


def test_exact_result_reports_witness_and_space(asv_model):
    res = verify_exact(asv_model,
                       Coalition(("Coercer1",),
                                 Eventually(Atom("punished_1", True))))
    assert res.verdict is True
    assert res.witness is not None
    assert "Coercer1" in res.witness
    assert res.strategy_space >= res.strategies_checked >= 1
    assert res.per_initial == {asv_model.initial[0]: True}

    res2 = verify_exact(asv_model,
                        Coalition(("Voter1",),
                                  Always(Not(Atom("punished_1", True)))))
    assert res2.verdict is False
    assert res2.witness is None


def test_empty_coalition_is_pure_path_quantification(asv_model):
    punished = Atom("punished_1", True)
    # no strategy constrains anything: all paths must satisfy
    assert not _verdict(asv_model, Coalition((), Eventually(punished)))
    assert not _verdict(asv_model, Coalition((), Always(Not(punished))))
    assert _verdict(asv_model, Coalition((), Eventually(Const(True))))


def test_strategy_cap_raises():
    rng = random.Random(5)
    for model in _small_models(rng, 10):
        agents = tuple(a.name for a in model.amas.agents)
        space = strategy_space_size(model, range(len(agents)))
        if space <= 2:
            continue
        f = Coalition(agents, Eventually(Const(True)))
        with pytest.raises(StrategySpaceError):
            verify_exact(model, f, strategy_cap=2)
        return
    pytest.fail("no random instance offered more than two strategies")


def test_exact_deadline_raises(asv_model):
    f = Coalition(("Voter1", "Coercer1"),
                  Eventually(Atom("punished_1", True)))
    with pytest.raises(DeadlineExceeded):
        verify_exact(asv_model, f, deadline=time.monotonic() - 1.0)


def test_verify_requires_total_model():
    agent = _agent("A1", "s0", [LocalTransition("go", "s0", "s1")],
                   {"s0": (frozenset({"go"}),)})
    model = build_iis(Amas((agent,), all_persistent=True))
    with pytest.raises(ModelError, match="no outgoing"):
        verify_exact(model, Coalition(("A1",), Eventually(Const(True))))


def test_unknown_mode_and_variant_rejected(asv_model):
    f = Coalition(("Coercer1",), Eventually(Const(True)))
    with pytest.raises(ValueError):
        verify_exact(asv_model, f, mode="omniscient")
    with pytest.raises(ValueError):
        verify_exact(asv_model, f, variant="lazy")


# -- joint roots versus per-state satisfaction


def test_joint_verdict_agrees_with_per_state_at_initial():
    """Two independent code paths must coincide: the recursive verifier's
    verdict and membership of the initial states in the per-state
    satisfaction set.  For initial states the per-state root closure is
    exactly the joint root set, so these are the same condition."""
    rng = random.Random(31337)
    agreements = 0
    for model in _small_models(rng, 50, max_states=120):
        f = random_coalition_formula(rng, model.amas)
        if f is None:
            continue
        for mode in ("objective", "subjective"):
            try:
                res = verify_exact(model, f, mode=mode, strategy_cap=30000)
                sat = coalition_holds_per_state(model, f, mode=mode,
                                                strategy_cap=30000)
            except StrategySpaceError:
                continue
            assert res.verdict == all(g in sat for g in model.initial)
            agreements += 1
    assert agreements > 40


def test_per_state_set_is_view_closed_for_lone_member():
    """For a one-agent coalition under subjective semantics, the per-state
    root closure is the member's own view class, so the satisfaction set
    must be a union of that member's view classes."""
    rng = random.Random(2711)
    closures = 0
    for model in _small_models(rng, 30, max_states=100):
        name = rng.choice([a.name for a in model.amas.agents])
        f = random_coalition_formula(rng, model.amas, agents=[name])
        if f is None:
            continue
        try:
            sat = coalition_holds_per_state(model, f, mode="subjective",
                                            strategy_cap=30000)
        except StrategySpaceError:
            continue
        i = model.amas.name_index[name]
        for g in sat:
            mates = [h for h in range(len(model))
                     if model.agent_view(h, i) == model.agent_view(g, i)]
            assert all(h in sat for h in mates)
        closures += 1
    assert closures >= 20
