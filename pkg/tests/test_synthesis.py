"""Tests for depth-first and prefix-parallel strategy synthesis.

The searchers are cross-validated against exhaustive strategy enumeration
on seeded random instances, and every witness they emit is replayed on the
restricted transition graph to confirm it actually wins.
"""
import random
import time

import pytest

from amascheck.core import (
    Amas,
    BuildConfig,
    DeadlineExceeded,
    LocalAgent,
    LocalTransition,
    ModelError,
    StateLimitExceeded,
    build_undeadlocked,
)
from amascheck.logic import (
    Always,
    And,
    Atom,
    Coalition,
    Eventually,
    Know,
    Not,
    coalition_indices,
    eval_state_formula,
    holds_on_all_paths,
    outcome_graph,
    path_spec,
    root_set,
    strategy_views,
    verify_exact,
    view_key,
)
from amascheck.synthesis import (
    DEFAULT_BUDGET,
    StrategyPrefix,
    SynthesisResult,
    dfs_synthesize,
    generate_prefixes,
    parallel_synthesize,
)

from _random_models import random_amas, random_coalition_formula, strategy_space_size


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


def _sigma_from_witness(model, witness):
    """Rebuild the runtime strategy map from the JSON witness encoding."""
    sigma = {}
    for name, by_view in witness.items():
        i = model.amas.name_index[name]
        key_to_view = {view_key(model, i, v): v
                       for v, _choices in strategy_views(model, i)}
        sigma[i] = {key_to_view[k]: frozenset(events)
                    for k, events in by_view.items()}
    return sigma


def _replay_wins(model, agents, path, witness, mode, variant):
    """Check a witness directly: restrict the model to the strategy and
    verify the path objective on every maximal path from the roots."""
    sigma = _sigma_from_witness(model, witness)
    idxs = coalition_indices(model, agents)
    roots = sorted(root_set(model, idxs, mode))
    succ = outcome_graph(model, roots, sigma, variant)
    kind, p, q = path_spec(path)
    p_states = {g for g in succ if eval_state_formula(model, g, p)}
    q_states = None
    if q is not None:
        q_states = {g for g in succ if eval_state_formula(model, g, q)}
    return holds_on_all_paths(
        succ, roots, kind, p_states.__contains__,
        q_states.__contains__ if q is not None else None)


def _audit_witness(model, agents, witness):
    """Witness shape: only coalition agents, observation keys that render
    actual views, and choices drawn verbatim from the repertoire."""
    assert set(witness) <= set(agents)
    for name, by_view in witness.items():
        i = model.amas.name_index[name]
        key_to_view = {view_key(model, i, v): v
                       for v, _choices in strategy_views(model, i)}
        for k, events in by_view.items():
            assert k in key_to_view
            view = key_to_view[k]
            choices = model.amas.agents[i].choices_at(view[0])
            assert frozenset(events) in choices


# -- result plumbing


def test_result_verdict_mapping():
    assert SynthesisResult("true", {}).verdict is True
    assert SynthesisResult("none", None).verdict is False
    assert SynthesisResult("budget", None).verdict is None


def test_unknown_mode_and_variant_rejected(asv_model):
    with pytest.raises(ValueError):
        dfs_synthesize(asv_model, ("Voter1",), Eventually(Atom("punished_1", True)),
                       mode="omniscient")
    with pytest.raises(ValueError):
        parallel_synthesize(asv_model, ("Voter1",),
                            Eventually(Atom("punished_1", True)), variant="lazy")
    with pytest.raises(ValueError):
        parallel_synthesize(asv_model, ("Voter1",),
                            Eventually(Atom("punished_1", True)), workers=0)


# -- the voting benchmark, against the enumeration verdicts


def test_dfs_verdicts_on_voting_benchmark(asv_model):
    model = asv_model
    punished = Atom("punished_1", True)
    voted1 = Atom("voted_1_1", True)
    cases = [
        (("Coercer1",), Eventually(punished)),
        (("Voter1",), Always(Not(punished))),
        (("Voter1", "Coercer1"), Always(Not(punished))),
        (("Coercer1",), Eventually(And(punished, voted1))),
        (("Coercer1",), Eventually(Know("Coercer1", voted1))),
        (("Voter1",), Eventually(Know("Coercer1", voted1))),
    ]
    for agents, path in cases:
        for mode in ("objective", "subjective"):
            for variant in ("std", "react"):
                exact = verify_exact(model, Coalition(agents, path),
                                     mode=mode, variant=variant)
                res = dfs_synthesize(model, agents, path,
                                     mode=mode, variant=variant)
                assert res.outcome in ("true", "none")
                assert res.verdict == exact.verdict
                if res.outcome == "true":
                    _audit_witness(model, agents, res.witness)
                    assert _replay_wins(model, agents, path, res.witness,
                                        mode, variant)
                else:
                    assert res.witness is None


def test_objective_subjective_split_on_benchmark(asv_model):
    # forcing a punished vote for candidate 1 works from the initial state
    # but not from every state the coalition cannot tell apart from it
    agents = ("Voter1", "Coercer1")
    path = Eventually(And(Atom("punished_1", True), Atom("voted_1_1", True)))
    assert dfs_synthesize(asv_model, agents, path, mode="objective").outcome == "true"
    assert dfs_synthesize(asv_model, agents, path, mode="subjective").outcome == "none"


# -- agreement with exact enumeration on random instances


def test_dfs_agrees_with_exact_enumeration():
    rng = random.Random(90210)
    agreements = 0
    trues = 0
    while agreements < 200:
        amas = random_amas(rng)
        try:
            model = build_undeadlocked(amas, config=BuildConfig(max_states=150))
        except (StateLimitExceeded, ModelError):
            continue
        f = random_coalition_formula(rng, amas)
        if f is None:
            continue
        idxs = coalition_indices(model, f.agents)
        if strategy_space_size(model, idxs) > 3000:
            continue
        mode = rng.choice(("objective", "subjective"))
        variant = rng.choice(("std", "react"))
        exact = verify_exact(model, f, mode=mode, variant=variant)
        res = dfs_synthesize(model, f.agents, f.path, mode=mode, variant=variant)
        assert res.outcome in ("true", "none")
        assert res.verdict == exact.verdict
        if res.outcome == "true":
            trues += 1
            _audit_witness(model, f.agents, res.witness)
            assert _replay_wins(model, f.agents, f.path, res.witness,
                                mode, variant)
        agreements += 1
    assert trues > 20


def test_parallel_agrees_with_dfs_across_worker_counts():
    rng = random.Random(47114)
    agreements = 0
    lone_none = 0
    while agreements < 40:
        amas = random_amas(rng)
        try:
            model = build_undeadlocked(amas, config=BuildConfig(max_states=120))
        except (StateLimitExceeded, ModelError):
            continue
        f = random_coalition_formula(rng, amas)
        if f is None:
            continue
        idxs = coalition_indices(model, f.agents)
        if strategy_space_size(model, idxs) > 3000:
            continue
        mode = rng.choice(("objective", "subjective"))
        variant = rng.choice(("std", "react"))
        base = dfs_synthesize(model, f.agents, f.path, mode=mode, variant=variant)
        for workers in (1, 2, 4, 8):
            res = parallel_synthesize(model, f.agents, f.path, mode=mode,
                                      variant=variant, workers=workers)
            assert res.outcome == base.outcome
            assert 1 <= res.workers <= workers
            if res.outcome == "true":
                _audit_witness(model, f.agents, res.witness)
                assert _replay_wins(model, f.agents, f.path, res.witness,
                                    mode, variant)
        if base.outcome == "none" and len(f.agents) == 1:
            # every prefix job finished without a witness, so the prefix
            # partition covered the whole strategy space
            lone_none += 1
        agreements += 1
    assert lone_none > 3


def test_parallel_on_benchmark_with_more_workers_than_jobs(asv_model):
    agents = ("Voter1", "Coercer1")
    path = Always(Not(Atom("punished_1", True)))
    for workers in (2, 4, 8):
        res = parallel_synthesize(asv_model, agents, path, workers=workers)
        assert res.outcome == "true"
        assert res.workers <= workers
        assert _replay_wins(asv_model, agents, path, res.witness,
                            "objective", "std")


# -- resource limits


def test_budget_exhaustion_reports_budget(asv_model):
    res = dfs_synthesize(asv_model, ("Voter1",),
                         Always(Not(Atom("punished_1", True))), budget=0)
    assert res.outcome == "budget"
    assert res.verdict is None
    assert res.witness is None
    res = parallel_synthesize(asv_model, ("Voter1",),
                              Always(Not(Atom("punished_1", True))),
                              workers=2, budget=0)
    assert res.outcome == "budget"
    assert res.witness is None


def test_budget_interrupts_a_longer_search(selene_tiny):
    _spec, model = selene_tiny
    path = Eventually(And(Atom("Coercer1_finish", 1),
                          Know("Coercer1", Atom("VoterC1_vote", 2))))
    full = dfs_synthesize(model, ("Coercer1",), path, variant="react")
    assert full.outcome == "none"
    assert full.nodes > 200
    cut = dfs_synthesize(model, ("Coercer1",), path, variant="react",
                         budget=200)
    assert cut.outcome == "budget"
    assert cut.nodes <= 201


def test_deadline_raises_mid_search():
    # large enough that the periodic deadline check is reached
    import warnings
    from amascheck.bench import gen_selene, gen_vuln_formula
    from amascheck.dsl import instantiate

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = build_undeadlocked(instantiate(
            gen_selene(voters=0, coerced=1, candidates=2, rounds=3)))
    f = gen_vuln_formula(1, 1)
    probe = dfs_synthesize(model, f.agents, f.path, variant="react")
    assert probe.nodes >= 1024
    with pytest.raises(DeadlineExceeded):
        dfs_synthesize(model, f.agents, f.path, variant="react",
                       deadline=time.monotonic() - 1.0)


def test_search_effort_is_reported(asv_model):
    res = dfs_synthesize(asv_model, ("Voter1",),
                         Always(Not(Atom("punished_1", True))))
    assert res.outcome == "none"
    assert res.nodes > 0
    assert res.decisions > 0
    assert res.revisions > 0
    assert res.workers == 1


# -- work-splitting prefixes


def _chain_amas(n):
    """One agent walking a line of n local states, one event per step."""
    trans = [LocalTransition(f"step{k}", f"s{k}", f"s{k + 1}", None, ())
             for k in range(n - 1)]
    rep = {f"s{k}": (frozenset({f"step{k}"}),) for k in range(n - 1)}
    return Amas([LocalAgent("A1", "s0", tuple(trans), rep)])


def test_prefixes_limit_one_is_the_empty_prefix(asv_model):
    roots = asv_model.initial
    out = generate_prefixes(asv_model, roots, 1)
    assert out == [StrategyPrefix((), sorted(roots)[0])]
    with pytest.raises(ValueError):
        generate_prefixes(asv_model, roots, 0)


def test_prefixes_extend_through_forced_moves():
    model = build_undeadlocked(_chain_amas(4))
    out = generate_prefixes(model, model.initial, 8)
    assert len(out) == 1
    events = [e for _g, e in out[0].steps]
    assert events == ["step0", "step1", "step2"]
    assert out[0].end_state == len(model) - 1


def test_prefixes_are_valid_incomparable_paths(asv_model):
    model = asv_model
    root = sorted(model.initial)[0]
    for limit in (2, 3, 5, 8, 16):
        out = generate_prefixes(model, model.initial, limit)
        assert 1 <= len(out) <= limit
        step_lists = []
        for pr in out:
            g = root
            for state, event in pr.steps:
                assert state == g
                g = model.trans[g][event]
            assert pr.end_state == g
            step_lists.append(tuple(pr.steps))
        # no prefix is an ancestor of another, so no work is duplicated
        for a in step_lists:
            for b in step_lists:
                if a is not b:
                    assert a != b[:len(a)]
