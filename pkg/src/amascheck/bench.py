"""Generators for the two voting case-study families and their formulas.

The first family is a minimal voting scenario: each voter picks one of k
candidates, then shows the coercer a receipt for candidate 1, a receipt for
another candidate, or no receipt, and the coercer reacts by punishing or not.
`gen_asv` builds it directly as agents; `gen_asv_spec` renders the same
structure as a template spec for the text format.

The second family models tracker-based remote voting with revoting: coerced
voters cast observed votes over several rounds and may secretly change the
final one, an election authority collects votes and publishes them on a
bulletin board keyed by secret trackers, and the coercer watches the casts,
the board, and the tracker a voter claims.  `gen_selene` emits it as a
ModelSpec; `gen_vuln_formula` builds the matching vulnerability formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from .core import Amas, GCmp, LocalAgent, LocalTransition, UpdateValue
from .dsl import (
    AgentTemplate,
    Directives,
    ModelSpec,
    TransitionSpec,
    assigned_variable_names,
)
from .logic import And, Atom, Coalition, Eventually, Implies, Know, formula_to_str


@dataclass(frozen=True)
class AsvParams:
    """Size of the simple voting family: n voters, k candidates."""

    n: int = 1
    k: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need at least one voter, got {self.n}")
        if self.k < 2:
            raise ValueError(f"need at least two candidates, got {self.k}")


@dataclass(frozen=True)
class SeleneParams:
    """Size of the tracker-based voting family.

    voters: regular voters (may be 0); coerced: coerced voters (at least 1);
    candidates: at least 2; rounds: revoting rounds (at least 1).  The
    generated system has voters + coerced + 2 agents (coercer, authority).
    """

    voters: int = 1
    coerced: int = 1
    candidates: int = 3
    rounds: int = 3

    def __post_init__(self):
        if self.voters < 0:
            raise ValueError(f"voters must be >= 0, got {self.voters}")
        if self.coerced < 1:
            raise ValueError(f"coerced voters must be >= 1, got {self.coerced}")
        if self.candidates < 2:
            raise ValueError(
                f"candidates must be >= 2, got {self.candidates}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")


def _asv_voter(i, k):
    lit_true = UpdateValue.lit(True)
    transitions = []
    repertoire = {"q0": tuple(frozenset({f"vote_{i}_{j}"})
                              for j in range(1, k + 1))}
    wait_choice = (frozenset({f"pun_{i}", f"npun_{i}"}),)
    for j in range(1, k + 1):
        transitions.append(LocalTransition(
            f"vote_{i}_{j}", "q0", f"q{j}",
            updates=((f"voted_{i}_{j}", lit_true),)))
        transitions.append(LocalTransition(f"gv_{i}_{j}", f"q{j}", f"q{j}_g"))
        transitions.append(LocalTransition(f"ng_{i}", f"q{j}", f"q{j}_n"))
        repertoire[f"q{j}"] = (frozenset({f"gv_{i}_{j}"}),
                               frozenset({f"ng_{i}"}))
        for suffix in ("g", "n"):
            state = f"q{j}_{suffix}"
            transitions.append(LocalTransition(f"pun_{i}", state, state))
            transitions.append(LocalTransition(f"npun_{i}", state, state))
            repertoire[state] = wait_choice
    return LocalAgent(f"Voter{i}", "q0", tuple(transitions), repertoire)


def _asv_coercer(n, k):
    """Sequential receipt-then-punish blocks, one per voter.

    Receiving a receipt for candidate 1 is remembered; receipts for other
    candidates and refusals look alike.  The punish decision for the last
    voter parks the automaton in a matching self-loop so the finished system
    never deadlocks.
    """
    lit_true = UpdateValue.lit(True)
    transitions = []
    repertoire = {}
    entries = ["r1"]
    for i in range(1, n + 1):
        receive = frozenset({f"gv_{i}_{j}" for j in range(1, k + 1)}
                            | {f"ng_{i}"})
        for entry in entries:
            transitions.append(LocalTransition(f"gv_{i}_1", entry, f"g{i}"))
            for j in range(2, k + 1):
                transitions.append(
                    LocalTransition(f"gv_{i}_{j}", entry, f"n{i}"))
            transitions.append(LocalTransition(f"ng_{i}", entry, f"n{i}"))
            repertoire[entry] = (receive,)
        for source in (f"g{i}", f"n{i}"):
            transitions.append(LocalTransition(
                f"pun_{i}", source, f"p{i}",
                updates=((f"punished_{i}", lit_true),)))
            transitions.append(LocalTransition(f"npun_{i}", source, f"np{i}"))
            repertoire[source] = (frozenset({f"pun_{i}"}),
                                  frozenset({f"npun_{i}"}))
        entries = [f"p{i}", f"np{i}"]
    transitions.append(LocalTransition(
        f"pun_{n}", f"p{n}", f"p{n}",
        updates=((f"punished_{n}", lit_true),)))
    transitions.append(LocalTransition(f"npun_{n}", f"np{n}", f"np{n}"))
    repertoire[f"p{n}"] = (frozenset({f"pun_{n}"}),)
    repertoire[f"np{n}"] = (frozenset({f"npun_{n}"}),)
    return LocalAgent("Coercer1", "r1", tuple(transitions), repertoire)


def gen_asv(n=1, k=2):
    """Build the simple voting system with n voters and k candidates."""
    if isinstance(n, AsvParams):
        params = n
    else:
        params = AsvParams(n, k)
    agents = [_asv_voter(i, params.k) for i in range(1, params.n + 1)]
    agents.append(_asv_coercer(params.n, params.k))
    return Amas(tuple(agents), all_persistent=True)


def gen_asv_spec(n=1, k=2):
    """The simple voting system as a template spec.

    Event and variable names carry instance names instead of bare voter
    indices (gv_Voter1_1 instead of gv_1_1), since that is how the template
    language scales to several voters.
    """
    if isinstance(n, AsvParams):
        params = n
    else:
        params = AsvParams(n, k)
    n, k = params.n, params.k
    lit_true = UpdateValue.lit(True)

    voter_transitions = []
    for j in range(1, k + 1):
        voter_transitions.append(TransitionSpec(
            f"vote_aID_{j}", False, "q0", f"q{j}",
            updates=((f"voted_aID_{j}", lit_true),)))
        voter_transitions.append(
            TransitionSpec(f"gv_aID_{j}", True, f"q{j}", f"q{j}_g"))
        voter_transitions.append(
            TransitionSpec("ng_aID", True, f"q{j}", f"q{j}_n"))
        for suffix in ("g", "n"):
            state = f"q{j}_{suffix}"
            voter_transitions.append(
                TransitionSpec("pun_aID", True, state, state))
            voter_transitions.append(
                TransitionSpec("npun_aID", True, state, state))
    voter = AgentTemplate("Voter", n, "q0", voter_transitions,
                          [["pun_aID", "npun_aID"]])

    coercer_transitions = []
    groups = []
    entries = ["r1"]
    for i in range(1, n + 1):
        v = f"Voter{i}"
        groups.append([f"gv_{v}_{j}" for j in range(1, k + 1)] + [f"ng_{v}"])
        for entry in entries:
            coercer_transitions.append(
                TransitionSpec(f"gv_{v}_1", True, entry, f"g{i}"))
            for j in range(2, k + 1):
                coercer_transitions.append(
                    TransitionSpec(f"gv_{v}_{j}", True, entry, f"n{i}"))
            coercer_transitions.append(
                TransitionSpec(f"ng_{v}", True, entry, f"n{i}"))
        for source in (f"g{i}", f"n{i}"):
            coercer_transitions.append(TransitionSpec(
                f"pun_{v}", True, source, f"p{i}",
                updates=((f"punished_{v}", lit_true),)))
            coercer_transitions.append(
                TransitionSpec(f"npun_{v}", True, source, f"np{i}"))
        entries = [f"p{i}", f"np{i}"]
    last = f"Voter{n}"
    coercer_transitions.append(TransitionSpec(
        f"pun_{last}", True, f"p{n}", f"p{n}",
        updates=((f"punished_{last}", lit_true),)))
    coercer_transitions.append(
        TransitionSpec(f"npun_{last}", True, f"np{n}", f"np{n}"))
    coercer = AgentTemplate("Coercer", 1, "r1", coercer_transitions, groups)

    directives = Directives(persistent=sorted(
        {f"voted_Voter{i}_{j}" for i in range(1, n + 1)
         for j in range(1, k + 1)}
        | {f"punished_Voter{i}" for i in range(1, n + 1)}))
    return ModelSpec([voter, coercer], directives,
                     source_name=f"asv_{n}_{k}")


def _coerced_voter_template(params):
    """The coerced-voter template: observed casts, a guarded revote chain,
    an unobserved final recast, tracker claiming, and the punish step."""
    p = params
    suffix = "_aID" if p.coerced > 1 else ""
    eq = lambda value: GCmp("aID_revote", "==", value)
    t = []
    for c in range(1, p.candidates + 1):
        t.append(TransitionSpec(
            f"coerce{c}_aID", True, "start", "coerced",
            updates=(("aID_required", UpdateValue.lit(c)),)))
    for c in range(1, p.candidates + 1):
        t.append(TransitionSpec(
            f"select_vote{c}{suffix}", False, "coerced", "prepared",
            updates=(("aID_vote", UpdateValue.lit(c)),
                     ("aID_prep_vote", UpdateValue.lit(c)),
                     ("aID_revote", UpdateValue.lit(1)))))
    t.append(TransitionSpec("is_ready", True, "prepared", "ready"))
    t.append(TransitionSpec("start_voting", True, "ready", "voting"))
    t.append(TransitionSpec(
        "aID_vote", True, "voting", "vote",
        updates=(("Coercer1_aID_vote", UpdateValue.read("aID_vote")),
                 ("Coercer1_aID_revote", UpdateValue.read("aID_revote")))))
    t.append(TransitionSpec("send_vote_aID", True, "vote", "send"))
    for r in range(1, p.rounds):
        t.append(TransitionSpec(
            f"revote_vote_{r}{suffix}", False, "send", "voting",
            precondition=eq(r),
            updates=(("aID_vote", UpdateValue.read("aID_required")),
                     ("aID_revote", UpdateValue.lit(r + 1)))))
        t.append(TransitionSpec(
            f"skip_revote_{r}{suffix}", False, "send", "votingf",
            precondition=eq(r)))
    t.append(TransitionSpec(
        f"final_vote{suffix}", False, "send", "votingf",
        precondition=eq(p.rounds),
        updates=(("aID_vote", UpdateValue.read("aID_prep_vote")),)))
    t.append(TransitionSpec(
        f"skip_final{suffix}", False, "send", "votingf",
        precondition=eq(p.rounds)))
    t.append(TransitionSpec("send_fvote_aID", True, "votingf", "sendf"))
    t.append(TransitionSpec("finish_voting", True, "sendf", "finish"))
    t.append(TransitionSpec("send_tracker_aID", True, "finish", "tracker"))
    t.append(TransitionSpec(
        "finish_sending_trackers", True, "tracker", "trackers_sent"))
    trackers = p.voters + p.coerced
    for tr in range(1, trackers + 1):
        t.append(TransitionSpec(
            f"give{tr}_aID", True, "trackers_sent", "interact",
            updates=(("Coercer1_aID_tracker", UpdateValue.lit(tr)),)))
    t.append(TransitionSpec(
        "not_give_aID", True, "trackers_sent", "interact",
        updates=(("Coercer1_aID_tracker", UpdateValue.lit(0)),)))
    t.append(TransitionSpec(
        "punish_aID", True, "interact", "ccheck",
        updates=(("aID_punish", UpdateValue.lit(True)),)))
    t.append(TransitionSpec(
        "not_punish_aID", True, "interact", "check",
        updates=(("aID_punish", UpdateValue.lit(False)),)))
    for tr in range(1, trackers + 1):
        t.append(TransitionSpec(
            f"check_tracker{tr}_aID", True, "check", "end"))
    groups = [[f"coerce{c}_aID" for c in range(1, p.candidates + 1)],
              ["punish", "not_punish"]]
    return AgentTemplate("VoterC", p.coerced, "start", t, groups)


def _plain_voter_template(params):
    """A regular voter: pick a candidate, vote once, receive a tracker."""
    p = params
    t = []
    for c in range(1, p.candidates + 1):
        t.append(TransitionSpec(
            f"select_vote{c}_aID", False, "start", "prepared",
            updates=(("aID_vote", UpdateValue.lit(c)),)))
    t.append(TransitionSpec("is_ready", True, "prepared", "ready"))
    t.append(TransitionSpec("start_voting", True, "ready", "voting"))
    t.append(TransitionSpec("send_fvote_aID", True, "voting", "sendf"))
    t.append(TransitionSpec("finish_voting", True, "sendf", "finish"))
    t.append(TransitionSpec("send_tracker_aID", True, "finish", "tracker"))
    t.append(TransitionSpec(
        "finish_sending_trackers", True, "tracker", "done"))
    return AgentTemplate("Voter", p.voters, "start", t, [])


def _coercer_template(params):
    """The coercer: demand a candidate, watch casts, read the board, see the
    claimed tracker, then punish or not and close the interaction."""
    p = params
    coerced = [f"VoterC{m}" for m in range(1, p.coerced + 1)]
    trackers = p.voters + p.coerced
    t = []
    for w in coerced:
        for c in range(1, p.candidates + 1):
            t.append(TransitionSpec(
                f"coerce{c}_{w}", True, "coerce", "coerce",
                updates=((f"aID_{w}_required", UpdateValue.lit(c)),)))
    t.append(TransitionSpec("start_voting", True, "coerce", "voting"))
    for w in coerced:
        t.append(TransitionSpec(f"{w}_vote", True, "voting", "voting"))
    t.append(TransitionSpec("finish_voting", True, "voting", "finish"))
    t.append(TransitionSpec(
        "finish_sending_trackers", True, "finish", "trackers_sent"))
    for w in coerced:
        for tr in range(1, trackers + 1):
            t.append(TransitionSpec(
                f"give{tr}_{w}", True, "trackers_sent", "trackers_sent"))
        t.append(TransitionSpec(
            f"not_give_{w}", True, "trackers_sent", "trackers_sent"))
    t.append(TransitionSpec("to_check", False, "trackers_sent", "check"))
    for tr in range(1, trackers + 1):
        t.append(TransitionSpec(
            f"check_tracker{tr}_aID", True, "check", "check"))
    t.append(TransitionSpec("to_interact", False, "check", "interact"))
    for w in coerced:
        t.append(TransitionSpec(f"punish_{w}", True, "interact", "interact"))
        t.append(TransitionSpec(
            f"not_punish_{w}", True, "interact", "interact"))
    t.append(TransitionSpec(
        "finish", False, "interact", "end",
        updates=(("aID_finish", UpdateValue.lit(1)),)))
    groups = [[f"give{tr}_{w}" for tr in range(1, trackers + 1)]
              + [f"not_give_{w}"] for w in coerced]
    # Watching the voting phase must not force the coercer to choose
    # between admitting casts and admitting the end of the phase: one
    # combined choice keeps a positional strategy from wedging the system.
    groups.append([f"{w}_vote" for w in coerced] + ["finish_voting"])
    return AgentTemplate("Coercer", 1, "coerce", t, groups)


def _authority_template(params):
    """The election authority: collect votes, publish the board under a
    secret tracker assignment, hand out trackers, then serve board reads."""
    p = params
    coerced = [f"VoterC{m}" for m in range(1, p.coerced + 1)]
    plain = [f"Voter{m}" for m in range(1, p.voters + 1)]
    everyone = coerced + plain
    t = []
    t.append(TransitionSpec("is_ready", True, "setup", "ready"))
    t.append(TransitionSpec("start_voting", True, "ready", "voting"))
    for w in coerced:
        t.append(TransitionSpec(f"send_vote_{w}", True, "voting", "received"))
    t.append(TransitionSpec("record_vote", False, "received", "voting"))
    for v in everyone:
        t.append(TransitionSpec(
            f"send_fvote_{v}", True, "voting", "voting",
            updates=((f"aID_fvote_{v}", UpdateValue.read(f"{v}_vote")),)))
    t.append(TransitionSpec("finish_voting", True, "voting", "tally"))
    for idx, order in enumerate(permutations(everyone), start=1):
        t.append(TransitionSpec(
            f"publish_{idx}", False, "tally", "wbb",
            updates=tuple(
                (f"aID_wbb{tr}", UpdateValue.read(f"aID_fvote_{v}"))
                for tr, v in enumerate(order, start=1))))
    for v in everyone:
        t.append(TransitionSpec(f"send_tracker_{v}", True, "wbb", "wbb"))
    t.append(TransitionSpec(
        "finish_sending_trackers", True, "wbb", "open"))
    trackers = len(everyone)
    for tr in range(1, trackers + 1):
        t.append(TransitionSpec(
            f"check_tracker{tr}_Coercer1", True, "open", "open",
            updates=((f"Coercer1_wbb{tr}",
                      UpdateValue.read(f"aID_wbb{tr}")),)))
        for w in coerced:
            t.append(TransitionSpec(
                f"check_tracker{tr}_{w}", True, "open", "open"))
    # The board stays open for reads until the coercer interaction is over,
    # then the authority may archive it.
    t.append(TransitionSpec(
        "close_election", False, "open", "closed",
        precondition=GCmp("Coercer1_finish", "==", 1)))
    return AgentTemplate("EA", 1, "setup", t, [])


def gen_selene(voters=1, coerced=1, candidates=3, rounds=3):
    """Build the tracker-based voting family as a ModelSpec.

    Pure function of its parameters: equal parameters give equal specs and
    byte-identical printed text.
    """
    if isinstance(voters, SeleneParams):
        params = voters
    else:
        params = SeleneParams(voters, coerced, candidates, rounds)
    templates = [_coerced_voter_template(params)]
    if params.voters:
        templates.append(_plain_voter_template(params))
    templates.append(_coercer_template(params))
    templates.append(_authority_template(params))

    reduction = []
    for m in range(1, params.coerced + 1):
        reduction += [f"VoterC{m}_revote", f"VoterC{m}_vote"]
    reduction.append("Coercer1_finish")

    spec = ModelSpec(templates, Directives(reduction=reduction),
                     source_name=(f"selene_v{params.voters}"
                                  f"_cv{params.coerced}"
                                  f"_c{params.candidates}"
                                  f"_r{params.rounds}"))
    spec.directives.persistent = assigned_variable_names(spec)
    spec.directives.formulas = [
        formula_to_str(gen_vuln_formula(1, params.rounds))]
    return spec


def gen_vuln_formula(candidate, observed_rounds, voter=1):
    """The coercion-vulnerability property for one coerced voter.

    It says the coercer can drive the election to its end so that, whenever
    the voter went through the given number of observed revote rounds and
    her recorded vote is the given candidate, the coercer knows that vote.
    The revote counter starts at 1 and each observed revote increments it,
    so k observed rounds show up as counter value k + 1.
    """
    v = f"VoterC{voter}"
    antecedent = And(Atom(f"{v}_revote", observed_rounds + 1),
                     Atom(f"{v}_vote", candidate))
    knows = Know("Coercer1", Atom(f"{v}_vote", candidate))
    return Coalition(
        ("Coercer1",),
        Eventually(And(Atom("Coercer1_finish", 1),
                       Implies(antecedent, knows))))
