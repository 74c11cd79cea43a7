"""Agent-template language: parsing, validation, instantiation, printing.

A model file is a sequence of agent template blocks and global directives.
A template block starts with a header like ``Agent Voter [2]:``, must give an
``init`` line next, and then lists transitions, one per logical line:

    shared coerce1_aID: start → coerced [aID_required=1]
    revote_vote_1: send -[aID_revote==1]> voting [aID_vote=?aID_required]

Both ``→`` and ``->`` arrows are accepted.  A guarded transition uses the
``-[condition]>`` arrow form.  Updates are comma-separated ``var=value``
pairs; a value is ``true``, ``false``, an integer, or ``?other`` which copies
the pre-transition value of ``other`` (all reads in one update list observe
the values before the transition fires).  A line whose brackets are left
unclosed continues on the next line.  Blank lines and lines starting with
``%`` are ignored.

A block may contain ``PROTOCOL: [[a, b], [c]]``.  Each inner list becomes one
multi-event choice of the agent; events not mentioned in any group get
singleton choices.  A protocol entry that is not a declared event name may
abbreviate one: it resolves to the unique declared event starting with the
entry followed by ``_`` (so ``punish`` can stand for ``punish_aID``).

Global directives, recognized anywhere outside a template block body, are
``PERSISTENT:`` and ``REDUCTION:`` (comma-separated variable names, brackets
optional), ``FORMULA:`` (raw formula text, may repeat), and
``SHOW_EPISTEMIC:`` (true/false, parsed and stored but otherwise unused).

`instantiate` turns each template of count c into agents Name1..Namec,
replacing every occurrence of the substring ``aID`` in event names, state
names, variable names, preconditions, and updates with the instance name.
Events that share a post-substitution name across agents synchronize; all
their declarations must carry the ``shared`` flag.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

from .core import (
    GAnd,
    GCmp,
    GLit,
    GNot,
    GOr,
    Amas,
    LocalAgent,
    LocalTransition,
    UpdateValue,
)
from .logic import (
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
    Until,
    validate_formula,
)


class DslError(Exception):
    """Syntax or consistency problem in a model file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class TransitionSpec:
    """One transition line of a template, before aID substitution."""

    event_name: str
    shared: bool
    source: str
    target: str
    precondition: object = None
    updates: tuple = ()

    def __post_init__(self):
        if not self.event_name or not self.source or not self.target:
            raise DslError("transition needs event, source, and target names")
        seen = set()
        for var, _ in self.updates:
            if var in seen:
                raise DslError(
                    f"variable {var!r} assigned twice on event {self.event_name!r}")
            seen.add(var)


@dataclass
class AgentTemplate:
    name: str
    count: int
    init_state: str
    transitions: list
    protocol_groups: list

    def event_names(self):
        return {t.event_name for t in self.transitions}


@dataclass
class Directives:
    persistent: list = field(default_factory=list)
    reduction: list = field(default_factory=list)
    formulas: list = field(default_factory=list)
    show_epistemic: bool = False


@dataclass
class ModelSpec:
    templates: list
    directives: Directives
    source_name: str = field(default="<string>", compare=False)


_HEADER_RE = re.compile(r"^Agent\s+([A-Za-z_]\w*)\s*\[\s*(\d+)\s*\]\s*:$")
_INIT_RE = re.compile(r"^init\s+([A-Za-z_]\w*)$")
_DIRECTIVE_RE = re.compile(r"^([A-Z][A-Z0-9_]*)\s*:\s*(.*)$")
_IDENT_RE = re.compile(r"^[A-Za-z_]\w*$")
_GUARDED_RE = re.compile(r"^(\S+)\s*-\[(.*?)\]\s*(?:>|→)\s*(.*)$")
_PLAIN_RE = re.compile(r"^(\S+?)\s*(?:→|->)\s*(.*)$")
_TARGET_RE = re.compile(r"^(\S+?)\s*(?:\[(.*)\])?\s*$")

_GLOBAL_DIRECTIVES = ("PERSISTENT", "REDUCTION", "FORMULA", "SHOW_EPISTEMIC")


def _logical_lines(text):
    """Yield (line_number, content) with comments stripped and open-bracket
    lines joined to their continuations."""
    start = None
    parts = []
    out = []
    for idx, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if start is None:
            start = idx
        parts.append(line)
        joined = " ".join(parts)
        if joined.count("[") <= joined.count("]"):
            out.append((start, joined))
            start = None
            parts = []
    if parts:
        raise DslError("unclosed '[' runs to end of file", start)
    return out


def _ident(text, lineno, what):
    if not _IDENT_RE.match(text):
        raise DslError(f"{what} {text!r} is not a valid identifier", lineno)
    return text


def _parse_name_list(value, lineno, keyword):
    value = value.strip()
    if value.startswith("[") and value.endswith("]"):
        value = value[1:-1]
    names = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        names.append(_ident(chunk, lineno, f"{keyword} entry"))
    return names


def _parse_bool(value, lineno):
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise DslError(f"expected true or false, got {value!r}", lineno)


def _parse_protocol(value, lineno):
    value = value.strip()
    if not (value.startswith("[") and value.endswith("]")):
        raise DslError("PROTOCOL expects [[event, ...], ...]", lineno)
    groups = []
    current = None
    for ch in value[1:-1]:
        if ch == "[":
            if current is not None:
                raise DslError("PROTOCOL groups cannot nest", lineno)
            current = []
        elif ch == "]":
            if current is None:
                raise DslError("unbalanced ']' in PROTOCOL", lineno)
            groups.append(current)
            current = None
        elif current is not None:
            current.append(ch)
        elif ch not in ", \t":
            raise DslError(f"unexpected {ch!r} between PROTOCOL groups", lineno)
    if current is not None:
        raise DslError("unbalanced '[' in PROTOCOL", lineno)
    parsed = []
    for chars in groups:
        entries = []
        for chunk in "".join(chars).split(","):
            chunk = chunk.strip()
            if chunk:
                entries.append(_ident(chunk, lineno, "protocol entry"))
        if not entries:
            raise DslError("empty PROTOCOL group", lineno)
        parsed.append(entries)
    return parsed


_GUARD_TOKEN = re.compile(r"\s*(==|!=|<=|>=|<|>|&&|\|\||&|\||!|\(|\)|-?\d+|[A-Za-z_]\w*)")


def _lex(text, token_re, lineno, what):
    tokens = []
    pos = 0
    while pos < len(text):
        m = token_re.match(text, pos)
        if not m:
            rest = text[pos:].strip()
            if not rest:
                break
            raise DslError(f"cannot read {what} at {rest[:12]!r}", lineno)
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


class _GuardParser:
    """Recursive-descent parser for precondition expressions: comparisons of
    a variable against a literal, combined with !, &, | and parentheses."""

    def __init__(self, text, lineno):
        self.tokens = _lex(text, _GUARD_TOKEN, lineno, "precondition")
        self.pos = 0
        self.lineno = lineno

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, tok):
        got = self.take()
        if got != tok:
            raise DslError(f"expected {tok!r} in precondition, got {got!r}",
                           self.lineno)

    def parse(self):
        expr = self.parse_or()
        if self.peek() is not None:
            raise DslError(
                f"trailing {self.peek()!r} in precondition", self.lineno)
        return expr

    def parse_or(self):
        expr = self.parse_and()
        while self.peek() in ("|", "||"):
            self.take()
            expr = GOr(expr, self.parse_and())
        return expr

    def parse_and(self):
        expr = self.parse_unary()
        while self.peek() in ("&", "&&"):
            self.take()
            expr = GAnd(expr, self.parse_unary())
        return expr

    def parse_unary(self):
        tok = self.peek()
        if tok == "!":
            self.take()
            return GNot(self.parse_unary())
        if tok == "(":
            self.take()
            expr = self.parse_or()
            self.expect(")")
            return expr
        return self.parse_atom()

    def parse_atom(self):
        tok = self.take()
        if tok is None:
            raise DslError("precondition ends unexpectedly", self.lineno)
        if tok in ("true", "false"):
            return GLit(tok == "true")
        if not _IDENT_RE.match(tok):
            raise DslError(f"unexpected {tok!r} in precondition", self.lineno)
        op = self.peek()
        if op in ("==", "!=", "<", "<=", ">", ">="):
            self.take()
            value = self.take()
            if value is None:
                raise DslError("comparison misses a value", self.lineno)
            return GCmp(tok, op, self._literal(value))
        return GCmp(tok, "==", True)

    def _literal(self, tok):
        if tok == "true":
            return True
        if tok == "false":
            return False
        try:
            return int(tok)
        except ValueError:
            raise DslError(
                f"comparisons expect a literal value, got {tok!r}",
                self.lineno) from None


def _parse_guard(text, lineno):
    text = text.strip()
    if not text:
        raise DslError("empty precondition", lineno)
    return _GuardParser(text, lineno).parse()


def _parse_update_value(text, lineno):
    text = text.strip()
    if text.startswith("?"):
        return UpdateValue.read(_ident(text[1:], lineno, "read variable"))
    if text == "true":
        return UpdateValue.lit(True)
    if text == "false":
        return UpdateValue.lit(False)
    try:
        value = int(text)
    except ValueError:
        raise DslError(f"update value {text!r} is not a literal or ?read",
                       lineno) from None
    if not -(2 ** 31) <= value < 2 ** 31:
        raise DslError(f"integer {value} outside the 32-bit range", lineno)
    return UpdateValue.lit(value)


def _parse_updates(text, lineno):
    updates = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        var, sep, value = chunk.partition("=")
        if not sep:
            raise DslError(f"update {chunk!r} misses '='", lineno)
        updates.append((_ident(var.strip(), lineno, "update variable"),
                        _parse_update_value(value, lineno)))
    return tuple(updates)


def _parse_transition(line, lineno):
    head, sep, rest = line.partition(":")
    if not sep:
        raise DslError(f"expected ':' after the event name in {line!r}", lineno)
    words = head.split()
    shared = False
    if len(words) == 2 and words[0] == "shared":
        shared = True
        words = words[1:]
    if len(words) != 1:
        raise DslError(f"malformed event declaration {head.strip()!r}", lineno)
    event = _ident(words[0], lineno, "event name")

    rest = rest.strip()
    guard = None
    m = _GUARDED_RE.match(rest)
    if m:
        source, guard_text, tail = m.groups()
        guard = _parse_guard(guard_text, lineno)
    else:
        m = _PLAIN_RE.match(rest)
        if not m:
            raise DslError(f"missing arrow in transition {line!r}", lineno)
        source, tail = m.groups()
    source = _ident(source, lineno, "source state")

    mt = _TARGET_RE.match(tail.strip())
    if not mt:
        raise DslError(f"malformed transition target {tail!r}", lineno)
    target, update_text = mt.groups()
    target = _ident(target, lineno, "target state")
    updates = _parse_updates(update_text, lineno) if update_text else ()
    try:
        return TransitionSpec(event, shared, source, target, guard, updates)
    except DslError as exc:
        raise DslError(str(exc), lineno) from None


def parse_model_file(text, source_name="<string>"):
    """Parse a complete model file into a ModelSpec."""
    templates = []
    by_name = {}
    directives = Directives()
    current = None
    need_init = False

    for lineno, line in _logical_lines(text):
        m = _HEADER_RE.match(line)
        if m:
            if need_init:
                raise DslError(
                    f"template {current.name!r} misses its init line", lineno)
            name, count = m.group(1), int(m.group(2))
            if count < 1:
                raise DslError(f"agent count must be at least 1, got {count}",
                               lineno)
            if name in by_name:
                raise DslError(f"duplicate template name {name!r}", lineno)
            current = AgentTemplate(name, count, "", [], [])
            by_name[name] = current
            templates.append(current)
            need_init = True
            continue

        m = _INIT_RE.match(line)
        if m:
            if current is None:
                raise DslError("init line outside any agent template", lineno)
            if not need_init:
                raise DslError(
                    f"template {current.name!r} has a second init line", lineno)
            current.init_state = m.group(1)
            need_init = False
            continue
        if need_init:
            raise DslError(
                f"template {current.name!r} misses its init line "
                f"(found {line!r} instead)", lineno)

        m = _DIRECTIVE_RE.match(line)
        if m and (m.group(1) == "PROTOCOL" or m.group(1) in _GLOBAL_DIRECTIVES):
            keyword, value = m.group(1), m.group(2).strip()
            if keyword == "PROTOCOL":
                if current is None:
                    raise DslError("PROTOCOL outside any agent template",
                                   lineno)
                current.protocol_groups.extend(_parse_protocol(value, lineno))
            else:
                current = None
                if keyword == "FORMULA":
                    if not value:
                        raise DslError("FORMULA needs a formula", lineno)
                    directives.formulas.append(value)
                elif keyword == "SHOW_EPISTEMIC":
                    directives.show_epistemic = _parse_bool(value, lineno)
                else:
                    target = (directives.persistent if keyword == "PERSISTENT"
                              else directives.reduction)
                    for name in _parse_name_list(value, lineno, keyword):
                        if name in target:
                            raise DslError(
                                f"{name!r} listed twice under {keyword}",
                                lineno)
                        target.append(name)
            continue

        if current is None:
            raise DslError(
                f"expected an Agent header or directive, got {line!r}", lineno)
        current.transitions.append(_parse_transition(line, lineno))

    if need_init:
        raise DslError(f"template {current.name!r} misses its init line")
    return ModelSpec(templates, directives, source_name)


def _substitute(text, instance):
    return text.replace("aID", instance)


def _substitute_guard(guard, instance):
    if guard is None or isinstance(guard, GLit):
        return guard
    if isinstance(guard, GCmp):
        return GCmp(_substitute(guard.var, instance), guard.op, guard.value)
    if isinstance(guard, GNot):
        return GNot(_substitute_guard(guard.sub, instance))
    if isinstance(guard, GAnd):
        return GAnd(_substitute_guard(guard.left, instance),
                    _substitute_guard(guard.right, instance))
    if isinstance(guard, GOr):
        return GOr(_substitute_guard(guard.left, instance),
                   _substitute_guard(guard.right, instance))
    raise DslError(f"unknown precondition node {guard!r}")


def _substitute_update(update, instance):
    var, value = update
    if value.kind == "read":
        value = UpdateValue.read(_substitute(value.var, instance))
    return (_substitute(var, instance), value)


def resolve_protocol_entry(template, entry):
    """Map a protocol entry to the declared event it names.

    An entry may be the exact event name or a shorthand: it resolves to the
    unique declared event that starts with the entry followed by ``_``.
    """
    events = template.event_names()
    if entry in events:
        return entry
    matches = sorted(e for e in events if e.startswith(entry + "_"))
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise DslError(
            f"protocol entry {entry!r} names no event of template "
            f"{template.name!r}")
    raise DslError(
        f"protocol entry {entry!r} is ambiguous in template "
        f"{template.name!r}: {matches}")


def _compile_repertoire(transitions, groups):
    """Build the per-state choice lists from instantiated protocol groups."""
    available = {}
    for t in transitions:
        available.setdefault(t.source, set()).add(t.event)
    repertoire = {}
    for state, events in available.items():
        choices = []
        covered = set()
        for group in groups:
            overlap = frozenset(group & events)
            if overlap and overlap not in choices:
                choices.append(overlap)
                covered |= overlap
        for event in sorted(events - covered):
            choices.append(frozenset({event}))
        repertoire[state] = tuple(choices)
    return repertoire


def instantiate(spec, strict=False):
    """Expand every template into concrete agents and assemble the system.

    With strict=True a shared event that ends up with a single declaring
    agent is an error; otherwise it produces a warning and stays private.
    """
    if not spec.templates:
        raise DslError(f"{spec.source_name}: no agent templates declared")
    agents = []
    shared_flags = {}
    declared_by = {}
    for template in spec.templates:
        resolved = [[resolve_protocol_entry(template, e) for e in group]
                    for group in template.protocol_groups]
        for index in range(1, template.count + 1):
            instance = f"{template.name}{index}"
            transitions = []
            for ts in template.transitions:
                event = _substitute(ts.event_name, instance)
                transitions.append(LocalTransition(
                    event,
                    _substitute(ts.source, instance),
                    _substitute(ts.target, instance),
                    _substitute_guard(ts.precondition, instance),
                    tuple(_substitute_update(u, instance)
                          for u in ts.updates)))
                flags = shared_flags.setdefault(event, set())
                flags.add(ts.shared)
                owners = declared_by.setdefault(event, [])
                if instance not in owners:
                    owners.append(instance)
            groups = [{_substitute(e, instance) for e in group}
                      for group in resolved]
            agents.append(LocalAgent(
                instance,
                _substitute(template.init_state, instance),
                tuple(transitions),
                _compile_repertoire(transitions, groups)))

    for event, owners in sorted(declared_by.items()):
        flags = shared_flags[event]
        if len(owners) > 1 and False in flags:
            raise DslError(
                f"event {event!r} is declared by {owners} but not marked "
                f"shared everywhere")
        if len(owners) == 1 and flags == {True}:
            message = (f"shared event {event!r} has no synchronization "
                       f"partner (only {owners[0]} declares it)")
            if strict:
                raise DslError(message)
            warnings.warn(message, stacklevel=2)

    return Amas(tuple(agents),
                persistent=frozenset(spec.directives.persistent),
                reduction_vars=tuple(spec.directives.reduction))


def assigned_variable_names(spec):
    """All variable names assigned by any instantiated agent, sorted."""
    names = set()
    for template in spec.templates:
        for index in range(1, template.count + 1):
            instance = f"{template.name}{index}"
            for ts in template.transitions:
                for var, _ in ts.updates:
                    names.add(_substitute(var, instance))
    return sorted(names)


def validate(spec):
    """Collect consistency problems; an empty list means the spec is clean."""
    problems = []
    if not spec.templates:
        problems.append("no agent templates declared")
    seen = set()
    for template in spec.templates:
        if template.name in seen:
            problems.append(f"duplicate template name {template.name!r}")
        seen.add(template.name)
        if template.count < 1:
            problems.append(
                f"template {template.name!r} has count {template.count}")
        if not template.init_state:
            problems.append(f"template {template.name!r} has no init state")
        else:
            touched = {t.source for t in template.transitions}
            touched |= {t.target for t in template.transitions}
            if template.transitions and template.init_state not in touched:
                problems.append(
                    f"init state {template.init_state!r} of template "
                    f"{template.name!r} appears in no transition")
        for group in template.protocol_groups:
            for entry in group:
                try:
                    resolve_protocol_entry(template, entry)
                except DslError as exc:
                    problems.append(str(exc))

    declared_by = {}
    shared_flags = {}
    literal_types = {}
    for template in spec.templates:
        for index in range(1, template.count + 1):
            instance = f"{template.name}{index}"
            for ts in template.transitions:
                event = _substitute(ts.event_name, instance)
                declared_by.setdefault(event, set()).add(instance)
                shared_flags.setdefault(event, set()).add(ts.shared)
                for var, value in ts.updates:
                    if value.kind == "lit":
                        kind = "bool" if isinstance(value.value, bool) else "int"
                        literal_types.setdefault(
                            _substitute(var, instance), set()).add(kind)
                guard = _substitute_guard(ts.precondition, instance)
                for var, kind in _guard_literal_types(guard):
                    literal_types.setdefault(var, set()).add(kind)
    for event in sorted(declared_by):
        owners = sorted(declared_by[event])
        flags = shared_flags[event]
        if len(owners) > 1 and False in flags:
            problems.append(
                f"event {event!r} is declared by {owners} but not marked "
                f"shared everywhere")
        if len(owners) == 1 and flags == {True}:
            problems.append(
                f"shared event {event!r} has no synchronization partner")
    for var in sorted(literal_types):
        if len(literal_types[var]) > 1:
            problems.append(
                f"variable {var!r} is used both as boolean and as integer")

    for keyword, names in (("PERSISTENT", spec.directives.persistent),
                           ("REDUCTION", spec.directives.reduction)):
        if len(names) != len(set(names)):
            problems.append(f"duplicate names under {keyword}")
    return problems


def _guard_literal_types(guard):
    if guard is None or isinstance(guard, GLit):
        return
    if isinstance(guard, GCmp):
        if isinstance(guard.value, bool):
            yield guard.var, "bool"
        else:
            yield guard.var, "int"
    elif isinstance(guard, GNot):
        yield from _guard_literal_types(guard.sub)
    else:
        yield from _guard_literal_types(guard.left)
        yield from _guard_literal_types(guard.right)


def _value_text(value):
    if value is True:
        return "true"
    if value is False:
        return "false"
    return str(value)


def guard_to_str(guard):
    """Render a precondition so that parsing it back gives an equal tree."""
    if isinstance(guard, GLit):
        return _value_text(guard.value)
    if isinstance(guard, GCmp):
        return f"{guard.var}{guard.op}{_value_text(guard.value)}"
    if isinstance(guard, GNot):
        return f"!({guard_to_str(guard.sub)})"
    if isinstance(guard, GAnd):
        return f"({guard_to_str(guard.left)} & {guard_to_str(guard.right)})"
    if isinstance(guard, GOr):
        return f"({guard_to_str(guard.left)} | {guard_to_str(guard.right)})"
    raise DslError(f"unknown precondition node {guard!r}")


def _update_text(update):
    var, value = update
    if value.kind == "read":
        return f"{var}=?{value.var}"
    return f"{var}={_value_text(value.value)}"


def transition_to_str(ts):
    head = ("shared " if ts.shared else "") + ts.event_name
    if ts.precondition is None:
        middle = f"{ts.source} → {ts.target}"
    else:
        middle = f"{ts.source} -[{guard_to_str(ts.precondition)}]> {ts.target}"
    tail = ""
    if ts.updates:
        tail = " [" + ", ".join(_update_text(u) for u in ts.updates) + "]"
    return f"{head}: {middle}{tail}"


def pretty_print(spec):
    """Render a ModelSpec back to file text; reparsing yields an equal spec."""
    lines = []
    for template in spec.templates:
        lines.append(f"Agent {template.name} [{template.count}]:")
        lines.append(f"init {template.init_state}")
        for ts in template.transitions:
            lines.append(transition_to_str(ts))
        if template.protocol_groups:
            groups = ", ".join(
                "[" + ", ".join(group) + "]"
                for group in template.protocol_groups)
            lines.append(f"PROTOCOL: [{groups}]")
        lines.append("")
    d = spec.directives
    if d.persistent:
        lines.append("PERSISTENT: " + ", ".join(d.persistent))
    if d.reduction:
        lines.append("REDUCTION: " + ", ".join(d.reduction))
    for formula in d.formulas:
        lines.append("FORMULA: " + formula)
    if d.show_epistemic:
        lines.append("SHOW_EPISTEMIC: true")
    return "\n".join(lines).rstrip("\n") + "\n"


_FORMULA_TOKEN = re.compile(
    r"\s*(<<|>>|->|\(|\)|!|&|\||=|,|-?\d+|[A-Za-z_]\w*|\S)")


def parse_formula(text):
    """Parse formula text into the AST checked by the verification engines.

    Grammar, loosest to tightest: ``->`` (right associative), ``|``, ``&``,
    infix ``U``, then the unary operators ``!``, ``F``, ``G``, ``K_Agent``
    and ``<<Agent, ...>>``.  Atoms are ``var=value`` or a bare ``var`` which
    reads as ``var=true``.  A coalition's body extends through an infix
    ``U``, so ``<<A>> p U q`` needs no extra parentheses.
    """
    tokens = []
    pos = 0
    while pos < len(text):
        m = _FORMULA_TOKEN.match(text, pos)
        if not m:
            break
        tok = m.group(1)
        pos = m.end()
        if tok.strip():
            tokens.append(tok)

    state = {"pos": 0}

    def peek():
        return tokens[state["pos"]] if state["pos"] < len(tokens) else None

    def take():
        tok = peek()
        state["pos"] += 1
        return tok

    def expect(wanted):
        got = take()
        if got != wanted:
            raise FormulaError(f"expected {wanted!r}, got {got!r}")

    def parse_implies():
        left = parse_or()
        if peek() == "->":
            take()
            return Implies(left, parse_implies())
        return left

    def parse_or():
        expr = parse_and()
        while peek() == "|":
            take()
            expr = Or(expr, parse_and())
        return expr

    def parse_and():
        expr = parse_until()
        while peek() == "&":
            take()
            expr = And(expr, parse_until())
        return expr

    def parse_until():
        expr = parse_unary()
        if peek() == "U":
            take()
            return Until(expr, parse_until())
        return expr

    def take_agent():
        tok = take()
        if tok is None or not _IDENT_RE.match(tok):
            raise FormulaError(f"expected an agent name, got {tok!r}")
        return tok

    def parse_unary():
        tok = peek()
        if tok is None:
            raise FormulaError("formula ends unexpectedly")
        if tok == "!":
            take()
            return Not(parse_unary())
        if tok == "(":
            take()
            expr = parse_implies()
            expect(")")
            return expr
        if tok == "<<":
            take()
            names = []
            if peek() != ">>":
                names.append(take_agent())
                while peek() == ",":
                    take()
                    names.append(take_agent())
            expect(">>")
            return Coalition(tuple(names), parse_until())
        if tok == "F":
            take()
            return Eventually(parse_unary())
        if tok == "G":
            take()
            return Always(parse_unary())
        if tok == "X":
            raise FormulaError(
                "the next-step operator X is not supported: the logic here "
                "is built for asynchronous runs, where a single global step "
                "carries no timing meaning")
        if tok == "U":
            raise FormulaError(
                "'U' is the infix until operator and needs a left operand")
        if tok.startswith("K_") and len(tok) > 2:
            take()
            return Know(tok[2:], parse_unary())
        if tok == "true":
            take()
            return Const(True)
        if tok == "false":
            take()
            return Const(False)
        if _IDENT_RE.match(tok):
            take()
            if peek() == "=":
                take()
                return Atom(tok, _atom_value(take()))
            return Atom(tok, True)
        raise FormulaError(f"unexpected token {tok!r}")

    def _atom_value(tok):
        if tok == "true":
            return True
        if tok == "false":
            return False
        try:
            return int(tok)
        except (TypeError, ValueError):
            raise FormulaError(
                f"atom values are literals, got {tok!r}") from None

    formula = parse_implies()
    if peek() is not None:
        raise FormulaError(f"trailing {peek()!r} after the formula")
    validate_formula(formula)
    return formula
