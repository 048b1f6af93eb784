"""Syntactically co-safe LTL: parsing, formula progression and DFA construction.

Letters of the automaton alphabet are single observations (exactly one atom
holds per step).  Formulas are kept in a normal form so that structural
equality can be used to identify automaton states.
"""
from __future__ import annotations

import re
from collections import deque
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterable, Sequence

NONE_OBS = "none"
OUT_OBS = "out"

_KEYWORDS = {"X", "F", "U", "true", "false"}


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class StateCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Formula:
    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class NegAtom(Formula):
    name: str


@dataclass(frozen=True)
class And(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True)
class Or(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula


TRUE = TrueF()
FALSE = FalseF()


@lru_cache(maxsize=1 << 16)
def to_text(phi: Formula) -> str:
    """Fully parenthesised concrete syntax; ``parse(to_text(phi)) == phi``."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, FalseF):
        return "false"
    if isinstance(phi, Atom):
        return phi.name
    if isinstance(phi, NegAtom):
        return "!" + phi.name
    if isinstance(phi, And):
        return "(" + " & ".join(to_text(a) for a in phi.args) + ")"
    if isinstance(phi, Or):
        return "(" + " | ".join(to_text(a) for a in phi.args) + ")"
    if isinstance(phi, Next):
        return "X " + _wrap(phi.arg)
    if isinstance(phi, Eventually):
        return "F " + _wrap(phi.arg)
    if isinstance(phi, Until):
        return "(" + to_text(phi.left) + " U " + to_text(phi.right) + ")"
    raise TypeError(f"not a formula: {phi!r}")


def _wrap(phi: Formula) -> str:
    s = to_text(phi)
    if isinstance(phi, (Next, Eventually)):
        return "(" + s + ")"
    return s


# -- normalising constructors -------------------------------------------------

# Boolean structure is kept in disjunctive normal form: an Or of Ands of
# temporal literals (atoms, negated atoms, X, F, U).  Progressed formulas are
# then sets of sets over a finite closure, so the automaton is finite.

def _clauses(phi: Formula) -> set[frozenset[Formula]]:
    if isinstance(phi, TrueF):
        return {frozenset()}
    if isinstance(phi, FalseF):
        return set()
    if isinstance(phi, Or):
        out: set[frozenset[Formula]] = set()
        for a in phi.args:
            out |= _clauses(a)
        return out
    if isinstance(phi, And):
        return {frozenset(phi.args)}
    return {frozenset([phi])}


def _from_clauses(clauses: set[frozenset[Formula]]) -> Formula:
    # absorption: a | (a & b) == a
    kept = [c for c in clauses if not any(d < c for d in clauses)]
    if not kept:
        return FALSE
    if frozenset() in kept:
        return TRUE
    terms = []
    for c in kept:
        lits = sorted(c, key=to_text)
        terms.append(lits[0] if len(lits) == 1 else And(tuple(lits)))
    if len(terms) == 1:
        return terms[0]
    return Or(tuple(sorted(terms, key=to_text)))


def conj(*args: Formula) -> Formula:
    acc: set[frozenset[Formula]] = {frozenset()}
    for a in args:
        acc = {x | y for x in acc for y in _clauses(a)}
        if not acc:
            return FALSE
    return _from_clauses(acc)


def disj(*args: Formula) -> Formula:
    acc: set[frozenset[Formula]] = set()
    for a in args:
        acc |= _clauses(a)
    return _from_clauses(acc)


def until(left: Formula, right: Formula) -> Formula:
    if isinstance(right, FalseF):
        return FALSE
    if isinstance(left, FalseF) and not isinstance(right, TrueF):
        # strong until degenerates to its right operand, except on the empty word
        return right
    return Until(left, right)


def eventually(arg: Formula) -> Formula:
    if isinstance(arg, (FalseF, Eventually)):
        return arg
    return Eventually(arg)


def next_(arg: Formula) -> Formula:
    if isinstance(arg, FalseF):
        return FALSE
    return Next(arg)


def normalize(phi: Formula) -> Formula:
    if isinstance(phi, (TrueF, FalseF, Atom, NegAtom)):
        return phi
    if isinstance(phi, And):
        return conj(*(normalize(a) for a in phi.args))
    if isinstance(phi, Or):
        return disj(*(normalize(a) for a in phi.args))
    if isinstance(phi, Next):
        return next_(normalize(phi.arg))
    if isinstance(phi, Eventually):
        return eventually(normalize(phi.arg))
    if isinstance(phi, Until):
        return until(normalize(phi.left), normalize(phi.right))
    raise TypeError(f"not a formula: {phi!r}")


def atoms(phi: Formula) -> set[str]:
    if isinstance(phi, (Atom, NegAtom)):
        return {phi.name}
    if isinstance(phi, (And, Or)):
        out: set[str] = set()
        for a in phi.args:
            out |= atoms(a)
        return out
    if isinstance(phi, (Next, Eventually)):
        return atoms(phi.arg)
    if isinstance(phi, Until):
        return atoms(phi.left) | atoms(phi.right)
    return set()


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()]))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise FormulaSyntaxError(f"unexpected character {text[bad]!r}", bad)
        tok = m.group("name") or m.group("op")
        tokens.append((tok, m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(("<eof>", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> str:
        return self.toks[self.i][0]

    def pos(self) -> int:
        return self.toks[self.i][1]

    def take(self, expected: str | None = None) -> str:
        tok = self.peek()
        if expected is not None and tok != expected:
            raise FormulaSyntaxError(f"expected {expected!r}, found {tok!r}", self.pos())
        self.i += 1
        return tok

    def parse(self) -> Formula:
        phi = self.until()
        if self.peek() != "<eof>":
            raise FormulaSyntaxError(f"unexpected token {self.peek()!r}", self.pos())
        return phi

    # U binds weakest and associates to the right
    def until(self) -> Formula:
        left = self.or_()
        if self.peek() == "U":
            self.take()
            return until(left, self.until())
        return left

    def or_(self) -> Formula:
        args = [self.and_()]
        while self.peek() == "|":
            self.take()
            args.append(self.and_())
        return disj(*args)

    def and_(self) -> Formula:
        args = [self.unary()]
        while self.peek() == "&":
            self.take()
            args.append(self.unary())
        return conj(*args)

    def unary(self) -> Formula:
        tok = self.peek()
        if tok == "!":
            pos = self.pos()
            self.take()
            operand = self.unary()
            if not isinstance(operand, Atom):
                raise FormulaSyntaxError("negation is only allowed on atoms", pos)
            return NegAtom(operand.name)
        if tok == "X":
            self.take()
            return next_(self.unary())
        if tok == "F":
            self.take()
            return eventually(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        tok = self.peek()
        if tok == "(":
            self.take()
            phi = self.until()
            self.take(")")
            return phi
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok == "<eof>" or tok in _KEYWORDS or not re.fullmatch(r"[A-Za-z_]\w*", tok):
            raise FormulaSyntaxError(f"expected an atom or '(', found {tok!r}", self.pos())
        self.take()
        return Atom(tok)


def parse(text: str) -> Formula:
    """Parse a formula.

    Grammar: atoms are bare identifiers; ``!`` (atoms only) binds tightest,
    then the prefix operators ``X`` and ``F``, then ``&``, ``|`` and finally
    ``U`` (right associative).  ``true`` is the constant.
    """
    return _Parser(text).parse()


# -- progression and automaton --------------------------------------------------

def progress(phi: Formula, obs: str) -> Formula:
    """One-step derivative of ``phi`` after observing ``obs``."""
    if isinstance(phi, (TrueF, FalseF)):
        return phi
    if isinstance(phi, Atom):
        return TRUE if phi.name == obs else FALSE
    if isinstance(phi, NegAtom):
        return FALSE if phi.name == obs else TRUE
    if isinstance(phi, And):
        return conj(*(progress(a, obs) for a in phi.args))
    if isinstance(phi, Or):
        return disj(*(progress(a, obs) for a in phi.args))
    if isinstance(phi, Next):
        return phi.arg
    if isinstance(phi, Until):
        return disj(progress(phi.right, obs), conj(progress(phi.left, obs), phi))
    if isinstance(phi, Eventually):
        return disj(progress(phi.arg, obs), phi)
    raise TypeError(f"not a formula: {phi!r}")


@dataclass(frozen=True)
class Fsa:
    """Deterministic automaton whose states are progressed formulas.

    States are referred to by integer index; ``states[i]`` is the formula that
    remains to be satisfied in state ``i``.
    """

    states: tuple[Formula, ...]
    initial: int
    alphabet: tuple[str, ...]
    delta: dict[tuple[int, str], int] = field(compare=False)
    accepting: frozenset[int]

    def step(self, state: int, letter: str) -> int:
        try:
            return self.delta[(state, letter)]
        except KeyError:
            raise KeyError(f"letter {letter!r} not in alphabet {self.alphabet}") from None

    def run(self, word: Iterable[str]) -> int:
        s = self.initial
        for letter in word:
            s = self.step(s, letter)
        return s

    def accepts(self, word: Sequence[str]) -> bool:
        s = self.initial
        if s in self.accepting:
            return True
        for letter in word:
            s = self.step(s, letter)
            if s in self.accepting:
                return True
        return False

    def is_trap(self, state: int) -> bool:
        return isinstance(self.states[state], FalseF)

    def index(self, phi: Formula) -> int:
        return self.states.index(phi)

    def dump(self) -> str:
        lines = [f"# fsa states={len(self.states)} initial={self.initial} "
                 f"alphabet={','.join(self.alphabet)}"]
        for i, phi in enumerate(self.states):
            flag = " accepting" if i in self.accepting else ""
            lines.append(f"state {i} \"{to_text(phi)}\"{flag}")
        for i in range(len(self.states)):
            for a in self.alphabet:
                lines.append(f"{i} -- {a} --> {self.delta[(i, a)]}")
        return "\n".join(lines) + "\n"


def default_alphabet(phi: Formula, extra: Iterable[str] = ()) -> tuple[str, ...]:
    names = set(atoms(phi)) | set(extra) | {NONE_OBS, OUT_OBS}
    return tuple(sorted(names))


def to_fsa(phi: Formula, alphabet: Iterable[str] | None = None, max_states: int = 10_000) -> Fsa:
    phi = normalize(phi)
    letters = default_alphabet(phi) if alphabet is None else tuple(sorted(set(alphabet)))
    missing = atoms(phi) - set(letters)
    if missing:
        raise ValueError(f"atoms {sorted(missing)} are not in the alphabet")

    index = {phi: 0}
    states = [phi]
    delta: dict[tuple[int, str], int] = {}
    queue = deque([phi])
    while queue:
        cur = queue.popleft()
        i = index[cur]
        for a in letters:
            nxt = progress(cur, a)
            j = index.get(nxt)
            if j is None:
                if len(states) >= max_states:
                    raise StateCapExceeded(f"automaton exceeds {max_states} states")
                j = index[nxt] = len(states)
                states.append(nxt)
                queue.append(nxt)
            delta[(i, a)] = j
    accepting = frozenset(i for i, s in enumerate(states) if isinstance(s, TrueF))
    return Fsa(tuple(states), 0, letters, delta, accepting)
