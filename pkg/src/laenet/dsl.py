"""A small typed expression language for reward candidates.

Programs are parsed into an immutable tree, type-checked (scalar vs per-user
vector vs boolean), and evaluated against a :class:`~laenet.rewards.RewardContext`.
Evaluation can only read the context and the named parameters; there is no
attribute access, no assignment and no host-language escape.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .rewards import RewardContext, argmax, argmin, var_q, vsum

MAX_DEPTH = 32
MAX_NODES = 512

GRAMMAR = """\
program    := compare
compare    := additive (("<" | "<=" | ">" | ">=" | "==" | "!=") additive)?
additive   := term (("+" | "-") term)*
term       := unary (("*" | "/") unary)*
unary      := "-" unary | postfix
postfix    := primary ("[" compare "]")*
primary    := NUMBER | NAME | NAME "(" [compare ("," compare)*] ")" | "(" compare ")"

Types: scalar, vector (one entry per user), bool-scalar, bool-vector.
Arithmetic broadcasts scalar against vector; bools only feed indicator().

Vector features: backlog, next_backlog, init_backlog, rate, transmitted,
                 dist_to, delta_dist_to
Scalar features: slot, num_users, slot_len
Parameters:      q, mu, gamma_d, backlog_scale
Functions:
  sum(v) mean(v) max(v) min(v)         vector -> scalar
  max(x, y) min(x, y)                  elementwise, broadcasting
  var_q(v, q)                          empirical q-quantile of v
  argmax(v) argmin(v)                  index (ties -> lowest index)
  clamp(x, lo, hi) abs(x) sqrt(x) log(x) exp(x)
  indicator(b)                         1.0 where b holds, else 0.0
  v[i]  or  feature(i)                 element i of a vector
Division by zero, sqrt/log of out-of-domain values, bad indices and
non-finite results are evaluation errors.
"""

SCALAR, VECTOR, BOOL_S, BOOL_V = "scalar", "vector", "bool-scalar", "bool-vector"

VECTOR_FEATURES = ("backlog", "next_backlog", "init_backlog", "rate", "transmitted",
                   "dist_to", "delta_dist_to")
SCALAR_FEATURES = ("slot", "num_users", "slot_len")
DEFAULT_PARAMS = ("q", "mu", "gamma_d", "backlog_scale")


class DslError(Exception):
    def __init__(self, message: str, span: "SourceSpan | None" = None):
        self.message = message
        self.span = span
        loc = f" at bytes {span.start}-{span.end}" if span is not None else ""
        super().__init__(message + loc)


class DslSyntaxError(DslError):
    def __init__(self, message, span=None, expected: Sequence[str] = ()):
        self.expected = tuple(expected)
        if expected:
            message = f"{message} (expected {', '.join(expected)})"
        super().__init__(message, span)


class DslTypeError(DslError):
    pass


class DslLimitError(DslError):
    pass


class DslEvalError(DslError):
    """Runtime domain error; marks a candidate invalid instead of crashing."""


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int


# --------------------------------------------------------------------------
# Tree
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Name:
    name: str
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: object
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: object
    right: object
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Index:
    target: object
    index: object
    span: SourceSpan | None = field(default=None, compare=False)


def _children(node) -> tuple:
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare)):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    if isinstance(node, Index):
        return (node.target, node.index)
    return ()


def referenced_names(node) -> set[str]:
    out = {node.name} if isinstance(node, Name) else set()
    for c in _children(node):
        out |= referenced_names(c)
    return out


def node_count(node) -> int:
    return 1 + sum(node_count(c) for c in _children(node))


def depth(node) -> int:
    kids = _children(node)
    return 1 + (max(depth(c) for c in kids) if kids else 0)


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|!=|[-+*/()\[\],<>])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    span: SourceSpan


def _byte_offsets(text: str) -> list[int]:
    offs = [0]
    for ch in text:
        offs.append(offs[-1] + len(ch.encode("utf-8")))
    return offs


def _lex(text: str) -> list[_Tok]:
    offs = _byte_offsets(text)
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", SourceSpan(offs[pos], offs[pos + 1]))
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), SourceSpan(offs[m.start()], offs[m.end()])))
        pos = m.end()
    toks.append(_Tok("eof", "", SourceSpan(offs[-1], offs[-1])))
    return toks


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0
        self.level = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text or t.kind == "eof":
            raise DslSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.span, expected=(repr(text),))
        return self.take()

    def enter(self, span: SourceSpan) -> None:
        self.level += 1
        if self.level > MAX_DEPTH:
            raise DslLimitError(f"nesting deeper than {MAX_DEPTH}", span)

    def leave(self) -> None:
        self.level -= 1

    def program(self):
        node = self.compare()
        t = self.peek()
        if t.kind != "eof":
            raise DslSyntaxError(f"unexpected {t.text!r}", t.span, expected=("operator", "end of input"))
        return node

    def compare(self):
        left = self.additive()
        t = self.peek()
        if t.kind == "op" and t.text in _CMP_OPS:
            self.take()
            right = self.additive()
            return Compare(t.text, left, right, SourceSpan(_span(left).start, _span(right).end))
        return left

    def additive(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            right = self.term()
            node = BinOp(op, node, right, SourceSpan(_span(node).start, _span(right).end))
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            op = self.take().text
            right = self.unary()
            node = BinOp(op, node, right, SourceSpan(_span(node).start, _span(right).end))
        return node

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.take()
            self.enter(t.span)
            operand = self.unary()
            self.leave()
            return Neg(operand, SourceSpan(t.span.start, _span(operand).end))
        return self.postfix()

    def postfix(self):
        node = self.primary()
        while self.peek().text == "[" and self.peek().kind == "op":
            self.take()
            self.enter(_span(node))
            idx = self.compare()
            self.leave()
            close = self.expect("]")
            node = Index(node, idx, SourceSpan(_span(node).start, close.span.end))
        return node

    def primary(self):
        t = self.take()
        if t.kind == "num":
            return Num(float(t.text), t.span)
        if t.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                self.take()
                self.enter(t.span)
                args = []
                if not (self.peek().kind == "op" and self.peek().text == ")"):
                    args.append(self.compare())
                    while self.peek().kind == "op" and self.peek().text == ",":
                        self.take()
                        args.append(self.compare())
                self.leave()
                close = self.expect(")")
                span = SourceSpan(t.span.start, close.span.end)
                if t.text in VECTOR_FEATURES:
                    if len(args) != 1:
                        raise DslTypeError(f"{t.text}(i) takes exactly one index", span)
                    return Index(Name(t.text, t.span), args[0], span)
                return Call(t.text, tuple(args), span)
            return Name(t.text, t.span)
        if t.kind == "op" and t.text == "(":
            self.enter(t.span)
            node = self.compare()
            self.leave()
            self.expect(")")
            return node
        raise DslSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.span,
                             expected=("number", "name", "'('", "'-'"))


def _span(node) -> SourceSpan:
    return node.span if node.span is not None else SourceSpan(0, 0)


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------

def _broadcast(a: str, b: str, span) -> str:
    if a in (BOOL_S, BOOL_V) or b in (BOOL_S, BOOL_V):
        raise DslTypeError("boolean used as a number; wrap it in indicator()", span)
    return VECTOR if VECTOR in (a, b) else SCALAR


def _numeric(t: str, span, what: str) -> None:
    if t not in (SCALAR, VECTOR):
        raise DslTypeError(f"{what} needs a number, got {t}", span)


_REDUCERS = ("sum", "mean")
_UNARY_MATH = ("abs", "sqrt", "log", "exp")


def typecheck(node, params: Sequence[str] = DEFAULT_PARAMS) -> str:
    if isinstance(node, Num):
        return SCALAR
    if isinstance(node, Name):
        if node.name in VECTOR_FEATURES:
            return VECTOR
        if node.name in SCALAR_FEATURES or node.name in params:
            return SCALAR
        raise DslTypeError(f"unknown identifier {node.name!r}", node.span)
    if isinstance(node, Neg):
        t = typecheck(node.operand, params)
        _numeric(t, node.span, "negation")
        return t
    if isinstance(node, BinOp):
        return _broadcast(typecheck(node.left, params), typecheck(node.right, params), node.span)
    if isinstance(node, Compare):
        t = _broadcast(typecheck(node.left, params), typecheck(node.right, params), node.span)
        return BOOL_V if t == VECTOR else BOOL_S
    if isinstance(node, Index):
        if typecheck(node.target, params) != VECTOR:
            raise DslTypeError("only vectors can be indexed", node.span)
        if typecheck(node.index, params) != SCALAR:
            raise DslTypeError("index must be a scalar", node.span)
        return SCALAR
    if isinstance(node, Call):
        f, args = node.func, node.args
        ts = [typecheck(a, params) for a in args]

        def arity(*ok):
            if len(args) not in ok:
                raise DslTypeError(f"{f}() takes {' or '.join(map(str, ok))} argument(s), got {len(args)}", node.span)

        if f in _REDUCERS or f in ("argmax", "argmin"):
            arity(1)
            if ts[0] != VECTOR:
                raise DslTypeError(f"{f}() needs a vector", node.span)
            return SCALAR
        if f in ("max", "min"):
            arity(1, 2)
            if len(args) == 1:
                if ts[0] != VECTOR:
                    raise DslTypeError(f"{f}(v) needs a vector; use {f}(x, y) for scalars", node.span)
                return SCALAR
            return _broadcast(ts[0], ts[1], node.span)
        if f == "var_q":
            arity(2)
            if ts[0] != VECTOR or ts[1] != SCALAR:
                raise DslTypeError("var_q(v, q) needs a vector and a scalar", node.span)
            return SCALAR
        if f == "clamp":
            arity(3)
            out = _broadcast(_broadcast(ts[0], ts[1], node.span), ts[2], node.span)
            return out
        if f in _UNARY_MATH:
            arity(1)
            _numeric(ts[0], node.span, f + "()")
            return ts[0]
        if f == "indicator":
            arity(1)
            if ts[0] not in (BOOL_S, BOOL_V):
                raise DslTypeError("indicator() needs a comparison", node.span)
            return VECTOR if ts[0] == BOOL_V else SCALAR
        raise DslTypeError(f"unknown function {f!r}", node.span)
    raise DslTypeError(f"unknown node {type(node).__name__}")


# --------------------------------------------------------------------------
# Program
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardProgram:
    root: object
    type: str
    params: tuple[str, ...] = DEFAULT_PARAMS
    source: str = field(default="", compare=False)

    def __str__(self) -> str:
        return print_canonical(self)


def parse(text: str, params: Sequence[str] = DEFAULT_PARAMS) -> RewardProgram:
    """Parse and validate; the result must evaluate to a scalar."""
    root = _Parser(text).program()
    n = node_count(root)
    if n > MAX_NODES:
        raise DslLimitError(f"program has {n} nodes (limit {MAX_NODES})", _span(root))
    if depth(root) > MAX_DEPTH:
        raise DslLimitError(f"program deeper than {MAX_DEPTH}", _span(root))
    t = typecheck(root, tuple(params))
    if t != SCALAR:
        raise DslTypeError(f"a reward must be a scalar, program yields {t}", _span(root))
    return RewardProgram(root, t, tuple(params), text)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _feature(name: str, ctx: RewardContext):
    if name == "backlog":
        return list(ctx.backlog)
    if name == "next_backlog":
        return list(ctx.next_backlog)
    if name == "init_backlog":
        return list(ctx.init_backlog)
    if name == "rate":
        return list(ctx.rate)
    if name == "transmitted":
        return list(ctx.transmitted)
    if name == "dist_to":
        return [ctx.dist_to(i) for i in range(ctx.num_users)]
    if name == "delta_dist_to":
        return [ctx.delta_dist(i) for i in range(ctx.num_users)]
    if name == "slot":
        return float(ctx.slot)
    if name == "num_users":
        return float(ctx.num_users)
    if name == "slot_len":
        return ctx.slot_len
    raise DslEvalError(f"unbound feature {name!r}")


def _zip(f: Callable, a, b):
    la, lb = isinstance(a, list), isinstance(b, list)
    if la and lb:
        if len(a) != len(b):
            raise DslEvalError("vector length mismatch")
        return [f(x, y) for x, y in zip(a, b)]
    if la:
        return [f(x, b) for x in a]
    if lb:
        return [f(a, y) for y in b]
    return f(a, b)


def _map(f: Callable, a):
    return [f(x) for x in a] if isinstance(a, list) else f(a)


def _div(x: float, y: float) -> float:
    if y == 0.0:
        raise DslEvalError("division by zero")
    return x / y


def _sqrt(x: float) -> float:
    if x < 0:
        raise DslEvalError("sqrt of a negative value")
    return math.sqrt(x)


def _log(x: float) -> float:
    if x <= 0:
        raise DslEvalError("log of a non-positive value")
    return math.log(x)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError as exc:
        raise DslEvalError("exp overflow") from exc


_ARITH = {
    "+": lambda x, y: x + y,
    "-": lambda x, y: x - y,
    "*": lambda x, y: x * y,
    "/": _div,
}
_CMP = {
    "<": lambda x, y: x < y,
    "<=": lambda x, y: x <= y,
    ">": lambda x, y: x > y,
    ">=": lambda x, y: x >= y,
    "==": lambda x, y: x == y,
    "!=": lambda x, y: x != y,
}


def _eval(node, ctx: RewardContext, params: Mapping[str, float], cache: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        if node.name in params:
            return float(params[node.name])
        if node.name not in cache:
            cache[node.name] = _feature(node.name, ctx)
        return cache[node.name]
    if isinstance(node, Neg):
        return _map(lambda x: -x, _eval(node.operand, ctx, params, cache))
    if isinstance(node, BinOp):
        return _zip(_ARITH[node.op], _eval(node.left, ctx, params, cache), _eval(node.right, ctx, params, cache))
    if isinstance(node, Compare):
        return _zip(_CMP[node.op], _eval(node.left, ctx, params, cache), _eval(node.right, ctx, params, cache))
    if isinstance(node, Index):
        vec = _eval(node.target, ctx, params, cache)
        i = _eval(node.index, ctx, params, cache)
        if i != int(i) or not 0 <= i < len(vec):
            raise DslEvalError(f"index {i} out of range for {len(vec)} users", node.span)
        return vec[int(i)]
    if isinstance(node, Call):
        f = node.func
        args = [_eval(a, ctx, params, cache) for a in node.args]
        if f == "sum":
            return vsum(args[0])
        if f == "mean":
            return vsum(args[0]) / len(args[0])
        if f in ("max", "min"):
            if len(args) == 1:
                return max(args[0]) if f == "max" else min(args[0])
            return _zip(max if f == "max" else min, args[0], args[1])
        if f == "argmax":
            return float(argmax(args[0]))
        if f == "argmin":
            return float(argmin(args[0]))
        if f == "var_q":
            try:
                return var_q(args[0], args[1])
            except ValueError as exc:
                raise DslEvalError(str(exc), node.span) from exc
        if f == "clamp":
            lo_hi = _zip(lambda lo, hi: (lo, hi), args[1], args[2])
            return _zip(lambda x, b: min(max(x, b[0]), b[1]), args[0], lo_hi)
        if f == "abs":
            return _map(abs, args[0])
        if f == "sqrt":
            return _map(_sqrt, args[0])
        if f == "log":
            return _map(_log, args[0])
        if f == "exp":
            return _map(_exp, args[0])
        if f == "indicator":
            return _map(lambda b: 1.0 if b else 0.0, args[0])
    raise DslEvalError(f"cannot evaluate {type(node).__name__}")


def evaluate(program: RewardProgram, ctx: RewardContext, params: Mapping[str, float] | None = None) -> float:
    params = dict(params or {})
    missing = sorted(p for p in referenced_names(program.root) if p in program.params and p not in params)
    if missing:
        raise DslEvalError(f"unbound parameter(s) {missing}")
    try:
        out = _eval(program.root, ctx, params, {})
    except DslEvalError:
        raise
    except (ArithmeticError, ValueError) as exc:
        raise DslEvalError(str(exc)) from exc
    if isinstance(out, list):
        raise DslEvalError("program produced a vector")
    out = float(out)
    if not math.isfinite(out):
        raise DslEvalError("non-finite reward")
    return out


def reward_fn(program: RewardProgram, params: Mapping[str, float]) -> Callable[[RewardContext], float]:
    params = dict(params)
    return lambda ctx: evaluate(program, ctx, params)


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {"cmp": 1, "+": 2, "-": 2, "*": 3, "/": 3, "neg": 4, "atom": 5}


def _prec(node) -> int:
    if isinstance(node, Compare):
        return _PREC["cmp"]
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def _print(node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Name):
        return node.name
    if isinstance(node, Neg):
        inner = _print(node.operand)
        return "-" + (f"({inner})" if _prec(node.operand) < _PREC["neg"] else inner)
    if isinstance(node, (BinOp, Compare)):
        p = _prec(node)
        left = _print(node.left)
        right = _print(node.right)
        if _prec(node.left) < p or (isinstance(node, Compare) and _prec(node.left) <= p):
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Index):
        tgt = _print(node.target)
        if _prec(node.target) < _PREC["atom"]:
            tgt = f"({tgt})"
        return f"{tgt}[{_print(node.index)}]"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(f"cannot print {type(node).__name__}")


def print_canonical(program: RewardProgram | object) -> str:
    root = program.root if isinstance(program, RewardProgram) else program
    return _print(root)


# --------------------------------------------------------------------------
# Reference programs
# --------------------------------------------------------------------------

RISK_PROGRAM = ("-var_q(backlog, q) / backlog_scale + mu * sum(min(backlog, rate * slot_len))"
                " + gamma_d * delta_dist_to[argmax(backlog)]")
MANUAL_PROGRAM = "-max(next_backlog) / max(init_backlog)"
ZERO_PROGRAM = "0.0"
