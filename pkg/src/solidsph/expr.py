"""User-expression language: tokenizer, parser and evaluators.

Expressions drive boundary/initial conditions and phase-field restrictions.
Built-in variables: x0 y0 z0 x y z ux uy uz t dt dx.  Functions: sin cos tan
cot sinh cosh tanh coth sqrt log (base 10) ln pow abs if.  Operators by
precedence: or < and < comparisons < +,- < *,/ < ^ (right associative).
`skip` / `Skip` is a sentinel meaning "perform no operation"; it is legal
only as an if-branch value or as the whole expression.

ASTs are immutable tuples, safe for concurrent evaluation.  `if` is lazy;
everything else is eager.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


class ExprError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class _Skip:
    """Sentinel for the `skip` keyword."""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "skip"


SKIP = _Skip()

VARIABLES = ("x0", "y0", "z0", "x", "y", "z", "ux", "uy", "uz", "t", "dt", "dx")

_FUNCS_1 = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan,
    "sinh": math.sinh, "cosh": math.cosh, "tanh": math.tanh,
    "sqrt": math.sqrt, "ln": math.log, "abs": abs,
}
_ARITY = {name: 1 for name in
          ("sin", "cos", "tan", "cot", "sinh", "cosh", "tanh", "coth",
           "sqrt", "log", "ln", "abs")}
_ARITY["pow"] = 2
_ARITY["if"] = 3

_BINARY_PREC = {
    "or": 1, "and": 2,
    "<": 3, ">": 3, "<=": 3, ">=": 3, "==": 3, "!=": 3,
    "+": 4, "-": 4,
    "*": 5, "/": 5,
    "^": 6,
}
# Unary minus binds tighter than binary +/- and *,/ but looser than ^.
_UNARY_PREC = 5.5

_TOKEN_RE = re.compile(r"""
    (?P<num>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|!=|[-+*/^<>(),])
  | (?P<ws>\s+)
""", re.VERBOSE)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


@dataclass(frozen=True)
class ExprAst:
    root: tuple
    locals: dict
    source: str

    @property
    def variables(self):
        """Built-in variable names referenced by the expression."""
        out = set()

        def walk(node):
            if node[0] == "var":
                out.add(node[1])
            elif node[0] == "un":
                walk(node[2])
            elif node[0] == "bin":
                walk(node[2]); walk(node[3])
            elif node[0] == "call":
                for arg in node[2]:
                    walk(arg)
            elif node[0] == "if":
                walk(node[1]); walk(node[2]); walk(node[3])
        walk(self.root)
        return out

    @property
    def time_dependent(self):
        return bool(self.variables & {"x", "y", "z", "ux", "uy", "uz", "t", "dt"})


class _Parser:
    def __init__(self, source, local_values):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.locals = local_values

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, val, pos = self.peek()
        if val != text:
            raise ExprError(f"expected {text!r}, found {val or 'end of input'!r}", pos)
        return self.advance()

    def parse(self):
        node = self.expression(0)
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected trailing input {val!r}", pos)
        return node

    def expression(self, min_prec):
        node = self.operand()
        while True:
            kind, val, pos = self.peek()
            prec = _BINARY_PREC.get(val)
            if kind == "end" or prec is None or prec < min_prec:
                return node
            self.advance()
            # right-associative ^ re-enters at equal precedence
            nxt = prec if val == "^" else prec + 1
            rhs = self.expression(nxt)
            node = ("bin", val, node, rhs)

    def operand(self):
        kind, val, pos = self.advance()
        if kind == "num":
            return ("num", float(val))
        if val == "-":
            inner = self.expression(_UNARY_PREC)
            if inner[0] == "num":
                return ("num", -inner[1])
            return ("un", "-", inner)
        if val == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if kind == "name":
            if val in ("skip", "Skip"):
                return ("skip",)
            if val in ("and", "or"):
                raise ExprError(f"operator {val!r} missing left operand", pos)
            if self.peek()[1] == "(":
                return self.call(val, pos)
            if val in self.locals:
                return ("num", self.locals[val])
            if val in VARIABLES:
                return ("var", val)
            raise ExprError(f"unknown identifier {val!r}", pos)
        raise ExprError(f"unexpected token {val or 'end of input'!r}", pos)

    def call(self, name, pos):
        arity = _ARITY.get(name)
        if arity is None:
            raise ExprError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.expression(0)]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.expression(0))
        self.expect(")")
        if len(args) != arity:
            raise ExprError(
                f"function {name!r} takes {arity} argument(s), got {len(args)}", pos)
        if name == "if":
            return ("if", args[0], args[1], args[2])
        return ("call", name, tuple(args))


def parse_locals(locals_src, base=None):
    """Parse `name=value; name=value` local definitions.

    Values accept full constant expressions (earlier locals are visible) and
    are folded immediately.
    """
    values = dict(base or {})
    if not locals_src:
        return values
    for chunk in locals_src.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ExprError(f"malformed local definition {chunk!r}")
        name, _, rhs = chunk.partition("=")
        name = name.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ExprError(f"invalid local name {name!r}")
        node = _Parser(rhs.strip(), values).parse()
        result = eval_node(node, None)
        if result is SKIP:
            raise ExprError(f"local {name!r} must be a number, not skip")
        values[name] = result
    return values


def parse(source, locals_src=""):
    """Parse an expression with optional `<locals>` bindings into an ExprAst."""
    if not source or not source.strip():
        raise ExprError("empty expression")
    local_values = parse_locals(locals_src)
    root = _Parser(source, local_values).parse()
    _check_skip_positions(root, top=True)
    return ExprAst(root=root, locals=local_values, source=source)


def _check_skip_positions(node, top=False):
    """skip may only appear as an if-branch value or as the whole expression."""
    kind = node[0]
    if kind == "skip":
        if not top:
            raise ExprError("`skip` is only legal as an if branch or the whole expression")
        return
    if kind == "un":
        _check_skip_positions(node[2])
    elif kind == "bin":
        _check_skip_positions(node[2])
        _check_skip_positions(node[3])
    elif kind == "call":
        for arg in node[2]:
            _check_skip_positions(arg)
    elif kind == "if":
        _check_skip_positions(node[1])
        _check_skip_positions(node[2], top=top)
        _check_skip_positions(node[3], top=top)


@dataclass
class EvalContext:
    x0: float = 0.0
    y0: float = 0.0
    z0: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    ux: float = 0.0
    uy: float = 0.0
    uz: float = 0.0
    t: float = 0.0
    dt: float = 0.0
    dx: float = 0.0


def _call_scalar(name, args):
    try:
        if name == "cot":
            return math.cos(args[0]) / math.sin(args[0])
        if name == "coth":
            return math.cosh(args[0]) / math.sinh(args[0])
        if name == "log":
            if args[0] <= 0.0:
                raise ExprError(f"log of non-positive value {args[0]!r}")
            return math.log10(args[0])
        if name == "ln":
            if args[0] <= 0.0:
                raise ExprError(f"ln of non-positive value {args[0]!r}")
            return math.log(args[0])
        if name == "sqrt":
            if args[0] < 0.0:
                raise ExprError(f"sqrt of negative value {args[0]!r}")
            return math.sqrt(args[0])
        if name == "pow":
            return math.pow(args[0], args[1])
        return _FUNCS_1[name](args[0])
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ExprError(f"domain error in {name}: {exc}") from None


def eval_node(node, ctx):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "skip":
        return SKIP
    if kind == "var":
        if ctx is None:
            raise ExprError(f"variable {node[1]!r} not allowed here")
        return float(getattr(ctx, node[1]))
    if kind == "un":
        val = eval_node(node[2], ctx)
        if val is SKIP:
            raise ExprError("skip consumed by unary '-'")
        return -val
    if kind == "if":
        cond = eval_node(node[1], ctx)
        if cond is SKIP:
            raise ExprError("skip consumed by if condition")
        return eval_node(node[2] if cond != 0.0 else node[3], ctx)
    if kind == "call":
        args = [eval_node(arg, ctx) for arg in node[2]]
        if any(a is SKIP for a in args):
            raise ExprError(f"skip consumed by function {node[1]!r}")
        return _call_scalar(node[1], args)
    # binary
    op = node[1]
    a = eval_node(node[2], ctx)
    b = eval_node(node[3], ctx)
    if a is SKIP or b is SKIP:
        raise ExprError(f"skip consumed by operator {op!r}")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise ExprError("division by zero")
        return a / b
    if op == "^":
        try:
            return math.pow(a, b)
        except (ValueError, OverflowError) as exc:
            raise ExprError(f"domain error in '^': {exc}") from None
    if op == "<":
        return 1.0 if a < b else 0.0
    if op == ">":
        return 1.0 if a > b else 0.0
    if op == "<=":
        return 1.0 if a <= b else 0.0
    if op == ">=":
        return 1.0 if a >= b else 0.0
    if op == "==":
        return 1.0 if a == b else 0.0
    if op == "!=":
        return 1.0 if a != b else 0.0
    if op == "and":
        return 1.0 if (a != 0.0 and b != 0.0) else 0.0
    if op == "or":
        return 1.0 if (a != 0.0 or b != 0.0) else 0.0
    raise ExprError(f"unknown operator {op!r}")


def eval_expr(ast, ctx):
    """Evaluate one expression for one particle context.

    Returns a float, or the SKIP sentinel when the selected branch (or the
    whole expression) is `skip`.
    """
    return eval_node(ast.root, ctx)


def eval_batch(ast, contexts):
    """Elementwise eval over a sequence of contexts (bitwise identical to
    per-context eval; the first failing context aborts)."""
    return [eval_expr(ast, ctx) for ctx in contexts]


def pretty(ast_or_node):
    """Fully parenthesized rendering; pretty-printed text reparses to a
    structurally identical AST."""
    node = ast_or_node.root if isinstance(ast_or_node, ExprAst) else ast_or_node

    def fmt(n):
        kind = n[0]
        if kind == "num":
            return repr(n[1])
        if kind == "var":
            return n[1]
        if kind == "skip":
            return "skip"
        if kind == "un":
            return f"(-{fmt(n[2])})"
        if kind == "bin":
            return f"({fmt(n[2])} {n[1]} {fmt(n[3])})"
        if kind == "call":
            return f"{n[1]}({', '.join(fmt(a) for a in n[2])})"
        if kind == "if":
            return f"if({fmt(n[1])}, {fmt(n[2])}, {fmt(n[3])})"
        raise ExprError(f"unknown node {kind!r}")

    return fmt(node)


# ---------------------------------------------------------------------------
# Vectorized masked evaluation over particle arrays (engine-internal).
# `if` stays lazy: branches are evaluated only on their active lanes, so an
# inactive branch can never raise or leak skip.
# ---------------------------------------------------------------------------

def _ev_field(node, ctx, active):
    """Returns (values, skipmask); both are only meaningful where active."""
    n = active.shape[0]
    kind = node[0]
    if kind == "num":
        return np.full(n, node[1]), np.zeros(n, dtype=bool)
    if kind == "skip":
        return np.zeros(n), np.ones(n, dtype=bool)
    if kind == "var":
        val = ctx[node[1]]
        if np.isscalar(val):
            return np.full(n, float(val)), np.zeros(n, dtype=bool)
        return np.asarray(val, dtype=np.float64), np.zeros(n, dtype=bool)
    if kind == "un":
        vals, skip = _ev_field(node[2], ctx, active)
        if np.any(skip & active):
            raise ExprError("skip consumed by unary '-'")
        return -vals, skip
    if kind == "if":
        cond, cskip = _ev_field(node[1], ctx, active)
        if np.any(cskip & active):
            raise ExprError("skip consumed by if condition")
        tmask = active & (cond != 0.0)
        fmask = active & (cond == 0.0)
        vals = np.zeros(n)
        skip = np.zeros(n, dtype=bool)
        if tmask.any():
            tv, ts = _ev_field(node[2], ctx, tmask)
            vals[tmask] = tv[tmask]
            skip[tmask] = ts[tmask]
        if fmask.any():
            fv, fs = _ev_field(node[3], ctx, fmask)
            vals[fmask] = fv[fmask]
            skip[fmask] = fs[fmask]
        return vals, skip
    if kind == "call":
        name = node[1]
        parts = []
        for arg in node[2]:
            vals, skip = _ev_field(arg, ctx, active)
            if np.any(skip & active):
                raise ExprError(f"skip consumed by function {name!r}")
            parts.append(vals)
        return _call_field(name, parts, active), np.zeros(n, dtype=bool)
    # binary
    op = node[1]
    av, askip = _ev_field(node[2], ctx, active)
    bv, bskip = _ev_field(node[3], ctx, active)
    if np.any((askip | bskip) & active):
        raise ExprError(f"skip consumed by operator {op!r}")
    return _apply_field(op, av, bv, active), np.zeros(av.shape[0], dtype=bool)


def _guarded(vals, active, ok, construct):
    if np.any(active & ~ok):
        raise ExprError(construct)
    out = np.where(active, vals, 1.0)
    return out


def _call_field(name, args, active):
    a = args[0]
    if name == "log":
        a = _guarded(a, active, a > 0.0, "log of non-positive value")
        return np.log10(np.where(active, a, 1.0))
    if name == "ln":
        a = _guarded(a, active, a > 0.0, "ln of non-positive value")
        return np.log(np.where(active, a, 1.0))
    if name == "sqrt":
        a = _guarded(a, active, a >= 0.0, "sqrt of negative value")
        return np.sqrt(np.where(active, a, 1.0))
    if name == "cot":
        return np.cos(a) / np.sin(np.where(active, a, 1.0))
    if name == "coth":
        return np.cosh(np.where(active, np.clip(a, -700, 700), 1.0)) / \
            np.sinh(np.where(active, np.clip(a, -700, 700), 1.0))
    if name == "pow":
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.power(np.where(active, a, 1.0), np.where(active, args[1], 1.0))
        if np.any(active & ~np.isfinite(out)):
            raise ExprError("domain error in pow")
        return out
    func = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "sinh": np.sinh,
            "cosh": np.cosh, "tanh": np.tanh, "abs": np.abs}[name]
    with np.errstate(over="ignore"):
        out = func(np.where(active, a, 0.0))
    return out


def _apply_field(op, a, b, active):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(active & (b == 0.0)):
            raise ExprError("division by zero")
        return a / np.where(active, b, 1.0)
    if op == "^":
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.power(np.where(active, a, 1.0), np.where(active, b, 1.0))
        if np.any(active & ~np.isfinite(out)):
            raise ExprError("domain error in '^'")
        return out
    if op == "<":
        return (a < b).astype(np.float64)
    if op == ">":
        return (a > b).astype(np.float64)
    if op == "<=":
        return (a <= b).astype(np.float64)
    if op == ">=":
        return (a >= b).astype(np.float64)
    if op == "==":
        return (a == b).astype(np.float64)
    if op == "!=":
        return (a != b).astype(np.float64)
    if op == "and":
        return ((a != 0.0) & (b != 0.0)).astype(np.float64)
    if op == "or":
        return ((a != 0.0) | (b != 0.0)).astype(np.float64)
    raise ExprError(f"unknown operator {op!r}")


def eval_field(ast, ctx, n):
    """Vectorized evaluation over n particle lanes.

    ctx maps variable names to scalars or (n,) arrays.  Returns
    (values, skipmask): lanes with skipmask True received `skip`.
    """
    active = np.ones(n, dtype=bool)
    return _ev_field(ast.root, ctx, active)


class FieldContext:
    """Lazy engine-side variable map for a body's particles: arrays are
    materialized only for the variables an expression actually references,
    optionally restricted to a target index subset."""

    _AXES = {"x0": 0, "y0": 1, "z0": 2, "x": 0, "y": 1, "z": 2,
             "ux": 0, "uy": 1, "uz": 2}

    def __init__(self, body, t, dt, idx=None):
        self._body = body
        self._idx = idx
        self._scalars = {"t": float(t), "dt": float(dt),
                         "dx": float(body.dp_body)}
        self._cache = {}

    def subset(self, idx):
        if idx is None:
            return self
        sub = FieldContext(self._body, self._scalars["t"],
                           self._scalars["dt"], idx)
        return sub

    def __getitem__(self, name):
        if name in self._scalars:
            return self._scalars[name]
        val = self._cache.get(name)
        if val is not None:
            return val
        st = self._body.state
        ax = self._AXES[name]
        if name in ("x0", "y0", "z0"):
            val = st.X[:, ax]
        elif name in ("ux", "uy", "uz"):
            val = st.u[:, ax]
        else:
            val = st.X[:, ax] + st.u[:, ax]
        if self._idx is not None:
            val = val[self._idx]
        self._cache[name] = val
        return val


def field_context(body, t, dt):
    """Engine-side variable map for a body's particles."""
    return FieldContext(body, t, dt)
