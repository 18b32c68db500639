"""Independent reference evaluator and random generator for the expression
language, written directly from the language tables (variables, functions,
operators with precedence).  Used as the differential-test oracle; it walks
the production parser's AST but evaluates with its own logic."""

import math
import random

from solidsph import expr as ex

VARS = list(ex.VARIABLES)


class OracleError(Exception):
    pass


def oracle_eval(node, ctx):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "skip":
        return ex.SKIP
    if kind == "var":
        return float(getattr(ctx, node[1]))
    if kind == "un":
        val = oracle_eval(node[2], ctx)
        if val is ex.SKIP:
            raise OracleError("skip in unary")
        return 0.0 - val
    if kind == "if":
        cond = oracle_eval(node[1], ctx)
        if cond is ex.SKIP:
            raise OracleError("skip condition")
        if cond != 0.0:
            return oracle_eval(node[2], ctx)
        return oracle_eval(node[3], ctx)
    if kind == "call":
        args = [oracle_eval(a, ctx) for a in node[2]]
        if any(a is ex.SKIP for a in args):
            raise OracleError("skip arg")
        name = node[1]
        try:
            if name == "sin":
                return math.sin(args[0])
            if name == "cos":
                return math.cos(args[0])
            if name == "tan":
                return math.tan(args[0])
            if name == "cot":
                return math.cos(args[0]) / math.sin(args[0])
            if name == "sinh":
                return math.sinh(args[0])
            if name == "cosh":
                return math.cosh(args[0])
            if name == "tanh":
                return math.tanh(args[0])
            if name == "coth":
                return math.cosh(args[0]) / math.sinh(args[0])
            if name == "sqrt":
                if args[0] < 0:
                    raise OracleError("sqrt domain")
                return math.sqrt(args[0])
            if name == "log":
                if args[0] <= 0:
                    raise OracleError("log domain")
                return math.log10(args[0])
            if name == "ln":
                if args[0] <= 0:
                    raise OracleError("ln domain")
                return math.log(args[0])
            if name == "pow":
                return math.pow(args[0], args[1])
            if name == "abs":
                return abs(args[0])
        except (ValueError, OverflowError, ZeroDivisionError) as err:
            raise OracleError(str(err)) from None
        raise OracleError(f"unknown function {name}")
    op = node[1]
    a = oracle_eval(node[2], ctx)
    b = oracle_eval(node[3], ctx)
    if a is ex.SKIP or b is ex.SKIP:
        raise OracleError("skip operand")
    table = {
        "+": lambda: a + b,
        "-": lambda: a - b,
        "*": lambda: a * b,
        "^": lambda: math.pow(a, b),
        "<": lambda: 1.0 if a < b else 0.0,
        ">": lambda: 1.0 if a > b else 0.0,
        "<=": lambda: 1.0 if a <= b else 0.0,
        ">=": lambda: 1.0 if a >= b else 0.0,
        "==": lambda: 1.0 if a == b else 0.0,
        "!=": lambda: 1.0 if a != b else 0.0,
        "and": lambda: 1.0 if (a != 0.0 and b != 0.0) else 0.0,
        "or": lambda: 1.0 if (a != 0.0 or b != 0.0) else 0.0,
    }
    if op == "/":
        if b == 0.0:
            raise OracleError("division by zero")
        return a / b
    try:
        return table[op]()
    except (ValueError, OverflowError) as err:
        raise OracleError(str(err)) from None


_SAFE_FUNCS = ["sin", "cos", "tanh", "abs", "sinh", "cosh"]
_CMP = ["<", ">", "<=", ">=", "==", "!="]


def random_expression(rng, depth=0, max_depth=5):
    """Well-typed random source text avoiding guaranteed-error constructs
    (division uses nonzero literal denominators, log/sqrt get abs'd
    arguments)."""
    if depth >= max_depth or rng.random() < 0.25:
        roll = rng.random()
        if roll < 0.45:
            return repr(round(rng.uniform(-4.0, 4.0), 3))
        return rng.choice(VARS)
    roll = rng.random()
    sub = lambda: random_expression(rng, depth + 1, max_depth)
    if roll < 0.30:
        op = rng.choice(["+", "-", "*", "+", "-", "*"])
        return f"({sub()} {op} {sub()})"
    if roll < 0.38:
        denom = repr(round(rng.uniform(0.5, 3.0), 3) * rng.choice([-1, 1]))
        return f"({sub()} / {denom})"
    if roll < 0.5:
        return f"{rng.choice(_SAFE_FUNCS)}(({sub()}) / 8.0)"
    if roll < 0.58:
        return f"sqrt(abs({sub()}))"
    if roll < 0.64:
        return f"ln(abs({sub()}) + 1.5)"
    if roll < 0.70:
        return f"(-{rng.choice(VARS)})"
    if roll < 0.80:
        cmp_op = rng.choice(_CMP)
        return f"({sub()} {cmp_op} {sub()})"
    if roll < 0.86:
        logic = rng.choice(["and", "or"])
        return f"(({sub()} < {sub()}) {logic} ({sub()} > {sub()}))"
    return f"if({sub()} < {sub()}, {sub()}, {sub()})"


def random_context(rng):
    return ex.EvalContext(**{name: round(rng.uniform(-3.0, 3.0), 4)
                             for name in VARS})


def differential_trial(rng, max_depth=5):
    """One random differential trial; returns True on agreement."""
    src = random_expression(rng, max_depth=max_depth)
    ast = ex.parse(src)
    ctx = random_context(rng)
    try:
        expected = oracle_eval(ast.root, ctx)
        oracle_raised = False
    except OracleError:
        oracle_raised = True
    try:
        got = ex.eval_expr(ast, ctx)
        prod_raised = False
    except ex.ExprError:
        prod_raised = True
    if oracle_raised or prod_raised:
        return oracle_raised == prod_raised
    if expected is ex.SKIP or got is ex.SKIP:
        return expected is got
    if math.isnan(expected) and math.isnan(got):
        return True
    return expected == got
