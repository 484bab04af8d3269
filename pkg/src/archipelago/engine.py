"""Query evaluation against storage snapshots.

Semantics are nested-loop: FROM clauses produce the cross product in
declaration order, UNNEST expands array paths (zero rows when the path is
missing or not an array), LET extends the environment left to right, WHERE
filters, SELECT projects, ORDER BY sorts ascending by default with input
order breaking ties.

Two mechanical refinements preserve those semantics while keeping periodic
executions cheap: WHERE is split into AND-conjuncts and each conjunct runs
as soon as all names it mentions are bound, and a top-level ``is_new(alias)``
conjunct restricts that alias's scan to the watermark range outright.

Absent fields yield a MISSING marker rather than an error: comparisons,
arithmetic, and function calls involving MISSING produce MISSING (rows with
MISSING filters are dropped), and projecting a MISSING value omits the key.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

from archipelago.adm import AdmError, Datetime, Point, Rectangle, Value, object_merge
from archipelago.ddl.nodes import (
    ArrayExpr,
    Binary,
    Expr,
    FieldAccess,
    FunctionCall,
    IndexAccess,
    LetBinding,
    Literal,
    ObjectExpr,
    QueryAst,
    SubqueryExpr,
    Unary,
    VarRef,
)
from archipelago.storage import Catalog, UnknownEntityError


class AnalysisError(ValueError):
    """Query references that do not resolve (datasets, names, arities)."""


class EvalError(ValueError):
    """Runtime evaluation failure (bad function application and the like)."""


class _Missing:
    __slots__ = ()

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False


MISSING = _Missing()


# -- builtin function library ---------------------------------------------------

def spatial_distance(p: Point, q: Point) -> float:
    """Euclidean distance in coordinate units."""
    dx = p.x - q.x
    dy = p.y - q.y
    return math.sqrt(dx * dx + dy * dy)


def spatial_intersect(p: Point, r: Rectangle) -> bool:
    """Point-in-rectangle test with inclusive bounds."""
    return r.x1 <= p.x <= r.x2 and r.y1 <= p.y <= r.y2


def create_point(x, y) -> Point:
    return Point(float(x), float(y))


def datetime_from_unix_time_in_ms(n: int) -> Datetime:
    return Datetime(int(n))


class WordList:
    """Flagged-word collection loaded from a file, one word per line."""

    def __init__(self, words):
        self.words = frozenset(w for w in (word.strip() for word in words) if w)

    @classmethod
    def from_file(cls, path: str) -> "WordList":
        with open(path, "r", encoding="utf-8") as f:
            return cls(f)

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)


def threatening_rating(text: str, wordlist: WordList) -> int:
    """Count tokens (split on single spaces, commas and periods deleted)
    that appear in the word list; occurrences count, not distinct words."""
    rating = 0
    for token in text.split(" "):
        if token.replace(",", "").replace(".", "") in wordlist:
            rating += 1
    return rating


def _typed(fn, *tags):
    def wrapper(*args):
        for a, tag in zip(args, tags):
            if not isinstance(a, tag):
                return MISSING
        return fn(*args)

    return wrapper


_BUILTIN_ARITY = {
    "spatial_distance": 2,
    "spatial_intersect": 2,
    "create_point": 2,
    "datetime_from_unix_time_in_ms": 1,
    "object_merge": 2,
    "is_new": 1,
    "threateningRating": 1,
}

RESERVED_FUNCTION_NAMES = frozenset(_BUILTIN_ARITY)

_BUILTINS = {
    "spatial_distance": _typed(spatial_distance, Point, Point),
    "spatial_intersect": _typed(spatial_intersect, Point, Rectangle),
    "create_point": _typed(create_point, (int, float), (int, float)),
    "datetime_from_unix_time_in_ms": _typed(datetime_from_unix_time_in_ms, int),
    "object_merge": _typed(object_merge, dict, dict),
}


@dataclass
class UserFunction:
    """A declared single-expression function; body subqueries are compiled
    lazily against the catalog the first time it is applied."""

    name: str
    dataverse: str
    params: list
    body: Expr
    _subplans: dict = field(default_factory=dict)
    _compiled: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock)


# -- execution context ------------------------------------------------------------

class ExecutionContext:
    """Everything one evaluation needs: parameter bindings, watermark ranges
    for active datasets, snapshot bounds, and the function/word-list
    environment."""

    def __init__(
        self,
        catalog: Catalog,
        bindings: dict | None = None,
        watermarks: dict | None = None,
        now: Datetime | None = None,
        wordlist: WordList | None = None,
        default_dataverse: str = "Default",
        functions: dict | None = None,
    ):
        self.catalog = catalog
        self.bindings = bindings or {}
        self.watermarks = watermarks or {}
        self.now = now
        self.wordlist = wordlist
        self.default_dataverse = default_dataverse
        self.functions = functions or {}
        self._bounds: dict = {}

    def bound(self, key) -> int:
        """Stable per-execution snapshot bound for a dataset."""
        if key in self.watermarks:
            return self.watermarks[key][1]
        if key not in self._bounds:
            self._bounds[key] = self.catalog.get_dataset(*key).snapshot_seqno()
        return self._bounds[key]

    def resolve_function(self, name: str):
        return self.functions.get(name)


# -- compilation -------------------------------------------------------------------

@dataclass
class _ScanStep:
    alias: str
    key: tuple  # (dataverse, dataset)
    restricted: bool = False
    # equality of the dataset's primary key against an already-bound
    # expression turns the scan into a point lookup
    pkey_lookup: Expr | None = None


@dataclass
class _UnnestStep:
    alias: str
    path: Expr


@dataclass
class _LetStep:
    name: str
    expr: Expr


@dataclass
class _FilterStep:
    expr: Expr


@dataclass
class QueryPlan:
    ast: QueryAst
    steps: list
    select_value: Expr | None
    select_items: tuple
    order_by: object
    active_keys: dict  # alias -> dataset key, for watermark snapshots
    subplans: dict  # id(SubqueryExpr) -> QueryPlan


def _flatten_conjuncts(e: Expr, out: list) -> None:
    if isinstance(e, Binary) and e.op == "AND":
        _flatten_conjuncts(e.left, out)
        _flatten_conjuncts(e.right, out)
    else:
        out.append(e)


def _expr_names(e: Expr, out: set) -> None:
    """Free variable names of an expression (subqueries contribute theirs)."""
    if isinstance(e, VarRef):
        out.add(e.name)
    elif isinstance(e, FieldAccess):
        _expr_names(e.base, out)
    elif isinstance(e, IndexAccess):
        _expr_names(e.base, out)
        _expr_names(e.index, out)
    elif isinstance(e, FunctionCall):
        for a in e.args:
            _expr_names(a, out)
    elif isinstance(e, Unary):
        _expr_names(e.operand, out)
    elif isinstance(e, Binary):
        _expr_names(e.left, out)
        _expr_names(e.right, out)
    elif isinstance(e, ObjectExpr):
        for _, v in e.fields:
            _expr_names(v, out)
    elif isinstance(e, ArrayExpr):
        for v in e.items:
            _expr_names(v, out)
    elif isinstance(e, SubqueryExpr):
        from archipelago.ddl.parser import free_variables

        out |= free_variables(e.query)


class _Compiler:
    def __init__(self, catalog, default_dataverse, params, allow_is_new, functions):
        self.catalog = catalog
        self.default_dv = default_dataverse
        self.params = set(params or ())
        self.allow_is_new = allow_is_new
        self.functions = functions or {}

    def compile(self, ast: QueryAst, outer_bound: set | None = None) -> QueryPlan:
        bound = set(outer_bound or ()) | self.params
        subplans: dict = {}
        scans: list[_ScanStep] = []
        alias_keys: dict[str, tuple] = {}
        for f in ast.from_clauses:
            dv = f.dataverse or self.default_dv
            try:
                dataset = self.catalog.get_dataset(dv, f.dataset)
            except UnknownEntityError as exc:
                raise AnalysisError(str(exc)) from None
            if f.alias in alias_keys:
                raise AnalysisError(f"duplicate alias {f.alias!r}")
            scans.append(_ScanStep(f.alias, (dv, f.dataset)))
            alias_keys[f.alias] = (dv, f.dataset)

        # dig the top-level is_new conjuncts out of WHERE
        conjuncts: list[Expr] = []
        if ast.where is not None:
            _flatten_conjuncts(ast.where, conjuncts)
        residual: list = []
        active_keys: dict[str, tuple] = {}
        for c in conjuncts:
            if isinstance(c, FunctionCall) and c.name.lower() == "is_new":
                alias = c.args[0].name
                key = alias_keys.get(alias)
                if key is None:
                    raise AnalysisError(f"is_new applied to unknown alias {alias!r}")
                if not self.catalog.get_dataset(*key).active:
                    raise AnalysisError(
                        f"is_new requires an active dataset, {key[0]}.{key[1]} is not"
                    )
                if not self.allow_is_new:
                    raise AnalysisError("is_new is only available in channel bodies")
                for scan in scans:
                    if scan.alias == alias:
                        scan.restricted = True
                active_keys[alias] = key
            else:
                residual.append(c)

        # interleave scans/unnest/lets with filters at their earliest point
        steps: list = []
        pending = [(c, self._needs(c)) for c in residual]

        def take_ready(bound_names):
            nonlocal pending
            ready = [c for c, needs in pending if needs <= bound_names]
            pending = [(c, n) for c, n in pending if not (n <= bound_names)]
            for c in ready:
                self._check_expr(c, subplans, bound_names)
                steps.append(_FilterStep(c))

        take_ready(bound)
        for scan in scans:
            steps.append(scan)
            bound.add(scan.alias)
            take_ready(bound)
        for u in ast.unnest_clauses:
            self._check_expr(u.path, subplans, bound)
            steps.append(_UnnestStep(u.alias, u.path))
            if u.alias in bound and u.alias in alias_keys:
                raise AnalysisError(f"duplicate alias {u.alias!r}")
            bound.add(u.alias)
            take_ready(bound)
        for b in ast.let_bindings:
            self._check_expr(b.expr, subplans, bound)
            steps.append(_LetStep(b.name, b.expr))
            bound.add(b.name)
            take_ready(bound)
        if pending:
            missing = sorted(self._needs(pending[0][0]) - bound)
            raise AnalysisError(f"unbound name(s) in WHERE: {', '.join(missing)}")
        self._attach_pkey_lookups(steps)

        for p in ast.select_items:
            self._check_names(p.expr, bound)
            self._check_expr(p.expr, subplans, bound)
        if ast.select_value is not None:
            self._check_names(ast.select_value, bound)
            self._check_expr(ast.select_value, subplans, bound)
        if ast.order_by is not None:
            self._check_names(ast.order_by.expr, bound)
            self._check_expr(ast.order_by.expr, subplans, bound)

        return QueryPlan(
            ast=ast,
            steps=steps,
            select_value=ast.select_value,
            select_items=ast.select_items,
            order_by=ast.order_by,
            active_keys=active_keys,
            subplans=subplans,
        )

    def _attach_pkey_lookups(self, steps: list) -> None:
        """An `alias.pkey = <expr over earlier bindings>` filter directly
        behind a scan makes that scan a primary-key point lookup."""
        bound_before: dict[int, set] = {}
        bound: set = set(self.params)
        for i, step in enumerate(steps):
            bound_before[i] = set(bound)
            if isinstance(step, _ScanStep):
                bound.add(step.alias)
            elif isinstance(step, (_UnnestStep, _LetStep)):
                bound.add(step.alias if isinstance(step, _UnnestStep) else step.name)
        for i, step in enumerate(steps):
            if not isinstance(step, _ScanStep) or step.pkey_lookup is not None:
                continue
            pkey = self.catalog.get_dataset(*step.key).pkey
            for j in range(i + 1, len(steps)):
                follower = steps[j]
                if not isinstance(follower, _FilterStep):
                    break
                expr = follower.expr
                if not (isinstance(expr, Binary) and expr.op == "="):
                    continue
                for mine, other in ((expr.left, expr.right), (expr.right, expr.left)):
                    if (
                        isinstance(mine, FieldAccess)
                        and isinstance(mine.base, VarRef)
                        and mine.base.name == step.alias
                        and mine.field == pkey
                        and self._needs(other) - {step.alias} <= bound_before[i]
                        and step.alias not in self._needs(other)
                    ):
                        step.pkey_lookup = other
                        break
                if step.pkey_lookup is not None:
                    break

    def _needs(self, e: Expr) -> set:
        names: set = set()
        _expr_names(e, names)
        return names - self.params

    def _check_names(self, e: Expr, bound: set) -> None:
        names: set = set()
        _expr_names(e, names)
        unbound = names - bound - self.params
        if unbound:
            raise AnalysisError(f"unbound name(s): {', '.join(sorted(unbound))}")

    def _check_expr(self, e: Expr, subplans: dict, bound_hint) -> None:
        """Validate function references and compile nested subqueries."""
        if isinstance(e, SubqueryExpr):
            outer = set(bound_hint or ()) if bound_hint is not None else None
            sub = self.compile_subquery(e.query, outer)
            subplans[id(e)] = sub
            subplans.update(sub.subplans)
            return
        if isinstance(e, FunctionCall):
            name = e.name
            if name.lower() == "is_new":
                raise AnalysisError("is_new must be a top-level WHERE conjunct")
            arity = _BUILTIN_ARITY.get(name)
            if arity is not None:
                if len(e.args) != arity:
                    raise AnalysisError(
                        f"{name} expects {arity} argument(s), got {len(e.args)}"
                    )
            elif name not in self.functions:
                raise AnalysisError(f"unknown function {name!r}")
            for a in e.args:
                self._check_expr(a, subplans, bound_hint)
        elif isinstance(e, FieldAccess):
            self._check_expr(e.base, subplans, bound_hint)
        elif isinstance(e, IndexAccess):
            self._check_expr(e.base, subplans, bound_hint)
            self._check_expr(e.index, subplans, bound_hint)
        elif isinstance(e, Unary):
            self._check_expr(e.operand, subplans, bound_hint)
        elif isinstance(e, Binary):
            self._check_expr(e.left, subplans, bound_hint)
            self._check_expr(e.right, subplans, bound_hint)
        elif isinstance(e, ObjectExpr):
            for _, v in e.fields:
                self._check_expr(v, subplans, bound_hint)
        elif isinstance(e, ArrayExpr):
            for v in e.items:
                self._check_expr(v, subplans, bound_hint)

    def compile_subquery(self, ast: QueryAst, outer_bound) -> QueryPlan:
        inner = _Compiler(
            self.catalog, self.default_dv, self.params | set(outer_bound or ()),
            allow_is_new=False, functions=self.functions,
        )
        return inner.compile(ast)


def compile_query(
    ast: QueryAst,
    catalog: Catalog,
    default_dataverse: str = "Default",
    params: list | None = None,
    allow_is_new: bool = True,
    functions: dict | None = None,
) -> QueryPlan:
    """Resolve and validate a query against the catalog; returns the plan."""
    compiler = _Compiler(catalog, default_dataverse, params, allow_is_new, functions)
    # free variables that are not declared parameters are rejected up front
    from archipelago.ddl.parser import free_variables

    unbound = free_variables(ast) - set(params or ())
    if unbound:
        raise AnalysisError(f"unbound alias(es): {', '.join(sorted(unbound))}")
    return compiler.compile(ast)


# -- evaluation ---------------------------------------------------------------------

_NUMERIC = (int, float)


def _compare(op: str, a, b):
    if a is MISSING or b is MISSING or a is None or b is None:
        return MISSING
    an = isinstance(a, _NUMERIC) and not isinstance(a, bool)
    bn = isinstance(b, _NUMERIC) and not isinstance(b, bool)
    if op == "=" or op == "!=":
        if an and bn:
            result = a == b
        elif type(a) is type(b):
            result = a == b
        else:
            result = False
        return result if op == "=" else not result
    # ordering comparisons
    if an and bn:
        pass
    elif type(a) is str and type(b) is str:
        pass
    elif type(a) is Datetime and type(b) is Datetime:
        a, b = a.millis, b.millis
    else:
        return MISSING
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise EvalError(f"unknown comparison {op}")


def _arith(op: str, a, b):
    if not (isinstance(a, _NUMERIC) and isinstance(b, _NUMERIC)) \
            or isinstance(a, bool) or isinstance(b, bool):
        return MISSING
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            return MISSING
        return a / b
    raise EvalError(f"unknown operator {op}")


class _Evaluator:
    def __init__(self, plan: QueryPlan, ctx: ExecutionContext):
        self.plan = plan
        self.ctx = ctx

    def eval(self, e: Expr, env: dict, seqnos: dict):
        kind = type(e)
        if kind is Literal:
            return e.value
        if kind is VarRef:
            name = e.name
            if name in env:
                return env[name]
            if name in self.ctx.bindings:
                return self.ctx.bindings[name]
            return MISSING
        if kind is FieldAccess:
            base = self.eval(e.base, env, seqnos)
            if type(base) is dict:
                return base.get(e.field, MISSING)
            return MISSING
        if kind is Binary:
            op = e.op
            if op == "AND" or op == "OR":
                left = self.eval(e.left, env, seqnos)
                lv = left if isinstance(left, bool) else MISSING
                if op == "AND" and lv is False:
                    return False
                if op == "OR" and lv is True:
                    return True
                right = self.eval(e.right, env, seqnos)
                rv = right if isinstance(right, bool) else MISSING
                if op == "AND":
                    if rv is False:
                        return False
                    return MISSING if (lv is MISSING or rv is MISSING) else True
                if rv is True:
                    return True
                return MISSING if (lv is MISSING or rv is MISSING) else False
            left = self.eval(e.left, env, seqnos)
            right = self.eval(e.right, env, seqnos)
            if op in ("+", "-", "*", "/"):
                return _arith(op, left, right)
            return _compare(op, left, right)
        if kind is FunctionCall:
            return self._call(e, env, seqnos)
        if kind is IndexAccess:
            base = self.eval(e.base, env, seqnos)
            index = self.eval(e.index, env, seqnos)
            if type(base) is list and type(index) is int and not isinstance(index, bool):
                if -len(base) <= index < len(base):
                    return base[index]
            return MISSING
        if kind is Unary:
            operand = self.eval(e.operand, env, seqnos)
            if e.op == "-":
                if isinstance(operand, _NUMERIC) and not isinstance(operand, bool):
                    return -operand
                return MISSING
            if operand is MISSING:
                return MISSING
            if isinstance(operand, bool):
                return not operand
            return MISSING
        if kind is ObjectExpr:
            out = {}
            for key, vexpr in e.fields:
                v = self.eval(vexpr, env, seqnos)
                if v is not MISSING:
                    out[key] = v
            return out
        if kind is ArrayExpr:
            return [
                v for item in e.items
                if (v := self.eval(item, env, seqnos)) is not MISSING
            ]
        if kind is SubqueryExpr:
            subplan = self.plan.subplans[id(e)]
            sub = _Evaluator(subplan, self.ctx)
            return sub.run(dict(env))
        raise EvalError(f"unknown expression node {e!r}")

    def _call(self, e: FunctionCall, env: dict, seqnos: dict):
        name = e.name
        if name == "is_new":
            alias = e.args[0].name
            seq = seqnos.get(alias)
            key = self.plan.active_keys.get(alias)
            if seq is None or key is None:
                return MISSING
            prev, cur = self.ctx.watermarks.get(key, (0, 0))
            return prev < seq <= cur
        args = [self.eval(a, env, seqnos) for a in e.args]
        if any(a is MISSING for a in args):
            return MISSING
        builtin = _BUILTINS.get(name)
        if builtin is not None:
            try:
                return builtin(*args)
            except AdmError as exc:
                raise EvalError(str(exc)) from exc
        if name == "threateningRating":
            if self.ctx.wordlist is None:
                raise EvalError("no word list configured for threateningRating")
            if type(args[0]) is not str:
                return MISSING
            return threatening_rating(args[0], self.ctx.wordlist)
        fn = self.ctx.resolve_function(name)
        if fn is None:
            raise EvalError(f"unknown function {name!r}")
        return apply_function(fn, args, self.ctx)

    # -- row loop ---------------------------------------------------------------

    def run(self, env: dict) -> list:
        rows: list = []
        self._descend(0, env, {}, rows)
        if self.plan.order_by is not None:
            descending = self.plan.order_by.descending
            rows.sort(key=lambda pair: pair[0], reverse=descending)
        return [value for _, value in rows]

    def _descend(self, idx: int, env: dict, seqnos: dict, rows: list) -> None:
        steps = self.plan.steps
        if idx == len(steps):
            self._emit(env, seqnos, rows)
            return
        step = steps[idx]
        kind = type(step)
        if kind is _ScanStep:
            dataset = self.ctx.catalog.get_dataset(*step.key)
            if step.restricted:
                low, high = self.ctx.watermarks.get(step.key, (0, 0))
            else:
                low, high = 0, self.ctx.bound(step.key)
            if step.pkey_lookup is not None:
                records = ()
                key_value = self.eval(step.pkey_lookup, env, seqnos)
                if key_value is not MISSING:
                    try:
                        record = dataset.get(key_value)
                    except TypeError:  # unhashable key value never matches
                        record = None
                    if record is not None and low < record.seqno <= high:
                        records = (record,)
            else:
                records = dataset.scan(low, high)
            alias = step.alias
            for record in records:
                env[alias] = record.value
                seqnos[alias] = record.seqno
                self._descend(idx + 1, env, seqnos, rows)
            env.pop(alias, None)
            seqnos.pop(alias, None)
        elif kind is _UnnestStep:
            value = self.eval(step.path, env, seqnos)
            if type(value) is list:
                alias = step.alias
                for item in value:
                    env[alias] = item
                    self._descend(idx + 1, env, seqnos, rows)
                env.pop(alias, None)
        elif kind is _LetStep:
            env[step.name] = self.eval(step.expr, env, seqnos)
            self._descend(idx + 1, env, seqnos, rows)
            env.pop(step.name, None)
        elif kind is _FilterStep:
            if self.eval(step.expr, env, seqnos) is True:
                self._descend(idx + 1, env, seqnos, rows)
        else:
            raise EvalError(f"unknown step {step!r}")

    def _emit(self, env: dict, seqnos: dict, rows: list) -> None:
        if self.plan.select_value is not None:
            value = self.eval(self.plan.select_value, env, seqnos)
            if value is MISSING:
                return
        else:
            value = {}
            for p in self.plan.select_items:
                v = self.eval(p.expr, env, seqnos)
                if v is not MISSING:
                    value[p.alias] = v
        if self.plan.order_by is not None:
            key = _sort_key(self.eval(self.plan.order_by.expr, env, seqnos))
        else:
            key = 0
        rows.append((key, value))


def _sort_key(v):
    """Total order across the value kinds ORDER BY can meet; MISSING last."""
    if v is MISSING or v is None:
        return (9, 0)
    if isinstance(v, bool):
        return (3, v)
    if isinstance(v, _NUMERIC):
        return (0, v)
    if isinstance(v, str):
        return (1, v)
    if isinstance(v, Datetime):
        return (2, v.millis)
    return (8, repr(v))


def execute_query(plan: QueryPlan, ctx: ExecutionContext) -> list:
    """Run a compiled plan; parameter bindings come from the context."""
    return _Evaluator(plan, ctx).run({})


def compile_and_execute(
    ast: QueryAst, ctx: ExecutionContext, params: list | None = None,
    allow_is_new: bool = False,
) -> list:
    plan = compile_query(
        ast, ctx.catalog, ctx.default_dataverse,
        params=params if params is not None else list(ctx.bindings),
        allow_is_new=allow_is_new, functions=ctx.functions,
    )
    return execute_query(plan, ctx)


# -- enrichment functions --------------------------------------------------------

def apply_function(fn: UserFunction, args: list, ctx: ExecutionContext):
    """Apply a declared function to argument values; body subqueries run
    against the context's snapshot bounds."""
    if len(args) != len(fn.params):
        raise EvalError(
            f"{fn.name} expects {len(fn.params)} argument(s), got {len(args)}"
        )
    if not fn._compiled:
        with fn._lock:
            if not fn._compiled:
                compiler = _Compiler(
                    ctx.catalog, fn.dataverse, set(fn.params),
                    allow_is_new=False, functions=ctx.functions,
                )
                subplans: dict = {}
                compiler._check_expr(fn.body, subplans, set(fn.params))
                compiler._check_names(fn.body, set(fn.params))
                fn._subplans = subplans
                fn._compiled = True
    shell = QueryPlan(
        ast=None, steps=[], select_value=None, select_items=(),
        order_by=None, active_keys={}, subplans=fn._subplans,
    )
    evaluator = _Evaluator(shell, ctx)
    env = dict(zip(fn.params, args))
    result = evaluator.eval(fn.body, env, {})
    if result is MISSING:
        raise EvalError(f"{fn.name} evaluated to MISSING")
    return result


def enrich_record(fn: UserFunction, record: dict, ctx: ExecutionContext) -> dict:
    """Single-record enrichment as used by dynamic feeds."""
    result = apply_function(fn, [record], ctx)
    if type(result) is not dict:
        raise EvalError(f"{fn.name} must return an object")
    return result
