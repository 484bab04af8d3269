"""AST node types for the statement and channel-query languages, plus the
canonical pretty-printer used by round-trip tests and the metadata journal."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from archipelago.adm import Value, serialize_adm


# -- expressions -------------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class FieldAccess:
    base: "Expr"
    field: str


@dataclass(frozen=True)
class IndexAccess:
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class FunctionCall:
    name: str
    args: tuple


@dataclass(frozen=True)
class Unary:
    op: str  # '-' | 'NOT'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # arithmetic, comparison, AND, OR
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class ObjectExpr:
    fields: tuple  # of (key, Expr)


@dataclass(frozen=True)
class ArrayExpr:
    items: tuple


@dataclass(frozen=True)
class SubqueryExpr:
    query: "QueryAst"


Expr = Union[
    Literal, VarRef, FieldAccess, IndexAccess, FunctionCall, Unary, Binary,
    ObjectExpr, ArrayExpr, SubqueryExpr,
]


# -- queries -----------------------------------------------------------------

@dataclass(frozen=True)
class FromClause:
    dataverse: Optional[str]
    dataset: str
    alias: str


@dataclass(frozen=True)
class UnnestClause:
    path: Expr
    alias: str


@dataclass(frozen=True)
class LetBinding:
    name: str
    expr: Expr


@dataclass(frozen=True)
class Projection:
    expr: Expr
    alias: str
    explicit_as: bool = False


@dataclass(frozen=True)
class OrderBy:
    expr: Expr
    descending: bool = False


@dataclass(frozen=True)
class QueryAst:
    from_clauses: tuple = ()
    unnest_clauses: tuple = ()
    let_bindings: tuple = ()
    where: Optional[Expr] = None
    select_value: Optional[Expr] = None
    select_items: tuple = ()
    order_by: Optional[OrderBy] = None
    select_first: bool = False


# -- statements ----------------------------------------------------------------

@dataclass
class UseDataverse:
    name: str


@dataclass
class TypeField:
    name: str
    type_name: str
    optional: bool = False


@dataclass
class CreateType:
    name: str
    fields: list
    open: bool = True


@dataclass
class CreateDataset:
    name: str
    type_name: str
    pkey: str
    active: bool = False
    autogenerated: bool = False


@dataclass
class CreateFeed:
    name: str
    config: dict  # raw WITH map, unknown keys preserved verbatim


@dataclass
class ConnectFeed:
    feed: str
    dataset: str
    apply_function: Optional[str] = None


@dataclass
class StartFeed:
    feed: str


@dataclass
class StopFeed:
    feed: str


@dataclass
class CreateBroker:
    name: str
    endpoint: str
    config: dict = field(default_factory=dict)


@dataclass
class CreateChannel:
    name: str
    params: list
    period_text: str  # raw duration text; validated when the channel is created
    body: QueryAst
    mode: str = "push"  # push | pull
    continuous: bool = True
    mode_explicit: bool = True


@dataclass
class Subscribe:
    channel: str
    arguments: list  # of Value
    broker: str


@dataclass
class Unsubscribe:
    subscription_id: str


@dataclass
class DropBroker:
    name: str


@dataclass
class CreateFunction:
    name: str
    params: list
    body: Expr


@dataclass
class Insert:
    dataset: str
    values: Expr


@dataclass
class Query:
    ast: QueryAst


Statement = Union[
    UseDataverse, CreateType, CreateDataset, CreateFeed, ConnectFeed, StartFeed,
    StopFeed, CreateBroker, CreateChannel, Subscribe, Unsubscribe, DropBroker,
    CreateFunction, Insert, Query,
]


# -- canonical rendering -------------------------------------------------------

_PRECEDENCE = {
    "OR": 1, "AND": 2,
    "=": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4, "*": 5, "/": 5,
}


def render_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Literal):
        return serialize_adm(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, FieldAccess):
        return f"{render_expr(e.base, 9)}.{e.field}"
    if isinstance(e, IndexAccess):
        return f"{render_expr(e.base, 9)}[{render_expr(e.index)}]"
    if isinstance(e, FunctionCall):
        return f"{e.name}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, Unary):
        inner = render_expr(e.operand, 8)
        return f"-{inner}" if e.op == "-" else f"NOT {inner}"
    if isinstance(e, Binary):
        prec = _PRECEDENCE[e.op]
        text = f"{render_expr(e.left, prec)} {e.op} {render_expr(e.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, ObjectExpr):
        inner = ", ".join(f'"{k}": {render_expr(v)}' for k, v in e.fields)
        return "{" + inner + "}"
    if isinstance(e, ArrayExpr):
        return "[" + ", ".join(render_expr(item) for item in e.items) + "]"
    if isinstance(e, SubqueryExpr):
        return f"({render_query(e.query)})"
    raise TypeError(f"unknown expression node {e!r}")


def _render_select_core(q: QueryAst) -> str:
    if q.select_value is not None:
        return f"SELECT VALUE {render_expr(q.select_value)}"
    parts = []
    for p in q.select_items:
        text = render_expr(p.expr)
        derived = (
            isinstance(p.expr, VarRef) and p.expr.name == p.alias
        ) or (isinstance(p.expr, FieldAccess) and p.expr.field == p.alias)
        if derived and not p.explicit_as:
            parts.append(text)
        elif p.explicit_as:
            parts.append(f"{text} AS {p.alias}")
        else:
            parts.append(f"{text} {p.alias}")
    return "SELECT " + ", ".join(parts)


def _render_body_clauses(q: QueryAst) -> list:
    parts = []
    if q.from_clauses:
        items = ", ".join(
            (f"{f.dataverse}.{f.dataset}" if f.dataverse else f.dataset) + f" {f.alias}"
            for f in q.from_clauses
        )
        parts.append(f"FROM {items}")
    for u in q.unnest_clauses:
        parts.append(f"UNNEST {render_expr(u.path)} {u.alias}")
    if q.let_bindings:
        binds = ", ".join(f"{b.name} = {render_expr(b.expr)}" for b in q.let_bindings)
        parts.append(f"LET {binds}")
    if q.where is not None:
        parts.append(f"WHERE {render_expr(q.where)}")
    return parts


def render_query(q: QueryAst) -> str:
    clauses = _render_body_clauses(q)
    if q.select_first:
        parts = [_render_select_core(q)] + clauses
    else:
        parts = clauses + [_render_select_core(q)]
    if q.order_by is not None:
        direction = " DESC" if q.order_by.descending else ""
        parts.append(f"ORDER BY {render_expr(q.order_by.expr)}{direction}")
    return " ".join(parts)


def _render_with_map(config: dict) -> str:
    inner = ", ".join(f'"{k}": {serialize_adm(v)}' for k, v in config.items())
    return "{" + inner + "}"


def render_statement(stmt: Statement) -> str:
    """Canonical single-statement text, without the trailing semicolon."""
    if isinstance(stmt, UseDataverse):
        return f"USE {stmt.name}"
    if isinstance(stmt, CreateType):
        fields = ", ".join(
            f"{f.name}: {f.type_name}{'?' if f.optional else ''}" for f in stmt.fields
        )
        return f"CREATE TYPE {stmt.name} AS {{ {fields} }}"
    if isinstance(stmt, CreateDataset):
        active = "ACTIVE " if stmt.active else ""
        auto = " AUTOGENERATED" if stmt.autogenerated else ""
        return (
            f"CREATE {active}DATASET {stmt.name}({stmt.type_name}) "
            f"PRIMARY KEY {stmt.pkey}{auto}"
        )
    if isinstance(stmt, CreateFeed):
        return f"CREATE FEED {stmt.name} WITH {_render_with_map(stmt.config)}"
    if isinstance(stmt, ConnectFeed):
        apply = f" APPLY FUNCTION {stmt.apply_function}" if stmt.apply_function else ""
        return f"CONNECT FEED {stmt.feed} TO DATASET {stmt.dataset}{apply}"
    if isinstance(stmt, StartFeed):
        return f"START FEED {stmt.feed}"
    if isinstance(stmt, StopFeed):
        return f"STOP FEED {stmt.feed}"
    if isinstance(stmt, CreateBroker):
        with_part = f" WITH {_render_with_map(stmt.config)}" if stmt.config else ""
        return f'CREATE BROKER {stmt.name} AT "{stmt.endpoint}"{with_part}'
    if isinstance(stmt, CreateChannel):
        continuous = "CONTINUOUS " if stmt.continuous else ""
        mode = f"{stmt.mode.upper()} " if stmt.mode_explicit else ""
        params = ", ".join(stmt.params)
        return (
            f"CREATE {continuous}{mode}CHANNEL {stmt.name}({params}) "
            f'PERIOD duration("{stmt.period_text}") '
            f"{{ {render_query(stmt.body)} }}"
        )
    if isinstance(stmt, Subscribe):
        args = ", ".join(serialize_adm(a) for a in stmt.arguments)
        return f"SUBSCRIBE TO {stmt.channel}({args}) ON {stmt.broker}"
    if isinstance(stmt, Unsubscribe):
        return f'UNSUBSCRIBE "{stmt.subscription_id}"'
    if isinstance(stmt, DropBroker):
        return f"DROP BROKER {stmt.name}"
    if isinstance(stmt, CreateFunction):
        params = ", ".join(stmt.params)
        return f"CREATE FUNCTION {stmt.name}({params}) {{ {render_expr(stmt.body)} }}"
    if isinstance(stmt, Insert):
        return f"INSERT INTO {stmt.dataset} ({render_expr(stmt.values)})"
    if isinstance(stmt, Query):
        return render_query(stmt.ast)
    raise TypeError(f"unknown statement {stmt!r}")
