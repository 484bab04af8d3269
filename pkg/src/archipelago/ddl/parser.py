"""Recursive-descent parser for the statement language and the restricted
channel-query language.

Keywords are case-insensitive; identifiers are case-sensitive. Both clause
orders are accepted for queries: SELECT-first (`SELECT ... FROM ... WHERE`)
and FROM-first (`FROM ... UNNEST ... LET ... WHERE ... SELECT`), with
ORDER BY trailing the SELECT clause.
"""

from __future__ import annotations

from archipelago.adm import (
    BIGINT_MAX,
    BIGINT_MIN,
    AdmError,
    Datetime,
    Duration,
    Value,
    parse_point_text,
    parse_rectangle_text,
    parse_uuid_text,
)
from archipelago.ddl.lexer import ParseError, Token, tokenize
from archipelago.ddl.nodes import (
    ArrayExpr,
    Binary,
    ConnectFeed,
    CreateBroker,
    CreateChannel,
    CreateDataset,
    CreateFeed,
    CreateFunction,
    CreateType,
    DropBroker,
    Expr,
    FieldAccess,
    FromClause,
    FunctionCall,
    IndexAccess,
    Insert,
    LetBinding,
    Literal,
    ObjectExpr,
    OrderBy,
    Projection,
    Query,
    QueryAst,
    StartFeed,
    Statement,
    StopFeed,
    Subscribe,
    SubqueryExpr,
    TypeField,
    Unary,
    UnnestClause,
    Unsubscribe,
    UseDataverse,
    VarRef,
)

_CONSTRUCTORS = {
    "datetime": Datetime.from_text,
    "duration": Duration.from_text,
    "point": parse_point_text,
    "rectangle": parse_rectangle_text,
    "uuid": parse_uuid_text,
}

# identifiers that cannot be swallowed as an implicit projection/scan alias
_CLAUSE_KEYWORDS = {
    "FROM", "WHERE", "LET", "UNNEST", "ORDER", "SELECT", "AND", "OR", "NOT",
    "ON", "AS", "BY", "ASC", "DESC", "VALUE", "TO", "AT", "APPLY", "PERIOD",
    "GROUP", "LIMIT",
}

_COMPARISONS = {"=", "!=", "<", "<=", ">", ">="}


class _Parser:
    def __init__(self, text: str):
        self._tokens = tokenize(text)
        self._pos = 0

    # -- token plumbing ------------------------------------------------------

    def _peek(self, ahead: int = 0) -> Token:
        return self._tokens[min(self._pos + ahead, len(self._tokens) - 1)]

    def _next(self) -> Token:
        tok = self._tokens[self._pos]
        if tok.kind != "EOF":
            self._pos += 1
        return tok

    def _error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self._peek()
        return ParseError(message, tok.line, tok.col)

    def _at_kw(self, *names: str) -> bool:
        tok = self._peek()
        return tok.kind == "IDENT" and tok.value.upper() in names

    def _match_kw(self, *names: str) -> bool:
        if self._at_kw(*names):
            self._next()
            return True
        return False

    def _expect_kw(self, name: str) -> Token:
        tok = self._peek()
        if tok.kind == "IDENT" and tok.value.upper() == name:
            return self._next()
        raise self._error(f"expected {name}, found {tok.value or 'end of input'!r}")

    def _expect_op(self, op: str) -> Token:
        tok = self._peek()
        if tok.kind == "OP" and tok.value == op:
            return self._next()
        raise self._error(f"expected {op!r}, found {tok.value or 'end of input'!r}")

    def _match_op(self, op: str) -> bool:
        tok = self._peek()
        if tok.kind == "OP" and tok.value == op:
            self._next()
            return True
        return False

    def _ident(self, what: str = "identifier") -> str:
        tok = self._peek()
        if tok.kind != "IDENT":
            raise self._error(f"expected {what}, found {tok.value or 'end of input'!r}")
        return self._next().value

    def _string(self, what: str = "string literal") -> str:
        tok = self._peek()
        if tok.kind != "STRING":
            raise self._error(f"expected {what}")
        return self._next().value

    # -- statements ------------------------------------------------------------

    def parse_statements(self) -> list:
        statements = []
        while self._peek().kind != "EOF":
            statements.append(self._statement())
            self._expect_op(";")
        return statements

    def _statement(self) -> Statement:
        if self._at_kw("USE"):
            self._next()
            return UseDataverse(self._ident("dataverse name"))
        if self._at_kw("CREATE"):
            return self._create()
        if self._at_kw("CONNECT"):
            self._next()
            self._expect_kw("FEED")
            feed = self._ident("feed name")
            self._expect_kw("TO")
            self._expect_kw("DATASET")
            dataset = self._ident("dataset name")
            fn = None
            if self._match_kw("APPLY"):
                self._expect_kw("FUNCTION")
                fn = self._ident("function name")
            return ConnectFeed(feed, dataset, fn)
        if self._at_kw("START"):
            self._next()
            self._expect_kw("FEED")
            return StartFeed(self._ident("feed name"))
        if self._at_kw("STOP"):
            self._next()
            self._expect_kw("FEED")
            return StopFeed(self._ident("feed name"))
        if self._at_kw("SUBSCRIBE"):
            self._next()
            self._expect_kw("TO")
            channel = self._ident("channel name")
            self._expect_op("(")
            args = []
            if not self._match_op(")"):
                args.append(self._constant("subscription argument"))
                while self._match_op(","):
                    args.append(self._constant("subscription argument"))
                self._expect_op(")")
            self._expect_kw("ON")
            return Subscribe(channel, args, self._ident("broker name"))
        if self._at_kw("UNSUBSCRIBE"):
            self._next()
            return Unsubscribe(self._string("subscription id"))
        if self._at_kw("DROP"):
            self._next()
            self._expect_kw("BROKER")
            return DropBroker(self._ident("broker name"))
        if self._at_kw("INSERT"):
            self._next()
            self._expect_kw("INTO")
            dataset = self._ident("dataset name")
            if self._match_op("("):
                values = self._expr()
                self._expect_op(")")
            else:
                values = self._expr()
            return Insert(dataset, values)
        if self._at_kw("SELECT", "FROM"):
            return Query(self._query())
        tok = self._peek()
        raise self._error(f"expected a statement, found {tok.value or 'end of input'!r}")

    def _create(self) -> Statement:
        self._expect_kw("CREATE")
        if self._match_kw("TYPE"):
            name = self._ident("type name")
            self._expect_kw("AS")
            self._expect_op("{")
            fields = [self._type_field()]
            while self._match_op(","):
                fields.append(self._type_field())
            self._expect_op("}")
            return CreateType(name, fields)
        if self._at_kw("ACTIVE", "DATASET"):
            active = self._match_kw("ACTIVE")
            self._expect_kw("DATASET")
            name = self._ident("dataset name")
            self._expect_op("(")
            type_name = self._ident("type name")
            self._expect_op(")")
            self._expect_kw("PRIMARY")
            self._expect_kw("KEY")
            pkey = self._ident("key field")
            autogenerated = self._match_kw("AUTOGENERATED")
            return CreateDataset(name, type_name, pkey, active, autogenerated)
        if self._match_kw("FEED"):
            name = self._ident("feed name")
            self._expect_kw("WITH")
            return CreateFeed(name, self._with_map())
        if self._match_kw("BROKER"):
            name = self._ident("broker name")
            self._expect_kw("AT")
            endpoint = self._string("broker endpoint")
            config = self._with_map() if self._match_kw("WITH") else {}
            return CreateBroker(name, endpoint, config)
        if self._at_kw("CONTINUOUS", "PUSH", "PULL", "CHANNEL"):
            continuous = self._match_kw("CONTINUOUS")
            mode_explicit = True
            if self._match_kw("PUSH"):
                mode = "push"
            elif self._match_kw("PULL"):
                mode = "pull"
            else:
                mode, mode_explicit = "push", False
            self._expect_kw("CHANNEL")
            name = self._ident("channel name")
            params = self._param_names()
            self._expect_kw("PERIOD")
            ctor = self._ident("duration constructor")
            if ctor.lower() != "duration":
                raise self._error("channel period must be a duration literal")
            self._expect_op("(")
            period_text = self._string("period duration text")
            self._expect_op(")")
            self._expect_op("{")
            body = self._query()
            self._expect_op("}")
            return CreateChannel(
                name, params, period_text, body, mode, continuous, mode_explicit
            )
        if self._match_kw("FUNCTION"):
            name = self._ident("function name")
            params = self._param_names()
            self._expect_op("{")
            body = self._expr()
            self._expect_op("}")
            return CreateFunction(name, params, body)
        raise self._error("expected TYPE, DATASET, FEED, BROKER, CHANNEL, or FUNCTION")

    def _type_field(self) -> TypeField:
        name = self._ident("field name")
        self._expect_op(":")
        type_name = self._ident("field type")
        optional = self._match_op("?")
        return TypeField(name, type_name, optional)

    def _param_names(self) -> list:
        self._expect_op("(")
        params: list[str] = []
        if not self._match_op(")"):
            params.append(self._ident("parameter name"))
            while self._match_op(","):
                params.append(self._ident("parameter name"))
            self._expect_op(")")
        return params

    # -- constant values (WITH maps, subscription arguments, periods) ---------

    def _with_map(self) -> dict:
        self._expect_op("{")
        config: dict[str, Value] = {}
        if self._match_op("}"):
            return config
        while True:
            tok = self._peek()
            key = self._string("config key")
            if key in config:
                raise self._error(f"duplicate WITH key {key!r}", tok)
            self._expect_op(":")
            config[key] = self._constant("config value")
            if self._match_op(","):
                continue
            self._expect_op("}")
            return config

    def _constant(self, what: str) -> Value:
        tok = self._peek()
        if tok.kind == "STRING":
            return self._next().value
        if tok.kind == "INT":
            self._next()
            if not (BIGINT_MIN <= tok.number <= BIGINT_MAX):
                raise self._error("integer literal outside 64-bit range", tok)
            return tok.number
        if tok.kind == "FLOAT":
            self._next()
            return tok.number
        if tok.kind == "OP" and tok.value == "-":
            self._next()
            inner = self._constant(what)
            if not isinstance(inner, (int, float)) or isinstance(inner, bool):
                raise self._error("expected a number after '-'", tok)
            return -inner
        if tok.kind == "OP" and tok.value == "{":
            obj: dict[str, Value] = {}
            self._next()
            if self._match_op("}"):
                return obj
            while True:
                key_tok = self._peek()
                key = self._string("object key")
                if key in obj:
                    raise self._error(f"duplicate object key {key!r}", key_tok)
                self._expect_op(":")
                obj[key] = self._constant(what)
                if self._match_op(","):
                    continue
                self._expect_op("}")
                return obj
        if tok.kind == "OP" and tok.value == "[":
            self._next()
            arr: list[Value] = []
            if self._match_op("]"):
                return arr
            while True:
                arr.append(self._constant(what))
                if self._match_op(","):
                    continue
                self._expect_op("]")
                return arr
        if tok.kind == "IDENT":
            word = tok.value.lower()
            if tok.value.upper() == "TRUE":
                self._next()
                return True
            if tok.value.upper() == "FALSE":
                self._next()
                return False
            if tok.value.upper() == "NULL":
                self._next()
                return None
            if word in _CONSTRUCTORS and self._peek(1).value == "(":
                self._next()
                self._expect_op("(")
                arg_tok = self._peek()
                arg = self._string("constructor argument")
                self._expect_op(")")
                try:
                    return _CONSTRUCTORS[word](arg)
                except AdmError as exc:
                    raise self._error(str(exc), arg_tok) from None
        raise self._error(f"expected {what}")

    # -- queries ----------------------------------------------------------------

    def _query(self) -> QueryAst:
        if self._at_kw("SELECT"):
            return self._select_first_query()
        if self._at_kw("FROM"):
            return self._from_first_query()
        raise self._error("expected SELECT or FROM")

    def _select_first_query(self) -> QueryAst:
        select_value, select_items = self._select_core()
        from_clauses = self._from_clauses() if self._at_kw("FROM") else ()
        unnest = self._unnest_clauses()
        lets = self._let_clauses()
        where = self._expr() if self._match_kw("WHERE") else None
        order_by = self._order_by()
        return QueryAst(
            from_clauses=from_clauses, unnest_clauses=unnest, let_bindings=lets,
            where=where, select_value=select_value, select_items=select_items,
            order_by=order_by, select_first=True,
        )

    def _from_first_query(self) -> QueryAst:
        from_clauses = self._from_clauses()
        unnest = self._unnest_clauses()
        lets = self._let_clauses()
        where = self._expr() if self._match_kw("WHERE") else None
        select_value, select_items = self._select_core()
        order_by = self._order_by()
        return QueryAst(
            from_clauses=from_clauses, unnest_clauses=unnest, let_bindings=lets,
            where=where, select_value=select_value, select_items=select_items,
            order_by=order_by, select_first=False,
        )

    def _select_core(self):
        self._expect_kw("SELECT")
        if self._match_kw("VALUE"):
            return self._expr(), ()
        items = [self._projection()]
        while self._match_op(","):
            items.append(self._projection())
        return None, tuple(items)

    def _projection(self) -> Projection:
        expr_tok = self._peek()
        expr = self._expr()
        if self._match_kw("AS"):
            return Projection(expr, self._ident("projection alias"), explicit_as=True)
        tok = self._peek()
        if tok.kind == "IDENT" and tok.value.upper() not in _CLAUSE_KEYWORDS:
            return Projection(expr, self._next().value)
        if isinstance(expr, VarRef):
            return Projection(expr, expr.name)
        if isinstance(expr, FieldAccess):
            return Projection(expr, expr.field)
        raise self._error("projection requires an alias", expr_tok)

    def _from_clauses(self) -> tuple:
        self._expect_kw("FROM")
        clauses = [self._from_item()]
        while self._match_op(","):
            clauses.append(self._from_item())
        return tuple(clauses)

    def _from_item(self) -> FromClause:
        first = self._ident("dataset name")
        dataverse = None
        dataset = first
        if self._match_op("."):
            dataverse = first
            dataset = self._ident("dataset name")
        tok = self._peek()
        if tok.kind == "IDENT" and tok.value.upper() not in _CLAUSE_KEYWORDS:
            return FromClause(dataverse, dataset, self._next().value)
        return FromClause(dataverse, dataset, dataset)

    def _unnest_clauses(self) -> tuple:
        clauses = []
        while self._match_kw("UNNEST"):
            path = self._expr()
            self._match_kw("AS")
            clauses.append(UnnestClause(path, self._ident("unnest alias")))
        return tuple(clauses)

    def _let_clauses(self) -> tuple:
        binds = []
        while self._match_kw("LET"):
            while True:
                name = self._ident("binding name")
                self._expect_op("=")
                binds.append(LetBinding(name, self._expr()))
                if not self._match_op(","):
                    break
        return tuple(binds)

    def _order_by(self):
        if not self._match_kw("ORDER"):
            return None
        self._expect_kw("BY")
        expr = self._expr()
        descending = False
        if self._match_kw("DESC"):
            descending = True
        else:
            self._match_kw("ASC")
        return OrderBy(expr, descending)

    # -- expressions -------------------------------------------------------------

    def _expr(self) -> Expr:
        return self._or_expr()

    def _or_expr(self) -> Expr:
        left = self._and_expr()
        while self._at_kw("OR"):
            self._next()
            left = Binary("OR", left, self._and_expr())
        return left

    def _and_expr(self) -> Expr:
        left = self._not_expr()
        while self._at_kw("AND"):
            self._next()
            left = Binary("AND", left, self._not_expr())
        return left

    def _not_expr(self) -> Expr:
        if self._match_kw("NOT"):
            return Unary("NOT", self._not_expr())
        return self._comparison()

    def _comparison(self) -> Expr:
        left = self._additive()
        tok = self._peek()
        if tok.kind == "OP" and tok.value in _COMPARISONS:
            self._next()
            return Binary(tok.value, left, self._additive())
        return left

    def _additive(self) -> Expr:
        left = self._multiplicative()
        while True:
            tok = self._peek()
            if tok.kind == "OP" and tok.value in ("+", "-"):
                self._next()
                left = Binary(tok.value, left, self._multiplicative())
            else:
                return left

    def _multiplicative(self) -> Expr:
        left = self._unary()
        while True:
            tok = self._peek()
            if tok.kind == "OP" and tok.value in ("*", "/"):
                self._next()
                left = Binary(tok.value, left, self._unary())
            else:
                return left

    def _unary(self) -> Expr:
        tok = self._peek()
        if tok.kind == "OP" and tok.value == "-":
            self._next()
            operand = self._unary()
            if isinstance(operand, Literal) and isinstance(operand.value, (int, float)) \
                    and not isinstance(operand.value, bool):
                return Literal(-operand.value)
            return Unary("-", operand)
        return self._postfix()

    def _postfix(self) -> Expr:
        expr = self._primary()
        while True:
            if self._match_op("."):
                expr = FieldAccess(expr, self._ident("field name"))
            elif self._match_op("["):
                index = self._expr()
                self._expect_op("]")
                expr = IndexAccess(expr, index)
            else:
                return expr

    def _primary(self) -> Expr:
        tok = self._peek()
        if tok.kind == "STRING":
            self._next()
            return Literal(tok.value)
        if tok.kind == "INT":
            self._next()
            if not (BIGINT_MIN <= tok.number <= BIGINT_MAX):
                raise self._error("integer literal outside 64-bit range", tok)
            return Literal(tok.number)
        if tok.kind == "FLOAT":
            self._next()
            return Literal(tok.number)
        if tok.kind == "OP" and tok.value == "(":
            self._next()
            if self._at_kw("SELECT", "FROM"):
                query = self._query()
                self._expect_op(")")
                return SubqueryExpr(query)
            inner = self._expr()
            self._expect_op(")")
            return inner
        if tok.kind == "OP" and tok.value == "{":
            self._next()
            fields = []
            seen = set()
            if not self._match_op("}"):
                while True:
                    key_tok = self._peek()
                    key = self._string("object key")
                    if key in seen:
                        raise self._error(f"duplicate object key {key!r}", key_tok)
                    seen.add(key)
                    self._expect_op(":")
                    fields.append((key, self._expr()))
                    if self._match_op(","):
                        continue
                    self._expect_op("}")
                    break
            return ObjectExpr(tuple(fields))
        if tok.kind == "OP" and tok.value == "[":
            self._next()
            items = []
            if not self._match_op("]"):
                while True:
                    items.append(self._expr())
                    if self._match_op(","):
                        continue
                    self._expect_op("]")
                    break
            return ArrayExpr(tuple(items))
        if tok.kind == "IDENT":
            upper = tok.value.upper()
            if upper == "TRUE":
                self._next()
                return Literal(True)
            if upper == "FALSE":
                self._next()
                return Literal(False)
            if upper == "NULL":
                self._next()
                return Literal(None)
            name = self._next().value
            if self._peek().kind == "OP" and self._peek().value == "(":
                self._next()
                args = []
                if not self._match_op(")"):
                    while True:
                        args.append(self._expr())
                        if self._match_op(","):
                            continue
                        self._expect_op(")")
                        break
                ctor = _CONSTRUCTORS.get(name.lower())
                if ctor and len(args) == 1 and isinstance(args[0], Literal) \
                        and isinstance(args[0].value, str):
                    try:
                        return Literal(ctor(args[0].value))
                    except AdmError as exc:
                        raise self._error(str(exc), tok) from None
                return FunctionCall(name, tuple(args))
            return VarRef(name)
        raise self._error(f"expected an expression, found {tok.value or 'end of input'!r}")


def parse_statements(text: str) -> list:
    """Parse semicolon-terminated statements into AST nodes, in source order."""
    return _Parser(text).parse_statements()


def parse_query(text: str) -> QueryAst:
    parser = _Parser(text)
    query = parser._query()
    tok = parser._peek()
    if tok.kind != "EOF":
        raise ParseError(f"trailing input after query: {tok.value!r}", tok.line, tok.col)
    return query


def parse_channel_body(text: str, params: list | None = None) -> QueryAst:
    """Parse a brace-delimited channel body (braces optional here).

    When ``params`` is given, every free variable must be one of them;
    structural rules for ``is_new`` are always enforced.
    """
    stripped = text.strip()
    if stripped.startswith("{") and stripped.endswith("}"):
        stripped = stripped[1:-1]
    query = parse_query(stripped)
    validate_query_structure(query)
    if params is not None:
        unbound = free_variables(query) - set(params)
        if unbound:
            raise ParseError(f"unbound alias(es): {', '.join(sorted(unbound))}", 1, 1)
    return query


def parse_expression(text: str) -> Expr:
    parser = _Parser(text)
    expr = parser._expr()
    tok = parser._peek()
    if tok.kind != "EOF":
        raise ParseError(f"trailing input after expression: {tok.value!r}", tok.line, tok.col)
    return expr


def _walk_expr_free(e: Expr, bound: set, free: set) -> None:
    if isinstance(e, VarRef):
        if e.name not in bound:
            free.add(e.name)
    elif isinstance(e, FieldAccess):
        _walk_expr_free(e.base, bound, free)
    elif isinstance(e, IndexAccess):
        _walk_expr_free(e.base, bound, free)
        _walk_expr_free(e.index, bound, free)
    elif isinstance(e, FunctionCall):
        for a in e.args:
            _walk_expr_free(a, bound, free)
    elif isinstance(e, Unary):
        _walk_expr_free(e.operand, bound, free)
    elif isinstance(e, Binary):
        _walk_expr_free(e.left, bound, free)
        _walk_expr_free(e.right, bound, free)
    elif isinstance(e, ObjectExpr):
        for _, v in e.fields:
            _walk_expr_free(v, bound, free)
    elif isinstance(e, ArrayExpr):
        for item in e.items:
            _walk_expr_free(item, bound, free)
    elif isinstance(e, SubqueryExpr):
        _walk_query_free(e.query, set(bound), free)


def _walk_query_free(q: QueryAst, bound: set, free: set) -> None:
    for f in q.from_clauses:
        bound.add(f.alias)
    for u in q.unnest_clauses:
        _walk_expr_free(u.path, bound, free)
        bound.add(u.alias)
    for b in q.let_bindings:
        _walk_expr_free(b.expr, bound, free)
        bound.add(b.name)
    if q.where is not None:
        _walk_expr_free(q.where, bound, free)
    if q.select_value is not None:
        _walk_expr_free(q.select_value, bound, free)
    for p in q.select_items:
        _walk_expr_free(p.expr, bound, free)
    if q.order_by is not None:
        _walk_expr_free(q.order_by.expr, bound, free)


def free_variables(q: QueryAst) -> set:
    """Variables referenced but not bound by FROM/UNNEST/LET (at any depth)."""
    free: set[str] = set()
    _walk_query_free(q, set(), free)
    return free


def _check_is_new(e: Expr) -> None:
    if isinstance(e, FunctionCall):
        if e.name.lower() == "is_new":
            if len(e.args) != 1 or not isinstance(e.args[0], VarRef):
                raise ParseError("is_new takes a single dataset alias", 1, 1)
        for a in e.args:
            _check_is_new(a)
    elif isinstance(e, (FieldAccess,)):
        _check_is_new(e.base)
    elif isinstance(e, IndexAccess):
        _check_is_new(e.base)
        _check_is_new(e.index)
    elif isinstance(e, Unary):
        _check_is_new(e.operand)
    elif isinstance(e, Binary):
        _check_is_new(e.left)
        _check_is_new(e.right)
    elif isinstance(e, ObjectExpr):
        for _, v in e.fields:
            _check_is_new(v)
    elif isinstance(e, ArrayExpr):
        for item in e.items:
            _check_is_new(item)
    elif isinstance(e, SubqueryExpr):
        validate_query_structure(e.query)


def validate_query_structure(q: QueryAst) -> None:
    """Structural rules that hold regardless of catalog state."""
    for clause in (q.where, q.select_value):
        if clause is not None:
            _check_is_new(clause)
    for u in q.unnest_clauses:
        _check_is_new(u.path)
    for b in q.let_bindings:
        _check_is_new(b.expr)
    for p in q.select_items:
        _check_is_new(p.expr)
    if q.order_by is not None:
        _check_is_new(q.order_by.expr)
