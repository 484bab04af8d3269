"""Declarative statement language: lexer, parser, AST, pretty-printer."""

from archipelago.ddl.lexer import ParseError, tokenize
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
    render_expr,
    render_query,
    render_statement,
)
from archipelago.ddl.params import ParameterSyntaxError, parse_channel_parameters
from archipelago.ddl.parser import (
    free_variables,
    parse_channel_body,
    parse_expression,
    parse_query,
    parse_statements,
)

__all__ = [
    "ParseError",
    "ParameterSyntaxError",
    "parse_statements",
    "parse_query",
    "parse_channel_body",
    "parse_expression",
    "parse_channel_parameters",
    "free_variables",
    "render_statement",
    "render_query",
    "render_expr",
    "tokenize",
    "Statement",
    "QueryAst",
    "Expr",
]
