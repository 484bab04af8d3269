"""Decoder for bridge subscription-parameter strings.

The feed config key ``bad-channel-parameters`` packs one or more argument
lists into a single string: semicolons separate subscriptions, commas
separate arguments within one subscription. String arguments are quoted
(the surrounding statement may leave the quotes backslash-escaped, so a
backslash directly before a quote is tolerated); unquoted tokens are taken
as numeric literals when they parse as numbers and as bare words otherwise.
"""

from __future__ import annotations

from archipelago.adm import BIGINT_MAX, BIGINT_MIN, Value


class ParameterSyntaxError(ValueError):
    pass


def _quote_at(text: str, i: int) -> int:
    """Width of a quote delimiter at position i (2 for \\", 1 for ", 0)."""
    if text[i] == '"':
        return 1
    if text[i] == "\\" and i + 1 < len(text) and text[i + 1] == '"':
        return 2
    return 0


def _lex_args(text: str) -> list:
    """Split one subscription's argument text into argument values."""
    args: list[Value] = []
    current: list[str] = []
    in_string = False
    has_string = False
    i = 0
    n = len(text)

    def flush():
        if has_string:
            args.append("".join(current))
        else:
            token = "".join(current).strip()
            if not token:
                raise ParameterSyntaxError("empty argument")
            args.append(_numeric_or_word(token))
        current.clear()

    while i < n:
        width = _quote_at(text, i)
        if width:
            in_string = not in_string
            has_string = True
            i += width
            continue
        ch = text[i]
        if ch == "," and not in_string:
            flush()
            has_string = False
        else:
            current.append(ch)
        i += 1
    if in_string:
        raise ParameterSyntaxError("unbalanced quotes in parameter string")
    flush()
    return args


def _numeric_or_word(token: str) -> Value:
    try:
        n = int(token)
        if not (BIGINT_MIN <= n <= BIGINT_MAX):
            raise ParameterSyntaxError("integer argument outside 64-bit range")
        return n
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _split_outside_strings(text: str, sep: str) -> list:
    parts = []
    current = []
    in_string = False
    i = 0
    n = len(text)
    while i < n:
        width = _quote_at(text, i)
        if width:
            in_string = not in_string
            current.append(text[i : i + width])
            i += width
            continue
        if text[i] == sep and not in_string:
            parts.append("".join(current))
            current = []
        else:
            current.append(text[i])
        i += 1
    parts.append("".join(current))
    return parts


def parse_channel_parameters(text: str) -> list:
    """Decode a packed parameter string into one argument list per
    subscription."""
    if not text.strip():
        raise ParameterSyntaxError("empty parameter string")
    subscriptions = []
    for chunk in _split_outside_strings(text, ";"):
        if not chunk.strip():
            raise ParameterSyntaxError("empty subscription in parameter string")
        subscriptions.append(_lex_args(chunk))
    return subscriptions
