"""Tokenizer and recursive-descent parser for the policy DSL.

Scope is tracked during parsing so that use-before-define and duplicate
definitions are parse errors, and so identifiers in api-call target position
can be classified: in-scope names become dynamic targets, anything else is a
literal app/api name.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import nodes

KEYWORDS = {"fn", "let", "call", "use", "if", "else", "foreach", "in", "return", "true", "false"}

_PUNCT = ("==", "!=", "<=", ">=", "(", ")", "{", "}", "[", "]", ",", "=", ".", "<", ">", "+", "-", "*")


class LangError(ValueError):
    """Parse failure with position and error kind."""

    def __init__(self, kind: str, message: str, line: int, col: int):
        super().__init__(f"{kind} at line {line}, column {col}: {message}")
        self.kind = kind
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    type: str  # ident | keyword | number | string | punct | eof
    value: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch in " \t\r":
            i, col = i + 1, col + 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            i, col = i + 1, col + 1
            out = []
            while True:
                if i >= n or source[i] == "\n":
                    raise LangError("syntax error", "unterminated string", start_line, start_col)
                c = source[i]
                if c == "\\":
                    if i + 1 >= n:
                        raise LangError("syntax error", "unterminated escape", line, col)
                    esc = source[i + 1]
                    mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                    if mapped is None:
                        raise LangError("syntax error", f"unknown escape \\{esc}", line, col)
                    out.append(mapped)
                    i, col = i + 2, col + 2
                    continue
                if c == '"':
                    i, col = i + 1, col + 1
                    break
                out.append(c)
                i, col = i + 1, col + 1
            tokens.append(Token("string", "".join(out), start_line, start_col))
            continue
        if ch.isdigit():
            start_col = col
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            tokens.append(Token("number", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            start_col = col
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            tokens.append(Token("keyword" if word in KEYWORDS else "ident", word, line, start_col))
            col += j - i
            i = j
            continue
        for punct in _PUNCT:
            if source.startswith(punct, i):
                tokens.append(Token("punct", punct, line, col))
                i, col = i + len(punct), col + len(punct)
                break
        else:
            raise LangError("syntax error", f"unexpected character {ch!r}", line, col)
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.scopes: list[set[str]] = []

    # token helpers

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, kind: str, message: str, tok: Token | None = None) -> LangError:
        tok = tok or self.peek()
        return LangError(kind, message, tok.line, tok.col)

    def expect_punct(self, value: str) -> Token:
        tok = self.peek()
        if tok.type != "punct" or tok.value != value:
            raise self.error("syntax error", f"expected {value!r}, found {tok.value or tok.type!r}")
        return self.next()

    def expect_keyword(self, value: str) -> Token:
        tok = self.peek()
        if tok.type != "keyword" or tok.value != value:
            raise self.error("syntax error", f"expected {value!r}, found {tok.value or tok.type!r}")
        return self.next()

    def expect_ident(self, what: str) -> Token:
        tok = self.peek()
        if tok.type != "ident":
            raise self.error("syntax error", f"expected {what}, found {tok.value or tok.type!r}")
        return self.next()

    def at_punct(self, value: str) -> bool:
        tok = self.peek()
        return tok.type == "punct" and tok.value == value

    def at_keyword(self, value: str) -> bool:
        tok = self.peek()
        return tok.type == "keyword" and tok.value == value

    # scope helpers

    def in_scope(self, name: str) -> bool:
        return any(name in frame for frame in self.scopes)

    def define(self, name: str, tok: Token) -> None:
        if self.in_scope(name):
            raise self.error("duplicate definition", f"{name!r} is already defined", tok)
        self.scopes[-1].add(name)

    # grammar

    def parse_function(self) -> nodes.Function:
        self.expect_keyword("fn")
        name = self.expect_ident("function name").value
        self.expect_punct("(")
        params: list[str] = []
        self.scopes.append(set())
        if not self.at_punct(")"):
            while True:
                tok = self.expect_ident("parameter name")
                self.define(tok.value, tok)
                params.append(tok.value)
                if self.at_punct(","):
                    self.next()
                    continue
                break
        self.expect_punct(")")
        body = self.parse_block()
        self.scopes.pop()
        tok = self.peek()
        if tok.type != "eof":
            raise self.error("syntax error", "trailing input after function body", tok)
        return nodes.Function(name=name, params=tuple(params), body=body)

    def parse_block(self) -> tuple[nodes.Stmt, ...]:
        self.expect_punct("{")
        self.scopes.append(set())
        stmts: list[nodes.Stmt] = []
        while not self.at_punct("}"):
            stmts.append(self.parse_statement())
        self.expect_punct("}")
        self.scopes.pop()
        return tuple(stmts)

    def parse_statement(self) -> nodes.Stmt:
        tok = self.peek()
        if self.at_keyword("let"):
            self.next()
            name_tok = self.expect_ident("variable name")
            self.expect_punct("=")
            expr = self.parse_expr()
            self.define(name_tok.value, name_tok)
            return nodes.Let(name=name_tok.value, expr=expr)
        if self.at_keyword("call") or self.at_keyword("use"):
            return nodes.ExprStmt(call=self.parse_call())
        if self.at_keyword("if"):
            self.next()
            cond = self.parse_expr()
            then = self.parse_block()
            orelse: tuple[nodes.Stmt, ...] = ()
            if self.at_keyword("else"):
                self.next()
                orelse = self.parse_block()
            return nodes.If(cond=cond, then=then, orelse=orelse)
        if self.at_keyword("foreach"):
            self.next()
            var_tok = self.expect_ident("loop variable")
            self.expect_keyword("in")
            iterable = self.parse_expr()
            if self.in_scope(var_tok.value):
                raise self.error("duplicate definition", f"{var_tok.value!r} is already defined", var_tok)
            self.scopes.append({var_tok.value})
            body = self.parse_block()
            self.scopes.pop()
            return nodes.Foreach(var=var_tok.value, iterable=iterable, body=body)
        if self.at_keyword("return"):
            self.next()
            if self.at_punct("}"):
                return nodes.Return(expr=None)
            return nodes.Return(expr=self.parse_expr())
        raise self.error("syntax error", f"expected a statement, found {tok.value or tok.type!r}", tok)

    def parse_call(self) -> nodes.ApiCall | nodes.ComponentCall:
        if self.at_keyword("call"):
            self.next()
            app_tok = self.expect_ident("app name")
            self.expect_punct(".")
            api_tok = self.expect_ident("api name")
            args = self.parse_args()
            return nodes.ApiCall(
                app=self._target(app_tok), api=self._target(api_tok), args=args
            )
        self.expect_keyword("use")
        name = self.expect_ident("component name").value
        return nodes.ComponentCall(name=name, args=self.parse_args())

    def _target(self, tok: Token) -> nodes.CallTarget:
        return nodes.CallTarget(name=tok.value, dynamic=self.in_scope(tok.value))

    def parse_args(self) -> tuple[tuple[str, nodes.Expr], ...]:
        self.expect_punct("(")
        args: list[tuple[str, nodes.Expr]] = []
        names: set[str] = set()
        if not self.at_punct(")"):
            while True:
                name_tok = self.expect_ident("argument name")
                if name_tok.value in names:
                    raise self.error(
                        "duplicate definition", f"argument {name_tok.value!r} repeated", name_tok
                    )
                names.add(name_tok.value)
                self.expect_punct("=")
                args.append((name_tok.value, self.parse_expr()))
                if self.at_punct(","):
                    self.next()
                    continue
                break
        self.expect_punct(")")
        return tuple(args)

    def parse_expr(self) -> nodes.Expr:
        left = self.parse_sum()
        tok = self.peek()
        if tok.type == "punct" and tok.value in ("==", "!=", "<", "<=", ">", ">="):
            self.next()
            right = self.parse_sum()
            return nodes.Binary(op=tok.value, left=left, right=right)
        return left

    def parse_sum(self) -> nodes.Expr:
        left = self.parse_term()
        while self.peek().type == "punct" and self.peek().value in ("+", "-"):
            op = self.next().value
            left = nodes.Binary(op=op, left=left, right=self.parse_term())
        return left

    def parse_term(self) -> nodes.Expr:
        left = self.parse_postfix()
        while self.at_punct("*"):
            self.next()
            left = nodes.Binary(op="*", left=left, right=self.parse_postfix())
        return left

    def parse_postfix(self) -> nodes.Expr:
        expr = self.parse_primary()
        while self.at_punct("."):
            self.next()
            name = self.expect_ident("field name").value
            expr = nodes.Field(obj=expr, name=name)
        return expr

    def parse_primary(self) -> nodes.Expr:
        tok = self.peek()
        if tok.type == "string":
            self.next()
            return nodes.Lit(value=tok.value)
        if tok.type == "number":
            self.next()
            return nodes.Lit(value=_number(tok.value))
        if self.at_punct("-"):
            self.next()
            num = self.peek()
            if num.type != "number":
                raise self.error("syntax error", "expected a number after unary '-'", num)
            self.next()
            return nodes.Lit(value=-_number(num.value))
        if self.at_keyword("true"):
            self.next()
            return nodes.Lit(value=True)
        if self.at_keyword("false"):
            self.next()
            return nodes.Lit(value=False)
        if self.at_punct("["):
            self.next()
            items: list = []
            if not self.at_punct("]"):
                while True:
                    item = self.parse_primary()
                    if not isinstance(item, nodes.Lit):
                        raise self.error("syntax error", "list elements must be literals", tok)
                    items.append(item.value)
                    if self.at_punct(","):
                        self.next()
                        continue
                    break
            self.expect_punct("]")
            return nodes.Lit(value=items)
        if self.at_punct("("):
            self.next()
            expr = self.parse_expr()
            self.expect_punct(")")
            return expr
        if self.at_keyword("call") or self.at_keyword("use"):
            return self.parse_call()
        if tok.type == "ident":
            self.next()
            if not self.in_scope(tok.value):
                raise self.error("use-before-define", f"{tok.value!r} is not defined here", tok)
            return nodes.Name(id=tok.value)
        raise self.error("syntax error", f"expected an expression, found {tok.value or tok.type!r}", tok)


def _number(text: str) -> int | float:
    return float(text) if "." in text else int(text)


def parse(source: str) -> nodes.Function:
    """Parse one function definition; raises LangError with line/column."""
    return _Parser(tokenize(source)).parse_function()


def parse_many(source: str) -> tuple[nodes.Function, ...]:
    """Parse a sequence of function definitions from one text block."""
    tokens = tokenize(source)
    functions: list[nodes.Function] = []
    # Split the token stream at each top-level `fn` and parse chunks separately.
    starts = [i for i, t in enumerate(tokens) if t.type == "keyword" and t.value == "fn"]
    if (not starts and tokens[0].type != "eof") or (starts and starts[0] != 0):
        raise LangError("syntax error", "expected 'fn'", tokens[0].line, tokens[0].col)
    for idx, start in enumerate(starts):
        end = starts[idx + 1] if idx + 1 < len(starts) else len(tokens) - 1
        chunk = tokens[start:end] + [tokens[-1]]
        functions.append(_Parser(chunk).parse_function())
    return tuple(functions)
