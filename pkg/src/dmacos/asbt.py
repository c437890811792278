"""AST ingestion and flattening.

Trees arrive in a neutral JSON shape::

    {"node_type": "Assign", "token": null, "children": [...]}

and are flattened either into the classic bracketed SBT string sequence or
into the aligned token/type-code pair used by the body encoder.  A tiny parser
for a demonstration language is included so the pipeline can run without a
real Java or Python front-end.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator


class TypeCode(IntEnum):
    BEGIN_NODE = 0
    END_NODE = 1
    SINGLE_NODE = 2
    TOKEN_BEGIN = 3
    TOKEN_MID = 4
    TOKEN_END = 5
    TOKEN_SINGLE = 6


NUM_TYPE_CODES = len(TypeCode)
IDENTIFIER_CODES = frozenset({TypeCode.TOKEN_BEGIN, TypeCode.TOKEN_MID, TypeCode.TOKEN_END, TypeCode.TOKEN_SINGLE})


@dataclass
class AstNode:
    node_type: str
    token: str | None = None
    children: list["AstNode"] = field(default_factory=list)

    def __post_init__(self):
        if not self.node_type:
            raise ValueError("node_type must be nonempty")

    @classmethod
    def from_json(cls, obj) -> "AstNode":
        """Build a tree from the neutral dict format (or its JSON text)."""
        if isinstance(obj, str):
            obj = json.loads(obj)
        if not isinstance(obj, dict) or "node_type" not in obj:
            raise ValueError("AST node must be an object with a node_type")
        kids = [cls.from_json(c) for c in obj.get("children") or []]
        tok = obj.get("token")
        return cls(obj["node_type"], None if tok is None else str(tok), kids)

    def to_json(self) -> dict:
        return {
            "node_type": self.node_type,
            "token": self.token,
            "children": [c.to_json() for c in self.children],
        }

    def walk(self) -> Iterator["AstNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass
class AsbtSequence:
    tokens: list[str]
    types: list[int]

    def __post_init__(self):
        if len(self.tokens) != len(self.types):
            raise ValueError("tokens and types differ in length (%d vs %d)" % (len(self.tokens), len(self.types)))

    def __len__(self):
        return len(self.tokens)


# ---------------------------------------------------------------------------
# identifier splitting


def split_subtokens(identifier: str, lower: bool = True) -> list[str]:
    """Split ``identifier`` on underscores and camelCase boundaries.

    A boundary falls before an uppercase letter that follows a lowercase letter
    or digit, and before the last capital of an acronym run that is followed by
    lowercase (``HTTPServer`` -> ``http``, ``server``).  Digits stay attached to
    the run before them.

    >>> split_subtokens("storage_client")
    ['storage', 'client']
    >>> split_subtokens("formatDecimal2")
    ['format', 'decimal2']
    """
    parts = []
    for chunk in identifier.split("_"):
        if not chunk:
            continue
        start = 0
        for i in range(1, len(chunk)):
            prev, cur = chunk[i - 1], chunk[i]
            nxt = chunk[i + 1] if i + 1 < len(chunk) else ""
            if cur.isupper() and (prev.islower() or prev.isdigit()):
                cut = True
            elif cur.isupper() and prev.isupper() and nxt.islower():
                cut = True
            else:
                cut = False
            if cut:
                parts.append(chunk[start:i])
                start = i
        parts.append(chunk[start:])
    if not parts:
        # identifiers made only of separators are kept whole
        parts = [identifier]
    return [p.lower() for p in parts] if lower else parts


# ---------------------------------------------------------------------------
# flattening


def to_sbt(root: AstNode) -> list[str]:
    """Classic structure-based traversal as a list of string tokens."""
    out: list[str] = []
    stack: list[tuple[AstNode, bool]] = [(root, False)]
    while stack:
        node, closing = stack.pop()
        label = node.node_type if not node.token else "%s_%s" % (node.node_type, node.token)
        if closing:
            out.extend([")", label])
        elif node.children or not node.token:
            out.extend(["(", label])
            stack.append((node, True))
            stack.extend((c, False) for c in reversed(node.children))
        else:
            out.append(label)
    return out


def _token_codes(token: str) -> tuple[list[str], list[int]]:
    subs = split_subtokens(token, lower=False)
    if len(subs) == 1:
        return subs, [TypeCode.TOKEN_SINGLE]
    codes = [TypeCode.TOKEN_BEGIN] + [TypeCode.TOKEN_MID] * (len(subs) - 2) + [TypeCode.TOKEN_END]
    return subs, codes


def to_asbt(root: AstNode) -> AsbtSequence:
    """Flatten a tree into aligned token and type-code sequences.

    Nodes with children open with code 0 and close with code 1; childless
    nodes emit their type once with code 2.  A node's own token follows its
    type, split into sub-tokens coded 3/4/5 (first/middle/last) or 6 when it
    does not split.  Sub-token case is preserved here; the corpus builder
    lowercases.
    """
    tokens: list[str] = []
    types: list[int] = []
    stack: list[tuple[AstNode, bool]] = [(root, False)]
    while stack:
        node, closing = stack.pop()
        if closing:
            tokens.append(node.node_type)
            types.append(TypeCode.END_NODE)
            continue
        tokens.append(node.node_type)
        types.append(TypeCode.BEGIN_NODE if node.children else TypeCode.SINGLE_NODE)
        if node.token:
            subs, codes = _token_codes(node.token)
            tokens.extend(subs)
            types.extend(codes)
        if node.children:
            stack.append((node, True))
            stack.extend((c, False) for c in reversed(node.children))
    return AsbtSequence(tokens, [int(t) for t in types])


# ---------------------------------------------------------------------------
# demonstration language
#
#   method := 'def' NAME '(' [NAME {',' NAME}] ')' '{' {stmt} '}'
#   stmt   := NAME '=' expr | expr            (separated by ';' or newlines)
#   expr   := NAME | INT | NAME '(' [expr {',' expr}] ')'
#
# A source holding several statements parses to a Block; a single statement
# parses to that statement's node.


class ToySyntaxError(SyntaxError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__("%s at line %d, column %d" % (msg, line, col))
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<int>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[=(),;{}])"
)


def _lex(source: str):
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise ToySyntaxError("unexpected character %r" % source[pos], line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            toks.append(("sep", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "punct":
            toks.append(("sep" if m.group() == ";" else m.group(), m.group(), line, col))
        elif kind != "ws":
            toks.append((kind, m.group(), line, col))
        pos = m.end()
    toks.append(("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source: str):
        self.toks = _lex(source)
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            shown = tok[1] if tok[0] != "eof" else "end of input"
            raise ToySyntaxError("expected %r, found %r" % (kind, shown), tok[2], tok[3])
        return tok

    def skip_seps(self):
        while self.peek()[0] == "sep":
            self.next()

    def program(self) -> AstNode:
        self.skip_seps()
        if self.peek()[0] == "name" and self.peek()[1] == "def":
            node = self.method()
            self.skip_seps()
            self.expect("eof")
            return node
        stmts = self.statements(end="eof")
        self.expect("eof")
        if not stmts:
            tok = self.peek()
            raise ToySyntaxError("empty program", tok[2], tok[3])
        return stmts[0] if len(stmts) == 1 else AstNode("Block", None, stmts)

    def method(self) -> AstNode:
        self.next()  # 'def'
        name = self.expect("name")[1]
        self.expect("(")
        params = []
        if self.peek()[0] != ")":
            params.append(AstNode("SimpleName", self.expect("name")[1]))
            while self.peek()[0] == ",":
                self.next()
                params.append(AstNode("SimpleName", self.expect("name")[1]))
        self.expect(")")
        self.skip_seps()
        self.expect("{")
        body = self.statements(end="}")
        self.expect("}")
        return AstNode("MethodDecl", None, [AstNode("SimpleName", name)] + params + [AstNode("Block", None, body)])

    def statements(self, end: str) -> list[AstNode]:
        out = []
        self.skip_seps()
        while self.peek()[0] not in (end, "eof"):
            out.append(self.statement())
            if self.peek()[0] not in ("sep", end, "eof"):
                tok = self.peek()
                raise ToySyntaxError("expected end of statement, found %r" % tok[1], tok[2], tok[3])
            self.skip_seps()
        return out

    def statement(self) -> AstNode:
        if self.peek()[0] == "name" and self.peek(1)[0] == "=":
            target = AstNode("SimpleName", self.next()[1])
            self.next()
            return AstNode("Assign", None, [target, self.expr()])
        return self.expr()

    def expr(self) -> AstNode:
        tok = self.next()
        if tok[0] == "int":
            return AstNode("NumberLiteral", tok[1])
        if tok[0] != "name":
            shown = tok[1] if tok[0] != "eof" else "end of input"
            raise ToySyntaxError("expected an expression, found %r" % shown, tok[2], tok[3])
        callee = AstNode("SimpleName", tok[1])
        if self.peek()[0] != "(":
            return callee
        self.next()
        args = []
        if self.peek()[0] != ")":
            args.append(self.expr())
            while self.peek()[0] == ",":
                self.next()
                args.append(self.expr())
        self.expect(")")
        return AstNode("Call", None, [callee] + args)


def parse_toy(source: str) -> AstNode:
    """Parse demonstration-language source into an :class:`AstNode` tree."""
    return _Parser(source).program()


def unparse_toy(node: AstNode) -> str:
    """Render a tree produced by :func:`parse_toy` back to source text."""
    t = node.node_type
    if t in ("SimpleName", "NumberLiteral"):
        return node.token or ""
    if t == "Call":
        return "%s(%s)" % (unparse_toy(node.children[0]), ", ".join(unparse_toy(c) for c in node.children[1:]))
    if t == "Assign":
        return "%s = %s" % (unparse_toy(node.children[0]), unparse_toy(node.children[1]))
    if t == "Block":
        return "; ".join(unparse_toy(c) for c in node.children)
    if t == "MethodDecl":
        name, *params, body = node.children
        return "def %s(%s) { %s }" % (name.token, ", ".join(p.token or "" for p in params), unparse_toy(body))
    raise ValueError("cannot unparse node type %r" % t)


def method_name(root: AstNode) -> str | None:
    """The declared name of a MethodDecl tree, if any."""
    if root.node_type == "MethodDecl" and root.children and root.children[0].token:
        return root.children[0].token
    return None
