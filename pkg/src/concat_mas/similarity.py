"""Answer similarity: exact match for closed-form answers, AST node-type Jaccard for code."""
from __future__ import annotations

import ast
import io
import keyword
import textwrap
import tokenize
from typing import Callable, Optional, Protocol

from .core import TaskKind


class ParseFailure(ValueError):
    pass


class SyntaxProvider(Protocol):
    def node_types(self, code: str) -> frozenset[str]:
        """Return the set of node-type names in the parse tree, or raise ParseFailure."""
        ...


class PythonSyntaxProvider:
    """Node types from the standard-library Python parser.

    Expression-context markers (Load/Store/Del) are dropped: they tag every
    Name and would inflate similarity between unrelated snippets.
    """

    _skip = (ast.expr_context,)

    def node_types(self, code: str) -> frozenset[str]:
        if not code or not code.strip():
            raise ParseFailure("empty input")
        tree = None
        for candidate in (code, textwrap.dedent(code)):
            try:
                tree = ast.parse(candidate)
                break
            except (SyntaxError, ValueError):
                continue
        if tree is None:
            raise ParseFailure("not parseable as Python")
        return frozenset(
            type(node).__name__ for node in ast.walk(tree) if not isinstance(node, self._skip)
        )


DEFAULT_PROVIDER = PythonSyntaxProvider()

_DELIMITERS = set("()[]{},:;.") | {"->", "@"}


def token_classes(code: str) -> frozenset[str]:
    """Fallback feature set for code that does not parse (often truncated output).

    Tokens are reduced to their lexical class; tokenizing stops silently at
    the first lexical error.
    """
    classes: set[str] = set()
    try:
        for tok in tokenize.generate_tokens(io.StringIO(code).readline):
            if tok.type == tokenize.NAME:
                classes.add("tok:keyword" if keyword.iskeyword(tok.string) else "tok:identifier")
            elif tok.type == tokenize.NUMBER:
                classes.add("tok:number")
            elif tok.type == tokenize.STRING:
                classes.add("tok:string")
            elif tok.type == tokenize.OP:
                classes.add("tok:delimiter" if tok.string in _DELIMITERS else "tok:operator")
    except (tokenize.TokenError, IndentationError, SyntaxError):
        pass
    if not classes:
        raise ParseFailure("no tokens recovered")
    return frozenset(classes)


def exact_similarity(a: Optional[str], b: Optional[str]) -> float:
    # unextractable answers never match anything, themselves included
    if a is None or b is None:
        return 0.0
    return 1.0 if a == b else 0.0


def extract_node_types(code: str, provider: SyntaxProvider = DEFAULT_PROVIDER) -> frozenset[str]:
    return provider.node_types(code)


def _features(code: str, provider: SyntaxProvider) -> frozenset[str]:
    try:
        return provider.node_types(code)
    except ParseFailure:
        return token_classes(code)


def jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def ast_jaccard(code_a: str, code_b: str, provider: SyntaxProvider = DEFAULT_PROVIDER) -> float:
    """Jaccard coefficient of the two snippets' node-type sets."""
    return jaccard(_features(code_a, provider), _features(code_b, provider))


def similarity_for(kind: TaskKind, provider: SyntaxProvider = DEFAULT_PROVIDER) -> Callable[[Optional[str], Optional[str]], float]:
    """Pick the similarity function for a task kind.

    The returned callable takes normalized answers. For code, unparseable
    snippets with no recoverable tokens score 0 against everything.
    """
    if TaskKind(kind) is not TaskKind.CODE:
        return exact_similarity

    cache: dict[str, Optional[frozenset]] = {}

    def feats(code: str) -> Optional[frozenset]:
        if code not in cache:
            try:
                cache[code] = _features(code, provider)
            except ParseFailure:
                cache[code] = None
        return cache[code]

    def code_similarity(a: Optional[str], b: Optional[str]) -> float:
        if a is None or b is None:
            return 0.0
        fa, fb = feats(a), feats(b)
        if fa is None or fb is None:
            return 0.0
        return jaccard(fa, fb)

    return code_similarity
