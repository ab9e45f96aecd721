import pytest
from hypothesis import given, strategies as st

from concat_mas.core import TaskKind
from concat_mas.similarity import (
    ParseFailure,
    ast_jaccard,
    exact_similarity,
    extract_node_types,
    jaccard,
    similarity_for,
    token_classes,
)


class FixedSets:
    def __init__(self, table):
        self.table = table

    def node_types(self, code):
        return frozenset(self.table[code])


def test_exact_similarity():
    assert exact_similarity("A", "A") == 1.0
    assert exact_similarity("A", "B") == 0.0
    assert exact_similarity("140", "140") == 1.0
    assert exact_similarity(None, None) == 0.0


def test_node_types_golden():
    assert extract_node_types("x = 1") == {"Module", "Assign", "Name", "Constant"}


def test_node_types_richer_snippet():
    code = "def f(a):\n    if a:\n        return g(a)\n    return 0\n"
    assert extract_node_types(code) == {
        "Module", "FunctionDef", "arguments", "arg", "If", "Name", "Return", "Call", "Constant",
    }


def test_empty_code_fails():
    with pytest.raises(ParseFailure):
        extract_node_types("")


def test_indented_body_parses_after_dedent():
    assert "Return" in extract_node_types("    return x + 1\n")


def test_determinism():
    code = "for i in range(3):\n    print(i)"
    assert extract_node_types(code) == extract_node_types(code)


def test_jaccard_examples():
    p = FixedSets({"a": {"If", "Call", "Return"}, "b": {"If", "Call", "Assign"}, "c": {"While"}})
    assert ast_jaccard("a", "b", p) == 0.5
    assert ast_jaccard("a", "a", p) == 1.0
    assert ast_jaccard("a", "c", p) == 0.0
    assert jaccard(frozenset(), frozenset()) == 1.0


def test_identical_real_code_scores_one():
    code = "def f(x):\n    return [y for y in x if y]"
    assert ast_jaccard(code, code) == 1.0


def test_fallback_on_truncated_code():
    broken = "def f(x):\n    return (x +"
    feats = token_classes(broken)
    assert {"tok:keyword", "tok:identifier", "tok:operator", "tok:delimiter"} <= feats
    assert ast_jaccard(broken, broken) == 1.0


names = st.frozensets(st.sampled_from(["If", "For", "Call", "Name", "Return", "Assign", "BinOp", "While"]))


@given(names, names)
def test_jaccard_matches_set_counting(a, b):
    inter = sum(1 for x in a if x in b)
    union = len(a) + len(b) - inter
    expected = 1.0 if union == 0 else inter / union
    assert jaccard(a, b) == expected
    assert jaccard(a, b) == jaccard(b, a)


snippets = st.sampled_from([
    "x = 1", "def f():\n    return 2", "while True:\n    break", "import os\nos.getcwd()",
    "class A:\n    pass", "for i in x:\n    y += i", "try:\n    f()\nexcept E:\n    pass",
])


@given(snippets, snippets)
def test_code_similarity_symmetric_and_bounded(a, b):
    sim = similarity_for(TaskKind.CODE)
    assert sim(a, b) == sim(b, a)
    assert 0.0 <= sim(a, b) <= 1.0
    assert sim(a, a) == 1.0
