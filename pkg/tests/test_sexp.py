"""Parser/printer round-trip and error behaviour for the S-expression format."""

import random

import pytest

from lemname import sexp
from lemname.sexp import (
    EmptyInput,
    InvalidEscape,
    UnbalancedParen,
    UnterminatedString,
    linearize,
    parse,
    parse_one,
    render,
)


class TestParse:
    def test_flat_list(self):
        assert parse("(a b)") == [("a", "b")]

    def test_nested_empty_list(self):
        assert parse("(Prod char ( ) )") == [("Prod", "char", ())]

    def test_quoted_atom_with_space(self):
        assert parse('"a b"') == ["a b"]

    def test_quoted_escapes(self):
        assert parse('"a\\"b"') == ['a"b']
        assert parse('"a\\\\b"') == ["a\\b"]
        assert parse('"a\\nb"') == ["a\nb"]

    def test_multiple_toplevel_forms(self):
        assert parse("a (b c) d") == ["a", ("b", "c"), "d"]

    def test_whitespace_only(self):
        assert parse("  \t\n ") == []

    def test_empty_text(self):
        assert parse("") == []

    def test_adjacent_quoted_atoms(self):
        assert parse('"a""b"') == ["a", "b"]

    def test_bare_atom_stops_at_delimiters(self):
        assert parse('x(y)"z"') == ["x", ("y",), "z"]

    def test_unicode_atoms(self):
        assert parse("(π λx)") == [("π", "λx")]


class TestParseErrors:
    def test_unmatched_close(self):
        with pytest.raises(UnbalancedParen) as err:
            parse("a ) b")
        assert err.value.position == 2

    def test_unclosed_open(self):
        with pytest.raises(UnbalancedParen) as err:
            parse("(a (b c)")
        assert err.value.position == 0

    def test_unterminated_string(self):
        with pytest.raises(UnterminatedString) as err:
            parse('(a "bc')
        assert err.value.position == 3

    def test_trailing_backslash(self):
        with pytest.raises(UnterminatedString):
            parse('"ab\\')

    def test_invalid_escape(self):
        with pytest.raises(InvalidEscape):
            parse('"a\\tb"')

    def test_parse_one_empty(self):
        with pytest.raises(EmptyInput):
            parse_one("   ")

    def test_parse_one_extra_forms(self):
        with pytest.raises(ValueError):
            parse_one("a b")


class TestRender:
    def test_nested_list(self):
        assert render(("a", ("b",))) == "(a (b))"

    def test_empty_list(self):
        assert render(()) == "()"

    def test_atom_with_space_is_quoted(self):
        assert render("a b") == '"a b"'

    def test_empty_atom_is_quoted(self):
        assert render("") == '""'

    def test_specials_are_escaped(self):
        assert render('a"b') == '"a\\"b"'
        assert render("a\\b") == '"a\\\\b"'
        assert render("a\nb") == '"a\\nb"'

    def test_parens_inside_atom_are_quoted(self):
        assert parse(render("(")) == ["("]

    def test_non_sexp_value_rejected(self):
        with pytest.raises(TypeError):
            render(("a", 3))


class TestLinearize:
    def test_flat(self):
        assert linearize(("Prod", "char")) == ["(", "Prod", "char", ")"]

    def test_atom(self):
        assert linearize("x") == ["x"]

    def test_nested(self):
        assert linearize((("a",),)) == ["(", "(", "a", ")", ")"]

    def test_balanced_parens(self):
        # Atoms whose text is itself "(" or ")" are excluded: linearize emits
        # raw atom texts, so only structural parens are counted here.
        rng = random.Random(7)
        for _ in range(200):
            tree = _random_tree(rng, depth=5, pool=_TOKEN_ATOM_POOL)
            toks = linearize(tree)
            depth = 0
            for tok in toks:
                if tok == "(":
                    depth += 1
                elif tok == ")":
                    depth -= 1
                assert depth >= 0
            assert depth == 0


_TOKEN_ATOM_POOL = [
    "a",
    "foo_bar",
    "Qualid",
    "x'",
    "πλ",
    "12",
    "->",
]

_ATOM_POOL = _TOKEN_ATOM_POOL + [
    "",
    "a b",
    'q"t',
    "back\\slash",
    "line\nbreak",
    "(",
    ")",
]


def _random_tree(rng: random.Random, depth: int, pool=_ATOM_POOL):
    if depth == 0 or rng.random() < 0.4:
        return rng.choice(pool)
    return tuple(_random_tree(rng, depth - 1, pool) for _ in range(rng.randrange(0, 8)))


class TestRoundTrip:
    def test_parse_render_identity_on_random_trees(self):
        rng = random.Random(42)
        for _ in range(300):
            tree = _random_tree(rng, depth=12)
            assert parse(render(tree)) == [tree]

    def test_render_parse_stability_on_text(self):
        rng = random.Random(13)
        for _ in range(100):
            trees = [_random_tree(rng, depth=6) for _ in range(rng.randrange(1, 4))]
            text = "\n".join(render(t) for t in trees)
            assert parse(text) == trees

    def test_module_exports_type_alias(self):
        assert sexp.SExp is not None
