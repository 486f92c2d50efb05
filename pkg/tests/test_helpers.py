"""
Tests for text helpers and JSONL storage.
"""
import os

import pytest

from utils.errors import ParseError
from utils.helpers import (
    answers_match, cosine, format_triple, format_uptime, mentions, normalize_text,
    relation_phrase, tokenize, window_jaccard,
)
from utils.storage import jsonl_writer, read_json, read_jsonl, write_jsonl


def test_normalize_text_collapses_whitespace_and_composes():
    assert normalize_text("  K-pop \n  music ") == "K-pop music"
    assert normalize_text("Cafe\u0301") == "Caf\u00e9"
    assert normalize_text(None) == ""


def test_tokenize_splits_on_punctuation_and_underscores():
    assert tokenize("K-pop, origin_country!") == ["k", "pop", "origin", "country"]


def test_window_jaccard_verbatim_and_partial():
    query = tokenize("What is the genre of BlackPink?")
    assert window_jaccard(query, ["blackpink"]) == 1.0
    assert window_jaccard(tokenize("korean pop music"), ["k", "pop"]) == pytest.approx(1 / 3)
    assert window_jaccard([], ["x"]) == 0.0


def test_mentions_is_case_insensitive():
    assert mentions("What is the origin country of K-pop?", "k-pop")
    assert not mentions("What is the origin country of Korean pop?", "K-pop")
    assert not mentions("anything", "")


def test_answer_matching_and_formatting():
    assert answers_match("türkiye", ["Turkey", "Türkiye"])
    assert not answers_match(None, ["Turkey"])
    assert not answers_match("", [""])
    assert relation_phrase("origin_country") == "origin country"
    assert format_triple("K-pop", "origin_country", "Turkey") == "(K-pop, origin_country, Turkey)"


def test_cosine_zero_vector():
    assert cosine([0, 0], [1, 0]) == 0.0
    assert cosine([1, 0], [2, 0]) == pytest.approx(1.0)


def test_format_uptime():
    assert format_uptime(3725.5) == "1h 2m 5.50s"


def test_jsonl_round_trip_keeps_order_and_skips_blank_lines(tmp_path):
    path = tmp_path / "rows.jsonl"
    assert write_jsonl(str(path), [{"b": 1, "a": "ü"}, {"c": [1, 2]}]) == 2
    assert path.read_text(encoding="utf-8") == '{"a":"ü","b":1}\n{"c":[1,2]}\n'

    path.write_text('{"x": 1}\n\n{"x": 2}\n', encoding="utf-8")
    assert list(read_jsonl(str(path))) == [(1, {"x": 1}), (3, {"x": 2})]


def test_read_jsonl_reports_line_of_bad_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"x": 1}\n{oops\n', encoding="utf-8")
    with pytest.raises(ParseError) as info:
        list(read_jsonl(str(path)))
    assert info.value.line == 2


def test_failed_write_leaves_nothing_behind(tmp_path):
    path = tmp_path / "out" / "rows.jsonl"
    with pytest.raises(RuntimeError):
        with jsonl_writer(str(path)) as write:
            write({"x": 1})
            raise RuntimeError("boom")
    assert os.listdir(tmp_path / "out") == []


def test_read_json(tmp_path):
    path = tmp_path / "doc.json"
    path.write_text('{"m_acc": 0.5}\n', encoding="utf-8")
    assert read_json(str(path)) == {"m_acc": 0.5}
    with pytest.raises(ParseError):
        read_json(str(tmp_path / "missing.json"))


def test_invalid_utf8_is_a_parse_error_with_its_line(tmp_path):
    lines = tmp_path / "facts.jsonl"
    lines.write_bytes(b'{"s": "a", "r": "b", "o": "c"}\n\xff\xfe\n')
    with pytest.raises(ParseError) as info:
        list(read_jsonl(str(lines)))
    assert info.value.line == 2

    doc = tmp_path / "dataset.json"
    doc.write_bytes(b'[\n{"x": "\xff"}\n]\n')
    with pytest.raises(ParseError) as info:
        read_json(str(doc))
    assert info.value.line == 2
