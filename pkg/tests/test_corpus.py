import logging
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from ompforge.clex import token_values
from ompforge.corpus import (CorpusSample, SplitSpec, TrainingText,
                             extract_omp_regions, join_pragma_continuations,
                             last_pragma_line, pragma_frequency, read_samples,
                             read_shards, reposition, size_filter, split,
                             strip_comments, training_text_to_sample,
                             write_samples, write_shards)
from ompforge.errors import EmptyCorpus
from ompforge.pragma import canonical

from fixtures import loop_fixture_source


# -- strip_comments -----------------------------------------------------------

def test_strip_line_comment_keeps_newline():
    assert strip_comments("int a; // count\nint b;") == "int a; \nint b;"


def test_strip_ignores_comment_text_in_string():
    src = 'char*s="//not a comment";'
    assert strip_comments(src) == src


def test_strip_block_comment_becomes_space():
    assert strip_comments("a/*x*/b") == "a b"


def test_strip_multiline_block():
    assert strip_comments("a/* one\n two */b") == "a b"


def test_strip_continued_line_comment():
    src = "x = 1; // first \\\ny = 2;\nz = 3;\n"
    out = strip_comments(src)
    assert "y = 2" not in out
    assert "z = 3;" in out
    assert out.count("\n") == src.count("\n")


def test_strip_unterminated_block_warns_and_passes_through(caplog):
    with caplog.at_level(logging.WARNING, logger="ompforge.corpus"):
        out = strip_comments("int a;\n/* never closed")
    assert out == "int a;\n/* never closed"
    assert any("unterminated" in rec.message for rec in caplog.records)


def test_strip_char_literal_with_escapes():
    src = r"c = '\''; d = '/';"
    assert strip_comments(src) == src


@given(st.text(alphabet=st.characters(codec="ascii"), max_size=200))
@settings(max_examples=200)
def test_strip_comments_idempotent(src):
    once = strip_comments(src)
    assert strip_comments(once) == once


# -- continuations and extraction ----------------------------------------------

def test_join_continuations():
    src = "#pragma omp parallel \\\n    for\nint x;\n"
    assert join_pragma_continuations(src) == "#pragma omp parallel for\nint x;\n"


def test_join_leaves_non_pragma_lines():
    src = "int a = 1 + \\\n 2;\n"
    assert join_pragma_continuations(src) == src


def test_extract_for_loop():
    src = "#pragma omp parallel for\nfor(i=0;i<n;i++){a[i]=0;}\n"
    samples = extract_omp_regions(src, path="f.c")
    assert len(samples) == 1
    assert samples[0].scope == "for(i=0;i<n;i++){a[i]=0;}"
    assert samples[0].pragma == "#pragma omp parallel for"
    assert samples[0].id == "f.c:0"


def test_extract_continued_pragma():
    src = ("#pragma omp parallel for \\\n"
           "    reduction(+:sum)\n"
           "for (i = 0; i < n; i++) sum += a[i];\n")
    samples = extract_omp_regions(src)
    assert len(samples) == 1
    assert canonical(samples[0].pragma) == \
        "#pragma omp parallel for reduction(+:sum)"
    assert samples[0].scope == "for (i = 0; i < n; i++) sum += a[i];"


def test_extract_trailing_pragma_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="ompforge.corpus"):
        samples = extract_omp_regions("int a;\n#pragma omp barrier\n")
    assert samples == []
    assert any("no following statement" in rec.message for rec in caplog.records)


def test_extract_stacked_pragmas_share_scope():
    src = ("#pragma omp parallel\n"
           "#pragma omp for\n"
           "for (i = 0; i < n; i++) { a[i] = 0; }\n")
    samples = extract_omp_regions(src, path="s.c")
    assert len(samples) == 2
    assert samples[0].scope == samples[1].scope
    assert samples[0].pragma == "#pragma omp parallel"
    assert samples[1].pragma == "#pragma omp for"
    assert samples[0].id != samples[1].id


def test_extract_while_and_compound():
    src = ("#pragma omp critical\n"
           "while (busy) { spin(); }\n"
           "#pragma omp parallel\n"
           "{\n  work();\n}\n")
    samples = extract_omp_regions(src)
    assert [s.scope for s in samples] == [
        "while (busy) { spin(); }", "{\n  work();\n}"]


def test_extract_single_statement_scope():
    samples = extract_omp_regions("#pragma omp atomic\nhits++;\n")
    assert samples[0].scope == "hits++;"


def test_extract_nested_pragma_kept_in_scope():
    src = ("#pragma omp parallel\n"
           "{\n"
           "  #pragma omp for\n"
           "  for (i = 0; i < n; i++) a[i] = 0;\n"
           "}\n")
    samples = extract_omp_regions(src)
    assert len(samples) == 2
    outer = samples[0]
    assert "#pragma omp for" in outer.scope  # nested pragma stays verbatim


def test_extract_skips_unparseable_pragma(caplog):
    with caplog.at_level(logging.WARNING, logger="ompforge.corpus"):
        samples = extract_omp_regions(
            "#pragma omp parallel reduction(+:sum\nfor(;;) {}\n")
    assert samples == []


def test_extract_do_while_scope():
    src = "#pragma omp critical\ndo { step(); } while (pending);\nint x;\n"
    samples = extract_omp_regions(src)
    assert samples[0].scope == "do { step(); } while (pending);"


def test_extract_if_else_scope():
    src = ("#pragma omp critical\n"
           "if (ready) { fire(); } else { wait(); }\n")
    samples = extract_omp_regions(src)
    assert samples[0].scope == "if (ready) { fire(); } else { wait(); }"


def test_fixture_corpus_extraction_count():
    source, expected = loop_fixture_source()
    samples = extract_omp_regions(strip_comments(source), path="fixture.c")
    assert len(samples) == expected
    assert expected >= 50


def test_fixture_corpus_pragmas_roundtrip():
    source, _ = loop_fixture_source()
    samples = extract_omp_regions(strip_comments(source), path="fixture.c")
    from ompforge.pragma import parse_pragma
    for sample in samples:
        text = canonical(sample.pragma)
        assert parse_pragma(text) == parse_pragma(sample.pragma)


# -- reposition / filter --------------------------------------------------------

def test_reposition_layout():
    sample = CorpusSample(id="x", language="c",
                          scope="for(...){...}",
                          pragma="#pragma omp parallel for")
    tt = reposition(sample)
    assert tt.text == "for(...){...}\n#pragma omp parallel for\n"
    assert tt.id == "x"


def test_reposition_canonicalizes_pragma():
    sample = CorpusSample(id="x", language="c", scope="x++;",
                          pragma="#pragma omp for schedule( static ,  4 )")
    assert reposition(sample).text.endswith(
        "\n#pragma omp for schedule(static,4)\n")


def test_token_conservation_on_fixture_corpus():
    source, _ = loop_fixture_source()
    samples = extract_omp_regions(strip_comments(source), path="fixture.c")
    for sample in samples:
        tt = reposition(sample)
        combined = Counter(token_values(sample.scope))
        combined.update(token_values(canonical(sample.pragma)))
        assert Counter(token_values(tt.text)) == combined


def test_last_pragma_line_recovery():
    source, _ = loop_fixture_source()
    samples = extract_omp_regions(strip_comments(source), path="fixture.c")
    for sample in samples:
        tt = reposition(sample)
        line = last_pragma_line(tt.text)
        assert line is not None
        assert canonical(line) == canonical(sample.pragma)
        back = training_text_to_sample(tt)
        assert back.scope == sample.scope
        assert back.id == sample.id


def test_size_filter_token_bound():
    small = TrainingText(text="a " * 99)
    big = TrainingText(text="a " * 101)
    assert size_filter(small, max_tokens=100)
    assert not size_filter(big, max_tokens=100)


def test_size_filter_byte_bound():
    text = TrainingText(text="ab" * 600)  # one huge token, few tokens
    assert not size_filter(text, max_tokens=100, max_bytes=1000)
    assert size_filter(text, max_tokens=100, max_bytes=2000)


@given(st.text(alphabet=st.characters(codec="ascii",
                                      exclude_characters="\"'"),
               max_size=80),
       st.integers(min_value=1, max_value=30))
@settings(max_examples=150)
def test_size_filter_prefix_monotone(body, max_tokens):
    # outside string literals, a prefix never has more tokens than the text
    full = TrainingText(text=body)
    if size_filter(full, max_tokens=max_tokens, max_bytes=1 << 20):
        for cut in range(len(body)):
            assert size_filter(TrainingText(text=body[:cut]),
                               max_tokens=max_tokens, max_bytes=1 << 20)


# -- split ---------------------------------------------------------------------

def _texts(n):
    return [TrainingText(text=f"t{i}", id=str(i)) for i in range(n)]


def test_split_ten_percent():
    train, test = split(_texts(10), SplitSpec(test_fraction=0.10, seed=1))
    assert len(test) == 1 and len(train) == 9


def test_split_rounds_half_up():
    train, test = split(_texts(3), SplitSpec(test_fraction=0.5, seed=1))
    assert len(test) == 2 and len(train) == 1


def test_split_deterministic():
    spec = SplitSpec(test_fraction=0.25, seed=42)
    first = split(_texts(40), spec)
    second = split(_texts(40), spec)
    assert first == second


def test_split_empty_corpus():
    with pytest.raises(EmptyCorpus):
        split([], SplitSpec())


def test_split_spec_validates_fraction():
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=0.0)
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=1.0)


@given(st.integers(min_value=1, max_value=200),
       st.floats(min_value=0.01, max_value=0.99),
       st.integers(min_value=0, max_value=2**32))
@settings(max_examples=150)
def test_split_partitions(n, fraction, seed):
    texts = _texts(n)
    train, test = split(texts, SplitSpec(test_fraction=fraction, seed=seed))
    assert len(train) + len(test) == n
    assert sorted(t.id for t in train + test) == sorted(t.id for t in texts)
    assert set(t.id for t in train).isdisjoint(t.id for t in test)


# -- frequency -------------------------------------------------------------------

def test_pragma_frequency_ordering():
    pragmas = ["#pragma omp parallel for"] * 3 + ["#pragma omp simd"]
    assert pragma_frequency(pragmas) == [
        ("#pragma omp parallel for", 3), ("#pragma omp simd", 1)]


def test_pragma_frequency_canonicalizes():
    pragmas = ["#pragma omp  parallel   for", "#pragma omp parallel for"]
    assert pragma_frequency(pragmas) == [("#pragma omp parallel for", 2)]


def test_pragma_frequency_empty_and_topk():
    assert pragma_frequency([]) == []
    pragmas = ["#pragma omp simd"] * 2 + ["#pragma omp parallel"] * 2 + \
        ["#pragma omp task"]
    top = pragma_frequency(pragmas, top=2)
    assert top == [("#pragma omp parallel", 2), ("#pragma omp simd", 2)]


# -- JSONL round trips -----------------------------------------------------------

def test_sample_jsonl_roundtrip(tmp_path):
    samples = [CorpusSample(id="a:0", language="c", scope="x++;",
                            pragma="#pragma omp atomic", repo="r1"),
               CorpusSample(id="b:5", language="cpp", scope="{}",
                            pragma="#pragma omp parallel")]
    path = tmp_path / "samples.jsonl"
    write_samples(samples, path)
    assert read_samples(path) == samples


def test_shard_jsonl_roundtrip(tmp_path):
    texts = [TrainingText(text="x\n#pragma omp atomic\n", id="a:0"),
             TrainingText(text="y\n#pragma omp simd\n")]
    path = tmp_path / "shards.jsonl"
    write_shards(texts, path)
    assert read_shards(path) == texts
