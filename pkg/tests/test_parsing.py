import pytest

from vidfuse.knowledge import load_prompt
from vidfuse.knowledge.parsing import (
    ResponseFormatError,
    is_not_available,
    parse_list,
    parse_sections,
    single_line,
)


def test_inline_sections_and_numbered_events():
    r = parse_sections("EXPLANATION: ... EVENTS: 1. a\n2. b")
    assert r.get("explanation") == "..."
    assert parse_list(r.get("EVENTS")) == ["a", "b"]


def test_facet_sections():
    r = parse_sections("EXPLANATION: no date given.\nTEMPORAL INFORMATION: NOT AVAILABLE")
    assert is_not_available(r.get("TEMPORAL INFORMATION"))
    r = parse_sections("EXPLANATION: a city.\nLOCATION INFORMATION: Anchorage, USA\n")
    assert single_line(r.get("LOCATION INFORMATION")) == "Anchorage, USA"
    assert single_line(parse_sections("REFINED QUERY: x").get("REFINED QUERY")) == "x"


@pytest.mark.parametrize("body", [
    "1. a\n2) b\n- c\n* d",
    "  1.  a  \n\n2. b\n-   c\n• d",
    "**1. a**\n2. b\nc\n4) d",
])
def test_bullet_styles(body):
    assert parse_list(body) == ["a", "b", "c", "d"]


def test_markdown_headers_and_preamble():
    text = "Sure, here it is.\n**Explanation:** reasons\n## EVENTS:\n1. x\n2. y\n"
    r = parse_sections(text)
    assert set(r.sections) == {"EXPLANATION", "EVENTS"}
    assert parse_list(r.get("events")) == ["x", "y"]
    assert "Events" in r and "REFINED QUERY" not in r


def test_lowercase_header_word_mid_sentence_is_not_a_header():
    r = parse_sections("EXPLANATION: the events: are unclear\nEVENTS: 1. a")
    assert r.get("EXPLANATION") == "the events: are unclear"


def test_duplicate_header_is_ambiguous():
    with pytest.raises(ResponseFormatError):
        parse_sections("EVENTS: 1. a\nEVENTS: 1. b")


def test_not_available_variants():
    for body in ("NOT AVAILABLE", "not available.", '"Not Available"', "", None):
        assert is_not_available(body)
    assert not is_not_available("Tokyo, Japan")
    assert single_line("\n\n  **Lisbon**\nmore") == "Lisbon"
    assert single_line(None) is None


def test_prompts_render_and_hash():
    p = load_prompt("decompose_prequel")
    assert p.fields == {"query"}
    text = p.render(query="a dog runs")
    assert "a dog runs" in text and "EVENTS" in text
    with pytest.raises(KeyError):
        p.render()
    assert len(p.sha256) == 64 and p.sha256 != load_prompt("decompose_sequel").sha256
    caption = load_prompt("frame_caption")
    assert "asr" not in caption.fields and "asr" in load_prompt("frame_caption_asr").fields
