import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidfuse.model import (
    ComponentKind,
    DescriptionSet,
    EventDecomposition,
    EventKind,
    FusedRanking,
    InvalidInputError,
    QueryRecord,
    RelevanceJudgments,
    ScoreComponentMatrix,
    VideoRecord,
    validate_corpus,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def small_corpus():
    queries = [QueryRecord("q1", "a dog runs"), QueryRecord("q2", "a cat sleeps")]
    videos = [
        VideoRecord("v1", np.eye(4)[:2]),
        VideoRecord("v2", np.eye(4)[2:]),
        VideoRecord("v3", unit([1, 1, 0, 0])[None, :]),
    ]
    descs = {v.id: DescriptionSet(v.id, ("caption",)) for v in videos}
    judgments = RelevanceJudgments({"q1": frozenset({"v1"}), "q2": frozenset({"v2", "v3"})})
    return queries, videos, descs, judgments


def test_query_record_rejects_blank_text():
    with pytest.raises(InvalidInputError):
        QueryRecord("q", "   ")
    with pytest.raises(InvalidInputError):
        QueryRecord("", "text")


def test_event_cap_and_refined_alignment():
    with pytest.raises(InvalidInputError):
        EventDecomposition(prequel=tuple("abcdef"))
    with pytest.raises(InvalidInputError):
        EventDecomposition(current=("a", "b"), refined_current=("x",))
    d = EventDecomposition(current=("a", "b"), refined_current=("x", "y"))
    assert d.events(EventKind.CURRENT) == ("x", "y")
    assert d.events(EventKind.CURRENT, refined=False) == ("a", "b")
    # no refined list: fall back to raw
    assert d.events(EventKind.SEQUEL) == ()
    assert not d.is_complete


event_lists = st.lists(st.text(min_size=1, max_size=12), max_size=5)


@given(event_lists, event_lists, event_lists, st.none() | st.text(max_size=10))
@settings(max_examples=50)
def test_decomposition_round_trip(pre, cur, seq, place):
    d = EventDecomposition(
        tuple(pre), tuple(cur), tuple(seq), place=place,
        refined_prequel=tuple(e.upper() for e in pre), warnings=("w",),
    )
    assert EventDecomposition.from_dict(d.to_dict()) == d


def test_description_flattening_order_and_blanks():
    d = DescriptionSet("v", ("f1", " ", "f2"), "summary", "transcript")
    assert d.flattened() == ["f1", "f2", "summary", "transcript"]
    assert d.without_transcript().flattened() == ["f1", "f2", "summary"]
    assert DescriptionSet.from_dict(d.to_dict()) == d


def test_video_record_frame_ref_and_equality():
    v = VideoRecord("vid", np.ones((2, 3)) / np.sqrt(3), frame_ref_template="f/{video_id}/{index:03d}.jpg")
    assert v.frame_ref(7) == "f/vid/007.jpg"
    assert v.frame_count == 2 and v.dim == 3
    assert v == VideoRecord("vid", v.frame_embeddings.copy(), frame_ref_template=v.frame_ref_template)
    with pytest.raises(ValueError):
        v.frame_embeddings[0, 0] = 5.0
    with pytest.raises(InvalidInputError):
        VideoRecord("x", np.ones(3)).frame_ref(0)


def test_score_matrix_checks_shape_and_finiteness():
    with pytest.raises(InvalidInputError):
        ScoreComponentMatrix("q", {ComponentKind.QUERY_VIDEO: [1.0, 2.0]}, ("a",))
    with pytest.raises(InvalidInputError):
        ScoreComponentMatrix("q", {ComponentKind.QUERY_VIDEO: [np.nan]}, ("a",))
    with pytest.raises(InvalidInputError):
        ScoreComponentMatrix("q", {"bogus": [1.0]}, ("a",))
    m = ScoreComponentMatrix("q", {"query_desc": [0.5], "query_video": [1.0]}, ("a",))
    assert m.kinds == (ComponentKind.QUERY_VIDEO, ComponentKind.QUERY_DESC)
    assert m.dropped([ComponentKind.QUERY_VIDEO]).kinds == (ComponentKind.QUERY_DESC,)
    assert m.stacked().shape == (2, 1)


def test_fused_ranking_to_dict():
    r = FusedRanking("q", [0.1, 0.7, 0.2], [1, 2, 0], ("a", "b", "c"))
    assert r.to_dict() == {"query_id": "q", "ranking": ["b", "c", "a"], "scores": [0.7, 0.2, 0.1]}


def test_consistent_corpus_has_no_violations():
    assert validate_corpus(*small_corpus()) == []


def test_unknown_video_in_judgments_is_named():
    q, v, d, _ = small_corpus()
    j = RelevanceJudgments({"q1": frozenset({"vX"})})
    found = validate_corpus(q, v, d, j)
    assert len(found) == 1 and found[0].kind == "dangling_video" and "vX" in str(found[0])


def test_norm_violation_for_half_norm_frame():
    q, v, d, j = small_corpus()
    v = v + [VideoRecord("v4", np.array([[0.5, 0, 0, 0]]))]
    d = dict(d, v4=DescriptionSet("v4", ("c",)))
    found = validate_corpus(q, v, d, j)
    assert [(x.kind, x.subject) for x in found] == [("norm", "v4")]


def test_other_violation_kinds():
    q, v, d, j = small_corpus()
    v = v + [VideoRecord("v1", np.eye(5)[:1])]
    d = {"v1": DescriptionSet("v1"), "ghost": DescriptionSet("ghost", ("c",))}
    j = RelevanceJudgments({"q9": frozenset(), "q1": frozenset({"v1"})})
    kinds = {x.kind for x in validate_corpus(q + q[:1], v, d, j)}
    assert kinds == {
        "duplicate_query", "duplicate_video", "dimension", "empty_descriptions",
        "dangling_description", "missing_descriptions", "dangling_judgment", "empty_judgment",
    }


@given(st.randoms(use_true_random=False))
@settings(max_examples=25)
def test_validation_is_order_independent_and_idempotent(random):
    q, v, d, _ = small_corpus()
    j = RelevanceJudgments({"q1": frozenset({"vX", "v1"}), "q7": frozenset({"v2"})})
    base = validate_corpus(q, v, d, j)
    q2, v2 = list(q), list(v)
    random.shuffle(q2)
    random.shuffle(v2)
    assert validate_corpus(q2, v2, d, j) == base
    assert validate_corpus(q2, v2, d, j) == validate_corpus(q2, v2, d, j)
