import json

import pytest

from fakes import match_prompt, scripted_services
from vidfuse.knowledge import CallStore, ServiceClient
from vidfuse.knowledge.agents import (
    AsrLayers,
    DecompositionError,
    Facets,
    caption_frames,
    decompose_events,
    decompose_query,
    extract_facets,
    refine_event,
    summarize_video,
    transcribe_and_refine,
)


class Script:
    """Backend answering each prompt with the next queued response per template."""

    def __init__(self, **responses):
        self.responses = {k: list(v) for k, v in responses.items()}
        self.prompts = []

    def __call__(self, payload):
        prompt = payload[0] if isinstance(payload, tuple) else payload
        name, fields = match_prompt(prompt)
        self.prompts.append((name, fields, payload))
        queue = self.responses[name]
        return queue.pop(0) if len(queue) > 1 else queue[0]


def live(backend, role="llm"):
    return ServiceClient(role, "m", CallStore(None), backend, replay=False, backoff=0.0)


def test_decompose_retries_then_succeeds():
    script = Script(decompose_prequel=["no structure here", "EXPLANATION: x\nEVENTS:\n1. a\n2. b"])
    assert decompose_events("a query", "prequel", live(script)) == ["a", "b"]
    assert len(script.prompts) == 2


def test_decompose_caps_at_five_and_fails_cleanly():
    seven = "EVENTS:\n" + "\n".join(f"{i}. e{i}" for i in range(1, 8))
    assert decompose_events("q", "sequel", live(Script(decompose_sequel=[seven]))) == [
        "e1", "e2", "e3", "e4", "e5"]
    with pytest.raises(DecompositionError, match="no EVENTS"):
        decompose_events("q", "current", live(Script(decompose_current=["EXPLANATION: none"])))
    with pytest.raises(ValueError):
        decompose_events("  ", "current", live(Script()))


def test_facets():
    script = Script(
        extract_event=["EXPLANATION: e\nEVENTS:\n1. earthquake"],
        extract_location=["EXPLANATION: l\nLOCATION INFORMATION: Anchorage, USA"],
        extract_time=["EXPLANATION: t\nTEMPORAL INFORMATION: NOT AVAILABLE"],
    )
    f = extract_facets("quake in Anchorage", live(script))
    assert (f.primary_event, f.place, f.time) == ("earthquake", "Anchorage, USA", None)
    assert not f.warnings
    empty = Script(extract_event=["EVENTS: NOT AVAILABLE"], extract_location=["garbage"],
                   extract_time=["TEMPORAL INFORMATION: NOT AVAILABLE"])
    f = extract_facets("q", live(empty))
    assert (f.primary_event, f.place, f.time) == (None, None, None)
    assert len(f.warnings) == 1 and "place" in f.warnings[0]


def test_refine_blanks_and_fallback():
    script = Script(refine_query=["EXPLANATION: ok\nREFINED QUERY: better query"])
    assert refine_event("base", Facets(place="Lisbon"), live(script)) == "better query"
    fields = script.prompts[0][1]
    assert (fields["base"], fields["place"], fields["time"], fields["event"]) == ("base", "Lisbon", "", "")
    warnings = []
    assert refine_event("base", Facets(), live(Script(refine_query=["nothing"])), warnings) == "base"
    assert warnings and "kept base" in warnings[0]


def test_decompose_query_with_failed_kind():
    services = scripted_services()
    calls = {"n": 0}
    inner = services.llm.backend

    def no_sequel(payload):
        if match_prompt(payload[0])[0] == "decompose_sequel":
            calls["n"] += 1
            return "EXPLANATION: nothing"
        return inner(payload)

    services.llm.backend = no_sequel
    d = decompose_query("a fire in Lisbon at night", services.llm)
    assert d.sequel == () and len(d.current) == 2
    assert calls["n"] == 3
    assert d.place == "Lisbon" and d.time == "night"
    assert d.refined_current[0].endswith("Lisbon night")
    assert any("sequel" in w for w in d.warnings)


def test_caption_chain_threads_previous_caption():
    script = Script(frame_caption=["cap A", "cap B", "cap C"])
    vlm = live(script, "vlm")
    caps = caption_frames(["f/0.jpg", "f/1.jpg", "f/2.jpg"], None, vlm)
    assert caps == ["cap A", "cap B", "cap C"]
    prevs = [fields["prev_caption"] for _, fields, _ in script.prompts]
    assert prevs == ["", "cap A", "cap B"]
    assert [p[2][1] for p in script.prompts] == ["f/0.jpg", "f/1.jpg", "f/2.jpg"]


def test_caption_variants():
    script = Script(frame_caption_asr=["with audio"], frame_caption=["silent"])
    vlm = live(script, "vlm")
    caption_frames(["f/0.jpg"], "hello there", vlm)
    caption_frames(["f/0.jpg"], None, vlm)
    (name_a, fields_a, _), (name_b, fields_b, _) = script.prompts
    assert name_a == "frame_caption_asr" and fields_a["asr"] == "hello there"
    assert name_b == "frame_caption" and "asr" not in fields_b
    assert "ASR" not in script.prompts[1][2][0]


def test_failed_caption_is_empty_and_skipped_as_context():
    def backend(payload):
        if payload[1].endswith("1.jpg"):
            raise ConnectionError("down")
        return f"cap {payload[1]}"

    seen = []
    caps = caption_frames(["0.jpg", "1.jpg", "2.jpg"], None, live(lambda p: seen.append(p) or backend(p), "vlm"))
    assert caps == ["cap 0.jpg", "", "cap 2.jpg"]
    assert "cap 0.jpg" in seen[-1][0]


def test_summary_preserves_order():
    script = Script(video_caption=["summary"], video_caption_asr=["summary with audio"])
    llm = live(script)
    caps = [f"caption {i}" for i in range(16)]
    assert summarize_video(caps, None, llm) == "summary"
    text = script.prompts[0][1]["frame_descriptions"]
    positions = [text.index(f"## Frame {i} Description\n\ncaption {i - 1}") for i in range(1, 17)]
    assert positions == sorted(positions)
    assert summarize_video(["one"], "speech", llm) == "summary with audio"
    with pytest.raises(ValueError):
        summarize_video(["", ""], None, llm)


def test_transcript_chain_layers():
    services = scripted_services()
    t = transcribe_and_refine("a/fire.wav", services.asr, services.translator, services.llm)
    assert (t.original, t.language, t.refined) == ("o armazem esta a arder", "pt", "the warehouse is burning")
    assert t.asr_english == t.translated == "the warehouse is burning"

    no_mt = scripted_services()
    t = transcribe_and_refine("a/fire.wav", no_mt.asr, no_mt.translator, no_mt.llm, AsrLayers(translator=False))
    assert no_mt.translator.calls == [] and t.translated is None
    refine_calls = [c for c in no_mt.llm.calls if c.stage == "refine_transcript"]
    assert len(refine_calls) == 1

    no_refiner = scripted_services()
    t = transcribe_and_refine("a/fire.wav", no_refiner.asr, no_refiner.translator, no_refiner.llm,
                              AsrLayers(refiner=False))
    assert no_refiner.llm.calls == [] and t.refined == "the warehouse is burning"

    off = scripted_services()
    t = transcribe_and_refine("a/fire.wav", off.asr, off.translator, off.llm, AsrLayers(False, False, False))
    assert t.refined is None and off.asr.calls == []


def test_transcript_absent_cases():
    services = scripted_services()
    assert transcribe_and_refine(None, services.asr, services.translator, services.llm).text is None
    assert services.asr.calls == []
    refuse = live(Script(refine_transcript=["Not Available"]))
    t = transcribe_and_refine("a/parade.wav", services.asr, services.translator, refuse)
    assert t.original and t.refined is None
    broken = live(lambda p: (_ for _ in ()).throw(ConnectionError("x")), "asr")
    t = transcribe_and_refine("a/fire.wav", broken, services.translator, services.llm)
    assert t.refined is None and "asr failed" in t.warnings[0]
    silent = live(lambda p: json.dumps({"original_text": " ", "english_text": ""}), "asr")
    assert transcribe_and_refine("x.wav", silent, services.translator, services.llm).refined is None
