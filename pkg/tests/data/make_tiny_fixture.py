"""Regenerate the tiny 2-query / 3-video replay fixture.

Runs the pipeline once against scripted model endpoints and a hashing
embedder, recording every call into the replay stores, then reruns in
replay mode and freezes the resulting rankings and reports as goldens.

    python3 tests/data/make_tiny_fixture.py
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from fakes import MODEL_NAMES, scripted_services  # noqa: E402

from vidfuse.corpus_io import save_corpus, write_json  # noqa: E402
from vidfuse.model import Corpus, QueryRecord, RelevanceJudgments, VideoRecord  # noqa: E402
from vidfuse.pipeline import Pipeline, load_config  # noqa: E402
from vidfuse.similarity import HashingEmbeddingProvider, RecordingEmbeddingProvider  # noqa: E402

ROOT = HERE / "tiny"
SEED = 0
DIM = 8
VARIANTS = {"asr": {"use_asr": True}, "noasr": {"use_asr": False}}
FRAME_COUNTS = (8, 16)


def build_corpus(provider: HashingEmbeddingProvider) -> Corpus:
    rng = np.random.default_rng(SEED)
    queries = (
        QueryRecord("q_fire", "firefighters battle a warehouse fire in Lisbon at night", "en", "disaster"),
        QueryRecord("q_parade", "fans celebrate a football victory parade", "en", "sports"),
    )

    def frames(anchor, n, noise):
        base = np.tile(anchor, (n, 1)) + noise * rng.standard_normal((n, DIM))
        return base / np.linalg.norm(base, axis=1, keepdims=True)

    q_fire = provider.embed_query_sentence(queries[0].text)
    q_parade = provider.embed_query_sentence(queries[1].text)
    template = "frames/{video_id}/{index:04d}.jpg"
    videos = (
        VideoRecord("v_fire", frames(q_fire, 6, 0.3), True, 40, template, "audio/v_fire.wav"),
        VideoRecord("v_parade", frames(q_parade, 4, 0.3), True, 10, template, "audio/v_parade.wav"),
        VideoRecord("v_cook", frames(rng.standard_normal(DIM), 5, 0.3), False, 24, template, None),
    )
    judgments = RelevanceJudgments(
        {"q_fire": frozenset({"v_fire"}), "q_parade": frozenset({"v_parade"})},
        {"q_fire": {"language": "en"}, "q_parade": {"language": "en"}},
    )
    return Corpus(queries, videos, judgments, None, DIM)


CONFIG = {
    "corpus": "corpus/manifest.json",
    "output_dir": "out",
    "frame_count": 16,
    "mode": "replay",
    "replay": {"knowledge": "replay/knowledge.jsonl", "embeddings": "replay/embeddings.jsonl"},
    "endpoints": {role: {"model_name": name} for role, name in MODEL_NAMES.items()},
    "metric_ks": [1, 5, 10],
    "seed": SEED,
    "workers": 2,
}


def main() -> None:
    if ROOT.exists():
        shutil.rmtree(ROOT)
    ROOT.mkdir(parents=True)
    hashing = HashingEmbeddingProvider(token_dim=32, sentence_dim=DIM, seed=SEED)
    corpus = build_corpus(hashing)
    save_corpus(corpus, ROOT / "corpus")
    write_json(ROOT / "config.json", CONFIG)

    services = scripted_services(ROOT / "replay/knowledge.jsonl")
    provider = RecordingEmbeddingProvider(hashing, ROOT / "replay/embeddings.jsonl")
    scratch = ROOT / "_record"
    for variant, changes in VARIANTS.items():
        for k in FRAME_COUNTS:
            cfg = load_config(ROOT / "config.json", output_dir=str(scratch / f"{variant}-{k}"),
                              frame_count=k, workers=1, **changes)
            Pipeline(cfg, services=services, provider=provider).run()
    shutil.rmtree(scratch)

    for variant, changes in VARIANTS.items():
        out = ROOT / "golden" / variant
        cfg = load_config(ROOT / "config.json", output_dir=str(ROOT / "_replay"), **changes)
        Pipeline(cfg).run()
        out.mkdir(parents=True)
        for name in ("rankings.jsonl", "report.json", "report.tsv"):
            shutil.copy(ROOT / "_replay" / name, out / name)
        shutil.rmtree(ROOT / "_replay")
    print(f"fixture written to {ROOT}")


if __name__ == "__main__":
    main()
