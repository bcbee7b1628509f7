"""End-to-end driver: decomposition, descriptions, scoring, fusion, evaluation.

Stage outputs are content-addressed on disk under ``<output_dir>/artifacts``
keyed by the stage name, the hash of its inputs, the prompt hashes and model
names involved. Reruns and partial reruns reuse whatever upstream results
are still valid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .corpus_io import dumps, load_corpus, write_json, write_jsonl
from .fusion import FusionMethod, fuse_matrix
from .knowledge import (
    AsrLayers,
    AsrBackend,
    CallStore,
    ChatBackend,
    ChatEndpointConfig,
    ServiceClient,
    Services,
    Transcript,
    TranslatorBackend,
    caption_frames,
    decompose_query,
    load_prompt,
    summarize_video,
    transcribe_and_refine,
)
from .metrics import MetricReport, evaluate_run, format_table, report_to_tsv
from .model import (
    ALL_COMPONENTS,
    ComponentKind,
    Corpus,
    DescriptionSet,
    EventDecomposition,
    FusedRanking,
    InvalidInputError,
    ScoreComponentMatrix,
    VideoRecord,
    validate_corpus,
)
from .scoring import AggregationPolicy, build_score_matrix, matrix_to_tsv, save_matrix
from .similarity import (
    EmbeddingProvider,
    HashingEmbeddingProvider,
    HttpEmbeddingProvider,
    MemoizedProvider,
    RecordingEmbeddingProvider,
    ReplayEmbeddingProvider,
)

logger = logging.getLogger(__name__)

SAMPLING_FORMULA = "floor(i*N/K), i=0..K-1; all frames when N<=K"
ROLES = ("llm", "vlm", "asr", "translator")


def sample_frames_uniform(total_frames: int, k: int) -> list[int]:
    if total_frames < 1:
        raise InvalidInputError("video has no frames")
    if k < 1:
        raise InvalidInputError("frame count K must be >= 1")
    if total_frames <= k:
        return list(range(total_frames))
    return [i * total_frames // k for i in range(k)]


ASR_LAYER_PRESETS = {
    "full": AsrLayers(),
    "-asr": AsrLayers(asr_translation=False),
    "-translator": AsrLayers(translator=False),
    "-refiner": AsrLayers(refiner=False),
    "-all": AsrLayers(False, False, False),
}


@dataclass
class RunConfig:
    corpus: str
    output_dir: str = "runs/default"
    frame_count: int = 16
    frame_sampling: str = "uniform"
    use_asr: bool = True
    asr_layers: AsrLayers = field(default_factory=AsrLayers)
    use_refined_events: bool = True
    aggregation: AggregationPolicy = field(default_factory=AggregationPolicy)
    fusion: str = "inv_entropy"
    rrf_k: float = 0.0
    metric_ks: tuple[int, ...] = (1, 5, 10)
    ndcg_ks: tuple[int, ...] = ()
    rank_mode: str = "first"
    group_by: str | None = None
    mode: str = "replay"
    replay: dict[str, str] = field(default_factory=dict)
    endpoints: dict[str, dict] = field(default_factory=dict)
    seed: int = 0
    workers: int = 4

    def __post_init__(self):
        if isinstance(self.asr_layers, Mapping):
            self.asr_layers = AsrLayers(**self.asr_layers)
        elif isinstance(self.asr_layers, str):
            self.asr_layers = ASR_LAYER_PRESETS[self.asr_layers]
        if isinstance(self.aggregation, Mapping):
            self.aggregation = AggregationPolicy.parse(**self.aggregation)
        elif isinstance(self.aggregation, str):
            self.aggregation = AggregationPolicy.parse(*self.aggregation.split("/"))
        self.metric_ks = tuple(int(k) for k in self.metric_ks)
        self.ndcg_ks = tuple(int(k) for k in self.ndcg_ks)
        if self.frame_count < 1:
            raise InvalidInputError("frame_count must be >= 1")
        self.fusion = FusionMethod(self.fusion).value
        if self.frame_sampling not in ("uniform", "external"):
            raise InvalidInputError(f"unknown frame sampling {self.frame_sampling!r}")
        if self.mode not in ("replay", "live"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.mode == "replay" and not {"knowledge", "embeddings"} <= set(self.replay):
            raise InvalidInputError("replay mode needs replay.knowledge and replay.embeddings paths")
        if self.rank_mode not in ("first", "mean"):
            raise InvalidInputError(f"unknown rank mode {self.rank_mode!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["asr_layers"] = dataclasses.asdict(self.asr_layers)
        out["aggregation"] = self.aggregation.to_dict()
        out["metric_ks"] = list(self.metric_ks)
        out["ndcg_ks"] = list(self.ndcg_ks)
        out["frame_sampling_formula"] = SAMPLING_FORMULA
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Read a JSON config; relative paths are resolved against its directory."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    data.update({k: v for k, v in overrides.items() if v is not None})
    base = path.parent

    def resolve(p):
        return str(p) if Path(p).is_absolute() else str((base / p).resolve())

    data["corpus"] = resolve(data["corpus"])
    if "output_dir" in data and "output_dir" not in overrides:
        data["output_dir"] = resolve(data["output_dir"])
    data["replay"] = {k: resolve(v) for k, v in (data.get("replay") or {}).items()}
    data.pop("frame_sampling_formula", None)
    return RunConfig(**data)


class ArtifactStore:
    """Stage outputs as JSON files addressed by the hash of their inputs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(stage: str, parts: Mapping[str, Any]) -> str:
        return hashlib.sha256(dumps({"stage": stage, **parts}).encode("utf-8")).hexdigest()

    def get_or_compute(self, stage: str, parts: Mapping[str, Any], compute: Callable[[], Any]):
        path = self.root / stage / f"{self.key(stage, parts)}.json"
        if path.exists():
            with self._lock:
                self.hits += 1
            return json.loads(path.read_text(encoding="utf-8"))
        value = compute()
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps(value) + "\n")
        os.replace(tmp, path)
        with self._lock:
            self.misses += 1
        return json.loads(dumps(value))


def build_services(config: RunConfig) -> Services:
    replay = config.mode == "replay"
    store = CallStore(config.replay.get("knowledge"))
    clients = {}
    for role in ROLES:
        ep = ChatEndpointConfig.from_dict(config.endpoints.get(role))
        backend = None
        if not replay:
            backend = {"asr": AsrBackend, "translator": TranslatorBackend}.get(role, ChatBackend)(ep)
        clients[role] = ServiceClient(
            role, ep.model_name, store, backend, replay=replay,
            max_attempts=ep.max_retries, backoff=ep.backoff, max_in_flight=ep.max_in_flight,
        )
    return Services(**clients)


def build_provider(config: RunConfig) -> EmbeddingProvider:
    if config.mode == "replay":
        ep = config.endpoints.get("embeddings") or {}
        return ReplayEmbeddingProvider(config.replay["embeddings"], ep.get("model_name"))
    ep = dict(config.endpoints.get("embeddings") or {})
    if ep.get("backend", "http") == "hashing":
        provider: EmbeddingProvider = HashingEmbeddingProvider(
            ep.get("token_dim", 32), ep.get("sentence_dim", 8), seed=config.seed
        )
    else:
        key_env = ep.get("api_key_env")
        provider = HttpEmbeddingProvider(
            ep.get("base_url", "http://localhost:8001"), ep.get("model_name", "default"),
            token_model=ep.get("token_model"), timeout=ep.get("timeout", 60.0),
            api_key=os.environ.get(key_env) if key_env else None,
        )
    if config.replay.get("embeddings"):
        provider = RecordingEmbeddingProvider(provider, config.replay["embeddings"])
    return provider


def _prompt_hashes(*names: str) -> dict[str, str]:
    return {n: load_prompt(n).sha256 for n in names}


def _emb_hash(video: VideoRecord) -> str:
    return hashlib.sha256(np.ascontiguousarray(video.frame_embeddings, dtype="<f4").tobytes()).hexdigest()


def _safe_name(query_id: str) -> str:
    keep = "".join(c if c.isalnum() or c in "-_" else "_" for c in query_id)
    return f"{keep}-{hashlib.sha256(query_id.encode()).hexdigest()[:8]}"


@dataclass
class RunResult:
    rankings: dict[str, FusedRanking]
    report: MetricReport
    matrices: dict[str, ScoreComponentMatrix]
    decompositions: dict[str, EventDecomposition]
    descriptions: dict[str, DescriptionSet]


class Pipeline:
    """Stage runner bound to one config, corpus and set of model clients."""

    def __init__(self, config: RunConfig, *, services: Services | None = None,
                 provider: EmbeddingProvider | None = None, corpus: Corpus | None = None):
        self.config = config
        self.corpus = corpus or load_corpus(config.corpus)
        self.services = services or build_services(config)
        self.provider = MemoizedProvider(provider or build_provider(config))
        self.output_dir = Path(config.output_dir)
        self.artifacts = ArtifactStore(self.output_dir / "artifacts")
        self._memo: dict[str, Any] = {}

    # -- helpers ------------------------------------------------------------------

    def _map(self, fn, items):
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _memoized(self, name: str, compute):
        if name not in self._memo:
            self._memo[name] = compute()
        return self._memo[name]

    def validate(self):
        return validate_corpus(self.corpus.queries, self.corpus.videos, self.corpus.descriptions,
                               self.corpus.judgments, self.corpus.dim)

    # -- stages -------------------------------------------------------------------

    def decompose(self) -> dict[str, EventDecomposition]:
        return self._memoized("decompose", self._decompose)

    def _decompose(self):
        llm = self.services.llm
        prompts = _prompt_hashes(
            "decompose_prequel", "decompose_current", "decompose_sequel",
            "extract_event", "extract_location", "extract_time", "refine_query",
        )

        def one(q):
            parts = {"query": q.text, "prompts": prompts, "model": llm.model_name}
            data = self.artifacts.get_or_compute(
                "decompose", parts, lambda: decompose_query(q.text, llm).to_dict()
            )
            return q.id, EventDecomposition.from_dict(data)

        return dict(self._map(one, list(self.corpus.queries)))

    def transcribe(self) -> dict[str, Transcript]:
        return self._memoized("transcribe", self._transcribe)

    def _transcribe(self):
        s = self.services
        layers = self.config.asr_layers

        def one(v: VideoRecord):
            audio = v.audio_ref if v.has_audio else None
            if not self.config.use_asr or audio is None:
                return v.id, Transcript()
            parts = {
                "audio": audio,
                "layers": dataclasses.asdict(layers),
                "models": [s.asr.model_name, s.translator.model_name, s.llm.model_name],
                "prompts": _prompt_hashes("refine_transcript"),
            }
            data = self.artifacts.get_or_compute(
                "transcribe", parts,
                lambda: transcribe_and_refine(audio, s.asr, s.translator, s.llm, layers).to_dict(),
            )
            return v.id, Transcript.from_dict(data)

        return dict(self._map(one, list(self.corpus.videos)))

    def frame_indices(self, video: VideoRecord) -> list[int]:
        if self.config.frame_sampling == "external":
            if video.frame_indices is None:
                raise InvalidInputError(f"video {video.id}: external sampling needs frame_indices")
            return list(video.frame_indices)
        n = video.total_frames if video.total_frames is not None else video.frame_count
        return sample_frames_uniform(n, self.config.frame_count)

    def describe(self) -> dict[str, DescriptionSet]:
        return self._memoized("describe", self._describe)

    def _describe(self):
        if self.corpus.descriptions is not None:
            descs = dict(self.corpus.descriptions)
            if not self.config.use_asr:
                descs = {k: d.without_transcript() for k, d in descs.items()}
            return descs

        transcripts = self.transcribe()
        vlm, llm = self.services.vlm, self.services.llm
        prompts = _prompt_hashes("frame_caption", "frame_caption_asr", "video_caption", "video_caption_asr")

        def one(v: VideoRecord):
            t = transcripts.get(v.id, Transcript())
            frame_asr = t.original if self.config.use_asr else None
            summary_asr = (t.refined or t.original) if self.config.use_asr else None
            refs = [v.frame_ref(i) for i in self.frame_indices(v)]
            parts = {
                "video": v.id,
                "frames": refs,
                "frame_asr": frame_asr,
                "summary_asr": summary_asr,
                "transcript": t.text if self.config.use_asr else None,
                "prompts": prompts,
                "models": [vlm.model_name, llm.model_name],
            }

            def compute():
                captions = caption_frames(refs, frame_asr, vlm)
                summary = summarize_video(captions, summary_asr, llm) if any(captions) else None
                return DescriptionSet(v.id, tuple(captions), summary,
                                      t.text if self.config.use_asr else None).to_dict()

            return v.id, DescriptionSet.from_dict(self.artifacts.get_or_compute("describe", parts, compute))

        return dict(self._map(one, list(self.corpus.videos)))

    def score(self) -> dict[str, ScoreComponentMatrix]:
        return self._memoized("score", self._score)

    def _score(self):
        decomps = self.decompose()
        descs = self.describe()
        videos = list(self.corpus.videos)
        desc_hash = hashlib.sha256(
            dumps({vid: descs[vid].to_dict() for vid in sorted(descs)}).encode()
        ).hexdigest()
        emb_hash = hashlib.sha256("".join(_emb_hash(v) for v in videos).encode()).hexdigest()

        def one(q):
            parts = {
                "query": q.text,
                "query_id": q.id,
                "decomposition": decomps[q.id].to_dict(),
                "descriptions": desc_hash,
                "embeddings": emb_hash,
                "videos": [v.id for v in videos],
                "policy": self.config.aggregation.to_dict(),
                "refined": self.config.use_refined_events,
                "provider": self.provider.name,
            }

            def compute():
                m = build_score_matrix(q, decomps[q.id], videos, descs, self.provider,
                                       self.config.aggregation,
                                       use_refined_events=self.config.use_refined_events)
                return {
                    "components": {k.value: m.components[k].tolist() for k in m.kinds},
                    "errors": dict(sorted(m.errors.items())),
                }

            try:
                data = self.artifacts.get_or_compute("score", parts, compute)
            except InvalidInputError as exc:
                logger.error("query %s could not be scored: %s", q.id, exc)
                return q.id, None
            return q.id, ScoreComponentMatrix(q.id, data["components"], [v.id for v in videos],
                                              data["errors"])

        return {qid: m for qid, m in self._map(one, list(self.corpus.queries)) if m is not None}

    def fuse(self, matrices: Mapping[str, ScoreComponentMatrix] | None = None,
             method: str | None = None, drop: Sequence[ComponentKind] = ()) -> dict[str, FusedRanking]:
        matrices = self.score() if matrices is None else matrices
        method = method or self.config.fusion
        out = {}
        for qid in sorted(matrices):
            m = matrices[qid].dropped(drop) if drop else matrices[qid]
            out[qid] = fuse_matrix(m, method, self.config.rrf_k)
        return out

    def evaluate(self, rankings: Mapping[str, FusedRanking]) -> MetricReport:
        if not rankings:
            raise InvalidInputError("no query produced a ranking")
        labels = {
            q.id: {k: v for k, v in (("language", q.language), ("category", q.category)) if v}
            for q in self.corpus.queries
        }
        return evaluate_run(
            {qid: r.ranked_ids for qid, r in rankings.items()},
            self.corpus.judgments,
            self.config.metric_ks,
            self.config.group_by,
            ndcg_ks=self.config.ndcg_ks,
            rank_mode=self.config.rank_mode,
            query_labels=labels,
        )

    # -- outputs ------------------------------------------------------------------

    def write_decompositions(self, decomps):
        write_jsonl(self.output_dir / "decompositions.jsonl",
                    ({"query_id": q, **decomps[q].to_dict()} for q in sorted(decomps)))

    def write_transcripts(self, transcripts):
        write_jsonl(self.output_dir / "transcripts.jsonl",
                    ({"video_id": v, **transcripts[v].to_dict()} for v in sorted(transcripts)))

    def write_descriptions(self, descs):
        write_jsonl(self.output_dir / "descriptions.jsonl", (descs[v].to_dict() for v in sorted(descs)))

    def write_matrices(self, matrices):
        for qid in sorted(matrices):
            stem = self.output_dir / "matrices" / _safe_name(qid)
            save_matrix(matrices[qid], stem)
            stem.with_suffix(".tsv").write_text(matrix_to_tsv(matrices[qid]), encoding="utf-8")

    def write_rankings(self, rankings, path: Path | None = None):
        write_jsonl(path or self.output_dir / "rankings.jsonl",
                    (rankings[q].to_dict() for q in sorted(rankings)))

    def run_settings(self) -> dict:
        c = self.config
        return {
            "fusion": c.fusion,
            "rrf_k": c.rrf_k,
            "frame_count": c.frame_count,
            "frame_sampling": c.frame_sampling,
            "frame_sampling_formula": SAMPLING_FORMULA,
            "use_asr": c.use_asr,
            "use_refined_events": c.use_refined_events,
            "aggregation": c.aggregation.to_dict(),
        }

    def write_report(self, report: MetricReport, stem: str = "report"):
        write_json(self.output_dir / f"{stem}.json", {**report.to_dict(), "run": self.run_settings()})
        (self.output_dir / f"{stem}.tsv").write_text(report_to_tsv(report), encoding="utf-8")

    def run(self) -> RunResult:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        write_json(self.output_dir / "run_config.json", self.config.to_dict())
        decomps = self.decompose()
        self.write_decompositions(decomps)
        if self.corpus.descriptions is None:
            self.write_transcripts(self.transcribe())
        descs = self.describe()
        self.write_descriptions(descs)
        matrices = self.score()
        self.write_matrices(matrices)
        rankings = self.fuse(matrices)
        self.write_rankings(rankings)
        report = self.evaluate(rankings)
        self.write_report(report)
        return RunResult(rankings, report, matrices, decomps, descs)


def run_retrieval(config: RunConfig, **kwargs) -> RunResult:
    return Pipeline(config, **kwargs).run()


# -- ablations ------------------------------------------------------------------------

EVENT_COMPONENTS = (ComponentKind.PREQUEL_DESC, ComponentKind.CURRENT_DESC, ComponentKind.SEQUEL_DESC)
DROP_PRESETS: dict[str, tuple[ComponentKind, ...]] = {
    "none": (),
    "-video": (ComponentKind.QUERY_VIDEO,),
    "-query": (ComponentKind.QUERY_DESC,),
    "-event": EVENT_COMPONENTS,
    "-prequel": (ComponentKind.PREQUEL_DESC,),
    "-current": (ComponentKind.CURRENT_DESC,),
    "-sequel": (ComponentKind.SEQUEL_DESC,),
    "-all": ALL_COMPONENTS,
}


def parse_drop(spec: str | Sequence[str]) -> tuple[ComponentKind, ...]:
    """A preset name ("-event") or component names joined by "+" or ","."""
    if not isinstance(spec, str):
        return tuple(ComponentKind(s) for s in spec)
    if spec in DROP_PRESETS:
        return DROP_PRESETS[spec]
    parts = [p for p in spec.replace(",", "+").split("+") if p]
    return tuple(ComponentKind(p.lstrip("-")) for p in parts)


PIPELINE_AXES = {"frame_count", "use_asr", "asr_layers", "aggregation", "use_refined_events"}
FUSION_AXES = {"fusion", "drop"}


@dataclass
class AblationRow:
    cell: dict[str, Any]
    report: MetricReport
    rankings: dict[str, FusedRanking]


def run_ablation(config: RunConfig, grid: Mapping[str, Sequence[Any]], *,
                 services: Services | None = None, provider: EmbeddingProvider | None = None,
                 corpus: Corpus | None = None) -> list[AblationRow]:
    """Evaluate every cell of the Cartesian product of ``grid``.

    Axes: ``fusion``, ``drop`` (component removal before fusion, no
    renormalization of the rest), ``frame_count``, ``use_asr``,
    ``asr_layers``, ``aggregation``, ``use_refined_events``. Pipeline stages
    are shared between cells that only differ on fusion axes.
    """
    grid = {k: list(v) for k, v in grid.items()}
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise InvalidInputError("ablation grid is empty")
    unknown = set(grid) - PIPELINE_AXES - FUSION_AXES
    if unknown:
        raise InvalidInputError(f"unknown ablation axes {sorted(unknown)}")

    axes = list(grid)
    corpus = corpus or load_corpus(config.corpus)
    pipelines: dict[str, Pipeline] = {}
    rows = []
    for values in itertools.product(*(grid[a] for a in axes)):
        cell = dict(zip(axes, values))
        changes = {a: cell[a] for a in axes if a in PIPELINE_AXES}
        cfg = config.replace(**changes)
        cfg.__post_init__()
        key = dumps({a: str(v) for a, v in sorted(changes.items())})
        if key not in pipelines:
            pipelines[key] = Pipeline(cfg, services=services, provider=provider, corpus=corpus)
        pipe = pipelines[key]
        drop = parse_drop(cell.get("drop", "none"))
        rankings = pipe.fuse(method=cell.get("fusion", config.fusion), drop=drop)
        rows.append(AblationRow({a: str(v) for a, v in cell.items()}, pipe.evaluate(rankings), rankings))
    return rows


def ablation_to_tsv(rows: Sequence[AblationRow]) -> str:
    if not rows:
        return ""
    axes = list(rows[0].cell)
    names = list(rows[0].report.metrics)
    body = [[r.cell[a] for a in axes] + list(r.report.rendered().values()) for r in rows]
    return format_table(axes + names, body)


def write_ablation(rows: Sequence[AblationRow], output_dir: str | Path) -> None:
    output_dir = Path(output_dir)
    write_json(output_dir / "ablation.json",
               [{"cell": r.cell, "report": r.report.to_dict()} for r in rows])
    (output_dir / "ablation.tsv").write_text(ablation_to_tsv(rows), encoding="utf-8")
