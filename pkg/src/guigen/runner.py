"""Batch generation runner: executes one strategy over a set of NLRs with
per-NLR isolation, writes the output layout and the run manifest.

Output layout:
    <out>/<nlr_id>/<strategy>[-k<k>]/prototype.html + trace.json
    <out>/<nlr_id>/<strategy>-k<k>/iterations/p<i>.html   (self-critique runs)
    <out>/<nlr_id>/<strategy>[-k<k>]/content/...          (--with-content)
    <out>/manifest.json

The manifest is written even when some NLRs fail; one failure never aborts
the batch.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .config import RunConfig
from .content import content_pipeline
from .errors import FallbackSignal, GuigenError
from .htmlio import store_prototype
from .llm import Usage
from .repository import Repository, load_repository
from .rerank import pipeline_rerank
from .retrieval import RetrievalIndex
from .strategies import (
    Nlr,
    Prototype,
    STRATEGY_NAMES,
    pdgg_combined,
    pdgg_sequential,
    ragg_direct,
    ragg_extract,
    scgg_loop,
    zs_cot,
    zs_instruct,
)

logger = logging.getLogger(__name__)

RAGG_STRATEGIES = ("ragg-direct", "ragg-extract")


@dataclass
class NlrOutcome:
    nlr_id: str
    status: str  # ok | fallback-zs | error
    directory: str = ""
    prototypes: int = 0
    error: str = ""


@dataclass
class RunManifest:
    tool_version: str
    strategy: str
    config: dict
    outcomes: list[NlrOutcome] = field(default_factory=list)
    prompt_tokens: int = 0
    output_tokens: int = 0
    wall_clock_seconds: float = 0.0
    content_enabled: bool = False

    @property
    def failures(self) -> int:
        return sum(1 for o in self.outcomes if o.status == "error")

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "strategy": self.strategy,
            "config": self.config,
            "outcomes": [asdict(o) for o in self.outcomes],
            "totals": {"prompt_tokens": self.prompt_tokens,
                       "output_tokens": self.output_tokens},
            "wall_clock_seconds": self.wall_clock_seconds,
            "content_enabled": self.content_enabled,
        }

    def write(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def strategy_dirname(strategy: str, k: int) -> str:
    if strategy in RAGG_STRATEGIES or strategy == "scgg":
        return f"{strategy}-k{k}"
    return strategy


def load_nlrs(path: str | Path) -> list[Nlr]:
    nlrs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        nlrs.append(Nlr(id=str(record["id"]), text=str(record["text"])))
    if not nlrs:
        raise ValueError(f"no NLRs found in {path}")
    return nlrs


@dataclass
class _Context:
    config: RunConfig
    provider: object
    embedding: object
    index: RetrievalIndex | None
    repo: Repository | None
    strategy: str
    k: int
    out_dir: Path


def _select_screens(ctx: _Context, nlr: Nlr, run_dir: Path):
    assert ctx.index is not None and ctx.repo is not None
    result = pipeline_rerank(ctx.provider, ctx.embedding, ctx.index, ctx.repo,
                             nlr.text, n=ctx.config.retrieval.n, k=ctx.k,
                             sample_count=ctx.config.retrieval.samples,
                             settings=ctx.config.generation_settings())
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "selection.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    usage = Usage()
    for record in result.records:
        usage = usage + record.response.usage
    return [ctx.repo.get(screen_id) for screen_id in result.reranked.ids()], usage


def _generate_one(ctx: _Context, nlr: Nlr) -> tuple[NlrOutcome, list[Prototype], Usage]:
    settings = ctx.config.generation_settings()
    run_dir = ctx.out_dir / nlr.id / strategy_dirname(ctx.strategy, ctx.k)
    outcome = NlrOutcome(nlr_id=nlr.id, status="ok", directory=str(run_dir))
    prototypes: list[Prototype] = []
    error: str = ""
    extra_usage = Usage()

    if ctx.strategy == "zs":
        prototypes = [zs_instruct(ctx.provider, nlr, settings)]
    elif ctx.strategy == "zs-cot":
        prototypes = [zs_cot(ctx.provider, nlr, settings)]
    elif ctx.strategy == "pdgg":
        prototypes = [pdgg_sequential(ctx.provider, nlr, settings)]
    elif ctx.strategy == "pdgg-combined":
        prototypes = [pdgg_combined(ctx.provider, nlr, settings)]
    elif ctx.strategy == "scgg":
        result = scgg_loop(ctx.provider, nlr, ctx.k, settings)
        prototypes = result.prototypes
        if result.error:
            outcome.status = "error"
            error = f"{result.failed_stage}: {result.error}"
    elif ctx.strategy in RAGG_STRATEGIES:
        screens, extra_usage = _select_screens(ctx, nlr, run_dir)
        try:
            if ctx.strategy == "ragg-direct":
                prototypes = [ragg_direct(ctx.provider, nlr, screens, ctx.k,
                                          ctx.repo, settings)]
            else:
                prototypes = [ragg_extract(ctx.provider, nlr, screens, ctx.k,
                                           ctx.repo, settings)]
        except FallbackSignal:
            logger.warning("no relevant screens for %s, falling back to "
                           "plain instruction prompting", nlr.id)
            prototypes = [zs_instruct(ctx.provider, nlr, settings)]
            outcome.status = "fallback-zs"
    else:
        raise GuigenError(f"unknown strategy {ctx.strategy!r}")

    # persist: final prototype at the run dir, intermediates under iterations/
    final = prototypes[-1]
    store_prototype(final, run_dir)
    if len(prototypes) > 1:
        iterations = run_dir / "iterations"
        iterations.mkdir(parents=True, exist_ok=True)
        for prototype in prototypes[:-1]:
            (iterations / f"p{prototype.iteration}.html").write_text(
                prototype.html.text, encoding="utf-8")

    if ctx.config.with_content and outcome.status != "error":
        content_dir = run_dir / "content"
        image_provider = ctx.config.build_image_provider(
            asset_dir=content_dir / "assets")
        result = content_pipeline(ctx.provider, image_provider, final, settings)
        store_prototype(result.prototype, content_dir)
        prototypes = prototypes + [result.prototype]

    outcome.prototypes = len(prototypes)
    outcome.error = error
    return outcome, prototypes, extra_usage


def batch_generate(config: RunConfig, nlrs: list[Nlr]) -> RunManifest:
    """Run the configured strategy for every NLR with bounded concurrency.
    Deterministic under the mock provider: re-running writes byte-identical
    outputs including this manifest."""
    if not nlrs:
        raise ValueError("need at least one NLR")
    strategy = config.strategy
    if strategy not in STRATEGY_NAMES:
        raise GuigenError(f"unknown strategy {strategy!r}")
    k = config.k or (1 if strategy == "scgg" else config.retrieval.k)

    provider = config.build_chat_provider()
    embedding = config.build_embedding_provider()
    index = repo = None
    if strategy in RAGG_STRATEGIES:
        index = RetrievalIndex.load(config.retrieval.index)
        repo = load_repository(config.repo)

    out_dir = Path(config.out_dir)
    ctx = _Context(config=config, provider=provider, embedding=embedding,
                   index=index, repo=repo, strategy=strategy, k=k,
                   out_dir=out_dir)
    manifest = RunManifest(tool_version=__version__, strategy=strategy,
                           config=config.snapshot(),
                           content_enabled=config.with_content)
    started = time.monotonic()

    def run(nlr: Nlr) -> tuple[NlrOutcome, list[Prototype], Usage]:
        try:
            return _generate_one(ctx, nlr)
        except Exception as exc:  # per-NLR isolation
            logger.warning("generation failed for %s: %s", nlr.id, exc)
            return (NlrOutcome(nlr_id=nlr.id, status="error", error=str(exc)),
                    [], Usage())

    try:
        if config.concurrency > 1 and len(nlrs) > 1:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                results = list(pool.map(run, nlrs))
        else:
            results = [run(nlr) for nlr in nlrs]
        for outcome, prototypes, extra in results:
            manifest.outcomes.append(outcome)
            totals = extra
            if prototypes:
                # the last prototype's trace carries every call of the run
                totals = totals + prototypes[-1].trace.totals()
            manifest.prompt_tokens += totals.prompt_tokens
            manifest.output_tokens += totals.output_tokens
    finally:
        manifest.wall_clock_seconds = (
            0.0 if config.is_deterministic else time.monotonic() - started)
        manifest.write(out_dir / "manifest.json")
    return manifest
