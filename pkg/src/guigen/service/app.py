"""FastAPI service wrapping the core package.

The engine holds the run configuration plus lazily constructed providers,
repository and index; request handlers translate between the pydantic wire
models and the core operations. Start it with ``guigen serve --config ...``.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from .. import __version__, metrics
from ..config import RunConfig
from ..content import content_pipeline
from ..errors import (
    ConfigError,
    ExtractionError,
    FallbackSignal,
    GuigenError,
    IndexMismatchError,
)
from ..htmlio import extract_html, validate_html
from ..repository import Repository, load_repository
from ..rerank import pipeline_rerank
from ..retrieval import RetrievalIndex, retrieve_top_n
from ..strategies import (
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
from ..tracing import GenerationTrace
from . import schemas

logger = logging.getLogger(__name__)


class Engine:
    """Configured core services shared across requests; providers, index and
    repository are constructed lazily once and reused (all are thread-safe)."""

    def __init__(self, config: RunConfig):
        self.config = config
        self._chat = None
        self._embedding = None
        self._index: RetrievalIndex | None = None
        self._repo: Repository | None = None

    def chat(self):
        if self._chat is None:
            self._chat = self.config.build_chat_provider()
        return self._chat

    def embedding(self):
        if self._embedding is None:
            self._embedding = self.config.build_embedding_provider()
        return self._embedding

    def index(self) -> RetrievalIndex:
        if self._index is None:
            if not self.config.retrieval.index:
                raise ConfigError("no retrieval index configured")
            self._index = RetrievalIndex.load(self.config.retrieval.index)
        return self._index

    def repo(self) -> Repository:
        if self._repo is None:
            if not self.config.repo:
                raise ConfigError("no repository configured")
            self._repo = load_repository(self.config.repo)
        return self._repo


def _error(status: int, exc: Exception) -> HTTPException:
    return HTTPException(status_code=status, detail=str(exc))


def create_app(config: RunConfig) -> FastAPI:
    app = FastAPI(title="guigen", version=__version__,
                  description="GUI prototype generation and retrieval "
                              "re-ranking service")
    engine = Engine(config)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/info", response_model=schemas.InfoResponse)
    def info():
        screens = None
        if config.repo:
            try:
                screens = len(engine.repo())
            except GuigenError:
                screens = None
        return schemas.InfoResponse(
            chat_backend=config.chat.kind,
            embedding_backend=config.embedding.kind,
            image_backend=config.image.kind,
            index_loaded=bool(config.retrieval.index),
            repository_screens=screens,
            strategies=list(STRATEGY_NAMES))

    @app.post("/retrieve", response_model=schemas.RetrieveResponse)
    def retrieve(req: schemas.RetrieveRequest):
        try:
            ranked = retrieve_top_n(engine.index(), engine.embedding(),
                                    req.query, req.n)
        except (ConfigError, IndexMismatchError, OSError, ValueError) as exc:
            raise _error(409, exc)
        return schemas.RetrieveResponse(**ranked.to_dict())

    @app.post("/rerank", response_model=schemas.RerankResponse)
    def rerank(req: schemas.RerankRequest):
        if req.n < req.k:
            raise HTTPException(status_code=422, detail="need n >= k")
        try:
            result = pipeline_rerank(engine.chat(), engine.embedding(),
                                     engine.index(), engine.repo(), req.query,
                                     n=req.n, k=req.k, sample_count=req.samples,
                                     settings=config.generation_settings())
        except (ConfigError, IndexMismatchError, OSError, ValueError) as exc:
            raise _error(409, exc)
        except GuigenError as exc:
            raise _error(502, exc)
        return schemas.RerankResponse(
            query=result.reranked.query,
            items=[schemas.RerankedItemModel(**item.to_dict())
                   for item in result.reranked.items],
            judgments=[schemas.JudgmentModel(**j.to_dict())
                       for j in result.judgments],
            provenance=list(result.reranked.provenance),
            warnings=result.warnings)

    def _run_strategy(req: schemas.GenerateRequest) -> tuple[list[Prototype], bool]:
        nlr = Nlr(id=req.nlr_id, text=req.text)
        settings = config.generation_settings()
        provider = engine.chat()
        fallback = False
        if req.strategy == "zs":
            prototypes = [zs_instruct(provider, nlr, settings)]
        elif req.strategy == "zs-cot":
            prototypes = [zs_cot(provider, nlr, settings)]
        elif req.strategy == "pdgg":
            prototypes = [pdgg_sequential(provider, nlr, settings)]
        elif req.strategy == "pdgg-combined":
            prototypes = [pdgg_combined(provider, nlr, settings)]
        elif req.strategy == "scgg":
            result = scgg_loop(provider, nlr, req.k or 1, settings)
            if result.error:
                raise GuigenError(f"{result.failed_stage}: {result.error}")
            prototypes = result.prototypes
        elif req.strategy in ("ragg-direct", "ragg-extract"):
            k = req.k or config.retrieval.k
            result = pipeline_rerank(provider, engine.embedding(), engine.index(),
                                     engine.repo(), req.text,
                                     n=config.retrieval.n, k=k,
                                     sample_count=config.retrieval.samples,
                                     settings=settings)
            screens = [engine.repo().get(sid) for sid in result.reranked.ids()]
            runner = ragg_direct if req.strategy == "ragg-direct" else ragg_extract
            try:
                prototypes = [runner(provider, nlr, screens, k, engine.repo(),
                                     settings)]
            except FallbackSignal:
                prototypes = [zs_instruct(provider, nlr, settings)]
                fallback = True
        else:
            raise ConfigError(f"unknown strategy {req.strategy!r}")
        return prototypes, fallback

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        try:
            prototypes, fallback = _run_strategy(req)
        except ConfigError as exc:
            raise _error(422, exc)
        except OSError as exc:
            raise _error(409, exc)
        except GuigenError as exc:
            raise _error(502, exc)
        final = prototypes[-1]
        if req.with_content:
            image_provider = config.build_image_provider()
            try:
                final = content_pipeline(engine.chat(), image_provider, final,
                                         config.generation_settings()).prototype
            except GuigenError as exc:
                raise _error(502, exc)
        return schemas.GenerateResponse(
            nlr_id=req.nlr_id,
            strategy=req.strategy,
            html=final.html.text,
            iteration=final.iteration,
            fallback=fallback,
            llm_calls=len(final.trace.records),
            trace=[schemas.TraceRecordModel(
                stage=r.stage, fingerprint=r.fingerprint, seq=r.seq,
                prompt_tokens=r.response.usage.prompt_tokens,
                output_tokens=r.response.usage.output_tokens)
                for r in final.trace.records],
            iterations_html=[p.html.text for p in prototypes[:-1]])

    @app.post("/content", response_model=schemas.ContentResponse)
    def content(req: schemas.ContentRequest):
        try:
            html = extract_html(req.html)[0]
        except ExtractionError as exc:
            raise _error(422, exc)
        prototype = Prototype(html=html, strategy="content-only", iteration=0,
                              trace=GenerationTrace())
        try:
            result = content_pipeline(engine.chat(),
                                      config.build_image_provider(), prototype,
                                      config.generation_settings())
        except GuigenError as exc:
            raise _error(502, exc)
        report = validate_html(result.prototype.html.text)
        return schemas.ContentResponse(
            html=result.prototype.html.text,
            slots=[schemas.SlotModel(slot_id=s.slot_id, description=s.description,
                                     fallback=s.fallback) for s in result.slots],
            assets=[schemas.AssetModel(slot_id=a.slot_id, url=a.url,
                                       media_type=a.media_type, failed=a.failed)
                    for a in result.assets],
            validation_ok=report.ok,
            validation_issues=list(report.issues))

    @app.post("/extract-html", response_model=schemas.ExtractResponse)
    def extract(req: schemas.ExtractRequest):
        try:
            doc, report = extract_html(req.raw)
        except ExtractionError as exc:
            raise _error(422, exc)
        return schemas.ExtractResponse(html=doc.text, method=report.method)

    @app.post("/eval/rank", response_model=schemas.EvalRankResponse)
    def eval_rank(req: schemas.EvalRankRequest):
        gold = metrics.GoldStandard.from_dict(
            {"queries": {qid: {"text": q.text, "relevance": q.relevance}
                         for qid, q in req.gold.items()}})
        try:
            report = metrics.eval_ranking_suite(gold, req.runs, ks=req.ks)
        except ValueError as exc:
            raise _error(422, exc)
        return schemas.EvalRankResponse(**report.to_dict())

    @app.post("/eval/compare", response_model=schemas.EvalCompareResponse)
    def eval_compare(req: schemas.EvalCompareRequest):
        a = {v.item_id: v.value for v in req.a}
        b = {v.item_id: v.value for v in req.b}
        try:
            result = metrics.compare_paired(a, b, mode=req.mode)
        except ValueError as exc:
            raise _error(422, exc)
        return schemas.EvalCompareResponse(**result.to_dict())

    @app.post("/stats/agreement", response_model=schemas.AgreementResponse)
    def agreement(req: schemas.AgreementRequest):
        if not req.items:
            raise HTTPException(status_code=422, detail="no annotation items")
        matrix = []
        majority = {}
        for item in req.items:
            votes = item.votes
            if not votes:
                raise HTTPException(status_code=422,
                                    detail=f"item {item.item_id} has no votes")
            matrix.append([sum(votes), len(votes) - sum(votes)])
            majority[item.item_id] = metrics.majority_vote(votes)
        try:
            kappa = metrics.fleiss_kappa(matrix)
            return schemas.AgreementResponse(fleiss_kappa=kappa, majority=majority)
        except ValueError as exc:
            return schemas.AgreementResponse(kappa_error=str(exc),
                                             majority=majority)

    return app
