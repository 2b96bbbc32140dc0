"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class InfoResponse(BaseModel):
    chat_backend: str
    embedding_backend: str
    image_backend: str
    index_loaded: bool
    repository_screens: int | None = None
    strategies: list[str]


class RetrieveRequest(BaseModel):
    query: str = Field(min_length=1)
    n: int = Field(default=20, ge=1)


class RankedItemModel(BaseModel):
    screen_id: str
    score: float
    stage: str


class RetrieveResponse(BaseModel):
    query: str
    n: int
    items: list[RankedItemModel]


class RerankRequest(BaseModel):
    query: str = Field(min_length=1)
    n: int = Field(default=20, ge=1)
    k: int = Field(default=5, ge=1)
    samples: int = Field(default=3, ge=1)


class RerankedItemModel(BaseModel):
    screen_id: str
    fine_mean: float
    retrieval_score: float
    fine_std: float


class JudgmentModel(BaseModel):
    screen_id: str
    relevant: bool
    rationale: str


class RerankResponse(BaseModel):
    query: str
    items: list[RerankedItemModel]
    judgments: list[JudgmentModel]
    provenance: list[str]
    warnings: list[str]


class GenerateRequest(BaseModel):
    text: str = Field(min_length=1, description="the natural-language requirement")
    nlr_id: str = "adhoc"
    strategy: str = "zs"
    k: int | None = Field(default=None, ge=1)
    with_content: bool = False


class TraceRecordModel(BaseModel):
    stage: str
    fingerprint: str
    seq: int
    prompt_tokens: int
    output_tokens: int


class GenerateResponse(BaseModel):
    nlr_id: str
    strategy: str
    html: str
    iteration: int
    fallback: bool = False
    llm_calls: int
    trace: list[TraceRecordModel]
    iterations_html: list[str] = []


class ContentRequest(BaseModel):
    html: str = Field(min_length=1)


class AssetModel(BaseModel):
    slot_id: str
    url: str
    media_type: str
    failed: bool


class SlotModel(BaseModel):
    slot_id: str
    description: str
    fallback: bool


class ContentResponse(BaseModel):
    html: str
    slots: list[SlotModel]
    assets: list[AssetModel]
    validation_ok: bool
    validation_issues: list[str]


class ExtractRequest(BaseModel):
    raw: str = Field(min_length=1)


class ExtractResponse(BaseModel):
    html: str
    method: str


class GoldQueryModel(BaseModel):
    text: str = ""
    relevance: dict[str, int]


class EvalRankRequest(BaseModel):
    gold: dict[str, GoldQueryModel]
    runs: dict[str, list[str]]
    ks: list[int] = [3, 5, 7, 10]


class EvalRankResponse(BaseModel):
    metrics: dict[str, float]
    params: dict
    counts: dict[str, int]


class PairedValue(BaseModel):
    item_id: str
    value: float


class EvalCompareRequest(BaseModel):
    a: list[PairedValue]
    b: list[PairedValue]
    mode: str = "auto"


class EvalCompareResponse(BaseModel):
    statistic: float
    p_two_sided: float
    m: int
    mode: str
    w_plus: float
    w_minus: float


class AgreementItem(BaseModel):
    item_id: str
    votes: list[bool]


class AgreementRequest(BaseModel):
    items: list[AgreementItem]


class AgreementResponse(BaseModel):
    fleiss_kappa: float | None = None
    kappa_error: str | None = None
    majority: dict[str, bool]
