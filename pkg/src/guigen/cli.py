"""Command-line entry point.

Thin client over the core package: every subcommand wires providers from the
config file (flags override config values) and calls the corresponding
library operation. ``serve`` starts the HTTP service wrapping the same core.

Exit codes: 0 full success, 1 partial failure (details in the manifest),
2 fatal configuration/usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, metrics
from .config import RunConfig
from .content import content_pipeline
from .errors import ConfigError, FatalProviderError, GuigenError
from .htmlio import HtmlDocument, extract_html, validate_html
from .repository import (
    FilterRules,
    filter_pipeline,
    ingest_captions,
    ingest_screens,
    load_repository,
    save_repository,
)
from .rerank import full_list_rerank, pipeline_rerank
from .retrieval import RetrievalIndex, build_index, retrieve_top_n
from .runner import batch_generate, load_nlrs
from .strategies import STRATEGY_NAMES, Prototype
from .tracing import GenerationTrace

logger = logging.getLogger(__name__)


def _write_json(path: str, payload: dict) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("repo", "out_dir", "strategy", "k", "with_content",
                 "temperature", "concurrency"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "mock_script", None):
        config.chat.script = args.mock_script
        config.chat.kind = "mock"
    if overrides:
        config = replace(config, **overrides)
    retrieval = config.retrieval
    for name in ("index", "n", "samples"):
        value = getattr(args, name, None)
        if value is not None:
            retrieval = replace(retrieval, **{name: value})
    config.retrieval = retrieval
    return config


def _cmd_ingest(args) -> int:
    repo, screen_report = ingest_screens(args.screens)
    caption_report = None
    if args.captions:
        repo, caption_report = ingest_captions(args.captions, repo)
    rules = FilterRules(
        min_component_types=args.filter_min_types,
        excluded_flags=frozenset(f for f in (args.filter_flags or "").split(",") if f),
        require_caption=args.require_caption)
    repo, filter_report = filter_pipeline(repo, rules)
    save_repository(repo, args.repo)
    summary = {
        "screens": {"read": screen_report.read, "ingested": screen_report.ingested,
                    "skipped": screen_report.skipped},
        "filter": {"input": filter_report.input_count,
                   "retained": filter_report.retained_count,
                   "per_rule_exclusions": filter_report.per_rule_exclusions},
        "repository": args.repo,
    }
    if caption_report is not None:
        summary["captions"] = {"read": caption_report.read,
                               "attached": caption_report.ingested,
                               "dropped_unknown": caption_report.dropped_captions}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_index(args) -> int:
    config = _load_config(args)
    repo = load_repository(args.repo or config.repo)
    provider = config.build_embedding_provider()
    index = build_index(repo, provider)
    index.save(args.out)
    print(f"indexed {len(index)} caption entries from {len(repo)} screens "
          f"-> {args.out}")
    return 0


def _cmd_retrieve(args) -> int:
    config = _load_config(args)
    index = RetrievalIndex.load(config.retrieval.index)
    provider = config.build_embedding_provider()
    ranked = retrieve_top_n(index, provider, args.query, config.retrieval.n)
    payload = ranked.to_dict()
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_rerank(args) -> int:
    config = _load_config(args)
    index = RetrievalIndex.load(config.retrieval.index)
    repo = load_repository(args.repo or config.repo)
    chat = config.build_chat_provider()
    embedding = config.build_embedding_provider()
    settings = config.generation_settings()
    if args.mode == "full-list":
        ranked = retrieve_top_n(index, embedding, args.query, config.retrieval.n)
        screens = [repo.get(screen_id) for screen_id in ranked.ids()]
        order = full_list_rerank(chat, args.query, screens, repo, settings)
        payload = {"query": args.query, "mode": "full-list", "order": order,
                   "retrieved": ranked.to_dict()}
    else:
        result = pipeline_rerank(chat, embedding, index, repo, args.query,
                                 n=config.retrieval.n, k=args.k,
                                 sample_count=config.retrieval.samples,
                                 settings=settings)
        payload = result.to_dict()
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_generate(args) -> int:
    config = _load_config(args)
    if config.strategy not in STRATEGY_NAMES:
        raise ConfigError(f"--strategy must be one of {', '.join(STRATEGY_NAMES)}")
    if config.strategy.startswith("ragg"):
        if not config.retrieval.index:
            raise ConfigError(f"strategy {config.strategy} requires --index")
        if not config.repo:
            raise ConfigError(f"strategy {config.strategy} requires --repo "
                              "(screenshots live in the repository)")
    if not config.out_dir:
        raise ConfigError("--out is required")
    nlrs = load_nlrs(args.nlr_file)
    manifest = batch_generate(config, nlrs)
    ok = sum(1 for o in manifest.outcomes if o.status != "error")
    print(f"{ok}/{len(manifest.outcomes)} NLRs succeeded; manifest at "
          f"{Path(config.out_dir) / 'manifest.json'}")
    return 0 if manifest.failures == 0 else 1


def _cmd_content(args) -> int:
    config = _load_config(args)
    if args.image_provider:
        config.image.kind = args.image_provider
    raw = Path(args.html).read_text(encoding="utf-8")
    html = extract_html(raw)[0]
    prototype = Prototype(html=html, strategy="content-only", iteration=0,
                          trace=GenerationTrace())
    chat = config.build_chat_provider()
    out_dir = Path(args.out)
    image_provider = config.build_image_provider(asset_dir=out_dir / "assets")
    result = content_pipeline(chat, image_provider, prototype,
                              config.generation_settings())
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "prototype.html").write_text(result.prototype.html.text,
                                            encoding="utf-8")
    report = validate_html(result.prototype.html.text)
    _write_json(str(out_dir / "content.json"), {
        "slots": [{"slot_id": s.slot_id, "description": s.description,
                   "fallback": s.fallback} for s in result.slots],
        "assets": [{"slot_id": a.slot_id, "url": a.url,
                    "media_type": a.media_type, "failed": a.failed}
                   for a in result.assets],
        "validation": {"ok": report.ok, "issues": list(report.issues)},
    })
    print(f"content written to {out_dir}")
    return 0


def _cmd_eval_rank(args) -> int:
    gold = metrics.GoldStandard.load(args.gold)
    runs = metrics.load_runs(args.runs)
    ks = [int(k) for k in args.ks.split(",") if k]
    report = metrics.eval_ranking_suite(gold, runs, ks=ks or metrics.DEFAULT_KS)
    _write_json(args.out, report.to_dict())
    print(json.dumps(report.to_dict()["metrics"], indent=2, sort_keys=True))
    return 0


def _cmd_eval_compare(args) -> int:
    if args.test != "wilcoxon":
        raise ConfigError(f"unknown test {args.test!r}")
    a = metrics.load_score_file(args.a)
    b = metrics.load_score_file(args.b)
    result = metrics.compare_paired(a, b, mode=args.mode)
    _write_json(args.out, result.to_dict())
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_stats(args) -> int:
    items = []
    for line in Path(args.annotations).read_text(encoding="utf-8").splitlines():
        if line.strip():
            items.append(json.loads(line))
    if not items:
        raise ConfigError(f"no annotation records in {args.annotations}")
    matrix = []
    majorities = {}
    for item in items:
        votes = [bool(v) for v in item["votes"]]
        matrix.append([sum(votes), len(votes) - sum(votes)])
        majorities[str(item["item_id"])] = metrics.majority_vote(votes)
    payload: dict = {"items": len(items), "majority": majorities}
    try:
        payload["fleiss_kappa"] = metrics.fleiss_kappa(matrix)
    except ValueError as exc:
        payload["fleiss_kappa_error"] = str(exc)
    if args.predictions:
        predicted = {item_id for item_id, value
                     in metrics.load_score_file(args.predictions).items()
                     if value > 0}
        truth = {item_id for item_id, vote in majorities.items() if vote}
        p, r, f1 = metrics.precision_recall_f1(predicted, truth)
        payload["precision"] = p
        payload["recall"] = r
        payload["f1"] = f1
    _write_json(args.out, payload)
    print(json.dumps({k: v for k, v in payload.items() if k != "majority"},
                     indent=2, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    config = _load_config(args)
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guigen",
        description="GUI prototype generation, retrieval re-ranking and "
                    "evaluation harness")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--mock-script",
                        help="shortcut: use the mock chat backend with this script")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a repository archive from datasets")
    p.add_argument("--screens", required=True, help="line-JSON screen records")
    p.add_argument("--captions", help="line-JSON caption records")
    p.add_argument("--repo", required=True, help="output archive path")
    p.add_argument("--filter-min-types", type=int, default=0)
    p.add_argument("--filter-flags", help="comma-separated flags to exclude")
    p.add_argument("--require-caption", action="store_true", default=False)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("index", help="build the caption embedding index")
    p.add_argument("--repo", help="repository archive")
    p.add_argument("--out", required=True, help="index output path")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="top-n retrieval for one query")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("rerank", help="LLM re-ranking of retrieval results")
    p.add_argument("--index", required=True)
    p.add_argument("--repo")
    p.add_argument("--query", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--samples", type=int)
    p.add_argument("--mode", choices=["pipeline", "full-list"], default="pipeline")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("generate", help="generate prototypes for a batch of NLRs")
    p.add_argument("--strategy", required=True, dest="strategy",
                   choices=list(STRATEGY_NAMES))
    p.add_argument("--nlr-file", required=True,
                   help="line-JSON {id, text} requirements")
    p.add_argument("--k", type=int, help="loop count (scgg) or example count (ragg)")
    p.add_argument("--index")
    p.add_argument("--repo")
    p.add_argument("--n", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--with-content", action="store_true", default=None)
    p.add_argument("--temperature", type=float)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--out", required=True, dest="out_dir")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("content", help="run the content pipeline on one document")
    p.add_argument("--html", required=True)
    p.add_argument("--image-provider", choices=["stub", "live"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_content)

    p = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = p.add_subparsers(dest="eval_command", required=True)
    pr = eval_sub.add_parser("rank", help="ranking metrics against a gold standard")
    pr.add_argument("--gold", required=True)
    pr.add_argument("--runs", required=True)
    pr.add_argument("--ks", default="3,5,7,10")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=_cmd_eval_rank)
    pc = eval_sub.add_parser("compare", help="paired significance test")
    pc.add_argument("--a", required=True, help="line-JSON {item_id, value}")
    pc.add_argument("--b", required=True)
    pc.add_argument("--test", default="wilcoxon")
    pc.add_argument("--mode", choices=["auto", "exact", "approx"], default="auto")
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=_cmd_eval_compare)

    p = sub.add_parser("stats", help="agreement statistics over annotations")
    p.add_argument("--annotations", required=True,
                   help="line-JSON {item_id, votes: [bool, ...]}")
    p.add_argument("--predictions",
                   help="line-JSON {item_id, value} binary predictions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FatalProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuigenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
