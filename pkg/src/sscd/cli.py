"""Command-line front end: detect, eval, bench, and embed-cache.

Every flag has a matching flat key in the JSON config file; precedence is
environment (SSCD_<KEY>) < config file < explicit flag.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import traceback
from pathlib import Path

import click

from .embed import EmbedderConfig, embed_batch, save_embeddings
from .errors import SscdError
from .extract import (
    LANGUAGES,
    TOKENIZER_MODES,
    ExtractionConfig,
    dump_fragments,
    extract_fragments,
)
from .metrics import (
    EvalReport,
    load_detected_report,
    load_ground_truth,
    recall,
    recall_by_type,
)
from .pipeline import RunConfig, bench, detect
from .search import SEARCH_TYPES, SearchParams

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

_DEFAULTS = {
    "language": "c",
    "min_loc": 0,
    "strip_comments": True,
    "tokenizer_mode": "normalized",
    "provider": "hash",
    "model": "hash-v1",
    "dimension": 768,
    "code_length": 512,
    "endpoint": None,
    "batch_size": 32,
    "search_type": "exact",
    "top_n": 10,
    "similarity": 0.95,
    "hnsw_m": 32,
    "hnsw_efc": 200,
    "hnsw_efs": 120,
    "seed": 0,
    "workers": 1,
    "out": ".",
}

_ENV_PREFIX = "SSCD_"


class _Settings:
    """Flag > config file > environment > built-in default."""

    def __init__(self, config_path: str | None):
        self.file_cfg: dict = {}
        if config_path:
            try:
                self.file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except FileNotFoundError as exc:
                raise SscdError(f"config file not found: {config_path}") from exc
            except json.JSONDecodeError as exc:
                raise SscdError(f"config file is not valid JSON: {exc}") from exc
            if not isinstance(self.file_cfg, dict):
                raise SscdError("config file must hold a flat JSON object")
            unknown = set(self.file_cfg) - set(_DEFAULTS)
            if unknown:
                raise SscdError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def get(self, key: str, flag_value):
        if flag_value is not None:
            return flag_value
        if key in self.file_cfg:
            return self._coerce(key, self.file_cfg[key])
        env = os.environ.get(_ENV_PREFIX + key.upper())
        if env is not None:
            return self._coerce(key, env)
        return _DEFAULTS[key]

    @staticmethod
    def _coerce(key: str, value):
        default = _DEFAULTS[key]
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            return str(value).strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value if value is None or isinstance(value, str) else str(value)


def _run_config(source: str, settings: _Settings, opts: dict) -> RunConfig:
    extraction = ExtractionConfig(
        min_loc=settings.get("min_loc", opts.get("min_loc")),
        strip_comments=settings.get("strip_comments", opts.get("strip_comments")),
        language=settings.get("language", opts.get("language")),
        tokenizer_mode=settings.get("tokenizer_mode", opts.get("tokenizer_mode")),
    )
    embedder = EmbedderConfig(
        provider=settings.get("provider", opts.get("provider")),
        dimension=settings.get("dimension", opts.get("dimension")),
        code_length=settings.get("code_length", opts.get("code_length")),
        model_name=settings.get("model", opts.get("model")),
        service_endpoint=settings.get("endpoint", opts.get("endpoint")),
        batch_size=settings.get("batch_size", opts.get("batch_size")),
    )
    search = SearchParams(
        search_type=settings.get("search_type", opts.get("search_type")),
        k=settings.get("top_n", opts.get("top_n")),
        ef_search=max(
            settings.get("hnsw_efs", opts.get("hnsw_efs")),
            settings.get("top_n", opts.get("top_n")),
        ),
        similarity_floor=settings.get("similarity", opts.get("similarity")),
    )
    return RunConfig(
        source=Path(source),
        extraction=extraction,
        embedder=embedder,
        search=search,
        hnsw_m=settings.get("hnsw_m", opts.get("hnsw_m")),
        hnsw_ef_construction=settings.get("hnsw_efc", opts.get("hnsw_efc")),
        seed=settings.get("seed", opts.get("seed")),
        workers=settings.get("workers", opts.get("workers")),
        output_dir=Path(settings.get("out", opts.get("out"))),
    )


def _extraction_options(fn):
    fn = click.option("--language", type=click.Choice(LANGUAGES), default=None,
                      help="Source language, or 'manifest' for JSONL input.")(fn)
    fn = click.option("--min-loc", type=int, default=None,
                      help="Minimum non-blank, non-comment lines per fragment.")(fn)
    fn = click.option("--strip-comments/--keep-comments", "strip_comments",
                      default=None, help="Remove comments from method bodies.")(fn)
    fn = click.option("--tokenizer-mode", type=click.Choice(TOKENIZER_MODES),
                      default=None, help="raw or normalized token stream.")(fn)
    return fn


def _embedder_options(fn):
    fn = click.option("--provider", type=click.Choice(("hash", "remote")), default=None)(fn)
    fn = click.option("--model", default=None, help="Model label for reporting.")(fn)
    fn = click.option("--dimension", type=int, default=None)(fn)
    fn = click.option("--code-length", type=int, default=None,
                      help="Maximum tokens consumed per fragment.")(fn)
    fn = click.option("--endpoint", default=None, help="Remote embedding service URL.")(fn)
    fn = click.option("--batch-size", type=int, default=None)(fn)
    return fn


def _search_options(fn):
    fn = click.option("--search-type", type=click.Choice(SEARCH_TYPES), default=None)(fn)
    fn = click.option("--top-n", type=int, default=None, help="Candidates per query.")(fn)
    fn = click.option("--similarity", type=float, default=None,
                      help="Cosine floor below which candidates drop.")(fn)
    fn = click.option("--hnsw-m", type=int, default=None)(fn)
    fn = click.option("--hnsw-efc", type=int, default=None)(fn)
    fn = click.option("--hnsw-efs", type=int, default=None)(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose: bool) -> None:
    """Embedding-based code clone detection."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("detect")
@click.argument("source", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Flat JSON config file.")
@_extraction_options
@_embedder_options
@_search_options
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", default=None, help="Output directory.")
@click.option("--embeddings-cache", type=click.Path(exists=True), default=None,
              help="Load cached embeddings instead of running inference.")
@click.option("--save-embeddings", "save_embeddings_to", type=click.Path(),
              default=None, help="Write the computed embeddings to this cache file.")
def cmd_detect(source, config_path, embeddings_cache, save_embeddings_to, **opts):
    """Find clone pairs in SOURCE (a source tree, or a manifest file)."""
    settings = _Settings(config_path)
    config = _run_config(source, settings, opts)
    if embeddings_cache:
        config.embeddings_cache = Path(embeddings_cache)
    if save_embeddings_to:
        config.save_embeddings_to = Path(save_embeddings_to)
    result = detect(config)
    click.echo(
        f"{len(result.fragments)} fragments, {len(result.pairs)} clone pairs "
        f"-> {result.report_csv}"
    )
    click.echo(
        "timing (ms): "
        + " ".join(f"{k}={v:.1f}" for k, v in result.timing.as_dict().items())
    )


@cli.command("eval")
@click.option("--report", "report_path", type=click.Path(exists=True), required=True,
              help="Detection report CSV.")
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True,
              help="Ground-truth pairs CSV.")
@click.option("--overlap", type=float, default=0.7, show_default=True,
              help="Per-fragment line-coverage threshold for a match.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the evaluation report JSON here.")
def cmd_eval(report_path, truth_path, overlap, out_path):
    """Score a detection report against known clone pairs."""
    detected = load_detected_report(report_path)
    truth = load_ground_truth(truth_path)
    if not truth:
        raise SscdError(f"truth file {truth_path} holds no pairs")
    report = EvalReport(
        recall_overall=100.0 * recall(detected, truth, overlap),
        recall_by_type={
            ct: 100.0 * value
            for ct, value in recall_by_type(detected, truth, overlap).items()
        },
    )
    click.echo(report.render(), nl=False)
    if out_path:
        report.to_json(out_path)
        click.echo(f"wrote {out_path}")


@cli.command("bench")
@click.option("--n", type=int, default=10000, show_default=True)
@click.option("--dimension", type=int, default=768, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--hnsw-m", type=int, default=32, show_default=True)
@click.option("--hnsw-efc", type=int, default=200, show_default=True)
@click.option("--hnsw-efs", type=int, default=120, show_default=True)
@click.option("--queries", type=int, default=None,
              help="Query only this many vectors (default: all).")
def cmd_bench(n, dimension, seed, k, hnsw_m, hnsw_efc, hnsw_efs, queries):
    """Search-quality and timing comparison on seeded random vectors."""
    result = bench(
        n,
        dimension=dimension,
        seed=seed,
        k=k,
        hnsw_m=hnsw_m,
        hnsw_ef_construction=hnsw_efc,
        ef_search=hnsw_efs,
        queries=queries,
    )
    click.echo(result.render(), nl=False)


@cli.command("embed-cache")
@click.argument("source", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(), default=None)
@_extraction_options
@_embedder_options
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Cache file to write.")
@click.option("--dump-fragments", "dump_path", type=click.Path(), default=None,
              help="Also dump extracted fragments as JSONL.")
def cmd_embed_cache(source, config_path, out_path, dump_path, **opts):
    """Extract SOURCE and persist its embeddings for later detect runs."""
    settings = _Settings(config_path)
    opts.setdefault("search_type", None)
    opts.setdefault("top_n", None)
    opts.setdefault("similarity", None)
    opts.setdefault("hnsw_m", None)
    opts.setdefault("hnsw_efc", None)
    opts.setdefault("hnsw_efs", None)
    opts.setdefault("seed", None)
    opts.setdefault("out", None)
    config = _run_config(source, settings, opts)
    fragments = extract_fragments(config.source, config.extraction, workers=config.workers)
    vectors = embed_batch(fragments, config.embedder)
    save_embeddings(out_path, vectors)
    if dump_path:
        dump_fragments(fragments, dump_path)
    click.echo(f"cached {len(vectors)} embeddings -> {out_path}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit codes: 0 ok, 1 user error,
    2 internal error."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return EXIT_OK if exc.exit_code == 0 else EXIT_USER_ERROR
    except click.Abort:
        return EXIT_USER_ERROR
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_USER_ERROR
    except (SscdError, FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
