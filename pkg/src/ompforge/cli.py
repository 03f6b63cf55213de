"""Command-line pipeline: preprocess, stats, split, train-lm, generate,
chain, eval, perplexity.

Configuration comes from defaults, an optional TOML file, and flags, in
rising precedence; ``--dry-run`` prints the resolved configuration and
does nothing else. Exit codes: 0 success, 1 runtime error (one
machine-parsable line on stderr), 2 unreadable input, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import backends, chain, corpus, evaluate
from .errors import OmpForgeError

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class InputUnreadable(Exception):
    pass


@dataclass
class Config:
    """Effective settings for one command run.

    Defaults follow the data-processing conventions this pipeline is built
    around: 10% test fraction, 100-token / 1 MiB size filter, 256-stage
    chain limit.
    """

    input: str | None = None
    samples: str | None = None
    shards: str | None = None
    max_tokens: int = 100
    max_bytes: int = 1_048_576
    fraction: float = 0.10
    seed: int = 0
    backend: str = "ngram"
    model_path: str | None = None
    base_url: str | None = None
    remote_model: str | None = None
    timeout: float = 60.0
    concurrency: int = 4
    script: str | None = None
    n_chain: int = 256
    retain_controls: bool = False
    top_k: int = 15
    clause: str | None = None
    filters: str = ",".join(evaluate.DEFAULT_CHAIN_FILTERS)
    subtest: int = 1
    mode: str = "basic"
    order: int = 4
    k: float = 1.0
    backoff: float = 0.4
    jobs: int | None = None

    # replaced by resolve_config with the fields set via file or flag
    explicit = frozenset()


# TOML sections and the Config fields their keys map to.
_CONFIG_SCHEMA = {
    "corpus": {"input": "input", "samples": "samples", "shards": "shards"},
    "filter": {"max_tokens": "max_tokens", "max_bytes": "max_bytes"},
    "split": {"fraction": "fraction", "seed": "seed"},
    "backend": {"kind": "backend", "model_path": "model_path",
                "base_url": "base_url", "model": "remote_model",
                "timeout": "timeout", "concurrency": "concurrency",
                "script": "script"},
    "chain": {"n_chain": "n_chain", "retain_controls": "retain_controls"},
    "train": {"order": "order", "k": "k", "backoff": "backoff"},
    "eval": {"top_k": "top_k", "clause": "clause", "filters": "filters",
             "subtest": "subtest", "mode": "mode"},
}
_TOP_LEVEL_KEYS = {"jobs": "jobs", "seed": "seed"}

_INT_FIELDS = {"max_tokens", "max_bytes", "seed", "concurrency", "n_chain",
               "top_k", "subtest", "order", "jobs"}
_FLOAT_FIELDS = {"fraction", "timeout", "k", "backoff"}
_BOOL_FIELDS = {"retain_controls"}


def _check_value(path: str, field: str, value):
    if field in _INT_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise UsageError(f"config file {path}: {field} must be an integer")
        return value
    if field in _FLOAT_FIELDS:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise UsageError(f"config file {path}: {field} must be a number")
        return float(value)
    if field in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise UsageError(f"config file {path}: {field} must be a boolean")
        return value
    if field == "filters" and isinstance(value, list):
        if not all(isinstance(item, str) for item in value):
            raise UsageError(f"config file {path}: filters must be strings")
        return ",".join(value)
    if not isinstance(value, str):
        raise UsageError(f"config file {path}: {field} must be a string")
    return value


def load_config_file(path: str) -> dict:
    """Parse a TOML config file into Config field assignments.

    Unknown sections or keys are rejected outright so a typo cannot
    silently fall back to a default; values are type-checked here rather
    than failing deep inside a pipeline stage.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise InputUnreadable(f"config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from exc
    flat: dict = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            section = _CONFIG_SCHEMA.get(key)
            if section is None:
                raise UsageError(f"config file {path}: unknown section [{key}]")
            for sub, subval in value.items():
                if sub not in section:
                    raise UsageError(
                        f"config file {path}: unknown key {key}.{sub}")
                field = section[sub]
                flat[field] = _check_value(path, field, subval)
        elif key in _TOP_LEVEL_KEYS:
            field = _TOP_LEVEL_KEYS[key]
            flat[field] = _check_value(path, field, value)
        else:
            raise UsageError(f"config file {path}: unknown key {key}")
    return flat


def resolve_config(args: argparse.Namespace) -> Config:
    """Merge defaults, config file, and flags (flags win).

    ``cfg.explicit`` records which fields were set by file or flag so task
    defaults only apply to untouched settings.
    """
    cfg = Config()
    explicit: set[str] = set()
    if getattr(args, "config", None):
        for field, value in load_config_file(args.config).items():
            setattr(cfg, field, value)
            explicit.add(field)
    for field in (f.name for f in dataclasses.fields(Config)):
        value = getattr(args, field, None)
        if value is not None:
            setattr(cfg, field, value)
            explicit.add(field)
    cfg.explicit = explicit
    return cfg


def _echo_config(cfg: Config, command: str) -> dict:
    out = {"command": command}
    out.update(dataclasses.asdict(cfg))
    return out


def _echo_to_stderr(cfg: Config, command: str) -> None:
    print(f"config: {json.dumps(_echo_config(cfg, command), sort_keys=True)}",
          file=sys.stderr)


def _maybe_dry_run(args, cfg: Config, command: str) -> bool:
    if getattr(args, "dry_run", False):
        print(json.dumps(_echo_config(cfg, command), sort_keys=True, indent=2))
        return True
    return False


def _parallel_map(fn, items, jobs):
    items = list(items)
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _make_backend(cfg: Config):
    if cfg.backend == "ngram":
        if not cfg.model_path:
            raise UsageError("ngram backend requires --model")
        model = backends.load_model(cfg.model_path)
        return backends.NGramBackend(model, seed=cfg.seed)
    if cfg.backend == "remote":
        if not cfg.base_url or not cfg.remote_model:
            raise UsageError("remote backend requires --base-url and "
                             "--remote-model")
        return backends.RemoteBackend(cfg.base_url, cfg.remote_model,
                                      timeout=cfg.timeout,
                                      max_in_flight=cfg.concurrency)
    if cfg.backend == "scripted":
        if not cfg.script:
            raise UsageError("scripted backend requires --script")
        with open(cfg.script, encoding="utf-8") as fh:
            replies = [json.loads(line) for line in fh if line.strip()]
        return backends.ScriptedBackend(replies)
    raise UsageError(f"unknown backend {cfg.backend!r}")


# -- preprocess ---------------------------------------------------------------

def _language_for(path: str) -> str:
    return "cpp" if path.endswith((".cc", ".cpp", ".hpp")) else "c"


def _collect_inputs(input_path: str) -> list[tuple[str, str, str | None]]:
    """(path, language, repo) triples from a directory tree or manifest."""
    p = Path(input_path)
    if not p.exists():
        raise InputUnreadable(f"input path does not exist: {input_path}")
    entries: list[tuple[str, str, str | None]] = []
    if p.is_dir():
        for child in sorted(p.rglob("*")):
            if child.is_file() and child.suffix in corpus.SOURCE_SUFFIXES:
                entries.append((str(child), _language_for(child.name), None))
        if not entries:
            raise InputUnreadable(f"no C/C++ sources under: {input_path}")
        return entries
    try:
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                entries.append((obj["path"],
                                obj.get("lang") or _language_for(obj["path"]),
                                obj.get("repo")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputUnreadable(f"manifest {input_path}: {exc}") from exc
    if not entries:
        raise InputUnreadable(f"manifest is empty: {input_path}")
    entries.sort(key=lambda entry: entry[0])
    return entries


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    if _maybe_dry_run(args, cfg, "preprocess"):
        return 0
    if not cfg.input:
        raise UsageError("preprocess requires --input")
    if not cfg.samples or not cfg.shards:
        raise UsageError("preprocess requires --samples and --shards outputs")
    entries = _collect_inputs(cfg.input)

    warnings_log = args.warnings_log or f"{cfg.shards}.warnings.log"
    warn_handler = logging.FileHandler(warnings_log, mode="w",
                                       encoding="utf-8")
    warn_handler.setLevel(logging.WARNING)
    logging.getLogger("ompforge").addHandler(warn_handler)

    outputs = [cfg.samples, cfg.shards]
    try:
        def extract_one(entry):
            path, language, repo = entry
            try:
                text = corpus.read_source_file(path)
            except OSError as exc:
                raise InputUnreadable(f"cannot read {path}: {exc}") from exc
            return corpus.extract_omp_regions(
                corpus.strip_comments(text), path=path, language=language,
                repo=repo)

        per_file = _parallel_map(extract_one, entries, cfg.jobs)
        kept_samples = []
        kept_texts = []
        dropped_tokens = 0
        dropped_bytes = 0
        for samples in per_file:
            for sample in samples:
                text = corpus.reposition(sample)
                if len(text.text.encode("utf-8")) > cfg.max_bytes:
                    dropped_bytes += 1
                    continue
                if not corpus.size_filter(text, cfg.max_tokens, cfg.max_bytes):
                    dropped_tokens += 1
                    continue
                kept_samples.append(sample)
                kept_texts.append(text)
        corpus.write_samples(kept_samples, cfg.samples)
        corpus.write_shards(kept_texts, cfg.shards)
    except BaseException:
        for out in outputs:
            if out and os.path.exists(out):
                os.unlink(out)
        raise
    finally:
        if warn_handler is not None:
            logging.getLogger("ompforge").removeHandler(warn_handler)
            warn_handler.close()

    total = len(kept_samples) + dropped_tokens + dropped_bytes
    print(f"files: {len(entries)}")
    print(f"samples: {total} kept: {len(kept_samples)} "
          f"dropped-token-filter: {dropped_tokens} "
          f"dropped-byte-filter: {dropped_bytes}")
    _echo_to_stderr(cfg, "preprocess")
    return 0


# -- stats / split / train ----------------------------------------------------

def cmd_stats(args) -> int:
    cfg = resolve_config(args)
    if _maybe_dry_run(args, cfg, "stats"):
        return 0
    if not cfg.samples:
        raise UsageError("stats requires --samples")
    samples = _read_samples_checked(cfg.samples)
    ranked = corpus.pragma_frequency((s.pragma for s in samples), top=cfg.top_k)
    for pragma, count in ranked:
        print(f"{count:>8}  {pragma}")
    _echo_to_stderr(cfg, "stats")
    return 0


def cmd_split(args) -> int:
    cfg = resolve_config(args)
    if _maybe_dry_run(args, cfg, "split"):
        return 0
    if not cfg.shards or not args.train or not args.test:
        raise UsageError("split requires --shards, --train, --test")
    texts = _read_shards_checked(cfg.shards)
    spec = corpus.SplitSpec(test_fraction=cfg.fraction, seed=cfg.seed)
    train, test = corpus.split(texts, spec)
    corpus.write_shards(train, args.train)
    corpus.write_shards(test, args.test)
    print(f"train: {len(train)} test: {len(test)} seed: {cfg.seed} "
          f"fraction: {cfg.fraction}")
    _echo_to_stderr(cfg, "split")
    return 0


def cmd_train_lm(args) -> int:
    cfg = resolve_config(args)
    if _maybe_dry_run(args, cfg, "train-lm"):
        return 0
    if not cfg.shards or not cfg.model_path:
        raise UsageError("train-lm requires --shards and --model")
    texts = _read_shards_checked(cfg.shards)
    model = backends.train_ngram(texts, order=cfg.order, k=cfg.k,
                                 backoff=cfg.backoff)
    backends.save_model(model, cfg.model_path)
    print(f"trained order-{cfg.order} model on {len(texts)} texts "
          f"(vocab {model.vocab_size}) -> {cfg.model_path}")
    _echo_to_stderr(cfg, "train-lm")
    return 0


# -- generate / chain ---------------------------------------------------------

def _samples_from_shards(texts):
    return [corpus.training_text_to_sample(tt) for tt in texts]


def cmd_generate(args, forced_mode: str | None = None) -> int:
    cfg = resolve_config(args)
    if forced_mode:
        cfg.mode = forced_mode
    if _maybe_dry_run(args, cfg, "generate"):
        return 0
    if not args.test:
        raise UsageError("generate requires --test shards")
    backend = _make_backend(cfg)
    samples = _samples_from_shards(_read_shards_checked(args.test))
    results = chain.generate_batch(backend, samples, mode=cfg.mode,
                                   n_chain=cfg.n_chain,
                                   retain_controls=cfg.retain_controls)
    out = args.output
    lines = []
    for res in results:
        obj = {"id": res.id, "pragma": res.pragma}
        if res.error:
            obj["error"] = res.error
        lines.append(json.dumps(obj, sort_keys=True))
    if out:
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            print(line)
    if args.traces and cfg.mode == "chain":
        with open(args.traces, "w", encoding="utf-8") as fh:
            for res in results:
                if res.trace is not None:
                    fh.write(json.dumps(res.trace.to_dict(res.id),
                                        sort_keys=True) + "\n")
    failed = sum(1 for r in results if r.error)
    print(f"generated: {len(results)} failed: {failed} mode: {cfg.mode}",
          file=sys.stderr)
    _echo_to_stderr(cfg, "generate")
    return 0


def cmd_chain(args) -> int:
    return cmd_generate(args, forced_mode="chain")


# -- eval / perplexity --------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    if args.task == "clause" and "n_chain" not in cfg.explicit:
        cfg.n_chain = 2
    if _maybe_dry_run(args, cfg, "eval"):
        return 0
    if not args.test:
        raise UsageError("eval requires --test shards")
    backend = _make_backend(cfg)
    samples = _samples_from_shards(_read_shards_checked(args.test))
    train_ids = None
    if args.train:
        train_ids = {tt.id for tt in _read_shards_checked(args.train) if tt.id}
    # a scripted backend consumes its queue in request order, so it only
    # behaves deterministically single-threaded
    jobs = 1 if cfg.backend == "scripted" else cfg.jobs
    echo = _echo_config(cfg, "eval")
    if args.task == "generation":
        report = evaluate.eval_generation(backend, samples, mode=cfg.mode,
                                          top_k=cfg.top_k, n_chain=cfg.n_chain,
                                          train_ids=train_ids, config=echo,
                                          jobs=jobs)
    elif args.task == "chain-vs-basic":
        filters = tuple(f.strip() for f in cfg.filters.split(",") if f.strip())
        report = evaluate.eval_chain_vs_basic(backend, samples,
                                              filters=filters,
                                              n_chain=cfg.n_chain, config=echo,
                                              jobs=jobs)
    elif args.task == "clause":
        if not cfg.clause:
            raise UsageError("eval --task clause requires --clause")
        report = evaluate.eval_clause_task(backend, samples, cfg.clause,
                                           subtest=cfg.subtest, mode=cfg.mode,
                                           n_chain=cfg.n_chain, config=echo,
                                           jobs=jobs)
    else:
        raise UsageError(f"unknown eval task {args.task!r}")
    print(report.render_table())
    _echo_to_stderr(cfg, "eval")
    if args.report_json:
        Path(args.report_json).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    return 0


def cmd_perplexity(args) -> int:
    cfg = resolve_config(args)
    if _maybe_dry_run(args, cfg, "perplexity"):
        return 0
    if cfg.backend != "ngram":
        raise UsageError("perplexity requires the ngram backend")
    if not cfg.model_path or not args.test:
        raise UsageError("perplexity requires --model and --test")
    model = backends.load_model(cfg.model_path)
    texts = _read_shards_checked(args.test)
    result = evaluate.perplexity(model, texts)
    print(f"perplexity: {result.perplexity:.6f} tokens: {result.token_count}")
    _echo_to_stderr(cfg, "perplexity")
    return 0


def _read_shards_checked(path):
    try:
        return corpus.read_shards(path)
    except OSError as exc:
        raise InputUnreadable(f"cannot read shards {path}: {exc}") from exc


def _read_samples_checked(path):
    try:
        return corpus.read_samples(path)
    except OSError as exc:
        raise InputUnreadable(f"cannot read samples {path}: {exc}") from exc


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(64, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved config and exit")


def _add_backend_flags(p):
    p.add_argument("--backend", choices=("ngram", "remote", "scripted"),
                   default=None)
    p.add_argument("--model", dest="model_path", default=None,
                   help="n-gram model file")
    p.add_argument("--base-url", dest="base_url", default=None)
    p.add_argument("--remote-model", dest="remote_model", default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--script", default=None,
                   help="JSONL file of scripted replies")


def build_parser() -> _Parser:
    parser = _Parser(prog="ompforge",
                     description="OpenMP pragma generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("preprocess", help="sources -> samples and shards")
    _add_common(p)
    p.add_argument("--input", default=None,
                   help="source directory or JSONL manifest")
    p.add_argument("--samples", default=None, help="output corpus JSONL")
    p.add_argument("--shards", default=None, help="output training-text JSONL")
    p.add_argument("--warnings-log", default=None)
    p.add_argument("--max-tokens", dest="max_tokens", type=int, default=None)
    p.add_argument("--max-bytes", dest="max_bytes", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="pragma frequency histogram")
    _add_common(p)
    p.add_argument("--samples", default=None, help="corpus JSONL")
    p.add_argument("--top", dest="top_k", type=int, default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="deterministic train/test split")
    _add_common(p)
    p.add_argument("--shards", default=None)
    p.add_argument("--train", default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-lm", help="train the n-gram model")
    _add_common(p)
    p.add_argument("--shards", default=None)
    p.add_argument("--model", dest="model_path", default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--backoff", type=float, default=None)
    p.set_defaults(func=cmd_train_lm)

    for name, func in (("generate", cmd_generate), ("chain", cmd_chain)):
        p = sub.add_parser(name, help=f"{name} pragmas for test scopes")
        _add_common(p)
        _add_backend_flags(p)
        p.add_argument("--test", default=None, help="test shards JSONL")
        p.add_argument("--output", default=None, help="generations JSONL")
        p.add_argument("--traces", default=None, help="chain trace JSONL")
        p.add_argument("--n-chain", dest="n_chain", type=int, default=None)
        p.add_argument("--retain-controls", dest="retain_controls",
                       action="store_const", const=True, default=None,
                       help="carry a component's control forward in chain stages")
        if name == "generate":
            p.add_argument("--mode", choices=("basic", "chain"), default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--task", choices=("generation", "chain-vs-basic", "clause"),
                   default="generation")
    p.add_argument("--test", default=None, help="test shards JSONL")
    p.add_argument("--train", default=None,
                   help="training shards JSONL for the disjointness check")
    p.add_argument("--mode", choices=("basic", "chain"), default=None)
    p.add_argument("--top", dest="top_k", type=int, default=None)
    p.add_argument("--clause", default=None)
    p.add_argument("--filters", default=None,
                   help="comma-separated name filters for chain-vs-basic")
    p.add_argument("--subtest", type=int, choices=(1, 2), default=None)
    p.add_argument("--n-chain", dest="n_chain", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--report-json", dest="report_json", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perplexity", help="perplexity of a model on shards")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--test", default=None)
    p.set_defaults(func=cmd_perplexity)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(64, f"{parser.prog}: error: {exc}\n")
    except InputUnreadable as exc:
        print(f"error: InputUnreadable: {exc}", file=sys.stderr)
        return 2
    except (OmpForgeError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
