"""Command-line entry point: ``greenwash <subcommand> ...``.

Every subcommand writes a run manifest (resolved settings, input digests,
seeds, tool version) before its outputs. Directory outputs get
``manifest.json``; single-file outputs get ``<out>.manifest.json``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .aggregate import classification_shares, group_table, weighted_group_scores
from .annotate import (
    AnnotationColumn,
    ReplayCache,
    ReplayOnlyClient,
    annotate_corpus,
    assemble_matrix,
    load_column,
    write_column,
)
from .filtering import KeywordVector, keyword_count_table, keyword_vector, load_electoral, load_lexicon, select_ads
from .ingest import load_ads, load_covariates, load_registry, write_ads
from .irt import (
    IrtConfig,
    config_from_dict,
    fit_map,
    laplace_draws,
    load_fit_table,
    mcmc_validate,
    write_fit_table,
)
from .matrix import load_matrix
from .network import (
    PAIR_RULES,
    build_links,
    difference_table,
    edge_table,
    load_embeddings,
    score_differences,
    to_dot,
)
from .simulate import generate, read_truth, recovery_from_tables, sim_config_from_dict, write_dataset
from .stats import fit_model, fit_table, marginal_effect, parse_terms

log = logging.getLogger("greenwash")

STAGES = ("annotate", "fit", "network", "simulate")
FIT_FILE = "fit.tsv"


class UsageError(ValueError):
    pass


# seeds and manifests


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage seed: first word of SeedSequence([seed, stage index])."""
    return int(np.random.SeedSequence([int(seed), STAGES.index(stage)]).generate_state(1)[0])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    def __init__(self, subcommand: str, settings: Mapping, inputs: Sequence[str], seed=None, stage_seeds=None):
        self.data = {
            "subcommand": subcommand,
            "tool_version": __version__,
            "settings": _jsonable(settings),
            "inputs": {str(p): file_digest(p) for p in inputs if p},
            "seed": seed,
            "stage_seeds": stage_seeds or {},
            "started": _now(),
        }
        self.path = None

    def write(self, path) -> None:
        self.path = path
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, outputs: Sequence[str]) -> None:
        base = os.path.dirname(os.path.abspath(self.path))
        self.data["outputs"] = {os.path.relpath(os.path.abspath(p), base): file_digest(p) for p in outputs}
        self.data["finished"] = _now()
        self.write(self.path)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if obj is None or isinstance(obj, (str, int, float, bool)):
        return obj
    return str(obj)


def _out_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _file_out(path) -> tuple[str, str]:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path, path + ".manifest.json"


def _read_yaml(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return data


# table helpers


def write_keywords(vectors: Sequence[KeywordVector], fh) -> None:
    keys = sorted(vectors[0].bits) if vectors else []
    fh.write("\t".join(["ad_id", *keys]) + "\n")
    for v in vectors:
        fh.write("\t".join([v.ad_id, *(str(v.bits[k]) for k in keys)]) + "\n")


def read_keywords(path) -> list[KeywordVector]:
    with open(path, encoding="utf-8") as fh:
        keys = next(fh).rstrip("\n").split("\t")[1:]
        out = []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            out.append(KeywordVector(parts[0], dict(zip(keys, (int(x) for x in parts[1:])))))
    return out


def restrict_keywords(vectors, keys) -> list[KeywordVector]:
    if not keys:
        return list(vectors)
    out = []
    for v in vectors:
        unknown = [k for k in keys if k not in v.bits]
        if unknown:
            raise UsageError(f"keyword item(s) not in lexicon: {', '.join(unknown)}")
        out.append(KeywordVector(v.ad_id, {k: v.bits[k] for k in keys}))
    return out


def _write_text(path, text: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _fit_path(path) -> str:
    return os.path.join(path, FIT_FILE) if os.path.isdir(path) else path


# stage implementations shared by subcommands and the pipeline


def run_filter(ads_path, out, lexicon=None, electoral=None, no_electoral=False, impression_kind="share"):
    ads = load_ads(ads_path, impression_kind=impression_kind)
    lex = load_lexicon(lexicon)
    excl = None if no_electoral else load_electoral(electoral)
    kept, stats = select_ads(ads, lex, excl)
    vectors = [keyword_vector(a, lex) for a in sorted(kept, key=lambda a: a.ad_id)]
    paths = [os.path.join(out, n) for n in ("ads.jsonl", "keywords.tsv", "keyword_counts.tsv", "filter_stats.tsv")]
    with open(paths[0], "w", encoding="utf-8") as fh:
        write_ads(sorted(kept, key=lambda a: a.ad_id), fh)
    with open(paths[1], "w", encoding="utf-8") as fh:
        write_keywords(vectors, fh)
    counts = keyword_count_table(kept, lex)
    _write_text(paths[2], "key\tcount\n" + "".join(f"{k}\t{n}\n" for k, n in counts))
    _write_text(paths[3], "step\tcount\n" + "".join(f"{k}\t{stats[k]}\n" for k in ("input", "not_climate", "electoral", "kept")))
    return kept, vectors, paths


def run_annotate(ads, annotators, stance_paths, seed, out, threads=1):
    """Annotate from replay caches only; stance columns are read from files."""
    columns, paths = [], []
    col_dir = _out_dir(os.path.join(out, "columns"))
    for spec in annotators:
        key = spec["item_key"]
        cache = ReplayCache(spec.get("replay"))
        col = annotate_corpus(ads, ReplayOnlyClient(), key, seed, cache, spec.get("model_id"),
                              max_in_flight=max(1, threads))
        columns.append(col)
    ad_ids = {a.ad_id for a in ads}
    for p in stance_paths:
        col = load_column(p, source="stance")
        columns.append(AnnotationColumn(col.item_key, {a: v for a, v in col.values.items() if a in ad_ids},
                                        col.source, col.provenance))
    for col in columns:
        path = os.path.join(col_dir, f"{col.item_key}.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            write_column(col, fh)
        paths.append(path)
    return columns, paths


def run_fit(matrix, config: IrtConfig, mode: str):
    if mode == "mcmc":
        return mcmc_validate(matrix, config)
    return laplace_draws(fit_map(matrix, config), matrix, config)


def run_score(fit_file, ads, by, out_path):
    fit = load_fit_table(fit_file)
    groups = weighted_group_scores(fit.score_means(), ads, by)
    shares = classification_shares(fit.classifications(), ads, by)
    _write_text(out_path, group_table(by, groups, shares))
    return groups


def run_network(ads, embeddings_path, fit_file, registry_path, min_pairs, min_cos, pair_rule, out):
    fit = load_fit_table(fit_file)
    emb = load_embeddings(embeddings_path)
    registry = load_registry(registry_path) if registry_path else None
    scores = fit.score_means()
    scored = [a for a in ads if a.ad_id in scores]
    graph = build_links(scored, emb, scores, min_pairs, min_cos, pair_rule, registry)
    paths = [
        _write_text(os.path.join(out, "graph.dot"), to_dot(graph)),
        _write_text(os.path.join(out, "edges.tsv"), edge_table(graph)),
    ]
    if registry is not None:
        paths.append(_write_text(os.path.join(out, "differences.tsv"), difference_table(score_differences(graph))))
    return graph, paths


def _irt_config(path, overrides: Mapping) -> IrtConfig:
    data = _read_yaml(path)
    data = data.get("irt", data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


# subcommands


def cmd_filter(args):
    out = _out_dir(args.out)
    man = RunManifest("filter", vars(args), [args.ads, args.lexicon, args.electoral])
    man.write(os.path.join(out, "manifest.json"))
    _, _, paths = run_filter(args.ads, out, args.lexicon, args.electoral, args.no_electoral, args.impression_kind)
    man.finish(paths)


def cmd_annotate(args):
    out = _out_dir(args.out)
    seeds = {"annotate": stage_seed(args.seed, "annotate")}
    inputs = [args.ads, args.keywords, *args.stance, *(r for r in [args.replay] if r and os.path.exists(r))]
    man = RunManifest("annotate", vars(args), inputs, args.seed, seeds)
    man.write(os.path.join(out, "manifest.json"))
    ads = load_ads(args.ads)
    annotators = [{"item_key": k, "replay": args.replay} for k in args.items]
    columns, paths = run_annotate(ads, annotators, args.stance, seeds["annotate"], out, args.threads)
    if args.keywords:
        vectors = restrict_keywords(read_keywords(args.keywords), args.keyword_items)
        matrix = assemble_matrix(vectors, columns)
        paths.append(os.path.join(out, "matrix.tsv"))
        matrix.save(paths[-1])
    man.finish(paths)


def cmd_fit(args):
    out = _out_dir(args.out)
    seeds = {"fit": stage_seed(args.seed, "fit")}
    config = _irt_config(args.config, {"draws": args.draws, "threads": args.threads, "seed": seeds["fit"]})
    man = RunManifest("fit", {**vars(args), "irt": config.to_dict()}, [args.matrix, args.config], args.seed, seeds)
    man.write(os.path.join(out, "manifest.json"))
    posterior = run_fit(load_matrix(args.matrix), config, args.mode)
    path = os.path.join(out, FIT_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        write_fit_table(posterior, fh)
    man.finish([path])


def cmd_score(args):
    out, mpath = _file_out(args.out)
    fit_file = _fit_path(args.fit)
    man = RunManifest("score", vars(args), [fit_file, args.ads])
    man.write(mpath)
    run_score(fit_file, load_ads(args.ads, impression_kind=args.impression_kind), args.by, out)
    man.finish([out])


def cmd_network(args):
    out = _out_dir(args.out)
    fit_file = _fit_path(args.fit)
    man = RunManifest("network", vars(args), [args.ads, args.embeddings, fit_file, args.registry])
    man.write(os.path.join(out, "manifest.json"))
    _, paths = run_network(load_ads(args.ads), args.embeddings, fit_file, args.registry,
                           args.min_pairs, args.min_cos, args.pair_rule, out)
    man.finish(paths)


def cmd_regress(args):
    out, mpath = _file_out(args.out)
    man = RunManifest("regress", vars(args), [args.data])
    man.write(mpath)
    spec = parse_terms(args.outcome, args.terms)
    table = load_covariates(args.data, spec.referenced, args.id_column)
    fit, dm = fit_model(table, spec, robust=args.robust)
    text = fit_table(fit, dm.dropped)
    if args.marginal:
        var, _, mod = args.marginal.partition(":")
        if not mod:
            raise UsageError("--marginal expects VAR:MODERATOR")
        grid = args.grid if args.grid else [0.0, 1.0]
        for m, eff, se in marginal_effect(fit, spec, var, mod, grid):
            text += f"marginal\t{var}|{mod}={m:.10g}\t{eff:.10g}\t{se:.10g}\t\t\n"
    _write_text(out, text)
    man.finish([out])


def cmd_simulate(args):
    out = _out_dir(args.out)
    data = _read_yaml(args.config)
    data = data.get("simulate", data)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_ads is not None:
        data["n_ads"] = args.n_ads
    config = sim_config_from_dict(data)
    man = RunManifest("simulate", {**vars(args), "simulate": config.to_dict()}, [args.config], config.seed)
    man.write(os.path.join(out, "manifest.json"))
    paths = write_dataset(generate(config), out)
    truth = [os.path.join(out, f"truth_{n}.tsv") for n in ("ads", "items", "edges")]
    man.finish([*paths.values(), *truth])


def cmd_recovery(args):
    out, mpath = _file_out(args.out)
    fit_file = _fit_path(args.fit)
    man = RunManifest("recovery", vars(args), [fit_file])
    man.write(mpath)
    truth = read_truth(args.truth)
    fit = load_fit_table(fit_file)
    scores = {a: (s.mean, s.q05, s.q95) for a, (s, _) in fit.scores.items()}
    missing = [a for a in truth.ads if a not in scores]
    if missing:
        raise UsageError(f"fit lacks {len(missing)} simulated ad(s), e.g. {missing[0]}")
    items = {k: s.mean for (k, stage), s in fit.items.items() if stage == "outcome"}
    rep = recovery_from_tables(truth, scores, items)
    _write_text(out, "metric\tvalue\n" + "".join(f"{k}\t{v!r}\n" for k, v in rep.as_dict().items()))
    man.finish([out])
    print(f"correlation {rep.correlation:.4f}  sign agreement {rep.sign_agreement:.3f}  coverage {rep.coverage:.3f}")


def cmd_report(args):
    from . import report

    out = _out_dir(args.out)
    fit_file = _fit_path(args.fit)
    man = RunManifest("report", vars(args), [fit_file, args.groups])
    man.write(os.path.join(out, "manifest.json"))
    groups = report.group_scores_from_table(args.groups) if args.groups else None
    paths = report.render_all(out, load_fit_table(fit_file), groups)
    man.finish(paths)


def _resolve(base, path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(base, path)


def cmd_pipeline(args):
    cfg = _read_yaml(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise UsageError("pipeline needs a seed (--seed or 'seed' in the config)")
    out = _out_dir(args.out)
    seeds = {s: stage_seed(seed, s) for s in ("annotate", "fit", "network")}
    ads_path = _resolve(base, cfg.get("ads"))
    if not ads_path:
        raise UsageError("pipeline config needs 'ads'")
    annotators = [{**a, "replay": _resolve(base, a.get("replay"))} for a in cfg.get("annotators") or []]
    stance = [_resolve(base, p) for p in cfg.get("stance") or []]
    lexicon = _resolve(base, cfg.get("lexicon"))
    electoral = cfg.get("electoral")
    no_electoral = electoral is False
    electoral = None if no_electoral else _resolve(base, electoral)
    embeddings = _resolve(base, cfg.get("embeddings"))
    registry = _resolve(base, cfg.get("registry"))
    irt = dict(cfg.get("irt") or {})
    irt.update(seed=seeds["fit"], threads=args.threads)
    if args.draws is not None:
        irt["draws"] = args.draws
    config = config_from_dict(irt)
    net = {"min_pairs": 5, "min_cos": 0.8, "pair_rule": "pairs", **(cfg.get("network") or {})}
    by = cfg.get("by", "country")
    inputs = [ads_path, lexicon, electoral, embeddings, registry, *stance,
              *sorted({a["replay"] for a in annotators if a.get("replay") and os.path.exists(a["replay"])})]
    settings = {"config": cfg, "irt": config.to_dict(), "network": net, "by": by, "mode": args.mode,
                "threads": args.threads, "figures": args.figures}
    man = RunManifest("pipeline", settings, inputs, seed, seeds)
    man.write(os.path.join(out, "manifest.json"))

    kept, vectors, paths = run_filter(ads_path, out, lexicon, electoral, no_electoral,
                                      cfg.get("impression_kind", "share"))
    columns, col_paths = run_annotate(kept, annotators, stance, seeds["annotate"], out, args.threads)
    paths += col_paths
    matrix = assemble_matrix(restrict_keywords(vectors, cfg.get("keyword_items")), columns)
    paths.append(os.path.join(out, "matrix.tsv"))
    matrix.save(paths[-1])
    posterior = run_fit(matrix, config, args.mode)
    fit_file = os.path.join(out, FIT_FILE)
    with open(fit_file, "w", encoding="utf-8") as fh:
        write_fit_table(posterior, fh)
    paths.append(fit_file)
    score_path = os.path.join(out, f"scores_by_{by}.tsv")
    groups = run_score(fit_file, kept, by, score_path)
    paths.append(score_path)
    graph = None
    if embeddings:
        graph, net_paths = run_network(kept, embeddings, fit_file, registry, int(net["min_pairs"]),
                                       float(net["min_cos"]), net["pair_rule"], out)
        paths += net_paths
    if args.figures:
        from . import report

        paths += report.render_all(os.path.join(out, "figures"), load_fit_table(fit_file), groups, graph, by)
    man.finish(paths)
    counts = posterior.classification_counts()
    print(" ".join(f"{c.value.lower()}={n}" for c, n in counts.items()))


# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greenwash", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    s = sub.add_parser("filter", help="keep climate, non-electoral ads and code keyword items")
    s.add_argument("--ads", required=True)
    s.add_argument("--lexicon", help="lexicon YAML (default: shipped lexicon)")
    s.add_argument("--electoral", help="electoral exclusion YAML (default: shipped list)")
    s.add_argument("--no-electoral", action="store_true")
    s.add_argument("--impression-kind", choices=("share", "count"), default="share")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("annotate", help="code annotator columns from replay caches and assemble the matrix")
    s.add_argument("--ads", required=True)
    s.add_argument("--items", nargs="*", default=[], help="LLM item keys to read from --replay")
    s.add_argument("--replay", help="replay cache file")
    s.add_argument("--stance", nargs="*", default=[], help="stance column files")
    s.add_argument("--keywords", help="keywords.tsv from filter; when given, matrix.tsv is written")
    s.add_argument("--keyword-items", nargs="*", help="restrict keyword items to these keys")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("fit", help="fit the ideal-point model")
    s.add_argument("--matrix", required=True)
    s.add_argument("--config")
    s.add_argument("--draws", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("map", "mcmc"), default="map")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("score", help="impression-weighted group scores")
    s.add_argument("--fit", required=True, help="fit output directory or file")
    s.add_argument("--ads", required=True)
    s.add_argument("--by", default="country")
    s.add_argument("--impression-kind", choices=("share", "count"), default="share")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("network", help="page similarity network over high-scoring ads")
    s.add_argument("--ads", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--registry")
    s.add_argument("--min-pairs", type=int, default=5)
    s.add_argument("--min-cos", type=float, default=0.8)
    s.add_argument("--pair-rule", choices=PAIR_RULES, default="pairs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_network)

    s = sub.add_parser("regress", help="OLS with squares and interactions")
    s.add_argument("--data", required=True)
    s.add_argument("--outcome", required=True)
    s.add_argument("--terms", required=True, help='e.g. "a + b + a^2 + a:b"')
    s.add_argument("--id-column", default="unit_id")
    s.add_argument("--robust", action="store_true", help="HC1 standard errors")
    s.add_argument("--marginal", help="VAR:MODERATOR marginal effects")
    s.add_argument("--grid", type=float, nargs="*")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_regress)

    s = sub.add_parser("simulate", help="synthetic corpus with known truth")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-ads", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("recovery", help="compare a fit against simulation truth")
    s.add_argument("--truth", required=True, help="simulate output directory")
    s.add_argument("--fit", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_recovery)

    s = sub.add_parser("pipeline", help="filter, annotate (replay), fit, score and network in one run")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--draws", type=int)
    s.add_argument("--mode", choices=("map", "mcmc"), default="map")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--figures", action="store_true", help="also render PNG figures under figures/")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("report", help="render PNG figures from a fit and optional group table")
    s.add_argument("--fit", required=True)
    s.add_argument("--groups")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError, yaml.YAMLError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error [{type(exc).__name__}]: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
