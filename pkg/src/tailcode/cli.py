"""``tailcode`` command line: generate, train, eval, ablate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional

import numpy as np

from tailcode import codec, metrics, pipeline, synth
from tailcode.config import RunConfig, UsageError, grid_values, resolve, split_list

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
BUNDLE_FORMAT = "tailcode-model/1"
TOP_K = 5

log = logging.getLogger("tailcode")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# file helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text: str) -> None:
    """Write through a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _need(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise UsageError(f"missing --{key}")
    return value


def sidecar_path(data_path) -> Path:
    return Path(str(data_path) + ".json")


def load_dataset(path, cfg: RunConfig, num_relations: Optional[int] = None) -> synth.LongTailDataset:
    path = Path(path)
    if not path.is_file():
        raise synth.DataError(f"dataset not found: {path}")
    side = sidecar_path(path)
    if num_relations is None and side.is_file():
        meta = json.loads(side.read_text())
        gen = meta.get("generator", {})
        if "num_contexts" in gen:
            num_relations = gen["num_contexts"] * gen["relations_per_context"]
    ds = synth.read_dataset(path, cfg.rare_threshold, num_relations)
    if num_relations is not None and ds.relation.max() >= num_relations:
        raise synth.DataError(f"relation id {int(ds.relation.max())} outside the catalog of "
                              f"{num_relations} relations")
    return ds


def provenance(cfg: RunConfig, inputs: dict) -> dict:
    return {"config": cfg.to_dict(),
            "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in sorted(inputs.items())}}


def _config_digest(prov: dict) -> str:
    return hashlib.sha256(json.dumps(prov, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> int:
    """Write a synthetic long-tail dataset CSV and its JSON sidecar."""
    out = Path(_need(cfg, "out"))
    gen = cfg.generator_config()
    try:
        ds = synth.generate_longtail(gen)
    except ValueError as exc:
        raise UsageError(f"samples: {exc}") from None
    write_atomic(out, synth.dataset_to_csv(ds))
    meta = {
        "generator": synth.config_to_dict(gen),
        "config": cfg.to_dict(),
        "schema_hash": ds.schema_hash(),
        "sha256": sha256_file(out),
        "rows": int(ds.row_id.size),
        "rare_relations": sorted(ds.rare_set),
    }
    write_atomic(sidecar_path(out), _dumps(meta))
    print(f"wrote {out} ({ds.row_id.size} rows, {len(ds.rare_set)} rare relations of {ds.num_relations})")
    return EXIT_OK


def training_log(model: pipeline.ConditionalModel) -> dict:
    subs = []
    for sub in model.submodels():
        bits = []
        for b, (clf, ranking) in enumerate(zip(sub.bits, sub.rankings)):
            bits.append({
                "bit": b,
                "selected_features": int(clf.selected.size),
                "ranked": ranking is not None,
                "constant": clf.constant,
                "final_logloss": clf.final_logloss,
                "logloss": [float(v) for v in clf.logloss],
            })
        subs.append({
            "key": sub.key,
            "mode": sub.mode,
            "relations": [int(r) for r in sub.relations],
            "codeword_length": sub.codebook.codeword_length if sub.codebook is not None else 0,
            "flags": list(sub.flags),
            "bits": bits,
        })
    return {"scheme": model.config.scheme, "alpha": model.alpha, "beta": model.beta,
            "codeword_bits": model.codeword_bits(), "flags": list(model.flags), "submodels": subs}


def train_model(cfg: RunConfig, ds: synth.LongTailDataset, **overrides) -> pipeline.ConditionalModel:
    if not ds.mask("train").any():
        raise synth.DataError("dataset has no training rows")
    return pipeline.train_pipeline(ds, cfg.pipeline_config(**overrides), threads=cfg.threads)


def cmd_train(cfg: RunConfig) -> int:
    """Train a model bundle and its training log."""
    data = _need(cfg, "data")
    out = Path(_need(cfg, "out"))
    ds = load_dataset(data, cfg)
    model = train_model(cfg, ds)
    prov = provenance(cfg, {"data": data})
    prov["schema_hash"] = ds.schema_hash()
    bundle = {"format": BUNDLE_FORMAT, "provenance": prov, "model": model.to_dict()}
    write_atomic(out, json.dumps(bundle, sort_keys=True, separators=(",", ":")) + "\n")
    trace = {"provenance": prov, "log": training_log(model)}
    write_atomic(out.with_suffix(".log.json"), json.dumps(trace, sort_keys=True) + "\n")
    print(f"wrote {out}: scheme={model.config.scheme} alpha={model.alpha:.2f} "
          f"codeword_bits={model.codeword_bits()}")
    return EXIT_OK


def load_bundle(path) -> tuple[pipeline.ConditionalModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise synth.DataError(f"model not found: {path}")
    try:
        bundle = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise synth.DataError(f"{path}: not a JSON model bundle ({exc})") from None
    if not isinstance(bundle, dict) or bundle.get("format") != BUNDLE_FORMAT:
        raise synth.DataError(f"{path}: not a {BUNDLE_FORMAT} bundle")
    return pipeline.ConditionalModel.from_dict(bundle["model"]), bundle["provenance"]


def scores_csv(scores: np.ndarray, ds: synth.LongTailDataset, unseen: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = min(TOP_K, scores.shape[1])
    head = ["row_id", "context", "relation", "unseen_context"]
    for i in range(1, k + 1):
        head += [f"top{i}_relation", f"top{i}_score"]
    w.writerow(head)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    for i in range(scores.shape[0]):
        row = [int(ds.row_id[i]), int(ds.context[i]), int(ds.relation[i]), int(unseen[i])]
        for j in order[i]:
            row += [int(j), repr(float(scores[i, j]))]
        w.writerow(row)
    return buf.getvalue()


def cmd_eval(cfg: RunConfig) -> int:
    """Score a split and write report, scores and timing files."""
    start = time.perf_counter()
    model_path = _need(cfg, "model")
    data = _need(cfg, "data")
    out = Path(_need(cfg, "out"))
    model, train_prov = load_bundle(model_path)
    ds = load_dataset(data, cfg, num_relations=model.num_relations)
    expected = train_prov.get("schema_hash")
    if expected is not None and ds.schema_hash() != expected:
        raise synth.DataError(f"schema hash mismatch: model expects {expected}, "
                              f"dataset has {ds.schema_hash()}")
    rows = ds.mask(cfg.split)
    if not rows.any():
        raise synth.DataError(f"dataset has no {cfg.split} rows")
    sub = ds.subset(rows)
    scores, unseen = pipeline.predict_scores(model, sub.features, sub.context)
    rep = metrics.build_report(scores, sub.relation, model.rare_relations, model.footprint(),
                               row_ids=sub.row_id)
    prov = provenance(cfg, {"model": model_path, "data": data})
    prov["split"] = cfg.split
    doc = {"provenance": prov, "report": rep.to_dict(), "unseen_context_rows": int(unseen.sum())}
    write_atomic(out / "report.json", _dumps(doc))
    write_atomic(out / "report.txt", rep.to_text(model.config.scheme)
                 + f"provenance {_config_digest(prov)}\n")
    write_atomic(out / "scores.csv", scores_csv(scores, sub, unseen))
    rep.runtime_seconds = time.perf_counter() - start
    write_atomic(out / "timing.json", _dumps({"runtime_seconds": rep.runtime_seconds}))
    sys.stdout.write(rep.to_text(model.config.scheme))
    return EXIT_OK


def _cell_name(scheme: str, fs: bool, tq: bool) -> str:
    return f"{scheme}_fs-{'on' if fs else 'off'}_tq-{'on' if tq else 'off'}"


ABLATION_HEADER = ["scheme", "feature_selection", "two_query", "full", "rare", "non_rare",
                   "params", "ops/query", "codeword_bits", "alpha"]


def run_ablation(cfg: RunConfig, ds: synth.LongTailDataset, out: Optional[Path] = None,
                 prov: Optional[dict] = None) -> list:
    """Train and score every grid cell; returns ``(cell, model, report)`` tuples in grid order."""
    schemes = split_list(cfg.schemes)
    if not schemes:
        raise UsageError("schemes: empty grid")
    fs_grid = grid_values(cfg.feature_selection_grid, "feature_selection_grid")
    tq_grid = grid_values(cfg.two_query_grid, "two_query_grid")
    rows = ds.mask("test")
    results = []
    for fs in fs_grid:
        for tq in tq_grid:
            for scheme in schemes:
                cell = {"scheme": scheme, "feature_selection": fs, "two_query": tq}
                model = train_model(cfg, ds, scheme=scheme, feature_selection=fs, two_query=tq)
                scores, _ = pipeline.predict_scores(model, ds.features[rows], ds.context[rows])
                rep = metrics.build_report(scores, ds.relation[rows], ds.rare_set, model.footprint(),
                                           row_ids=ds.row_id[rows])
                log.info("%s: full %.2f rare %s", _cell_name(scheme, fs, tq), rep.map_full, rep.map_rare)
                if out is not None:
                    doc = {"provenance": prov, "cell": cell, "alpha": model.alpha,
                           "codeword_bits": model.codeword_bits(), "report": rep.to_dict()}
                    write_atomic(out / "cells" / f"{_cell_name(scheme, fs, tq)}.json", _dumps(doc))
                results.append((cell, model, rep))
    return results


def ablation_rows(results) -> list:
    return [[c["scheme"], "on" if c["feature_selection"] else "off", "on" if c["two_query"] else "off",
             r.map_full, r.map_rare, r.map_nonrare, r.param_count, r.ops_per_query,
             m.codeword_bits(), m.alpha] for c, m, r in results]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def delta_rows(results, ds: synth.LongTailDataset) -> tuple[list, list]:
    """Per-relation AP of each scheme in the first grid cell, plus hybrid minus one_hot."""
    first = results[0][0]
    cell = {c["scheme"]: r for c, _, r in results
            if c["feature_selection"] == first["feature_selection"] and c["two_query"] == first["two_query"]}
    schemes = list(cell)
    header = ["relation", "rare", "train_count"] + [f"ap_{s}" for s in schemes] + ["delta_hybrid_one_hot"]
    counts = ds.train_counts
    rare = ds.rare_set
    rows = []
    for rel in range(ds.num_relations):
        aps = [cell[s].per_relation_ap.get(rel) for s in schemes]
        h, o = cell.get("hybrid"), cell.get("one_hot")
        delta = None
        if h is not None and o is not None and rel in h.per_relation_ap:
            delta = h.per_relation_ap[rel] - o.per_relation_ap[rel]
        rows.append([rel, int(rel in rare), int(counts[rel])] + aps + [delta])
    return header, rows


def cmd_ablate(cfg: RunConfig) -> int:
    """Train the scheme x selection x two-query grid and compare."""
    data = _need(cfg, "data")
    out = Path(_need(cfg, "out"))
    ds = load_dataset(data, cfg)
    prov = provenance(cfg, {"data": data})
    results = run_ablation(cfg, ds, out, prov)
    table = ablation_rows(results)
    text = metrics.format_table(table, ABLATION_HEADER)
    write_atomic(out / "ablation.txt", text + f"provenance {_config_digest(prov)}\n")
    write_atomic(out / "ablation.csv", _csv_text(ABLATION_HEADER, table))
    header, rows = delta_rows(results, ds)
    write_atomic(out / "relation_deltas.csv", _csv_text(header, rows))
    write_atomic(out / "ablation.json", _dumps({
        "provenance": prov,
        "rows": [dict(zip(ABLATION_HEADER, row)) for row in table],
    }))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    """Print codebooks and feature rankings of a model bundle."""
    model, _ = load_bundle(_need(cfg, "model"))
    lines = [f"scheme {model.config.scheme}, alpha {model.alpha:.2f}, beta {model.beta:.2f}, "
             f"{len(model.context_models)} context and {len(model.cluster_models)} cluster submodels"]
    books, ranking_rows = {}, []
    for sub in model.submodels():
        lines.append(f"\n[{sub.key}] mode={sub.mode} relations={[int(r) for r in sub.relations]}")
        if sub.codebook is None:
            continue
        cb = sub.codebook
        books[sub.key] = cb.to_dict()
        for local, word in enumerate(cb.codewords):
            tag = " rare" if local in cb.rare_class_ids else ""
            lines.append(f"  {int(sub.relations[local]):>4}  {''.join(str(int(b)) for b in word)}{tag}")
        for b, ranking in enumerate(sub.rankings):
            if ranking is None:
                continue
            top = ", ".join(f"{e.feature_index}:{e.loss:.4f}" for e in ranking.entries[:5])
            lines.append(f"  bit {b}: top features {top}")
            for rank, e in enumerate(ranking.entries):
                ranking_rows.append([sub.key, b, rank, e.feature_index, repr(float(e.threshold)),
                                     repr(float(e.loss))])
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg.out:
        out = Path(cfg.out)
        write_atomic(out / "codebooks.json", _dumps(books))
        write_atomic(out / "rankings.csv", _csv_text(
            ["submodel", "bit", "rank", "feature_index", "threshold", "loss"], ranking_rows))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "inspect": cmd_inspect}


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailcode", description="Coded conditional relation classifier for long-tail data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = subs.add_parser(name, help=COMMANDS[name].__doc__)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=str)
        p.add_argument("--scheme", choices=codec.SCHEMES)
        p.add_argument("--preset")
        p.add_argument("--out")
        p.add_argument("--threads", type=str)
        p.add_argument("--data")
        p.add_argument("--model")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        if name == "generate":
            p.add_argument("--zipf")
            p.add_argument("--contexts")
            p.add_argument("--samples")
            p.add_argument("--sigma")
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "test"))
    return parser


_FLAG_KEYS = ("seed", "scheme", "preset", "out", "threads", "data", "model",
              "zipf", "contexts", "samples", "sigma", "split")


def config_from_args(args) -> RunConfig:
    file_text = None
    if args.config:
        try:
            file_text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return resolve(file_text, overrides, origin=args.config or "config")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except synth.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - surfaced as the internal-error exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
