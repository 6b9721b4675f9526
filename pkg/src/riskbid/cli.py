"""Command-line pipeline: generate -> train -> calibrate -> evaluate -> report.

Every stage writes its artifacts under the output directory together with a
manifest in ``manifests/<stage>.json``. A manifest records the hash of the
configuration that produced the stage (chained with the upstream hash) and the
SHA-256 of every artifact, so a downstream stage refuses to run on stale or
edited inputs.

Exit codes: 0 success, 1 validation error (bad config, missing or stale
artifacts, malformed logs), 2 calibration failure.
"""

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import shutil
import sys
import zlib

import numpy as np

from .calibration import DEFAULT_ALPHA_GRID, CalibrationError, CalibrationReport, calibrate_lambda, select_alpha
from .market import MarketData, MarketModel, SyntheticMarketSpec, generate_market, load_log, write_log
from .policy import Family, PolicyParams, bid
from .simulation import BatchConfig, export_cdf, run_experiment

_MARKET_DEFAULTS = SyntheticMarketSpec()

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "riskbid-run",
    "market": {
        "feature_dim": _MARKET_DEFAULTS.feature_dim,
        "ctr_weights": list(_MARKET_DEFAULTS.ctr_weights),
        "ctr_intercept": _MARKET_DEFAULTS.ctr_intercept,
        "price_weights": list(_MARKET_DEFAULTS.price_weights),
        "price_intercept": _MARKET_DEFAULTS.price_intercept,
        "noise_ratio": _MARKET_DEFAULTS.noise_ratio,
    },
    # additive shift of log mean price in the validation and test markets
    "deployment_price_shift": 0.0,
    "data": {"train": None, "validation": None, "test": None, "categorical": []},
    "rows": {"train": 100_000, "validation": 300_000, "test": 300_000},
    "model": {"customer_value": 50.0, "epsilon": 1e-4, "min_samples": 100},
    "families": ["rnp", "rap"],
    "alpha_grid": list(DEFAULT_ALPHA_GRID),
    "batch_size": 10_000,
    "budget_fracs": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
    "n_batches": 30,
    "max_early_stop": 0.05,
    "lambda_tol": 1e-6,
}

METRIC_ROWS = (
    ("avg_batch_clicks", "avg_clicks"),
    ("avg_batch_profit", "avg_profit"),
    ("avg_batch_expense", "avg_expense"),
    ("avg_impression_rate", "avg_impression_rate"),
    ("sharpe_ratio", "sharpe_ratio"),
    ("early_stop_frequency", "early_stop_frequency"),
)

SPLITS = ("train", "validation", "test")


class ValidationError(ValueError):
    """Bad configuration or missing/stale pipeline artifacts."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None, families=None, budget_fracs=None, out=None) -> dict:
    """Defaults, then the JSON file at ``path``, then flag overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ValidationError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
        base_dir = os.path.dirname(os.path.abspath(path))
        if cfg["out"] is not None and not os.path.isabs(cfg["out"]) and "out" in user:
            cfg["out"] = os.path.join(base_dir, cfg["out"])
        for split in SPLITS:
            p = cfg["data"][split]
            if p is not None and not os.path.isabs(p):
                cfg["data"][split] = os.path.join(base_dir, p)
    if seed is not None:
        cfg["seed"] = seed
    if families:
        cfg["families"] = list(dict.fromkeys(families))
    if budget_fracs:
        cfg["budget_fracs"] = list(budget_fracs)
    if out is not None:
        cfg["out"] = out
    validate_config(cfg)
    return cfg


def _positive(value, name, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0
    if integer:
        ok = ok and float(value) == int(value)
    if not ok:
        raise ValidationError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")


def validate_config(cfg: dict):
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or not 0 <= cfg["seed"] < 2 ** 64:
        raise ValidationError(f"seed must be an integer in [0, 2**64), got {cfg['seed']!r}")
    fams = cfg["families"]
    if not fams or any(f not in ("rnp", "rap") for f in fams):
        raise ValidationError(f"families must be a nonempty subset of ['rnp', 'rap'], got {fams!r}")
    if not cfg["budget_fracs"]:
        raise ValidationError("budget_fracs is empty")
    for f in cfg["budget_fracs"]:
        _positive(f, "budget fraction")
    if len(set(float(f) for f in cfg["budget_fracs"])) != len(cfg["budget_fracs"]):
        raise ValidationError("budget_fracs contains duplicates")
    if not cfg["alpha_grid"]:
        raise ValidationError("alpha_grid is empty")
    for a in cfg["alpha_grid"]:
        _positive(a, "alpha_grid entry")
    _positive(cfg["batch_size"], "batch_size", integer=True)
    _positive(cfg["n_batches"], "n_batches", integer=True)
    _positive(cfg["lambda_tol"], "lambda_tol")
    if not 0 <= cfg["max_early_stop"] <= 1:
        raise ValidationError("max_early_stop must lie in [0, 1]")
    for split in SPLITS:
        _positive(cfg["rows"][split], f"rows.{split}", integer=True)
    if cfg["rows"]["test"] < cfg["batch_size"] and not cfg["data"]["test"]:
        raise ValidationError("rows.test must be at least batch_size")
    m = cfg["model"]
    _positive(m["customer_value"], "model.customer_value")
    _positive(m["epsilon"], "model.epsilon")
    _positive(m["min_samples"], "model.min_samples", integer=True)
    shift = cfg["deployment_price_shift"]
    if not isinstance(shift, (int, float)) or not math.isfinite(shift):
        raise ValidationError("deployment_price_shift must be a finite number")
    given = [cfg["data"][s] is not None for s in SPLITS]
    if any(given) and not all(given):
        raise ValidationError("data: give all of train, validation and test logs, or none")
    if all(given):
        for split in SPLITS:
            if not os.path.isfile(cfg["data"][split]):
                raise ValidationError(f"data.{split}: file not found: {cfg['data'][split]}")
    else:
        try:
            market_spec(cfg, 0)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"market: {exc}") from None
    if not cfg["out"]:
        raise ValidationError("an output directory is required (--out)")


def market_spec(cfg: dict, seed: int, shift: float = 0.0) -> SyntheticMarketSpec:
    m = dict(cfg["market"])
    m["price_intercept"] = m["price_intercept"] + shift
    return SyntheticMarketSpec(seed=seed, **m)


def sub_seed(root: int, *names: str) -> int:
    """Independent 64-bit seed for a named stream derived from the root seed."""
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(entropy=root, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# hashing and manifests
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_hash(cfg):
    d = cfg["data"]
    if d["train"] is not None:
        source = {"logs": {s: file_sha256(d[s]) for s in SPLITS}, "categorical": list(d["categorical"])}
    else:
        source = {
            "market": cfg["market"], "rows": cfg["rows"],
            "deployment_price_shift": cfg["deployment_price_shift"],
        }
    return _hash({"stage": "generate", "seed": cfg["seed"], "source": source})


def train_hash(cfg):
    return _hash({"stage": "train", "upstream": generate_hash(cfg), "model": cfg["model"]})


def calibrate_hash(cfg):
    keys = ("alpha_grid", "batch_size", "n_batches", "max_early_stop", "lambda_tol")
    return _hash({"stage": "calibrate", "upstream": train_hash(cfg), **{k: cfg[k] for k in keys}})


def evaluate_hash(cfg):
    return _hash({"stage": "evaluate", "upstream": calibrate_hash(cfg)})


def _manifest_path(out, stage):
    return os.path.join(out, "manifests", f"{stage}.json")


def _dump_json(path, doc):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_manifest(out, stage, config_hash, artifacts, info=None):
    doc = {
        "stage": stage,
        "config_hash": config_hash,
        "artifacts": {rel: file_sha256(os.path.join(out, rel)) for rel in sorted(artifacts)},
        "info": info or {},
    }
    _dump_json(_manifest_path(out, stage), doc)
    return doc


def read_manifest(out, stage, expected_hash, rerun_hint) -> dict:
    path = _manifest_path(out, stage)
    if not os.path.isfile(path):
        raise ValidationError(f"missing {stage} artifacts in {out}; run `riskbid {rerun_hint}` first")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("config_hash") != expected_hash:
        raise ValidationError(
            f"{stage} artifacts in {out} were produced by a different configuration; "
            f"rerun `riskbid {rerun_hint}` with the current config"
        )
    for rel, digest in doc["artifacts"].items():
        p = os.path.join(out, rel)
        if not os.path.isfile(p):
            raise ValidationError(f"{stage} artifact {rel} is missing; rerun `riskbid {rerun_hint}`")
        if file_sha256(p) != digest:
            raise ValidationError(f"{stage} artifact {rel} was modified after it was written; rerun `riskbid {rerun_hint}`")
    return doc


def _data_path(out, split):
    return os.path.join(out, "data", f"{split}.csv")


def _load_split(cfg, out, split, vocabulary=None) -> MarketData:
    categorical = cfg["data"]["categorical"] if cfg["data"]["train"] is not None else ()
    return load_log(_data_path(out, split), categorical=categorical, vocabulary=vocabulary)


def budget_label(frac: float) -> str:
    return repr(float(frac))


def column_name(family: str, frac: float) -> str:
    return f"{family}@{budget_label(frac)}"


def _report_rel(family, frac):
    return os.path.join("calibration", f"{family}_{budget_label(frac)}.json")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_generate(cfg, log=print) -> dict:
    out = cfg["out"]
    os.makedirs(os.path.join(out, "data"), exist_ok=True)
    info = {}
    if cfg["data"]["train"] is not None:
        for split in SPLITS:
            # parse once so schema errors surface here rather than in a later stage
            load_log(cfg["data"][split], categorical=cfg["data"]["categorical"])
            shutil.copyfile(cfg["data"][split], _data_path(out, split))
        info["source"] = "logs"
    else:
        seeds = {s: sub_seed(cfg["seed"], "generate", s) for s in SPLITS}
        for split in SPLITS:
            shift = 0.0 if split == "train" else cfg["deployment_price_shift"]
            data = generate_market(market_spec(cfg, seeds[split], shift), int(cfg["rows"][split]))
            write_log(data, _data_path(out, split))
        info["source"] = "synthetic"
        info["seeds"] = seeds
    train = _load_split(cfg, out, "train")
    if not train.has_prices():
        raise ValidationError("every training row needs a winning price")
    info["rows"] = {s: len(_load_split(cfg, out, s)) if s != "train" else len(train) for s in SPLITS}
    info["mean_price"] = train.mean_price()
    rels = [os.path.join("data", f"{s}.csv") for s in SPLITS]
    doc = write_manifest(out, "generate", generate_hash(cfg), rels, info)
    log(f"wrote {', '.join(rels)} to {out}; mean training price {info['mean_price']!r}")
    return doc


def _r2(y, yhat):
    y = np.asarray(y, dtype=float)
    return float(1.0 - np.sum((y - yhat) ** 2) / np.sum((y - np.mean(y)) ** 2))


def cmd_train(cfg, log=print) -> dict:
    out = cfg["out"]
    gen = read_manifest(out, "generate", generate_hash(cfg), "generate")
    train = _load_split(cfg, out, "train")
    m = cfg["model"]
    model = MarketModel(m["customer_value"], m["epsilon"], int(m["min_samples"])).fit_data(train)
    model.save(os.path.join(out, "model.json"))

    val = _load_split(cfg, out, "validation", vocabulary=getattr(model, "vocabulary_", None))
    _, w_hat, sigma = model.predict(val.X)
    info = {"mean_price": gen["info"]["mean_price"]}
    priced = ~np.isnan(val.price)
    if priced.any():
        info["heldout_r2_price"] = _r2(val.price[priced], w_hat[priced])
    if gen["info"].get("source") == "synthetic":
        truth = market_spec(cfg, 0)
        info["heldout_r2_mean_price_vs_generator"] = _r2(truth.true_mean_price(val.X), w_hat)
        rel = sigma / truth.true_std_price(val.X) - 1.0
        info["heldout_rms_rel_error_std_vs_generator"] = float(np.sqrt(np.mean(rel ** 2)))
    doc = write_manifest(out, "train", train_hash(cfg), ["model.json"], info)
    log("wrote model.json; " + ", ".join(f"{k}={v!r}" for k, v in info.items()))
    return doc


def _calibrate_one(cfg, model, family, frac, mean_price, train, val, seed):
    budget = frac * mean_price
    base = PolicyParams(Family.RNP, budget=budget, batch_size=int(cfg["batch_size"]))
    if family == "rnp":
        return calibrate_lambda(model, base, train, tol=cfg["lambda_tol"])
    grid = [a * cfg["batch_size"] for a in cfg["alpha_grid"]]
    return select_alpha(
        model, base, val, grid, int(cfg["n_batches"]), population=train, seed=seed,
        max_early_stop=cfg["max_early_stop"], tol=cfg["lambda_tol"],
    )


def cmd_calibrate(cfg, log=print) -> dict:
    out = cfg["out"]
    tr = read_manifest(out, "train", train_hash(cfg), "train")
    model = MarketModel.load(os.path.join(out, "model.json"))
    vocab = getattr(model, "vocabulary_", None)
    train = _load_split(cfg, out, "train", vocab)
    val = _load_split(cfg, out, "validation", vocab)
    mean_price = tr["info"]["mean_price"]
    chash = calibrate_hash(cfg)
    seed = sub_seed(cfg["seed"], "calibrate")

    rels = []
    for family in cfg["families"]:
        for frac in cfg["budget_fracs"]:
            try:
                report = _calibrate_one(cfg, model, family, float(frac), mean_price, train, val, seed)
            except CalibrationError as exc:
                raise CalibrationError(f"{family} at budget fraction {frac!r}: {exc}") from exc
            rel = _report_rel(family, frac)
            path = os.path.join(out, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            header = {"config_hash": chash, "budget_frac": float(frac), "mean_price": mean_price}
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(report.dumps(**header))
            rels.append(rel)
            note = " (no alpha met the early-stop gate)" if report.flagged else ""
            alpha = "" if report.alpha_star is None else f" alpha={report.alpha_star!r}"
            log(f"{column_name(family, frac)}: lambda*={report.lambda_star!r}{alpha}{note}")

    prev = _manifest_path(out, "calibrate")
    if os.path.isfile(prev):
        # keep reports for other (family, budget) pairs made under the same config
        with open(prev, encoding="utf-8") as fh:
            old = json.load(fh)
        if old.get("config_hash") == chash:
            rels += [r for r in old["artifacts"] if r not in rels and os.path.isfile(os.path.join(out, r))]
    return write_manifest(out, "calibrate", chash, rels)


def _load_report(out, family, frac, chash) -> CalibrationReport:
    rel = _report_rel(family, frac)
    path = os.path.join(out, rel)
    if not os.path.isfile(path):
        raise ValidationError(f"no calibration report for {column_name(family, frac)}; run `riskbid calibrate`")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("config_hash") != chash:
        raise ValidationError(f"{rel} is stale; rerun `riskbid calibrate`")
    return CalibrationReport.from_dict(doc["report"])


def _table_value(v):
    return "" if v is None else repr(float(v))


def cmd_evaluate(cfg, log=print) -> dict:
    out = cfg["out"]
    chash = calibrate_hash(cfg)
    cal = read_manifest(out, "calibrate", chash, "calibrate")
    model = MarketModel.load(os.path.join(out, "model.json"))
    test = _load_split(cfg, out, "test", getattr(model, "vocabulary_", None))
    ctx = model.context(test.X)
    seed = sub_seed(cfg["seed"], "evaluate")

    columns, details, summaries, rels = [], [], [], []
    for family in cfg["families"]:
        for frac in cfg["budget_fracs"]:
            if _report_rel(family, frac) not in cal["artifacts"]:
                raise ValidationError(f"no calibration report for {column_name(family, frac)}; run `riskbid calibrate`")
            report = _load_report(out, family, frac, chash)
            params = report.params
            config = BatchConfig(params.budget, int(cfg["batch_size"]), int(cfg["n_batches"]), seed)
            summary, results = run_experiment(bid(ctx, params), test, config, model.customer_value)
            name = column_name(family, frac)
            for quantity in ("profit", "expense"):
                rel = os.path.join("cdf", f"{family}_{budget_label(frac)}_{quantity}.csv")
                os.makedirs(os.path.join(out, "cdf"), exist_ok=True)
                export_cdf(results, quantity, os.path.join(out, rel))
                rels.append(rel)
            columns.append(name)
            summaries.append(summary.to_dict())
            details.append({
                "column": name, "family": family, "budget_frac": float(frac), "budget": params.budget,
                "lambda": params.lam, "alpha": report.alpha_star, "flagged": report.flagged,
            })

    rows = {row: [s[key] for s in summaries] for row, key in METRIC_ROWS}
    doc = {"config_hash": evaluate_hash(cfg), "columns": columns, "policies": details, "rows": rows}
    _dump_json(os.path.join(out, "metrics.json"), doc)
    with open(os.path.join(out, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", *columns])
        for row, _ in METRIC_ROWS:
            w.writerow([row, *(_table_value(v) for v in rows[row])])
    rels += ["metrics.json", "metrics.csv"]
    manifest = write_manifest(out, "evaluate", evaluate_hash(cfg), rels)
    log(format_table(doc))
    return manifest


def format_table(doc: dict) -> str:
    header = ["metric", *doc["columns"]]
    body = []
    for row, _ in METRIC_ROWS:
        cells = []
        for v in doc["rows"][row]:
            cells.append("n/a" if v is None else f"{v:.4g}")
        body.append([row, *cells])
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header), *map(fmt, body)])


def cmd_report(cfg, log=print) -> str:
    out = cfg["out"]
    read_manifest(out, "evaluate", evaluate_hash(cfg), "evaluate")
    with open(os.path.join(out, "metrics.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    lines = ["# Backtest report", "", "| metric | " + " | ".join(doc["columns"]) + " |"]
    lines.append("|---" * (len(doc["columns"]) + 1) + "|")
    for row, _ in METRIC_ROWS:
        cells = ["n/a" if v is None else f"{v:.6g}" for v in doc["rows"][row]]
        lines.append(f"| {row} | " + " | ".join(cells) + " |")
    lines += ["", "| policy | budget | lambda | alpha | gate |", "|---|---|---|---|---|"]
    for p in doc["policies"]:
        alpha = "" if p["alpha"] is None else f"{p['alpha']:.6g}"
        gate = "" if p["family"] == "rnp" else ("failed" if p["flagged"] else "passed")
        lines.append(f"| {p['column']} | {p['budget']:.6g} | {p['lambda']:.6g} | {alpha} | {gate} |")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(text)
    log(format_table(doc))
    return text


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors; exit status 2 is reserved for calibration failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="root seed (overrides the config)")
    common.add_argument("--family", choices=("rnp", "rap"), action="append",
                        help="policy family; repeat for both (default: config value)")
    common.add_argument("--budget-frac", type=float, nargs="+", metavar="F",
                        help="budgets as fractions of the mean training price")
    common.add_argument("--out", metavar="DIR", help="output directory")

    parser = _Parser(prog="riskbid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write train/validation/test logs (synthetic, or copied from configured logs)",
        "train": "fit the click and price estimators",
        "calibrate": "find lambda (and alpha for rap) for every family and budget",
        "evaluate": "backtest the calibrated policies on the test log",
        "report": "render the metrics table as markdown",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.family, args.budget_frac, args.out)
        COMMANDS[args.command](cfg)
    except CalibrationError as exc:
        print(f"riskbid {args.command}: calibration failed: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"riskbid {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
