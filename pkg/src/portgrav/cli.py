"""Batch command-line front end.

Every command computes all of its artifacts in memory first and only then
writes them, together with ``manifest.json``, into ``--out``; an input
error therefore leaves no partial output behind. Every flag can also be
set through an environment variable ``GRAVITY_<FLAG>`` (dashes become
underscores), e.g. ``GRAVITY_BASE_YEAR=2007``.

Exit codes: 0 success, 1 input error, 2 estimation did not converge.
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
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from . import __version__
from .design import BASELINE, TIMEVARYING, build_baseline_design, build_timevarying_design, detect_collinear
from .errors import GravityError, InputError, NotConverged
from .estimator import FitConfig, FitResult, fit_ppml
from .geo import Tagging, bin_holdings, build_distance_table, default_tagging, read_cities, read_distances
from .inference import CLUSTER_DIMENSIONS, cluster_vcov, coefficient_table
from .panel import (
    Basis,
    Instrument,
    Panel,
    assign_groups,
    full_universe,
    ingest_panel,
    merge_zero_fill,
    read_membership,
)
from .restatement import allocation_shares, destination_edges, passthrough_estimate, restatement_diff, top_destinations
from .synth import DgpConfig, generate_panel

log = logging.getLogger("portgrav")

ENV_PREFIX = "GRAVITY_"
BASIS_CHOICES = ("residency", "nationality", "cpis")
INSTRUMENT_CHOICES = ("debt", "equity")


@dataclass
class RunManifest:
    command: str
    params: dict
    inputs: dict[str, str] = field(default_factory=dict)
    out: str = ""
    version: str = __version__

    @property
    def config_hash(self) -> str:
        payload = json.dumps(
            {"command": self.command, "params": self.params, "inputs": self.inputs, "version": self.version},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        body = asdict(self)
        body["config_hash"] = self.config_hash
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _env_list(name: str) -> list[str]:
    raw = _env(name)
    return [p.strip() for p in raw.split(",") if p.strip()] if raw else []


def _env_flag(name: str) -> bool:
    return str(_env(name, "")).strip().lower() in ("1", "true", "yes", "on")


def _csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue().encode("utf-8")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _emit(out_dir: str, artifacts: dict[str, bytes], manifest: RunManifest) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in sorted(artifacts.items()):
        (out / name).write_bytes(data)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")


def _params(args: argparse.Namespace) -> dict:
    skip = {"func", "verbose", "out", "command"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = list(v) if isinstance(v, (list, tuple)) else v
    return out


def _manifest(args: argparse.Namespace, inputs: dict[str, str | None]) -> RunManifest:
    hashed = {}
    for role, path in sorted(inputs.items()):
        if path:
            hashed[role] = f"{os.path.basename(path)}:{_sha256(path)}"
    return RunManifest(command=args.command, params=_params(args), inputs=hashed, out=str(args.out))


def _load_panel(path: str, args, basis: str | None = None) -> Panel:
    panel = ingest_panel(path, basis or args.basis, delimiter=args.delimiter)
    if getattr(args, "zero_fill", False):
        panel = merge_zero_fill(panel, full_universe(panel), missing_as_zero=args.missing_as_zero)
    return panel


def _load_distances(args, countries) -> object:
    if args.distances:
        return read_distances(args.distances)
    if args.cities:
        return build_distance_table(read_cities(args.cities), countries=countries)
    raise InputError("either --distances or --cities is required")


def _panel_countries(panel: Panel) -> list[str]:
    return sorted(panel.reporters | panel.counterparties)


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    panel = _load_panel(args.input, args)
    buf = io.StringIO()
    panel.to_csv(buf, delimiter=",")
    artifacts = {
        "panel.csv": buf.getvalue().encode("utf-8"),
        "ingest_report.json": _json_bytes(
            {
                **asdict(panel.report),
                "basis": panel.basis.value,
                "reporters": len(panel.reporters),
                "counterparties": len(panel.counterparties),
                "years": panel.years,
                "observations_after_fill": len(panel),
                "zeros": int((panel.frame["value"] == 0).sum()),
            }
        ),
    }
    _emit(args.out, artifacts, _manifest(args, {"input": args.input}))
    return 0


def cmd_distance(args) -> int:
    if args.distances:
        table = read_distances(args.distances)
    else:
        cities = read_cities(args.cities)
        table = build_distance_table(cities)
    f = table.to_frame()
    artifacts = {"distances.csv": _csv_bytes(["reporter", "counterparty", "dist_km"], f.itertuples(index=False))}
    _emit(args.out, artifacts, _manifest(args, {"cities": args.cities, "distances": args.distances}))
    return 0


def cmd_estimate(args) -> int:
    panel = _load_panel(args.panel, args)
    groups = assign_groups(
        panel, read_membership(args.groups), args.exclude_singapore, exclude=args.exclude_reporter
    )
    distances = _load_distances(args, _panel_countries(panel))
    if args.spec == BASELINE:
        design = build_baseline_design(panel, distances, groups, instrument=args.instrument)
    else:
        design = build_timevarying_design(
            panel, distances, groups, args.base_year, include_row=args.include_row, instrument=args.instrument
        )
    design = detect_collinear(design)
    config = FitConfig(max_iter_irls=args.max_iter, separation_policy=args.separation)

    code = 0
    try:
        fit = fit_ppml(design, config)
    except NotConverged as exc:
        log.error("%s", exc)
        if not isinstance(exc.partial, FitResult):
            return 2
        fit = exc.partial
        code = 2
    vcov = cluster_vcov(fit, args.cluster)
    table = coefficient_table(fit, vcov)

    summary = fit.summary()
    summary["cluster"] = {"dimension": vcov.cluster_dimension, "n_clusters": vcov.n_clusters, "dof_correction": vcov.dof_correction}
    summary["vcov"] = {"names": list(vcov.names), "matrix": vcov.matrix.tolist()}
    artifacts = {
        "coefficients.csv": _csv_bytes(list(table.columns), table.itertuples(index=False)),
        "fit.json": _json_bytes(summary),
        "design.json": _json_bytes(design.diagnostics()),
        "convergence.csv": _csv_bytes(
            ["iteration", "deviance", "rel_change", "max_step", "step"],
            [(h["iteration"], h["deviance"], h["rel_change"], h["max_step"], h["step"]) for h in fit.history],
        ),
        "dropped.csv": _csv_bytes(
            ["reporter", "counterparty", "year", "instrument", "reason"],
            [(k[0], k[1], int(k[2]), k[3], r) for k, r in fit.dropped],
        ),
        "collinearity.csv": _csv_bytes(
            ["column", "stage"],
            [(c, "design") for c in design.collinearity_report] + [(c, "after_drops") for c in fit.dropped_columns],
        ),
    }
    inputs = {"panel": args.panel, "groups": args.groups, "cities": args.cities, "distances": args.distances}
    _emit(args.out, artifacts, _manifest(args, inputs))
    return code


def _tagging(args, groups) -> Tagging:
    if not args.tag:
        return default_tagging(groups)
    mapping = {}
    for item in args.tag:
        code, _, label = item.partition("=")
        if not label:
            raise InputError(f"--tag expects CODE=LABEL, got {item!r}")
        mapping[code.strip()] = label.strip()
    return Tagging(mapping, default=args.other_tag)


def cmd_bins(args) -> int:
    panel = _load_panel(args.panel, args)
    groups = None
    if args.groups:
        groups = assign_groups(panel, read_membership(args.groups), args.exclude_singapore, exclude=args.exclude_reporter)
    distances = _load_distances(args, _panel_countries(panel))
    tagging = _tagging(args, groups)
    hist = bin_holdings(
        panel,
        distances,
        groups,
        args.bin_width,
        args.n_bins,
        tagging,
        year=args.year,
        instrument=args.instrument,
    )
    artifacts = {}
    totals = {}
    w = hist.bin_width_km
    for g, y, inst in hist.slices():
        rows = []
        for b in range(hist.n_bins):
            for t in tagging.labels:
                rows.append((b, b * w, (b + 1) * w, t, float(hist.exact[(g, y, inst, b, t)] / 1000)))
        artifacts[f"bins_{g}_{y}_{inst}.csv"] = _csv_bytes(["bin", "km_lo", "km_hi", "tag", "usd_bn"], rows)
        mass = sum((v for k, v in hist.exact.items() if k[:3] == (g, y, inst)), Fraction(0))
        totals[f"{g}/{y}/{inst}"] = float(mass / 1000)
    artifacts["bins_totals.json"] = _json_bytes({"usd_bn": totals})
    inputs = {"panel": args.panel, "groups": args.groups, "cities": args.cities, "distances": args.distances}
    _emit(args.out, artifacts, _manifest(args, inputs))
    return 0


def cmd_shares(args) -> int:
    panel = _load_panel(args.panel, args)
    groups = assign_groups(panel, read_membership(args.groups))
    reporters = groups.members(args.reporter_group) if args.reporter_group else None
    table = allocation_shares(panel, groups, args.year, args.instrument, reporters)
    artifacts = {
        "shares.csv": _csv_bytes(
            ["reporter", "year", "share_oecd", "share_asean", "share_row"],
            table[["reporter", "year", "share_oecd", "share_asean", "share_row"]].itertuples(index=False),
        )
    }
    _emit(args.out, artifacts, _manifest(args, {"panel": args.panel, "groups": args.groups}))
    return 0


def cmd_topk(args) -> int:
    panel = _load_panel(args.panel, args)
    reporters = None
    if args.reporter_group:
        if not args.groups:
            raise InputError("--reporter-group needs --groups")
        reporters = assign_groups(panel, read_membership(args.groups)).members(args.reporter_group)
    instrument = args.instrument
    top = top_destinations(panel, args.year, instrument, args.k, reporters)
    edges = destination_edges(panel, args.year, instrument, args.k, reporters)
    artifacts = {
        "topk.csv": _csv_bytes(list(top.columns), top.itertuples(index=False)),
        "edges.csv": _csv_bytes(["source", "destination", "value_usd_mn"], edges.itertuples(index=False)),
    }
    _emit(args.out, artifacts, _manifest(args, {"panel": args.panel, "groups": args.groups}))
    return 0


def cmd_restate_diff(args) -> int:
    res = ingest_panel(args.residency, Basis.RESIDENCY if args.residency_basis == "residency" else Basis.CPIS, delimiter=args.delimiter)
    nat = ingest_panel(args.nationality, Basis.NATIONALITY, delimiter=args.delimiter)
    ranking = restatement_diff(res, nat, args.year, args.k, instrument=args.instrument, by=args.by)
    table = ranking.table()
    artifacts = {"restate_diff.csv": _csv_bytes(["reporter", "counterparty", "diff_usd_mn"], table.itertuples(index=False))}
    if args.hypothesis:
        if not args.unit:
            raise InputError("--hypothesis needs --unit (the reporter whose diffs are attributed)")
        hyp = []
        for item in args.hypothesis:
            parts = item.split(":")
            if len(parts) not in (2, 3):
                raise InputError(f"--hypothesis expects HAVEN:TARGET[:FRACTION], got {item!r}")
            hyp.append((parts[0], parts[1], float(parts[2])) if len(parts) == 3 else (parts[0], parts[1]))
        est = passthrough_estimate(ranking, hyp, unit=args.unit)
        artifacts["passthrough.json"] = _json_bytes(
            {
                "label": est.label,
                "unit": args.unit,
                "total_attributed": est.total,
                "attributions": [asdict(a) for a in est.attributions],
            }
        )
    _emit(args.out, artifacts, _manifest(args, {"residency": args.residency, "nationality": args.nationality}))
    return 0


def _parse_years(text: str) -> tuple[int, ...]:
    if "-" in text:
        a, b = text.split("-", 1)
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(t) for t in text.split(","))


def cmd_synth(args) -> int:
    beta = {"ASEAN": -1.0, "OECD": -0.5, "ROW": -0.8}
    for item in args.beta or []:
        g, _, v = item.partition("=")
        beta[g.strip().upper()] = float(v)
    config = DgpConfig(
        n_reporters=args.n_reporters,
        n_counterparties=args.n_counterparties,
        years=_parse_years(args.years),
        true_beta=beta,
        zero_inflation=args.zero_inflation,
        seed=args.seed,
        instrument=Instrument.parse(args.instrument).value,
    )
    data = generate_panel(config)
    buf = io.StringIO()
    data.panel.to_csv(buf)
    cities = _csv_bytes(["country", "lat", "lon"], [(c, p.lat, p.lon) for c, p in sorted(data.cities.items())])
    artifacts = {
        "panel.csv": buf.getvalue().encode("utf-8"),
        "cities.csv": cities,
        "groups.csv": _csv_bytes(["country", "group"], sorted(data.membership)),
        "truth.json": _json_bytes(data.truth),
    }
    _emit(args.out, artifacts, _manifest(args, {}))
    return 0


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser, panel_flag: str | None = "--panel") -> None:
    if panel_flag:
        p.add_argument(panel_flag, default=_env(panel_flag.strip("-")), required=_env(panel_flag.strip("-")) is None)
    p.add_argument("--basis", choices=BASIS_CHOICES, default=_env("basis", "nationality"))
    p.add_argument("--delimiter", default=_env("delimiter", ","))
    p.add_argument("--zero-fill", action="store_true", default=_env_flag("zero_fill"),
                   help="complete the panel with explicit zeros over reporters x partners x years")
    p.add_argument("--missing-as-zero", action="store_true", default=_env_flag("missing_as_zero"))
    p.add_argument("--out", default=_env("out"), required=_env("out") is None)


def _add_geo(p: argparse.ArgumentParser) -> None:
    p.add_argument("--distances", default=_env("distances"), help="precomputed reporter,counterparty,dist_km file")
    p.add_argument("--cities", default=_env("cities"), help="country,lat,lon file of largest cities")


def _add_groups(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--groups", default=_env("groups"), required=required and _env("groups") is None)
    p.add_argument("--exclude-singapore", action="store_true", default=_env_flag("exclude_singapore"))
    p.add_argument("--exclude-reporter", nargs="+", default=_env_list("exclude_reporter"), metavar="CODE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portgrav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a holdings table and write it in canonical form")
    _add_common(p, "--input")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("distance", help="great-circle distance table from city coordinates")
    p.add_argument("--out", default=_env("out"), required=_env("out") is None)
    _add_geo(p)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("estimate", help="PPML gravity estimation with clustered inference")
    _add_common(p)
    _add_groups(p, required=True)
    _add_geo(p)
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument"))
    p.add_argument("--spec", choices=(BASELINE, TIMEVARYING), default=_env("spec", BASELINE))
    p.add_argument("--base-year", type=int, default=int(_env("base_year", 2007)))
    p.add_argument("--include-row", action="store_true", default=_env_flag("include_row"))
    p.add_argument("--cluster", choices=CLUSTER_DIMENSIONS, default=_env("cluster", "pair"))
    p.add_argument("--separation", choices=("drop", "error"), default=_env("separation", "drop"))
    p.add_argument("--max-iter", type=int, default=int(_env("max_iter", 200)))
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bins", help="holdings histogram over 2000-km distance bins")
    _add_common(p)
    _add_groups(p, required=False)
    _add_geo(p)
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument"))
    p.add_argument("--year", type=int, default=int(_env("year")) if _env("year") else None)
    p.add_argument("--bin-width", type=float, default=float(_env("bin_width", 2000.0)))
    p.add_argument("--n-bins", type=int, default=int(_env("n_bins", 10)))
    p.add_argument("--tag", nargs="+", default=_env_list("tag"), metavar="CODE=LABEL")
    p.add_argument("--other-tag", default=_env("other_tag", "Other"))
    p.set_defaults(func=cmd_bins)

    p = sub.add_parser("shares", help="allocation shares to OECD / ASEAN / ROW destinations")
    _add_common(p)
    p.add_argument("--groups", default=_env("groups"), required=_env("groups") is None)
    p.add_argument("--year", type=int, default=int(_env("year")) if _env("year") else None, required=_env("year") is None)
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument", "debt"))
    p.add_argument("--reporter-group", default=_env("reporter_group"))
    p.set_defaults(func=cmd_shares)

    p = sub.add_parser("topk", help="top-k destinations and network edge list")
    _add_common(p)
    p.add_argument("--groups", default=_env("groups"))
    p.add_argument("--reporter-group", default=_env("reporter_group"))
    p.add_argument("--year", type=int, default=int(_env("year")) if _env("year") else None, required=_env("year") is None)
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument"))
    p.add_argument("--k", type=int, default=int(_env("k", 10)))
    p.set_defaults(func=cmd_topk)

    p = sub.add_parser("restate-diff", help="top changes from residency to nationality basis")
    p.add_argument("--residency", default=_env("residency"), required=_env("residency") is None)
    p.add_argument("--residency-basis", choices=("residency", "cpis"), default=_env("residency_basis", "residency"))
    p.add_argument("--nationality", default=_env("nationality"), required=_env("nationality") is None)
    p.add_argument("--year", type=int, default=int(_env("year")) if _env("year") else None, required=_env("year") is None)
    p.add_argument("--k", type=int, default=int(_env("k", 10)))
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument"))
    p.add_argument("--by", choices=("reporter", "counterparty"), default=_env("by", "reporter"))
    p.add_argument("--hypothesis", nargs="+", default=_env_list("hypothesis"), metavar="HAVEN:TARGET[:FRACTION]")
    p.add_argument("--unit", default=_env("unit"))
    p.add_argument("--delimiter", default=_env("delimiter", ","))
    p.add_argument("--out", default=_env("out"), required=_env("out") is None)
    p.set_defaults(func=cmd_restate_diff)

    p = sub.add_parser("synth", help="synthetic gravity panel with known elasticities")
    p.add_argument("--n-reporters", type=int, default=int(_env("n_reporters", 50)))
    p.add_argument("--n-counterparties", type=int, default=int(_env("n_counterparties", 100)))
    p.add_argument("--years", default=_env("years", "2007-2011"), help="e.g. 2007-2017 or 2007,2008")
    p.add_argument("--beta", nargs="+", default=_env_list("beta"), metavar="GROUP=VALUE")
    p.add_argument("--zero-inflation", type=float, default=float(_env("zero_inflation", 0.0)))
    p.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    p.add_argument("--instrument", choices=INSTRUMENT_CHOICES, default=_env("instrument", "debt"))
    p.add_argument("--out", default=_env("out"), required=_env("out") is None)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except GravityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, NotConverged) else 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
