"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 audit violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import core
from .audit import Mechanism, audit_release
from .errors import FreqMaskError, StorageError
from .storage import atomic_write_file, load_finest_table, save_finest_table
from .synth import CENSUS_HIERARCHY, CENSUS_KEYS, CENSUS_UNITS, SynthSpec, write_synthetic
from .tables import (
    DEFAULT_KEY_THR,
    AggregationRequest,
    CellQuery,
    aggregate_table,
    build_finest_table,
    ingest_microdata,
    query_cell_trace,
)

EXIT_OK, EXIT_VALIDATION, EXIT_VIOLATION, EXIT_IO = 0, 1, 2, 3



class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for audit violations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _names(text: Optional[str]) -> Optional[list[str]]:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _ints(text: Optional[str]) -> Optional[list[int]]:
    if text is None:
        return None
    try:
        return [int(t) for t in _names(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _mapping(text: str) -> dict[str, int]:
    out = {}
    for item in _names(text):
        name, _, n = item.partition("=")
        if not n:
            raise argparse.ArgumentTypeError(f"expected name=count, got {item!r}")
        out[name] = int(n)
    return out


def _table_preview(frame, n: int = 6) -> str:
    return frame.head(n).to_string(index=False)


def run_build(args) -> int:
    view = ingest_microdata(
        args.input,
        hkey=_names(args.hkey),
        key=_names(args.key),
        hkey_rank=_ints(args.hkey_rank),
        key_thr=args.key_thr,
        sep=args.sep,
    )
    table = build_finest_table(view, k=args.mask_thr, seed=args.seed)
    save_finest_table(table, args.output_tb)
    print("Hierarchical variables (rank: name, units):")
    for rank, name in enumerate(table.hierarchy.names, start=1):
        print(f"  {rank}: {name} ({len(table.hier_categories[name])})")
    print("Key variables (name, categories):")
    for name in table.keys.names:
        print(f"  {name} ({len(table.keys.categories[name])})")
    if table.excluded_keys:
        print(f"Excluded keys (> {args.key_thr} categories): {', '.join(table.excluded_keys)}")
    print(f"Masking threshold: K = {table.k}")
    print(f"Seed: {table.seed}")
    print(f"Records: {view.n_records}, nonzero rows: {len(table)}")
    print(f"Output: {args.output_tb}")
    return EXIT_OK


def _request(args) -> AggregationRequest:
    return AggregationRequest(args.hkey_level, tuple(_names(args.key) or ()))


def run_aggregate(args) -> int:
    table = load_finest_table(args.input)
    agg, loss = aggregate_table(table, _request(args))
    public = agg.public_frame()
    sep = args.sep
    atomic_write_file(args.output_tb, public.to_csv(index=False, sep=sep, lineterminator="\n").encode())
    atomic_write_file(
        args.output_il, loss.to_frame().to_csv(index=False, sep=sep, lineterminator="\n").encode()
    )
    print("Header of aggregated masked table")
    print(_table_preview(public))
    print()
    print("Distribution of Information Loss")
    print(loss.to_frame().to_string(index=False))
    return EXIT_OK


def run_query(args) -> int:
    table = load_finest_table(args.input)
    keys = _names(args.key) or []
    values = _names(args.key_value) or []
    if len(keys) != len(values):
        raise FreqMaskError(f"--key lists {len(keys)} names but --key-value has {len(values)}")
    q = CellQuery(args.hkey_level, args.hkey_value, tuple(zip(keys, values)))
    result = query_cell_trace(table, q)
    print(result.masked)
    if args.verbose:
        print(f"# partition: {result.partition}", file=sys.stderr)
        print(f"# trace: {result.trace}", file=sys.stderr)
    return EXIT_OK


def run_audit(args) -> int:
    table = load_finest_table(args.input)
    mechanism = Mechanism.NAIVE_SCA_OF_SUM if args.unsafe_naive else Mechanism.ILBA
    report = audit_release(table, _request(args), mechanism=mechanism, seed=args.seed)
    if args.output:
        atomic_write_file(args.output, report.to_json().encode("utf-8"))
    summary = report.summary()
    print(
        f"audited {summary['audited_cells']} cells, "
        f"{summary['violating_cells']} violating, "
        f"{summary['low_ambiguity_cells']} below K-ambiguity"
    )
    for cell in report.violating[:10]:
        print(f"  VIOLATION {cell.group} |S0|={cell.s0_size} |S_K|={cell.sk_size}")
    return EXIT_OK if report.passed else EXIT_VIOLATION


def run_synth(args) -> int:
    hierarchy = tuple(_names(args.hkey))
    units = tuple(_ints(args.units))
    spec = SynthSpec(
        n_records=args.records,
        hierarchy=hierarchy,
        units_per_level=units,
        key_categories=_mapping(args.key_categories),
        skew=args.skew,
        seed=args.seed,
    )
    write_synthetic(spec, args.output, sep=args.sep)
    print(f"wrote {spec.n_records} records to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="freqmask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_level(p):
        p.add_argument("--input", required=True, help="finest-table directory")
        p.add_argument("--hkey-level", type=int, required=True)
        p.add_argument("--key", default=None, help="comma-separated key variables")

    p = sub.add_parser("build", help="build and save the SCA-masked finest-level table")
    p.add_argument("--input", required=True, help="microdata CSV, one row per person")
    p.add_argument("--hkey", required=True, help="comma-separated hierarchical variables")
    p.add_argument("--hkey-rank", default=None, help="rank of each --hkey entry (1 = coarsest)")
    p.add_argument("--key", default=None, help="key variables (default: all other columns)")
    p.add_argument("--mask-thr", type=int, default=core.DEFAULT_K)
    p.add_argument("--key-thr", type=int, default=DEFAULT_KEY_THR)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-tb", default="full_tb", help="output table directory")
    p.add_argument("--sep", default=",")
    p.set_defaults(func=run_build)

    p = sub.add_parser("aggregate", help="write an iLBA-masked aggregated table")
    common_level(p)
    p.add_argument("--output-tb", default="agg_tb.csv")
    p.add_argument("--output-il", default="info_loss.csv")
    p.add_argument("--sep", default=",")
    p.set_defaults(func=run_aggregate)

    p = sub.add_parser("query", help="masked frequency of a single cell")
    common_level(p)
    p.add_argument("--hkey-value", required=True)
    p.add_argument("--key-value", default=None, help="values matching --key, comma-separated")
    p.set_defaults(func=run_query)

    p = sub.add_parser("audit", help="attack an aggregated release and report violations")
    common_level(p)
    p.add_argument("--output", default=None, help="JSON audit report path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--unsafe-naive", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=run_audit)

    p = sub.add_parser("synth", help="generate synthetic census-style microdata")
    p.add_argument("--output", required=True)
    p.add_argument("--records", type=int, default=1_000_000)
    p.add_argument("--hkey", default=",".join(CENSUS_HIERARCHY))
    p.add_argument("--units", default=",".join(map(str, CENSUS_UNITS)),
                   help="number of units at each hierarchy level")
    p.add_argument("--key-categories",
                   default=",".join(f"{k}={v}" for k, v in CENSUS_KEYS.items()))
    p.add_argument("--skew", type=float, default=SynthSpec.skew)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sep", default=",")
    p.set_defaults(func=run_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except argparse.ArgumentTypeError as exc:
        print(f"freqmask: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (StorageError, OSError) as exc:
        print(f"freqmask: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FreqMaskError, argparse.ArgumentTypeError) as exc:
        print(f"freqmask: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
