"""
The ``taxorag`` command line tool.

Exit status: 0 on success, 1 for usage and configuration errors, 2 when the
provider gave up (or too many documents failed), 3 when an input file could
not be parsed.
"""

import argparse
import asyncio
import json
import logging
import sys

from pydantic import ValidationError

from taxorag.cache import EmbeddingCache
from taxorag.classifier import Mode
from taxorag.config import Unset, load_config
from taxorag.errors import (
    ConfigError, ParseError, ProviderError, RunAborted, TaxoragError)
from taxorag.evaluation import (
    MetricsReport, compare, format_comparison, format_table)
from taxorag.harness import (
    build_run_index, evaluate_run, load_dataset, make_embedder,
    retrieve_debug, run)

__all__ = [
    "main",
]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROVIDER = 2
EXIT_PARSE = 3


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, "{}: error: {}\n".format(self.prog, message))


def level_value(convert):
    """Parse ``LEVEL=VALUE`` arguments."""
    def parse(text):
        level, sep, value = text.partition("=")
        try:
            if not sep:
                raise ValueError(text)
            return int(level), convert(value)
        except ValueError:
            raise argparse.ArgumentTypeError(
                "expected LEVEL=VALUE, got {!r}".format(text)) from None
    return parse


def setting(text):
    """
    Parse ``PATH=VALUE`` arguments. ``VALUE`` is read as JSON; text which
    is not valid JSON is taken as a plain string.
    """
    path, sep, value = text.partition("=")
    if not sep or not path:
        raise argparse.ArgumentTypeError(
            "expected PATH=VALUE, got {!r}".format(text))
    try:
        return path, json.loads(value)
    except json.JSONDecodeError:
        return path, value


def overrides_from(args):
    """Dotted-path config overrides for every flag given."""
    overrides = {
        "dataset.path": args.dataset,
        "dataset.preset": args.preset,
        "dataset.format": args.format,
        "dataset.taxonomy_path": args.taxonomy,
        "dataset.taxonomy_header": args.taxonomy_header,
        "dataset.sample_size": args.sample_size,
        "dataset.sample_seed": args.sample_seed,
        "mode": args.mode,
        "workers": args.workers,
        "chat.provider": args.provider,
        "embedding.provider": args.embedding_provider,
        "embedding.cache_dir": args.cache_dir,
        "output_dir": args.output_dir,
    }
    for level, k in args.k or ():
        overrides["retrieval.k_per_level.{}".format(level)] = k
    for level, tau in args.tau or ():
        overrides["retrieval.mode"] = "threshold"
        overrides["retrieval.tau_per_level.{}".format(level)] = tau
    for path, value in args.set or ():
        overrides[path] = value
    return overrides


def _config(args):
    return load_config(args.config, overrides_from(args))


def ingest_check(args):
    documents, taxonomy = load_dataset(_config(args))
    print("{} documents".format(len(documents)))
    for level in range(1, taxonomy.depth + 1):
        print("level {}: {} labels".format(
            level, len(taxonomy.labels_at_level(level))))
    return EXIT_OK


def build_index_command(args):
    config = _config(args)
    _, taxonomy = load_dataset(config)
    embedder = make_embedder(config.embedding)
    index = asyncio.run(build_run_index(config, taxonomy, embedder))
    print("{} labels indexed, {} provider calls, {} vectors cached".format(
        len(index), embedder.provider_calls, len(embedder.cache)))
    if isinstance(embedder.cache, EmbeddingCache) and embedder.cache.dropped:
        print("{} corrupt cache records dropped".format(embedder.cache.dropped))
    return EXIT_OK


def classify(args):
    result = asyncio.run(run(_config(args)))
    if result.metrics is not None:
        print(format_table(result.metrics))
    print("results written to {}".format(result.output_dir))
    return EXIT_OK


def evaluate_command(args):
    print(format_table(evaluate_run(_config(args), args.report)))
    return EXIT_OK


def _load_report(path):
    try:
        return MetricsReport.load(path)
    except ValidationError as e:
        raise ParseError("{} is not a metrics report: {}".format(
            path, e.errors()[0]["msg"])) from None


def compare_command(args):
    report_a = _load_report(args.report_a)
    report_b = _load_report(args.report_b)
    comparison = compare(report_a, report_b,
                         label_a=report_a.mode or "a",
                         label_b=report_b.mode or "b")
    print(format_comparison(comparison))
    return EXIT_OK


def retrieve_debug_command(args):
    config = _config(args)
    text = args.text
    if text is None:
        documents, _ = load_dataset(config)
        matching = [d for d in documents if d.id == args.document]
        if not matching:
            raise ConfigError("no document {!r}".format(args.document))
        text = matching[0].text
    print(asyncio.run(retrieve_debug(config, text)).format())
    return EXIT_OK


def _add_run_options(parser):
    parser.add_argument("--config", "-c", default=None,
                        help="JSON run configuration file")
    parser.add_argument("--dataset", default=Unset,
                        help="dataset file (dataset.path)")
    parser.add_argument("--preset", default=Unset,
                        choices=["amazon", "dbpedia", "wos"])
    parser.add_argument("--format", default=Unset,
                        choices=["csv", "tsv", "jsonl"])
    parser.add_argument("--taxonomy", default=Unset,
                        help="explicit taxonomy file")
    parser.add_argument("--no-taxonomy-header", dest="taxonomy_header",
                        action="store_false", default=Unset,
                        help="the delimited taxonomy file has no header "
                             "row")
    parser.add_argument("--mode", default=Unset,
                        choices=[mode.value for mode in Mode])
    parser.add_argument("--workers", type=int, default=Unset)
    parser.add_argument("--k", type=level_value(int), action="append",
                        metavar="LEVEL=K", help="candidates kept at a level")
    parser.add_argument("--tau", type=level_value(float), action="append",
                        metavar="LEVEL=TAU",
                        help="distance threshold at a level")
    parser.add_argument("--provider", default=Unset,
                        choices=["openai", "candidate-echo", "scripted"],
                        help="chat provider")
    parser.add_argument("--embedding-provider", default=Unset,
                        choices=["openai", "hashing"])
    parser.add_argument("--cache-dir", default=Unset,
                        help="embedding cache directory")
    parser.add_argument("--sample-size", type=int, default=Unset)
    parser.add_argument("--sample-seed", type=int, default=Unset)
    parser.add_argument("--output-dir", default=Unset)
    parser.add_argument("--set", type=setting, action="append",
                        metavar="PATH=VALUE",
                        help="set any configuration field, e.g. "
                             "chat.generation.temperature=0.2")


def make_parser():
    parser = ArgumentParser(
        prog="taxorag",
        description="Retrieval-augmented zero-shot hierarchical text "
                    "classification.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    commands = [
        ("ingest-check", ingest_check, "read and validate a dataset"),
        ("build-index", build_index_command, "embed the taxonomy's labels"),
        ("classify", classify, "classify and score a dataset"),
        ("evaluate", evaluate_command, "re-score a run report"),
        ("retrieve-debug", retrieve_debug_command,
         "show the retrieval for one text"),
    ]
    for name, function, help_text in commands:
        subparser = subparsers.add_parser(name, help=help_text)
        _add_run_options(subparser)
        subparser.set_defaults(func=function)
        if name == "evaluate":
            subparser.add_argument("--report", default=None,
                                   help="run report (default: in output dir)")
        if name == "retrieve-debug":
            target = subparser.add_mutually_exclusive_group(required=True)
            target.add_argument("--text")
            target.add_argument("--document", help="a document id")

    subparser = subparsers.add_parser(
        "compare", help="put two metrics reports side by side")
    subparser.add_argument("report_a")
    subparser.add_argument("report_b")
    subparser.set_defaults(func=compare_command)

    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except ParseError as e:
        print("taxorag: parse error: {}".format(e), file=sys.stderr)
        return EXIT_PARSE
    except (ProviderError, RunAborted) as e:
        print("taxorag: {}".format(e), file=sys.stderr)
        return EXIT_PROVIDER
    except ConfigError as e:
        print("taxorag: configuration error: {}".format(e), file=sys.stderr)
        return EXIT_CONFIG
    except TaxoragError as e:
        print("taxorag: {}".format(e), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print("taxorag: {}".format(e), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
