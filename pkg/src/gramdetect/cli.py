"""Command-line pipeline: generate, train, extract, detect, simplify, evaluate.

Each stage reads and writes plain files so intermediates stay
inspectable.  Options resolve in three layers: command-line flag, then
config-file entry (key=value lines, keys matching the flag names with
underscores), then built-in default.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 missing
upstream artifact.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import anomaly, corpus, evalkit, grammar, policy, simplify
from .parse import parse, tree_to_text

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _read_config(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config file: {exc}") from None
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep or not key.strip():
            raise CliError(EXIT_CONFIG, f"config line {line_no}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


class _Options:
    """Flag-over-config-over-default resolution for one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = dict(_read_config(args.config)) if args.config else {}

    def get(self, dest: str, cast, default):
        # pop unconditionally so a flag override does not leave the
        # config entry behind to trip the unknown-key check
        raw = self.config.pop(dest, None)
        value = getattr(self.args, dest, None)
        if value is not None:
            return value
        if raw is not None:
            try:
                return cast(raw)
            except ValueError as exc:
                raise CliError(EXIT_CONFIG, f"config key {dest}: {exc}") from None
        return default

    def finish(self) -> None:
        if self.config:
            unknown = ", ".join(sorted(self.config))
            raise CliError(EXIT_CONFIG, f"unknown config keys: {unknown}")


def _require_upstream(path: str) -> Path:
    resolved = Path(path)
    if not resolved.exists():
        raise CliError(EXIT_MISSING, f"missing upstream artifact: {path}")
    return resolved


def _load_sentences(path: str) -> list[str]:
    _require_upstream(path)
    try:
        return corpus.load_sentences(path)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None


def _train_config(opts: _Options, defaults: policy.TrainConfig) -> policy.TrainConfig:
    return policy.TrainConfig(
        epochs=opts.get("epochs", int, defaults.epochs),
        rng_seed=opts.get("seed", int, defaults.rng_seed),
        learning_rate=opts.get("learning_rate", float, defaults.learning_rate),
        temperature=opts.get("temperature", float, defaults.temperature),
        alpha_anchor=opts.get("alpha_anchor", float, defaults.alpha_anchor),
        smoothing=opts.get("smoothing", float, defaults.smoothing),
        truncation=opts.get("truncation", int, defaults.truncation),
    )


def cmd_generate(args: argparse.Namespace) -> int:
    opts = _Options(args)
    format_name = opts.get("format", str, None)
    if not format_name:
        raise CliError(EXIT_CONFIG, "--format is required")
    seed = opts.get("seed", int, 0)
    out_dir = opts.get("out", str, None)
    if not out_dir:
        raise CliError(EXIT_CONFIG, "--out is required")
    sizes = corpus.SplitSizes(
        train=opts.get("train_size", int, 120),
        extract=opts.get("extract_size", int, 100),
        validate=opts.get("validate_size", int, 100),
        evaluate_nominal=opts.get("eval_nominal_size", int, 100),
        evaluate_anomalous=opts.get("eval_anomalous_size", int, 100),
    )
    opts.finish()
    spec = evalkit.get_format(format_name)
    splits = evalkit.build_dataset(format_name, seed, sizes)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    records: list[corpus.ManifestRecord] = []
    try:
        for name, sentences in splits.named():
            corpus.save_sentences(out / f"{name}.txt", sentences)
            records.extend(corpus.ManifestRecord(name, s) for s in sentences)
        for kind in spec.anomaly_kinds:
            corrupted, specs = evalkit.corrupt_batch(splits.evaluate_anomalous, kind, seed)
            corpus.save_sentences(out / f"evaluate_anomalous.{kind.value}.txt", corrupted)
            records.extend(
                corpus.ManifestRecord(f"evaluate_anomalous:{kind.value}", bad, anomaly_spec)
                for bad, anomaly_spec in zip(corrupted, specs)
            )
        corpus.write_manifest(out / "manifest.jsonl", records)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    print(f"wrote {len(records)} sentences across splits to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    opts = _Options(args)
    in_path = opts.get("in_path", str, None)
    out_path = opts.get("out", str, None)
    if not in_path or not out_path:
        raise CliError(EXIT_CONFIG, "--in and --out are required")
    cfg = _train_config(opts, policy.TrainConfig())
    opts.finish()
    sentences = _load_sentences(in_path)
    if not sentences:
        raise CliError(EXIT_CONFIG, f"no sentences in {in_path}")
    trained = policy.train(sentences, cfg)
    try:
        policy.save_policy(out_path, trained)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    print(f"trained on {len(sentences)} sentences; {len(trained.weights)} weights -> {out_path}")
    return 0


def _load_policy(path: str) -> policy.TabularPolicy:
    _require_upstream(path)
    try:
        return policy.load_policy(path)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except policy.PolicyFileError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_model(path: str) -> grammar.GrammarModel:
    _require_upstream(path)
    try:
        return grammar.load_model(path)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except grammar.ParseError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def cmd_extract(args: argparse.Namespace) -> int:
    opts = _Options(args)
    policy_path = opts.get("policy", str, None)
    in_path = opts.get("in_path", str, None)
    out_path = opts.get("out", str, None)
    if not policy_path or not in_path or not out_path:
        raise CliError(EXIT_CONFIG, "--policy, --in and --out are required")
    threshold = opts.get("threshold", int, 0)
    dump_trees = opts.get("dump_trees", str, None)
    graph_path = opts.get("graph", str, None)
    opts.finish()
    loaded = _load_policy(policy_path)
    sentences = _load_sentences(in_path)
    trees = [parse(s, loaded) for s in sentences]
    model = grammar.build_model(trees)
    if threshold > 0:
        model = grammar.filter_by_frequency(model, threshold)
    _write_text(out_path, grammar.model_to_text(model))
    if dump_trees:
        _write_text(dump_trees, "".join(tree_to_text(t) + "\n" for t in trees))
    if graph_path:
        _write_text(graph_path, grammar.model_to_graph(model))
    print(
        f"extracted {len(model.rules)} distinct rules, "
        f"{len(model.constraints)} distinct constraints -> {out_path}"
    )
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    opts = _Options(args)
    policy_path = opts.get("policy", str, None)
    model_path = opts.get("model", str, None)
    in_path = opts.get("in_path", str, None)
    if not policy_path or not model_path or not in_path:
        raise CliError(EXIT_CONFIG, "--policy, --model and --in are required")
    use_constraints = opts.get("use_constraints", _parse_bool, False)
    descendants = opts.get("descendant_coverage", _parse_bool, False)
    verbose = opts.get("verbose", _parse_bool, False)
    out_path = opts.get("out", str, None)
    opts.finish()
    loaded = _load_policy(policy_path)
    model = _load_model(model_path)
    sentences = _load_sentences(in_path)
    lines = []
    n_anomalous = 0
    for sentence in sentences:
        verdict = anomaly.detect(sentence, loaded, model, use_constraints, descendants)
        n_anomalous += verdict.anomalous
        lines.append(verdict.to_json(verbose))
    body = "".join(line + "\n" for line in lines)
    if out_path:
        _write_text(out_path, body)
    else:
        sys.stdout.write(body)
    print(f"{n_anomalous}/{len(sentences)} anomalous", file=sys.stderr)
    return 0


def cmd_simplify(args: argparse.Namespace) -> int:
    opts = _Options(args)
    policy_path = opts.get("policy", str, None)
    model_path = opts.get("model", str, None)
    in_path = opts.get("in_path", str, None)
    out_path = opts.get("out", str, None)
    if not policy_path or not model_path or not in_path or not out_path:
        raise CliError(EXIT_CONFIG, "--policy, --model, --in and --out are required")
    threshold = opts.get("threshold", int, 100)
    coverage_name = opts.get("coverage", str, simplify.CoverageMode.SYMBOLIC.value)
    spans_path = opts.get("spans", str, None)
    opts.finish()
    try:
        mode = simplify.CoverageMode(coverage_name)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"unknown coverage mode {coverage_name!r}") from None
    loaded = _load_policy(policy_path)
    model = grammar.filter_by_frequency(_load_model(model_path), threshold)
    sentences = _load_sentences(in_path)
    simplified = simplify.simplify_batch(sentences, loaded, model, mode)
    _write_text(out_path, "".join(rec.text + "\n" for rec in simplified))
    if spans_path:
        try:
            simplify.write_span_map(spans_path, [rec.spans for rec in simplified])
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from None
    n_changed = sum(rec.text != s for rec, s in zip(simplified, sentences))
    print(f"simplified {n_changed}/{len(sentences)} sentences -> {out_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    opts = _Options(args)
    format_name = opts.get("format", str, None)
    if not format_name:
        raise CliError(EXIT_CONFIG, "--format is required")
    spec = evalkit.get_format(format_name)
    seed = opts.get("seed", int, 0)
    trials_wanted = opts.get("trials", int, 30)
    jobs = opts.get("jobs", int, 1)
    two_pass = opts.get("two_pass", _parse_bool, False)
    use_constraints = opts.get("use_constraints", _parse_bool, False)
    threshold = opts.get("threshold", int, 100 if two_pass else 0)
    default_coverage = (
        simplify.CoverageMode.TOPOLOGICAL
        if format_name == "simple-json-stream"
        else simplify.CoverageMode.SYMBOLIC
    )
    coverage_name = opts.get("coverage", str, default_coverage.value)
    train_cfg = _train_config(opts, spec.train_defaults)
    out_dir = opts.get("out", str, None)
    opts.finish()
    if trials_wanted < 1:
        raise CliError(EXIT_CONFIG, "--trials must be >= 1")
    try:
        mode = simplify.CoverageMode(coverage_name)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"unknown coverage mode {coverage_name!r}") from None

    splits = evalkit.build_dataset(format_name, seed, corpus.SplitSizes())
    seeds = [seed + i for i in range(trials_wanted)]
    extra_lines: list[str] = []
    if two_pass:
        cfg = simplify.TwoPassConfig(
            train_cfg=train_cfg,
            threshold=threshold,
            coverage=mode,
            use_constraints=use_constraints,
        )
        trials = []
        missed_total = 0
        missed_collapsed = 0
        for trial_seed in seeds:
            trial, result = evalkit.run_two_pass_trial(
                trial_seed, splits, cfg, spec.anomaly_kinds
            )
            trials.append(trial)
            for verdict in result.anomalous_verdicts:
                if not verdict.anomalous:
                    missed_total += 1
                    missed_collapsed += verdict.sentence == "&"
        extra_lines.append(
            f"Missed detections (first anomaly kind): {missed_total}; "
            f"collapsed to a single '&': {missed_collapsed}"
        )
    else:
        detect_cfg = evalkit.DetectConfig(
            use_constraints=use_constraints, frequency_threshold=threshold
        )
        trials = evalkit.run_trials(
            seeds, splits, train_cfg, detect_cfg, spec.anomaly_kinds, jobs=jobs
        )
    table = evalkit.render_table(trials)
    sys.stdout.write(table)
    for line in extra_lines:
        print(line)
    if out_dir:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            evalkit.write_trials(out / "trials.jsonl", trials)
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from None
        _write_text(out / "summary.txt", table + "".join(l + "\n" for l in extra_lines))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--alpha-anchor", dest="alpha_anchor", type=float)
    parser.add_argument("--smoothing", type=float)
    parser.add_argument("--truncation", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gramdetect",
        description="Grammar extraction and anomaly detection for unknown text formats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate dataset splits for a format")
    _add_common(p)
    p.add_argument("--format", choices=sorted(evalkit.FORMATS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--extract-size", dest="extract_size", type=int)
    p.add_argument("--validate-size", dest="validate_size", type=int)
    p.add_argument("--eval-nominal-size", dest="eval_nominal_size", type=int)
    p.add_argument("--eval-anomalous-size", dest="eval_anomalous_size", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a merge policy on nominal sentences")
    _add_common(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="parse sentences and extract a grammar model")
    _add_common(p)
    p.add_argument("--policy")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--threshold", type=int, help="drop rules seen fewer times (0 = keep all)")
    p.add_argument("--dump-trees", dest="dump_trees")
    p.add_argument("--graph", help="write the constraint graph node/edge list")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", help="classify sentences against a model")
    _add_common(p)
    p.add_argument("--policy")
    p.add_argument("--model")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--use-constraints", dest="use_constraints", action="store_const", const=True)
    p.add_argument(
        "--descendant-coverage", dest="descendant_coverage", action="store_const", const=True
    )
    p.add_argument("--verbose", action="store_const", const=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simplify", help="collapse high-entropy regions to '&'")
    _add_common(p)
    p.add_argument("--policy")
    p.add_argument("--model")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--spans", help="sidecar span-map file")
    p.add_argument("--threshold", type=int)
    p.add_argument("--coverage", choices=[m.value for m in simplify.CoverageMode])
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("evaluate", help="run seeded trials and print a summary table")
    _add_common(p)
    p.add_argument("--format", choices=sorted(evalkit.FORMATS))
    # --seed comes from the shared training flags; it doubles as the
    # dataset seed and the base trial seed here
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--two-pass", dest="two_pass", action="store_const", const=True)
    p.add_argument("--use-constraints", dest="use_constraints", action="store_const", const=True)
    p.add_argument("--threshold", type=int)
    p.add_argument("--coverage", choices=[m.value for m in simplify.CoverageMode])
    p.add_argument("--out", help="directory for trials.jsonl and summary.txt")
    _add_train_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
