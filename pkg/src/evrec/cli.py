"""Command-line entry point for reproducible event-recognition experiments.

Subcommands::

    synth     write a labeled synthetic dataset (event files + manifest)
    segment   split recordings into motion segments, one file per segment
    encode    dump encoded spike trains per segment as CSV
    train     unsupervised training + label assignment -> model file
    eval      score a model over seeded test subsets -> confusion + summary
    analyze   coding diagnostics: entropy, correlations, histograms

Every command resolves its configuration as defaults < --config file <
--set/flag overrides, writes the resolved configuration next to its
outputs, and is a pure function of that file plus the input data: re-runs
are byte-identical.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
degeneracy (no feature response above the coding noise floor).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, RunConfig, derive_seed
from .events import (EventStream, FormatError, SynthSpec, read_events,
                     synthesize, write_events)
from .features import (FUSION_MODES, DegenerateCodingError, encode,
                       fit_coding, n_fusion_addresses)
from .pipeline import (DataError, build_dataset, fit_coding_for,
                       load_recordings, pooled_responses, read_manifest,
                       train_on, write_manifest)
from .recognition import evaluate, load_model, save_model, stratified_split
from .segmentation import segment_stream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DEGENERATE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):          # usage failures exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="evrec", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--workers", type=int,
                        help="parallel workers for read-only phases")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a synthetic labeled dataset")
    for name in ("segment", "encode", "train", "analyze"):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="dataset manifest CSV")
    p = sub.add_parser("eval")
    p.add_argument("--data", required=True, help="dataset manifest CSV")
    p.add_argument("--model", required=True, help="trained model file")
    return parser


def _resolve(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        cfg.update_from_file(path)
    cfg.update_from_pairs(args.set)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.workers is not None:
        cfg.set("workers", args.workers)
    if args.out is not None:
        cfg.set("paths.out", args.out)
    if getattr(args, "data", None):
        cfg.set("paths.data", args.data)
    if getattr(args, "model", None):
        cfg.set("paths.model", args.model)
    cfg.validate_choices()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["paths.out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_class(spec: str) -> tuple[str, float]:
    """Class spec 'kind' or 'kind@angle', e.g. bar@45."""
    kind, _, angle = spec.partition("@")
    return kind, float(angle) if angle else 0.0


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed = cfg["seed"]
    rows = []
    for label, class_spec in enumerate(cfg["synth.classes"]):
        kind, angle = _parse_class(class_spec)
        for r in range(cfg["synth.per_class"]):
            spec = SynthSpec(kind=kind,
                             width=cfg["synth.width"],
                             height=cfg["synth.height"],
                             velocity=tuple(cfg["synth.velocity"]),
                             duration_ms=cfg["synth.duration_ms"],
                             event_rate=cfg["synth.event_rate"],
                             noise_rate=cfg["synth.noise_rate"],
                             angle_deg=angle,
                             size_px=cfg["synth.size_px"],
                             center_jitter_px=cfg["synth.center_jitter_px"],
                             seed=derive_seed(seed, f"synth-{label}-{r}"))
            stream = synthesize(spec)
            name = f"{class_spec.replace('@', '_')}_{r:03d}.aers"
            write_events(stream, out / name, "binary")
            rows.append((name, label))
    write_manifest(out / "manifest.csv", rows)
    cfg.dump(out / "resolved-synth.cfg")
    print(f"wrote {len(rows)} recordings + manifest.csv to {out}")
    return EXIT_OK


def cmd_segment(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    msd = cfg.msd_config()
    rows = []
    for rec_idx, (path, label) in enumerate(read_manifest(cfg["paths.data"])):
        stream = read_events(path, "csv" if path.suffix == ".csv" else "binary")
        for k, seg in enumerate(segment_stream(stream, msd)):
            name = f"{path.stem}_seg{k:02d}.aers"
            write_events(EventStream(stream.width, stream.height,
                                     seg.t, seg.x, seg.y, seg.p), out / name,
                         "binary")
            rows.append((name, label))
    write_manifest(out / "manifest.csv", rows)
    cfg.dump(out / "resolved-segment.cfg")
    print(f"wrote {len(rows)} segments to {out}")
    return EXIT_OK


def cmd_encode(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    recordings, n_classes = load_recordings(cfg["paths.data"], cfg)
    params = fit_coding_for(recordings, cfg)
    dataset = build_dataset(recordings, n_classes, params, cfg["fusion.mode"])
    lines = ["path,label,recording"]
    for i, item in enumerate(dataset.items):
        name = f"pattern_{i:05d}.csv"
        spikes = "\n".join(f"{int(a)},{_fmt(t)}" for a, t
                           in zip(item.pattern.addresses, item.pattern.times))
        (out / name).write_text("address,time_ms\n" + spikes + "\n")
        lines.append(f"{name},{item.label},{item.recording}")
    (out / "patterns.csv").write_text("\n".join(lines) + "\n")
    if cfg["feature.dump_c1"]:
        scales = cfg["gabor.scales"]
        orients = cfg["gabor.orientations_deg"]
        i = 0
        for rec in recordings:
            for c1 in rec.segments:
                blocks = []
                for si, s in enumerate(scales):
                    for oi, theta in enumerate(orients):
                        blocks.append(f"# scale={s} orientation={_fmt(theta)}")
                        blocks += [",".join(_fmt(v) for v in row)
                                   for row in c1.values[si, oi]]
                (out / f"c1_{i:05d}.csv").write_text("\n".join(blocks) + "\n")
                i += 1
    cfg.dump(out / "resolved-encode.cfg")
    print(f"wrote {len(dataset.items)} spike patterns to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    recordings, n_classes = load_recordings(cfg["paths.data"], cfg)
    model, params = train_on(recordings, n_classes, cfg)
    model_path = out / "model.evm"
    save_model(model, model_path)
    cfg.dump(out / "resolved-train.cfg")
    flagged = int(model.unresponsive.sum())
    print(f"trained on {len(recordings)} recordings "
          f"({n_classes} classes, r_max={params.r_max:.4f}); "
          f"model -> {model_path}" +
          (f"; {flagged} unresponsive neurons" if flagged else ""))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    model = load_model(cfg["paths.model"], cfg.snn_config())
    recordings, n_classes = load_recordings(cfg["paths.data"], cfg)
    if n_classes > model.n_classes:
        raise DataError(f"manifest has {n_classes} classes but the model "
                        f"only covers {model.n_classes}")
    params = fit_coding_for(recordings, cfg)
    labels = [rec.label for rec in recordings]
    test_share = 1.0 - cfg["split.fraction"]
    runs = cfg["split.runs"]
    accuracies, confusions = [], []
    for r in range(runs):
        rng = np.random.default_rng(derive_seed(cfg["seed"], f"eval-run-{r}"))
        if test_share >= 1.0:
            test_idx = np.arange(len(recordings))
        else:
            _, test_idx = stratified_split(labels, cfg["split.fraction"], rng)
        dataset = build_dataset(recordings, n_classes, params,
                                cfg["fusion.mode"], test_idx)
        report = evaluate(model, dataset, duration_ms=cfg["coding.t_w_ms"],
                          n_classes=n_classes, workers=cfg["workers"])
        accuracies.append(report.accuracy)
        confusions.append(report.confusion)
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    summary = [f"{r},{_fmt(a)}" for r, a in enumerate(accuracies)]
    summary.append(f"accuracy,{_fmt(mean)},{_fmt(std)}")
    (out / "summary.csv").write_text("run,accuracy\n" + "\n".join(summary) + "\n")
    mean_conf = np.mean(confusions, axis=0)
    conf_lines = [",".join(_fmt(v) for v in row) for row in mean_conf]
    (out / "confusion.csv").write_text("\n".join(conf_lines) + "\n")
    cfg.dump(out / "resolved-eval.cfg")
    print(f"accuracy mean {mean:.4f} std {std:.4f} over {runs} runs -> {out}")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    recordings, n_classes = load_recordings(cfg["paths.data"], cfg)
    responses = pooled_responses(recordings)
    r_min, t_w = cfg["coding.r_min"], cfg["coding.t_w_ms"]
    bin_ms = cfg["analysis.spike_bin_ms"]

    # spike-timing entropy, both coding kinds on identical features
    entropy_rows, hist_rows = [], []
    for kind in ("log", "linear"):
        params = fit_coding(responses, r_min, t_w, kind=kind)
        times = np.concatenate([
            encode(c1, params, cfg["fusion.mode"]).times
            for rec in recordings for c1 in rec.segments]) \
            if recordings else np.zeros(0)
        h = analysis.spike_entropy(times, bin_ms, t_w)
        entropy_rows.append(f"{kind},{_fmt(h)},{len(times)}")
        hist = np.bincount(np.minimum((times / bin_ms).astype(int),
                                      int(np.ceil(t_w / bin_ms)) - 1),
                           minlength=int(np.ceil(t_w / bin_ms)))
        for b, count in enumerate(hist):
            hist_rows.append(f"{kind},{_fmt(b * bin_ms)},{_fmt(count / len(times))}")
    (out / "entropy.csv").write_text("kind,entropy_bits,n_spikes\n"
                                     + "\n".join(entropy_rows) + "\n")
    (out / "spike_hist.csv").write_text("kind,bin_lo_ms,density\n"
                                        + "\n".join(hist_rows) + "\n")

    # correlation between scales vs between orientations, per segment
    cc = analysis.CcSummary()
    for rec in recordings:
        for c1 in rec.segments:
            cc.add_sample(c1)
    cc_rows = [f"{i},{_fmt(s)},{_fmt(o)}" for i, (s, o)
               in enumerate(zip(cc.scale_cc, cc.orientation_cc))]
    (out / "cc.csv").write_text("sample,scale_cc,orientation_cc\n"
                                + "\n".join(cc_rows) + "\n")

    # raw response distribution with sub-floor mass split out
    hist = analysis.response_histogram(responses, cfg["analysis.response_bin"])
    dens = hist.densities()
    resp_lines = [f"# mass_below_r_min = {_fmt(hist.mass_below(r_min))}",
                  "bin_lo,density"]
    resp_lines += [f"{_fmt(hist.lower + i * hist.bin_width)},{_fmt(d)}"
                   for i, d in enumerate(dens)]
    (out / "response_hist.csv").write_text("\n".join(resp_lines) + "\n")

    # fusion accounting over this geometry
    sample = recordings[0].segments[0]
    log_params = fit_coding(responses, r_min, t_w, kind="log")
    fusion_rows = []
    for mode in FUSION_MODES:
        n_addr = n_fusion_addresses(mode, sample.n_scales,
                                    sample.n_orientations,
                                    sample.height, sample.width)
        n_spikes = sum(len(encode(c1, log_params, mode))
                       for rec in recordings for c1 in rec.segments)
        fusion_rows.append(f"{mode},{n_addr},{n_spikes}")
    (out / "fusion_counts.csv").write_text("mode,n_addresses,n_spikes\n"
                                           + "\n".join(fusion_rows) + "\n")
    cfg.dump(out / "resolved-analyze.cfg")
    print(f"analysis CSVs -> {out}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "encode": cmd_encode,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        return _COMMANDS[args.command](cfg)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateCodingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, FormatError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
