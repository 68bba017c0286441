"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, features, metrics, probe, scene
from .config import ConfigError, load_config
from .model import Model, identity_weights, random_weights
from .pipeline import Pipeline
from .wavio import wav_read, wav_write

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, **extra):
    ov = _overrides(getattr(args, "set", None))
    for key, attr in (("weights_path", "weights"), ("seed", "seed"), ("stage", "stage"),
                      ("input_routing", "routing")):
        val = getattr(args, attr, None)
        if val is not None:
            ov[key] = str(val)
    ov.update(extra)
    return load_config(getattr(args, "config", None), ov)


def cmd_simulate(args):
    spec = scene.SceneSpec(
        scenario=args.scenario, ser_db=args.ser, snr_db=None if args.no_noise else args.snr,
        delay_ms=args.delay_ms, t60_ms=args.t60_ms, nonlinearity=args.nonlinearity,
        nonlinearity_param=args.nl_param, bandlimit_hz=args.bandlimit_hz, seed=args.seed,
    ).validate()
    if args.duration < 3.0:
        raise UsageError("--duration must be at least 3 s")
    near = wav_read(args.near) if args.near else scene.synthetic_speech(args.seed, args.duration, voice=0)
    far = wav_read(args.far) if args.far else scene.synthetic_speech(args.seed, args.duration, voice=1)
    out = scene.generate(spec, near, far)
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, sig in out.components().items():
        wav_write(d / f"{name}.wav", sig, args.format)
    (d / "scene.txt").write_text(spec.metadata() + "".join(
        f"measured_{k} = {v:.4f}\n" for k, v in scene.measure_ratios(out).items()))
    print(f"wrote x.wav y.wav s.wav e.wav v.wav scene.txt to {d}")


def _labels(n, near_ref, echo_ref):
    s = near_ref if near_ref is not None else np.zeros(n)
    e = echo_ref if echo_ref is not None else np.zeros(n)
    fake = scene.SceneOutput(x=s + e, y=np.zeros(n), s=s, e=e, v=np.zeros(n),
                             spec=scene.SceneSpec(), rir=np.zeros(1))
    return scene.segment_labels(fake)


def _report(processed, mic, near_ref, echo_ref, csv_path):
    labels = _labels(len(mic), near_ref, echo_ref) if echo_ref is not None else None
    rep = metrics.evaluate(processed, mic=mic, near_ref=near_ref, labels=labels)
    print(rep.to_text(), end="")
    if csv_path:
        Path(csv_path).write_text(rep.to_csv())


def _read_ref(path, n):
    if not path:
        return None
    sig = wav_read(path)
    if len(sig) != n:
        raise UsageError(f"{path}: length {len(sig)} differs from the mic length {n}")
    return sig


def cmd_process(args):
    cfg = _config(args)
    mic = wav_read(args.mic)
    far = wav_read(args.farend)
    if len(mic) == 0:
        raise UsageError("microphone input is empty")
    if len(mic) != len(far):
        raise UsageError(f"mic has {len(mic)} samples but far-end has {len(far)}")
    pipe = Pipeline(cfg)
    out = pipe.process_streaming(mic, far) if args.streaming else pipe.process(mic, far).output
    wav_write(args.output, out, args.format)
    if args.near_ref or args.echo_ref:
        _report(out, mic, _read_ref(args.near_ref, len(mic)), _read_ref(args.echo_ref, len(mic)), args.report)


def cmd_probe_delay(args):
    cfg = _config(args)
    far = wav_read(args.farend)
    mic = wav_read(args.mic)
    model = Pipeline(cfg).model if cfg.weights_path else None
    res = probe.probe_delay(far, mic, cfg, model)
    text = res.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"peak at d{res.peak_index} ({res.peak_lag_ms:g} ms), "
          f"{'in span' if res.in_span else 'out of span'}", file=sys.stderr)


def cmd_features_dump(args):
    cfg = _config(args)
    layout = cfg.layout if args.mode is None else replace(cfg.layout, mode=args.mode)
    text = features.permutation_table_csv(layout)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_metrics(args):
    est = wav_read(args.estimate)
    ref = _read_ref(args.reference, len(est))
    mic = _read_ref(args.mic, len(est))
    echo = _read_ref(args.echo_ref, len(est))
    if echo is not None and mic is None:
        raise UsageError("--echo-ref needs --mic for ERLE")
    _report(est, mic if mic is not None else est, ref, echo, args.csv)


def cmd_bench(args):
    cfg = _config(args)
    if args.complexity_only:
        res = bench.complexity(cfg)
    else:
        res = bench.run_bench(cfg, seconds=args.seconds, repeat=args.repeat, seed=args.seed or 0,
                              streaming=not args.batch)
    print(bench.format_report(res), end="")


def cmd_init_weights(args):
    cfg = _config(args)
    store = identity_weights(cfg.model, args.seed or 0) if args.identity else random_weights(cfg.model, args.seed or 0)
    Model(cfg.model, store)
    store.save(args.output)
    print(f"wrote {len(store)} tensors to {args.output} (sha256 {store.checksum()[:16]})")


def _add_config_args(p, weights=True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="64-bit seed for random weights")
    if weights:
        p.add_argument("--weights", help="weight file (AULC format)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-aenr", description="Kalman + neural post-filter echo and noise reduction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene as WAV files")
    p.add_argument("--scenario", choices=scene.SCENARIOS, default="dt")
    p.add_argument("--ser", type=float, default=0.0)
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--t60-ms", type=float, default=100.0)
    p.add_argument("--nonlinearity", choices=scene.NONLINEARITIES, default="none")
    p.add_argument("--nl-param", type=float, default=0.5)
    p.add_argument("--bandlimit-hz", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--near", help="near-end source WAV (default: synthetic)")
    p.add_argument("--far", help="far-end source WAV (default: synthetic)")
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("process", help="run the echo canceller and post-filter on a mic/far-end pair")
    p.add_argument("mic")
    p.add_argument("farend")
    p.add_argument("-o", "--output", required=True)
    _add_config_args(p)
    p.add_argument("--stage", choices=("full", "kf-only"))
    p.add_argument("--routing", choices=("z,y", "z+e,y", "z,y+e"))
    p.add_argument("--streaming", action="store_true", help="process hop by hop")
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    p.add_argument("--near-ref", help="near-end reference for SI-SDR")
    p.add_argument("--echo-ref", help="echo reference for segment labels / ERLE")
    p.add_argument("--report", help="write the metric report as CSV")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("probe-delay", help="dump the latent delay distribution as CSV")
    p.add_argument("farend")
    p.add_argument("mic")
    p.add_argument("-o", "--output")
    _add_config_args(p)
    p.set_defaults(func=cmd_probe_delay)

    p = sub.add_parser("features-dump", help="print the reorientation table as CSV")
    p.add_argument("--mode", choices=(features.SAMPLED, features.SUBBAND))
    p.add_argument("-o", "--output")
    _add_config_args(p, weights=False)
    p.set_defaults(func=cmd_features_dump)

    p = sub.add_parser("metrics", help="SI-SDR / ERLE report for WAV files")
    p.add_argument("--estimate", required=True)
    p.add_argument("--reference")
    p.add_argument("--mic")
    p.add_argument("--echo-ref")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="complexity counters and real-time factor")
    _add_config_args(p)
    p.add_argument("--seconds", type=float, default=60.0)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--batch", action="store_true", help="time batch instead of streaming processing")
    p.add_argument("--complexity-only", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("init-weights", help="write seeded random (or identity-configured) weights")
    p.add_argument("output")
    p.add_argument("--identity", action="store_true")
    _add_config_args(p, weights=False)
    p.set_defaults(func=cmd_init_weights)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (UsageError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
