"""Command line front end.

    sparsepose learn-dict --corpus poses.p3d --out dict.npz
    sparsepose synth      --out-dir data/
    sparsepose solve      --mode given-2d --input obs.p2d --dictionary dict.npz --out est.npz
    sparsepose solve      --mode heatmaps --input maps.hm --dictionary dict.npz --out est.npz
    sparsepose eval       --estimate est.npz --truth-3d truth.p3d
    sparsepose pipeline   --out-dir run/ --mode heatmaps

Parameters come from built-in defaults, then an optional flat key/value
config file (``--config``), then command line flags. Every command writes
a JSON run report with the full parameter set.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import io
from .bcd import solve_bcd
from .dictionary import DictLearnConfig, align_corpus, learn_dictionary
from .em import solve_em
from .initialization import InitConfig, init_from_heatmaps, init_given_2d
from .metrics import DEFAULT_BOX_PIXELS, evaluate
from .synth import (
    SynthConfig,
    corrupt_heatmaps,
    generate_sequence,
    make_dictionary,
    project_sequence,
    render_heatmaps,
)
from .types import ModelParams, Pose3DSequence, default_skeleton, project_sequence_model

# flat config key -> (group, field name)
_RENAMED = {("dict", "tol"): "dict_tol"}
_GROUPS = {"model": ModelParams, "synth": SynthConfig, "dict": DictLearnConfig, "init": InitConfig}
_SHARED = {"seed": 0, "box_pixels": DEFAULT_BOX_PIXELS, "pck_threshold": 10.0}


def _schema():
    out = {}
    for group, cls in _GROUPS.items():
        for f in dataclasses.fields(cls):
            if f.name == "seed":
                continue
            key = _RENAMED.get((group, f.name), f.name)
            out[key] = (group, f.name, type(f.default), f.default)
    for key, default in _SHARED.items():
        out[key] = ("shared", key, type(default), default)
    return out


SCHEMA = _schema()


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def _coerce(key, value):
    _, _, kind, _ = SCHEMA[key]
    if kind is bool:
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r} must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config key {key!r} must be an integer")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise UsageError(f"config key {key!r} must be a number")
    return float(value)


def resolve_settings(config_path=None, overrides=None):
    """Flat settings dict: defaults, then config file, then overrides."""
    values = {k: v[3] for k, v in SCHEMA.items()}
    if config_path:
        try:
            data = io.read_config(config_path)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except io.FormatError as exc:
            raise UsageError(str(exc)) from None
        unknown = sorted(set(data) - set(SCHEMA))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in data.items():
            values[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return values


def build_configs(settings):
    """Instantiate the parameter dataclasses; invalid values are usage errors."""
    kwargs = {g: {} for g in _GROUPS}
    for key, (group, name, _, _) in SCHEMA.items():
        if group in kwargs:
            kwargs[group][name] = settings[key]
    kwargs["synth"]["seed"] = settings["seed"]
    kwargs["dict"]["seed"] = settings["seed"]
    try:
        return {g: cls(**kwargs[g]) for g, cls in _GROUPS.items()}
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid parameters: {exc}") from None


# ------------------------------------------------------------------ reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_report(path, report):
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _bcd_summary(rep):
    d = rep.as_dict()
    d["monotone"] = rep.is_monotone()
    return d


# ------------------------------------------------------------------- stages


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (UsageError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - reported with the stage name
        raise StageError(name, exc) from exc


def _attach_skeleton(seq, skeleton):
    if skeleton is not None and skeleton.joint_count == seq.coords.shape[2]:
        return Pose3DSequence(seq.coords, skeleton)
    return seq


def run_learn_dict(corpus_path, out_path, cfgs, align=True):
    corpus = io.read_poses(corpus_path, dims=3)
    skel = default_skeleton()
    corpus = _attach_skeleton(corpus, skel)
    if align:
        corpus = align_corpus(corpus)
    res = learn_dictionary(corpus, cfgs["dict"], return_info=True)
    io.write_dictionary(out_path, res.dictionary)
    return {
        "corpus_poses": len(corpus),
        "aligned": align,
        "objective_trace": res.objective_trace,
        "relative_residual": res.relative_residual(corpus),
        "zero_code_fraction": float(np.mean(res.codes == 0)),
        "reseeded_atoms": res.reseeded,
        "output": out_path,
    }


def run_synth(out_dir, cfgs, dictionary_path=None):
    os.makedirs(out_dir, exist_ok=True)
    synth = cfgs["synth"]
    if dictionary_path:
        dictionary = io.read_dictionary(dictionary_path)
    else:
        dictionary = make_dictionary(cfgs["dict"].atom_count, default_skeleton(), seed=synth.seed)
    poses, coeffs, camera = generate_sequence(synth, dictionary)
    clean = project_sequence(poses, camera)
    observed = project_sequence(poses, camera, synth.noise_std_2d, synth.seed)
    maps, clamped = render_heatmaps(observed, synth, return_clamped=True)
    maps, record = corrupt_heatmaps(maps, synth, dictionary.skeleton)
    paths = {
        "dictionary": os.path.join(out_dir, "dictionary.npz"),
        "truth_3d": os.path.join(out_dir, "truth_3d.p3d"),
        "truth_2d": os.path.join(out_dir, "truth_2d.p2d"),
        "observed_2d": os.path.join(out_dir, "observed_2d.p2d"),
        "heatmaps": os.path.join(out_dir, "heatmaps.hm"),
        "truth_camera": os.path.join(out_dir, "truth_camera.npz"),
    }
    io.write_dictionary(paths["dictionary"], dictionary)
    io.write_poses(paths["truth_3d"], poses)
    io.write_poses(paths["truth_2d"], clean)
    io.write_poses(paths["observed_2d"], observed)
    io.write_heatmaps(paths["heatmaps"], maps)
    io.write_camera(paths["truth_camera"], camera)
    info = {
        "outputs": paths,
        "frames": synth.frames,
        "atoms": dictionary.size,
        "support": np.nonzero(np.any(coeffs.values != 0, axis=1))[0].tolist(),
        "clamped_joints": int(clamped.sum()),
        "corrupted_joints": len(record.corrupted),
        "swapped_channels": len(record.swapped),
    }
    return info, paths


def run_solve(mode, input_path, dictionary_path, out_path, cfgs, expected_out=None):
    dictionary = io.read_dictionary(dictionary_path)
    params, init_cfg = cfgs["model"], cfgs["init"]
    info = {"mode": mode, "output": out_path}
    if mode == "given-2d":
        obs = io.read_poses(input_path, dims=2, joints=dictionary.joint_count)
        est0 = init_given_2d(obs, dictionary, params, init_cfg)
        est, rep = solve_bcd(est0, obs, params)
        info["bcd"] = _bcd_summary(rep)
    else:
        maps = io.read_heatmaps(input_path, joints=dictionary.joint_count)
        est0 = init_from_heatmaps(maps, dictionary, params, init_cfg)
        est, expected, rep = solve_em(maps, est0, params)
        info["em"] = rep.as_dict()
        if expected_out:
            io.write_poses(expected_out, expected)
            info["expected_2d_output"] = expected_out
    io.write_estimate(out_path, est)
    return info


def run_eval(estimate_path, truth3d_path, settings, truth2d_path=None, pred2d_path=None):
    est = io.read_estimate(estimate_path)
    truth3d = io.read_poses(truth3d_path, dims=3, joints=est.dictionary.joint_count)
    pred2d = io.read_poses(pred2d_path, dims=2).coords if pred2d_path else project_sequence_model(est)
    truth2d = io.read_poses(truth2d_path, dims=2).coords if truth2d_path else None
    if truth2d is None:
        truth2d = pred2d
    root = est.dictionary.skeleton.root if est.dictionary.skeleton is not None else 0
    report = evaluate(
        est.shapes(), truth3d, pred2d, truth2d, root=root,
        threshold_pixels=settings["pck_threshold"], box_pixels=settings["box_pixels"],
    )
    return report


# ------------------------------------------------------------------- parser


def _add_param_flags(parser):
    grp = parser.add_argument_group("parameters (override --config)")
    for key, (_, _, kind, default) in sorted(SCHEMA.items()):
        grp.add_argument(
            "--" + key.replace("_", "-"), dest=key, type=kind, default=None,
            metavar=kind.__name__.upper(), help=f"default {default!r}",
        )
    parser.add_argument("--config", help="flat key = value parameter file")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on native math threads; 1 gives a serial reference run")
    parser.add_argument("--report", help="run report path (JSON)")


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsepose", description="Sparse-dictionary 3D pose from 2D poses or heat maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-dict", help="learn a pose dictionary from a 3D corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-align", action="store_true", help="skip root-centering and rotation alignment")
    _add_param_flags(p)

    p = sub.add_parser("synth", help="generate a ground-truthed synthetic sequence")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dictionary", help="dictionary to draw from (default: generated)")
    _add_param_flags(p)

    p = sub.add_parser("solve", help="estimate 3D poses from 2D poses or heat maps")
    p.add_argument("--mode", choices=["given-2d", "heatmaps"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--expected-out", help="write the final expected 2D poses (heat-map mode)")
    _add_param_flags(p)

    p = sub.add_parser("eval", help="score an estimate against ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth-3d", required=True)
    p.add_argument("--truth-2d")
    p.add_argument("--pred-2d", help="2D predictions (default: the model projection)")
    _add_param_flags(p)

    p = sub.add_parser("pipeline", help="synth -> solve -> eval in one run")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=["given-2d", "heatmaps"], default="heatmaps")
    _add_param_flags(p)
    return parser


def _dispatch(args, settings, cfgs):
    cmd = args.command
    report = {"command": cmd, "parameters": settings}
    if cmd == "learn-dict":
        report["learn_dict"] = _stage("learn-dict", run_learn_dict, args.corpus, args.out, cfgs, not args.no_align)
        return report, args.report or args.out + ".report.json", None
    if cmd == "synth":
        info, _ = _stage("synth", run_synth, args.out_dir, cfgs, args.dictionary)
        report["synth"] = info
        return report, args.report or os.path.join(args.out_dir, "report.json"), None
    if cmd == "solve":
        report["solve"] = _stage("solve", run_solve, args.mode, args.input, args.dictionary, args.out, cfgs,
                                 args.expected_out)
        return report, args.report or args.out + ".report.json", None
    if cmd == "eval":
        ev = _stage("eval", run_eval, args.estimate, args.truth_3d, settings, args.truth_2d, args.pred_2d)
        report["eval"] = ev.as_dict()
        return report, args.report, ev
    # pipeline
    info, paths = _stage("synth", run_synth, args.out_dir, cfgs)
    report["synth"] = info
    est_path = os.path.join(args.out_dir, "estimate.npz")
    source = paths["observed_2d"] if args.mode == "given-2d" else paths["heatmaps"]
    expected = os.path.join(args.out_dir, "expected_2d.p2d") if args.mode == "heatmaps" else None
    report["solve"] = _stage("solve", run_solve, args.mode, source, paths["dictionary"], est_path, cfgs, expected)
    ev = _stage("eval", run_eval, est_path, paths["truth_3d"], settings, paths["truth_2d"], expected)
    report["eval"] = ev.as_dict()
    return report, args.report or os.path.join(args.out_dir, "report.json"), ev


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    overrides = {k: getattr(args, k) for k in SCHEMA}
    try:
        settings = resolve_settings(args.config, overrides)
        cfgs = build_configs(settings)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        parser.error(str(exc))
    settings["threads"] = args.threads
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                report, report_path, ev = _dispatch(args, settings, cfgs)
        else:
            report, report_path, ev = _dispatch(args, settings, cfgs)
        if report_path:
            write_report(report_path, report)
    except StageError as exc:
        print(f"sparsepose: error in stage {exc.stage}: {exc.__cause__}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sparsepose: error writing report: {exc}", file=sys.stderr)
        return 1
    if ev is not None:
        print(ev.summary())
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
