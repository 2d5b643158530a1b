"""Command-line front end.

Every subcommand reads a JSON experiment config, applies flag overrides,
echoes the effective configuration to ``resolved_config.json`` in the output
directory and writes its results as CSV/JSON. Exit codes: 0 success,
1 verification failed, 2 malformed config, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sips.denoiser import (
    MlpDenoiser,
    OracleEtaDenoiser,
    TrainConfig,
    TrainedDenoiser,
    ZeroDenoiser,
    draw_training_batch,
    load_model,
    loss_and_grad,
    save_model,
    train,
)
from sips.errors import ConfigError, DivergenceError
from sips.oracle import (
    GaussianPairMixture,
    clean_residual_variance,
    eta,
    log_density,
    sample_clean,
    sample_interpolant,
    sample_pair,
    score,
)
from sips.predictor import Identity, MmsePosteriorMean, OracleClean, Perturbed, bind
from sips.sampler import SamplerConfig, sips_sample
from sips.schedule import NoiseSchedule
from sips.signal import (
    Waveform,
    compress,
    decompress,
    from_representation,
    read_wav,
    spectral_gate,
    stack_channels,
    to_representation,
    unstack_channels,
    write_wav,
)
from sips.verify import (
    ENERGY_SUBSAMPLE,
    energy_distance,
    marginal_grid,
    reports_to_csv,
    wasserstein_per_dim,
)

log = logging.getLogger("sips")

DEFAULTS = {
    "schedule": {"a": 0.1, "c": 0.5},
    "sampler": {"kappa": 0.0, "steps": 15, "post_process": False, "seed": 0},
    "prior": None,
    "predictor": {"kind": "mmse"},
    "denoiser": {"kind": "oracle"},
    "verify": {
        "n_samples": 100_000,
        "steps": 2000,
        "t_stops": [0.25, 0.5, 0.75, 1.0],
        "kappas": [0.0, 0.4, 1.0],
        "threshold": 0.02,
        "n_points": 1000,
        "relation_tol": 1e-10,
        "fd_step": 1e-5,
        "fd_tol": 1e-5,
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 256,
        "iterations": 20_000,
        "seed": 0,
        "first_moment_decay": 0.9,
        "second_moment_decay": 0.999,
        "epsilon_stabilizer": 1e-8,
        "hidden": [64, 64],
        "holdout": 100_000,
    },
    "sample": {"n": 20_000},
    "sweep": {
        "kappas": [round(0.1 * i, 1) for i in range(11)],
        "steps": [1, 2, 4, 8, 15, 30, 60],
    },
    "enhance": {"floor": 0.1, "noise_percentile": 20.0},
    "output_dir": "out",
}

# sections taken verbatim from the file rather than merged key by key
FREEFORM = ("prior", "predictor", "denoiser")

SAMPLE_COLUMNS = ("kappa", "steps", "n", "mse", "w1_to_clean", "energy_to_clean")


@dataclass
class Experiment:
    raw: dict
    schedule: NoiseSchedule
    sampler: SamplerConfig
    prior: GaussianPairMixture | None
    train: TrainConfig
    output_dir: Path


# -- configuration ---------------------------------------------------------


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return 1


def _merge(base, override, text, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key '{path}{key}'", _line_of(text, key))
        if isinstance(base[key], dict) and key not in FREEFORM:
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}{key}' must be an object", _line_of(text, key))
            out[key] = _merge(base[key], value, text, f"{path}{key}.")
        else:
            out[key] = value
    return out


def _checked(text, key, build, fields=()):
    """Run ``build``; turn value errors into a ConfigError.

    The reported line is that of the first entry of ``fields`` named in the
    error message, falling back to the line of ``key``.
    """
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        msg = str(exc)
        named = [f for f in fields if f in msg and f'"{f}"' in text]
        line = _line_of(text, named[0]) if named else _line_of(text, key)
        raise ConfigError(f"invalid '{key}': {msg}", line) from None


def load_config(path, overrides: dict | None = None) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", 1)
    raw = _merge(DEFAULTS, doc, text)
    for section, values in (overrides or {}).items():
        raw[section].update({k: v for k, v in values.items() if v is not None})
    base = path.parent.resolve()
    raw["output_dir"] = str((base / raw["output_dir"]).resolve())
    model = raw["denoiser"].get("model")
    if model is not None:
        model_path = (base / model).resolve()
        if not model_path.exists():
            line = _line_of(text, "model")
            raise ConfigError(f"denoiser model {model_path} does not exist", line)
        raw["denoiser"]["model"] = str(model_path)
    return _build(raw, text)


def _build(raw: dict, text: str) -> Experiment:
    sched = _checked(
        text, "schedule", fields=raw["schedule"], build=lambda: NoiseSchedule(**raw["schedule"])
    )
    sampler = _checked(
        text, "sampler", fields=raw["sampler"], build=lambda: SamplerConfig(**raw["sampler"])
    )
    prior = None
    if raw["prior"] is not None:
        prior = _checked(text, "prior", lambda: GaussianPairMixture.from_dict(raw["prior"]))
    tr = dict(raw["train"])
    tr.pop("holdout")
    tr["hidden"] = tuple(tr["hidden"])
    train_cfg = _checked(text, "train", fields=tr, build=lambda: TrainConfig(**tr))
    _checked(text, "predictor", lambda: make_predictor(raw["predictor"], prior))
    _checked(text, "denoiser", lambda: make_denoiser(raw["denoiser"], prior, sched))
    _checked(text, "verify", fields=raw["verify"], build=lambda: _validate_verify(raw["verify"]))
    _checked(text, "sweep", fields=raw["sweep"], build=lambda: _validate_sweep(raw["sweep"]))
    _checked(text, "n", lambda: _positive_int(raw["sample"]["n"], "sample.n"))
    return Experiment(raw, sched, sampler, prior, train_cfg, Path(raw["output_dir"]))


def _positive_int(v, name):
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ValueError(f"{name} must be a positive integer")


def _validate_verify(v):
    _positive_int(v["n_samples"], "n_samples")
    _positive_int(v["steps"], "steps")
    _positive_int(v["n_points"], "n_points")
    if not v["t_stops"] or not all(0 < float(t) <= 1 for t in v["t_stops"]):
        raise ValueError("t_stops must be non-empty and lie in (0, 1]")
    if not v["kappas"] or any(float(k) < 0 for k in v["kappas"]):
        raise ValueError("kappas must be non-empty and >= 0")
    for t in v["t_stops"]:
        if abs(round(float(t) * v["steps"]) - float(t) * v["steps"]) > 1e-9:
            raise ValueError(f"t_stop {t} is not on the {v['steps']}-step grid")


def _validate_sweep(v):
    if any(float(k) < 0 for k in v["kappas"]):
        raise ValueError("sweep kappas must be >= 0")
    for m in v["steps"]:
        _positive_int(m, "sweep steps")


def _need(prior):
    if prior is None:
        raise ValueError("this setting needs a 'prior' section")
    return prior


def make_predictor(spec: dict, prior: GaussianPairMixture | None):
    kind = spec.get("kind")
    if kind == "identity":
        return Identity()
    if kind == "oracle_clean":
        return OracleClean()
    if kind == "mmse":
        return MmsePosteriorMean(_need(prior))
    if kind == "perturbed":
        inner = make_predictor(spec.get("inner", {"kind": "identity"}), prior)
        bias = np.asarray(spec.get("bias", 0.0), dtype=float)
        return Perturbed(inner, float(spec.get("gain", 1.0)), bias)
    raise ValueError(f"unknown predictor kind {kind!r}")


def make_denoiser(spec: dict, prior: GaussianPairMixture | None, sched: NoiseSchedule):
    kind = spec.get("kind")
    if kind == "zero":
        return ZeroDenoiser()
    if kind == "oracle":
        return OracleEtaDenoiser(_need(prior), sched)
    if kind == "trained":
        if "model" not in spec:
            raise ValueError("trained denoiser needs a 'model' path")
        net, model_sched, _ = load_model(spec["model"])
        return TrainedDenoiser(net, model_sched)
    raise ValueError(f"unknown denoiser kind {kind!r}")


# -- output helpers --------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _prepare_output(exp: Experiment) -> Path:
    out = exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", exp.raw)
    return out


def _threads() -> int:
    value = int(os.environ.get("SIPS_THREADS", "0") or 0)
    return value if value > 0 else (os.cpu_count() or 1)


def _child_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng([seed, *index])


# -- subcommands -----------------------------------------------------------


def cmd_verify_marginals(exp: Experiment, args) -> int:
    v = exp.raw["verify"]
    kappas = [float(k) for k in v["kappas"]]
    seed = exp.sampler.seed

    def run(idx_kappa):
        idx, kappa = idx_kappa
        return marginal_grid(
            exp.prior,
            exp.schedule,
            kappa,
            v["t_stops"],
            v["n_samples"],
            v["steps"],
            float(v["threshold"]),
            _child_rng(seed, idx),
        )

    with ThreadPoolExecutor(max_workers=min(_threads(), len(kappas))) as pool:
        grids = list(pool.map(run, enumerate(kappas)))
    reports = [r for grid in grids for r in grid]
    out = _prepare_output(exp)
    (out / "marginals.csv").write_text(reports_to_csv(reports))
    passed = all(r.passed for r in reports)
    _write_json(
        out / "marginals.json",
        {"all_passed": passed, "reports": [json.loads(r.to_json()) for r in reports]},
    )
    for r in reports:
        log.info(
            "t=%.2f kappa=%.2f w1=%.5f threshold=%.3f %s",
            r.t_stop,
            r.kappa,
            r.wasserstein1,
            r.threshold,
            "PASS" if r.passed else "FAIL",
        )
    return 0 if passed else 1


def score_check(prior, sched, n_points, rng, fd_step=1e-5):
    """Worst-case denoiser-score residual and finite-difference error.

    Points have ``gamma(t) > 1e-3`` and ``x`` drawn from the interpolant at ``t``.
    The finite-difference error is ``|fd - score| / max(|score|, 1e-3)``.
    """
    worst_rel, worst_fd = 0.0, 0.0
    d = prior.dim
    for _ in range(n_points):
        t = rng.uniform(0.0, 1.0)
        while sched.gamma(t) <= 1e-3:
            t = rng.uniform(0.0, 1.0)
        x = sample_interpolant(prior, sched, t, rng, 1)[0]
        sc = score(prior, sched, t, x)
        resid = eta(prior, sched, t, x) + sched.gamma(t) * sc
        worst_rel = max(worst_rel, float(np.linalg.norm(resid)))
        for j in range(d):
            e = np.zeros(d)
            e[j] = fd_step
            up, down = log_density(prior, sched, t, x + e), log_density(prior, sched, t, x - e)
            fd = (up - down) / (2 * fd_step)
            worst_fd = max(worst_fd, abs(fd - sc[j]) / max(abs(sc[j]), 1e-3))
    return worst_rel, worst_fd


def cmd_verify_score(exp: Experiment, args) -> int:
    v = exp.raw["verify"]
    rng = _child_rng(exp.sampler.seed, 0)
    rel, fd = score_check(exp.prior, exp.schedule, v["n_points"], rng, v["fd_step"])
    passed = bool(rel < v["relation_tol"] and fd < v["fd_tol"])
    out = _prepare_output(exp)
    _write_json(
        out / "score_check.json",
        {
            "n_points": v["n_points"],
            "max_relation_residual": rel,
            "relation_tol": v["relation_tol"],
            "max_fd_relative_error": fd,
            "fd_tol": v["fd_tol"],
            "passed": passed,
        },
    )
    log.info("relation residual %.3e, finite-difference error %.3e", rel, fd)
    return 0 if passed else 1


def heldout_loss(net, sched, prior, n, rng):
    s, z, t = draw_training_batch(prior, rng, n)
    return loss_and_grad(net, sched, s, z, t)[0]


def analytic_min_loss(prior, sched, nodes=400):
    """t-averaged summed Var(Z | S + sigma Z) for a single-component prior."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (x + 1.0)
    vals = [clean_residual_variance(prior, float(sched.training_sigma(ti))) for ti in t]
    return float(0.5 * np.dot(w, vals))


def cmd_train(exp: Experiment, args) -> int:
    cfg = exp.train
    net0 = MlpDenoiser.init(exp.prior.dim, hidden=cfg.hidden, seed=cfg.seed)
    net, losses = train(net0, exp.schedule, exp.prior, cfg)
    out = _prepare_output(exp)
    save_model(out / "model.json", net, exp.schedule, cfg.seed)
    _write_csv(out / "loss_trace.csv", ("iteration", "loss"), enumerate(losses.tolist()))
    summary = {
        "iterations": cfg.iterations,
        "heldout_loss": heldout_loss(
            net, exp.schedule, exp.prior, exp.raw["train"]["holdout"], _child_rng(cfg.seed, 1)
        ),
    }
    if len(exp.prior.components) == 1:
        summary["analytic_min_loss"] = analytic_min_loss(exp.prior, exp.schedule)
    _write_json(out / "train_summary.json", summary)
    log.info("final loss %.5f, held-out %.5f", losses[-1], summary["heldout_loss"])
    return 0


def run_sample(exp: Experiment, kappa: float, steps: int):
    """Sample from ``n`` observations of the prior; returns (y, s, x, summary row)."""
    n = exp.raw["sample"]["n"]
    seed = exp.sampler.seed
    s, y = sample_pair(exp.prior, _child_rng(seed, 0), n)
    reference = sample_clean(exp.prior, _child_rng(seed, 1), n)
    predictor = make_predictor(exp.raw["predictor"], exp.prior)
    denoiser = make_denoiser(exp.raw["denoiser"], exp.prior, exp.schedule)
    cfg = SamplerConfig(kappa=kappa, steps=steps, post_process=exp.sampler.post_process, seed=seed)
    x = sips_sample(y, bind(predictor, s), denoiser, exp.schedule, cfg, _child_rng(seed, 2))
    mse = float(np.mean(np.sum((x - s) ** 2, axis=1)))
    w1 = wasserstein_per_dim(x, reference)
    if exp.prior.dim > 1:
        ed = energy_distance(x[:ENERGY_SUBSAMPLE], reference[:ENERGY_SUBSAMPLE])
    else:
        ed = energy_distance(x, reference)
    return y, s, x, (kappa, steps, n, mse, w1, ed)


def cmd_sample(exp: Experiment, args) -> int:
    y, s, x, row = run_sample(exp, exp.sampler.kappa, exp.sampler.steps)
    out = _prepare_output(exp)
    d = exp.prior.dim
    header = ["index"] + [f"{name}{j}" for name in "ysx" for j in range(d)]
    rows = (
        [i, *yi, *si, *xi] for i, (yi, si, xi) in enumerate(zip(y.tolist(), s.tolist(), x.tolist()))
    )
    _write_csv(out / "samples.csv", header, rows)
    _write_csv(out / "summary.csv", SAMPLE_COLUMNS, [row])
    log.info("mse %.5f, w1 to clean %.5f", row[3], row[4])
    return 0


def _sweep(exp: Experiment, settings, filename) -> int:
    def run(setting):
        kappa, steps = setting
        return run_sample(exp, kappa, steps)[3]

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(run, settings))
    out = _prepare_output(exp)
    _write_csv(out / filename, SAMPLE_COLUMNS, rows)
    for row in rows:
        log.info("kappa=%.2f steps=%d w1=%.5f", row[0], row[1], row[4])
    return 0


def cmd_sweep_kappa(exp: Experiment, args) -> int:
    settings = [(float(k), exp.sampler.steps) for k in exp.raw["sweep"]["kappas"]]
    return _sweep(exp, settings, "sweep_kappa.csv")


def cmd_sweep_steps(exp: Experiment, args) -> int:
    settings = [(exp.sampler.kappa, int(m)) for m in exp.raw["sweep"]["steps"]]
    return _sweep(exp, settings, "sweep_steps.csv")


def gate_predictor(floor: float, noise_percentile: float):
    """Spectral gate acting on the stacked compressed representation."""

    def predict(data):
        spec = decompress(unstack_channels(data))
        return stack_channels(compress(spectral_gate(spec, floor, noise_percentile)))

    return predict


def enhance(w: Waveform, exp: Experiment) -> Waveform:
    e = exp.raw["enhance"]
    rep = to_representation(w)
    predictor = gate_predictor(float(e["floor"]), float(e["noise_percentile"]))
    denoiser = make_denoiser(exp.raw["denoiser"], exp.prior, exp.schedule)
    if not np.any(rep):
        return w
    x = sips_sample(rep, predictor, denoiser, exp.schedule, exp.sampler)
    return Waveform(from_representation(x, len(w)), w.sample_rate)


def cmd_enhance(exp: Experiment, args) -> int:
    if args.input is None or args.out is None:
        raise ConfigError("enhance needs --in and --out WAV paths")
    try:
        w = read_wav(args.input)
    except (OSError, ValueError, EOFError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from None
    out = enhance(w, exp)
    _prepare_output(exp)
    write_wav(args.out, out)
    return 0


COMMANDS = {
    "verify-marginals": (
        cmd_verify_marginals,
        "Compare forward-SDE marginals with direct interpolant draws.",
        "Writes marginals.csv with columns t_stop,kappa,n,steps,w1,energy,threshold,passed "
        "and marginals.json. Exit 0 iff every row passes.",
    ),
    "verify-score": (
        cmd_verify_score,
        "Check the denoiser-score relation and finite-difference scores.",
        "Writes score_check.json. Exit 0 iff both checks are within tolerance.",
    ),
    "train": (
        cmd_train,
        "Train the MLP denoiser on clean samples of the prior.",
        "Writes model.json, loss_trace.csv (iteration,loss) and train_summary.json.",
    ),
    "sample": (
        cmd_sample,
        "Run the SIPS sampler on observations drawn from the prior.",
        "Writes samples.csv (index,y*,s*,x*) and summary.csv "
        "(kappa,steps,n,mse,w1_to_clean,energy_to_clean).",
    ),
    "sweep-kappa": (
        cmd_sweep_kappa,
        "Repeat 'sample' over the kappa grid.",
        "Writes sweep_kappa.csv (kappa,steps,n,mse,w1_to_clean,energy_to_clean), "
        "one row per kappa.",
    ),
    "sweep-steps": (
        cmd_sweep_steps,
        "Repeat 'sample' over the step-count grid.",
        "Writes sweep_steps.csv (kappa,steps,n,mse,w1_to_clean,energy_to_clean), one row per M.",
    ),
    "enhance": (
        cmd_enhance,
        "Enhance a mono 16-bit WAV with the spectral gate and the configured denoiser.",
        "Writes the enhanced WAV given by --out. This is a toy demo with a tiny "
        "or zero denoiser and makes no speech-quality claims.",
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sips", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, epilog) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--kappa", type=float, help="override the noise scale")
        p.add_argument("--steps", type=int, help="override the number of integration steps")
        p.add_argument("--seed", type=int, help="override the random seed")
        if name == "enhance":
            p.add_argument("--in", dest="input", help="input WAV")
            p.add_argument("--out", help="output WAV")
        else:
            p.add_argument("--out", help="override the output directory")
    return parser


def _overrides(args) -> dict:
    sampler = {"kappa": args.kappa, "seed": args.seed}
    verify = {}
    if args.command == "verify-marginals":
        verify["steps"] = args.steps
        if args.kappa is not None:
            verify["kappas"] = [args.kappa]
    else:
        sampler["steps"] = args.steps
    train_ = {"seed": args.seed} if args.command == "train" else {}
    return {"sampler": sampler, "verify": verify, "train": train_}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    handler = COMMANDS[args.command][0]
    try:
        exp = load_config(args.config, _overrides(args))
        if exp.prior is None and args.command != "enhance":
            raise ConfigError(f"'{args.command}' needs a 'prior' section", 1)
        if args.out is not None:
            # enhance writes a file; its directory receives the config echo
            out = Path(args.out).resolve()
            exp.output_dir = out.parent if args.command == "enhance" else out
            exp.raw["output_dir"] = str(exp.output_dir)
        return handler(exp, args)
    except ConfigError as exc:
        print(f"sips {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"sips {args.command}: diverged at step {exc.step}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
