"""Experiment runner: phantom synthesis, inversion runs, noise sweeps.

A configured experiment generates synthetic image data with a forward
solve on an oversampled grid, runs the intensity-based inversion on the
working grid, and emits deterministic CSV/PGM/JSON reports.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .elasticity import (ElasticModuli, ElasticityBVP, MaterialField,
                         lame_from_moduli, solve_displacement)
from .imaging import (PUSH_FORWARD, Ellipse, NoiseSpec, PhantomSpec,
                      ScalarImage, add_relative_noise, generate_phantom,
                      warp_image, write_pgm)
from .iim import IIMContext, objective, relative_error_params, residual
from .mesh import build_uniform_mesh
from .optimize import NMOptions, nelder_mead

MU_ONLY = "mu-only"
FULL = "full"

#: The data term is evaluated on [0, 1]-normalized intensities, while
#: the regularization rule alpha = coefficient * delta is calibrated
#: for 16-bit intensity units (the acquisition bit depth). This factor
#: converts the rule to the normalized scale.
INTENSITY_UNIT = 1.0 / 65535.0**2

#: Phantom geometry and per-region (E [kPa], nu) ground truth.
PRESETS = {
    "single": (
        (Ellipse(3.4, 1.45, 2.4, 1.25, 0.9),),
        (ElasticModuli(100.0, 0.45), ElasticModuli(200.0, 0.45)),
    ),
    "four": (
        (Ellipse(1.8, 1.9, 1.1, 0.55, 0.95),
         Ellipse(5.0, 1.5, 1.0, 0.7, 0.85),
         Ellipse(3.3, 2.0, 0.35, 0.3, 0.9),
         Ellipse(2.6, 0.55, 0.45, 0.3, 0.8)),
        (ElasticModuli(100.0, 0.45), ElasticModuli(200.0, 0.45),
         ElasticModuli(50.0, 0.45), ElasticModuli(75.0, 0.45),
         ElasticModuli(150.0, 0.45)),
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment."""

    preset: str = "single"
    nx: int = 254
    ny: int = 108
    lx1: float = 6.8
    lx2: float = 2.9
    compression: float = 0.267      # mm
    mode: str = FULL
    noise_levels: tuple[float, ...] = ()
    alpha_coefficient: float = 0.1
    initial_guess: ElasticModuli = ElasticModuli(150.0, 0.45)
    oversample: int = 2             # synthesis grid refinement factor
    noise_both: bool = True         # noise I1 and I2 (else I1 only)
    master_seed: int = 0
    phantom_seed: int = 42
    speckle_amplitude: float = 0.05
    speckle_corr: float = 2.0       # px on the working grid
    blur_sigma: float = 1.0         # px on the working grid
    optimizer: NMOptions = field(default_factory=NMOptions)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; "
                             f"choose from {sorted(PRESETS)}")
        if self.mode not in (MU_ONLY, FULL):
            raise ValueError(f"mode must be '{MU_ONLY}' or '{FULL}'")
        if self.lx1 <= 0 or self.lx2 <= 0:
            raise ValueError("physical dimensions must be positive")
        if self.compression < 0:
            raise ValueError("compression must be >= 0")
        if any(d < 0 for d in self.noise_levels):
            raise ValueError("noise levels must be >= 0")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")

    @property
    def truth_table(self) -> tuple[ElasticModuli, ...]:
        return PRESETS[self.preset][1]

    @property
    def inclusions(self) -> tuple[Ellipse, ...]:
        return PRESETS[self.preset][0]


_CONFIG_SCALAR_KEYS = {
    "preset": str, "nx": int, "ny": int, "lx1": float, "lx2": float,
    "compression": float, "mode": str, "alpha_coefficient": float,
    "oversample": int, "noise_both": bool, "master_seed": int,
    "phantom_seed": int, "speckle_amplitude": float,
    "speckle_corr": float, "blur_sigma": float,
}
_OPTIMIZER_KEYS = {
    "max_iterations": int, "reflection": float, "expansion": float,
    "contraction": float, "shrink": float, "initial_step": float,
    "f_tolerance": float, "x_tolerance": float, "trace": bool,
}


def config_from_toml(path) -> ExperimentConfig:
    """Parse an experiment config file; unknown keys are errors."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)

    kwargs = {}
    for key, value in doc.items():
        if key == "noise_levels":
            kwargs["noise_levels"] = tuple(float(v) for v in value)
        elif key == "initial_guess":
            extra = set(value) - {"E", "nu"}
            if extra:
                raise ValueError(f"unknown initial_guess keys {sorted(extra)}")
            kwargs["initial_guess"] = ElasticModuli(float(value["E"]),
                                                    float(value["nu"]))
        elif key == "optimizer":
            opt = {}
            for k, v in value.items():
                if k not in _OPTIMIZER_KEYS:
                    raise ValueError(f"unknown optimizer key {k!r}")
                opt[k] = _OPTIMIZER_KEYS[k](v)
            kwargs["optimizer"] = NMOptions(**opt)
        elif key in _CONFIG_SCALAR_KEYS:
            kwargs[key] = _CONFIG_SCALAR_KEYS[key](value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(**kwargs)


def sub_seed(master_seed: int, purpose: str, index: int) -> int:
    """Stable 64-bit sub-seed derived from the master seed.

    Fixed BLAKE2b mix over (master seed, purpose tag, index) so runs
    reproduce across platforms and process boundaries.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(f"elastinv:{master_seed}:{purpose}:{index}".encode())
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class Problem:
    """Synthesized data and inversion ingredients for one experiment."""

    mesh: object
    labels: np.ndarray
    I1: ScalarImage
    I2: ScalarImage
    bvp: ElasticityBVP
    truth: np.ndarray               # interleaved (lam_k, mu_k)
    truth_lam: np.ndarray
    truth_mu: np.ndarray


def _downsample(img: ScalarImage, factor: int) -> ScalarImage:
    """Box average by an integer factor (pixel centers stay aligned)."""
    if factor == 1:
        return img
    v = img.values
    H, W = v.shape
    out = v.reshape(H // factor, factor, W // factor, factor).mean(axis=(1, 3))
    return ScalarImage(values=out, extent=img.extent)


def synthesize(cfg: ExperimentConfig) -> Problem:
    """Generate the reference and deformed images for a config.

    The phantom is rasterized and the forward model solved on a grid
    `oversample` times finer than the working grid, then both images
    are box-averaged down. This keeps the synthesis discretization
    error from being shared with the inversion's forward operator.
    """
    f = cfg.oversample
    lame = [lame_from_moduli(m) for m in cfg.truth_table]
    truth_lam = np.array([l for l, _ in lame])
    truth_mu = np.array([m for _, m in lame])
    bvp = ElasticityBVP(c_D=cfg.compression)

    mesh_fine = build_uniform_mesh(cfg.nx * f, cfg.ny * f, cfg.lx1, cfg.lx2)
    spec_fine = PhantomSpec(inclusions=cfg.inclusions,
                            blur_sigma=cfg.blur_sigma * f,
                            speckle_amplitude=cfg.speckle_amplitude,
                            speckle_corr=cfg.speckle_corr * f,
                            seed=cfg.phantom_seed)
    I1_fine, labels_fine = generate_phantom(spec_fine, mesh_fine)
    mat = MaterialField(labels=labels_fine, lam=truth_lam, mu=truth_mu)
    u_true = solve_displacement(mesh_fine, mat, bvp)
    I2_fine = warp_image(I1_fine, u_true, mesh_fine, PUSH_FORWARD, fill=0.0)

    mesh = build_uniform_mesh(cfg.nx, cfg.ny, cfg.lx1, cfg.lx2)
    if f == 1:
        labels = labels_fine
    else:
        spec = replace(spec_fine, blur_sigma=cfg.blur_sigma,
                       speckle_corr=cfg.speckle_corr)
        _, labels = generate_phantom(spec, mesh)

    truth = np.empty(2 * truth_lam.size)
    truth[0::2] = truth_lam
    truth[1::2] = truth_mu
    return Problem(mesh=mesh, labels=labels,
                   I1=_downsample(I1_fine, f), I2=_downsample(I2_fine, f),
                   bvp=bvp, truth=truth,
                   truth_lam=truth_lam, truth_mu=truth_mu)


@dataclass(frozen=True)
class RunRecord:
    """One inversion run with its recovered parameters and errors."""

    run_id: str
    delta: float
    alpha: float
    seed: int
    lam: np.ndarray
    mu: np.ndarray
    err_lam: float
    err_mu: float
    err_joint: float
    best_err_lam: float
    best_err_mu: float
    best_err_joint: float
    best_iteration: int
    iterations: int
    trace_values: np.ndarray
    trace_diameters: np.ndarray
    trace_points: np.ndarray
    trace_err_joint: np.ndarray
    non_identifiable: bool
    wall_ms: float


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    runs: tuple[RunRecord, ...]


def _initial_point(cfg: ExperimentConfig, n_regions: int) -> np.ndarray:
    lam0, mu0 = lame_from_moduli(cfg.initial_guess)
    if cfg.mode == MU_ONLY:
        return np.full(n_regions, mu0)
    x0 = np.empty(2 * n_regions)
    x0[0::2] = lam0
    x0[1::2] = mu0
    return x0


def run_inversion(cfg: ExperimentConfig, prob: Problem,
                  I1: ScalarImage, I2: ScalarImage,
                  alpha: float, delta: float, seed: int,
                  run_id: str) -> RunRecord:
    """One Nelder-Mead reconstruction against the given image pair."""
    t0 = time.perf_counter()
    fixed = prob.truth_lam if cfg.mode == MU_ONLY else None
    ctx = IIMContext(prob.mesh, prob.labels, I1, I2, prob.bvp,
                     alpha=alpha, fixed_lambda=fixed)
    truth_p = prob.truth_mu if cfg.mode == MU_ONLY else prob.truth
    x0 = _initial_point(cfg, ctx.n_regions)
    lo, hi = ctx.bounds
    opts = replace(cfg.optimizer,
                   lower=np.full(x0.size, lo), upper=np.full(x0.size, hi),
                   trace=True)
    res = nelder_mead(lambda p: objective(ctx, p), x0, opts)

    errs = np.array([relative_error_params(ctx, np.asarray(pt), truth_p)
                     for pt in res.trace_points])
    best_it = int(np.argmin(errs[:, 2]))
    el, em, ej = errs[-1]
    bl, bm, bj = errs[best_it]
    lam, mu = ctx.split_params(res.x)

    # A run where the optimizer could not reduce the data misfit below
    # its starting value carries no parameter information (e.g. zero
    # applied compression).
    r0 = residual(ctx, np.asarray(x0, dtype=float))
    r_best = min(residual(ctx, pt) for pt in
                 (res.trace_points[best_it], res.x))
    non_identifiable = not (r_best < r0 * (1.0 - 1e-3))

    return RunRecord(run_id=run_id, delta=delta, alpha=alpha, seed=seed,
                     lam=np.array(lam), mu=np.array(mu),
                     err_lam=float(el), err_mu=float(em), err_joint=float(ej),
                     best_err_lam=float(bl), best_err_mu=float(bm),
                     best_err_joint=float(bj), best_iteration=best_it + 1,
                     iterations=res.iterations,
                     trace_values=res.trace_values,
                     trace_diameters=res.trace_diameters,
                     trace_points=res.trace_points,
                     trace_err_joint=errs[:, 2].copy(),
                     non_identifiable=non_identifiable,
                     wall_ms=(time.perf_counter() - t0) * 1e3)


def run_noise_free_suite(cfg: ExperimentConfig) -> ExperimentReport:
    """One noise-free reconstruction (alpha = 0) for the configured preset."""
    if any(d != 0 for d in cfg.noise_levels):
        raise ValueError("noise-free suite accepts only empty or {0} "
                         f"noise levels, got {cfg.noise_levels}")
    prob = synthesize(cfg)
    rec = run_inversion(cfg, prob, prob.I1, prob.I2, alpha=0.0,
                        delta=0.0, seed=cfg.master_seed,
                        run_id=f"noisefree-{cfg.preset}-{cfg.mode}")
    return ExperimentReport(config=cfg, runs=(rec,))


def run_noise_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Reconstructions across noise levels with alpha = coefficient * delta.

    Both images are noised with independent sub-seeds derived from the
    master seed (only I1 when `noise_both` is off).
    """
    if not cfg.noise_levels:
        raise ValueError("noise sweep requires at least one noise level")
    prob = synthesize(cfg)
    runs = []
    for i, delta in enumerate(cfg.noise_levels):
        s1 = sub_seed(cfg.master_seed, "noise-I1", i)
        s2 = sub_seed(cfg.master_seed, "noise-I2", i)
        I1 = add_relative_noise(prob.I1, NoiseSpec(delta=delta, seed=s1))
        I2 = (add_relative_noise(prob.I2, NoiseSpec(delta=delta, seed=s2))
              if cfg.noise_both else prob.I2)
        alpha = cfg.alpha_coefficient * delta * INTENSITY_UNIT
        runs.append(run_inversion(cfg, prob, I1, I2, alpha=alpha,
                                  delta=delta, seed=cfg.master_seed,
                                  run_id=f"sweep-{i:02d}-d{delta:g}"))
    return ExperimentReport(config=cfg, runs=tuple(runs))


def _fmt(x) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(x))


def _csv_line(fields) -> str:
    return ",".join(str(f) for f in fields) + "\n"


def summary_csv(report: ExperimentReport) -> str:
    """Summary table, one row per run (RFC 4180, LF line endings)."""
    n_regions = len(report.config.truth_table)
    header = ["run_id", "delta", "alpha", "seed"]
    header += [f"lam_{k}" for k in range(n_regions)]
    header += [f"mu_{k}" for k in range(n_regions)]
    header += ["err_lam", "err_mu", "err_joint",
               "best_err_lam", "best_err_mu", "best_err_joint",
               "best_iteration", "iterations", "non_identifiable"]
    lines = [_csv_line(header)]
    for r in report.runs:
        row = [r.run_id, _fmt(r.delta), _fmt(r.alpha), r.seed]
        row += [_fmt(v) for v in r.lam]
        row += [_fmt(v) for v in r.mu]
        row += [_fmt(r.err_lam), _fmt(r.err_mu), _fmt(r.err_joint),
                _fmt(r.best_err_lam), _fmt(r.best_err_mu),
                _fmt(r.best_err_joint), r.best_iteration, r.iterations,
                int(r.non_identifiable)]
        lines.append(_csv_line(row))
    return "".join(lines)


def trace_csv(run: RunRecord) -> str:
    dim = run.trace_points.shape[1]
    header = ["iteration", "best_value", "simplex_diameter", "err_joint"]
    header += [f"p_{k}" for k in range(dim)]
    lines = [_csv_line(header)]
    for i in range(run.iterations):
        row = [i + 1, _fmt(run.trace_values[i]),
               _fmt(run.trace_diameters[i]), _fmt(run.trace_err_joint[i])]
        row += [_fmt(v) for v in run.trace_points[i]]
        lines.append(_csv_line(row))
    return "".join(lines)


def _config_dict(cfg: ExperimentConfig) -> dict:
    opt = cfg.optimizer
    return {
        "preset": cfg.preset, "nx": cfg.nx, "ny": cfg.ny,
        "lx1": cfg.lx1, "lx2": cfg.lx2, "compression": cfg.compression,
        "mode": cfg.mode, "noise_levels": list(cfg.noise_levels),
        "alpha_coefficient": cfg.alpha_coefficient,
        "initial_guess": {"E": cfg.initial_guess.E, "nu": cfg.initial_guess.nu},
        "oversample": cfg.oversample, "noise_both": cfg.noise_both,
        "master_seed": cfg.master_seed, "phantom_seed": cfg.phantom_seed,
        "speckle_amplitude": cfg.speckle_amplitude,
        "speckle_corr": cfg.speckle_corr, "blur_sigma": cfg.blur_sigma,
        "ground_truth": [{"E": m.E, "nu": m.nu} for m in cfg.truth_table],
        "optimizer": {k: getattr(opt, k) for k in _OPTIMIZER_KEYS},
    }


def emit_report(report: ExperimentReport, out_dir) -> list:
    """Write summary/trace CSVs, phantom images, and the config manifest.

    Wall-clock timings go to a separate timings.csv so the summary and
    trace files are byte-identical across reruns of the same config.
    """
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, text):
        path = out / name
        try:
            path.write_bytes(text.encode())
        except OSError as exc:
            raise OSError(f"failed writing report file {path}: {exc}") from exc
        written.append(path)

    emit("summary.csv", summary_csv(report))
    for r in report.runs:
        emit(f"trace_{r.run_id}.csv", trace_csv(r))
    timing_lines = [_csv_line(["run_id", "wall_ms"])]
    timing_lines += [_csv_line([r.run_id, _fmt(r.wall_ms)])
                     for r in report.runs]
    emit("timings.csv", "".join(timing_lines))
    emit("manifest.json",
         json.dumps(_config_dict(report.config), indent=2) + "\n")

    prob = synthesize(report.config)
    for name, img in (("phantom.pgm", prob.I1), ("deformed.pgm", prob.I2)):
        path = out / name
        write_pgm(img, path)
        written.append(path)
    return written
