"""Command-line pipeline: collect, train, eval, rollout, kernels, step-response.

Every stage reads a ``RunConfig`` (flat ``key=value`` file, overridden by
command-line flags) and writes into its output directory::

    out/data/bucket_<k>.slds      canonical-frame training pairs, one file per length
    out/model_<mode>.slvf         switched-linear model
    out/train_<mode>.csv          per-bucket train/test errors
    out/compare.csv               the same for every trained mode
    out/eval.csv                  mean error of linear / transport / identity predictors
    out/rollout.csv               closed-loop descent traces
    out/kernels/, out/step/       kernel and step-response images (PGM + raw CSV)

A single master seed drives everything; each stage derives its own seed by a
fixed offset (see ``SEED_OFFSETS``), so one ``--seed`` reproduces a run.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import control
from .control import (ActionGrid, IdentityPredictor, LinearPredictor, OraclePredictor, TargetSet,
                      TransportPredictor, build_distance_field, rollout)
from .foresight import (DEFAULT_LENGTHS, SwitchedLinearModel, TransportModel, extract_kernel,
                        load_model, predict_linear, save_model, step_response,
                        train_switched_linear, transport_predict_image)
from .geometry import (Action, canonical_transform, pixel_centers, points_in_rectangle,
                       rectangle_in_workspace, warp_image)
from .imaging import frobenius_distance, vectorize, write_pgm
from .lsq import MODES, PairedDataset, SolverConfig
from .sim import Scene, SimConfig, apply_push, rasterize, spawn_scene

__all__ = [
    "RunConfig",
    "DatasetFile",
    "DatasetFormatError",
    "SEED_OFFSETS",
    "stage_seed",
    "load_config",
    "write_dataset",
    "read_dataset",
    "sample_transition",
    "collect_bucket",
    "cmd_collect",
    "cmd_train",
    "cmd_eval",
    "cmd_rollout",
    "cmd_kernels",
    "cmd_step_response",
    "evaluate_predictors",
    "rollout_scenes",
    "main",
]

log = logging.getLogger("pileforesight")

SEED_OFFSETS = {"collect": 0, "split": 500, "rollout": 1000, "eval": 2000, "transport": 3000}

ROLLOUT_REGION = (0.1, 0.1, 0.9, 0.9)


def stage_seed(master: int, stage: str, index: int = 0) -> int:
    """Seed of one pipeline stage: ``master + offset(stage) + index``."""
    return int(master) + SEED_OFFSETS[stage] + int(index)


# -- configuration ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    n: int = 32
    lengths: tuple = DEFAULT_LENGTHS
    positions: int = 8
    angles: int = 8
    samples_per_length: int = 1000
    test_fraction: float = 0.2
    seed: int = 0
    out: str = "run"
    runs: int = 10
    max_steps: int = 40
    v_stop: float = 0.02
    pieces: int = 50
    n_test: int = 1000
    target: str = "square"
    sim: SimConfig = field(default_factory=SimConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.samples_per_length < 10:
            raise ValueError("samples_per_length must be at least 10")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        lengths = tuple(float(v) for v in self.lengths)
        if not lengths or any(not 0.0 < v <= 0.5 for v in lengths):
            raise ValueError("lengths must be non-empty and lie in (0, 0.5]")
        object.__setattr__(self, "lengths", lengths)
        if min(self.positions, self.angles, self.runs, self.max_steps, self.n_test) < 1:
            raise ValueError("positions, angles, runs, max_steps and n_test must be positive")
        if self.pieces < 1:
            raise ValueError("pieces must be positive")

    @property
    def grid(self) -> ActionGrid:
        return ActionGrid(self.positions, self.angles, self.lengths,
                          pusher_width=self.sim.pusher_width)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def dataset_path(self, k: int) -> Path:
        return self.out_dir / "data" / f"bucket_{k}.slds"

    def model_path(self, mode: str) -> Path:
        return self.out_dir / f"model_{mode}.slvf"

    def replace(self, **changes) -> "RunConfig":
        """Copy with changes; ``sim.<name>`` / ``solver.<name>`` keys reach the nested configs."""
        top, sim, solver = {}, {}, {}
        for key, value in changes.items():
            if key.startswith("sim."):
                sim[key[4:]] = value
            elif key.startswith("solver."):
                solver[key[7:]] = value
            else:
                top[key] = value
        if sim:
            top["sim"] = dataclasses.replace(self.sim, **sim)
        if solver:
            top["solver"] = dataclasses.replace(self.solver, **solver)
        return dataclasses.replace(self, **top)


def _field_types(cls) -> dict:
    return {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
            for f in dataclasses.fields(cls)}


def _coerce(key: str, text: str):
    if key.startswith("sim.") or key.startswith("solver."):
        owner = SimConfig if key.startswith("sim.") else SolverConfig
        defaults = _field_types(owner)
        name = key.split(".", 1)[1]
    else:
        defaults = _field_types(RunConfig)
        name = key
    if name not in defaults or name in ("sim", "solver"):
        raise ValueError(f"unknown config key {key!r}")
    proto = defaults[name]
    if isinstance(proto, tuple):
        return tuple(float(t) for t in text.split(",") if t.strip())
    if isinstance(proto, bool):
        return text.strip().lower() in ("1", "true", "yes")
    if isinstance(proto, int):
        return int(text)
    if isinstance(proto, float):
        return float(text)
    return text.strip()


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` starts a comment) into typed overrides."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | os.PathLike | None = None, **overrides) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (flags win)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig().replace(**values)


# -- dataset files ----------------------------------------------------------------------


class DatasetFormatError(ValueError):
    """Unreadable ``SLDS`` dataset file."""


_DS_MAGIC = b"SLDS"
_DS_VERSION = 1
_DS_HEADER = struct.Struct("<4sIIdI")


@dataclass(frozen=True)
class DatasetFile:
    """Canonical-frame pairs for one push length; ``pre``/``post`` are ``(count, N*N)``."""

    n: int
    length: float
    pre: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        pre = np.asarray(self.pre, dtype=np.float64).reshape(-1, self.n * self.n)
        post = np.asarray(self.post, dtype=np.float64).reshape(-1, self.n * self.n)
        if pre.shape != post.shape:
            raise ValueError("pre and post blocks must have the same shape")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)

    @property
    def count(self) -> int:
        return self.pre.shape[0]

    def paired(self, bucket: int = 0, rows: np.ndarray | None = None) -> PairedDataset:
        sel = slice(None) if rows is None else rows
        return PairedDataset(self.pre[sel].T, self.post[sel].T, bucket)


def write_dataset(path: str | os.PathLike, ds: DatasetFile) -> None:
    """Header (magic, version, N, length, count), then per pair the pre and post images."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    body = np.stack([ds.pre, ds.post], axis=1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(_DS_MAGIC, _DS_VERSION, ds.n, float(ds.length), ds.count))
        fh.write(body.tobytes())


def read_dataset(path: str | os.PathLike) -> DatasetFile:
    buf = Path(path).read_bytes()
    if len(buf) < _DS_HEADER.size or buf[:4] != _DS_MAGIC:
        raise DatasetFormatError(f"{path}: not an SLDS dataset file")
    _, version, n, length, count = _DS_HEADER.unpack_from(buf)
    if version != _DS_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    need = _DS_HEADER.size + 16 * count * n * n
    if len(buf) != need:
        raise DatasetFormatError(f"{path}: header promises {count} pairs ({need} bytes), "
                                 f"file has {len(buf)} bytes")
    body = np.frombuffer(buf, dtype="<f8", offset=_DS_HEADER.size).reshape(count, 2, n * n)
    return DatasetFile(n, length, body[:, 0].astype(np.float64), body[:, 1].astype(np.float64))


# -- data generation ------------------------------------------------------------------


def _random_scene(rng: np.random.Generator, cfg: SimConfig) -> Scene:
    """Training scene: 20-80 pieces in a random square sub-region of the board."""
    count = int(rng.integers(20, 81))
    side = rng.uniform(0.3, 0.9)
    x0 = rng.uniform(0.05, 0.95 - side)
    y0 = rng.uniform(0.05, 0.95 - side)
    return spawn_scene(cfg, count, (x0, y0, x0 + side, y0 + side), int(rng.integers(2 ** 63)))


def sample_transition(rng: np.random.Generator, length: float, cfg: SimConfig, n: int = 32,
                      tries: int = 100):
    """One ``(I_k, action, I_k+1)`` triple whose push rectangle covers occupied pixels.

    The action start and heading are uniform; actions whose rectangle leaves
    the board are rejected, as are those covering only empty pixels.
    """
    centers = pixel_centers(n)
    while True:
        scene = _random_scene(rng, cfg)
        img = rasterize(scene, n, cfg.supersample)
        flat = img.reshape(-1)
        for _ in range(tries):
            a = Action(rng.uniform(), rng.uniform(), rng.uniform(0.0, 2 * math.pi), length)
            if not rectangle_in_workspace(a, cfg.pusher_width):
                continue
            if flat[points_in_rectangle(centers, a, cfg.pusher_width)].sum() > 0:
                after = rasterize(apply_push(scene, a, cfg), n, cfg.supersample)
                return img, a, after


def collect_bucket(length: float, count: int, seed: int, cfg: SimConfig = SimConfig(),
                   n: int = 32) -> DatasetFile:
    """``count`` canonical-frame pairs for one push length, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    pre = np.empty((count, n * n))
    post = np.empty((count, n * n))
    for i in range(count):
        img, a, after = sample_transition(rng, length, cfg, n)
        T = canonical_transform(a)
        pre[i] = vectorize(warp_image(img, T))
        post[i] = vectorize(warp_image(after, T))
    return DatasetFile(n, length, pre, post)


def cmd_collect(cfg: RunConfig) -> list[Path]:
    paths = []
    for k, length in enumerate(cfg.lengths):
        ds = collect_bucket(length, cfg.samples_per_length, stage_seed(cfg.seed, "collect", k),
                            cfg.sim, cfg.n)
        path = cfg.dataset_path(k)
        write_dataset(path, ds)
        log.info("bucket %d (length %.3f): %d pairs -> %s", k, length, ds.count, path)
        paths.append(path)
    return paths


# -- training ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def mean_pair_error(A: np.ndarray, pre: np.ndarray, post: np.ndarray) -> float:
    """Mean over pairs of ``||A y_k - y_k+1||`` (rows of ``pre``/``post`` are pairs)."""
    return float(np.mean(np.linalg.norm(pre @ A.T - post, axis=1)))


def split_indices(count: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split; the test part holds ``round(test_fraction * count)`` pairs."""
    perm = np.random.default_rng(seed).permutation(count)
    n_test = min(count - 1, max(1, int(round(test_fraction * count))))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


TRAIN_HEADER = ("mode", "bucket", "length", "n_train", "n_test", "train_err", "test_err",
                "identity_test_err")


def cmd_train(cfg: RunConfig, mode: str = "nonneg") -> Path:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    files = []
    for k in range(len(cfg.lengths)):
        path = cfg.dataset_path(k)
        if not path.exists():
            raise FileNotFoundError(f"missing dataset {path}; run 'collect' first")
        files.append(read_dataset(path))
    splits = [split_indices(ds.count, cfg.test_fraction, stage_seed(cfg.seed, "split", k))
              for k, ds in enumerate(files)]
    train = [ds.paired(k, tr) for k, (ds, (tr, _)) in enumerate(zip(files, splits))]
    model = train_switched_linear(train, tuple(ds.length for ds in files), mode, cfg.solver,
                                  cfg.sim.pusher_width)
    save_model(model, cfg.model_path(mode))
    rows = []
    for k, (ds, (tr, te)) in enumerate(zip(files, splits)):
        A = model.matrices[k]
        rows.append([mode, k, _fmt(ds.length), len(tr), len(te),
                     _fmt(mean_pair_error(A, ds.pre[tr], ds.post[tr])),
                     _fmt(mean_pair_error(A, ds.pre[te], ds.post[te])),
                     _fmt(mean_pair_error(np.eye(A.shape[0]), ds.pre[te], ds.post[te]))])
        log.info("%s bucket %d: test error %s", mode, k, rows[-1][6])
    _write_csv(cfg.out_dir / f"train_{mode}.csv", TRAIN_HEADER, rows)
    _write_compare(cfg)
    return cfg.model_path(mode)


def _write_compare(cfg: RunConfig) -> Path:
    rows = []
    for mode in MODES:
        path = cfg.out_dir / f"train_{mode}.csv"
        if path.exists():
            with open(path, newline="", encoding="utf-8") as fh:
                rows.extend(list(csv.reader(fh))[1:])
    return _write_csv(cfg.out_dir / "compare.csv", TRAIN_HEADER, rows)


# -- evaluation -------------------------------------------------------------------------


def evaluate_predictors(model: SwitchedLinearModel, transitions, tm: TransportModel,
                        seed: int = 0) -> dict:
    """Mean Frobenius error of the linear, transport and identity predictors.

    ``transitions`` is a sequence of ``(I_k, action, I_k+1)``; the transport
    prediction is rasterized back to an ``N x N`` image for comparison.
    """
    errs = {"linear": [], "transport": [], "identity": []}
    for i, (img, a, after) in enumerate(transitions):
        errs["linear"].append(frobenius_distance(predict_linear(model, img, a), after))
        ss = np.random.SeedSequence([seed, i])
        errs["transport"].append(frobenius_distance(transport_predict_image(tm, img, a, ss), after))
        errs["identity"].append(frobenius_distance(img, after))
    return {k: float(np.mean(v)) if v else float("nan") for k, v in errs.items()}


EVAL_HEADER = ("model", "n_test", "mean_err")


def fresh_transitions(model: SwitchedLinearModel, count: int, seed: int, cfg: SimConfig):
    """Held-out transitions with push lengths drawn uniformly from the model's buckets."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        length = model.lengths[int(rng.integers(model.k))]
        yield sample_transition(rng, length, cfg, model.n)


def cmd_eval(cfg: RunConfig, model_path: str | os.PathLike, n_test: int | None = None) -> Path:
    model = load_model(model_path)
    n_test = cfg.n_test if n_test is None else int(n_test)
    tm = TransportModel(pusher_width=model.pusher_width,
                        rng_seed_base=stage_seed(cfg.seed, "transport"))
    seed = stage_seed(cfg.seed, "eval")
    errs = evaluate_predictors(model, fresh_transitions(model, n_test, seed, cfg.sim), tm, seed)
    rows = [[name, n_test, _fmt(errs[name])] for name in ("linear", "transport", "identity")]
    for r in rows:
        log.info("%s: mean error %s over %d transitions", *r[::2], n_test)
    return _write_csv(cfg.out_dir / "eval.csv", EVAL_HEADER, rows)


# -- closed loop ------------------------------------------------------------------------


def resolve_target(name: str, n: int = 32) -> TargetSet:
    """``square``, ``l_shape``, or a path to a PGM mask (non-zero pixels are target)."""
    if name == "square":
        return TargetSet.square(n)
    if name in ("l_shape", "l-shape", "L"):
        return TargetSet.l_shape(n)
    t = TargetSet.from_pgm(name)
    if t.n != n:
        raise ValueError(f"target {name} is {t.n}x{t.n}, expected {n}x{n}")
    return t


def make_predictor(kind: str, cfg: RunConfig):
    """Predictor for ``kind``: ``oracle``, ``transport``, ``identity`` or an SLVF model path."""
    if kind == "oracle":
        return OraclePredictor(cfg.sim, cfg.n)
    if kind == "transport":
        return TransportPredictor(TransportModel(pusher_width=cfg.sim.pusher_width,
                                                 rng_seed_base=stage_seed(cfg.seed, "transport")),
                                  cfg.n)
    if kind == "identity":
        return IdentityPredictor()
    model = load_model(kind)
    if model.n != cfg.n:
        raise ValueError(f"model resolution {model.n} differs from config n={cfg.n}")
    return LinearPredictor(model)


def rollout_scenes(cfg: RunConfig) -> list[Scene]:
    """The seeded initial scenes of the closed-loop benchmark."""
    return [spawn_scene(cfg.sim, cfg.pieces, ROLLOUT_REGION, stage_seed(cfg.seed, "rollout", r))
            for r in range(cfg.runs)]


ROLLOUT_HEADER = ("run", "step", "V_pred", "V_real", "status")


def rollout_rows(run: int, result: control.RolloutLog) -> list[list]:
    """Step 0 is the initial observation (``V_pred`` is nan); the last row carries the status."""
    rows = [[run, 0, "nan", _fmt(result.v_initial), "running"]]
    for s in result.steps:
        rows.append([run, s.step + 1, _fmt(s.v_pred), _fmt(s.v_real), "running"])
    rows[-1][4] = result.status
    return rows


def cmd_rollout(cfg: RunConfig, predictor: str, frames: bool = False,
                scenes: Sequence[Scene] | None = None) -> Path:
    target = resolve_target(cfg.target, cfg.n)
    f = build_distance_field(target)
    pred = make_predictor(predictor, cfg)
    scenes = rollout_scenes(cfg) if scenes is None else list(scenes)
    rows = []
    for run, scene in enumerate(scenes):
        result = rollout(scene, pred, f, cfg.grid, cfg.max_steps, cfg.v_stop, cfg.sim,
                         keep_frames=frames)
        rows.extend(rollout_rows(run, result))
        log.info("run %d: %s after %d pushes, V %.4f -> %.4f", run, result.status,
                 len(result), result.v_initial, result.v_final)
        if frames:
            fdir = cfg.out_dir / "frames"
            fdir.mkdir(parents=True, exist_ok=True)
            for s, img in enumerate(result.frames):
                write_pgm(fdir / f"run{run:02d}_step{s:03d}.pgm", img)
    return _write_csv(cfg.out_dir / "rollout.csv", ROLLOUT_HEADER, rows)


# -- introspection ----------------------------------------------------------------------


def minmax(img) -> np.ndarray:
    """Rescale to ``[0, 1]``; a constant image becomes uniform 0.5."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi - lo <= 0.0:
        return np.full(img.shape, 0.5)
    return (img - lo) / (hi - lo)


def parse_pixels(text: str, n: int) -> list[tuple[int, int]]:
    """``"i,j;i,j"`` -> list of (row, col); raises ``IndexError`` outside the image."""
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        try:
            i, j = (int(t) for t in item.split(","))
        except ValueError as exc:
            raise ValueError(f"bad pixel {item!r}; expected 'row,col'") from exc
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"pixel ({i}, {j}) outside a {n}x{n} image")
        out.append((i, j))
    if not out:
        raise ValueError("no pixels given")
    return out


def default_pixels(n: int) -> list[tuple[int, int]]:
    """Center, one pixel ahead of the push rectangle, and a far corner."""
    c = n // 2
    return [(c, c), (c, min(n - 1, c + n // 4 + 2)), (n // 8, n // 8)]


IMAGE_CSV_HEADER = ("bucket", "i", "j", "row", "col", "value")


def cmd_kernels(cfg: RunConfig, model_path: str | os.PathLike,
                pixels: Sequence[tuple[int, int]] | None = None) -> Path:
    model = load_model(model_path)
    pixels = default_pixels(model.n) if pixels is None else list(pixels)
    for i, j in pixels:
        if not (0 <= i < model.n and 0 <= j < model.n):
            raise IndexError(f"pixel ({i}, {j}) outside a {model.n}x{model.n} image")
    kdir = cfg.out_dir / "kernels"
    kdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(model.k):
        for i, j in pixels:
            kern = extract_kernel(model, k, i, j)
            write_pgm(kdir / f"kernel_b{k}_r{i}_c{j}.pgm", minmax(kern))
            rows.extend([k, i, j, r, c, _fmt(kern[r, c])]
                        for r in range(model.n) for c in range(model.n))
    return _write_csv(kdir / "kernels.csv", IMAGE_CSV_HEADER, rows)


def cmd_step_response(cfg: RunConfig, model_path: str | os.PathLike) -> Path:
    model = load_model(model_path)
    sdir = cfg.out_dir / "step"
    sdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(model.k):
        img = step_response(model, k)
        write_pgm(sdir / f"step_b{k}.pgm", minmax(img))
        rows.extend([k, -1, -1, r, c, _fmt(img[r, c])]
                    for r in range(model.n) for c in range(model.n))
    return _write_csv(sdir / "step_response.csv", IMAGE_CSV_HEADER, rows)


# -- CLI --------------------------------------------------------------------------------

_EPILOG = """\
output CSV schemas (UTF-8, header row, floats in round-trip repr):
  train_<mode>.csv, compare.csv:
      mode,bucket,length,n_train,n_test,train_err,test_err,identity_test_err
      errors are mean per-pair Frobenius norms ||A y_k - y_k+1|| in the canonical frame
  eval.csv:
      model,n_test,mean_err        rows: linear, transport, identity
  rollout.csv:
      run,step,V_pred,V_real,status
      step 0 is the initial observation (V_pred = nan); status is 'running' except on the
      last row of each run: converged | max_steps | stalled
  kernels/kernels.csv, step/step_response.csv:
      bucket,i,j,row,col,value     raw (un-normalized) values; i,j = -1 for step responses

binary files: data/bucket_<k>.slds (dataset), model_<mode>.slvf (model), *.pgm (P5 images,
min-max normalized for kernels and step responses).

config file: flat 'key = value' lines; keys are RunConfig fields (n, lengths, positions,
angles, samples_per_length, test_fraction, seed, out, runs, max_steps, v_stop, pieces,
n_test, target) and 'sim.<field>' / 'solver.<field>'. Command-line flags win.
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out", help="output directory (default ./run)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="pileforesight", description=__doc__.split("\n")[0],
                                epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", parents=[common], help="simulate and store training pairs")
    c.add_argument("--samples", type=int, help="pairs per push length (default 1000)")

    t = sub.add_parser("train", parents=[common], help="fit per-length transition matrices")
    t.add_argument("--mode", choices=MODES + ("all",), default="nonneg")

    e = sub.add_parser("eval", parents=[common], help="held-out prediction error table")
    e.add_argument("--model", help="SLVF model (default <out>/model_nonneg.slvf)")
    e.add_argument("--n-test", type=int, help="number of fresh transitions (default 1000)")

    r = sub.add_parser("rollout", parents=[common], help="closed-loop greedy pushing")
    r.add_argument("--model", default=None,
                   help="SLVF model path, or 'oracle', 'transport', 'identity' "
                        "(default <out>/model_nonneg.slvf)")
    r.add_argument("--target", help="'square', 'l_shape' or a PGM mask path")
    r.add_argument("--runs", type=int, help="number of seeded scenes (default 10)")
    r.add_argument("--max-steps", type=int, help="push budget per run (default 40)")
    r.add_argument("--v-stop", type=float, help="convergence threshold on V (default 0.02)")
    r.add_argument("--frames", action="store_true", help="write per-step PGM frames")

    k = sub.add_parser("kernels", parents=[common], help="export kernel images")
    k.add_argument("--model", help="SLVF model (default <out>/model_nonneg.slvf)")
    k.add_argument("--pixels", help="'row,col;row,col;...' (default: center, ahead, corner)")

    s = sub.add_parser("step-response", parents=[common], help="export step-response images")
    s.add_argument("--model", help="SLVF model (default <out>/model_nonneg.slvf)")
    return p


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _coerce(key.strip(), value)
    for attr, key in (("seed", "seed"), ("out", "out"), ("samples", "samples_per_length"),
                      ("n_test", "n_test"), ("target", "target"), ("runs", "runs"),
                      ("max_steps", "max_steps"), ("v_stop", "v_stop")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, **overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = _config_from_args(args)
        model = getattr(args, "model", None) or str(cfg.model_path("nonneg"))
        if args.command == "collect":
            written = cmd_collect(cfg)
        elif args.command == "train":
            modes = MODES if args.mode == "all" else (args.mode,)
            written = [cmd_train(cfg, m) for m in modes]
        elif args.command == "eval":
            written = [cmd_eval(cfg, model)]
        elif args.command == "rollout":
            written = [cmd_rollout(cfg, model, frames=args.frames)]
        elif args.command == "kernels":
            pixels = parse_pixels(args.pixels, load_model(model).n) if args.pixels else None
            written = [cmd_kernels(cfg, model, pixels)]
        else:
            written = [cmd_step_response(cfg, model)]
    except (OSError, ValueError, IndexError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"pileforesight {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
