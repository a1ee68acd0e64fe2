"""End-to-end acceptance suite.

Each test checks one criterion at its stated tolerance and runtime budget and
prints a single ``PASS``/``FAIL`` line. The expensive default pipeline
(collect + train at full size) runs once per session and is shared.
"""
import csv
import time
from collections import defaultdict

import numpy as np
import pytest
from scipy.optimize import nnls as scipy_nnls

from conftest import brute_force_distance, nnls_enumerate
from pileforesight.control import (ActionGrid, TargetSet, build_distance_field, enumerate_actions,
                                   greedy_action, lyapunov_image, lyapunov_particles)
from pileforesight.foresight import (TransportModel, extract_kernel, load_model,
                                     particles_from_image, save_model, step_response)
from pileforesight.geometry import pixel_centers
from pileforesight.harness import DatasetFile, RunConfig, main, read_dataset, write_dataset
from pileforesight.imaging import write_pgm
from pileforesight.lsq import PairedDataset, fit_row_nonneg, kkt_residual

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def _report(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return _report


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"pileforesight {' '.join(map(str, argv))} exited with {code}"


def runs_of(path):
    """Per run: (status, number of pushes, list of (V_before, V_pred) per push)."""
    rows = defaultdict(list)
    for r in read_rows(path):
        rows[int(r["run"])].append(r)
    out = {}
    for run, rs in sorted(rows.items()):
        pairs = [(float(a["V_real"]), float(b["V_pred"])) for a, b in zip(rs, rs[1:])]
        out[run] = (rs[-1]["status"], len(rs) - 1, pairs)
    return out


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    run_cli("collect", "--out", out)
    run_cli("train", "--out", out, "--mode", "all")
    return RunConfig(out=str(out)), time.perf_counter() - t0


@pytest.fixture(scope="session")
def oracle_rollout(pipeline):
    cfg, _ = pipeline
    out = cfg.out_dir / "oracle"
    t0 = time.perf_counter()
    run_cli("rollout", "--out", out, "--model", "oracle")
    return runs_of(out / "rollout.csv"), time.perf_counter() - t0


def test_c1_solver_correctness(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_gap, worst_kkt = 0.0, 0.0
    for _ in range(200):
        Y0, Y1 = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
        d = PairedDataset(Y0, Y1)
        tm = fit_row_nonneg(d)
        G = Y0 @ Y0.T
        for i in range(5):
            _, f_star = nnls_enumerate(G, Y0 @ Y1[i], 0.5 * Y1[i] @ Y1[i])
            f = 0.5 * np.sum((Y1[i] - tm.A[i] @ Y0) ** 2)
            worst_gap = max(worst_gap, abs(f - f_star))
        worst_kkt = max(worst_kkt, kkt_residual(tm, d))
    dt = time.perf_counter() - t0
    ok = worst_gap <= 1e-6 and worst_kkt <= 1e-6 and dt < 10
    report(1, "solver correctness", ok,
           f"max objective gap {worst_gap:.2e}, max KKT {worst_kkt:.2e}, {dt:.1f}s")


def test_c2_decomposition_equivalence(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(4, 20))
        Y0, Y1 = rng.uniform(size=(9, m)), rng.uniform(size=(9, m))
        A_rows = fit_row_nonneg(PairedDataset(Y0, Y1)).A
        # one 81-variable problem over vec(A): the design is block diagonal in the rows of A
        design = np.kron(np.eye(9), Y0.T)
        vec, _ = scipy_nnls(design, Y1.reshape(-1), maxiter=10_000)
        f_mono = np.sum((design @ vec - Y1.reshape(-1)) ** 2)
        f_rows = np.sum((A_rows @ Y0 - Y1) ** 2)
        worst = max(worst, abs(f_rows - f_mono))
    dt = time.perf_counter() - t0
    report(2, "decomposition equivalence", worst <= 1e-6 and dt < 60,
           f"max |row-wise - monolithic| objective {worst:.2e}, {dt:.1f}s")


def test_c3_least_squares_ordering(pipeline, report):
    cfg, dt = pipeline
    errs = defaultdict(dict)
    for r in read_rows(cfg.out_dir / "compare.csv"):
        errs[r["mode"]][int(r["bucket"])] = float(r["test_err"])
    buckets = sorted(errs["nonneg"])
    ok = all(errs["nonneg"][k] <= 1.05 * errs["ols"][k] and errs["nonneg"][k] < errs["rowsum"][k]
             for k in buckets) and dt < 30 * 60
    detail = "; ".join(f"b{k} nonneg {errs['nonneg'][k]:.3f} ols {errs['ols'][k]:.3f} "
                       f"rowsum {errs['rowsum'][k]:.3f}" for k in buckets)
    report(3, "least-squares ordering", ok, f"{detail}; collect+train {dt:.0f}s")


def test_c4_prediction_beats_identity(pipeline, report):
    cfg, _ = pipeline
    t0 = time.perf_counter()
    run_cli("eval", "--out", cfg.out_dir, "--n-test", 1000)
    dt = time.perf_counter() - t0
    errs = {r["model"]: float(r["mean_err"]) for r in read_rows(cfg.out_dir / "eval.csv")}
    ok = errs["linear"] < errs["identity"] and dt < 5 * 60
    report(4, "prediction beats identity", ok,
           f"linear {errs['linear']:.3f}, transport {errs['transport']:.3f}, "
           f"identity {errs['identity']:.3f} over 1000 transitions, {dt:.0f}s")


def test_c5_kernel_structure(pipeline, report):
    cfg, _ = pipeline
    t0 = time.perf_counter()
    model = load_model(cfg.model_path("nonneg"))
    n, w = model.n, model.pusher_width
    c = pixel_centers(n)
    depth = TransportModel().band_depth
    fractions, bands = [], []
    for k, length in enumerate(model.lengths):
        # canonical rectangle: x in [0.5, 0.5 + L], y in [0.5 - w/2, 0.5 + w/2]
        dx = np.maximum.reduce([0.5 - c[:, 0], np.zeros(n * n), c[:, 0] - (0.5 + length)])
        dy = np.maximum(np.abs(c[:, 1] - 0.5) - 0.5 * w, 0.0)
        far = np.flatnonzero(np.hypot(dx, dy) * n >= 8.0)
        own = [int(np.argmax(extract_kernel(model, k, p // n, p % n))) == p for p in far]
        fractions.append(float(np.mean(own)))
        lateral = np.abs(c[:, 1] - 0.5) <= 0.5 * w
        inside = lateral & (c[:, 0] >= 0.5) & (c[:, 0] <= 0.5 + length)
        ahead = lateral & (c[:, 0] > 0.5 + length) & (c[:, 0] <= 0.5 + length + depth)
        resp = step_response(model, k).reshape(-1)
        bands.append((resp[inside].mean(), resp[ahead].mean()))
    dt = time.perf_counter() - t0
    ok = min(fractions) >= 0.9 and all(a < b for a, b in bands) and dt < 60
    report(5, "kernel structure", ok,
           "identity fraction " + ", ".join(f"{f:.3f}" for f in fractions)
           + "; step response inside/ahead " + ", ".join(f"{a:.3f}/{b:.3f}" for a, b in bands)
           + f"; {dt:.1f}s")


def test_c6_closed_loop_descent(pipeline, oracle_rollout, report):
    cfg, _ = pipeline
    oracle, dt_oracle = oracle_rollout
    t0 = time.perf_counter()
    run_cli("rollout", "--out", cfg.out_dir / "linear", "--model", cfg.model_path("nonneg"))
    run_cli("rollout", "--out", cfg.out_dir / "transport", "--model", "transport")
    dt = dt_oracle + time.perf_counter() - t0
    linear = runs_of(cfg.out_dir / "linear" / "rollout.csv")
    transport = runs_of(cfg.out_dir / "transport" / "rollout.csv")
    oracle_ok = sum(s == "converged" and k <= 40 for s, k, _ in oracle.values())
    linear_ok = sum(linear[r][0] == "converged" and linear[r][1] <= 2 * oracle[r][1] for r in oracle)
    transport_ok = sum(s == "converged" for s, _, _ in transport.values())
    ok = oracle_ok == 10 and linear_ok >= 8 and transport_ok >= 8 and dt < 20 * 60
    report(6, "closed-loop descent", ok,
           f"oracle {oracle_ok}/10 (steps {[v[1] for v in oracle.values()]}), "
           f"linear {linear_ok}/10 within 2x (steps {[v[1] for v in linear.values()]}), "
           f"transport {transport_ok}/10 (steps {[v[1] for v in transport.values()]}), {dt:.0f}s")


def test_clf_sanity(oracle_rollout, report):
    oracle, _ = oracle_rollout
    deltas = [v_pred - v_before for _, _, pairs in oracle.values() for v_before, v_pred in pairs]
    frac = float(np.mean(np.array(deltas) < 0))
    report("CLF", "oracle predicted descent", frac >= 0.95,
           f"predicted dV < 0 in {frac:.1%} of {len(deltas)} oracle steps")


def test_c7_non_convex_target(pipeline, report):
    cfg, _ = pipeline
    out = cfg.out_dir / "lshape"
    out.mkdir()
    write_pgm(out / "target.pgm", TargetSet.l_shape(cfg.n).mask.astype(float))
    t0 = time.perf_counter()
    run_cli("rollout", "--out", out, "--model", cfg.model_path("nonneg"), "--target",
            out / "target.pgm", "--max-steps", 80, "--v-stop", 0.05)
    dt = time.perf_counter() - t0
    runs = runs_of(out / "rollout.csv")
    conv = sum(s == "converged" for s, _, _ in runs.values())
    report(7, "non-convex target", conv >= 7 and dt < 30 * 60,
           f"{conv}/10 reached V <= 0.05 (steps {[v[1] for v in runs.values()]}), {dt:.0f}s")


def test_c8_lyapunov_properties(report):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    square = TargetSet.square(32)
    f = build_distance_field(square)
    checks = {}
    imgs = [(rng.uniform(size=(32, 32)) < 0.15) * rng.uniform(0.1, 1, (32, 32)) + 1e-3 for _ in range(20)]
    checks["intensity invariance"] = all(
        abs(lyapunov_image(f, c * im) - lyapunov_image(f, im)) <= 1e-12
        for im in imgs for c in (0.1, 0.5, 3.0))

    grid = ActionGrid(4, 4, (0.12, 0.24))
    preds = rng.uniform(size=(len(enumerate_actions(grid)), 32, 32))

    class Scaled:
        def __init__(self, s):
            self.s = s

        def predict_many(self, img, actions):
            return self.s * preds
    checks["argmin invariance"] = all(
        greedy_action(Scaled(s), imgs[0], f, grid)[0] == greedy_action(Scaled(1.0), imgs[0], f, grid)[0]
        for s in (0.01, 0.3, 7.0))

    ok_iff = True
    for im in imgs:
        ok_iff &= lyapunov_image(f, im * square.mask) == 0.0
        ok_iff &= lyapunov_image(f, im) > 0.0
    checks["V = 0 iff inside"] = bool(ok_iff)

    worst = 0.0
    for _ in range(20):
        b = (rng.uniform(size=(32, 32)) < 0.2).astype(float)
        b[0, 0] = 1.0
        worst = max(worst, abs(lyapunov_image(f, b) - lyapunov_particles(square, particles_from_image(b))))
    checks["particle/image agreement"] = worst <= 1e-9

    exact = True
    for p in (1.0, 2.0, np.inf):
        mask = rng.uniform(size=(32, 32)) < 0.02
        mask[5, 7] = True
        exact &= np.allclose(build_distance_field(TargetSet(mask), p).D, brute_force_distance(mask, p),
                             rtol=0, atol=1e-12)
    checks["distance-field exactness"] = bool(exact)
    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    report(8, "Lyapunov properties", not failed and dt < 60,
           f"{len(checks) - len(failed)}/{len(checks)} properties hold"
           + (f" (failed: {', '.join(failed)})" if failed else "") + f", {dt:.1f}s")


def _small_pipeline(out):
    common = ["--out", out, "--seed", 3, "--set", "lengths=0.12,0.24"]
    run_cli("collect", *common, "--samples", 20)
    run_cli("train", *common, "--mode", "all")
    run_cli("eval", *common, "--n-test", 20)
    run_cli("rollout", *common, "--runs", 2, "--max-steps", 3)
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_c9_determinism_and_serialization(pipeline, tmp_path, report):
    t0 = time.perf_counter()
    first = _small_pipeline(tmp_path / "a")
    second = _small_pipeline(tmp_path / "b")
    same_csv = first.keys() == second.keys() and all(first[k] == second[k] for k in first)

    cfg, _ = pipeline
    model = load_model(cfg.model_path("nonneg"))
    save_model(model, tmp_path / "copy.slvf")
    slvf = (tmp_path / "copy.slvf").read_bytes() == cfg.model_path("nonneg").read_bytes() and all(
        a.tobytes() == b.tobytes() for a, b in zip(load_model(tmp_path / "copy.slvf").matrices,
                                                   model.matrices))
    ds = read_dataset(cfg.dataset_path(0))
    write_dataset(tmp_path / "copy.slds", ds)
    back = read_dataset(tmp_path / "copy.slds")
    slds = ((tmp_path / "copy.slds").read_bytes() == cfg.dataset_path(0).read_bytes()
            and back.pre.tobytes() == ds.pre.tobytes() and back.post.tobytes() == ds.post.tobytes())
    assert isinstance(back, DatasetFile)
    dt = time.perf_counter() - t0
    report(9, "determinism and serialization", same_csv and slvf and slds,
           f"{len(first)} CSVs byte-identical: {same_csv}; SLVF bit-exact: {slvf}; "
           f"SLDS bit-exact: {slds}; {dt:.0f}s")
