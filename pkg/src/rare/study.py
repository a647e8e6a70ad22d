"""Simulated reconstruction study: simulate, train, reconstruct, evaluate, report.

Every stage reads what the previous one wrote under ``cfg.out`` and records
its outputs in a JSON manifest, so the stages can run as separate commands.
All randomness derives from ``cfg.seed``.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as rio
from .config import config_digest
from .metrics import evaluate_run, format_table, phase_curves
from .priors import NetRemover, TVParams
from .simulation import (
    AcquisitionConfig,
    PhantomConfig,
    acquire,
    make_dataset,
    make_operator,
    make_phantom,
    spokes_for_rate,
)
from .solvers import SolverConfig, SolverDivergedError, fista_tv_solve, rare_solve
from .training import ArtifactRemovalNet, build_pairs

logger = logging.getLogger(__name__)

__all__ = [
    "StudyError",
    "simulate",
    "train",
    "reconstruct",
    "evaluate",
    "report",
    "run_all",
    "file_digest",
    "case_acquisition",
]

_GOLDEN_FRACTION = (math.sqrt(5.0) - 1.0) / 2.0


class StudyError(RuntimeError):
    """A stage cannot run with what is on disk."""


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _array_digest(stem):
    return file_digest(f"{stem}.raw")


def _dirs(cfg):
    root = Path(cfg.out)
    return {
        "root": root,
        "data": root / "data",
        "weights": root / "weights",
        "results": root / "results",
        "tables": root / "tables",
        "report": root / "report",
    }


def _read_json(path, what):
    if not Path(path).exists():
        raise StudyError(f"missing {what}: {path}")
    return rio.read_manifest(path)


def _phantom_cfg(cfg, seed):
    p = cfg.phantom
    return PhantomConfig(size=p.size, n_phases=p.n_phases, seed=seed,
                         supersample=p.supersample, texture=p.texture)


def _train_ids(cfg):
    return [(f"train{j}", 1000 * cfg.seed + j) for j in range(cfg.training.n_objects)]


def _test_ids(cfg):
    return [(f"test{j}", 1000 * cfg.seed + 500 + j) for j in range(cfg.n_test_objects)]


def _cell_label(cell):
    snr = "inf" if cell.snr_db is None else f"{cell.snr_db:g}"
    return f"r{cell.rate:g}_snr{snr}"


def case_acquisition(cfg, cell_index, object_index):
    cell = cfg.cells[cell_index]
    size = cfg.phantom.size
    return AcquisitionConfig(
        spokes=spokes_for_rate(cell.rate, size, cfg.readout),
        readout=cfg.readout,
        scheme="golden",
        rotation=0.0,
        snr_db=cell.snr_db,
        seed=100000 * (cfg.seed + 1) + 100 * cell_index + object_index,
    )


def _train_acquisitions(cfg):
    t = cfg.training
    spokes = spokes_for_rate(t.rate, cfg.phantom.size, cfg.readout)
    return [
        AcquisitionConfig(
            spokes=spokes,
            readout=cfg.readout,
            scheme="golden",
            rotation=math.pi * ((i + 1) * _GOLDEN_FRACTION % 1.0),
            snr_db=t.snr_db,
            seed=10000 * (cfg.seed + 1) + i,
        )
        for i in range(t.n_acquisitions)
    ]


# ---------------------------------------------------------------- simulate


def simulate(cfg):
    """Ground truth, A2A training images and test measurements; returns the manifest."""
    d = _dirs(cfg)
    data = d["data"]
    objects = {}
    phantoms = {}
    for role, ids in (("train", _train_ids(cfg)), ("test", _test_ids(cfg))):
        for name, seed in ids:
            x = make_phantom(_phantom_cfg(cfg, seed))
            stem = rio.write_image(data / "gt" / name, x)
            objects[name] = {"role": role, "seed": seed, "image": stem,
                             "digest": _array_digest(stem)}
            if role == "train":
                phantoms[name] = x

    dataset = make_dataset(phantoms, _train_acquisitions(cfg), out_dir=str(data / "train"))
    train_entries = [
        {"object_id": e.object_id, "acquisition_id": e.acquisition_id,
         "config_digest": e.digest, "image": e.path, "digest": _array_digest(e.path)}
        for e in dataset.entries
    ]

    cases = []
    for (name, _), j in zip(_test_ids(cfg), range(cfg.n_test_objects)):
        x = rio.read_image(objects[name]["image"])
        for c, cell in enumerate(cfg.cells):
            acq = case_acquisition(cfg, c, j)
            op, y = acquire(x, acq)
            case = f"{name}_{_cell_label(cell)}"
            y_stem = rio.write_array(data / "cases" / f"{case}_kspace", y,
                                     axes=["phase", "coil", "sample"],
                                     meta={"snr_db": cell.snr_db})
            cases.append({
                "case": case, "object_id": name, "cell": c, "rate": cell.rate,
                "snr_db": cell.snr_db, "acquisition": asdict(acq),
                "kspace": y_stem, "digest": _array_digest(y_stem),
            })

    path = data / "manifest.json"
    rio.write_manifest(path, train_entries, config_digest=config_digest(cfg),
                       objects=objects, cases=cases)
    logger.info("simulated %d training images and %d test cases", len(train_entries), len(cases))
    return rio.read_manifest(path)


def _load_dataset(cfg):
    return _read_json(_dirs(cfg)["data"] / "manifest.json", "dataset manifest (run simulate)")


# ------------------------------------------------------------------- train


def _net(cfg, **overrides):
    t = cfg.training
    params = dict(depth=t.depth, width=t.width, kernel_size=t.kernel_size, alpha=t.alpha,
                  learning_rate=t.learning_rate, batch_size=t.batch_size, epochs=t.epochs,
                  patch_size=t.patch_size, init=t.init, random_state=cfg.seed)
    params.update(overrides)
    return ArtifactRemovalNet(**params)


def _write_history(path, history):
    lines = ["epoch\tloss"] + [f"{i}\t{v!r}" for i, v in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")


def red_training_set(cfg, sigma, gts):
    """Ground-truth images paired with AWGN-corrupted copies (complex noise, std ``sigma``)."""
    rng = np.random.RandomState(cfg.seed + 7)
    inputs, targets = [], []
    for _ in range(cfg.red.copies):
        for x in gts:
            noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
            inputs.append(x + sigma / math.sqrt(2.0) * noise)
            targets.append(x)
    return np.stack(inputs), np.stack(targets)


def train(cfg):
    """Train the A2A prior (and RED denoisers if requested); returns the weights manifest."""
    d = _dirs(cfg)
    manifest = _load_dataset(cfg)
    grouped = {}
    for e in manifest["entries"]:
        grouped.setdefault(e["object_id"], []).append(
            (e["acquisition_id"], rio.read_image(e["image"]))
        )
    pairs = build_pairs(grouped, policy=cfg.training.pairing)
    if not pairs:
        raise StudyError("no training pairs: every object needs at least two acquisitions")
    net = _net(cfg).fit_pairs(pairs)
    wdir = d["weights"]
    wdir.mkdir(parents=True, exist_ok=True)
    a2a = rio.write_weights(wdir / "a2a.weights", net.weights_)
    _write_history(wdir / "a2a_loss.tsv", net.loss_history_)
    entries = [{"name": "a2a", "weights": a2a, "digest": file_digest(a2a),
                "n_pairs": len(pairs), "final_loss": net.loss_history_[-1]}]

    if "RED-denoiser" in cfg.methods:
        gts = [rio.read_image(o["image"]) for o in manifest["objects"].values()
               if o["role"] == "train"][: cfg.red.n_objects]
        for k, sigma in enumerate(cfg.red.sigmas):
            X, Y = red_training_set(cfg, sigma, gts)
            den = _net(cfg, epochs=cfg.red.epochs).fit(X, Y)
            path = rio.write_weights(wdir / f"red{k}.weights", den.weights_)
            _write_history(wdir / f"red{k}_loss.tsv", den.loss_history_)
            entries.append({"name": f"red{k}", "sigma": sigma, "weights": path,
                            "digest": file_digest(path), "final_loss": den.loss_history_[-1]})
    rio.write_manifest(wdir / "manifest.json", entries, config_digest=config_digest(cfg))
    return rio.read_manifest(wdir / "manifest.json")


# ------------------------------------------------------------- reconstruct


def _solver_cfg(cfg, **kw):
    s = cfg.solver
    base = dict(beta=s.beta, rho=s.rho, real_projection=s.real_projection, seed=cfg.seed)
    base.update(kw)
    return SolverConfig(**base)


def _psnr_vs(x, ref):
    from .metrics import psnr

    return psnr(x, ref)[1]


def _candidates(cfg, method, weights, grid):
    """``[(label, params, solve)]`` for every grid point of ``method``."""
    s = cfg.solver
    taus = grid.get("tau", s.tau_grid)
    lams = grid.get("lam", s.lam_grid)
    if method == "ZF":
        return [("zf", {}, lambda y, op: (op.pseudoinverse(y), None))]
    if method == "CS-TV":
        out = []
        for lam in lams:
            def solve(y, op, lam=lam):
                rep = fista_tv_solve(y, op, TVParams(lam, s.tv_inner),
                                     _solver_cfg(cfg, max_iters=s.tv_iters))
                return rep.image, rep
            out.append((f"lam={lam:g}", {"lam": lam}, solve))
        return out
    if method == "RARE-A2A":
        nets = [("a2a", None, weights["a2a"])]
    else:
        nets = [(n, sig, w) for n, (sig, w) in weights["red"].items()]
    out = []
    for name, sigma, w in nets:
        remover = NetRemover(w)
        for tau in taus:
            def solve(y, op, tau=tau, remover=remover):
                rep = rare_solve(y, op, remover, _solver_cfg(cfg, tau=tau, max_iters=s.rare_iters))
                return rep.image, rep
            params = {"tau": tau}
            if sigma is not None:
                params["sigma"] = sigma
            out.append((f"{name}_tau={tau:g}", params, solve))
    return out


def _load_weights(cfg, methods):
    need = [m for m in methods if m in ("RARE-A2A", "RED-denoiser")]
    if not need:
        return {}
    wman = _read_json(_dirs(cfg)["weights"] / "manifest.json", "weights manifest (run train)")
    by_name = {e["name"]: e for e in wman["entries"]}
    out = {"red": {}}
    if "RARE-A2A" in need:
        if "a2a" not in by_name:
            raise StudyError("RARE-A2A needs trained A2A weights")
        out["a2a"] = rio.read_weights(by_name["a2a"]["weights"])
    if "RED-denoiser" in need:
        red = {n: e for n, e in by_name.items() if n.startswith("red")}
        if not red:
            raise StudyError("RED-denoiser needs trained denoiser weights")
        for n, e in sorted(red.items()):
            out["red"][n] = (e["sigma"], rio.read_weights(e["weights"]))
    return out


def _entry_digest(cfg, method, case, grid, weight_digests):
    payload = json.dumps([config_digest(cfg), method, case["digest"], grid, weight_digests],
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def reconstruct(cfg, methods=None, grid=None, resume=False):
    """Reconstruct every test case with every method, selecting grid values per cell.

    For each (cell, method) all grid values are run on all of the cell's
    cases and the value with the best mean PSNR against ground truth is kept.
    A solver divergence is recorded for that grid value and the run goes on.
    """
    methods = list(methods or cfg.methods)
    grid = dict(grid or {})
    d = _dirs(cfg)
    data = _load_dataset(cfg)
    weights = _load_weights(cfg, methods)
    weight_digests = {}
    if weights:
        wman = rio.read_manifest(d["weights"] / "manifest.json")
        weight_digests = {e["name"]: e["digest"] for e in wman["entries"]}
    rdir = d["results"]
    rdir.mkdir(parents=True, exist_ok=True)
    man_path = rdir / "manifest.json"
    previous = {}
    if resume and man_path.exists():
        for e in rio.read_manifest(man_path)["entries"]:
            previous[(e["case"], e["method"])] = e

    objects = data["objects"]
    cells = {}
    for case in data["cases"]:
        cells.setdefault(case["cell"], []).append(case)

    results = {}
    for c in sorted(cells):
        cases = cells[c]
        for method in methods:
            digests = {case["case"]: _entry_digest(cfg, method, case, grid, weight_digests)
                       for case in cases}
            reuse = [previous.get((case["case"], method)) for case in cases]
            if all(r is not None and r["digest"] == digests[r["case"]]
                   and Path(f"{r['image']}.raw").exists() for r in reuse):
                for r in reuse:
                    results[(r["case"], method)] = r
                logger.info("resume: keeping %s for cell %d", method, c)
                continue
            ops = []
            for case in cases:
                acq = AcquisitionConfig(**case["acquisition"])
                gt = rio.read_image(objects[case["object_id"]]["image"])
                op = make_operator(acq, gt.shape[0], gt.shape[1])
                y, _ = rio.read_array(case["kspace"])
                ops.append((case, gt, op, y))
            best = None
            scores = []
            for label, params, solve in _candidates(cfg, method, weights, grid):
                outs, ok = [], True
                for case, gt, op, y in ops:
                    try:
                        outs.append(solve(y, op))
                    except SolverDivergedError as exc:
                        logger.warning("%s %s %s diverged: %s", method, case["case"], label, exc)
                        scores.append({"label": label, "params": params, "error": str(exc)})
                        ok = False
                        break
                if not ok:
                    continue
                mean = float(np.mean([_psnr_vs(img, gt) for (img, _), (_, gt, _, _) in zip(outs, ops)]))
                scores.append({"label": label, "params": params, "psnr": mean})
                if best is None or mean > best[0]:
                    best = (mean, label, params, outs)
            for case, _, _, _ in ops:
                entry = {"case": case["case"], "method": method, "rate": case["rate"],
                         "snr_db": case["snr_db"], "digest": digests[case["case"]],
                         "grid": scores}
                if best is None:
                    entry.update({"image": None, "error": "all grid values diverged"})
                else:
                    k = [o[0]["case"] for o in ops].index(case["case"])
                    img, rep = best[3][k]
                    stem = rio.write_image(rdir / case["case"] / method, img)
                    entry.update({"image": stem, "selected": best[1], "params": best[2],
                                  "termination": None if rep is None else rep.termination,
                                  "iterations": None if rep is None else len(rep.trace)})
                    if rep is not None:
                        Path(f"{stem}_trace.tsv").write_text(rep.trace_text())
                results[(case["case"], method)] = entry
            _save_results(man_path, cfg, results)
    return _save_results(man_path, cfg, results)


def _save_results(path, cfg, results):
    entries = [results[k] for k in sorted(results)]
    rio.write_manifest(path, entries, config_digest=config_digest(cfg))
    return rio.read_manifest(path)


# --------------------------------------------------------- evaluate/report


def _references(cfg):
    data = _load_dataset(cfg)
    objs = data["objects"]
    return {c["case"]: objs[c["object_id"]]["image"] for c in data["cases"]}


def evaluate(cfg):
    """Score results against ground truth; writes the tables and returns the reports."""
    d = _dirs(cfg)
    res = _read_json(d["results"] / "manifest.json", "results manifest (run reconstruct)")
    refs = _references(cfg)
    done = [e for e in res["entries"] if e.get("image")]
    if not done:
        raise StudyError("no reconstructed images to evaluate")
    for e in done:
        if e["case"] not in refs:
            raise StudyError(f"result case {e['case']!r} has no reference")
    reports = evaluate_run(done, refs)
    tdir = d["tables"]
    tdir.mkdir(parents=True, exist_ok=True)
    (tdir / "table.tsv").write_text(format_table(reports))
    (tdir / "per_image.tsv").write_text(format_table(reports, aggregate=False))
    (tdir / "phase_curves.tsv").write_text(phase_curves(reports))
    return reports


def residual_image(x, ref, factor):
    """``factor * | |x| - |ref| |`` for visual inspection."""
    return factor * np.abs(np.abs(x) - np.abs(ref))


def report(cfg):
    """Tables, per-phase curves and magnified residual images."""
    reports = evaluate(cfg)
    d = _dirs(cfg)
    res = rio.read_manifest(d["results"] / "manifest.json")
    refs = _references(cfg)
    out = []
    for e in res["entries"]:
        if not e.get("image"):
            continue
        x = rio.read_image(e["image"])
        ref = rio.read_image(refs[e["case"]])
        r = residual_image(x, ref, cfg.residual_factor)
        stem = rio.write_image(d["report"] / "residuals" / f"{e['case']}_{e['method']}", r,
                               meta={"factor": cfg.residual_factor})
        out.append({"case": e["case"], "method": e["method"], "residual": stem})
    rio.write_manifest(d["report"] / "manifest.json", out, config_digest=config_digest(cfg),
                       table=str(d["tables"] / "table.tsv"))
    return reports


def run_all(cfg, methods=None, grid=None, resume=False):
    simulate(cfg)
    train(cfg)
    reconstruct(cfg, methods=methods, grid=grid, resume=resume)
    return report(cfg)
