"""Batch command-line front end.

Subcommands:

* ``desmoke``    — restore a directory of frames (DCP or the physics layer)
* ``synth``      — generate a synthetic clean/smoky/density corpus
* ``analyze``    — darkness-binned error laws, fit reports, gate profile
* ``ablate``     — smoothing/window grid of toy trainings, one CSV row each
* ``gradcheck``  — finite-difference audit of the layer's gradients
* ``train-demo`` — train the toy predictor and dump model/trace/report
* ``metrics``    — full-reference metrics between two directories

Every tunable lives in a flat ``RunConfig``; a JSON file passed via
``--config`` overrides the built-in defaults and explicit flags override
the file. Frame-level work runs in a thread pool whose results are
collected in submission order, so outputs are bitwise identical no
matter how many workers run (``--workers``, else ``SURGIATM_WORKERS``,
else 1).

Exit codes: 0 success, 2 bad arguments or malformed inputs, 3 pairing
failures between directories, 4 unreadable/unwritable files, 5 failed
numerical checks or training/estimation breakdowns.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, atmlayer, moestat, toytrain
from .atmlayer import SurgiAtmConfig
from .darkprior import DcpConfig, dcp_restore, denorm_dark_channel
from .errors import (
    ArgumentError,
    CheckFailure,
    DomainError,
    EstimationError,
    FormatError,
    PairingError,
    ShapeError,
    SurgiAtmError,
    TrainingError,
)
from .imgcore import ImageBuffer, load_image, resize_bilinear, save_image
from .metrics import MetricReport, metric_report
from .smokesim import FramePair, generate_pairs
from .toytrain import ToyPredictor, TrainConfig

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_PAIRING = 3
EXIT_IO = 4
EXIT_CHECK = 5

_WORKERS_ENV = "SURGIATM_WORKERS"
_IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")


@dataclass(frozen=True)
class RunConfig:
    """Every CLI tunable, flat so a JSON config can mirror it key-for-key."""

    method: str = "surgiatm"
    eta: float = 0.1
    z: int = 15
    t0: float = 0.1
    airlight_fraction: float = 0.001
    width: int = 256
    height: int = 256
    resize: bool = True
    rho_const: float = 0.0
    bins: int = 20
    min_count: int = 100
    seed: int = 0
    workers: int = 0
    frames: int = 20
    epochs: int = 150
    learning_rate: float = 0.5
    loss: str = "l2"
    mode: str = "surgiatm"
    gain_lo: float = 0.3
    gain_hi: float = 0.9

    def __post_init__(self) -> None:
        if self.method not in ("dcp", "surgiatm"):
            raise ArgumentError(f"method must be dcp or surgiatm, got {self.method!r}")
        if not 0.0 <= self.rho_const <= 1.0:
            raise ArgumentError(f"rho_const must lie in [0,1], got {self.rho_const}")
        if self.width < 1 or self.height < 1:
            raise ArgumentError(f"frame size must be positive, got {self.width}x{self.height}")
        if self.workers < 0:
            raise ArgumentError(f"workers must be >= 0, got {self.workers}")
        if self.frames < 1:
            raise ArgumentError(f"frames must be >= 1, got {self.frames}")
        if not 0.0 <= self.gain_lo <= self.gain_hi <= 1.0:
            raise ArgumentError(
                f"need 0 <= gain_lo <= gain_hi <= 1, got {self.gain_lo}, {self.gain_hi}"
            )
        # Delegated validation: constructing the component configs rejects
        # bad eta/z/t0/fraction/loss/mode/epochs/learning_rate values.
        SurgiAtmConfig(eta=self.eta, z=self.z)
        DcpConfig(z=self.z, t0=self.t0, airlight_fraction=self.airlight_fraction)
        TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                    loss=self.loss, mode=self.mode, seed=self.seed)


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ArgumentError(f"config {path} must hold a flat JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(loaded) - known)
    if unknown:
        raise ArgumentError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return loaded


def _merged_config(args: argparse.Namespace) -> RunConfig:
    merged = asdict(RunConfig())
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ArgumentError(f"bad config value: {exc}") from exc


def _resolve_workers(cfg: RunConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    env = os.environ.get(_WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ArgumentError(f"{_WORKERS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ArgumentError(f"{_WORKERS_ENV} must be >= 1, got {n}")
        return n
    return 1


def _frame_map(fn, items, workers: int) -> list:
    """Apply fn to frames, collecting in submission order for determinism."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _list_frames(directory: str) -> dict[str, Path]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    frames: dict[str, Path] = {}
    for path in sorted(root.iterdir()):
        if path.suffix.lower() in _IMAGE_EXTS and path.is_file():
            if path.stem in frames:
                raise PairingError(
                    f"duplicate frame stem {path.stem!r} in {directory}: "
                    f"{frames[path.stem].name} and {path.name}"
                )
            frames[path.stem] = path
    if not frames:
        raise PairingError(f"no frames found in {directory}")
    return frames


def _pair_directories(base: dict[str, Path], other_dir: str, role: str) -> dict[str, Path]:
    other = _list_frames(other_dir)
    missing = sorted(set(base) - set(other))
    if missing:
        raise PairingError(
            f"{role} directory {other_dir} is missing frames: {', '.join(missing)}"
        )
    return {stem: other[stem] for stem in base}


def _load_rgb(path: Path) -> ImageBuffer:
    img = load_image(str(path))
    if img.channels == 1:
        return ImageBuffer._trusted(np.repeat(img.data, 3, axis=2))
    return img


def _working_frame(path: Path, cfg: RunConfig) -> ImageBuffer:
    img = _load_rgb(path)
    if cfg.resize:
        img = resize_bilinear(img, cfg.width, cfg.height)
    return img


def _aggregate_reports(reports: list[MetricReport]) -> dict[str, float]:
    return {
        key: float(np.mean([r.as_dict()[key] for r in reports]))
        for key in ("ciede2000", "psnr", "rmse", "ssim")
    }


def _metrics_payload(rows: list[tuple[str, MetricReport]]) -> dict:
    return {
        "frames": [{"name": stem, **rep.as_dict()} for stem, rep in rows],
        "aggregate": _aggregate_reports([rep for _, rep in rows]),
    }


def _write_json(path: str, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save_model(path: str, model: ToyPredictor, atm: SurgiAtmConfig,
                train_cfg: TrainConfig) -> None:
    _write_json(path, {
        "weights": model.weights.tolist(),
        "mode": model.mode,
        "eta": atm.eta,
        "z": atm.z,
        "loss": train_cfg.loss,
    })


def _load_model(path: str) -> tuple[ToyPredictor, float, int]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file {path} is not valid JSON: {exc}") from exc
    try:
        model = ToyPredictor(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            mode=payload.get("mode", "surgiatm"),
        )
        return model, float(payload["eta"]), int(payload["z"])
    except KeyError as exc:
        raise FormatError(f"model file {path} is missing field {exc}") from exc


# ---------------------------------------------------------------------------
# desmoke


def cmd_desmoke(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    workers = _resolve_workers(cfg)
    inputs = _list_frames(args.input)
    truths = _pair_directories(inputs, args.truth, "truth") if args.truth else None
    rho_maps = _pair_directories(inputs, args.rho_dir, "rho") if args.rho_dir else None

    model = None
    atm = SurgiAtmConfig(eta=cfg.eta, z=cfg.z, apply_sigmoid=True)
    if args.model:
        model, model_eta, model_z = _load_model(args.model)
        # The stored training-time eta/z apply unless the user overrode them.
        eta = cfg.eta if args.eta is not None else model_eta
        z = cfg.z if args.z is not None else model_z
        atm = SurgiAtmConfig(eta=eta, z=z, apply_sigmoid=True)
    plain_atm = SurgiAtmConfig(eta=atm.eta, z=atm.z, apply_sigmoid=False)
    dcp_cfg = DcpConfig(z=cfg.z, t0=cfg.t0, airlight_fraction=cfg.airlight_fraction)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(stem: str) -> tuple[str, MetricReport | None]:
        img = _working_frame(inputs[stem], cfg)
        if cfg.method == "dcp":
            restored = dcp_restore(img, dcp_cfg)
        elif model is not None:
            restored = toytrain.predict(model, img, atm)
        elif rho_maps is not None:
            rho_img = load_image(str(rho_maps[stem]))
            if cfg.resize:
                rho_img = resize_bilinear(rho_img, cfg.width, cfg.height)
            rho = rho_img.data
            if rho.shape[2] == 1:
                rho = np.repeat(rho, 3, axis=2)
            if rho.shape != img.data.shape:
                raise ShapeError(
                    f"rho map for {stem} has shape {rho.shape}, frame is {img.data.shape}"
                )
            restored = atmlayer.forward(img, rho, plain_atm).output
        else:
            rho = np.full(img.data.shape, cfg.rho_const, dtype=np.float64)
            restored = atmlayer.forward(img, rho, plain_atm).output
        save_image(restored, str(out_dir / f"{stem}.png"))
        report = None
        if truths is not None:
            truth = _working_frame(truths[stem], cfg)
            report = metric_report(restored, truth)
        return stem, report

    results = _frame_map(process, sorted(inputs), workers)
    print(f"desmoke: wrote {len(results)} frames to {out_dir} (method={cfg.method})")
    if truths is not None:
        rows = [(stem, rep) for stem, rep in results if rep is not None]
        payload = _metrics_payload(rows)
        if args.metrics_out:
            _write_json(args.metrics_out, payload)
            print(f"desmoke: metrics written to {args.metrics_out}")
        agg = payload["aggregate"]
        print(
            "desmoke: aggregate rmse=%.6f psnr=%.3f ssim=%.4f ciede2000=%.4f"
            % (agg["rmse"], agg["psnr"], agg["ssim"], agg["ciede2000"])
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    out = Path(args.output)
    for sub in ("clean", "smoky", "density"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    pairs = generate_pairs(
        cfg.frames, cfg.width, cfg.height, cfg.seed,
        gain_range=(cfg.gain_lo, cfg.gain_hi),
    )
    for i, pair in enumerate(pairs):
        stem = f"{i:04d}"
        save_image(pair.clean, str(out / "clean" / f"{stem}.png"))
        save_image(pair.smoky, str(out / "smoky" / f"{stem}.png"))
        density = ImageBuffer._trusted(pair.density.data[:, :, None])
        save_image(density, str(out / "density" / f"{stem}.png"))
    _write_json(str(out / "manifest.json"), {
        "frames": cfg.frames,
        "width": cfg.width,
        "height": cfg.height,
        "seed": cfg.seed,
        "gain_lo": cfg.gain_lo,
        "gain_hi": cfg.gain_hi,
    })
    print(f"synth: wrote {len(pairs)} frame triples to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _collect_errors(
    stems: list[str],
    smoky: dict[str, Path],
    truth: dict[str, Path],
    pred: dict[str, Path],
    cfg: RunConfig,
    workers: int,
) -> tuple[np.ndarray, np.ndarray]:
    def one(stem: str) -> tuple[np.ndarray, np.ndarray]:
        s = _working_frame(smoky[stem], cfg)
        t = _working_frame(truth[stem], cfg)
        p = _working_frame(pred[stem], cfg)
        if t.data.shape != p.data.shape or t.data.shape != s.data.shape:
            raise ShapeError(f"frame {stem}: smoky/truth/pred shapes differ")
        dd = denorm_dark_channel(s, cfg.z).data
        err = p.data - t.data
        return err.ravel(), np.repeat(dd.ravel(), 3)

    parts = _frame_map(one, stems, workers)
    errs = np.concatenate([e for e, _ in parts])
    conds = np.concatenate([c for _, c in parts])
    return errs, conds


def _stats_rows(stats: moestat.BinnedErrorStats) -> list[dict]:
    rows = []
    for i, mid in enumerate(stats.midpoints):
        lap = stats.laplace[i]
        rows.append({
            "bin_lo": stats.bin_edges[i],
            "bin_hi": stats.bin_edges[i + 1],
            "midpoint": mid,
            "count": int(stats.counts[i]),
            "mu": None if lap is None else lap.mu,
            "b": None if lap is None else lap.b,
        })
    return rows


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    workers = _resolve_workers(cfg)
    smoky = _list_frames(args.smoky)
    stems = sorted(smoky)
    truth = _pair_directories(smoky, args.truth, "truth")
    pred_a = _pair_directories(smoky, args.pred_a, "pred-a")
    pred_b = _pair_directories(smoky, args.pred_b, "pred-b")

    err_a, cond = _collect_errors(stems, smoky, truth, pred_a, cfg, workers)
    err_b, _ = _collect_errors(stems, smoky, truth, pred_b, cfg, workers)

    def fit_report(err: np.ndarray) -> dict[str, float] | None:
        try:
            return moestat.distribution_fit_report(err)
        except (ArgumentError, EstimationError):
            return None

    stats_a = moestat.binned_error_stats(err_a, cond, cfg.bins, cfg.min_count)
    stats_b = moestat.binned_error_stats(err_b, cond, cfg.bins, cfg.min_count)
    profile = moestat.gate_profile(stats_a, stats_b)

    gate_corr = None
    if profile.midpoints.size >= 2:
        try:
            # How well the cheap 1 - darkness proxy tracks the ideal gate.
            gate_corr = moestat.pearson(1.0 - profile.midpoints, profile.gates)
        except (ArgumentError, EstimationError):
            gate_corr = None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "frames": len(stems),
        "bins": cfg.bins,
        "min_count": cfg.min_count,
        "fit_pred_a": fit_report(err_a),
        "fit_pred_b": fit_report(err_b),
        "gate_bins": int(profile.midpoints.size),
        "gate_pearson_vs_one_minus_darkness": gate_corr,
    }
    _write_json(str(out / "analysis.json"), payload)

    lap_a = {r["midpoint"]: r for r in _stats_rows(stats_a)}
    lap_b = {r["midpoint"]: r for r in _stats_rows(stats_b)}
    gates = dict(zip(profile.midpoints, profile.gates))
    with open(out / "gate.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["midpoint", "count", "mu_a", "b_a", "mu_b", "b_b", "w_star"])
        for mid in stats_a.midpoints:
            ra, rb = lap_a[mid], lap_b[mid]
            writer.writerow([
                repr(float(mid)),
                min(ra["count"], rb["count"]),
                "" if ra["mu"] is None else repr(ra["mu"]),
                "" if ra["b"] is None else repr(ra["b"]),
                "" if rb["mu"] is None else repr(rb["mu"]),
                "" if rb["b"] is None else repr(rb["b"]),
                "" if mid not in gates else repr(float(gates[mid])),
            ])
    print(f"analyze: {len(stems)} frames, {profile.midpoints.size} gated bins -> {out}")
    if payload["fit_pred_a"] is not None:
        fa = payload["fit_pred_a"]
        print("analyze: pred-a js_laplace=%.6f js_gauss=%.6f" % (fa["js_laplace"], fa["js_gauss"]))
    if gate_corr is not None:
        print("analyze: pearson(1 - darkness, w_star) = %.4f" % gate_corr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate / train-demo (shared training path)


def _train_eval(
    pairs: list[FramePair], tcfg: TrainConfig, atm: SurgiAtmConfig
) -> tuple[ToyPredictor, list[float], MetricReport]:
    tuples = [(p.smoky, p.clean) for p in pairs]
    model, trace = toytrain.train(tuples, tcfg, atm)
    report = toytrain.evaluate(model, tuples, atm)
    return model, trace, report


def _demo_pairs(cfg: RunConfig, data_dir: str | None) -> list[FramePair]:
    if data_dir is None:
        return generate_pairs(
            cfg.frames, cfg.width, cfg.height, cfg.seed,
            gain_range=(cfg.gain_lo, cfg.gain_hi),
        )
    root = Path(data_dir)
    smoky = _list_frames(str(root / "smoky"))
    clean = _pair_directories(smoky, str(root / "clean"), "clean")
    pairs = []
    for stem in sorted(smoky):
        s = _load_rgb(smoky[stem])
        c = _load_rgb(clean[stem])
        if s.data.shape != c.data.shape:
            raise ShapeError(f"frame {stem}: smoky/clean shapes differ")
        pairs.append(FramePair(clean=c, smoky=s, density=None))
    return pairs


def cmd_train_demo(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    pairs = _demo_pairs(cfg, args.data)
    atm = SurgiAtmConfig(eta=cfg.eta, z=cfg.z, apply_sigmoid=True)
    tcfg = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                       loss=cfg.loss, mode=cfg.mode, seed=cfg.seed)
    model, trace, report = _train_eval(pairs, tcfg, atm)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_model(str(out / "model.json"), model, atm, tcfg)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace):
            writer.writerow([i, repr(loss)])
    trip_dir = out / "triptychs"
    trip_dir.mkdir(exist_ok=True)
    for i, pair in enumerate(pairs):
        restored = toytrain.predict(model, pair.smoky, atm)
        strip = np.concatenate(
            [pair.smoky.data, restored.data, pair.clean.data], axis=1
        )
        save_image(ImageBuffer._trusted(strip), str(trip_dir / f"frame_{i:03d}.png"))
    _write_json(str(out / "report.json"), {
        "mode": cfg.mode, "loss": cfg.loss, "eta": cfg.eta, "z": cfg.z,
        "epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
        "seed": cfg.seed, "frames": len(pairs),
        "final_loss": trace[-1], **report.as_dict(),
    })
    print(
        "train-demo: mode=%s loss=%s eta=%g z=%d  final_loss=%.6g rmse=%.6f"
        % (cfg.mode, cfg.loss, cfg.eta, cfg.z, trace[-1], report.rmse)
    )
    return EXIT_OK


def _parse_grid(text: str, cast, what: str) -> list:
    try:
        values = [cast(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ArgumentError(f"bad {what} list {text!r}: {exc}") from exc
    if not values:
        raise ArgumentError(f"{what} list is empty")
    return values


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    etas = _parse_grid(args.etas, float, "eta")
    zs = _parse_grid(args.zs, int, "z")
    pairs = generate_pairs(
        cfg.frames, cfg.width, cfg.height, cfg.seed,
        gain_range=(cfg.gain_lo, cfg.gain_hi),
    )
    rows = []
    for eta in etas:
        for z in zs:
            atm = SurgiAtmConfig(eta=eta, z=z, apply_sigmoid=True)
            tcfg = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                               loss=cfg.loss, mode="surgiatm", seed=cfg.seed)
            _, trace, report = _train_eval(pairs, tcfg, atm)
            rows.append((eta, z, trace[-1], report))
            print(
                "ablate: eta=%g z=%d final_loss=%.6g rmse=%.6f"
                % (eta, z, trace[-1], report.rmse)
            )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eta", "z", "final_loss", "rmse", "psnr", "ssim", "ciede2000"])
        for eta, z, final_loss, report in rows:
            writer.writerow([
                repr(float(eta)), z, repr(final_loss), repr(report.rmse),
                repr(report.psnr), repr(report.ssim), repr(report.ciede2000),
            ])
    print(f"ablate: wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def _fd_gradients(
    img: ImageBuffer, raw: np.ndarray, target: ImageBuffer,
    atm: SurgiAtmConfig, loss: str, eps: float,
) -> np.ndarray:
    # The layer is elementwise in rho, so one +/- eps shift of the whole
    # map finite-differences every pixel at once.
    if loss == "l2":
        lo = atmlayer.l2_loss(atmlayer.forward(img, raw - eps, atm), target)
        hi = atmlayer.l2_loss(atmlayer.forward(img, raw + eps, atm), target)
    else:
        lo = atmlayer.l1_loss(atmlayer.forward(img, raw - eps, atm), target)
        hi = atmlayer.l1_loss(atmlayer.forward(img, raw + eps, atm), target)
    return (hi - lo) / (2.0 * eps)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _merged_config(args)
    rng = np.random.default_rng(cfg.seed)
    size = 16
    failures = []
    n_checks = 0
    for eta in (0.0, 0.1, 1.0):
        for z in (1, 3, 15):
            atm = SurgiAtmConfig(eta=eta, z=z, apply_sigmoid=True)
            img = ImageBuffer._trusted(rng.uniform(0.0, 1.0, (size, size, 3)))
            target = ImageBuffer._trusted(rng.uniform(0.0, 1.0, (size, size, 3)))
            raw = rng.normal(0.0, 1.5, (size, size, 3))
            state = atmlayer.forward(img, raw, atm)
            for loss, tol, eps in (("l2", 1e-5, 1e-6), ("l1", 1e-4, 1e-7)):
                if loss == "l2":
                    grad = atmlayer.backward_l2(state, target)
                else:
                    grad = atmlayer.backward_l1(state, target)
                if args.corrupt:
                    grad = grad + 1e-3
                fd = _fd_gradients(img, raw, target, atm, loss, eps)
                rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
                if loss == "l1":
                    # The absolute-error loss is non-differentiable where the
                    # residual vanishes; audit only pixels away from the kink.
                    rel = rel[np.abs(target.data - state.output_raw) > 1e-3]
                worst = float(rel.max()) if rel.size else 0.0
                ok = worst <= tol
                n_checks += 1
                if not ok:
                    failures.append((eta, z, loss, worst))
                print(
                    "gradcheck: eta=%-4g z=%-3d loss=%s  max rel err %.3e  [%s]"
                    % (eta, z, loss, worst, "ok" if ok else "FAIL")
                )

    # Demonstrate the vanishing-gradient regime: an all-black frame has a
    # zero dark channel, so with eta=0 every gradient is identically zero.
    black = ImageBuffer._trusted(np.zeros((size, size, 3)))
    target = ImageBuffer._trusted(rng.uniform(0.0, 1.0, (size, size, 3)))
    raw = rng.normal(0.0, 1.0, (size, size, 3))
    g0 = atmlayer.backward_l2(atmlayer.forward(img=black, rho_raw=raw,
                                               cfg=SurgiAtmConfig(eta=0.0, z=3)), target)
    g1 = atmlayer.backward_l2(atmlayer.forward(img=black, rho_raw=raw,
                                               cfg=SurgiAtmConfig(eta=0.1, z=3)), target)
    print(
        "gradcheck: black frame, eta=0   -> max |grad| = %.3e (vanishing)"
        % float(np.abs(g0).max())
    )
    print(
        "gradcheck: black frame, eta=0.1 -> max |grad| = %.3e (alive)"
        % float(np.abs(g1).max())
    )
    if float(np.abs(g0).max()) != 0.0:
        failures.append((0.0, 3, "black-frame-zero", float(np.abs(g0).max())))
    if float(np.abs(g1).max()) == 0.0:
        failures.append((0.1, 3, "black-frame-alive", 0.0))

    if failures:
        raise CheckFailure(
            f"gradcheck failed {len(failures)} of {n_checks + 2} checks: "
            + "; ".join(f"eta={e} z={z} {l} err={w:.3e}" for e, z, l, w in failures)
        )
    print(f"gradcheck: all {n_checks + 2} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


def cmd_metrics(args: argparse.Namespace) -> int:
    preds = _list_frames(args.pred)
    truths = _pair_directories(preds, args.truth, "truth")
    cfg = _merged_config(args)
    workers = _resolve_workers(cfg)

    def one(stem: str) -> tuple[str, MetricReport]:
        p = _load_rgb(preds[stem])
        t = _load_rgb(truths[stem])
        return stem, metric_report(p, t)

    rows = _frame_map(one, sorted(preds), workers)
    payload = _metrics_payload(rows)
    if args.out:
        _write_json(args.out, payload)
        print(f"metrics: written to {args.out}")
    agg = payload["aggregate"]
    print(
        "metrics: %d frames  rmse=%.6f psnr=%.3f ssim=%.4f ciede2000=%.4f"
        % (len(rows), agg["rmse"], agg["psnr"], agg["ssim"], agg["ciede2000"])
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing


def _add_config_flags(p: argparse.ArgumentParser, keys: tuple[str, ...]) -> None:
    """Flags mirroring RunConfig fields; None means 'not set here'."""
    if "method" in keys:
        p.add_argument("--method", choices=("dcp", "surgiatm"), default=None)
    if "eta" in keys:
        p.add_argument("--eta", type=float, default=None)
    if "z" in keys:
        p.add_argument("--z", type=int, default=None)
    if "t0" in keys:
        p.add_argument("--t0", type=float, default=None)
    if "airlight_fraction" in keys:
        p.add_argument("--airlight-fraction", dest="airlight_fraction",
                       type=float, default=None)
    if "width" in keys:
        p.add_argument("--width", type=int, default=None)
    if "height" in keys:
        p.add_argument("--height", type=int, default=None)
    if "resize" in keys:
        p.add_argument("--no-resize", dest="resize", action="store_const",
                       const=False, default=None,
                       help="process frames at their stored resolution")
    if "rho_const" in keys:
        p.add_argument("--rho-const", dest="rho_const", type=float, default=None)
    if "bins" in keys:
        p.add_argument("--bins", type=int, default=None)
    if "min_count" in keys:
        p.add_argument("--min-count", dest="min_count", type=int, default=None)
    if "seed" in keys:
        p.add_argument("--seed", type=int, default=None)
    if "workers" in keys:
        p.add_argument("--workers", type=int, default=None)
    if "frames" in keys:
        p.add_argument("--frames", type=int, default=None)
    if "epochs" in keys:
        p.add_argument("--epochs", type=int, default=None)
    if "learning_rate" in keys:
        p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    if "loss" in keys:
        p.add_argument("--loss", choices=("l1", "l2"), default=None)
    if "mode" in keys:
        p.add_argument("--mode", choices=("direct", "surgiatm"), default=None)
    if "gain_lo" in keys:
        p.add_argument("--gain-lo", dest="gain_lo", type=float, default=None)
    if "gain_hi" in keys:
        p.add_argument("--gain-hi", dest="gain_hi", type=float, default=None)
    p.add_argument("--config", default=None,
                   help="flat JSON file of RunConfig overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surgiatm",
        description="Physics-guided surgical smoke removal toolkit.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("desmoke", help="restore a directory of smoky frames")
    p.add_argument("--input", required=True, help="directory of smoky frames")
    p.add_argument("--output", required=True, help="directory for restored frames")
    p.add_argument("--truth", default=None, help="clean frames for metrics")
    p.add_argument("--rho-dir", dest="rho_dir", default=None,
                   help="directory of per-frame retention maps in [0,1]")
    p.add_argument("--model", default=None, help="toy predictor JSON file")
    p.add_argument("--metrics-out", dest="metrics_out", default=None)
    _add_config_flags(p, ("method", "eta", "z", "t0", "airlight_fraction",
                          "width", "height", "resize", "rho_const", "workers"))
    p.set_defaults(func=cmd_desmoke)

    p = sub.add_parser("synth", help="generate a synthetic smoke corpus")
    p.add_argument("--output", required=True)
    _add_config_flags(p, ("frames", "width", "height", "seed",
                          "gain_lo", "gain_hi"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="darkness-binned error laws and gate profile")
    p.add_argument("--smoky", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred-a", dest="pred_a", required=True)
    p.add_argument("--pred-b", dest="pred_b", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p, ("z", "bins", "min_count", "width", "height",
                          "resize", "workers"))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="grid of toy trainings over eta and z")
    p.add_argument("--etas", required=True, help="comma-separated eta values")
    p.add_argument("--zs", required=True, help="comma-separated window sizes")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_config_flags(p, ("frames", "width", "height", "seed", "epochs",
                          "learning_rate", "loss", "gain_lo", "gain_hi"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--corrupt", action="store_true",
                   help="deliberately corrupt gradients (checker self-test)")
    _add_config_flags(p, ("seed",))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-demo", help="train the toy predictor")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=None,
                   help="directory holding smoky/ and clean/ (default: synthetic)")
    _add_config_flags(p, ("eta", "z", "frames", "width", "height", "seed",
                          "epochs", "learning_rate", "loss", "mode",
                          "gain_lo", "gain_hi"))
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("metrics", help="full-reference metrics between directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None, help="JSON output path")
    _add_config_flags(p, ("workers",))
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except PairingError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        return EXIT_PAIRING
    except FormatError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CheckFailure, EstimationError, TrainingError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except SurgiAtmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
