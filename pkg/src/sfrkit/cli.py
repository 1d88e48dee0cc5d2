"""Command-line entry point wiring simulation, training, baselines,
evaluation, and intensity export into reproducible experiments.

Only stdlib imports at module level: --threads must pin the BLAS thread
count before numpy is first imported, so the compute modules are loaded
lazily inside the mode runners.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys

log = logging.getLogger(__name__)

MODES = ("simulate", "train-pinn", "fit-kernel", "fit-tesm", "evaluate",
         "intensity")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config schema: nested {key: (required, default)}; dict-valued defaults
# recurse. Unknown keys anywhere are rejected.
# ---------------------------------------------------------------------------

_SUBSET_SCHEMA = {"fraction": (True, None), "seed": (False, 0)}

_SCHEMAS = {
    "simulate": {
        "preset": (False, None),
        "seed": (False, 0),
        "n_samples": (False, 800),
        "sample_rate": (False, 16000.0),
        "c": (False, 346.8),
        "grid": (False, {"n_per_axis": (False, 4), "spacing": (False, 0.1),
                         "center": (False, [0.0, 0.0, 0.0])}),
        "source_position": (False, None),
        "signal": (False, {"kind": (False, "bandlimited-noise"),
                           "f_lo": (False, 200.0), "f_hi": (False, 2000.0),
                           "path": (False, None)}),
        "room": (False, None),
    },
    "train-pinn": {
        "dataset": (True, None),
        "subset": (True, _SUBSET_SCHEMA),
        "c": (False, 346.8),
        "train": (False, {"lambda_pde": (False, 1e-5),
                          "iterations": (False, 3000),
                          "lr": (False, 5e-5),
                          "adam_beta1": (False, 0.9),
                          "adam_beta2": (False, 0.999),
                          "adam_eps": (False, 1e-8),
                          "data_batch": (False, 4096),
                          "collocation_count": (False, 8192),
                          "seed": (False, 0)}),
    },
    "fit-kernel": {
        "dataset": (True, None),
        "subset": (True, _SUBSET_SCHEMA),
        "lambda": (False, 1e-3),
        "fft_size": (False, 2048),
        "c": (False, 346.8),
    },
    "fit-tesm": {
        "dataset": (True, None),
        "subset": (True, _SUBSET_SCHEMA),
        "c": (False, 346.8),
        "esm": (False, {"count": (False, 400), "radius": (False, 0.72),
                        "taps": (False, 81)}),
        "fista": (False, {"mu": (False, None), "max_iters": (False, 500),
                          "tol": (False, 1e-6), "power_iters": (False, 50)}),
    },
    "evaluate": {
        "estimate": (True, None),
        "reference": (True, None),
        "subset": (False, None),
    },
    "intensity": {
        "checkpoint": (True, None),
        "dataset": (True, None),
        "rho": (False, 1.2),
        "c": (False, 346.8),
    },
}

_ROOM_SCHEMA = {"dimensions": (True, None), "t60": (True, None),
                "max_order": (False, 20)}


def _apply_schema(config: dict, schema: dict, path: str = "") -> dict:
    out = {}
    for key, value in config.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}{key}")
    for key, (required, default) in schema.items():
        here = f"{path}{key}"
        if key in config and config[key] is not None:
            value = config[key]
            if isinstance(default, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"{here} must be an object")
                out[key] = _apply_schema(value, default, here + ".")
            else:
                out[key] = value
        elif required and key not in config:
            raise ConfigError(f"missing required config key: {here}")
        elif isinstance(default, dict):
            out[key] = _apply_schema({}, default, here + ".")
        else:
            out[key] = config.get(key, default)
    return out


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_overrides(config: dict, overrides: list) -> dict:
    config = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = config
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar at {k}")
        node[keys[-1]] = _parse_set_value(raw)
    return config


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir: str, mode: str, config: dict, inputs: list):
        self.path = os.path.join(out_dir, "manifest.json")
        self.payload = {
            "mode": mode,
            "config": config,
            "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
            "outputs": {},
            "status": "running",
        }
        self._write()

    def _write(self):
        with open(self.path, "w") as f:
            json.dump(self.payload, f, indent=2, sort_keys=True)
            f.write("\n")

    def complete(self, out_dir: str, outputs: list):
        self.payload["outputs"] = {
            name: _sha256(os.path.join(out_dir, name)) for name in outputs}
        self.payload["status"] = "completed"
        self._write()


def _read_wav(path, expected_rate: float):
    from scipy.io import wavfile
    import numpy as np
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ConfigError(f"{path}: source WAV must be mono")
    if abs(rate - expected_rate) > 1e-9:
        raise ConfigError(
            f"{path}: WAV rate {rate} Hz does not match configured rate"
            f" {expected_rate} Hz")
    if data.dtype.kind == "i":
        scale = float(np.iinfo(data.dtype).max)
        return data.astype(np.float64) / scale
    if data.dtype.kind == "f":
        return data.astype(np.float64)
    raise ConfigError(f"{path}: unsupported WAV sample format {data.dtype}")


def _load_subset(grid, subset_cfg):
    from sfrkit.field import select_subset
    fraction = float(subset_cfg["fraction"])
    return select_subset(grid, fraction, int(subset_cfg["seed"]))


# ---------------------------------------------------------------------------
# Mode runners. Each validates, writes the manifest, computes, then marks the
# manifest complete.
# ---------------------------------------------------------------------------

def _run_simulate(config: dict, out_dir: str) -> int:
    import numpy as np
    from sfrkit.field import SensorGrid, save_field
    from sfrkit.room import (ShoeboxRoom, bandlimited_noise, desk_preset,
                             sabine_alpha, simulate_dataset)
    preset = config["preset"]
    if preset is not None and preset not in ("meshrir-like",
                                             "meshrir-like-reverb"):
        raise ConfigError(f"unknown preset {preset!r}")
    inputs = []
    signal_cfg = config["signal"]
    if signal_cfg["kind"] == "wav":
        if not signal_cfg["path"]:
            raise ConfigError("signal.kind=wav needs signal.path")
        if not os.path.exists(signal_cfg["path"]):
            raise ConfigError(f"signal file not found: {signal_cfg['path']}")
        inputs.append(signal_cfg["path"])
    elif signal_cfg["kind"] != "bandlimited-noise":
        raise ConfigError(f"unknown signal kind {signal_cfg['kind']!r}")
    manifest = Manifest(out_dir, "simulate", config, inputs)

    n = int(config["n_samples"])
    fs = float(config["sample_rate"])
    c = float(config["c"])
    if preset is not None:
        field, src, room = desk_preset(
            reverberant=(preset == "meshrir-like-reverb"),
            n_samples=n, fs=fs, c=c, signal_seed=int(config["seed"]))
    else:
        gcfg = config["grid"]
        grid = SensorGrid.cubic(int(gcfg["n_per_axis"]), float(gcfg["spacing"]),
                                center=gcfg["center"])
        src = config["source_position"]
        if src is None:
            raise ConfigError("source_position required without a preset")
        if signal_cfg["kind"] == "wav":
            signal = _read_wav(signal_cfg["path"], fs)
            if signal.size < n:
                raise ConfigError(
                    f"source WAV holds {signal.size} samples; need {n}")
        else:
            signal = bandlimited_noise(n + 512, fs, float(signal_cfg["f_lo"]),
                                       float(signal_cfg["f_hi"]),
                                       seed=int(config["seed"]))
        room = None
        if config["room"] is not None:
            rcfg = _apply_schema(config["room"], _ROOM_SCHEMA, "room.")
            dims = np.asarray(rcfg["dimensions"], dtype=float)
            room = ShoeboxRoom(dims, sabine_alpha(dims, float(rcfg["t60"])),
                               c=c, max_order=int(rcfg["max_order"]))
        field = simulate_dataset(room, src, grid, signal, n, fs, c=c)
    save_field(field, os.path.join(out_dir, "field.sfrd"), c_phys=c)
    manifest.complete(out_dir, ["field.sfrd", "field.meta.json"])
    log.info("simulated %dx%d field -> %s", field.num_samples,
             field.num_sensors, out_dir)
    return 0


def _recon_outputs(recon, out_dir, manifest, extra_outputs, scaling, c):
    from sfrkit.field import save_field
    save_field(recon, os.path.join(out_dir, "recon.sfrd"), c_phys=c,
               scaling=scaling)
    manifest.complete(out_dir,
                      ["recon.sfrd", "recon.meta.json"] + extra_outputs)


def _run_train_pinn(config: dict, out_dir: str) -> int:
    from sfrkit.field import load_field, normalize_coords
    from sfrkit.siren import evaluate_on_grid, save_checkpoint
    from sfrkit.train import TrainConfig, train, write_loss_history
    if not os.path.exists(config["dataset"]):
        raise ConfigError(f"dataset not found: {config['dataset']}")
    tcfg = TrainConfig(**{k: (int(v) if k in ("iterations", "data_batch",
                                              "collocation_count", "seed")
                              else float(v))
                          for k, v in config["train"].items()})
    manifest = Manifest(out_dir, "train-pinn", config, [config["dataset"]])
    field = load_field(config["dataset"])
    subset = _load_subset(field.grid, config["subset"])
    scaling = normalize_coords(field.grid, field.duration,
                               c_phys=float(config["c"]), t0=field.t0)
    net, history = train(field, subset, tcfg, scaling=scaling,
                         checkpoint_dir=out_dir)
    write_loss_history(history, os.path.join(out_dir, "loss_history.csv"))
    with open(os.path.join(out_dir, "subset.json"), "w") as f:
        json.dump({"indices": list(subset.indices), "seed": subset.seed},
                  f, indent=2, sort_keys=True)
    save_checkpoint(net, os.path.join(out_dir, "checkpoint_final.sfrd"))
    recon = evaluate_on_grid(net, scaling, field.grid, field.times)
    _recon_outputs(recon, out_dir, manifest,
                   ["checkpoint_final.sfrd", "checkpoint_final.meta.json",
                    "loss_history.csv", "subset.json"], scaling,
                   float(config["c"]))
    return 0


def _run_fit_kernel(config: dict, out_dir: str) -> int:
    from sfrkit.field import load_field, restrict
    from sfrkit.kernel import kernel_fit, kernel_reconstruct
    if not os.path.exists(config["dataset"]):
        raise ConfigError(f"dataset not found: {config['dataset']}")
    manifest = Manifest(out_dir, "fit-kernel", config, [config["dataset"]])
    field = load_field(config["dataset"])
    subset = _load_subset(field.grid, config["subset"])
    observed = restrict(field, subset)
    model = kernel_fit(observed, float(config["lambda"]),
                       int(config["fft_size"]), float(config["c"]))
    recon = kernel_reconstruct(model, field.grid.positions)
    _recon_outputs(recon, out_dir, manifest, [], None, float(config["c"]))
    return 0


def _run_fit_tesm(config: dict, out_dir: str) -> int:
    import numpy as np
    from sfrkit.field import load_field, restrict, write_tensor
    from sfrkit.tesm import (EsmDictionary, FistaConfig, default_mu,
                             fibonacci_sphere, fista, tesm_reconstruct)
    if not os.path.exists(config["dataset"]):
        raise ConfigError(f"dataset not found: {config['dataset']}")
    manifest = Manifest(out_dir, "fit-tesm", config, [config["dataset"]])
    field = load_field(config["dataset"])
    subset = _load_subset(field.grid, config["subset"])
    observed = restrict(field, subset)
    ecfg = config["esm"]
    lo, hi = field.grid.bounding_box()
    sources = fibonacci_sphere(int(ecfg["count"]), float(ecfg["radius"]),
                               center=(lo + hi) / 2.0)
    dic = EsmDictionary(sources, observed.grid.positions,
                        sample_rate=field.sample_rate,
                        n_samples=field.num_samples, c=float(config["c"]),
                        taps=int(ecfg["taps"]))
    fcfg_raw = config["fista"]
    mu = fcfg_raw["mu"]
    if mu is None:
        mu = default_mu(dic, observed)
    fcfg = FistaConfig(mu=float(mu), max_iters=int(fcfg_raw["max_iters"]),
                       power_iters=int(fcfg_raw["power_iters"]),
                       tol=float(fcfg_raw["tol"]))
    coeffs = fista(dic, observed, fcfg)
    recon = tesm_reconstruct(dic, coeffs, field.grid.positions)
    write_tensor(os.path.join(out_dir, "coeffs.sfrd"), coeffs.w)
    _recon_outputs(recon, out_dir, manifest, ["coeffs.sfrd"], None,
                   float(config["c"]))
    return 0


def _run_evaluate(config: dict, out_dir: str) -> int:
    from sfrkit.field import load_field
    from sfrkit.metrics import compute_report, report_to_json, write_report_csv
    for key in ("estimate", "reference"):
        if not os.path.exists(config[key]):
            raise ConfigError(f"{key} not found: {config[key]}")
    manifest = Manifest(out_dir, "evaluate", config,
                        [config["estimate"], config["reference"]])
    est = load_field(config["estimate"])
    ref = load_field(config["reference"])
    subset = None
    if config["subset"] is not None:
        sub_cfg = _apply_schema(config["subset"], _SUBSET_SCHEMA, "subset.")
        subset = _load_subset(ref.grid, sub_cfg)
    report = compute_report(est, ref, subset)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(report_to_json(report))
    write_report_csv(report, os.path.join(out_dir, "report.csv"))
    manifest.complete(out_dir, ["report.json", "report.csv"])
    log.info("NMSE total %.2f dB, sig %.2f dB, val %s",
             report.nmse_total_db, report.nmse_sig_db,
             "n/a" if report.nmse_val_db is None
             else f"{report.nmse_val_db:.2f} dB")
    return 0


def _run_intensity(config: dict, out_dir: str) -> int:
    import numpy as np
    from sfrkit.field import (load_field, normalize_coords, sidecar_path,
                              write_tensor)
    from sfrkit.intensity import (instantaneous_intensity, particle_velocity,
                                  write_intensity_csv)
    from sfrkit.siren import evaluate_on_grid, load_checkpoint
    for key in ("checkpoint", "dataset"):
        if not os.path.exists(config[key]):
            raise ConfigError(f"{key} not found: {config[key]}")
    manifest = Manifest(out_dir, "intensity", config,
                        [config["checkpoint"], config["dataset"]])
    field = load_field(config["dataset"])
    net = load_checkpoint(config["checkpoint"])
    scaling = normalize_coords(field.grid, field.duration,
                               c_phys=float(config["c"]), t0=field.t0)
    velocity = particle_velocity(net, scaling, field.grid, field.times,
                                 rho=float(config["rho"]))
    pressure = evaluate_on_grid(net, scaling, field.grid, field.times)
    intensity = instantaneous_intensity(pressure, velocity)
    write_tensor(os.path.join(out_dir, "velocity.sfrd"), velocity.values)
    write_tensor(os.path.join(out_dir, "intensity.sfrd"), intensity.values)
    write_intensity_csv(intensity, os.path.join(out_dir, "intensity_mean.csv"))
    manifest.complete(out_dir, ["velocity.sfrd", "intensity.sfrd",
                                "intensity_mean.csv"])
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "train-pinn": _run_train_pinn,
    "fit-kernel": _run_fit_kernel,
    "fit-tesm": _run_fit_tesm,
    "evaluate": _run_evaluate,
    "intensity": _run_intensity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfrkit",
        description="Volumetric sound field reconstruction experiments")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        dest="overrides",
                        help="override a (dotted) config key")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int,
                        help="override the top-level seed config key")
    parser.add_argument("--threads", type=int, default=0,
                        help="BLAS thread count; 1 guarantees bit-exact reruns")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(mode: str, config: dict, out_dir: str) -> int:
    """Validate, then execute one mode with all outputs under out_dir."""
    schema = _SCHEMAS[mode]
    resolved = _apply_schema(config, schema)
    os.makedirs(out_dir, exist_ok=True)
    return _RUNNERS[mode](resolved, out_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    config = {}
    if args.config:
        if not os.path.exists(args.config):
            print(f"error: config not found: {args.config}", file=sys.stderr)
            return 2
        with open(args.config) as f:
            try:
                config = json.load(f)
            except json.JSONDecodeError as exc:
                print(f"error: bad JSON in {args.config}: {exc}",
                      file=sys.stderr)
                return 2
    if args.seed is not None:
        config["seed"] = args.seed
    try:
        config = _apply_overrides(config, args.overrides)
        return run(args.mode, config, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure after validation
        log.error("%s failed: %s", args.mode, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
