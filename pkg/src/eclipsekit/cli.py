"""Command-line driver for the full pipeline.

Subcommands: mascons, dataset, train, eval, propagate, compare, bench.
Runs are described by an INI-style config file (sections per module) whose
values can be overridden on the command line with repeated
`--set section.key=value` flags; unknown sections or keys are rejected.
Outside of wall-clock timings every command is a pure function of the config
and its input files.
"""

import argparse
import configparser
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, EclipseKitError
from . import dataset as dataset_mod
from . import dynamics, eclipse, geometry, neuralnet

G_SI = 6.67430e-11  # m^3 / (kg s^2)


@dataclass(frozen=True)
class BodyPreset:
    name: str
    characteristic_length_km: float
    mass_kg: float
    rotation_period_hr: float
    expected_mesh_count: int
    expected_mascon_count: int

    @property
    def time_unit_s(self):
        """sqrt(L^3 / (G M)): the unit that makes G * M_total = 1."""
        L = self.characteristic_length_km * 1e3
        return math.sqrt(L ** 3 / (G_SI * self.mass_kg))

    @property
    def omega_normalized(self):
        """Spin rate in radians per normalized time unit."""
        return 2.0 * math.pi * self.time_unit_s / (self.rotation_period_hr * 3600.0)


BODY_PRESETS = {
    "bennu": BodyPreset("bennu", 0.5634, 7.329e10, 4.296, 7374, 75150),
    "itokawa": BodyPreset("itokawa", 0.5607, 3.51e10, 12.132, 3000, 100363),
    "67p": BodyPreset("67p", 5.0025, 9.982e12, 12.4043, 9149, 57259),
    "eros": BodyPreset("eros", 32.6622, 6.687e15, 5.270, 7374, 97824),
}

_SCHEMA = {
    "run": {
        "body": "custom",
        "seed": 0,
        "mesh": "",
        "mascons": "",
        "train_dataset": "",
        "valid_dataset": "",
        "model": "",
        "out_dir": "out",
    },
    "body": {
        "characteristic_length_km": 1.0,
        "mass_kg": 1.0e12,
        "rotation_period_hr": 0.0,
    },
    "mascons": {
        "grid_n": 24,
    },
    "dataset": {
        "n_train_dirs": 50,
        "n_valid_dirs": 20,
        "n_uniform": 1000,
        "n_border": 3000,
        "border_sigma": 0.05,
        "boundary_grid_n": 256,
        "csv_out": "",
    },
    "train": {
        "hidden_layers": "32,32,32",
        "activation": "sine",
        "w0": 30.0,
        "minibatch_size": 256,
        "initial_lr": 3e-4,
        "epochs": 60,
        "lr_decay": 0.7,
        "decay_start_epoch": 25,
        "decay_every": 5,
    },
    "eval": {
        "dataset": "",
        "silhouette_s": "",
        "silhouette_grid": 128,
    },
    "dynamics": {
        "eclipse_source": "raytrace",
        "srp_eta": 1e-5,
        "omega": "",
        "s0": "1,0,0",
        "r0": "3,0,0",
        "v0": "",
        "t_final": 100.0,
        "dt_initial": 0.01,
        "rtol": 1e-12,
        "atol": 1e-12,
        "event_time_tol": 1e-10,
        "compare_samples": 2000,
    },
    "bench": {
        "n_evals": 100000,
        "exhaustive_samples": 2000,
        "bvh_samples": 20000,
    },
}


def _coerce(section, key, raw):
    default = _SCHEMA[section][key]
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def load_config(path=None, overrides=()):
    """Config dict from defaults, an optional INI file, then CLI overrides."""
    cfg = {sec: dict(vals) for sec, vals in _SCHEMA.items()}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key '{key}' in section [{section}]")
                try:
                    cfg[section][key] = _coerce(section, key, raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{key}: {raw!r}") from exc
    for item in overrides:
        target, _, raw = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section, _, key = target.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {target!r}")
        try:
            cfg[section][key] = _coerce(section, key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {target}: {raw!r}") from exc
    return cfg


def _vec3(raw, what):
    parts = [p for p in raw.split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError(f"{what} must be three comma-separated numbers")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"bad number in {what}: {raw!r}") from exc


def _body_constants(cfg):
    name = cfg["run"]["body"].lower()
    if name in BODY_PRESETS:
        p = BODY_PRESETS[name]
        return p.characteristic_length_km, p.mass_kg, p.rotation_period_hr
    if name != "custom":
        raise ConfigError(
            f"unknown body {name!r}; use one of "
            f"{sorted(BODY_PRESETS)} or 'custom'")
    b = cfg["body"]
    return (b["characteristic_length_km"], b["mass_kg"],
            b["rotation_period_hr"])


def _resolve_omega(cfg):
    raw = str(cfg["dynamics"]["omega"]).strip()
    if raw:
        return float(raw)
    L, mass, period_hr = _body_constants(cfg)
    if period_hr <= 0:
        return 0.0
    tu = math.sqrt((L * 1e3) ** 3 / (G_SI * mass))
    return 2.0 * math.pi * tu / (period_hr * 3600.0)


def _require(path, what):
    if not path:
        raise ConfigError(f"{what} path is not configured")
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _out_path(cfg, name):
    out = Path(cfg["run"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _load_mesh(cfg):
    L, _, _ = _body_constants(cfg)
    return geometry.load_mesh(_require(cfg["run"]["mesh"], "mesh"), L)


def cmd_mascons(cfg):
    mesh = _load_mesh(cfg)
    _, mass_kg, _ = _body_constants(cfg)
    model = geometry.generate_mascons_voxel(mesh, cfg["mascons"]["grid_n"],
                                            mass_kg)
    out = cfg["run"]["mascons"] or _out_path(cfg, "mascons.csv")
    geometry.save_mascons(model, out)
    com = model.center_of_mass()
    _, centroid = geometry.mesh_volume_centroid(mesh)
    print(f"body: {cfg['run']['body']}  L = "
          f"{_body_constants(cfg)[0]} km  mass = {mass_kg:.4g} kg")
    print(f"mascons: {model.count} written to {out}")
    print(f"mascon center of mass: {com[0]:.6f} {com[1]:.6f} {com[2]:.6f}")
    print(f"mesh volume centroid:  {centroid[0]:.6f} {centroid[1]:.6f} "
          f"{centroid[2]:.6f}")
    return 0


def cmd_dataset(cfg):
    mesh = _load_mesh(cfg)
    d = cfg["dataset"]
    train, valid = dataset_mod.build_dataset(
        mesh, d["n_train_dirs"], d["n_valid_dirs"], n_uniform=d["n_uniform"],
        n_border=d["n_border"], border_sigma=d["border_sigma"],
        seed=cfg["run"]["seed"], boundary_grid_n=d["boundary_grid_n"],
        body_name=cfg["run"]["body"])
    train_path = cfg["run"]["train_dataset"] or _out_path(cfg, "train.ds")
    valid_path = cfg["run"]["valid_dataset"] or _out_path(cfg, "valid.ds")
    dataset_mod.save_dataset(train, train_path)
    dataset_mod.save_dataset(valid, valid_path)
    print(f"train: {len(train)} samples / {train.n_directions} directions "
          f"-> {train_path}")
    print(f"valid: {len(valid)} samples / {valid.n_directions} directions "
          f"-> {valid_path}")
    if d["csv_out"]:
        dataset_mod.export_csv(train, d["csv_out"])
        print(f"train csv -> {d['csv_out']}")
    return 0


def _train_configs(cfg):
    t = cfg["train"]
    hidden = tuple(int(h) for h in t["hidden_layers"].split(",") if h.strip())
    mcfg = neuralnet.MlpConfig(
        input_dim=6, hidden_layers=hidden, output_dim=1,
        activation=t["activation"], w0=t["w0"], init_seed=cfg["run"]["seed"])
    tcfg = neuralnet.TrainConfig(
        minibatch_size=t["minibatch_size"], initial_lr=t["initial_lr"],
        epochs=t["epochs"], lr_decay=t["lr_decay"],
        decay_start_epoch=t["decay_start_epoch"], decay_every=t["decay_every"],
        shuffle_seed=cfg["run"]["seed"])
    return mcfg, tcfg


def cmd_train(cfg):
    train_ds = dataset_mod.load_dataset(
        _require(cfg["run"]["train_dataset"], "train dataset"))
    valid_ds = dataset_mod.load_dataset(
        _require(cfg["run"]["valid_dataset"], "valid dataset"))
    mcfg, tcfg = _train_configs(cfg)
    model = neuralnet.init_model(mcfg)
    print(f"training {mcfg.activation} net {mcfg.layer_dims} "
          f"({model.param_count} parameters) on {len(train_ds)} samples")
    model, history = neuralnet.train(model, train_ds, tcfg, valid_ds)
    model_path = cfg["run"]["model"] or _out_path(cfg, "model.mlp")
    neuralnet.save_model(model, model_path)
    hist_path = _out_path(cfg, "loss_history.csv")
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,epoch_loss,train_mse,valid_mse\n")
        for e, (lr, el, tr, va) in enumerate(zip(history["lr"],
                                                 history["epoch_loss"],
                                                 history["train_mse"],
                                                 history["valid_mse"])):
            fh.write(f"{e},{lr!r},{el!r},{tr!r},{va!r}\n")
    print(f"final train MSE {history['train_mse'][-1]:.6e}  "
          f"valid MSE {history['valid_mse'][-1]:.6e}")
    print(f"model -> {model_path}\nhistory -> {hist_path}")
    return 0


def cmd_eval(cfg):
    model = neuralnet.load_model(_require(cfg["run"]["model"], "model"))
    ds_path = cfg["eval"]["dataset"] or cfg["run"]["valid_dataset"]
    ds = dataset_mod.load_dataset(_require(ds_path, "eval dataset"))
    if len(ds) == 0:
        raise DatasetError(f"cannot evaluate on the empty dataset {ds_path}")
    mse = neuralnet.evaluate_mse(model, ds)
    out = _out_path(cfg, "eval.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("dataset,n_samples,mse\n")
        fh.write(f"{ds_path},{len(ds)},{mse!r}\n")
    print(f"MSE on {ds_path} ({len(ds)} samples): {mse:.6e} -> {out}")
    if cfg["eval"]["silhouette_s"]:
        _export_silhouette(cfg, model)
    return 0


def _export_silhouette(cfg, model):
    """Sample the oracle and network eclipse functions on a plane grid."""
    s = _vec3(cfg["eval"]["silhouette_s"], "eval.silhouette_s")
    s = s / np.linalg.norm(s)
    mesh = _load_mesh(cfg)
    frame = eclipse.build_frame(s)
    sampler = eclipse.ShadowSampler(mesh, frame)
    boundary = eclipse.extract_boundary(
        frame, mesh, grid_n=cfg["dataset"]["boundary_grid_n"], sampler=sampler)
    n = cfg["eval"]["silhouette_grid"]
    xs = np.linspace(-1.2, 1.2, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    f_oracle = eclipse.eclipse_function_batch(pts, boundary, sampler)
    f_net = neuralnet.infer_f_batch(model, frame.lift(pts),
                                    np.broadcast_to(s, (len(pts), 3)))
    fmt = geometry._fmt
    out = _out_path(cfg, "silhouette.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("x,y,f_oracle,f_net\n")
        for p, fo, fn in zip(pts, f_oracle, f_net):
            fh.write(f"{fmt(p[0])},{fmt(p[1])},{fmt(fo)},{fmt(fn)}\n")
    bpath = _out_path(cfg, "silhouette_boundary.csv")
    boundary.save_csv(bpath)
    print(f"silhouette grid -> {out}\nboundary -> {bpath}")


def _build_source(cfg, which):
    if which == "raytrace":
        return dynamics.RayTraceSource(_load_mesh(cfg))
    if which == "network":
        model = neuralnet.load_model(_require(cfg["run"]["model"], "model"))
        return dynamics.NetworkSource(model)
    raise ConfigError(f"eclipse_source must be raytrace or network, got {which!r}")


def _dynamics_config(cfg, source):
    d = cfg["dynamics"]
    _, mass_kg, _ = _body_constants(cfg)
    mascons = geometry.load_mascons(
        _require(cfg["run"]["mascons"], "mascon file"), mass_kg)
    s0 = _vec3(d["s0"], "dynamics.s0")
    s0 = s0 / np.linalg.norm(s0)
    return dynamics.DynamicsConfig(
        mascons=mascons, omega=_resolve_omega(cfg), srp_eta=d["srp_eta"],
        s0=s0, eclipse_source=source, rtol=d["rtol"], atol=d["atol"],
        event_time_tol=d["event_time_tol"])


def _initial_state(cfg):
    d = cfg["dynamics"]
    r0 = _vec3(d["r0"], "dynamics.r0")
    if str(d["v0"]).strip():
        v0 = _vec3(d["v0"], "dynamics.v0")
    else:
        # default: circular speed about the total mass, along +y
        v0 = np.array([0.0, math.sqrt(1.0 / np.linalg.norm(r0)), 0.0])
    return dynamics.SpacecraftState(0.0, r0, v0)


def cmd_propagate(cfg):
    d = cfg["dynamics"]
    source = _build_source(cfg, d["eclipse_source"])
    dyn_cfg = _dynamics_config(cfg, source)
    state0 = _initial_state(cfg)
    traj = dynamics.propagate(state0, dyn_cfg, d["t_final"], d["dt_initial"])
    tpath = _out_path(cfg, f"trajectory_{source.name}.csv")
    epath = _out_path(cfg, f"events_{source.name}.csv")
    dynamics.save_trajectory_csv(traj, tpath)
    dynamics.save_events_csv(traj, epath)
    print(f"{len(traj.times)} accepted steps, {len(traj.events)} eclipse "
          f"events over t = [0, {d['t_final']}]")
    print(f"trajectory -> {tpath}\nevents -> {epath}")
    return 0


def cmd_compare(cfg):
    d = cfg["dynamics"]
    src_a = dynamics.TimedSource(_build_source(cfg, "raytrace"))
    src_b = dynamics.TimedSource(_build_source(cfg, "network"))
    state0 = _initial_state(cfg)
    trajs = {}
    for src in (src_a, src_b):
        dyn_cfg = _dynamics_config(cfg, src)
        trajs[src.name] = dynamics.propagate(state0, dyn_cfg, d["t_final"],
                                             d["dt_initial"])
        dynamics.save_trajectory_csv(
            trajs[src.name], _out_path(cfg, f"trajectory_{src.name}.csv"))
        dynamics.save_events_csv(
            trajs[src.name], _out_path(cfg, f"events_{src.name}.csv"))
    ts, dr = dynamics.compare_trajectories(trajs["raytrace"], trajs["network"],
                                           n_samples=d["compare_samples"])
    fmt = geometry._fmt
    dpath = _out_path(cfg, "divergence.csv")
    with open(dpath, "w", encoding="utf-8") as fh:
        fh.write("t,dr\n")
        for t, e in zip(ts, dr):
            fh.write(f"{fmt(t)},{fmt(e)}\n")
    print(f"events: raytrace {len(trajs['raytrace'].events)}, "
          f"network {len(trajs['network'].events)}")
    print(f"max |dr| = {dr.max():.6e} -> {dpath}")
    for src in (src_a, src_b):
        mean = src.seconds / max(src.calls, 1)
        print(f"{src.name} indicator: {src.calls} calls, "
              f"{mean * 1e6:.1f} us/call")
    ratio = ((src_a.seconds / max(src_a.calls, 1))
             / max(src_b.seconds / max(src_b.calls, 1), 1e-300))
    print(f"oracle/network indicator cost ratio: {ratio:.1f}x")
    return 0


def cmd_bench(cfg):
    mesh = _load_mesh(cfg)
    b = cfg["bench"]
    if cfg["run"]["model"] and Path(cfg["run"]["model"]).exists():
        model = neuralnet.load_model(cfg["run"]["model"])
    else:
        model = neuralnet.init_model(
            neuralnet.MlpConfig(init_seed=cfg["run"]["seed"]))
    rng = np.random.default_rng(cfg["run"]["seed"])
    n = b["n_evals"]
    s = rng.normal(size=(n, 3))
    s /= np.linalg.norm(s, axis=1)[:, None]
    pos = rng.normal(size=(n, 3))
    pos *= (rng.uniform(1.5, 3.0, n) / np.linalg.norm(pos, axis=1))[:, None]

    rows = []

    def record(name, calls, total, median):
        rows.append((name, calls, total, total / calls, median))
        print(f"{name}: {calls} calls in {total:.3f} s "
              f"({total / calls * 1e6:.2f} us/call, median "
              f"{median * 1e6:.2f} us)")

    n_net = n
    stats = bench_network(model, pos[:n_net], s[:n_net])
    record("network_batched", n_net, *stats)

    origins = pos - (pos * s).sum(axis=1)[:, None] * s - 4.0 * s
    n_bvh = min(n, b["bvh_samples"])
    record("raytrace_bvh", n_bvh,
           *bench_rays(mesh, origins[:n_bvh], s[:n_bvh], exhaustive=False))

    n_exh = min(n, b["exhaustive_samples"])
    record("raytrace_exhaustive", n_exh,
           *bench_rays(mesh, origins[:n_exh], s[:n_exh], exhaustive=True))

    out = _out_path(cfg, "bench.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("evaluator,calls,total_s,per_call_s,median_s\n")
        for name, calls, total, per, med in rows:
            fh.write(f"{name},{calls},{total!r},{per!r},{med!r}\n")
    net_per = rows[0][3]
    print(f"exhaustive/network per-call ratio: {rows[2][3] / net_per:.1f}x")
    print(f"bvh/network per-call ratio: {rows[1][3] / net_per:.1f}x")
    print(f"report -> {out}")
    return 0


def bench_rays(mesh, origins, directions, exhaustive):
    """(total seconds, median per-call seconds) for single-ray shadow tests."""
    mesh.bvh  # build outside the timed region
    times = np.empty(len(origins))
    for k in range(len(origins)):
        t0 = time.perf_counter()
        if exhaustive:
            geometry.rays_hit_mesh_exhaustive(origins[k:k + 1],
                                              directions[k:k + 1], mesh)
        else:
            mesh.bvh.any_hit(origins[k], directions[k])
        times[k] = time.perf_counter() - t0
    return float(times.sum()), float(np.median(times))


def bench_network(model, positions, s_hats, n_chunks=32):
    """(total seconds, median per-call seconds) for batched inference."""
    chunks = np.array_split(np.arange(len(positions)), n_chunks)
    per_call = []
    total = 0.0
    for idx in chunks:
        t0 = time.perf_counter()
        neuralnet.infer_f_batch(model, positions[idx], s_hats[idx])
        dt = time.perf_counter() - t0
        total += dt
        per_call.append(dt / len(idx))
    return total, float(np.median(per_call))


_COMMANDS = {
    "mascons": cmd_mascons,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "propagate": cmd_propagate,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="eclipsekit",
        description="Shadow models and eclipse-aware orbit propagation "
                    "around irregular bodies")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", default=None,
                       help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       help="override a config value (section.key=value)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return 2
    except EclipseKitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
