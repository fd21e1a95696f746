"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale dataset and
training fixtures take several minutes; everything is deterministic for the
seeds fixed here.
"""

import math
import time

import numpy as np
import pytest
from test_neuralnet import finite_difference_check

from eclipsekit import dataset as dm
from eclipsekit import dynamics as dyn
from eclipsekit import eclipse, geometry, neuralnet as nn, shapes
from eclipsekit.cli import BODY_PRESETS

SEED = 11


def report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def desk_body(mesh, body_name):
    """Desk-scale datasets plus equal-size sine and rectifier fits."""
    t0 = time.time()
    train, valid = dm.build_dataset(mesh, 50, 20, seed=SEED,
                                    body_name=body_name)
    print(f"\n[{body_name}] dataset {len(train)}/{len(valid)} samples "
          f"({time.time() - t0:.0f} s)", flush=True)
    models = {}
    for activation in ("sine", "rectifier"):
        t0 = time.time()
        # w0=10 at desk scale: 50 directions support less angular bandwidth
        # than the dense full-scale recipe, and w0=30 overfits across them
        model = nn.init_model(nn.MlpConfig(activation=activation, w0=10.0,
                                           init_seed=SEED))
        model, history = nn.train(model, train,
                                  nn.TrainConfig(shuffle_seed=SEED), valid)
        print(f"[{body_name}] {activation}: train "
              f"{history['train_mse'][-1]:.3e} valid "
              f"{history['valid_mse'][-1]:.3e} ({time.time() - t0:.0f} s)",
              flush=True)
        models[activation] = (model, history)
    return {"mesh": mesh, "train": train, "valid": valid, "models": models}


@pytest.fixture(scope="module")
def desk_sphere(icosphere4):
    return desk_body(icosphere4, "sphere")


@pytest.fixture(scope="module")
def desk_bumpy(bumpy):
    return desk_body(bumpy, "bumpy")


def test_criterion_1_parameter_counts():
    small = nn.MlpConfig(6, (32, 32, 32), 1).param_count
    large = nn.MlpConfig(6, (128, 128, 128, 128), 1).param_count
    report("C1 parameter counts", small == 2369 and large == 50561,
           f"(6,[32,32,32],1) -> {small}, (6,[128x4],1) -> {large}")


def test_criterion_2_gradient_correctness():
    worst = max(finite_difference_check("sine"),
                finite_difference_check("rectifier"))
    report("C2 gradient correctness", worst < 1e-5,
           f"max relative error vs central differences {worst:.2e}")


def test_criterion_3_oracle_fidelity(icosphere4):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(4):
        s = rng.normal(size=3)
        s /= np.linalg.norm(s)
        frame = eclipse.build_frame(s)
        sampler = eclipse.ShadowSampler(icosphere4, frame)
        boundary = eclipse.extract_boundary(frame, icosphere4, grid_n=256,
                                            sampler=sampler)
        pts = rng.uniform(-1.2, 1.2, size=(2500, 2))
        f = eclipse.eclipse_function_batch(pts, boundary, sampler)
        truth = np.linalg.norm(pts, axis=1) - 1.0
        worst = max(worst, float(np.abs(f - truth).max()))
    report("C3 oracle fidelity on analytic body", worst < 5e-3,
           f"max |F - (|xy| - 1)| = {worst:.2e} on 10^4 points, 4 directions")


def test_criterion_4_gradient_identity(icosphere4, cube):
    rng = np.random.default_rng(SEED + 1)
    s = rng.normal(size=3)
    s /= np.linalg.norm(s)
    devs = []
    for mesh, shat in ((icosphere4, s), (cube, np.array([0.0, 0.0, 1.0]))):
        frame = eclipse.build_frame(shat)
        sampler = eclipse.ShadowSampler(mesh, frame)
        boundary = eclipse.extract_boundary(frame, mesh, grid_n=256,
                                            sampler=sampler)
        devs.append(eclipse.check_gradient_identity(boundary, frame, mesh,
                                                    h=1e-4, sampler=sampler))
    worst = max(devs)
    report("C4 gradient identity", worst < 1e-2,
           f"max |dF/dn - 1| = {worst:.2e} (sphere {devs[0]:.1e}, "
           f"square {devs[1]:.1e})")


def test_criterion_5_sine_beats_rectifier(desk_sphere, desk_bumpy):
    lines = []
    ok = True
    for body, data in (("sphere", desk_sphere), ("bumpy", desk_bumpy)):
        sine_valid = data["models"]["sine"][1]["valid_mse"][-1]
        relu_valid = data["models"]["rectifier"][1]["valid_mse"][-1]
        ok &= sine_valid < relu_valid and sine_valid < 2e-4
        lines.append(f"{body}: sine {sine_valid:.3e} vs rectifier "
                     f"{relu_valid:.3e}")
        # training trend: the 5-epoch moving average of the epoch loss
        # decreases strictly over the first 40 epochs (single-epoch upticks
        # near convergence are expected and allowed)
        loss = np.array(data["models"]["sine"][1]["epoch_loss"])
        ma = np.convolve(loss, np.ones(5) / 5.0, mode="valid")
        ok &= bool((np.diff(ma[:40 - 4]) < 0).all())
    report("C5 desk-scale ordering", ok, "; ".join(lines))


def test_criterion_6_event_exactness():
    mascons = geometry.MasconModel(np.zeros((1, 3)), np.ones(1), 1e10)
    cfg = dyn.DynamicsConfig(mascons=mascons,
                             eclipse_source=dyn.SphereSource(1.0),
                             s0=(1.0, 0.0, 0.0))
    state0 = dyn.SpacecraftState(0.0, np.array([3.0, 0.0, 0.0]),
                                 np.array([0.0, math.sqrt(1.0 / 3.0), 0.0]))
    rate = math.sqrt(1.0 / 27.0)
    period = 2.0 * math.pi / rate
    traj = dyn.propagate(state0, cfg, period, 0.01)
    t_entry = (math.pi - math.asin(1.0 / 3.0)) / rate
    t_exit = (math.pi + math.asin(1.0 / 3.0)) / rate
    ok = [e.kind for e in traj.events] == ["entry", "exit"]
    err_entry = abs(traj.events[0].t_event - t_entry) if ok else math.inf
    err_exit = abs(traj.events[1].t_event - t_exit) if ok else math.inf
    arc = ((traj.events[1].t_event - traj.events[0].t_event) / period
           if ok else math.inf)
    arc_err = abs(arc - math.asin(1.0 / 3.0) / math.pi)
    ok = ok and err_entry < 1e-6 and err_exit < 1e-6 and arc_err < 1e-4
    report("C6 event exactness", ok,
           f"entry err {err_entry:.1e}, exit err {err_exit:.1e}, "
           f"arc fraction err {arc_err:.1e}")


def test_criterion_7_trajectory_divergence(desk_bumpy):
    mesh = desk_bumpy["mesh"]
    sine = desk_bumpy["models"]["sine"][0]
    mascons = geometry.generate_mascons_voxel(mesh, 16, 9.982e12)
    omega = BODY_PRESETS["67p"].omega_normalized
    r0 = np.array([3.0, 0.0, 0.0])
    v0 = np.array([0.0, math.sqrt(1.0 / 3.0) - omega * 3.0, 0.0])
    state0 = dyn.SpacecraftState(0.0, r0, v0)
    t_final = 3.0 * 2.0 * math.pi * 3.0 ** 1.5
    trajs = {}
    for name, source in (("raytrace", dyn.RayTraceSource(mesh)),
                         ("network", dyn.NetworkSource(sine))):
        cfg = dyn.DynamicsConfig(mascons=mascons, omega=omega, srp_eta=1e-5,
                                 s0=(1.0, 0.0, 0.0), eclipse_source=source)
        trajs[name] = dyn.propagate(state0, cfg, t_final, 0.01)
    a, b = trajs["raytrace"], trajs["network"]
    ts, dr = dyn.compare_trajectories(a, b, 4000)

    max_dr = float(dr.max())
    ok = max_dr < 1e-4
    # new divergence enters only at eclipse crossings: the runs agree bitwise
    # before the first event, and their events pair up closely
    first_event = min(a.events[0].t_event, b.events[0].t_event)
    pre = dr[ts < first_event - 0.05]
    pre_max = float(pre.max()) if len(pre) else 0.0
    ok &= pre_max < 1e-8
    ok &= len(a.events) == len(b.events) and len(a.events) >= 6
    pair_dt = 0.0
    for ea, eb in zip(a.events, b.events):
        ok &= ea.kind == eb.kind
        pair_dt = max(pair_dt, abs(ea.t_event - eb.t_event))
    ok &= pair_dt < 0.05
    ok &= all(e.residual < 1e-8 for e in a.events + b.events)
    report("C7 trajectory divergence", bool(ok),
           f"max |dr| {max_dr:.2e} over 3 orbits ({len(a.events)} events, "
           f"pre-event dr {pre_max:.1e}, worst event pairing {pair_dt:.1e})")


def test_criterion_8_speed(sphere_net):
    mesh = shapes.bumpy_body(5, seed=20)        # 20480 triangles
    rng = np.random.default_rng(SEED)
    n_net = 100_000
    s = rng.normal(size=(n_net, 3))
    s /= np.linalg.norm(s, axis=1)[:, None]
    pos = rng.normal(size=(n_net, 3))
    pos *= (rng.uniform(1.5, 3.0, n_net) / np.linalg.norm(pos, axis=1))[:, None]
    origins = pos - (pos * s).sum(axis=1)[:, None] * s - 4.0 * s

    t0 = time.perf_counter()
    nn.infer_f_batch(sphere_net, pos, s)
    per_net = (time.perf_counter() - t0) / n_net

    n_ray = 200
    t0 = time.perf_counter()
    for k in range(n_ray):
        geometry.rays_hit_mesh_exhaustive(origins[k:k + 1], s[k:k + 1], mesh)
    per_ray = (time.perf_counter() - t0) / n_ray

    ratio = per_ray / per_net
    report("C8 speed", ratio >= 10.0,
           f"exhaustive ray {per_ray * 1e6:.0f} us vs batched network "
           f"{per_net * 1e6:.2f} us per call: {ratio:.0f}x "
           f"({mesh.triangle_count} triangles)")


def test_criterion_9_determinism(icosphere2, tmp_path):
    # dataset files
    blobs = []
    for sub in ("a", "b"):
        tr, _ = dm.build_dataset(icosphere2, 2, 1, n_uniform=50, n_border=100,
                                 seed=SEED, boundary_grid_n=64)
        p = tmp_path / f"{sub}.ds"
        dm.save_dataset(tr, p)
        blobs.append(p.read_bytes())
    ok = blobs[0] == blobs[1]
    # training
    x = np.random.default_rng(0).uniform(-1, 1, (400, 6))
    y = np.random.default_rng(1).uniform(-1, 1, 400)
    params = []
    for _ in range(2):
        m = nn.init_model(nn.MlpConfig(6, (8, 8), 1, init_seed=SEED))
        m, _ = nn.train(m, (x, y), nn.TrainConfig(epochs=3, shuffle_seed=SEED))
        params.append(m.flat_parameters().tobytes())
    ok &= params[0] == params[1]
    # propagation
    mascons = geometry.MasconModel(np.zeros((1, 3)), np.ones(1), 1e10)
    runs = []
    for _ in range(2):
        cfg = dyn.DynamicsConfig(mascons=mascons, srp_eta=1e-5,
                                 eclipse_source=dyn.SphereSource(1.0),
                                 s0=(1.0, 0.0, 0.0))
        st = dyn.SpacecraftState(0.0, np.array([3.0, 0.0, 0.0]),
                                 np.array([0.0, math.sqrt(1 / 3.0), 0.0]))
        traj = dyn.propagate(st, cfg, 40.0, 0.01)
        runs.append(traj.positions.tobytes() + traj.times.tobytes())
    ok &= runs[0] == runs[1]
    report("C9 determinism", bool(ok),
           "dataset bytes, trained parameters and trajectories reproduce")


def test_criterion_10_energy_conservation(icosphere2):
    mascons = geometry.generate_mascons_voxel(icosphere2, 12, 1e10)
    cfg = dyn.DynamicsConfig(mascons=mascons, rtol=1e-13, atol=1e-13)
    state0 = dyn.SpacecraftState(0.0, np.array([1.5, 0.0, 0.0]),
                                 np.array([0.0, math.sqrt(1.0 / 1.5), 0.0]))
    period = 2.0 * math.pi * 1.5 ** 1.5
    traj = dyn.propagate(state0, cfg, 10.0 * period, 0.01)
    e0 = dyn.mechanical_energy(traj.positions[0], traj.velocities[0], mascons)
    drift = max(abs(dyn.mechanical_energy(r, v, mascons) - e0)
                for r, v in zip(traj.positions[::5], traj.velocities[::5]))
    rel = drift / abs(e0)
    report("C10 energy conservation", rel < 1e-9,
           f"|dE/E| = {rel:.2e} over 10 periods")
