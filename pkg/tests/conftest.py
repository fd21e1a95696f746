import numpy as np
import pytest

from eclipsekit import geometry, neuralnet, shapes
from eclipsekit.eclipse import build_frame


@pytest.fixture(scope="session")
def cube():
    return shapes.cube_mesh()


@pytest.fixture(scope="session")
def icosphere2():
    # 320 triangles: cheap stand-in for tests that only need a closed body
    return shapes.icosphere(2)


@pytest.fixture(scope="session")
def icosphere4():
    # 5120 triangles: fine enough that the silhouette is a circle to ~1e-3
    return shapes.icosphere(4)


@pytest.fixture(scope="session")
def bumpy():
    return shapes.bumpy_body(4, seed=20)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def analytic_sphere_samples(n_dirs, per_dir, seed):
    """Labeled samples for a spherical body: F = |xy| - 1 for any direction."""
    dirs = geometry.fibonacci_sphere(n_dirs, offset_seed=seed)
    gen = np.random.default_rng(seed)
    xs, ys = [], []
    for s in dirs:
        frame = build_frame(s)
        xy = gen.uniform(-1.4, 1.4, size=(per_dir, 2))
        pos = frame.lift(xy)
        xs.append(np.hstack([pos, np.broadcast_to(s, pos.shape)]))
        ys.append(np.linalg.norm(xy, axis=1) - 1.0)
    return np.vstack(xs), np.concatenate(ys), dirs


@pytest.fixture(scope="session")
def sphere_fit():
    """Quick sine-net fit of the analytic sphere; returns (model, directions).

    Direction coverage is deliberately small to keep the fixture fast, so
    pointwise inference checks should stick to the trained directions;
    cross-direction generalization is covered by the acceptance suite.
    """
    x, y, dirs = analytic_sphere_samples(48, 500, seed=3)
    model = neuralnet.init_model(neuralnet.MlpConfig(init_seed=7))
    tc = neuralnet.TrainConfig(initial_lr=1e-3, epochs=40,
                               decay_start_epoch=20, decay_every=5,
                               shuffle_seed=7)
    model, history = neuralnet.train(model, (x, y), tc)
    assert history["train_mse"][-1] < 1e-3
    return model, dirs


@pytest.fixture(scope="session")
def sphere_net(sphere_fit):
    return sphere_fit[0]
