"""Training/validation datasets mapping (position, Sun direction) -> F.

For every Sun direction sampled on a Fibonacci sphere, the plane orthogonal
to it is sampled uniformly plus with a Gaussian cloud hugging the silhouette
boundary; each point is labeled with the signed eclipse function and lifted
to a 3D position x*u + y*v. Datasets are stored as a text header followed by
little-endian float64 records, with a checksum over the payload.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryError, DatasetError
from . import eclipse, geometry

_MAGIC = "ECLIPSEKIT-DATASET"
_FORMAT_VERSION = 1
_RECORD_FLOATS = 7  # px py pz sx sy sz f


@dataclass(frozen=True)
class EclipseSample:
    position: np.ndarray
    s_hat: np.ndarray
    f_value: float


@dataclass
class EclipseDataset:
    """Columnar sample storage plus the generation settings that produced it."""

    body_name: str
    positions: np.ndarray       # (N, 3) normalized body-frame
    sun_dirs: np.ndarray        # (N, 3) unit vectors
    f_values: np.ndarray        # (N,)
    n_directions: int
    n_uniform: int
    n_border: int
    border_sigma: float
    seed: int
    direction_seed: int

    def __post_init__(self):
        # private copies: the dataset freezes its arrays, never the caller's
        self.positions = np.array(self.positions, dtype=np.float64, order="C")
        self.sun_dirs = np.array(self.sun_dirs, dtype=np.float64, order="C")
        self.f_values = np.array(self.f_values, dtype=np.float64, order="C")
        self.border_sigma = float(self.border_sigma)
        n = len(self.f_values)
        if self.positions.shape != (n, 3) or self.sun_dirs.shape != (n, 3):
            raise DatasetError("positions/sun_dirs/f_values lengths disagree")
        if n:
            if not np.isfinite(self.f_values).all():
                raise DatasetError("non-finite eclipse-function label")
            norms = np.linalg.norm(self.sun_dirs, axis=1)
            if np.abs(norms - 1.0).max() > 1e-9:
                raise DatasetError("sun directions must be unit vectors")
        for arr in (self.positions, self.sun_dirs, self.f_values):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.f_values)

    def sample(self, i):
        return EclipseSample(self.positions[i], self.sun_dirs[i],
                             float(self.f_values[i]))

    def input_matrix(self):
        """(N, 6) network inputs: position columns then Sun-direction columns."""
        return np.hstack([self.positions, self.sun_dirs])


def sample_direction(frame, boundary, mesh, n_uniform, n_border, border_sigma,
                     rng_seed, sampler=None):
    """Labeled plane samples for one Sun direction.

    n_uniform points uniform on [-1, 1]^2 followed by n_border points drawn
    as (random boundary point + 2D Gaussian offset of std border_sigma), each
    labeled with the signed eclipse function and lifted to 3D.

    Returns (positions (M, 3), f_values (M,)).
    """
    if len(boundary) == 0:
        raise BoundaryError("empty silhouette boundary")
    if border_sigma <= 0:
        raise DatasetError("border_sigma must be positive")
    if sampler is None:
        sampler = eclipse.ShadowSampler(mesh, frame)
    rng = np.random.default_rng(rng_seed)
    xy_uniform = rng.uniform(-1.0, 1.0, size=(n_uniform, 2))
    pick = rng.integers(0, len(boundary.points), size=n_border)
    xy_border = (boundary.points[pick]
                 + rng.normal(0.0, border_sigma, size=(n_border, 2)))
    xy = np.vstack([xy_uniform, xy_border])
    f = eclipse.eclipse_function_batch(xy, boundary, sampler)
    return frame.lift(xy), f


def build_dataset(mesh, n_train_dirs, n_valid_dirs, n_uniform=1000,
                  n_border=3000, border_sigma=0.05, seed=0,
                  boundary_grid_n=256, body_name="body"):
    """Build the train and validation splits for one body.

    Train and validation Sun directions come from Fibonacci spheres with
    different phase seeds, so the two sets are isotropic and disjoint.
    """
    if n_train_dirs < 1 or n_valid_dirs < 1:
        raise DatasetError("direction counts must be >= 1")

    def one_split(directions, split_index):
        positions = []
        fvals = []
        shats = []
        for k, s in enumerate(directions):
            frame = eclipse.build_frame(s)
            sampler = eclipse.ShadowSampler(mesh, frame)
            try:
                boundary = eclipse.extract_boundary(
                    frame, mesh, grid_n=boundary_grid_n, sampler=sampler)
            except BoundaryError as exc:
                raise DatasetError(
                    f"direction {k} of split {split_index}: {exc}") from exc
            pos, f = sample_direction(
                frame, boundary, mesh, n_uniform, n_border, border_sigma,
                rng_seed=np.random.SeedSequence([seed, split_index, k]),
                sampler=sampler)
            positions.append(pos)
            fvals.append(f)
            shats.append(np.broadcast_to(s, pos.shape).copy())
        return (np.vstack(positions), np.vstack(shats), np.concatenate(fvals))

    train_dirs = geometry.fibonacci_sphere(n_train_dirs, offset_seed=2 * seed)
    valid_dirs = geometry.fibonacci_sphere(n_valid_dirs, offset_seed=2 * seed + 1)
    ptr, str_, ftr = one_split(train_dirs, 0)
    pva, sva, fva = one_split(valid_dirs, 1)
    common = dict(n_uniform=n_uniform, n_border=n_border,
                  border_sigma=border_sigma, seed=seed)
    train = EclipseDataset(body_name, ptr, str_, ftr,
                           n_directions=n_train_dirs,
                           direction_seed=2 * seed, **common)
    valid = EclipseDataset(body_name, pva, sva, fva,
                           n_directions=n_valid_dirs,
                           direction_seed=2 * seed + 1, **common)
    return train, valid


def save_dataset(ds, path):
    payload = np.hstack([ds.positions, ds.sun_dirs,
                         ds.f_values[:, None]]).astype("<f8").tobytes()
    checksum = hashlib.sha256(payload).hexdigest()
    header = (
        f"{_MAGIC} v{_FORMAT_VERSION}\n"
        f"body = {ds.body_name}\n"
        f"n_samples = {len(ds)}\n"
        f"n_directions = {ds.n_directions}\n"
        f"n_uniform = {ds.n_uniform}\n"
        f"n_border = {ds.n_border}\n"
        f"border_sigma = {ds.border_sigma!r}\n"
        f"seed = {ds.seed}\n"
        f"direction_seed = {ds.direction_seed}\n"
        f"checksum = {checksum}\n"
        "END-HEADER\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def _parse_header(blob, path):
    marker = b"END-HEADER\n"
    cut = blob.find(marker)
    if cut < 0:
        raise DatasetError(f"{path}: missing header terminator")
    lines = blob[:cut].decode("utf-8").splitlines()
    if not lines or not lines[0].startswith(_MAGIC):
        raise DatasetError(f"{path}: not an eclipsekit dataset file")
    version = lines[0][len(_MAGIC):].strip()
    if version != f"v{_FORMAT_VERSION}":
        raise DatasetError(f"{path}: unsupported format version {version!r}")
    fields = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value.strip()
    return fields, blob[cut + len(marker):]


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, payload = _parse_header(blob, path)
    try:
        n = int(fields["n_samples"])
        meta = dict(
            body_name=fields["body"],
            n_directions=int(fields["n_directions"]),
            n_uniform=int(fields["n_uniform"]),
            n_border=int(fields["n_border"]),
            border_sigma=float(fields["border_sigma"]),
            seed=int(fields["seed"]),
            direction_seed=int(fields["direction_seed"]),
        )
        checksum = fields["checksum"]
    except KeyError as exc:
        raise DatasetError(f"{path}: header misses field {exc}") from exc
    expected = n * _RECORD_FLOATS * 8
    if len(payload) != expected:
        raise DatasetError(
            f"{path}: truncated or padded payload "
            f"({len(payload)} bytes, expected {expected})")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise DatasetError(f"{path}: checksum mismatch")
    arr = np.frombuffer(payload, dtype="<f8").reshape(n, _RECORD_FLOATS)
    arr = arr.astype(np.float64, copy=True)
    return EclipseDataset(positions=arr[:, 0:3], sun_dirs=arr[:, 3:6],
                          f_values=arr[:, 6], **meta)


def export_csv(ds, path):
    """Plain-text dump px,py,pz,sx,sy,sz,f for plotting and inspection."""
    fmt = geometry._fmt
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("px,py,pz,sx,sy,sz,f\n")
        for p, s, f in zip(ds.positions, ds.sun_dirs, ds.f_values):
            fh.write(f"{fmt(p[0])},{fmt(p[1])},{fmt(p[2])},"
                     f"{fmt(s[0])},{fmt(s[1])},{fmt(s[2])},{fmt(f)}\n")
