"""From-scratch MLP for fitting the eclipse function.

Sine networks apply sin(w0 * z) in every hidden layer with the matching
initialization (first layer uniform in +-1/fan_in, later layers uniform in
+-sqrt(6/fan_in)/w0); rectifier networks use He-style uniform init. Training
is plain Adam on the mean squared error with a multi-step learning-rate
schedule. Everything runs in float64 and is deterministic for fixed seeds.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, TrainingError

_MAGIC = "ECLIPSEKIT-MODEL"
_FORMAT_VERSION = 1

ACTIVATIONS = ("sine", "rectifier")


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 6
    hidden_layers: tuple = (32, 32, 32)
    output_dim: int = 1
    activation: str = "sine"
    w0: float = 30.0
    init_seed: int = 0
    project_inputs: bool = True   # project positions onto the s-orthogonal plane

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "w0", float(self.w0))
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"activation must be one of {ACTIVATIONS}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ModelError("layer dimensions must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ModelError("hidden widths must be positive")
        if self.w0 <= 0:
            raise ModelError("w0 must be positive")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    @property
    def param_count(self):
        dims = self.layer_dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass
class TrainConfig:
    minibatch_size: int = 256
    initial_lr: float = 3e-4
    epochs: int = 60
    lr_decay: float = 0.7
    decay_start_epoch: int = 25
    decay_every: int = 5
    shuffle_seed: int = 0

    def __post_init__(self):
        if min(self.minibatch_size, self.epochs, self.decay_every) < 1:
            raise TrainingError("minibatch_size, epochs and decay_every must be >= 1")
        if self.initial_lr <= 0 or self.decay_start_epoch < 0:
            raise TrainingError("initial_lr must be positive")
        if not 0.0 < self.lr_decay < 1.0:
            raise TrainingError("lr_decay must be in (0, 1)")


class MlpModel:
    """Weights + biases per layer, the config, and training metadata."""

    def __init__(self, config, weights, biases, train_mse=None, valid_mse=None,
                 epochs_run=0):
        dims = config.layer_dims
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ModelError("layer count does not match config")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ModelError(
                    f"layer {k} has shape {w.shape}/{b.shape}, "
                    f"expected {(dims[k], dims[k + 1])}/{(dims[k + 1],)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelError(f"layer {k} contains non-finite parameters")
        self.config = config
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.train_mse = list(train_mse or [])
        self.valid_mse = list(valid_mse or [])
        self.epochs_run = int(epochs_run)

    @property
    def param_count(self):
        return self.config.param_count

    def _activate(self, z):
        if self.config.activation == "sine":
            return np.sin(self.config.w0 * z)
        return np.maximum(z, 0.0)

    def _activate_grad(self, z):
        if self.config.activation == "sine":
            return self.config.w0 * np.cos(self.config.w0 * z)
        return (z > 0.0).astype(np.float64)

    def forward(self, batch):
        """Predictions for a (B, input_dim) batch; returns a (B,) array."""
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if not np.isfinite(x).all():
            raise ModelError("non-finite network input")
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if k == last else self._activate(z)
        return a[:, 0]

    def backward(self, batch, targets):
        """Mean-squared-error gradients for every parameter.

        Returns ([(dW, db) per layer], loss).
        """
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        if len(x) == 0:
            raise TrainingError("empty batch")
        acts = [x]
        zs = []
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            zs.append(z)
            a = z if k == last else self._activate(z)
            acts.append(a)
        pred = acts[-1][:, 0]
        err = pred - y
        loss = float(np.mean(err * err))
        delta = (2.0 / len(x)) * err[:, None]
        grads = [None] * len(self.weights)
        for k in range(last, -1, -1):
            grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
            if k > 0:
                delta = (delta @ self.weights[k].T) * self._activate_grad(zs[k - 1])
        return grads, loss

    def flat_parameters(self):
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


def init_model(config):
    """Seeded parameter initialization matching the activation choice."""
    rng = np.random.default_rng(config.init_seed)
    dims = config.layer_dims
    weights = []
    biases = []
    for k, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        if config.activation == "sine":
            bound = 1.0 / n_in if k == 0 else np.sqrt(6.0 / n_in) / config.w0
        else:
            bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        b_bound = 1.0 / np.sqrt(n_in)
        biases.append(rng.uniform(-b_bound, b_bound, size=n_out))
    return MlpModel(config, weights, biases)


def learning_rate_at(epoch, train_config):
    """Multi-step schedule: decay once at decay_start_epoch, then every decay_every."""
    tc = train_config
    if epoch < tc.decay_start_epoch:
        k = 0
    else:
        k = 1 + (epoch - tc.decay_start_epoch) // tc.decay_every
    return tc.initial_lr * tc.lr_decay ** k


def _as_xy(data):
    if hasattr(data, "input_matrix"):
        return data.input_matrix(), np.asarray(data.f_values, dtype=np.float64)
    x, y = data
    return (np.atleast_2d(np.asarray(x, dtype=np.float64)),
            np.asarray(y, dtype=np.float64).reshape(-1))


def evaluate_mse(model, data, chunk=8192):
    x, y = _as_xy(data)
    if len(y) == 0:
        raise TrainingError("cannot evaluate an empty dataset")
    total = 0.0
    for s in range(0, len(y), chunk):
        err = model.forward(x[s:s + chunk]) - y[s:s + chunk]
        total += float(err @ err)
    return total / len(y)


def train(model, train_data, train_config, valid_data=None):
    """Adam training loop; returns (model, history).

    One epoch is one shuffled pass. After every epoch the history records the
    learning rate, the running epoch loss, and the full-dataset train MSE
    (plus validation MSE when given). Aborts with TrainingError if the loss
    stops being finite.
    """
    tc = train_config
    x, y = _as_xy(train_data)
    n = len(y)
    if n == 0:
        raise TrainingError("cannot train on an empty dataset")
    xv, yv = _as_xy(valid_data) if valid_data is not None else (None, None)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [(np.zeros_like(w), np.zeros_like(b))
         for w, b in zip(model.weights, model.biases)]
    v = [(np.zeros_like(w), np.zeros_like(b))
         for w, b in zip(model.weights, model.biases)]
    rng = np.random.default_rng(tc.shuffle_seed)
    history = {"lr": [], "epoch_loss": [], "train_mse": [], "valid_mse": []}
    step = 0
    for epoch in range(tc.epochs):
        lr = learning_rate_at(epoch, tc)
        perm = rng.permutation(n)
        loss_sum = 0.0
        for s in range(0, n, tc.minibatch_size):
            idx = perm[s:s + tc.minibatch_size]
            grads, loss = model.backward(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged: non-finite loss at epoch {epoch}")
            loss_sum += loss * len(idx)
            step += 1
            c1 = 1.0 - beta1 ** step
            c2 = 1.0 - beta2 ** step
            for k, (dw, db) in enumerate(grads):
                mw, mb = m[k]
                vw, vb = v[k]
                mw += (1 - beta1) * (dw - mw)
                mb += (1 - beta1) * (db - mb)
                vw += (1 - beta2) * (dw * dw - vw)
                vb += (1 - beta2) * (db * db - vb)
                model.weights[k] -= lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
                model.biases[k] -= lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        history["lr"].append(lr)
        history["epoch_loss"].append(loss_sum / n)
        history["train_mse"].append(evaluate_mse(model, (x, y)))
        if xv is not None:
            history["valid_mse"].append(evaluate_mse(model, (xv, yv)))
        model.epochs_run += 1
    model.train_mse += history["train_mse"]
    model.valid_mse += history["valid_mse"]
    return model, history


def infer_f_batch(model, positions, s_hats):
    """Predicted eclipse function for 3D positions and unit Sun directions.

    When the model was trained on in-plane samples (project_inputs=True, the
    default) positions are first projected onto the plane through the origin
    orthogonal to s, which matches the training distribution exactly and
    enforces the cylindrical symmetry of F.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    s = np.atleast_2d(np.asarray(s_hats, dtype=np.float64))
    s = np.broadcast_to(s, p.shape)
    norms = np.linalg.norm(s, axis=1)
    if np.abs(norms - 1.0).max() > 1e-9:
        raise ModelError("sun directions must be unit vectors")
    if model.config.project_inputs:
        p = p - (p * s).sum(axis=1)[:, None] * s
    return model.forward(np.hstack([p, s]))


def infer_f(model, position, s_hat):
    return float(infer_f_batch(model, np.asarray(position)[None, :],
                               np.asarray(s_hat)[None, :])[0])


def save_model(model, path):
    flat = model.flat_parameters().astype("<f8")
    payload = flat.tobytes()
    cfg = model.config
    hidden = ",".join(str(h) for h in cfg.hidden_layers)
    header = (
        f"{_MAGIC} v{_FORMAT_VERSION}\n"
        f"input_dim = {cfg.input_dim}\n"
        f"hidden_layers = {hidden}\n"
        f"output_dim = {cfg.output_dim}\n"
        f"activation = {cfg.activation}\n"
        f"w0 = {cfg.w0!r}\n"
        f"init_seed = {cfg.init_seed}\n"
        f"project_inputs = {int(cfg.project_inputs)}\n"
        f"epochs_run = {model.epochs_run}\n"
        f"train_mse = {','.join(repr(x) for x in model.train_mse)}\n"
        f"valid_mse = {','.join(repr(x) for x in model.valid_mse)}\n"
        f"n_params = {len(flat)}\n"
        f"checksum = {hashlib.sha256(payload).hexdigest()}\n"
        "END-HEADER\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def load_model(path, expected_config=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"END-HEADER\n"
    cut = blob.find(marker)
    if cut < 0:
        raise ModelError(f"{path}: missing header terminator")
    lines = blob[:cut].decode("utf-8").splitlines()
    if not lines or not lines[0].startswith(_MAGIC):
        raise ModelError(f"{path}: not an eclipsekit model file")
    if lines[0][len(_MAGIC):].strip() != f"v{_FORMAT_VERSION}":
        raise ModelError(f"{path}: unsupported format version")
    fields = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value.strip()
    try:
        hidden = tuple(int(h) for h in fields["hidden_layers"].split(",") if h)
        config = MlpConfig(
            input_dim=int(fields["input_dim"]),
            hidden_layers=hidden,
            output_dim=int(fields["output_dim"]),
            activation=fields["activation"],
            w0=float(fields["w0"]),
            init_seed=int(fields["init_seed"]),
            project_inputs=bool(int(fields["project_inputs"])),
        )
        n_params = int(fields["n_params"])
        checksum = fields["checksum"]
        epochs_run = int(fields["epochs_run"])
        train_mse = [float(t) for t in fields["train_mse"].split(",") if t]
        valid_mse = [float(t) for t in fields["valid_mse"].split(",") if t]
    except (KeyError, ValueError) as exc:
        raise ModelError(f"{path}: malformed header ({exc})") from exc
    if expected_config is not None and config != expected_config:
        raise ModelError(f"{path}: model config {config} does not match "
                         f"expected {expected_config}")
    if n_params != config.param_count:
        raise ModelError(f"{path}: header parameter count {n_params} does not "
                         f"match config ({config.param_count})")
    payload = blob[cut + len(marker):]
    if len(payload) != n_params * 8:
        raise ModelError(f"{path}: truncated or padded parameter block")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise ModelError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64, copy=True)
    dims = config.layer_dims
    weights = []
    biases = []
    pos = 0
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + n_in * n_out].reshape(n_in, n_out))
        pos += n_in * n_out
        biases.append(flat[pos:pos + n_out])
        pos += n_out
    return MlpModel(config, weights, biases, train_mse=train_mse,
                    valid_mse=valid_mse, epochs_run=epochs_run)
