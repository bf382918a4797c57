"""Per-modality sequence encoders with attention pooling and a fusion head.

Each active modality (fixed order: ehr, cxr, notes) is embedded to d_model,
gets sinusoidal positional encoding, runs through its own encoder stack
(pre-norm transformer layers by default; GRU or LSTM stacks for baselines),
is collapsed to a single vector by learned-query attention pooling, and the
concatenated pooled vectors feed a small MLP that emits one logit.
"""

import base64
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .tensor import Tensor

MODALITY_ORDER = ("ehr", "cxr", "notes")
INPUT_DIMS = {"cxr": 1024, "notes": 1024}

MODEL_FORMAT = "readmit.model"
MODEL_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 96
    n_heads: int = 3
    ehr_layers: int = 2
    cxr_layers: int = 2
    notes_layers: int = 3
    d_ff: int = 192
    dropout: float = 0.1
    k_ehr: int = 100
    modalities: tuple = ("ehr", "notes")
    encoder: str = "transformer"        # transformer | gru | lstm
    max_days: int = 64
    max_images: int = 16
    max_notes: int = 32
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.modalities = tuple(m for m in MODALITY_ORDER if m in self.modalities)
        if not self.modalities:
            raise ConfigError("at least one modality must be active")
        unknown = set(self.modalities) - set(MODALITY_ORDER)
        if unknown:
            raise ConfigError(f"unknown modalities: {sorted(unknown)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.encoder not in ("transformer", "gru", "lstm"):
            raise ConfigError(f"unknown encoder kind: {self.encoder!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def input_dim(self, modality):
        return self.k_ehr if modality == "ehr" else INPUT_DIMS[modality]

    def layers(self, modality):
        return {"ehr": self.ehr_layers, "cxr": self.cxr_layers, "notes": self.notes_layers}[modality]

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_json(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["modalities"] = tuple(obj["modalities"])
        return cls(**obj)


def positional_encoding(length, d_model):
    """Sinusoidal encoding: sin on even dims, cos on odd dims."""
    if length < 1:
        raise ValueError(f"positional encoding length must be >= 1, got {length}")
    pos = np.arange(length, dtype=float)[:, None]
    idx = np.arange(0, d_model, 2, dtype=float)
    angles = pos / np.power(10000.0, idx / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def _glorot(rng, fan_in, fan_out, shape=None):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape if shape is not None else (fan_in, fan_out))


def _param(params, name, arr, dtype):
    params[name] = Tensor(np.asarray(arr, dtype=dtype))
    params[name].requires_grad = True


def build_parameters(cfg):
    """Initialize the full learnable parameter dict for a config."""
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype()
    d = cfg.d_model
    params = {}
    for mod in cfg.modalities:
        in_dim = cfg.input_dim(mod)
        _param(params, f"{mod}.embed.w", _glorot(rng, in_dim, d), dt)
        _param(params, f"{mod}.embed.b", np.zeros(d), dt)
        for l in range(cfg.layers(mod)):
            p = f"{mod}.l{l}"
            if cfg.encoder == "transformer":
                for gate in ("q", "k", "v", "o"):
                    _param(params, f"{p}.attn.w{gate}", _glorot(rng, d, d), dt)
                    _param(params, f"{p}.attn.b{gate}", np.zeros(d), dt)
                _param(params, f"{p}.ln1.g", np.ones(d), dt)
                _param(params, f"{p}.ln1.b", np.zeros(d), dt)
                _param(params, f"{p}.ffn.w1", _glorot(rng, d, cfg.d_ff), dt)
                _param(params, f"{p}.ffn.b1", np.zeros(cfg.d_ff), dt)
                _param(params, f"{p}.ffn.w2", _glorot(rng, cfg.d_ff, d), dt)
                _param(params, f"{p}.ffn.b2", np.zeros(d), dt)
                _param(params, f"{p}.ln2.g", np.ones(d), dt)
                _param(params, f"{p}.ln2.b", np.zeros(d), dt)
            elif cfg.encoder == "gru":
                for gate in ("r", "z", "n"):
                    _param(params, f"{p}.w{gate}", _glorot(rng, d, d), dt)
                    _param(params, f"{p}.u{gate}", _glorot(rng, d, d), dt)
                    _param(params, f"{p}.b{gate}", np.zeros(d), dt)
            else:  # lstm
                for gate in ("i", "f", "g", "o"):
                    _param(params, f"{p}.w{gate}", _glorot(rng, d, d), dt)
                    _param(params, f"{p}.u{gate}", _glorot(rng, d, d), dt)
                    bias = np.ones(d) if gate == "f" else np.zeros(d)
                    _param(params, f"{p}.b{gate}", bias, dt)
        if cfg.encoder == "transformer":
            _param(params, f"{mod}.norm.g", np.ones(d), dt)
            _param(params, f"{mod}.norm.b", np.zeros(d), dt)
        _param(params, f"{mod}.pool.q", rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, 1)), dt)
    n_active = len(cfg.modalities)
    _param(params, "fusion.w1", _glorot(rng, n_active * d, d), dt)
    _param(params, "fusion.b1", np.zeros(d), dt)
    _param(params, "fusion.w2", _glorot(rng, d, 1), dt)
    _param(params, "fusion.b2", np.zeros(1), dt)
    return params


@dataclass
class Batch:
    """Collated padded inputs: per modality an (B, S, D) array and (B, S) mask."""

    arrays: dict
    masks: dict
    size: int


def collate(bundles, modalities, dtype=np.float64):
    arrays = {}
    masks = {}
    for mod in modalities:
        mats = []
        for b in bundles:
            mat = b.get(mod)
            if mat is None:
                raise DataError(f"bundle missing active modality '{mod}'")
            mats.append(np.asarray(mat, dtype=dtype))
        s_max = max(m.shape[0] for m in mats)
        width = mats[0].shape[1]
        arr = np.zeros((len(mats), s_max, width), dtype=dtype)
        mask = np.zeros((len(mats), s_max), dtype=bool)
        for i, m in enumerate(mats):
            arr[i, : m.shape[0]] = m
            mask[i, : m.shape[0]] = True
        arrays[mod] = arr
        masks[mod] = mask
    return Batch(arrays=arrays, masks=masks, size=len(bundles))


def _attention_block(h, key_bias, params, prefix, cfg, training, rng):
    d = cfg.d_model
    dh = d // cfg.n_heads
    x = T.layer_norm(h, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    q = T.add(T.matmul(x, params[f"{prefix}.attn.wq"]), params[f"{prefix}.attn.bq"])
    k = T.add(T.matmul(x, params[f"{prefix}.attn.wk"]), params[f"{prefix}.attn.bk"])
    v = T.add(T.matmul(x, params[f"{prefix}.attn.wv"]), params[f"{prefix}.attn.bv"])
    heads = []
    for i in range(cfg.n_heads):
        qi = T.slice_last(q, i * dh, (i + 1) * dh)
        ki = T.slice_last(k, i * dh, (i + 1) * dh)
        vi = T.slice_last(v, i * dh, (i + 1) * dh)
        scores = T.scale(T.matmul(qi, T.transpose_last2(ki)), 1.0 / math.sqrt(dh))
        scores = T.add_const(scores, key_bias)
        heads.append(T.matmul(T.softmax(scores, axis=-1), vi))
    att = T.concat(heads, axis=-1)
    att = T.add(T.matmul(att, params[f"{prefix}.attn.wo"]), params[f"{prefix}.attn.bo"])
    if training and cfg.dropout > 0:
        att = T.dropout(att, cfg.dropout, rng)
    h = T.add(h, att)

    x2 = T.layer_norm(h, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    f = T.gelu(T.add(T.matmul(x2, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    if training and cfg.dropout > 0:
        f = T.dropout(f, cfg.dropout, rng)
    f = T.add(T.matmul(f, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    return T.add(h, f)


def _gru_layer(h_seq, params, prefix, batch, d, dtype):
    steps = h_seq.shape[-2]
    state = Tensor(np.zeros((batch, d), dtype=dtype))
    outputs = []
    wr, wz, wn = params[f"{prefix}.wr"], params[f"{prefix}.wz"], params[f"{prefix}.wn"]
    ur, uz, un = params[f"{prefix}.ur"], params[f"{prefix}.uz"], params[f"{prefix}.un"]
    br, bz, bn = params[f"{prefix}.br"], params[f"{prefix}.bz"], params[f"{prefix}.bn"]
    for t in range(steps):
        x = T.reshape(T.slice_steps(h_seq, t, t + 1), (batch, d))
        r = T.sigmoid(T.add(T.add(T.matmul(x, wr), T.matmul(state, ur)), br))
        z = T.sigmoid(T.add(T.add(T.matmul(x, wz), T.matmul(state, uz)), bz))
        n = T.tanh(T.add(T.add(T.matmul(x, wn), T.mul(r, T.matmul(state, un))), bn))
        keep = T.mul(z, state)
        state = T.add(keep, T.mul(T.add_const(T.neg(z), 1.0), n))
        outputs.append(T.reshape(state, (batch, 1, d)))
    return T.concat(outputs, axis=-2)


def _lstm_layer(h_seq, params, prefix, batch, d, dtype):
    steps = h_seq.shape[-2]
    h = Tensor(np.zeros((batch, d), dtype=dtype))
    c = Tensor(np.zeros((batch, d), dtype=dtype))
    outputs = []
    for t in range(steps):
        x = T.reshape(T.slice_steps(h_seq, t, t + 1), (batch, d))
        gates = {}
        for gate in ("i", "f", "g", "o"):
            pre = T.add(
                T.add(T.matmul(x, params[f"{prefix}.w{gate}"]),
                      T.matmul(h, params[f"{prefix}.u{gate}"])),
                params[f"{prefix}.b{gate}"],
            )
            gates[gate] = T.tanh(pre) if gate == "g" else T.sigmoid(pre)
        c = T.add(T.mul(gates["f"], c), T.mul(gates["i"], gates["g"]))
        h = T.mul(gates["o"], T.tanh(c))
        outputs.append(T.reshape(h, (batch, 1, d)))
    return T.concat(outputs, axis=-2)


def encode_modality(x, mask, params, modality, cfg, training=False, rng=None):
    """Embed, add positional encoding, and run the modality's encoder stack.

    ``x`` is a (B, S, input_dim) constant Tensor or array; ``mask`` a (B, S)
    boolean array marking valid positions.  Padded positions are excluded
    from attention via a large negative score bias.
    """
    if isinstance(x, np.ndarray):
        x = Tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if x.data.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask[None, :]
    if not mask.any(axis=1).all():
        raise DataError(f"{modality}: a sequence has no unmasked positions")
    batch, steps = mask.shape
    d = cfg.d_model
    dt = cfg.np_dtype()

    h = T.add(T.matmul(x, params[f"{modality}.embed.w"]), params[f"{modality}.embed.b"])
    pe = positional_encoding(steps, d).astype(dt)
    h = T.add_const(h, pe[None, :, :])

    if cfg.encoder == "transformer":
        key_bias = np.where(mask, 0.0, T.MASK_NEG).astype(dt)[:, None, :]
        for l in range(cfg.layers(modality)):
            h = _attention_block(h, key_bias, params, f"{modality}.l{l}", cfg, training, rng)
        h = T.layer_norm(h, params[f"{modality}.norm.g"], params[f"{modality}.norm.b"])
    elif cfg.encoder == "gru":
        for l in range(cfg.layers(modality)):
            h = _gru_layer(h, params, f"{modality}.l{l}", batch, d, dt)
    else:
        for l in range(cfg.layers(modality)):
            h = _lstm_layer(h, params, f"{modality}.l{l}", batch, d, dt)
    return h


def attention_pool(h, mask, query):
    """Softmax-weighted pooling over sequence positions with a learned query."""
    mask = np.asarray(mask, dtype=bool)
    squeeze = h.data.ndim == 2
    if squeeze:
        h = T.reshape(h, (1,) + h.shape)
        mask = mask[None, :]
    if not mask.any(axis=1).all():
        raise DataError("attention_pool: a sequence has no unmasked positions")
    scores = T.matmul(h, query)                                    # (B, S, 1)
    bias = np.where(mask, 0.0, T.MASK_NEG).astype(h.data.dtype)[:, :, None]
    scores = T.add_const(scores, bias)
    weights = T.softmax(scores, axis=-2)
    pooled = T.matmul(T.transpose_last2(weights), h)               # (B, 1, D)
    out = T.reshape(pooled, (pooled.shape[0], pooled.shape[2]))
    return T.reshape(out, (out.shape[1],)) if squeeze else out


def fuse_and_predict(pooled, params):
    """Concatenate pooled modality vectors and emit one logit per row."""
    expected = params["fusion.w1"].shape[0]
    got = sum(p.shape[-1] for p in pooled)
    if got != expected:
        raise ConfigError(f"fusion expects concatenated width {expected}, got {got}")
    h = pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=-1)
    h = T.gelu(T.add(T.matmul(h, params["fusion.w1"]), params["fusion.b1"]))
    z = T.add(T.matmul(h, params["fusion.w2"]), params["fusion.b2"])
    return T.reshape(z, (z.shape[0],))


class ReadmissionModel:
    """All learnable parameters plus the forward pass."""

    def __init__(self, config, params=None):
        self.config = config
        self.params = params if params is not None else build_parameters(config)

    def parameters(self):
        return self.params

    def count_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def get_state(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def set_state(self, state):
        for name, p in self.params.items():
            p.data = state[name].copy()
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward_batch(self, batch, training=False, rng=None):
        """Logits for a collated batch; returns a (B,) Tensor."""
        pooled = []
        for mod in self.config.modalities:
            if mod not in batch.arrays:
                raise DataError(f"batch missing active modality '{mod}'")
            h = encode_modality(
                Tensor(batch.arrays[mod]), batch.masks[mod],
                self.params, mod, self.config, training=training, rng=rng,
            )
            pooled.append(attention_pool(h, batch.masks[mod], self.params[f"{mod}.pool.q"]))
        return fuse_and_predict(pooled, self.params)

    def forward(self, bundle):
        """Eval-mode logit for a single FeatureBundle."""
        batch = collate([bundle], self.config.modalities, dtype=self.config.np_dtype())
        return float(self.forward_batch(batch).data[0])


# ---------------------------------------------------------------------------
# serialization


def _encode_array(arr):
    arr = np.ascontiguousarray(arr)
    return {
        "shape": list(arr.shape),
        "dtype": arr.dtype.str,
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(obj):
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype=np.dtype(obj["dtype"]))
    expected = int(np.prod(obj["shape"])) if obj["shape"] else 1
    if arr.size != expected:
        raise DataError(f"array payload size {arr.size} != shape product {expected}")
    return arr.reshape(obj["shape"]).copy()


def save_model(path, model, selection=None, tfidf=None, fingerprint=None):
    """Write a versioned JSON container: config, pipeline artifacts, parameters.

    Round-tripping through load_model is bit-exact (raw little-endian bytes,
    base64-encoded).
    """
    obj = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_json(),
        "fingerprint": fingerprint,
        "selection": selection.to_json() if selection is not None else None,
        "tfidf": tfidf.to_json() if tfidf is not None else None,
        "params": {name: _encode_array(p.data) for name, p in model.params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_model(path):
    """Load a saved model; returns (model, selection, tfidf, fingerprint)."""
    from .features import FeatureSelection, TfidfModel

    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not a valid model file: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} container")
    if obj.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {obj.get('version')}")
    try:
        config = ModelConfig.from_json(obj["config"])
        params = {}
        for name, payload in obj["params"].items():
            params[name] = Tensor(_decode_array(payload))
            params[name].requires_grad = True
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: corrupt model payload: {exc}") from exc
    model = ReadmissionModel(config, params=params)
    expected = set(build_parameters(config).keys())
    if set(params.keys()) != expected:
        raise DataError(f"{path}: parameter names do not match the config")
    selection = FeatureSelection.from_json(obj["selection"]) if obj.get("selection") else None
    tfidf = TfidfModel.from_json(obj["tfidf"]) if obj.get("tfidf") else None
    return model, selection, tfidf, obj.get("fingerprint")
