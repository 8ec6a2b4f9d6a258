"""Posit-quantized training loop.

Quantization sites, per parameterized layer (conv, batch-norm, dense):

* forward: the layer input (Activation) and every parameter (Weight) are
  quantized before the layer computes; dot products accumulate in float64;
* backward: the error arriving at the layer output (Error) is quantized
  before it is used, and each parameter gradient (WeightGradient) is
  quantized before it reaches the optimizer;
* update: ``W <- P(W - lr * v)`` with the momentum buffer ``v`` kept in float64.

Weight and Activation scale factors are fixed for an epoch and recomputed
at each epoch boundary once warm-up is over; Error and WeightGradient scale
factors are computed per batch from the tensor being quantized.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import os
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .idx import load_idx_dataset
from .nn import Layer, LayerClass, Model, ShapeError, softmax_cross_entropy
from .posit import make_config
from .quantizer import (
    DEFAULT_SIGMA,
    QuantSpec,
    ScaleFactor,
    auto_quantize,
    quantize_tensor,
    scale_factor,
)

log = logging.getLogger(__name__)

THREADS_ENV = "POSIT_TRAIN_THREADS"


class TensorClass(enum.Enum):
    WEIGHT = "weight"
    ACTIVATION = "activation"
    WEIGHT_GRADIENT = "weight_gradient"
    ERROR = "error"


QUANTIZED_LAYERS = (LayerClass.CONV, LayerClass.BN, LayerClass.DENSE)
IDENTITY = QuantSpec.identity()


class PlanError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


class QuantMap:
    """(LayerClass, TensorClass) -> QuantSpec; unlisted sites pass through."""

    def __init__(self, specs: dict[tuple[LayerClass, TensorClass], QuantSpec] | None = None):
        self.specs = dict(specs or {})

    def spec(self, layer_class: LayerClass, tensor_class: TensorClass) -> QuantSpec:
        return self.specs.get((layer_class, tensor_class), IDENTITY)

    def passthrough(self) -> "QuantMap":
        return QuantMap({key: spec.as_passthrough() for key, spec in self.specs.items()})

    @property
    def is_passthrough(self) -> bool:
        return all(spec.passthrough for spec in self.specs.values())

    @classmethod
    def fp32(cls) -> "QuantMap":
        return cls()

    @classmethod
    def policy(cls, bits: dict[LayerClass, int] | int = 16, scaling: bool = True,
               sigma: int = DEFAULT_SIGMA) -> "QuantMap":
        """es = 1 for weights and activations, es = 2 for gradients and errors."""
        if isinstance(bits, int):
            bits = {lc: bits for lc in QUANTIZED_LAYERS}
        specs = {}
        for lc, n in bits.items():
            for tc in TensorClass:
                es = 1 if tc in (TensorClass.WEIGHT, TensorClass.ACTIVATION) else 2
                specs[(lc, tc)] = QuantSpec.posit(n, es, scaling, sigma)
        return cls(specs)

    def to_dict(self) -> dict:
        out: dict = {}
        for (lc, tc), spec in sorted(self.specs.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            entry = {"passthrough": True} if spec.passthrough and spec.config is None else {
                "n": spec.config.n, "es": spec.config.es,
                "scaling": spec.scaling_enabled, "sigma": spec.sigma,
            }
            if spec.passthrough and spec.config is not None:
                entry["passthrough"] = True
            out.setdefault(lc.value, {})[tc.value] = entry
        return out


PRESETS = {
    "fp32": lambda scaling, sigma: QuantMap.fp32(),
    "posit16": lambda scaling, sigma: QuantMap.policy(16, scaling, sigma),
    "posit8": lambda scaling, sigma: QuantMap.policy(8, scaling, sigma),
    # 8-bit conv/dense with 16-bit batch-norm
    "posit8_bn16": lambda scaling, sigma: QuantMap.policy(
        {LayerClass.CONV: 8, LayerClass.DENSE: 8, LayerClass.BN: 16}, scaling, sigma),
}


def parse_quant_map(value, scaling: bool = True, sigma: int = DEFAULT_SIGMA) -> QuantMap:
    """Build a QuantMap from a preset name or a ``{layer: {tensor: {n, es, ...}}}`` mapping."""
    if isinstance(value, str):
        if value not in PRESETS:
            raise PlanError(f"unknown quant preset {value!r}; choose from {sorted(PRESETS)}")
        return PRESETS[value](scaling, sigma)
    if not isinstance(value, dict):
        raise PlanError("quant must be a preset name or a mapping")
    specs = {}
    for lname, entries in value.items():
        try:
            lc = LayerClass(lname)
        except ValueError:
            raise PlanError(f"unknown layer class {lname!r}") from None
        for tname, entry in entries.items():
            try:
                tc = TensorClass(tname)
            except ValueError:
                raise PlanError(f"unknown tensor class {tname!r}") from None
            if entry.get("passthrough") and "n" not in entry:
                specs[(lc, tc)] = IDENTITY
                continue
            try:
                config = make_config(entry["n"], entry["es"])
            except KeyError as exc:
                raise PlanError(f"{lname}.{tname}: missing {exc.args[0]!r}") from None
            specs[(lc, tc)] = QuantSpec(config, entry.get("scaling", scaling), entry.get("sigma", sigma),
                                        bool(entry.get("passthrough", False)))
    return QuantMap(specs)


@dataclass
class LRSchedule:
    initial: float = 0.05
    decay_epochs: tuple[int, ...] = ()
    factor: float = 0.1

    def at(self, epoch: int) -> float:
        lr = self.initial
        for e in self.decay_epochs:
            if epoch >= e:
                lr *= self.factor
        return lr


@dataclass
class TrainPlan:
    topology: list[dict]
    train_images: str
    train_labels: str
    val_images: str
    val_labels: str
    total_epochs: int = 5
    warmup_epochs: int = 1
    batch_size: int = 32
    lr: LRSchedule = field(default_factory=LRSchedule)
    momentum: float = 0.9
    quant: QuantMap = field(default_factory=QuantMap.fp32)
    sigma: int = DEFAULT_SIGMA
    rng_seed: int = 0
    standardize: bool = False
    master_weights: bool = False

    def __post_init__(self):
        if self.total_epochs < 0:
            raise PlanError("total_epochs must be nonnegative")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise PlanError("need 0 <= warmup_epochs <= total_epochs")
        if self.batch_size <= 0:
            raise PlanError("batch_size must be positive")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "TrainPlan":
        base = Path(base_dir)
        try:
            data = doc["dataset"]
            paths = {key: str(base / data[key]) for key in ("train_images", "train_labels", "val_images", "val_labels")}
            lr = doc.get("lr", {})
            sigma = int(doc.get("sigma", DEFAULT_SIGMA))
            quant = parse_quant_map(doc.get("quant", "fp32"), bool(doc.get("scaling", True)), sigma)
            return cls(
                topology=list(doc["model"]),
                total_epochs=int(doc.get("total_epochs", 5)),
                warmup_epochs=int(doc.get("warmup_epochs", 1)),
                batch_size=int(doc.get("batch_size", 32)),
                lr=LRSchedule(float(lr.get("initial", 0.05)), tuple(lr.get("decay_epochs", ())),
                              float(lr.get("factor", 0.1))),
                momentum=float(doc.get("momentum", 0.9)),
                quant=quant,
                sigma=sigma,
                rng_seed=int(doc.get("rng_seed", 0)),
                standardize=bool(data.get("standardize", False)),
                master_weights=bool(doc.get("master_weights", False)),
                **paths,
            )
        except KeyError as exc:
            raise PlanError(f"plan is missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "TrainPlan":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), path.parent)

    def replace(self, **changes) -> "TrainPlan":
        fields = {**self.__dict__, **changes}
        return TrainPlan(**fields)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def batches(self, batch_size: int, order=None):
        idx = np.arange(len(self)) if order is None else order
        for start in range(0, len(idx), batch_size):
            sel = idx[start:start + batch_size]
            yield self.x[sel], self.y[sel]


def load_plan_data(plan: TrainPlan) -> tuple[Dataset, Dataset]:
    train = Dataset(*load_idx_dataset(plan.train_images, plan.train_labels, plan.standardize))
    val = Dataset(*load_idx_dataset(plan.val_images, plan.val_labels, plan.standardize))
    return train, val


# -- scale factors ---------------------------------------------------------------

ScaleMap = dict[str, dict[str, ScaleFactor]]
"""layer name -> {param name or "activation": ScaleFactor}"""


def _spec(qmap: QuantMap, layer: Layer, tc: TensorClass) -> QuantSpec:
    return qmap.spec(layer.layer_class, tc)


def _fixed_sf(spec: QuantSpec, scales: ScaleMap | None, layer: Layer, key: str, tensor) -> ScaleFactor | None:
    if spec.passthrough or not spec.scaling_enabled:
        return None
    if scales is not None and key in scales.get(layer.name, {}):
        return scales[layer.name][key]
    sf = scale_factor(tensor, spec.sigma)
    if scales is not None:
        scales.setdefault(layer.name, {})[key] = sf
    return sf


def quantize_weights(model: Model, qmap: QuantMap, scales: ScaleMap | None) -> dict[str, dict[str, np.ndarray]]:
    out = {}
    for layer in model.param_layers:
        spec = _spec(qmap, layer, TensorClass.WEIGHT)
        params = model.layer_params(layer)
        out[layer.name] = {
            key: quantize_tensor(value, spec, _fixed_sf(spec, scales, layer, key, value))
            for key, value in params.items()
        }
    return out


@dataclass
class ForwardCache:
    caches: list
    weights: dict[str, dict[str, np.ndarray]]
    train: bool


def forward(model: Model, x: np.ndarray, qmap: QuantMap, scales: ScaleMap | None = None,
            train: bool = True, update_stats: bool = True) -> tuple[np.ndarray, ForwardCache]:
    """Run the network with Weight/Activation quantization at every parameterized layer.

    ``scales`` supplies fixed scale factors; missing entries are computed from
    the tensor at hand and stored back into it (this is how calibration works).
    Passing ``None`` computes them per call without storing.
    """
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match model input {model.input_shape}")
    weights = quantize_weights(model, qmap, scales)
    caches = []
    h = x
    for layer in model.layers:
        if layer.param_names:
            spec = _spec(qmap, layer, TensorClass.ACTIVATION)
            h = quantize_tensor(h, spec, _fixed_sf(spec, scales, layer, "activation", h))
            params = weights[layer.name]
        else:
            params = {}
        h, cache = layer.forward(h, params, model.buffers[layer.name], train, update_stats)
        caches.append(cache)
    return h, ForwardCache(caches, weights, train)


def backward(model: Model, cache: ForwardCache | None, dlogits: np.ndarray,
             qmap: QuantMap) -> dict[str, np.ndarray]:
    """Backpropagate ``dlogits``; returns quantized parameter gradients keyed like ``model.params``."""
    if cache is None:
        raise RuntimeError("backward needs the cache from a forward pass")
    grads = {}
    dy = dlogits
    for layer, lcache in zip(reversed(model.layers), reversed(cache.caches)):
        if layer.param_names:
            dy, _ = auto_quantize(dy, _spec(qmap, layer, TensorClass.ERROR))
            dx, pgrads = layer.backward(dy, lcache, cache.weights[layer.name])
            gspec = _spec(qmap, layer, TensorClass.WEIGHT_GRADIENT)
            for key, g in pgrads.items():
                grads[f"{layer.name}.{key}"] = auto_quantize(g, gspec)[0]
        else:
            dx, _ = layer.backward(dy, lcache, {})
        dy = dx
    return grads


class Optimizer:
    """SGD with momentum; buffers (and the optional master copy) stay float64."""

    def __init__(self, model: Model, momentum: float, master_weights: bool = False):
        self.momentum = momentum
        self.velocity = {key: np.zeros_like(value) for key, value in model.params.items()}
        self.master = {key: value.copy() for key, value in model.params.items()} if master_weights else None


def update_weights(model: Model, grads: dict[str, np.ndarray], lr: float, optimizer: Optimizer,
                   qmap: QuantMap, scales: ScaleMap | None = None) -> Model:
    """``v <- m v + g``, ``W <- P(W - lr v)`` with each layer's Weight spec."""
    for layer in model.param_layers:
        spec = _spec(qmap, layer, TensorClass.WEIGHT)
        for key in layer.param_names:
            full = f"{layer.name}.{key}"
            v = optimizer.velocity[full]
            v *= optimizer.momentum
            v += grads[full]
            if optimizer.master is not None:
                optimizer.master[full] -= lr * v
                target = optimizer.master[full]
            else:
                target = model.params[full] - lr * v
            sf = _fixed_sf(spec, scales, layer, key, target)
            model.params[full] = np.array(quantize_tensor(target, spec, sf), dtype=np.float64)
    return model


def compute_layer_scale_factors(model: Model, calibration_x: np.ndarray, qmap: QuantMap) -> ScaleMap:
    """Weight factors from the current parameters, Activation factors from one calibration batch.

    Activation factors are found layer by layer: each layer's input is
    measured after the upstream layers have been quantized with their own
    new factors. BN running statistics are left untouched.
    """
    scales: ScaleMap = {}
    for layer in model.param_layers:
        spec = _spec(qmap, layer, TensorClass.WEIGHT)
        for key, value in model.layer_params(layer).items():
            _fixed_sf(spec, scales, layer, key, value)
    forward(model, calibration_x, qmap, scales, train=True, update_stats=False)
    return scales


def requantize_params(model: Model, qmap: QuantMap, scales: ScaleMap) -> None:
    for name, params in quantize_weights(model, qmap, scales).items():
        for key, value in params.items():
            model.params[f"{name}.{key}"] = np.array(value, dtype=np.float64)


# -- evaluation and the training loop ---------------------------------------------

def predict(model: Model, x: np.ndarray, qmap: QuantMap, scales: ScaleMap | None = None,
            batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(x), batch_size):
        logits, _ = forward(model, x[start:start + batch_size], qmap, scales, train=False)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out)


def evaluate(model: Model, dataset: Dataset, qmap: QuantMap, scales: ScaleMap | None = None,
             batch_size: int = 256) -> float:
    """Top-1 accuracy using only the Weight and Activation specs.

    Without stored ``scales``, activation factors are calibrated on the
    first ``batch_size`` examples.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    infer = QuantMap({key: spec for key, spec in qmap.specs.items()
                      if key[1] in (TensorClass.WEIGHT, TensorClass.ACTIVATION)})
    if scales is None and not infer.is_passthrough:
        scales = {}
        forward(model, dataset.x[:batch_size], infer, scales, train=False)
    pred = predict(model, dataset.x, infer, scales, batch_size)
    return float(np.mean(pred == dataset.y))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_acc: float


@dataclass
class ScaleRecord:
    epoch: int
    layer: str
    tensor_class: str
    center: int
    sf: float


@dataclass
class TrainMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    scale_log: list[ScaleRecord] = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_acc"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.loss), repr(r.val_acc)])
        return buf.getvalue()

    def scale_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "layer", "class", "center", "sf"])
        for r in self.scale_log:
            w.writerow([r.epoch, r.layer, r.tensor_class, r.center, repr(r.sf)])
        return buf.getvalue()


@dataclass
class TrainResult:
    model: Model
    metrics: TrainMetrics
    scales: ScaleMap | None


def _thread_limit():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(int(os.environ.get(THREADS_ENV, "1")))


def _log_scales(metrics: TrainMetrics, epoch: int, scales: ScaleMap):
    for layer, entries in scales.items():
        for key, sf in entries.items():
            if key == "activation":
                label, cls = layer, TensorClass.ACTIVATION.value
            else:
                label, cls = f"{layer}.{key}", TensorClass.WEIGHT.value
            metrics.scale_log.append(ScaleRecord(epoch, label, cls, sf.center, sf.value))


def _check_finite(model: Model, epoch: int, step: int):
    for key, value in model.params.items():
        if not np.all(np.isfinite(value)):
            raise TrainingAborted(f"NaR in {key} at epoch {epoch}, step {step}")


def run_training(plan: TrainPlan, data: tuple[Dataset, Dataset] | None = None) -> TrainResult:
    """Train per ``plan``; deterministic given ``plan.rng_seed``."""
    train_set, val_set = data if data is not None else load_plan_data(plan)
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    with _thread_limit():
        model = Model.from_topology(plan.topology, train_set.x.shape[1:], plan.rng_seed)
        optimizer = Optimizer(model, plan.momentum, plan.master_weights)
        order_rng = np.random.default_rng([plan.rng_seed, 1])
        calib_x = train_set.x[:plan.batch_size]
        metrics = TrainMetrics()
        scales: ScaleMap | None = None
        step = 0
        for epoch in range(plan.total_epochs):
            active = epoch >= plan.warmup_epochs
            qmap = plan.quant if active else plan.quant.passthrough()
            if active and not plan.quant.is_passthrough:
                scales = compute_layer_scale_factors(model, calib_x, qmap)
                _log_scales(metrics, epoch, scales)
                if optimizer.master is None:
                    requantize_params(model, qmap, scales)
            lr = plan.lr.at(epoch)
            order = order_rng.permutation(len(train_set))
            total_loss = 0.0
            for xb, yb in train_set.batches(plan.batch_size, order):
                logits, cache = forward(model, xb, qmap, scales)
                loss, dlogits = softmax_cross_entropy(logits, yb)
                grads = backward(model, cache, dlogits, qmap)
                update_weights(model, grads, lr, optimizer, qmap, scales)
                _check_finite(model, epoch, step)
                total_loss += loss * len(yb)
                step += 1
            val_acc = evaluate(model, val_set, qmap, scales)
            metrics.epochs.append(EpochRecord(epoch, total_loss / len(train_set), val_acc))
            log.info("epoch %d lr %.4g loss %.4f val_acc %.4f", epoch, lr, metrics.epochs[-1].loss, val_acc)
    return TrainResult(model, metrics, scales)


def train(plan: TrainPlan, data: tuple[Dataset, Dataset] | None = None) -> TrainMetrics:
    return run_training(plan, data).metrics
