"""Architecture specs, shape/parameter inference and the four scaling transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Tuple

from .errors import InvalidFactorError, ParseError, ShapeError
from .layers import DISPLAY_NAMES, KINDS, LayerSpec

NUM_CLASSES = 2
BASELINE_INPUT = (108, 108, 3)
BASELINE_FILTERS = (16, 32, 64, 128)
POOL_DROPOUT = 0.25
DENSE_DROPOUT = 0.5


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ShapeError(f"input shape must be three positive dimensions, got {self.input_shape}")
        if not self.layers:
            raise ValueError("architecture has no layers")
        last = self.layers[-1]
        if last.kind != "dense" or last.units != NUM_CLASSES:
            raise ValueError(f"last layer must be dense with {NUM_CLASSES} units")


@dataclass(frozen=True)
class ScaleFactors:
    width: float = 1.0
    depth: int = 1
    resolution: float = 1.0


class LayerSummaryRow(NamedTuple):
    kind: str
    output_shape: Tuple[int, ...]
    params: int
    non_trainable: int = 0

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    @property
    def shape_text(self) -> str:
        return "(None," + ",".join(str(d) for d in self.output_shape) + ")"


def baseline_arch() -> ArchitectureSpec:
    """Four [conv 3x3 + max-pool 2 + dropout] blocks of 16/32/64/128 filters, then the head."""
    layers: List[LayerSpec] = []
    for f in BASELINE_FILTERS:
        layers += [LayerSpec.conv(f, 3), LayerSpec.maxpool(2), LayerSpec.dropout(POOL_DROPOUT)]
    layers += [
        LayerSpec.flatten(),
        LayerSpec.dense(256, "relu"),
        LayerSpec.dropout(DENSE_DROPOUT),
        LayerSpec.dense(NUM_CLASSES, "softmax"),
    ]
    return ArchitectureSpec(BASELINE_INPUT, tuple(layers), "baseline")


def infer_shapes(arch: ArchitectureSpec) -> List[LayerSummaryRow]:
    rows = []
    shape = arch.input_shape
    for i, spec in enumerate(arch.layers):
        try:
            out = spec.output_shape(shape)
            trainable, frozen = spec.param_counts(shape)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({spec.kind}): {exc} (input {shape})") from None
        if any(d < 1 for d in out):
            raise ShapeError(f"layer {i} ({spec.kind}): output {out} is empty (input {shape})")
        rows.append(LayerSummaryRow(spec.kind, out, trainable, frozen))
        shape = out
    return rows


def total_params(arch: ArchitectureSpec) -> int:
    return sum(r.params for r in infer_shapes(arch))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_width(arch: ArchitectureSpec, w: float) -> ArchitectureSpec:
    """Multiply conv filters and hidden dense units by ``w`` (the output layer is kept)."""
    if not w >= 1:
        raise InvalidFactorError(f"width factor must be >= 1, got {w}")
    last = len(arch.layers) - 1
    layers = []
    for i, spec in enumerate(arch.layers):
        if spec.kind == "conv2d":
            spec = replace(spec, filters=max(1, _round_half_up(spec.filters * w)))
        elif spec.kind == "dense" and i != last:
            spec = replace(spec, units=max(1, _round_half_up(spec.units * w)))
        layers.append(spec)
    out = replace(arch, layers=tuple(layers))
    infer_shapes(out)
    return out


def scale_depth(arch: ArchitectureSpec, d: int) -> ArchitectureSpec:
    """Repeat each conv layer ``d`` times in place; replicas keep its filter count."""
    if int(d) != d or d < 1:
        raise InvalidFactorError(f"depth factor must be a positive integer, got {d}")
    layers = []
    for spec in arch.layers:
        layers.extend([spec] * int(d) if spec.kind == "conv2d" else [spec])
    out = replace(arch, layers=tuple(layers))
    infer_shapes(out)
    return out


def _round_to_even(x: float) -> int:
    return 2 * _round_half_up(x / 2)


def scale_resolution(arch: ArchitectureSpec, r: float) -> ArchitectureSpec:
    """Multiply the input height and width by ``r``, rounded to the nearest even integer.

    Factors below 1 shrink the input; a chain that collapses raises ShapeError.
    """
    if not r > 0:
        raise InvalidFactorError(f"resolution factor must be positive, got {r}")
    h, w, c = arch.input_shape
    nh, nw = _round_to_even(h * r), _round_to_even(w * r)
    if nh < 1 or nw < 1:
        raise ShapeError(f"resolution factor {r} shrinks the {h}x{w} input to nothing")
    out = replace(arch, input_shape=(nh, nw, c))
    infer_shapes(out)
    return out


def with_input_size(arch: ArchitectureSpec, height: int, width: Optional[int] = None) -> ArchitectureSpec:
    out = replace(arch, input_shape=(height, width or height, arch.input_shape[2]))
    infer_shapes(out)
    return out


def scale_compound(arch: ArchitectureSpec, f: ScaleFactors) -> ArchitectureSpec:
    return scale_resolution(scale_depth(scale_width(arch, f.width), f.depth), f.resolution)


PRESET_FACTORS = {
    "baseline": ScaleFactors(1.0, 1, 1.0),
    "width": ScaleFactors(2.0, 1, 1.0),
    "depth": ScaleFactors(1.0, 3, 1.0),
    "resolution": ScaleFactors(1.0, 1, 1.25),
    # the published compound table keeps baseline width and resolution
    "compound": ScaleFactors(1.0, 3, 1.0),
}


def preset(name: str) -> ArchitectureSpec:
    """One of the five named experiment arms built from :func:`baseline_arch`."""
    try:
        factors = PRESET_FACTORS[name]
    except KeyError:
        raise KeyError(f"unknown architecture preset {name!r}; choose from {sorted(PRESET_FACTORS)}") from None
    return replace(scale_compound(baseline_arch(), factors), name=name)


def format_summary(arch: ArchitectureSpec) -> str:
    """Fixed-width "Layer / Output Shape / Parameters" table with a totals footer."""
    rows = infer_shapes(arch)
    lines = [f"{'Layer':<20}{'Output Shape':<24}{'Parameters':>12}", "-" * 56]
    for row in rows:
        lines.append(f"{row.display_name:<20}{row.shape_text:<24}{row.params:>12}")
    lines.append("-" * 56)
    lines.append(f"Total params: {sum(r.params for r in rows):,}")
    frozen = sum(r.non_trainable for r in rows)
    if frozen:
        lines.append(f"Non-trainable params: {frozen:,}")
    return "\n".join(lines) + "\n"


# --- architecture file -------------------------------------------------------
#
#   name: baseline
#   input: [108,108,3]
#   layer: type=conv2d filters=16 kernel=3 activation=relu
#   layer: type=maxpool2d pool=2
#   ...

_INT_KEYS = ("filters", "kernel", "pool", "units")


def arch_to_file(arch: ArchitectureSpec) -> str:
    lines = [
        f"name: {arch.name}",
        "input: [" + ",".join(str(d) for d in arch.input_shape) + "]",
    ]
    for spec in arch.layers:
        parts = [f"type={spec.kind}"]
        for key, value in spec.fields().items():
            parts.append(f"{key}={value!r}" if key == "rate" else f"{key}={value}")
        lines.append("layer: " + " ".join(parts))
    return "\n".join(lines) + "\n"


def _parse_positive_int(text: str, lineno: int, key: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", lineno, key) from None
    if value < 1:
        raise ParseError(f"value must be positive, got {value}", lineno, key)
    return value


def _parse_layer(body: str, lineno: int) -> LayerSpec:
    fields = {}
    for token in body.split():
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise ParseError(f"malformed token {token!r} (expected key=value)", lineno)
        if key in fields:
            raise ParseError("duplicate key", lineno, key)
        fields[key] = value
    kind = fields.pop("type", None)
    if kind is None:
        raise ParseError("layer is missing its type", lineno, "type")
    if kind not in KINDS:
        raise ParseError(f"unknown layer kind {kind!r}", lineno, "type")
    kwargs = {}
    for key, value in fields.items():
        if key in _INT_KEYS:
            kwargs[key] = _parse_positive_int(value, lineno, key)
        elif key == "rate":
            try:
                kwargs[key] = float(value)
            except ValueError:
                raise ParseError(f"expected a number, got {value!r}", lineno, key) from None
        elif key == "activation":
            kwargs[key] = value
        else:
            raise ParseError(f"unknown key for {kind} layer", lineno, key)
    try:
        return LayerSpec(kind, **kwargs)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def arch_from_file(text: str) -> ArchitectureSpec:
    name = "custom"
    input_shape = None
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ParseError(f"expected 'key: value', got {line!r}", lineno)
        key, value = key.strip(), value.strip()
        if key == "name":
            name = value
        elif key == "input":
            if not (value.startswith("[") and value.endswith("]")):
                raise ParseError(f"expected [H,W,C], got {value!r}", lineno, "input")
            dims = [d.strip() for d in value[1:-1].split(",")]
            if len(dims) != 3:
                raise ParseError(f"expected three dimensions, got {len(dims)}", lineno, "input")
            input_shape = tuple(_parse_positive_int(d, lineno, "input") for d in dims)
        elif key == "layer":
            layers.append(_parse_layer(value, lineno))
        else:
            raise ParseError("unknown key", lineno, key)
    if input_shape is None:
        raise ParseError("missing input shape", field="input")
    if not layers:
        raise ParseError("no layers defined", field="layer")
    try:
        return ArchitectureSpec(input_shape, tuple(layers), name)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
