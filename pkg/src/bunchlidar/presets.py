"""Run configuration documents: schema, validation, presets, and overrides.

A run configuration is a single JSON document with four sections (scenario,
correlation, fit, output). Every physical value carries its unit in the key
name. Unknown keys are rejected. Presets are version-controlled documents
shipped with the package, so reproducing a canned experiment is one command.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources

from .photonsim import DetectorSpec, ScenarioConfig
from .quantities import Medium, SourceSpec

PRESET_FILES = {
    "short-range": "short_range.json",
    "long-range-1km": "long_range_1km.json",
    "long-range-2km": "long_range_2km.json",
    "ideal-thermal": "ideal_thermal.json",
}


class ConfigError(ValueError):
    """Malformed run configuration document."""


_SCENARIO_KEYS = {
    "wavelength_nm",
    "coherence_time_ns",
    "linewidth_hz",
    "source_rate_hz",
    "distance_m",
    "refractive_index",
    "split_probe",
    "split_ref",
    "probe_round_trip_transmission",
    "ambient_rate_probe_hz",
    "ambient_rate_ref_hz",
    "duration_s",
    "seed",
    "field_step_ps",
    "intensity_cap",
    "detectors",
}
_DETECTOR_KEYS = {
    "efficiency",
    "jitter_fwhm_ps",
    "dead_time_ps",
    "dark_rate_hz",
    "saturation_rate_hz",
}
_CORRELATION_KEYS = {"bin_width_ps", "window_ps", "chunk_ticks"}
_FIT_KEYS = {"max_iterations", "rel_tol"}
_OUTPUT_KEYS = {"tags_path", "truth_path", "histogram_path", "fit_path", "resolution_ps"}
_SECTION_KEYS = {
    "scenario": _SCENARIO_KEYS,
    "correlation": _CORRELATION_KEYS,
    "fit": _FIT_KEYS,
    "output": _OUTPUT_KEYS,
}


@dataclass(frozen=True)
class CorrelationSettings:
    bin_width_ps: int
    window_ps: tuple[int, int]
    chunk_ticks: int | None = None


@dataclass(frozen=True)
class FitSettings:
    max_iterations: int = 200
    rel_tol: float = 1e-10


@dataclass(frozen=True)
class OutputSettings:
    tags_path: str | None = None
    truth_path: str | None = None
    histogram_path: str | None = None
    fit_path: str | None = None
    resolution_ps: int = 1


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def validate_document(doc: dict) -> None:
    """Reject unknown sections/keys without building any objects."""
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    _check_keys("top-level", doc, set(_SECTION_KEYS))
    for section, keys in _SECTION_KEYS.items():
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"section {section!r} must be an object")
            _check_keys(section, doc[section], keys)
    for i, det in enumerate(doc.get("scenario", {}).get("detectors", [])):
        if not isinstance(det, dict):
            raise ConfigError(f"detector {i} must be an object")
        _check_keys(f"detectors[{i}]", det, _DETECTOR_KEYS)


def scenario_from_document(doc: dict) -> ScenarioConfig:
    sc = doc.get("scenario")
    if not sc:
        raise ConfigError("configuration has no scenario section")
    for key in ("wavelength_nm", "source_rate_hz", "duration_s", "seed"):
        if key not in sc:
            raise ConfigError(f"scenario is missing required key {key!r}")
    if "coherence_time_ns" not in sc and "linewidth_hz" not in sc:
        raise ConfigError("scenario needs coherence_time_ns or linewidth_hz")
    source = SourceSpec(
        wavelength_m=float(sc["wavelength_nm"]) * 1e-9,
        photon_rate_hz=float(sc["source_rate_hz"]),
        coherence_time_s=float(sc.get("coherence_time_ns", 0.0)) * 1e-9,
        linewidth_hz=float(sc.get("linewidth_hz", 0.0)),
    )
    detectors = sc.get("detectors", [{}, {}])
    if len(detectors) != 2:
        raise ConfigError(f"scenario needs exactly 2 detectors, got {len(detectors)}")
    defaults = DetectorSpec()
    specs = [
        DetectorSpec(
            efficiency=float(det.get("efficiency", defaults.efficiency)),
            jitter_fwhm_s=float(det.get("jitter_fwhm_ps", defaults.jitter_fwhm_s * 1e12)) * 1e-12,
            dead_time_s=float(det.get("dead_time_ps", defaults.dead_time_s * 1e12)) * 1e-12,
            dark_rate_hz=float(det.get("dark_rate_hz", defaults.dark_rate_hz)),
            saturation_rate_hz=float(det.get("saturation_rate_hz", defaults.saturation_rate_hz)),
        )
        for det in detectors
    ]
    field_step_ps = sc.get("field_step_ps")
    return ScenarioConfig(
        source=source,
        distance_m=float(sc.get("distance_m", 0.0)),
        duration_s=float(sc["duration_s"]),
        seed=int(sc["seed"]),
        medium=Medium(float(sc.get("refractive_index", 1.0))),
        split_probe=float(sc.get("split_probe", 0.5)),
        split_ref=float(sc.get("split_ref", 0.5)),
        probe_round_trip_transmission=float(sc.get("probe_round_trip_transmission", 1.0)),
        ambient_rate_probe_hz=float(sc.get("ambient_rate_probe_hz", 0.0)),
        ambient_rate_ref_hz=float(sc.get("ambient_rate_ref_hz", 0.0)),
        detector_ref=specs[0],
        detector_probe=specs[1],
        field_step_s=None if field_step_ps is None else float(field_step_ps) * 1e-12,
        intensity_cap=float(sc.get("intensity_cap", 12.0)),
    )


def correlation_from_document(doc: dict) -> CorrelationSettings:
    co = doc.get("correlation")
    if not co:
        raise ConfigError("configuration has no correlation section")
    for key in ("bin_width_ps", "window_ps"):
        if key not in co:
            raise ConfigError(f"correlation is missing required key {key!r}")
    window = co["window_ps"]
    if not (isinstance(window, (list, tuple)) and len(window) == 2):
        raise ConfigError(f"window_ps must be [min, max], got {window!r}")
    chunk = co.get("chunk_ticks")
    return CorrelationSettings(
        bin_width_ps=int(co["bin_width_ps"]),
        window_ps=(int(window[0]), int(window[1])),
        chunk_ticks=None if chunk is None else int(chunk),
    )


def fit_from_document(doc: dict) -> FitSettings:
    fi = doc.get("fit", {})
    return FitSettings(
        max_iterations=int(fi.get("max_iterations", 200)),
        rel_tol=float(fi.get("rel_tol", 1e-10)),
    )


def output_from_document(doc: dict) -> OutputSettings:
    out = doc.get("output", {})
    return OutputSettings(
        tags_path=out.get("tags_path"),
        truth_path=out.get("truth_path"),
        histogram_path=out.get("histogram_path"),
        fit_path=out.get("fit_path"),
        resolution_ps=int(out.get("resolution_ps", 1)),
    )


def load_preset(name: str) -> dict:
    """Load a packaged preset document by name."""
    if name not in PRESET_FILES:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESET_FILES)}")
    path = resources.files("bunchlidar").joinpath("presets_data", PRESET_FILES[name])
    doc = json.loads(path.read_text())
    validate_document(doc)
    return doc


def load_config_file(path) -> dict:
    with open(path, "r") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    validate_document(doc)
    return doc


def merge_documents(base: dict, override: dict) -> dict:
    """Deep merge: override wins; nested objects merge key-wise, lists replace."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_documents(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_dotted_override(doc: dict, assignment: str) -> None:
    """Apply one ``section.key[.index...]=value`` override in place.

    Values parse as JSON, falling back to a bare string; list elements are
    addressed by integer path segments (e.g. scenario.detectors.0.efficiency).
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form path=value")
    path, _, raw = assignment.partition("=")
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigError(f"override path {path!r} has empty segments")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for i, key in enumerate(keys[:-1]):
        if isinstance(node, list):
            node = node[_list_index(node, key, path)]
        elif isinstance(node, dict):
            node = node.setdefault(key, {})
        else:
            raise ConfigError(f"cannot descend into {'.'.join(keys[: i + 1])!r}")
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"cannot descend into {'.'.join(keys[: i + 1])!r}")
    leaf = keys[-1]
    if isinstance(node, list):
        node[_list_index(node, leaf, path)] = value
    else:
        node[leaf] = value


def _list_index(node: list, key: str, path: str) -> int:
    try:
        index = int(key)
    except ValueError:
        raise ConfigError(f"{path!r}: list index {key!r} is not an integer") from None
    if not 0 <= index < len(node):
        raise ConfigError(f"{path!r}: index {index} out of range for list of {len(node)}")
    return index
