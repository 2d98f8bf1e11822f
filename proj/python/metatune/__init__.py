"""Digital-twin controller-tuning pipeline (thin wrapper over the C++ core)."""

try:
    # Installed layout: the extension lives inside this package.
    from ._metatune import (
        DATASET_FORMAT,
        MODEL_FORMAT,
        REPORT_FORMAT,
        Model,
        bb_identify,
        gb_identify,
        generate,
        prbs,
        relative_rms,
        simulate_plant,
        tune,
        tune_from_black_box,
        vrft,
    )
except ImportError:  # Build-tree layout: extension on sys.path next to the build.
    from _metatune import (
        DATASET_FORMAT,
        MODEL_FORMAT,
        REPORT_FORMAT,
        Model,
        bb_identify,
        gb_identify,
        generate,
        prbs,
        relative_rms,
        simulate_plant,
        tune,
        tune_from_black_box,
        vrft,
    )

__all__ = [
    "DATASET_FORMAT",
    "MODEL_FORMAT",
    "REPORT_FORMAT",
    "Model",
    "bb_identify",
    "gb_identify",
    "generate",
    "prbs",
    "relative_rms",
    "simulate_plant",
    "tune",
    "tune_from_black_box",
    "vrft",
]
