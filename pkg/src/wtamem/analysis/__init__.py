"""Instrumentation: multiplication counts, win statistics, noise robustness
and few-shot transfer."""
from .corruption import CorruptionSpec, NoiseReport, corrupt, noise_eval
from .fewshot import FewShotConfig, NearestClassMean, confidence_interval, extract_features, ncm_fewshot
from .opcount import OpCountReport, count_multiplications, fit_cost_law
from .winstats import WinStats, profile_divergence, win_statistics

__all__ = [
    "CorruptionSpec", "FewShotConfig", "NearestClassMean", "NoiseReport", "OpCountReport",
    "WinStats", "confidence_interval", "corrupt", "count_multiplications", "extract_features",
    "fit_cost_law", "ncm_fewshot", "noise_eval", "profile_divergence", "win_statistics",
]
