from .dynsys import simulate
from .sensing import emit, encode, sample_probes
from .dataio import extract_window, make_splits, read_trajectory, write_trajectory
from .flow_matching import fm_loss, fm_sample
from .training import train_ar, train_paint
from .twin import ar_rollout, ar_step, ensemble, reconstruct
from .evalkit import drift_report, flow_stats
from .diagnostics import jacobian_series, logistic_counterexample, window_sweep

__all__ = [
    'simulate',
    'emit',
    'encode',
    'sample_probes',
    'extract_window',
    'make_splits',
    'read_trajectory',
    'write_trajectory',
    'fm_loss',
    'fm_sample',
    'train_ar',
    'train_paint',
    'ar_rollout',
    'ar_step',
    'ensemble',
    'reconstruct',
    'drift_report',
    'flow_stats',
    'jacobian_series',
    'logistic_counterexample',
    'window_sweep',
]
