"""Rate-splitting multi-user, multi-target ISAC waveform design."""
from .signal_model import ArrayConfig, Target, TargetSet, CommChannelSet, generate_rayleigh_channels
from .rates import PrecoderSet, RateReport, rate_common, rate_private, rate_report
from .fim import FimConstants, fim_affine_map, fim_from_covariance, crb_metrics
from .sca import ScaConfig, DesignResult, run_sca

__version__ = "0.1.0"
