"""Walsh reconstruction of time-varying fields with a dynamically decoupled
qubit sensor: Walsh filters and transforms, field models, acquisition
simulation, coefficient estimation and waveform reconstruction."""
from .estimation import (
    CoefficientEstimate,
    SequentialComparison,
    amplitude_resolution,
    compare_sequential,
    fit_cosine_phase,
    fit_slope_origin,
    minimum_detectable_field,
    sensitivity_reconstruction,
    sensitivity_sequence,
)
from .reconstruct import (
    Reconstruction,
    Subset,
    compress_top_k,
    l2_error,
    reconstruct,
    subset_members,
    subset_reconstruct,
)
from .sensor_sim import (
    GAMMA_NV,
    AmplitudeSweep,
    InfeasibleScenario,
    MeasurementCurve,
    PhaseSweep,
    SensorModel,
    acquire_curve,
    simulate_readout,
    visibility,
)
from .walsh_core import (
    Ordering,
    WalshIndex,
    WalshSpectrum,
    convert_index,
    fwht,
    ifwht,
    rademacher,
    switching_times,
    truncation_bound,
    walsh,
    walsh_coefficient,
    walsh_spectrum,
)
from .waveform import (
    Polychromatic,
    RadiatedField,
    Sampled,
    Sinusoid,
    SkewNormalAP,
    radiated_field,
)

__version__ = "0.1.0"
