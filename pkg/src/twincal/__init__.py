"""Absolute calibration of photon-number-resolving detector pairs from twin beams.

The toolkit fits a three-component multimode-thermal field model and a
pixelated detector response to a measured joint signal-idler photocount
histogram, returning both arms' absolute detection efficiencies together
with the full field characterization.  A Monte Carlo simulator generates
ground-truth experiments and doubles as the independent oracle for the
analytic detector response.
"""

from .calibrator import (
    BootstrapResult,
    CalibrationOptions,
    CalibrationResult,
    CandidatePoint,
    DetectorGeometry,
    SurfaceCell,
    bootstrap_uncertainty,
    calibrate,
    declination,
    feasible_np_interval,
    forward_photoelectron_moments,
    scan_surface,
    solve_field,
    write_surface_csv,
)
from .detector_model import (
    DetectorParams,
    ResponseMatrix,
    detection_matrix,
    exact_mean_counts,
    jpcd,
    reference_entry,
)
from .errors import (
    CutoffOverflow,
    DimensionMismatch,
    DuplicateEntry,
    EmptyHistogram,
    InfeasiblePoint,
    NegativeMeanAfterSubtraction,
    NoFeasibleRegion,
    NonpositiveCovariance,
    NumericalInstability,
    ParseError,
    SubPoissonianComponent,
    TwincalError,
    ZeroMeanArm,
)
from .field_model import (
    FieldComponentParams,
    JointDistribution,
    TwinBeamModel,
    component_cutoff,
    component_from_moments,
    component_moments,
    jpnd,
    mandel_rice_pmf,
    pmf_vector,
)
from .histogram_io import (
    DarkCountRecord,
    PhotocountHistogram,
    load_dark_record,
    load_histogram,
    load_report,
    product_dark,
    sha256_of,
    write_dark_record,
    write_histogram,
    write_report,
)
from .moments import (
    KlyshkoEstimates,
    PhotoelectronMoments,
    RawMoments,
    klyshko_estimate,
    noise_corrected_klyshko,
    photocount_moments,
    subtract_dark,
)
from .simulator import (
    SimulationConfig,
    camera_frequency_table,
    sample_photon_numbers,
    simulate_camera,
    simulate_experiment,
)

__version__ = "0.1.0"
