"""Plane-wave ultrasound reconstruction by diffusion restoration in the
singular basis of the beamformed forward operator.

Pipeline: channel data ``y`` -> sparse model ``H`` and DAS matrix ``B`` ->
SVD of ``BH`` -> conditioned diffusion chains with a pluggable denoiser ->
mean/variance images and quality metrics.
"""

from .acquisition import AcquisitionConfig, ImagingGrid, ProbeGeometry, PulseKernel, Setup, time_of_flight
from .beamformer import ApodizationSpec, BeamformerMatrix, apodization_weights, build_beamformer, das
from .denoisers import EndpointSpec, ExternalDenoiser, GaussianDenoiser, WaveletDenoiser
from .errors import (
    DenoiserTimeout,
    DrusError,
    MemoryBudgetError,
    NumericalError,
    ProtocolError,
    ShapeMismatchError,
    ValidationError,
)
from .multisample import aggregate, beta_model_fit, fuse_display
from .sampler import SampleBundle, SamplerConfig, make_schedule, run_chain, sample_bundle
from .spectral import SpectralFactorization, compose_BH, factorize, identity_factorization
from .system_matrix import SystemMatrix, apply_adjoint, apply_forward, build_system_matrix

__version__ = "0.1.0"
