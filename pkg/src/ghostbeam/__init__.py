"""Desk-scale simulator of SPP-mediated electron ghost imaging."""

__version__ = "0.1.0"

from .errors import (ConfigError, GeometryError, GhostbeamError, NumericalQualityError,
                     PreconditionError, RegimeWarning, SamplingError, SamplingWarning,
                     TruncationError)
from .scene import (DoubleSlit, RingResonator, SingleSlit, SlabScene, TransmissionProfile,
                    build_transfer, fig1_scene, ring_scene, validate_scene)
from .fields import (ComplexField2D, PlaneWaveComponent, SourceParams, decompose_source,
                     render_component, swift_electron_field)
from .propagation import (Propagator, apply_transfer, propagate, time_reversed_field)
