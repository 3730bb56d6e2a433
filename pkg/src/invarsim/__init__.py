"""invarsim: validate vision-model invariance assumptions on simulated scenes.

The package stochastically generates Manhattan-world city scenes, renders
them with exact per-pixel ground truth, classifies spatial contexts, and
characterizes five invariance hypotheses (order consistency, brightness and
gradient constancy, piecewise-smooth flow, dichromatic atmospheric
scattering) as criterion manifolds over contextual and model parameters,
including rank comparisons against ingested real sequences.
"""

__version__ = "0.1.0"

from .characterize import (  # noqa: F401
    Manifold,
    ProtocolConfig,
    compare_rankings,
    default_protocol,
    ingest_sequence,
    marginalize,
    rank_items,
    run_sweep,
)
from .patches import classify_contexts, sample_patches  # noqa: F401
from .render import (  # noqa: F401
    RenderConfig,
    SensorConfig,
    apply_sensor,
    compute_flow,
    render_frame,
    render_ground_truth,
)
from .scenegen import SceneConfig, apply_dynamics, sample_scene  # noqa: F401
from .validators import (  # noqa: F401
    bc_variance,
    ds_angular_error,
    fit_dichromatic_plane,
    gc_variance,
    oc_measure,
    ps_variance,
    spearman_rho,
)
