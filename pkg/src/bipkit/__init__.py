"""bipkit: provisioning virtual identities that never collide with enrolled ones.

Spherical-cap capacity analysis, PCA of centroid clouds, the repulsion-based
allocator with exact hard checks, Poisson capacity estimation and
embedding-level verification protocols.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .store import (  # noqa: F401
    EmbeddingMatrix,
    Gallery,
    VirtualRecord,
    VirtualSet,
    compute_centroid,
    load_embeddings,
    load_gallery,
    max_cosine_against,
    save_embeddings,
    save_gallery,
)
from .geometry import (  # noqa: F401
    alpha_star,
    alpha_star_derivative_wrt_tau,
    cap_volume,
    displaced_cosine,
    gaussian_cap_approx,
    gv_bound,
    regularized_incomplete_beta,
    safety_buffer_analysis,
)
from .pca import PcaModel, effective_dim, effective_rank, fit_pca, principal_energy  # noqa: F401
from .allocator import (  # noqa: F401
    AllocConfig,
    ProvisionStats,
    hard_check,
    make_candidate,
    monitoring_zone_check,
    neighbor_weights,
    perturb_direction,
    provision,
    repulsion_direction,
    revocation_check,
)
