"""Shape-from-shading under natural illumination.

A constrained variational model couples a depth map and its gradient field
through an alternating (split) solver: per-pixel normal estimation against
a second-order spherical-harmonic Lambertian model, conjugate-gradient
depth integration, and dual ascent on the coupling constraint. Optional
terms pull the depth toward a prior map and penalize total surface area,
which covers pure shape-from-shading, depth denoising, and shading-aware
depth refinement and completion.
"""

from ._kernels import BACKEND
from .camera import (CameraModel, PixelGeometry, d_map, depth_from_z,
                     normals_from_gradient, pixel_geometry, z_from_depth)
from .energy import (PixelContext, PriorData, Weights, lagrangian_value,
                     model_energy, pixel_objective, pixel_objective_batch,
                     prior_energy, shading_energy, smoothness_energy)
from .errors import (ConfigError, DegenerateLinearization, DegenerateNormal,
                     DomainEmpty, FormatError, InsufficientData,
                     InvalidPriorDepth, NatsfsError, NonFiniteDepth,
                     NotUnitNormal, SolverDiverged)
from .grid import MaskedGrid, build_domain, divergence, gradient
from .metrics import (EvalReport, make_report, normal_mae_degrees,
                      per_channel_rmse, reprojection_rmse)
from .shading import (LightingEstimate, estimate_lighting, pde_coefficients,
                      render, sh_basis, sh_basis_field)
from .solver import (SolverConfig, SolverResult, conjugate_gradient,
                     default_init, dual_update, penalty_update, solve,
                     solve_fixed_point, theta_update, z_update)
from .synth import (SyntheticScene, add_gaussian_noise, make_scene,
                    peaks_surface, smooth_initialization,
                    sphere_cap_analytic_normals, sphere_cap_surface,
                    standard_lightings)

__version__ = "0.1.0"
